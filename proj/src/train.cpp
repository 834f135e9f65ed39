#include "astlm/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "astlm/errors.hpp"

namespace astlm {

namespace {

EncodedPath all_pad_path(int m, int pad_id) {
  EncodedPath p;
  p.ids.assign(static_cast<std::size_t>(m), pad_id);
  p.true_length = 0;
  return p;
}

struct RowSegment {
  const EncodedProgram* program = nullptr;
  std::size_t start = 0;   // first input position in the program
  bool program_start = false;
};

}  // namespace

void TrainConfig::validate() const {
  if (epochs <= 0 || batch_size <= 0) throw ConfigError("epochs and batch_size must be positive");
  if (learning_rate <= 0.0 || adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 ||
      adam_beta2 >= 1.0 || adam_eps <= 0.0) {
    throw ConfigError("invalid optimizer settings");
  }
  if (grad_clip_norm <= 0.0) throw ConfigError("grad_clip_norm must be positive");
}

std::string TrainConfig::to_json() const {
  nlohmann::json doc;
  doc["epochs"] = epochs;
  doc["batch_size"] = batch_size;
  doc["learning_rate"] = learning_rate;
  doc["adam_beta1"] = adam_beta1;
  doc["adam_beta2"] = adam_beta2;
  doc["adam_eps"] = adam_eps;
  doc["grad_clip_norm"] = grad_clip_norm;
  doc["checkpoint_every_epochs"] = checkpoint_every_epochs;
  doc["use_mtl"] = use_mtl;
  doc["use_path"] = use_path;
  doc["use_recurrence"] = use_recurrence;
  doc["shuffle"] = shuffle;
  doc["seed"] = seed;
  return doc.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed train config: ") + e.what());
  }
  TrainConfig cfg;
  auto get = [&](const char* key, auto& field) {
    if (doc.contains(key)) field = doc[key].get<std::decay_t<decltype(field)>>();
  };
  get("epochs", cfg.epochs);
  get("batch_size", cfg.batch_size);
  get("learning_rate", cfg.learning_rate);
  get("adam_beta1", cfg.adam_beta1);
  get("adam_beta2", cfg.adam_beta2);
  get("adam_eps", cfg.adam_eps);
  get("grad_clip_norm", cfg.grad_clip_norm);
  get("checkpoint_every_epochs", cfg.checkpoint_every_epochs);
  get("use_mtl", cfg.use_mtl);
  get("use_path", cfg.use_path);
  get("use_recurrence", cfg.use_recurrence);
  get("shuffle", cfg.shuffle);
  get("seed", cfg.seed);
  return cfg;
}

std::vector<SegmentBatch> segment_stream(const Shard& shard, int segment_length, int batch_size,
                                         int type_pad_id, int value_pad_id,
                                         const std::vector<std::size_t>& order) {
  if (segment_length <= 0 || batch_size <= 0) {
    throw ConfigError("segment_length and batch_size must be positive");
  }
  const int m = static_cast<int>(shard.path_length);
  const std::size_t L = static_cast<std::size_t>(segment_length);

  std::vector<std::size_t> program_order = order;
  if (program_order.empty()) {
    program_order.resize(shard.programs.size());
    std::iota(program_order.begin(), program_order.end(), 0);
  }

  // Greedy balance: each program goes to the row with the fewest segments so
  // far, so a program's segments stay consecutive within one row.
  std::vector<std::vector<RowSegment>> rows(static_cast<std::size_t>(batch_size));
  std::vector<std::size_t> row_load(static_cast<std::size_t>(batch_size), 0);
  for (std::size_t idx : program_order) {
    const EncodedProgram& program = shard.programs[idx];
    if (program.size() == 0) continue;
    const std::size_t n_segments = (program.size() + L - 1) / L;
    const std::size_t row =
        static_cast<std::size_t>(std::min_element(row_load.begin(), row_load.end()) -
                                 row_load.begin());
    for (std::size_t s = 0; s < n_segments; ++s) {
      rows[row].push_back({&program, s * L, s == 0});
    }
    row_load[row] += n_segments;
  }

  std::size_t n_steps = 0;
  for (const auto& r : rows) n_steps = std::max(n_steps, r.size());

  std::vector<SegmentBatch> batches;
  batches.reserve(n_steps);
  const EncodedPath pad_path = all_pad_path(m, type_pad_id);
  for (std::size_t step = 0; step < n_steps; ++step) {
    SegmentBatch batch;
    batch.length = segment_length;
    for (int b = 0; b < batch_size; ++b) {
      std::vector<int> in_t(L, type_pad_id), in_v(L, value_pad_id);
      std::vector<int> tg_t(L, 0), tg_v(L, 0);
      std::vector<EncodedPath> paths(L, pad_path);
      std::vector<bool> mask(L, false);
      bool active = false, reset = false;
      int first_t = 0, first_v = 0;
      EncodedPath first_path = pad_path;
      const auto& row = rows[static_cast<std::size_t>(b)];
      if (step < row.size()) {
        const RowSegment& seg = row[step];
        const EncodedProgram& p = *seg.program;
        active = true;
        reset = seg.program_start;
        if (reset) {
          first_t = p.type_ids[0];
          first_v = p.value_ids[0];
          first_path = p.paths[0];
        }
        const std::size_t end = std::min(p.size(), seg.start + L);
        for (std::size_t pos = seg.start; pos < end; ++pos) {
          const std::size_t t = pos - seg.start;
          in_t[t] = p.type_ids[pos];
          in_v[t] = p.value_ids[pos];
          if (pos + 1 < p.size()) {
            tg_t[t] = p.type_ids[pos + 1];
            tg_v[t] = p.value_ids[pos + 1];
            paths[t] = p.paths[pos + 1];
            mask[t] = true;
          }
        }
      }
      batch.input_types.push_back(std::move(in_t));
      batch.input_values.push_back(std::move(in_v));
      batch.target_types.push_back(std::move(tg_t));
      batch.target_values.push_back(std::move(tg_v));
      batch.paths.push_back(std::move(paths));
      batch.loss_mask.push_back(std::move(mask));
      batch.reset.push_back(reset);
      batch.active.push_back(active);
      batch.first_target_type.push_back(first_t);
      batch.first_target_value.push_back(first_v);
      batch.first_path.push_back(first_path);
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

AdamOptimizer::AdamOptimizer(double lr, double beta1, double beta2, double eps, double clip_norm)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), clip_norm_(clip_norm) {}

void AdamOptimizer::step(std::map<std::string, ag::Var>& params) {
  double sq_norm = 0.0;
  for (auto& [name, var] : params) {
    if (var->grad.size() != 0) sq_norm += var->grad.squaredNorm();
  }
  const double norm = std::sqrt(sq_norm);
  const double clip = norm > clip_norm_ ? clip_norm_ / norm : 1.0;

  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& [name, var] : params) {
    ag::Matrix g = var->grad.size() != 0
                       ? ag::Matrix(var->grad * clip)
                       : ag::Matrix(ag::Matrix::Zero(var->value.rows(), var->value.cols()));
    auto [m_it, inserted] = m_.try_emplace(name, ag::Matrix::Zero(g.rows(), g.cols()));
    auto v_it = v_.try_emplace(name, ag::Matrix::Zero(g.rows(), g.cols())).first;
    ag::Matrix& m = m_it->second;
    ag::Matrix& v = v_it->second;
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
    var->value.array() -=
        lr_ * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps_);
  }
}

void AdamOptimizer::zero_grad(std::map<std::string, ag::Var>& params) {
  for (auto& [name, var] : params) {
    if (var->grad.size() != 0) var->grad.setZero();
  }
}

Trainer::Trainer(Model& model, TrainConfig config, const Vocab& types, const Vocab& values)
    : model_(model),
      config_(std::move(config)),
      optimizer_(config_.learning_rate, config_.adam_beta1, config_.adam_beta2, config_.adam_eps,
                 config_.grad_clip_norm),
      type_pad_id_(types.pad_id()),
      value_pad_id_(values.pad_id()),
      value_unk_id_(values.unk_id()),
      type_fp_(types.fingerprint()),
      value_fp_(values.fingerprint()) {
  config_.validate();
  if (!config_.use_path && model_.config().use_path) {
    throw ConfigError("use_path=false requires a model built without the path encoder");
  }
  if (config_.use_mtl) {
    alpha_type_ = model_.config().alpha_type;
    alpha_value_ = model_.config().alpha_value;
  } else {
    // Single-task: keep the dominant task, drop the other entirely.
    const bool type_task = model_.config().alpha_type >= model_.config().alpha_value;
    alpha_type_ = type_task ? 1.0 : 0.0;
    alpha_value_ = type_task ? 0.0 : 1.0;
  }
  check_loss_weights(alpha_type_, alpha_value_);
}

void Trainer::check_shard(const Shard& shard) const {
  if (shard.type_vocab_fingerprint != type_fp_ || shard.value_vocab_fingerprint != value_fp_) {
    throw ConfigError("shard vocabulary fingerprints do not match the trainer's vocabularies");
  }
  if (std::cmp_not_equal(shard.path_length, model_.config().path_length)) {
    throw ConfigError("shard path length does not match the model configuration");
  }
}

namespace {

struct BatchForward {
  ag::Var type_logits;   // null when its loss weight is 0
  ag::Var value_logits;
  std::vector<int> targets_type, targets_value;
  std::vector<bool> mask;
};

BatchForward forward_batch(ag::Tape& tape, const Model& model, const SegmentBatch& batch,
                           std::vector<MemoryState>& memories, bool use_recurrence,
                           double alpha_type, double alpha_value) {
  BatchForward out;
  std::vector<ag::Var> hidden_pieces;
  std::vector<EncodedPath> all_paths;

  for (int b = 0; b < batch.rows(); ++b) {
    if (!batch.active[static_cast<std::size_t>(b)]) continue;
    MemoryState memory;
    if (use_recurrence && !batch.reset[static_cast<std::size_t>(b)]) {
      memory = memories[static_cast<std::size_t>(b)];
    }
    ag::Var input = model.embed(tape, batch.input_types[static_cast<std::size_t>(b)],
                                batch.input_values[static_cast<std::size_t>(b)]);
    EncoderResult enc = model.encoder_forward(tape, input, memory);
    memories[static_cast<std::size_t>(b)] = std::move(enc.new_memory);

    if (batch.reset[static_cast<std::size_t>(b)]) {
      hidden_pieces.push_back(model.initial_hidden());
      all_paths.push_back(batch.first_path[static_cast<std::size_t>(b)]);
      out.targets_type.push_back(batch.first_target_type[static_cast<std::size_t>(b)]);
      out.targets_value.push_back(batch.first_target_value[static_cast<std::size_t>(b)]);
      out.mask.push_back(true);
    }
    hidden_pieces.push_back(enc.hidden);
    for (int t = 0; t < batch.length; ++t) {
      all_paths.push_back(batch.paths[static_cast<std::size_t>(b)][static_cast<std::size_t>(t)]);
      out.targets_type.push_back(
          batch.target_types[static_cast<std::size_t>(b)][static_cast<std::size_t>(t)]);
      out.targets_value.push_back(
          batch.target_values[static_cast<std::size_t>(b)][static_cast<std::size_t>(t)]);
      out.mask.push_back(
          batch.loss_mask[static_cast<std::size_t>(b)][static_cast<std::size_t>(t)]);
    }
  }
  if (hidden_pieces.empty()) return out;

  ag::Var hidden = hidden_pieces[0];
  for (std::size_t i = 1; i < hidden_pieces.size(); ++i) {
    hidden = ag::concat_rows(tape, hidden, hidden_pieces[i]);
  }
  ag::Var path_vec;
  if (model.config().use_path) {
    path_vec = model.path_encode(tape, all_paths);
  }
  if (alpha_type != 0.0) out.type_logits = model.head_logits(tape, "type", hidden, path_vec);
  if (alpha_value != 0.0) out.value_logits = model.head_logits(tape, "value", hidden, path_vec);
  return out;
}

std::size_t count_mask(const std::vector<bool>& mask) {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
}

}  // namespace

StepOutcome Trainer::train_step(const SegmentBatch& batch, std::vector<MemoryState>& memories) {
  ag::Tape tape;
  BatchForward fwd = forward_batch(tape, model_, batch, memories, config_.use_recurrence,
                                   alpha_type_, alpha_value_);
  StepOutcome outcome;
  outcome.positions = count_mask(fwd.mask);
  if (outcome.positions == 0) return outcome;

  ag::Var loss = model_.mtl_loss(tape, fwd.type_logits, fwd.value_logits, fwd.targets_type,
                                 fwd.targets_value, fwd.mask, alpha_type_, alpha_value_);
  outcome.loss = loss->value(0, 0);
  if (!std::isfinite(outcome.loss)) {
    throw DivergenceError("training diverged: non-finite loss");
  }
  tape.backward(loss);
  optimizer_.step(model_.params());
  optimizer_.zero_grad(model_.params());
  return outcome;
}

EpochRecord Trainer::evaluate_shard(const Shard& shard) {
  check_shard(shard);
  auto batches = segment_stream(shard, model_.config().segment_length, config_.batch_size,
                                type_pad_id_, value_pad_id_);
  std::vector<MemoryState> memories(static_cast<std::size_t>(config_.batch_size));

  EpochRecord record;
  double loss_sum = 0.0;
  std::size_t positions = 0;
  std::size_t type_correct = 0, type_total = 0, value_correct = 0, value_total = 0;

  for (const auto& batch : batches) {
    ag::Tape tape;
    BatchForward fwd = forward_batch(tape, model_, batch, memories, config_.use_recurrence,
                                     alpha_type_, alpha_value_);
    const std::size_t active = count_mask(fwd.mask);
    if (active == 0) continue;
    ag::Var loss = model_.mtl_loss(tape, fwd.type_logits, fwd.value_logits, fwd.targets_type,
                                   fwd.targets_value, fwd.mask, alpha_type_, alpha_value_);
    loss_sum += loss->value(0, 0) * static_cast<double>(active);
    positions += active;

    for (std::size_t i = 0; i < fwd.mask.size(); ++i) {
      if (!fwd.mask[i]) continue;
      const auto r = static_cast<Eigen::Index>(i);
      if (fwd.type_logits) {
        Eigen::Index argmax = 0;
        fwd.type_logits->value.row(r).maxCoeff(&argmax);
        type_correct += argmax == fwd.targets_type[i] ? 1 : 0;
        ++type_total;
      }
      if (fwd.value_logits) {
        Eigen::Index argmax = 0;
        fwd.value_logits->value.row(r).maxCoeff(&argmax);
        // UNK targets are always wrong, even when UNK is predicted.
        const bool correct =
            fwd.targets_value[i] != value_unk_id_ && argmax == fwd.targets_value[i];
        value_correct += correct ? 1 : 0;
        ++value_total;
      }
    }
  }
  record.val_loss = positions > 0 ? loss_sum / static_cast<double>(positions) : 0.0;
  record.val_type_accuracy =
      type_total > 0 ? static_cast<double>(type_correct) / static_cast<double>(type_total) : 0.0;
  record.val_value_accuracy =
      value_total > 0 ? static_cast<double>(value_correct) / static_cast<double>(value_total)
                      : 0.0;
  return record;
}

TrainResult Trainer::train(const Shard& train_shard, const Shard& val_shard,
                           const std::string& out_dir) {
  check_shard(train_shard);
  check_shard(val_shard);
  TrainResult result;
  result.best_val_loss = std::numeric_limits<double>::infinity();

  std::ofstream metrics;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    metrics.open(out_dir + "/metrics.jsonl");
    if (!metrics) throw IoError("cannot open metrics log in " + out_dir);
  }

  std::vector<std::size_t> order(train_shard.programs.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(config_.seed);

  for (int epoch = 0; epoch < config_.epochs; ++epoch) {
    if (config_.shuffle) {
      std::shuffle(order.begin(), order.end(), rng);
    }
    auto batches = segment_stream(train_shard, model_.config().segment_length, config_.batch_size,
                                  type_pad_id_, value_pad_id_, order);
    std::vector<MemoryState> memories(static_cast<std::size_t>(config_.batch_size));
    double loss_sum = 0.0;
    std::size_t positions = 0;
    for (const auto& batch : batches) {
      StepOutcome outcome = train_step(batch, memories);
      loss_sum += outcome.loss * static_cast<double>(outcome.positions);
      positions += outcome.positions;
    }

    EpochRecord record = evaluate_shard(val_shard);
    record.epoch = epoch;
    record.train_loss = positions > 0 ? loss_sum / static_cast<double>(positions) : 0.0;
    result.log.push_back(record);

    if (record.val_loss < result.best_val_loss) {
      result.best_val_loss = record.val_loss;
      result.best_epoch = epoch;
      if (!out_dir.empty()) {
        model_.save(out_dir + "/checkpoint_best.json", type_fp_, value_fp_);
      }
    }
    if (metrics) {
      nlohmann::json line;
      line["epoch"] = record.epoch;
      line["train_loss"] = record.train_loss;
      line["val_loss"] = record.val_loss;
      line["val_type_accuracy"] = record.val_type_accuracy;
      line["val_value_accuracy"] = record.val_value_accuracy;
      metrics << line.dump() << '\n';
      metrics.flush();
    }
    if (!out_dir.empty() && config_.checkpoint_every_epochs > 0 &&
        (epoch + 1) % config_.checkpoint_every_epochs == 0) {
      model_.save(out_dir + "/checkpoint_final.json", type_fp_, value_fp_);
    }
  }
  if (!out_dir.empty()) {
    model_.save(out_dir + "/checkpoint_final.json", type_fp_, value_fp_);
  }
  return result;
}

std::vector<SweepRow> weight_sweep(const ModelConfig& model_config, const TrainConfig& train_config,
                                   const std::vector<std::pair<double, double>>& alphas,
                                   const Shard& train_shard, const Shard& val_shard,
                                   const Vocab& types, const Vocab& values) {
  std::vector<SweepRow> rows;
  for (const auto& [alpha_type, alpha_value] : alphas) {
    check_loss_weights(alpha_type, alpha_value);
    ModelConfig cfg = model_config;
    cfg.alpha_type = alpha_type;
    cfg.alpha_value = alpha_value;
    Model model(cfg);
    Trainer trainer(model, train_config, types, values);
    trainer.train(train_shard, val_shard);
    EpochRecord record = trainer.evaluate_shard(val_shard);
    SweepRow row;
    row.alpha_type = alpha_type;
    row.alpha_value = alpha_value;
    if (alpha_type != 0.0) row.type_accuracy = record.val_type_accuracy;
    if (alpha_value != 0.0) row.value_accuracy = record.val_value_accuracy;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace astlm
