#include "astlm/model.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "astlm/errors.hpp"

namespace astlm {

namespace {

constexpr double kMaskNegInf = -1e30;

/// Deterministic uniform in [-scale, scale) from raw mt19937_64 bits.
ag::Matrix uniform_init(Eigen::Index rows, Eigen::Index cols, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ag::Matrix out(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      const double u = static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
      out(i, j) = (2.0 * u - 1.0) * scale;
    }
  }
  return out;
}

/// Sinusoidal embeddings for relative offsets 0..count-1, `dim` columns.
ag::Matrix sinusoid_offsets(Eigen::Index count, Eigen::Index dim) {
  ag::Matrix out(count, dim);
  for (Eigen::Index d = 0; d < count; ++d) {
    for (Eigen::Index j = 0; j < dim; ++j) {
      const double freq =
          std::pow(10000.0, -static_cast<double>(2 * (j / 2)) / static_cast<double>(dim));
      const double angle = static_cast<double>(d) * freq;
      out(d, j) = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return out;
}

}  // namespace

void check_loss_weights(double alpha_type, double alpha_value) {
  if (alpha_type < 0.0 || alpha_value < 0.0 || std::abs(alpha_type + alpha_value - 1.0) > 1e-9) {
    throw ConfigError("loss weights must be nonnegative and sum to 1 (got " +
                      std::to_string(alpha_type) + ", " + std::to_string(alpha_value) + ")");
  }
}

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(d_type, "d_type");
  positive(d_value, "d_value");
  positive(n_layers, "n_layers");
  positive(n_heads, "n_heads");
  positive(d_head, "d_head");
  positive(d_ff, "d_ff");
  positive(segment_length, "segment_length");
  positive(memory_length, "memory_length");
  positive(path_length, "path_length");
  positive(path_dim, "path_dim");
  positive(type_vocab_size, "type_vocab_size");
  positive(value_vocab_size, "value_vocab_size");
  if (path_dim % 2 != 0) throw ConfigError("path_dim must be even");
  check_loss_weights(alpha_type, alpha_value);
}

ModelConfig ModelConfig::paper_scale(int type_vocab_size, int value_vocab_size) {
  ModelConfig cfg;
  cfg.d_type = 300;
  cfg.d_value = 1200;
  cfg.n_layers = 6;
  cfg.n_heads = 6;
  cfg.d_head = 64;
  cfg.d_ff = 1024;
  cfg.segment_length = 50;
  cfg.memory_length = 256;
  cfg.path_length = 5;
  cfg.path_dim = 300;
  cfg.type_vocab_size = type_vocab_size;
  cfg.value_vocab_size = value_vocab_size;
  return cfg;
}

std::string ModelConfig::to_json() const {
  nlohmann::json doc;
  doc["d_type"] = d_type;
  doc["d_value"] = d_value;
  doc["n_layers"] = n_layers;
  doc["n_heads"] = n_heads;
  doc["d_head"] = d_head;
  doc["d_ff"] = d_ff;
  doc["segment_length"] = segment_length;
  doc["memory_length"] = memory_length;
  doc["path_length"] = path_length;
  doc["path_dim"] = path_dim;
  doc["type_vocab_size"] = type_vocab_size;
  doc["value_vocab_size"] = value_vocab_size;
  doc["alpha_type"] = alpha_type;
  doc["alpha_value"] = alpha_value;
  doc["use_path"] = use_path;
  doc["seed"] = seed;
  return doc.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed model config: ") + e.what());
  }
  ModelConfig cfg;
  auto get = [&](const char* key, auto& field) {
    if (doc.contains(key)) field = doc[key].get<std::decay_t<decltype(field)>>();
  };
  get("d_type", cfg.d_type);
  get("d_value", cfg.d_value);
  get("n_layers", cfg.n_layers);
  get("n_heads", cfg.n_heads);
  get("d_head", cfg.d_head);
  get("d_ff", cfg.d_ff);
  get("segment_length", cfg.segment_length);
  get("memory_length", cfg.memory_length);
  get("path_length", cfg.path_length);
  get("path_dim", cfg.path_dim);
  get("type_vocab_size", cfg.type_vocab_size);
  get("value_vocab_size", cfg.value_vocab_size);
  get("alpha_type", cfg.alpha_type);
  get("alpha_value", cfg.alpha_value);
  get("use_path", cfg.use_path);
  get("seed", cfg.seed);
  return cfg;
}

Model::Model(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  init_params();
}

void Model::init_params() {
  const int H = config_.hidden();
  const int P = config_.n_heads * config_.d_head;
  const int hp = config_.path_dim / 2;

  auto matrix = [&](const std::string& name, int rows, int cols, int fan_in) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    params_[name] = ag::leaf(uniform_init(rows, cols, scale, config_.seed ^ fnv1a(name)));
  };
  auto zeros = [&](const std::string& name, int rows, int cols) {
    params_[name] = ag::leaf(ag::Matrix::Zero(rows, cols));
  };
  auto ones = [&](const std::string& name, int rows, int cols) {
    params_[name] = ag::leaf(ag::Matrix::Ones(rows, cols));
  };

  matrix("embed.type", config_.type_vocab_size, config_.d_type, config_.d_type);
  matrix("embed.value", config_.value_vocab_size, config_.d_value, config_.d_value);
  matrix("embed.h_init", 1, H, H);

  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string p = "enc." + std::to_string(l) + ".";
    matrix(p + "attn.Wq", H, P, H);
    matrix(p + "attn.Wk", H, P, H);
    matrix(p + "attn.Wv", H, P, H);
    matrix(p + "attn.Wr", H, P, H);
    matrix(p + "attn.u", 1, P, P);
    matrix(p + "attn.v", 1, P, P);
    matrix(p + "attn.Wo", P, H, P);
    ones(p + "ln1.gain", 1, H);
    zeros(p + "ln1.bias", 1, H);
    matrix(p + "ff.W1", H, config_.d_ff, H);
    zeros(p + "ff.b1", 1, config_.d_ff);
    matrix(p + "ff.W2", config_.d_ff, H, config_.d_ff);
    zeros(p + "ff.b2", 1, H);
    ones(p + "ln2.gain", 1, H);
    zeros(p + "ln2.bias", 1, H);
  }

  if (config_.use_path) {
    for (const std::string dir : {"fwd", "bwd"}) {
      const std::string p = "path." + dir + ".";
      matrix(p + "Wx", config_.d_type, 4 * hp, config_.d_type);
      matrix(p + "Wh", hp, 4 * hp, hp);
      zeros(p + "b", 1, 4 * hp);
    }
  }

  const int head_in = config_.use_path ? H + config_.path_dim : H;
  for (const std::string task : {"type", "value"}) {
    const std::string p = "head." + task + ".";
    const int vocab = task == "type" ? config_.type_vocab_size : config_.value_vocab_size;
    matrix(p + "Wo", head_in, H, head_in);
    matrix(p + "Wy", H, vocab, H);
    zeros(p + "by", 1, vocab);
  }
}

ag::Var Model::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw KeyError("unknown parameter: " + name);
  return it->second;
}

ag::Var Model::embed(ag::Tape& tape, const std::vector<int>& type_ids,
                     const std::vector<int>& value_ids) const {
  if (type_ids.size() != value_ids.size()) {
    throw ShapeError("embed: type/value id sequences differ in length");
  }
  ag::Var t = ag::gather_rows(tape, param("embed.type"), type_ids);
  ag::Var v = ag::gather_rows(tape, param("embed.value"), value_ids);
  return ag::concat_cols(tape, t, v);
}

EncoderResult Model::encoder_forward(ag::Tape& tape, const ag::Var& segment,
                                     const MemoryState& memory, bool detach_memory) const {
  const int H = config_.hidden();
  const Eigen::Index T = segment->value.rows();
  if (segment->value.cols() != H) {
    throw ShapeError("encoder_forward: segment must have hidden() columns");
  }
  if (T > config_.segment_length) {
    throw ShapeError("encoder_forward: segment longer than configured L");
  }
  if (!memory.empty() && std::cmp_not_equal(memory.layers.size(), config_.n_layers)) {
    throw ShapeError("encoder_forward: memory layer count mismatch");
  }
  const Eigen::Index mem_len = memory.length();
  const Eigen::Index K = mem_len + T;

  // Relative offset embeddings for distances 0..K-1 and the causal mask
  // over (segment position, extended key position).
  ag::Var rel = ag::constant(sinusoid_offsets(K, H));
  ag::Matrix mask(T, K);
  for (Eigen::Index i = 0; i < T; ++i) {
    for (Eigen::Index j = 0; j < K; ++j) {
      mask(i, j) = (j <= i + mem_len) ? 0.0 : kMaskNegInf;
    }
  }
  ag::Var mask_const = ag::constant(std::move(mask));
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(config_.d_head));

  EncoderResult result;
  result.new_memory.layers.reserve(static_cast<std::size_t>(config_.n_layers));
  result.new_memory.segment_count = memory.segment_count + 1;

  ag::Var h = segment;
  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string p = "enc." + std::to_string(l) + ".";

    // Cache this layer's input for the next segment.
    ag::Var extended =
        memory.empty() ? h : ag::concat_rows(tape, memory.layers[static_cast<std::size_t>(l)], h);
    {
      const Eigen::Index keep = std::min<Eigen::Index>(K, config_.memory_length);
      if (detach_memory) {
        result.new_memory.layers.push_back(
            ag::constant(extended->value.bottomRows(keep)));
      } else {
        result.new_memory.layers.push_back(ag::slice_rows(tape, extended, K - keep, keep));
      }
    }

    ag::Var q = ag::matmul(tape, h, param(p + "attn.Wq"));
    ag::Var k = ag::matmul(tape, extended, param(p + "attn.Wk"));
    ag::Var v = ag::matmul(tape, extended, param(p + "attn.Wv"));
    ag::Var r = ag::matmul(tape, rel, param(p + "attn.Wr"));
    ag::Var u_bias = param(p + "attn.u");
    ag::Var v_bias = param(p + "attn.v");

    ag::Var heads;
    for (int head = 0; head < config_.n_heads; ++head) {
      const Eigen::Index c0 = static_cast<Eigen::Index>(head) * config_.d_head;
      ag::Var qh = ag::slice_cols(tape, q, c0, config_.d_head);
      ag::Var kh = ag::slice_cols(tape, k, c0, config_.d_head);
      ag::Var vh = ag::slice_cols(tape, v, c0, config_.d_head);
      ag::Var rh = ag::slice_cols(tape, r, c0, config_.d_head);
      ag::Var uh = ag::slice_cols(tape, u_bias, c0, config_.d_head);
      ag::Var vbh = ag::slice_cols(tape, v_bias, c0, config_.d_head);

      ag::Var content = ag::matmul(tape, ag::add_rowvec(tape, qh, uh), ag::transpose(tape, kh));
      ag::Var position_scores =
          ag::matmul(tape, ag::add_rowvec(tape, qh, vbh), ag::transpose(tape, rh));
      ag::Var position = ag::relative_shift(tape, position_scores, mem_len);
      ag::Var scores = ag::scale(tape, ag::add(tape, content, position), inv_sqrt_d);
      ag::Var attn = ag::softmax_rows(tape, ag::add(tape, scores, mask_const));
      ag::Var out = ag::matmul(tape, attn, vh);
      heads = head == 0 ? out : ag::concat_cols(tape, heads, out);
    }

    ag::Var attn_out = ag::matmul(tape, heads, param(p + "attn.Wo"));
    h = ag::layer_norm(tape, ag::add(tape, h, attn_out), param(p + "ln1.gain"),
                       param(p + "ln1.bias"));

    ag::Var ff1 = ag::relu(
        tape, ag::add_rowvec(tape, ag::matmul(tape, h, param(p + "ff.W1")), param(p + "ff.b1")));
    ag::Var ff2 = ag::add_rowvec(tape, ag::matmul(tape, ff1, param(p + "ff.W2")),
                                 param(p + "ff.b2"));
    h = ag::layer_norm(tape, ag::add(tape, h, ff2), param(p + "ln2.gain"), param(p + "ln2.bias"));
  }

  result.hidden = h;
  return result;
}

ag::Var Model::path_encode(ag::Tape& tape, const std::vector<EncodedPath>& paths) const {
  if (!config_.use_path) {
    throw ConfigError("path_encode called on a model built without the path encoder");
  }
  const std::size_t n = paths.size();
  const std::size_t m = static_cast<std::size_t>(config_.path_length);
  const int hp = config_.path_dim / 2;
  for (const auto& p : paths) {
    if (p.ids.size() != m) throw ShapeError("path_encode: path length must equal configured m");
  }

  // Per-step inputs and 0/1 validity masks (rows beyond true_length are PAD).
  std::vector<std::vector<int>> step_ids(m, std::vector<int>(n));
  std::vector<ag::Var> step_mask(m);
  for (std::size_t s = 0; s < m; ++s) {
    ag::Matrix mask = ag::Matrix::Zero(static_cast<Eigen::Index>(n), hp);
    for (std::size_t i = 0; i < n; ++i) {
      step_ids[s][i] = paths[i].ids[s];
      if (s < paths[i].true_length) mask.row(static_cast<Eigen::Index>(i)).setOnes();
    }
    step_mask[s] = ag::constant(std::move(mask));
  }

  auto run_direction = [&](const std::string& dir, bool reverse) {
    ag::Var Wx = param("path." + dir + ".Wx");
    ag::Var Wh = param("path." + dir + ".Wh");
    ag::Var b = param("path." + dir + ".b");
    ag::Var h = ag::constant(ag::Matrix::Zero(static_cast<Eigen::Index>(n), hp));
    ag::Var c = h;
    for (std::size_t step = 0; step < m; ++step) {
      const std::size_t s = reverse ? m - 1 - step : step;
      ag::Var x = ag::gather_rows(tape, param("embed.type"), step_ids[s]);
      ag::Var gates = ag::add_rowvec(
          tape, ag::add(tape, ag::matmul(tape, x, Wx), ag::matmul(tape, h, Wh)), b);
      ag::Var gate_i = ag::sigmoid(tape, ag::slice_cols(tape, gates, 0, hp));
      ag::Var gate_f = ag::sigmoid(tape, ag::slice_cols(tape, gates, hp, hp));
      ag::Var gate_o = ag::sigmoid(tape, ag::slice_cols(tape, gates, 2 * hp, hp));
      ag::Var cand = ag::tanh_(tape, ag::slice_cols(tape, gates, 3 * hp, hp));
      ag::Var c_new = ag::add(tape, ag::mul(tape, gate_f, c), ag::mul(tape, gate_i, cand));
      ag::Var h_new = ag::mul(tape, gate_o, ag::tanh_(tape, c_new));
      // PAD steps keep the previous state.
      ag::Var keep = ag::constant(ag::Matrix::Ones(static_cast<Eigen::Index>(n), hp) -
                                  step_mask[s]->value);
      c = ag::add(tape, ag::mul(tape, step_mask[s], c_new), ag::mul(tape, keep, c));
      h = ag::add(tape, ag::mul(tape, step_mask[s], h_new), ag::mul(tape, keep, h));
    }
    return h;
  };

  ag::Var fwd = run_direction("fwd", false);
  ag::Var bwd = run_direction("bwd", true);
  return ag::concat_cols(tape, fwd, bwd);
}

ag::Var Model::head_logits(ag::Tape& tape, const std::string& task, const ag::Var& hidden,
                           const ag::Var& path_vec) const {
  if (task != "type" && task != "value") throw KeyError("unknown task: " + task);
  ag::Var head_input = hidden;
  if (config_.use_path) {
    if (!path_vec) throw ShapeError("head_logits: path vector required when use_path is set");
    if (path_vec->value.rows() != hidden->value.rows()) {
      throw ShapeError("head_logits: hidden/path row counts differ");
    }
    head_input = ag::concat_cols(tape, hidden, path_vec);
  }
  ag::Var o = ag::tanh_(tape, ag::matmul(tape, head_input, param("head." + task + ".Wo")));
  return ag::add_rowvec(tape, ag::matmul(tape, o, param("head." + task + ".Wy")),
                        param("head." + task + ".by"));
}

std::pair<ag::Var, ag::Var> Model::predict_heads(ag::Tape& tape, const ag::Var& hidden,
                                                 const ag::Var& path_vec) const {
  return {head_logits(tape, "type", hidden, path_vec),
          head_logits(tape, "value", hidden, path_vec)};
}

ag::Var Model::mtl_loss(ag::Tape& tape, const ag::Var& type_logits, const ag::Var& value_logits,
                        const std::vector<int>& target_types,
                        const std::vector<int>& target_values, const std::vector<bool>& mask,
                        double alpha_type, double alpha_value) const {
  check_loss_weights(alpha_type, alpha_value);
  if (alpha_type != 0.0 && !type_logits) throw ShapeError("mtl_loss: missing type logits");
  if (alpha_value != 0.0 && !value_logits) throw ShapeError("mtl_loss: missing value logits");
  ag::Var loss;
  if (alpha_type != 0.0) {
    loss = ag::scale(tape, ag::softmax_cross_entropy(tape, type_logits, target_types, mask),
                     alpha_type);
  }
  if (alpha_value != 0.0) {
    ag::Var value_loss = ag::scale(
        tape, ag::softmax_cross_entropy(tape, value_logits, target_values, mask), alpha_value);
    loss = loss ? ag::add(tape, loss, value_loss) : value_loss;
  }
  return loss;
}

void Model::save(const std::string& path, std::uint64_t type_vocab_fp,
                 std::uint64_t value_vocab_fp) const {
  nlohmann::json doc;
  doc["format_version"] = 1;
  doc["config"] = nlohmann::json::parse(config_.to_json());
  doc["type_vocab_fingerprint"] = type_vocab_fp;
  doc["value_vocab_fingerprint"] = value_vocab_fp;
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [name, var] : params_) {
    nlohmann::json entry;
    entry["rows"] = var->value.rows();
    entry["cols"] = var->value.cols();
    std::vector<double> data(var->value.data(), var->value.data() + var->value.size());
    entry["data"] = std::move(data);
    params[name] = std::move(entry);
  }
  doc["params"] = std::move(params);
  std::ofstream out(path);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out << doc.dump();
  if (!out) throw IoError("write failure on checkpoint: " + path);
}

Model Model::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("malformed checkpoint " + path + ": " + e.what());
  }
  if (doc.value("format_version", 0) != 1) {
    throw ConfigError("unsupported checkpoint format version in " + path);
  }
  Model model(ModelConfig::from_json(doc.at("config").dump()));
  model.type_vocab_fp_ = doc.value("type_vocab_fingerprint", std::uint64_t{0});
  model.value_vocab_fp_ = doc.value("value_vocab_fingerprint", std::uint64_t{0});
  const auto& params = doc.at("params");
  for (auto& [name, var] : model.params_) {
    if (!params.contains(name)) throw ConfigError("checkpoint missing parameter " + name);
    const auto& entry = params.at(name);
    const Eigen::Index rows = entry.at("rows").get<Eigen::Index>();
    const Eigen::Index cols = entry.at("cols").get<Eigen::Index>();
    if (rows != var->value.rows() || cols != var->value.cols()) {
      throw ConfigError("checkpoint parameter " + name + " has mismatched shape");
    }
    const auto data = entry.at("data").get<std::vector<double>>();
    if (std::cmp_not_equal(data.size(), rows * cols)) {
      throw ConfigError("checkpoint parameter " + name + " has wrong element count");
    }
    var->value = Eigen::Map<const ag::Matrix>(data.data(), rows, cols);
  }
  return model;
}

Model Model::load(const std::string& path, std::uint64_t expect_type_fp,
                  std::uint64_t expect_value_fp) {
  Model model = load(path);
  if (model.type_vocab_fp_ != expect_type_fp || model.value_vocab_fp_ != expect_value_fp) {
    throw ConfigError("checkpoint vocabulary fingerprints do not match: " + path);
  }
  return model;
}

}  // namespace astlm
