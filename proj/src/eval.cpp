#include "astlm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "astlm/errors.hpp"

namespace astlm {

double top1_accuracy(const std::vector<int>& predictions, const std::vector<int>& targets,
                     int unk_id, Task task) {
  if (predictions.size() != targets.size()) {
    throw ShapeError("top1_accuracy: predictions/targets lengths differ");
  }
  if (targets.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (task == Task::kValue && targets[i] == unk_id) continue;  // always wrong
    if (predictions[i] == targets[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(targets.size());
}

double normalized_improvement(double acc_x, double acc_y, double acc_ub) {
  if (acc_ub < std::max(acc_x, acc_y)) {
    throw DomainError("normalized_improvement: upper bound below an accuracy");
  }
  if (acc_x > acc_y) {
    return (acc_x - acc_y) / (acc_ub - acc_y);
  }
  if (acc_x == acc_y) return 0.0;
  if (acc_y <= 0.0) {
    throw DomainError("normalized_improvement: decrease branch requires acc_y > 0");
  }
  return (acc_x - acc_y) / acc_y;
}

const std::vector<std::string>& difficult_types() {
  static const std::vector<std::string> kTypes = {
      "ContinueStatement", "ForStatement",    "WhileStatement", "ReturnStatement",
      "SwitchStatement",   "ThrowStatement",  "TryStatement",   "IfStatement"};
  return kTypes;
}

std::map<std::string, TypeAccuracy> per_type_accuracy(const std::vector<int>& predicted_types,
                                                      const std::vector<int>& target_types,
                                                      const std::vector<std::string>& type_set,
                                                      const Vocab& types) {
  if (predicted_types.size() != target_types.size()) {
    throw ShapeError("per_type_accuracy: predictions/targets lengths differ");
  }
  if (type_set.empty()) throw ConfigError("per_type_accuracy: type_set is empty");
  std::map<int, std::string> wanted;
  for (const auto& name : type_set) {
    if (!types.contains(name)) {
      std::string valid;
      for (const auto& t : types.tokens()) {
        if (!valid.empty()) valid += ", ";
        valid += t;
      }
      throw KeyError("unknown type name \"" + name + "\"; valid names: " + valid);
    }
    wanted.emplace(types.encode(name), name);
  }
  std::map<std::string, std::pair<std::size_t, std::size_t>> tally;  // correct, total
  for (std::size_t i = 0; i < target_types.size(); ++i) {
    auto it = wanted.find(target_types[i]);
    if (it == wanted.end()) continue;
    auto& [correct, total] = tally[it->second];
    ++total;
    if (predicted_types[i] == target_types[i]) ++correct;
  }
  std::map<std::string, TypeAccuracy> out;
  for (const auto& [name, counts] : tally) {
    out[name] = {static_cast<double>(counts.first) / static_cast<double>(counts.second),
                 counts.second};
  }
  return out;
}

double cliffs_delta(const std::vector<double>& sample_x, const std::vector<double>& sample_y) {
  if (sample_x.empty() || sample_y.empty()) {
    throw DomainError("cliffs_delta: samples must be nonempty");
  }
  std::vector<double> y_sorted = sample_y;
  std::sort(y_sorted.begin(), y_sorted.end());
  long long net = 0;
  for (double x : sample_x) {
    const auto less = std::lower_bound(y_sorted.begin(), y_sorted.end(), x) - y_sorted.begin();
    const auto less_eq = std::upper_bound(y_sorted.begin(), y_sorted.end(), x) - y_sorted.begin();
    const auto greater = static_cast<long long>(y_sorted.size()) - less_eq;
    net += static_cast<long long>(less) - greater;
  }
  return static_cast<double>(net) /
         (static_cast<double>(sample_x.size()) * static_cast<double>(sample_y.size()));
}

namespace {

/// Midranks of the combined sample, returned per original element.
std::vector<double> midranks(const std::vector<double>& combined) {
  const std::size_t n = combined.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return combined[a] < combined[b];
  });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && combined[idx[j + 1]] == combined[idx[i]]) ++j;
    const double midrank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = midrank;
    i = j + 1;
  }
  return ranks;
}

/// Counts subsets of size n with rank sum <= w and >= w over all C(N, n)
/// choices.
void enumerate_rank_sums(const std::vector<double>& ranks, std::size_t n, double w,
                         long long& count_le, long long& count_ge, long long& count_all) {
  const std::size_t N = ranks.size();
  std::vector<std::size_t> pick(n);
  std::iota(pick.begin(), pick.end(), 0);
  while (true) {
    double sum = 0.0;
    for (std::size_t p : pick) sum += ranks[p];
    ++count_all;
    if (sum <= w + 1e-12) ++count_le;
    if (sum >= w - 1e-12) ++count_ge;
    // next combination
    std::size_t i = n;
    while (i > 0) {
      --i;
      if (pick[i] != i + N - n) {
        ++pick[i];
        for (std::size_t j = i + 1; j < n; ++j) pick[j] = pick[j - 1] + 1;
        break;
      }
      if (i == 0) return;
    }
    if (n == 0) return;
  }
}

}  // namespace

RankSumResult wilcoxon_rank_sum(const std::vector<double>& sample_x,
                                const std::vector<double>& sample_y) {
  if (sample_x.empty() || sample_y.empty()) {
    throw DomainError("wilcoxon_rank_sum: samples must be nonempty");
  }
  const std::size_t n = sample_x.size();
  const std::size_t m = sample_y.size();
  const std::size_t N = n + m;
  std::vector<double> combined = sample_x;
  combined.insert(combined.end(), sample_y.begin(), sample_y.end());
  const std::vector<double> ranks = midranks(combined);

  RankSumResult result;
  for (std::size_t i = 0; i < n; ++i) result.statistic += ranks[i];

  if (N <= 12) {
    result.exact = true;
    long long le = 0, ge = 0, all = 0;
    enumerate_rank_sums(ranks, n, result.statistic, le, ge, all);
    const double p_le = static_cast<double>(le) / static_cast<double>(all);
    const double p_ge = static_cast<double>(ge) / static_cast<double>(all);
    result.p_value = std::min(1.0, 2.0 * std::min(p_le, p_ge));
    return result;
  }

  const double mean = static_cast<double>(n) * static_cast<double>(N + 1) / 2.0;
  double tie_sum = 0.0;
  {
    std::vector<double> sorted = combined;
    std::sort(sorted.begin(), sorted.end());
    std::size_t i = 0;
    while (i < N) {
      std::size_t j = i;
      while (j + 1 < N && sorted[j + 1] == sorted[i]) ++j;
      const double t = static_cast<double>(j - i + 1);
      tie_sum += t * t * t - t;
      i = j + 1;
    }
  }
  const double nn = static_cast<double>(n), mm = static_cast<double>(m),
               NN = static_cast<double>(N);
  const double variance = nn * mm / 12.0 * ((NN + 1.0) - tie_sum / (NN * (NN - 1.0)));
  if (variance <= 0.0) {
    result.p_value = 1.0;  // all observations tied
    return result;
  }
  const double diff = result.statistic - mean;
  const double cc = diff > 0.0 ? -0.5 : (diff < 0.0 ? 0.5 : 0.0);
  const double z = (diff + cc) / std::sqrt(variance);
  result.p_value = std::erfc(std::abs(z) / std::sqrt(2.0));
  return result;
}

std::string EvalReport::to_json() const {
  nlohmann::json doc;
  doc["accuracy_type"] = accuracy_type;
  doc["accuracy_value"] = accuracy_value;
  doc["unk_rate"] = unk_rate;
  doc["query_count"] = query_count;
  doc["config_fingerprint"] = config_fingerprint;
  doc["normalized_improvements"] = nlohmann::json::array();
  for (const auto& imp : normalized_improvements) {
    doc["normalized_improvements"].push_back(
        {{"versus", imp.versus}, {"task", imp.task}, {"value", imp.value}});
  }
  doc["per_type_accuracy"] = nlohmann::json::object();
  for (const auto& [name, acc] : per_type) {
    doc["per_type_accuracy"][name] = {{"accuracy", acc.accuracy}, {"count", acc.count}};
  }
  doc["per_program_type_accuracy"] = per_program_type_accuracy;
  doc["per_program_value_accuracy"] = per_program_value_accuracy;
  auto put_significance = [&](const char* key, const std::optional<Significance>& s) {
    if (s) {
      doc[key] = {{"wilcoxon_statistic", s->wilcoxon_statistic},
                  {"wilcoxon_p", s->wilcoxon_p},
                  {"cliffs_delta", s->cliffs_delta}};
    }
  };
  put_significance("significance_type", significance_type);
  put_significance("significance_value", significance_value);
  return doc.dump(2);
}

EvalReport EvalReport::from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed evaluation report: ") + e.what());
  }
  EvalReport report;
  report.accuracy_type = doc.value("accuracy_type", 0.0);
  report.accuracy_value = doc.value("accuracy_value", 0.0);
  report.unk_rate = doc.value("unk_rate", 0.0);
  report.query_count = doc.value("query_count", std::size_t{0});
  report.config_fingerprint = doc.value("config_fingerprint", std::string());
  if (doc.contains("normalized_improvements")) {
    for (const auto& imp : doc["normalized_improvements"]) {
      report.normalized_improvements.push_back(
          {imp.value("versus", std::string()), imp.value("task", std::string()),
           imp.value("value", 0.0)});
    }
  }
  if (doc.contains("per_type_accuracy")) {
    for (const auto& [name, entry] : doc["per_type_accuracy"].items()) {
      report.per_type[name] = {entry.value("accuracy", 0.0), entry.value("count", std::size_t{0})};
    }
  }
  if (doc.contains("per_program_type_accuracy")) {
    report.per_program_type_accuracy =
        doc["per_program_type_accuracy"].get<std::vector<double>>();
  }
  if (doc.contains("per_program_value_accuracy")) {
    report.per_program_value_accuracy =
        doc["per_program_value_accuracy"].get<std::vector<double>>();
  }
  return report;
}

EvalReport evaluate_model(Model& model, const Shard& shard, const Vocab& types,
                          const Vocab& values, bool use_recurrence,
                          const std::vector<std::string>& breakdown_types) {
  if (shard.type_vocab_fingerprint != types.fingerprint() ||
      shard.value_vocab_fingerprint != values.fingerprint()) {
    throw ConfigError("shard vocabulary fingerprints do not match the supplied vocabularies");
  }
  if (std::cmp_not_equal(shard.path_length, model.config().path_length)) {
    throw ConfigError("shard path length does not match the model configuration");
  }
  const int L = model.config().segment_length;
  const int value_unk = values.unk_id();

  EvalReport report;
  report.config_fingerprint =
      std::to_string(fnv1a(model.config().to_json())) + ":" +
      std::to_string(types.fingerprint()) + ":" + std::to_string(values.fingerprint());

  std::vector<int> predicted_types, target_types, predicted_values, target_values;

  for (const auto& program : shard.programs) {
    if (program.size() == 0) continue;
    std::size_t program_type_correct = 0, program_value_correct = 0, program_queries = 0;

    auto score_query = [&](const Eigen::RowVectorXd& type_row, const Eigen::RowVectorXd& value_row,
                           int target_type, int target_value) {
      Eigen::Index argmax_t = 0, argmax_v = 0;
      type_row.maxCoeff(&argmax_t);
      value_row.maxCoeff(&argmax_v);
      predicted_types.push_back(static_cast<int>(argmax_t));
      target_types.push_back(target_type);
      predicted_values.push_back(static_cast<int>(argmax_v));
      target_values.push_back(target_value);
      program_type_correct += argmax_t == target_type ? 1 : 0;
      program_value_correct +=
          (target_value != value_unk && argmax_v == target_value) ? 1 : 0;
      ++program_queries;
    };

    MemoryState memory;
    for (std::size_t start = 0; start < program.size(); start += static_cast<std::size_t>(L)) {
      const std::size_t end = std::min(program.size(), start + static_cast<std::size_t>(L));
      ag::Tape tape;
      std::vector<int> in_t(program.type_ids.begin() + static_cast<std::ptrdiff_t>(start),
                            program.type_ids.begin() + static_cast<std::ptrdiff_t>(end));
      std::vector<int> in_v(program.value_ids.begin() + static_cast<std::ptrdiff_t>(start),
                            program.value_ids.begin() + static_cast<std::ptrdiff_t>(end));
      ag::Var input = model.embed(tape, in_t, in_v);
      EncoderResult enc = model.encoder_forward(tape, input, memory);
      memory = use_recurrence ? std::move(enc.new_memory) : MemoryState{};

      std::vector<ag::Var> hidden_pieces;
      std::vector<EncodedPath> paths;
      std::vector<std::size_t> query_targets;  // flat positions being predicted
      if (start == 0) {
        hidden_pieces.push_back(model.initial_hidden());
        paths.push_back(program.paths[0]);
        query_targets.push_back(0);
      }
      for (std::size_t pos = start; pos < end; ++pos) {
        if (pos + 1 >= program.size()) break;
        hidden_pieces.push_back(
            ag::slice_rows(tape, enc.hidden, static_cast<Eigen::Index>(pos - start), 1));
        paths.push_back(program.paths[pos + 1]);
        query_targets.push_back(pos + 1);
      }
      if (hidden_pieces.empty()) continue;
      ag::Var hidden = hidden_pieces[0];
      for (std::size_t i = 1; i < hidden_pieces.size(); ++i) {
        hidden = ag::concat_rows(tape, hidden, hidden_pieces[i]);
      }
      ag::Var path_vec;
      if (model.config().use_path) path_vec = model.path_encode(tape, paths);
      auto [type_logits, value_logits] = model.predict_heads(tape, hidden, path_vec);
      for (std::size_t i = 0; i < query_targets.size(); ++i) {
        const std::size_t pos = query_targets[i];
        score_query(type_logits->value.row(static_cast<Eigen::Index>(i)),
                    value_logits->value.row(static_cast<Eigen::Index>(i)),
                    program.type_ids[pos], program.value_ids[pos]);
      }
    }

    if (program_queries > 0) {
      report.per_program_type_accuracy.push_back(static_cast<double>(program_type_correct) /
                                                 static_cast<double>(program_queries));
      report.per_program_value_accuracy.push_back(static_cast<double>(program_value_correct) /
                                                  static_cast<double>(program_queries));
    }
  }

  report.query_count = target_types.size();
  report.accuracy_type =
      top1_accuracy(predicted_types, target_types, types.unk_id(), Task::kType);
  report.accuracy_value =
      top1_accuracy(predicted_values, target_values, value_unk, Task::kValue);
  if (!target_values.empty()) {
    const auto unk_count = std::count(target_values.begin(), target_values.end(), value_unk);
    report.unk_rate =
        static_cast<double>(unk_count) / static_cast<double>(target_values.size());
  }
  if (!breakdown_types.empty()) {
    report.per_type = per_type_accuracy(predicted_types, target_types, breakdown_types, types);
  }
  return report;
}

std::pair<Significance, Significance> compare_reports(const EvalReport& report_x,
                                                      const EvalReport& report_y) {
  auto compare = [](const std::vector<double>& x, const std::vector<double>& y) {
    Significance s;
    const RankSumResult rs = wilcoxon_rank_sum(x, y);
    s.wilcoxon_statistic = rs.statistic;
    s.wilcoxon_p = rs.p_value;
    s.cliffs_delta = cliffs_delta(x, y);
    return s;
  };
  return {compare(report_x.per_program_type_accuracy, report_y.per_program_type_accuracy),
          compare(report_x.per_program_value_accuracy, report_y.per_program_value_accuracy)};
}

}  // namespace astlm
