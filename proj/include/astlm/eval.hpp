#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "astlm/data.hpp"
#include "astlm/model.hpp"

namespace astlm {

enum class Task { kType, kValue };

/// Top-1 accuracy over predicted/target id pairs. For the value task,
/// queries whose target is UNK count as wrong even when UNK is predicted.
double top1_accuracy(const std::vector<int>& predictions, const std::vector<int>& targets,
                     int unk_id, Task task);

/// Improvement of acc_x over acc_y scaled by the remaining room below
/// acc_ub; the plain relative decrease when acc_x <= acc_y.
double normalized_improvement(double acc_x, double acc_y, double acc_ub);

struct TypeAccuracy {
  double accuracy = 0.0;
  std::size_t count = 0;
};

/// The eight statement types used for structural-prediction breakdowns.
const std::vector<std::string>& difficult_types();

/// Accuracy restricted to queries whose target type is in type_set.
/// Types with zero occurrences are absent from the result. Throws KeyError
/// for a type name missing from the vocabulary.
std::map<std::string, TypeAccuracy> per_type_accuracy(const std::vector<int>& predicted_types,
                                                      const std::vector<int>& target_types,
                                                      const std::vector<std::string>& type_set,
                                                      const Vocab& types);

/// (#{x_i > y_j} - #{x_i < y_j}) / (|x| * |y|).
double cliffs_delta(const std::vector<double>& sample_x, const std::vector<double>& sample_y);

struct RankSumResult {
  double statistic = 0.0;  // rank sum of sample_x, midranks for ties
  double p_value = 1.0;    // two-sided
  bool exact = false;
};

/// Wilcoxon rank-sum test: exact enumeration when |x|+|y| <= 12, otherwise
/// normal approximation with tie correction and continuity correction.
RankSumResult wilcoxon_rank_sum(const std::vector<double>& sample_x,
                                const std::vector<double>& sample_y);

struct Improvement {
  std::string versus;
  std::string task;
  double value = 0.0;
};

struct Significance {
  double wilcoxon_statistic = 0.0;
  double wilcoxon_p = 1.0;
  double cliffs_delta = 0.0;
};

struct EvalReport {
  double accuracy_type = 0.0;
  double accuracy_value = 0.0;
  double unk_rate = 0.0;
  std::size_t query_count = 0;
  std::vector<Improvement> normalized_improvements;
  std::map<std::string, TypeAccuracy> per_type;
  std::vector<double> per_program_type_accuracy;
  std::vector<double> per_program_value_accuracy;
  std::optional<Significance> significance_type;
  std::optional<Significance> significance_value;
  std::string config_fingerprint;

  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
};

/// Runs the full query protocol over a shard: one prediction per node,
/// greedy argmax, UNK value targets scored wrong.
EvalReport evaluate_model(Model& model, const Shard& shard, const Vocab& types,
                          const Vocab& values, bool use_recurrence = true,
                          const std::vector<std::string>& breakdown_types = {});

/// Per-program significance of report_x over report_y.
std::pair<Significance, Significance> compare_reports(const EvalReport& report_x,
                                                      const EvalReport& report_y);

}  // namespace astlm
