#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "astlm/data.hpp"
#include "astlm/model.hpp"

namespace astlm {

struct TrainConfig {
  int epochs = 10;
  int batch_size = 4;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip_norm = 5.0;
  int checkpoint_every_epochs = 1;
  bool use_mtl = true;
  bool use_path = true;
  bool use_recurrence = true;
  bool shuffle = true;
  std::uint64_t seed = 0;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

/// One optimizer step's worth of data: `batch` rows of length-L segments.
/// Targets at (b, t) are the node at flat position t+1 of the row's program;
/// the final node of a program carries no target (mask false). A row whose
/// segment starts a program also carries the position-0 query: the program's
/// first node, predicted from the learned initial hidden state.
struct SegmentBatch {
  int length = 0;  // L
  std::vector<std::vector<int>> input_types, input_values;      // [B][L], PAD-filled
  std::vector<std::vector<int>> target_types, target_values;    // [B][L]
  std::vector<std::vector<EncodedPath>> paths;                  // [B][L], paths of targets
  std::vector<std::vector<bool>> loss_mask;                     // [B][L]
  std::vector<bool> reset;                                      // program starts here
  std::vector<bool> active;                                     // row has real data
  std::vector<int> first_target_type, first_target_value;       // valid when reset[b]
  std::vector<EncodedPath> first_path;

  int rows() const { return static_cast<int>(input_types.size()); }
};

/// Chunks each program into consecutive length-L segments and schedules them
/// onto batch rows so that a program's segments occupy the same row in
/// consecutive batches. `order` permutes program assignment (empty = shard
/// order).
std::vector<SegmentBatch> segment_stream(const Shard& shard, int segment_length, int batch_size,
                                         int type_pad_id, int value_pad_id,
                                         const std::vector<std::size_t>& order = {});

class AdamOptimizer {
 public:
  AdamOptimizer(double lr, double beta1, double beta2, double eps, double clip_norm);
  void step(std::map<std::string, ag::Var>& params);
  void zero_grad(std::map<std::string, ag::Var>& params);

 private:
  double lr_, beta1_, beta2_, eps_, clip_norm_;
  long t_ = 0;
  std::map<std::string, ag::Matrix> m_, v_;
};

struct StepOutcome {
  double loss = 0.0;
  std::size_t positions = 0;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_type_accuracy = 0.0;
  double val_value_accuracy = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> log;
  double best_val_loss = 0.0;
  int best_epoch = 0;
};

class Trainer {
 public:
  Trainer(Model& model, TrainConfig config, const Vocab& types, const Vocab& values);

  /// Runs one forward/backward/update over a batch. Throws DivergenceError
  /// on a non-finite loss.
  StepOutcome train_step(const SegmentBatch& batch, std::vector<MemoryState>& memories);

  /// Full loop over shards with per-epoch validation. Writes
  /// `<out_dir>/checkpoint_final.json` and `<out_dir>/checkpoint_best.json`
  /// plus `<out_dir>/metrics.jsonl` when out_dir is nonempty.
  TrainResult train(const Shard& train_shard, const Shard& val_shard,
                    const std::string& out_dir = "");

  /// Loss and accuracies over a shard without updates.
  EpochRecord evaluate_shard(const Shard& shard);

  const TrainConfig& config() const { return config_; }

 private:
  void check_shard(const Shard& shard) const;

  Model& model_;
  TrainConfig config_;
  AdamOptimizer optimizer_;
  int type_pad_id_;
  int value_pad_id_;
  int value_unk_id_;
  std::uint64_t type_fp_;
  std::uint64_t value_fp_;
  double alpha_type_;
  double alpha_value_;
};

struct SweepRow {
  double alpha_type = 0.0;
  double alpha_value = 0.0;
  std::optional<double> type_accuracy;   // empty for the untrained task
  std::optional<double> value_accuracy;
};

/// Trains one model per weight setting and reports validation accuracies.
std::vector<SweepRow> weight_sweep(const ModelConfig& model_config, const TrainConfig& train_config,
                                   const std::vector<std::pair<double, double>>& alphas,
                                   const Shard& train_shard, const Shard& val_shard,
                                   const Vocab& types, const Vocab& values);

}  // namespace astlm
