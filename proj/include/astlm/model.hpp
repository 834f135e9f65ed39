#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "astlm/autograd.hpp"
#include "astlm/data.hpp"

namespace astlm {

struct ModelConfig {
  int d_type = 16;
  int d_value = 48;
  int n_layers = 2;
  int n_heads = 2;
  int d_head = 16;
  int d_ff = 64;
  int segment_length = 32;   // L
  int memory_length = 64;    // M
  int path_length = 5;       // m
  int path_dim = 32;         // H_p, concatenated bidirectional vector
  int type_vocab_size = 0;
  int value_vocab_size = 0;
  double alpha_type = 0.5;
  double alpha_value = 0.5;
  bool use_path = true;
  std::uint64_t seed = 0;

  int hidden() const { return d_type + d_value; }

  /// Throws ConfigError on non-positive dims, odd path_dim, or loss weights
  /// off the simplex.
  void validate() const;

  /// Reference values from the full-scale experimental regime.
  static ModelConfig paper_scale(int type_vocab_size, int value_vocab_size);

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

/// Per-layer cached hidden states carried across segments. Entries are
/// tape nodes: constants after the normal (detached) update, live graph
/// nodes when the stop-gradient hook is disabled.
struct MemoryState {
  std::vector<ag::Var> layers;
  int segment_count = 0;

  bool empty() const { return layers.empty(); }
  Eigen::Index length() const { return layers.empty() ? 0 : layers.front()->value.rows(); }
};

struct EncoderResult {
  ag::Var hidden;  // T x H, top layer
  MemoryState new_memory;
};

class Model {
 public:
  explicit Model(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  std::map<std::string, ag::Var>& params() { return params_; }
  const std::map<std::string, ag::Var>& params() const { return params_; }
  ag::Var param(const std::string& name) const;

  /// Concatenated type/value embeddings, one row per position.
  ag::Var embed(ag::Tape& tape, const std::vector<int>& type_ids,
                const std::vector<int>& value_ids) const;

  /// Causal segment-recurrent self-attention over the segment plus cached
  /// memory. `detach_memory=false` is a test hook that keeps the new memory
  /// connected to the graph.
  EncoderResult encoder_forward(ag::Tape& tape, const ag::Var& segment, const MemoryState& memory,
                                bool detach_memory = true) const;

  /// Bidirectional recurrent encoding of target paths; one row per path,
  /// path_dim columns. PAD entries beyond true_length do not contribute.
  ag::Var path_encode(ag::Tape& tape, const std::vector<EncodedPath>& paths) const;

  /// Task-specific logits: (type, value). path_vec is ignored when
  /// use_path is false.
  std::pair<ag::Var, ag::Var> predict_heads(ag::Tape& tape, const ag::Var& hidden,
                                            const ag::Var& path_vec) const;

  /// One task's logits; task is "type" or "value".
  ag::Var head_logits(ag::Tape& tape, const std::string& task, const ag::Var& hidden,
                      const ag::Var& path_vec) const;

  /// Weighted multi-task loss. A task with weight exactly 0 is skipped
  /// entirely (its head is never evaluated).
  ag::Var mtl_loss(ag::Tape& tape, const ag::Var& type_logits, const ag::Var& value_logits,
                   const std::vector<int>& target_types, const std::vector<int>& target_values,
                   const std::vector<bool>& mask, double alpha_type, double alpha_value) const;

  /// Learned hidden state standing in for the empty context of position-0
  /// queries (1 x H).
  ag::Var initial_hidden() const { return param("embed.h_init"); }

  void save(const std::string& path, std::uint64_t type_vocab_fp,
            std::uint64_t value_vocab_fp) const;
  static Model load(const std::string& path);
  static Model load(const std::string& path, std::uint64_t expect_type_fp,
                    std::uint64_t expect_value_fp);

  std::uint64_t type_vocab_fingerprint() const { return type_vocab_fp_; }
  std::uint64_t value_vocab_fingerprint() const { return value_vocab_fp_; }

 private:
  void init_params();

  ModelConfig config_;
  std::map<std::string, ag::Var> params_;
  std::uint64_t type_vocab_fp_ = 0;
  std::uint64_t value_vocab_fp_ = 0;
};

/// Validates loss weights: both nonnegative, summing to 1.
void check_loss_weights(double alpha_type, double alpha_value);

}  // namespace astlm
