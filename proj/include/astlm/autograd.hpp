#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace astlm::ag {

using Matrix = Eigen::MatrixXd;

/// One value in the computation graph. Gradients accumulate into `grad`
/// (same shape as `value`), allocated lazily on first use.
struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // adds this node's grad into parents

  Matrix& ensure_grad() {
    if (grad.size() == 0) grad = Matrix::Zero(value.rows(), value.cols());
    return grad;
  }
};

using Var = std::shared_ptr<Node>;

/// Records computed nodes in creation order; backward() replays them in
/// reverse. Parameters live outside the tape as leaf Vars.
class Tape {
 public:
  Var record(Matrix value, std::vector<Var> parents, std::function<void(Node&)> backward_fn);

  /// Seeds d(loss)/d(loss) = 1 and propagates. `loss` must be 1x1.
  void backward(const Var& loss);

  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Var> nodes_;
};

Var constant(Matrix value);
Var leaf(Matrix value);  // requires_grad = true

Var matmul(Tape& t, const Var& a, const Var& b);
Var add(Tape& t, const Var& a, const Var& b);
Var sub(Tape& t, const Var& a, const Var& b);
Var mul(Tape& t, const Var& a, const Var& b);  // element-wise
Var scale(Tape& t, const Var& a, double s);
/// Adds a 1xC row vector to every row of a.
Var add_rowvec(Tape& t, const Var& a, const Var& row);
Var tanh_(Tape& t, const Var& a);
Var sigmoid(Tape& t, const Var& a);
Var relu(Tape& t, const Var& a);
Var concat_cols(Tape& t, const Var& a, const Var& b);
Var concat_rows(Tape& t, const Var& a, const Var& b);
Var slice_cols(Tape& t, const Var& a, Eigen::Index start, Eigen::Index n);
Var slice_rows(Tape& t, const Var& a, Eigen::Index start, Eigen::Index n);
Var transpose(Tape& t, const Var& a);
Var sum(Tape& t, const Var& a);  // -> 1x1

/// Rows of `table` selected by ids; backward scatter-adds into the table.
Var gather_rows(Tape& t, const Var& table, const std::vector<int>& ids);

/// Row-wise softmax (numerically stabilized).
Var softmax_rows(Tape& t, const Var& a);

/// Row-wise layer normalization with learned gain/bias (1xC each).
Var layer_norm(Tape& t, const Var& a, const Var& gain, const Var& bias, double eps = 1e-5);

/// out(i, j) = a(i, i + mem_len - j) when that offset is within [0, cols),
/// else 0. Maps per-offset scores onto the (query, key) grid of a segment
/// with mem_len cached positions.
Var relative_shift(Tape& t, const Var& a, Eigen::Index mem_len);

/// Mean of -log softmax(logits)(row, target) over rows with mask true.
/// Rows with mask false contribute nothing. Returns 1x1.
Var softmax_cross_entropy(Tape& t, const Var& logits, const std::vector<int>& targets,
                          const std::vector<bool>& mask);

}  // namespace astlm::ag
