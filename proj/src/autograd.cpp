#include "astlm/autograd.hpp"

#include <cmath>

#include "astlm/errors.hpp"

namespace astlm::ag {

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a->value.rows() != b->value.rows() || a->value.cols() != b->value.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch (" + std::to_string(a->value.rows()) +
                     "x" + std::to_string(a->value.cols()) + " vs " +
                     std::to_string(b->value.rows()) + "x" + std::to_string(b->value.cols()) + ")");
  }
}

bool any_grad(const std::vector<Var>& parents) {
  for (const auto& p : parents) {
    if (p->requires_grad) return true;
  }
  return false;
}

}  // namespace

Var constant(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return n;
}

Var leaf(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return n;
}

Var Tape::record(Matrix value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = any_grad(parents);
  n->parents = std::move(parents);
  if (n->requires_grad) {
    n->backward_fn = std::move(backward_fn);
  }
  nodes_.push_back(n);
  return n;
}

void Tape::backward(const Var& loss) {
  if (loss->value.size() != 1) {
    throw ShapeError("backward: loss must be a 1x1 node");
  }
  loss->ensure_grad()(0, 0) += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = **it;
    if (n.backward_fn && n.grad.size() != 0) {
      n.backward_fn(n);
    }
  }
}

Var matmul(Tape& t, const Var& a, const Var& b) {
  if (a->value.cols() != b->value.rows()) {
    throw ShapeError("matmul: inner dimensions differ");
  }
  return t.record(a->value * b->value, {a, b}, [a, b](Node& n) {
    if (a->requires_grad) a->ensure_grad().noalias() += n.grad * b->value.transpose();
    if (b->requires_grad) b->ensure_grad().noalias() += a->value.transpose() * n.grad;
  });
}

Var add(Tape& t, const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  return t.record(a->value + b->value, {a, b}, [a, b](Node& n) {
    if (a->requires_grad) a->ensure_grad() += n.grad;
    if (b->requires_grad) b->ensure_grad() += n.grad;
  });
}

Var sub(Tape& t, const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  return t.record(a->value - b->value, {a, b}, [a, b](Node& n) {
    if (a->requires_grad) a->ensure_grad() += n.grad;
    if (b->requires_grad) b->ensure_grad() -= n.grad;
  });
}

Var mul(Tape& t, const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  return t.record(a->value.cwiseProduct(b->value), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) a->ensure_grad() += n.grad.cwiseProduct(b->value);
    if (b->requires_grad) b->ensure_grad() += n.grad.cwiseProduct(a->value);
  });
}

Var scale(Tape& t, const Var& a, double s) {
  return t.record(a->value * s, {a}, [a, s](Node& n) {
    if (a->requires_grad) a->ensure_grad() += n.grad * s;
  });
}

Var add_rowvec(Tape& t, const Var& a, const Var& row) {
  if (row->value.rows() != 1 || row->value.cols() != a->value.cols()) {
    throw ShapeError("add_rowvec: row must be 1 x cols(a)");
  }
  Matrix out = a->value;
  out.rowwise() += row->value.row(0);
  return t.record(std::move(out), {a, row}, [a, row](Node& n) {
    if (a->requires_grad) a->ensure_grad() += n.grad;
    if (row->requires_grad) row->ensure_grad() += n.grad.colwise().sum();
  });
}

Var tanh_(Tape& t, const Var& a) {
  Matrix out = a->value.array().tanh();
  return t.record(std::move(out), {a}, [a](Node& n) {
    if (a->requires_grad) {
      a->ensure_grad().array() += n.grad.array() * (1.0 - n.value.array().square());
    }
  });
}

Var sigmoid(Tape& t, const Var& a) {
  Matrix out = (1.0 / (1.0 + (-a->value.array()).exp())).matrix();
  return t.record(std::move(out), {a}, [a](Node& n) {
    if (a->requires_grad) {
      a->ensure_grad().array() += n.grad.array() * n.value.array() * (1.0 - n.value.array());
    }
  });
}

Var relu(Tape& t, const Var& a) {
  Matrix out = a->value.cwiseMax(0.0);
  return t.record(std::move(out), {a}, [a](Node& n) {
    if (a->requires_grad) {
      a->ensure_grad().array() +=
          n.grad.array() * (a->value.array() > 0.0).cast<double>();
    }
  });
}

Var concat_cols(Tape& t, const Var& a, const Var& b) {
  if (a->value.rows() != b->value.rows()) {
    throw ShapeError("concat_cols: row counts differ");
  }
  Matrix out(a->value.rows(), a->value.cols() + b->value.cols());
  out << a->value, b->value;
  return t.record(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) a->ensure_grad() += n.grad.leftCols(a->value.cols());
    if (b->requires_grad) b->ensure_grad() += n.grad.rightCols(b->value.cols());
  });
}

Var concat_rows(Tape& t, const Var& a, const Var& b) {
  if (a->value.cols() != b->value.cols()) {
    throw ShapeError("concat_rows: column counts differ");
  }
  Matrix out(a->value.rows() + b->value.rows(), a->value.cols());
  out << a->value, b->value;
  return t.record(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) a->ensure_grad() += n.grad.topRows(a->value.rows());
    if (b->requires_grad) b->ensure_grad() += n.grad.bottomRows(b->value.rows());
  });
}

Var slice_cols(Tape& t, const Var& a, Eigen::Index start, Eigen::Index n_cols) {
  if (start < 0 || start + n_cols > a->value.cols()) {
    throw ShapeError("slice_cols: range out of bounds");
  }
  return t.record(a->value.middleCols(start, n_cols), {a}, [a, start, n_cols](Node& n) {
    if (a->requires_grad) a->ensure_grad().middleCols(start, n_cols) += n.grad;
  });
}

Var slice_rows(Tape& t, const Var& a, Eigen::Index start, Eigen::Index n_rows) {
  if (start < 0 || start + n_rows > a->value.rows()) {
    throw ShapeError("slice_rows: range out of bounds");
  }
  return t.record(a->value.middleRows(start, n_rows), {a}, [a, start, n_rows](Node& n) {
    if (a->requires_grad) a->ensure_grad().middleRows(start, n_rows) += n.grad;
  });
}

Var transpose(Tape& t, const Var& a) {
  return t.record(a->value.transpose(), {a}, [a](Node& n) {
    if (a->requires_grad) a->ensure_grad() += n.grad.transpose();
  });
}

Var sum(Tape& t, const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a->value.sum();
  return t.record(std::move(out), {a}, [a](Node& n) {
    if (a->requires_grad) a->ensure_grad().array() += n.grad(0, 0);
  });
}

Var gather_rows(Tape& t, const Var& table, const std::vector<int>& ids) {
  Matrix out(static_cast<Eigen::Index>(ids.size()), table->value.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table->value.rows()) {
      throw IndexError("gather_rows: id " + std::to_string(ids[i]) + " out of range");
    }
    out.row(static_cast<Eigen::Index>(i)) = table->value.row(ids[i]);
  }
  return t.record(std::move(out), {table}, [table, ids](Node& n) {
    if (!table->requires_grad) return;
    Matrix& g = table->ensure_grad();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      g.row(ids[i]) += n.grad.row(static_cast<Eigen::Index>(i));
    }
  });
}

Var softmax_rows(Tape& t, const Var& a) {
  Matrix out = a->value;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    auto row = out.row(r).array();
    row -= row.maxCoeff();
    row = row.exp();
    row /= row.sum();
  }
  return t.record(std::move(out), {a}, [a](Node& n) {
    if (!a->requires_grad) return;
    Matrix& g = a->ensure_grad();
    for (Eigen::Index r = 0; r < n.value.rows(); ++r) {
      const double dot = n.grad.row(r).dot(n.value.row(r));
      g.row(r).array() +=
          n.value.row(r).array() * (n.grad.row(r).array() - dot);
    }
  });
}

Var layer_norm(Tape& t, const Var& a, const Var& gain, const Var& bias, double eps) {
  const Eigen::Index rows = a->value.rows();
  const Eigen::Index cols = a->value.cols();
  if (gain->value.rows() != 1 || gain->value.cols() != cols || bias->value.rows() != 1 ||
      bias->value.cols() != cols) {
    throw ShapeError("layer_norm: gain/bias must be 1 x cols(a)");
  }
  Matrix xhat(rows, cols);
  Eigen::VectorXd inv_std(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double mean = a->value.row(r).mean();
    const double var = (a->value.row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (a->value.row(r).array() - mean) * inv_std(r);
  }
  Matrix out = (xhat.array().rowwise() * gain->value.row(0).array()).rowwise() +
               bias->value.row(0).array();
  return t.record(std::move(out), {a, gain, bias},
                  [a, gain, bias, xhat, inv_std](Node& n) {
    const Eigen::Index cols = xhat.cols();
    if (gain->requires_grad) {
      gain->ensure_grad() += (n.grad.array() * xhat.array()).colwise().sum().matrix();
    }
    if (bias->requires_grad) {
      bias->ensure_grad() += n.grad.colwise().sum();
    }
    if (a->requires_grad) {
      Matrix& g = a->ensure_grad();
      for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
        Eigen::Array<double, 1, Eigen::Dynamic> dxhat =
            n.grad.row(r).array() * gain->value.row(0).array();
        const double sum_dxhat = dxhat.sum();
        const double sum_dxhat_xhat = (dxhat * xhat.row(r).array()).sum();
        g.row(r).array() += inv_std(r) / static_cast<double>(cols) *
                            (static_cast<double>(cols) * dxhat - sum_dxhat -
                             xhat.row(r).array() * sum_dxhat_xhat);
      }
    }
  });
}

Var relative_shift(Tape& t, const Var& a, Eigen::Index mem_len) {
  const Eigen::Index rows = a->value.rows();
  const Eigen::Index cols = a->value.cols();
  Matrix out = Matrix::Zero(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      const Eigen::Index offset = i + mem_len - j;
      if (offset >= 0 && offset < cols) {
        out(i, j) = a->value(i, offset);
      }
    }
  }
  return t.record(std::move(out), {a}, [a, mem_len](Node& n) {
    if (!a->requires_grad) return;
    Matrix& g = a->ensure_grad();
    for (Eigen::Index i = 0; i < n.grad.rows(); ++i) {
      for (Eigen::Index j = 0; j < n.grad.cols(); ++j) {
        const Eigen::Index offset = i + mem_len - j;
        if (offset >= 0 && offset < n.grad.cols()) {
          g(i, offset) += n.grad(i, j);
        }
      }
    }
  });
}

Var softmax_cross_entropy(Tape& t, const Var& logits, const std::vector<int>& targets,
                          const std::vector<bool>& mask) {
  const Eigen::Index rows = logits->value.rows();
  if (std::cmp_not_equal(targets.size(), rows) || std::cmp_not_equal(mask.size(), rows)) {
    throw ShapeError("softmax_cross_entropy: targets/mask length must equal rows(logits)");
  }
  Matrix probs = logits->value;
  double total = 0.0;
  Eigen::Index active = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    auto row = probs.row(r).array();
    row -= row.maxCoeff();
    row = row.exp();
    row /= row.sum();
    if (!mask[static_cast<std::size_t>(r)]) continue;
    const int target = targets[static_cast<std::size_t>(r)];
    if (target < 0 || target >= logits->value.cols()) {
      throw IndexError("softmax_cross_entropy: target id out of range");
    }
    total -= std::log(std::max(probs(r, target), 1e-300));
    ++active;
  }
  Matrix out(1, 1);
  out(0, 0) = active > 0 ? total / static_cast<double>(active) : 0.0;
  return t.record(std::move(out), {logits},
                  [logits, targets, mask, probs, active](Node& n) {
    if (!logits->requires_grad || active == 0) return;
    const double scale = n.grad(0, 0) / static_cast<double>(active);
    Matrix& g = logits->ensure_grad();
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
      if (!mask[static_cast<std::size_t>(r)]) continue;
      g.row(r) += scale * probs.row(r);
      g(r, targets[static_cast<std::size_t>(r)]) -= scale;
    }
  });
}

}  // namespace astlm::ag
