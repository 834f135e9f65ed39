#include <cmath>
#include <functional>
#include <random>

#include "astlm/autograd.hpp"
#include "astlm/errors.hpp"
#include "doctest.h"

using namespace astlm;
using ag::Matrix;
using ag::Var;

namespace {

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  Matrix m(rows, cols);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

/// Central-difference check of d(loss)/d(leaf) for every leaf element.
void check_gradients(std::vector<Var> leaves,
                     const std::function<Var(ag::Tape&, const std::vector<Var>&)>& build,
                     double tolerance = 1e-6) {
  ag::Tape tape;
  Var loss = build(tape, leaves);
  tape.backward(loss);

  const double h = 1e-6;
  for (auto& leaf : leaves) {
    for (Eigen::Index i = 0; i < leaf->value.rows(); ++i) {
      for (Eigen::Index j = 0; j < leaf->value.cols(); ++j) {
        const double saved = leaf->value(i, j);
        leaf->value(i, j) = saved + h;
        ag::Tape t_plus;
        const double f_plus = build(t_plus, leaves)->value(0, 0);
        leaf->value(i, j) = saved - h;
        ag::Tape t_minus;
        const double f_minus = build(t_minus, leaves)->value(0, 0);
        leaf->value(i, j) = saved;
        const double numeric = (f_plus - f_minus) / (2.0 * h);
        const double analytic = leaf->grad.size() ? leaf->grad(i, j) : 0.0;
        const double err = std::abs(analytic - numeric) /
                           std::max(1.0, std::abs(analytic) + std::abs(numeric));
        CHECK(err < tolerance);
      }
    }
  }
}

}  // namespace

TEST_CASE("gradients of core ops match central differences") {
  std::mt19937_64 rng(11);
  Var a = ag::leaf(random_matrix(3, 4, rng));
  Var b = ag::leaf(random_matrix(4, 2, rng));
  Var c = ag::leaf(random_matrix(3, 2, rng));
  Var row = ag::leaf(random_matrix(1, 2, rng));

  check_gradients({a, b, c, row}, [](ag::Tape& t, const std::vector<Var>& v) {
    Var x = ag::matmul(t, v[0], v[1]);
    x = ag::add_rowvec(t, x, v[3]);
    x = ag::tanh_(t, x);
    x = ag::mul(t, x, v[2]);
    x = ag::add(t, x, ag::sigmoid(t, v[2]));
    x = ag::sub(t, x, ag::relu(t, v[2]));
    x = ag::scale(t, x, 0.7);
    return ag::sum(t, x);
  });
}

TEST_CASE("gradients of structural ops") {
  std::mt19937_64 rng(12);
  Var a = ag::leaf(random_matrix(3, 4, rng));
  Var b = ag::leaf(random_matrix(2, 4, rng));

  check_gradients({a, b}, [](ag::Tape& t, const std::vector<Var>& v) {
    Var stacked = ag::concat_rows(t, v[0], v[1]);            // 5x4
    Var wide = ag::concat_cols(t, stacked, stacked);         // 5x8
    Var s1 = ag::slice_cols(t, wide, 2, 3);
    Var s2 = ag::slice_rows(t, s1, 1, 4);
    Var tr = ag::transpose(t, s2);
    return ag::sum(t, ag::mul(t, tr, tr));
  });
}

TEST_CASE("gradients of gather_rows scatter back") {
  std::mt19937_64 rng(13);
  Var table = ag::leaf(random_matrix(5, 3, rng));
  check_gradients({table}, [](ag::Tape& t, const std::vector<Var>& v) {
    Var g = ag::gather_rows(t, v[0], {0, 2, 2, 4});
    return ag::sum(t, ag::tanh_(t, g));
  });
}

TEST_CASE("gather_rows rejects out-of-range ids") {
  ag::Tape t;
  Var table = ag::leaf(Matrix::Zero(3, 2));
  CHECK_THROWS_AS(ag::gather_rows(t, table, {3}), IndexError);
  CHECK_THROWS_AS(ag::gather_rows(t, table, {-1}), IndexError);
}

TEST_CASE("softmax rows: normalization and gradient") {
  std::mt19937_64 rng(14);
  Var a = ag::leaf(random_matrix(4, 6, rng));
  {
    ag::Tape t;
    Var s = ag::softmax_rows(t, a);
    for (Eigen::Index r = 0; r < 4; ++r) {
      CHECK(s->value.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(s->value.row(r).minCoeff() >= 0.0);
    }
  }
  Var w = ag::leaf(random_matrix(4, 6, rng));
  check_gradients({a, w}, [](ag::Tape& t, const std::vector<Var>& v) {
    return ag::sum(t, ag::mul(t, ag::softmax_rows(t, v[0]), v[1]));
  });
}

TEST_CASE("layer_norm: rows normalized, gradient correct") {
  std::mt19937_64 rng(15);
  Var a = ag::leaf(random_matrix(3, 8, rng));
  Var gain = ag::leaf(Matrix::Ones(1, 8) + 0.1 * random_matrix(1, 8, rng));
  Var bias = ag::leaf(0.1 * random_matrix(1, 8, rng));
  {
    ag::Tape t;
    Var unit = ag::layer_norm(t, a, ag::leaf(Matrix::Ones(1, 8)), ag::leaf(Matrix::Zero(1, 8)));
    for (Eigen::Index r = 0; r < 3; ++r) {
      CHECK(unit->value.row(r).mean() == doctest::Approx(0.0).epsilon(1e-9));
    }
  }
  Var w = ag::leaf(random_matrix(3, 8, rng));
  check_gradients({a, gain, bias, w}, [](ag::Tape& t, const std::vector<Var>& v) {
    Var n = ag::layer_norm(t, v[0], v[1], v[2]);
    return ag::sum(t, ag::mul(t, ag::tanh_(t, n), v[3]));
  });
}

TEST_CASE("relative_shift maps offsets onto the query/key grid") {
  // 2 queries, memory length 3, keys 0..4. Entry (i, j) must read the score
  // at offset i + 3 - j.
  ag::Tape t;
  Matrix p(2, 5);
  for (Eigen::Index i = 0; i < 2; ++i)
    for (Eigen::Index d = 0; d < 5; ++d) p(i, d) = 10.0 * static_cast<double>(i + 1) + static_cast<double>(d);
  Var shifted = ag::relative_shift(t, ag::leaf(p), 3);
  CHECK(shifted->value(0, 0) == doctest::Approx(13.0));  // offset 3
  CHECK(shifted->value(0, 3) == doctest::Approx(10.0));  // offset 0
  CHECK(shifted->value(0, 4) == doctest::Approx(0.0));   // future key, offset -1
  CHECK(shifted->value(1, 4) == doctest::Approx(20.0));  // offset 0
  CHECK(shifted->value(1, 0) == doctest::Approx(24.0));  // offset 4
}

TEST_CASE("relative_shift gradient") {
  std::mt19937_64 rng(16);
  Var p = ag::leaf(random_matrix(3, 7, rng));
  Var w = ag::leaf(random_matrix(3, 7, rng));
  check_gradients({p, w}, [](ag::Tape& t, const std::vector<Var>& v) {
    return ag::sum(t, ag::mul(t, ag::relative_shift(t, v[0], 4), v[1]));
  });
}

TEST_CASE("softmax_cross_entropy: value and gradient, masked rows ignored") {
  std::mt19937_64 rng(17);
  Var logits = ag::leaf(random_matrix(4, 5, rng));
  const std::vector<int> targets{1, 0, 3, 2};
  const std::vector<bool> mask{true, true, false, true};
  {
    ag::Tape t;
    Var loss = ag::softmax_cross_entropy(t, logits, targets, mask);
    // Direct recomputation.
    double expected = 0.0;
    for (Eigen::Index r : {0, 1, 3}) {
      Eigen::ArrayXd row = logits->value.row(r).array();
      row -= row.maxCoeff();
      const double denom = row.exp().sum();
      expected -= std::log(std::exp(row(targets[static_cast<std::size_t>(r)])) / denom);
    }
    CHECK(loss->value(0, 0) == doctest::Approx(expected / 3.0).epsilon(1e-12));
  }
  check_gradients({logits}, [&](ag::Tape& t, const std::vector<Var>& v) {
    return ag::softmax_cross_entropy(t, v[0], targets, mask);
  });
}

TEST_CASE("shape errors") {
  ag::Tape t;
  Var a = ag::leaf(Matrix::Zero(2, 3));
  Var b = ag::leaf(Matrix::Zero(3, 2));
  CHECK_THROWS_AS(ag::add(t, a, b), ShapeError);
  CHECK_THROWS_AS(ag::matmul(t, a, a), ShapeError);
  CHECK_THROWS_AS(ag::slice_cols(t, a, 2, 2), ShapeError);
  CHECK_THROWS_AS(ag::softmax_cross_entropy(t, a, {0}, {true}), ShapeError);
  CHECK_THROWS_AS(t.backward(a), ShapeError);
}

TEST_CASE("constants receive no gradient") {
  ag::Tape t;
  Var c = ag::constant(Matrix::Ones(2, 2));
  Var a = ag::leaf(Matrix::Ones(2, 2));
  Var loss = ag::sum(t, ag::mul(t, a, c));
  t.backward(loss);
  CHECK(c->grad.size() == 0);
  CHECK(a->grad.sum() == doctest::Approx(4.0));
}
