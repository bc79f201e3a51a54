#include <gtest/gtest.h>

#include <cmath>

#include "ims/autodiff.hpp"
#include "ims/infotheory.hpp"
#include "test_support.hpp"

namespace ad = ims::ad;
using ims::Matrix;
using ims::testing::central_difference;
using ims::testing::random_matrix;
using ims::testing::random_npd;
using ims::testing::relative_error;

namespace {

// Tape gradient of a unary matrix→scalar builder vs central differences.
double unary_check(const std::function<ad::Var(ad::Var)>& build, const Matrix& x, double step = 1e-5) {
  ad::Tape t;
  ad::Var v = t.param("x", x);
  ad::Var loss = build(v);
  t.backward(loss);
  const Matrix analytic = t.gradient().at("x");
  const Matrix numeric = central_difference(
      [&](const Matrix& m) {
        ad::Tape u;
        return build(u.param("x", m)).scalar();
      },
      x, step);
  return relative_error(analytic, numeric);
}

}  // namespace

TEST(AutodiffTest, SumOfSquares) {
  ad::Tape t;
  ad::Var x = t.param("x", Matrix{{1, 2}});
  ad::Var loss = ad::sum(ad::square(x));
  EXPECT_EQ(loss.scalar(), 5.0);
  t.backward(loss);
  EXPECT_EQ(t.gradient().at("x"), (Matrix{{2, 4}}));
}

TEST(AutodiffTest, SoftmaxCrossEntropyAtZeroLogits) {
  ad::Tape t;
  ad::Var z = t.param("z", Matrix{{0, 0}});
  const std::vector<int> y{0};
  ad::Var loss = ad::sum(ad::softmax_cross_entropy(z, y));
  EXPECT_NEAR(loss.scalar(), std::log(2.0), 1e-15);
  t.backward(loss);
  const Matrix g = t.gradient().at("z");
  EXPECT_NEAR(g(0, 0), -0.5, 1e-15);
  EXPECT_NEAR(g(0, 1), 0.5, 1e-15);
}

TEST(AutodiffTest, SoftmaxCrossEntropyRejectsBadLabel) {
  ad::Tape t;
  ad::Var z = t.param("z", Matrix{{0, 0}});
  const std::vector<int> y{2};
  EXPECT_THROW(ad::softmax_cross_entropy(z, y), std::out_of_range);
  const std::vector<int> neg{-1};
  EXPECT_THROW(ad::softmax_cross_entropy(z, neg), std::out_of_range);
}

TEST(AutodiffTest, SoftmaxCrossEntropyIsStableForLargeLogits) {
  ad::Tape t;
  ad::Var z = t.param("z", Matrix{{1000, -1000}, {-1000, 1000}});
  const std::vector<int> y{1, 1};
  ad::Var loss = ad::sum(ad::softmax_cross_entropy(z, y));
  EXPECT_NEAR(loss.scalar(), 2000.0, 1e-9);
  t.backward(loss);
  EXPECT_TRUE(t.gradient().at("z").all_finite());
}

TEST(AutodiffTest, ShapeMismatchThrows) {
  ad::Tape t;
  ad::Var a = t.param("a", Matrix(2, 3)), b = t.param("b", Matrix(2, 2));
  EXPECT_THROW(ad::matmul(a, b), std::invalid_argument);
  EXPECT_THROW(ad::add(a, b), std::invalid_argument);
  EXPECT_THROW(ad::hadamard(a, b), std::invalid_argument);
}

TEST(AutodiffTest, DuplicateParameterRejected) {
  ad::Tape t;
  t.param("w", Matrix(1, 1));
  EXPECT_THROW(t.param("w", Matrix(1, 1)), std::invalid_argument);
}

TEST(AutodiffTest, BackwardNeedsScalarRoot) {
  ad::Tape t;
  ad::Var x = t.param("x", Matrix(2, 2, 1.0));
  EXPECT_THROW(t.backward(ad::square(x)), std::invalid_argument);
}

TEST(AutodiffTest, OperandsFromDifferentTapesRejected) {
  ad::Tape t, u;
  ad::Var a = t.param("a", Matrix(1, 1)), b = u.param("b", Matrix(1, 1));
  EXPECT_THROW(ad::add(a, b), std::invalid_argument);
}

TEST(AutodiffTest, MatmulChainMatchesFiniteDifferences) {
  const Matrix b = random_matrix(4, 3, 2), c = random_matrix(3, 2, 3);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Matrix x = random_matrix(5, 4, 10 + seed);
    auto build = [&](ad::Var v) {
      ad::Tape& t = *v.tape;
      return ad::sum(ad::square(ad::matmul(ad::matmul(v, t.constant(b)), t.constant(c))));
    };
    EXPECT_LT(unary_check(build, x, 1e-4), 1e-4);
  }
}

TEST(AutodiffTest, EveryPrimitiveMatchesFiniteDifferences) {
  const Matrix x = random_matrix(4, 3, 42);
  const Matrix w = random_matrix(3, 3, 43);
  const Matrix row = random_matrix(1, 3, 44);
  const std::vector<int> labels{0, 2, 1, 2};
  const std::vector<std::function<ad::Var(ad::Var)>> builders{
      [&](ad::Var v) { return ad::sum(ad::hadamard(ad::matmul(v, v.tape->constant(w)), v)); },
      [&](ad::Var v) { return ad::sum(ad::square(ad::add(v, ad::scale(v, 0.3)))); },
      [&](ad::Var v) { return ad::sum(ad::square(ad::sub(v, v.tape->constant(Matrix(4, 3, 0.25))))); },
      [&](ad::Var v) { return ad::sum(ad::square(ad::add_row(v, v.tape->constant(row)))); },
      [&](ad::Var v) { return ad::sum(ad::square(ad::tanh(v))); },
      [&](ad::Var v) { return ad::sum(ad::hadamard(ad::relu(v), v)); },
      [&](ad::Var v) { return ad::sum(ad::square(ad::row_sum(v))); },
      [&](ad::Var v) { return ad::sum(ad::square(ad::center_columns(v))); },
      [&](ad::Var v) { return ad::sum(ad::hadamard(ad::softmax_rows(v), v)); },
      [&](ad::Var v) { return ad::sum(ad::softmax_cross_entropy(v, labels)); },
  };
  for (std::size_t i = 0; i < builders.size(); ++i)
    EXPECT_LT(unary_check(builders[i], x), 1e-4) << "builder " << i;
}

TEST(AutodiffTest, BackwardIsIdempotent) {
  ad::Tape t;
  ad::Var x = t.param("x", random_matrix(3, 3, 1));
  ad::Var loss = ad::sum(ad::square(ad::tanh(ad::matmul(x, x))));
  t.backward(loss);
  const Matrix first = t.gradient().at("x");
  t.backward(loss);
  EXPECT_EQ(t.gradient().at("x"), first);
}

TEST(AutodiffTest, GradientBlocksMatchParameterShapes) {
  ad::Tape t;
  ad::Var a = t.param("a", Matrix(2, 3, 0.5)), b = t.param("b", Matrix(3, 1, 0.25));
  t.backward(ad::sum(ad::matmul(a, b)));
  const auto g = t.gradient();
  EXPECT_TRUE(g.at("a").same_shape(a.value()));
  EXPECT_TRUE(g.at("b").same_shape(b.value()));
}

TEST(CustomOpTest, TraceWithIdentityBackward) {
  const auto tr = ad::register_custom(
      "trace", [](const Matrix& m) { return m.trace(); },
      [](const Matrix& m) { return Matrix::identity(m.rows()); });
  ad::Tape t;
  ad::Var a = t.param("a", random_matrix(4, 4, 3));
  ad::Var loss = tr(a);
  EXPECT_DOUBLE_EQ(loss.scalar(), a.value().trace());
  t.backward(loss);
  EXPECT_EQ(t.gradient().at("a"), Matrix::identity(4));
}

TEST(CustomOpTest, ComposesWithPrimitives) {
  const auto tr = ad::register_custom(
      "trace", [](const Matrix& m) { return m.trace(); },
      [](const Matrix& m) { return Matrix::identity(m.rows()); });
  const Matrix x = random_matrix(3, 3, 8);
  auto build = [&](ad::Var v) { return ad::scale(tr(ad::matmul(v, v)), 2.0); };
  EXPECT_LT(unary_check(build, x), 1e-6);
}

TEST(CustomOpTest, RenyiEntropyMatchesFiniteDifferences) {
  const auto op = ims::renyi_entropy_op(1.01);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const Matrix a = random_npd(8, seed);
    ad::Tape t;
    ad::Var v = t.param("a", a);
    t.backward(op(v));
    const Matrix analytic = t.gradient().at("a");
    // Differentiate the unnormalized extension S(A) on symmetric directions
    // by perturbing (i,j) and (j,i) together: the result is 2·G_ij off the
    // diagonal.
    const Matrix numeric = ims::testing::symmetric_difference(
        [](const Matrix& m) {
          const auto eig = ims::sym_eig(m);
          double s = 0.0;
          for (double l : eig.values) s += std::pow(std::max(l, 0.0), 1.01);
          return std::log2(s) / (1.0 - 1.01);
        },
        a, 1e-7);
    Matrix expected = analytic;
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j)
        if (i != j) expected(i, j) *= 2.0;
    EXPECT_LT(relative_error(expected, numeric), 1e-3);
  }
}

TEST(CustomOpTest, WrongBackwardShapeFailsAtBackwardTime) {
  const auto bad = ad::register_custom(
      "bad", [](const Matrix& m) { return m.sum(); }, [](const Matrix&) { return Matrix(1, 1, 1.0); });
  ad::Tape t;
  ad::Var a = t.param("a", Matrix(2, 2, 1.0));
  ad::Var loss = bad(a);
  EXPECT_DOUBLE_EQ(loss.scalar(), 4.0);
  EXPECT_THROW(t.backward(loss), std::logic_error);
}

TEST(GradientCheckTest, QuadraticIsExact) {
  const Matrix q = random_matrix(3, 3, 4);
  ad::LossBuilder build = [&](ad::Tape& t, const std::map<std::string, ad::Var>& p) {
    ad::Var x = p.at("x");
    return ad::sum(ad::hadamard(ad::matmul(x, t.constant(q)), x));
  };
  const auto report = ad::gradient_check(build, {{"x", random_matrix(2, 3, 5)}}, 1e-3, 1e-8);
  EXPECT_TRUE(report.passed) << report.max_relative_error;
  EXPECT_LT(report.max_relative_error, 1e-8);
  ASSERT_EQ(report.blocks.size(), 1u);
  EXPECT_EQ(report.blocks[0].name, "x");
}

TEST(GradientCheckTest, TwoLayerMlpCrossEntropy) {
  const Matrix x = random_matrix(16, 5, 6);
  std::vector<int> y(16);
  for (int i = 0; i < 16; ++i) y[i] = i % 3;
  ad::LossBuilder build = [&](ad::Tape& t, const std::map<std::string, ad::Var>& p) {
    ad::Var h = ad::tanh(ad::add_row(ad::matmul(t.constant(x), p.at("W0")), p.at("b0")));
    ad::Var z = ad::add_row(ad::matmul(h, p.at("W1")), p.at("b1"));
    return ad::scale(ad::sum(ad::softmax_cross_entropy(z, y)), 1.0 / 16.0);
  };
  const ad::ParamSet params{{"W0", random_matrix(5, 8, 7, 0.5)},
                            {"b0", random_matrix(1, 8, 8, 0.1)},
                            {"W1", random_matrix(8, 3, 9, 0.5)},
                            {"b1", random_matrix(1, 3, 10, 0.1)}};
  const auto report = ad::gradient_check(build, params, 1e-5, 1e-4);
  EXPECT_TRUE(report.passed) << report.max_relative_error;
  EXPECT_EQ(report.blocks.size(), 4u);
}

TEST(GradientCheckTest, ReportsFailureForWrongGradient) {
  const auto wrong = ad::register_custom(
      "wrong", [](const Matrix& m) { return m.sum(); }, [](const Matrix& m) { return m * 0.0; });
  ad::LossBuilder build = [&](ad::Tape&, const std::map<std::string, ad::Var>& p) {
    return wrong(p.at("x"));
  };
  const auto report = ad::gradient_check(build, {{"x", Matrix(2, 2, 1.0)}}, 1e-4, 1e-4);
  EXPECT_FALSE(report.passed);
  EXPECT_NEAR(report.max_relative_error, 1.0, 1e-9);
}

TEST(AutodiffTest, DeterministicAcrossTapes) {
  const Matrix x = random_matrix(6, 4, 77);
  auto run = [&] {
    ad::Tape t;
    ad::Var v = t.param("x", x);
    t.backward(ad::sum(ad::square(ad::tanh(ad::matmul(v, ad::relu(v.tape->constant(x.transpose())))))));
    return t.gradient().at("x");
  };
  EXPECT_EQ(run(), run());
}
