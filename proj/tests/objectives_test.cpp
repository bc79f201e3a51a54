#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "ims/environments.hpp"
#include "ims/objectives.hpp"
#include "test_support.hpp"

namespace ad = ims::ad;
using ims::Matrix;
using ims::TrainConfig;
using ims::testing::random_matrix;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<int> cyclic_labels(std::size_t n, int classes) {
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(i % classes);
  return y;
}

Matrix random_memberships(std::size_t n, std::size_t k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Matrix g(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t l = 0; l < k; ++l) s += g(i, l) = u(rng);
    for (std::size_t l = 0; l < k; ++l) g(i, l) /= s;
  }
  return g;
}

// Weighted mean CE of logits scaled by w, computed without the tape.
double weighted_ce(const Matrix& logits, const std::vector<int>& y, const std::vector<double>& wts, double w) {
  double num = 0.0, mass = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    double mx = -INFINITY;
    for (std::size_t c = 0; c < logits.cols(); ++c) mx = std::max(mx, w * logits(i, c));
    double z = 0.0;
    for (std::size_t c = 0; c < logits.cols(); ++c) z += std::exp(w * logits(i, c) - mx);
    num += wts[i] * (mx + std::log(z) - w * logits(i, static_cast<std::size_t>(y[i])));
    mass += wts[i];
  }
  return num / mass;
}

// Two-layer tanh MLP on a tape; the hidden layer is the representation.
struct TinyNet {
  Matrix x;
  std::vector<int> y;
  Matrix gamma;

  ims::BatchView view(ad::Tape& t, const std::map<std::string, ad::Var>& p) const {
    ad::Var h = ad::tanh(ad::add_row(ad::matmul(t.constant(x), p.at("W0")), p.at("b0")));
    ad::Var z = ad::add_row(ad::matmul(h, p.at("W1")), p.at("b1"));
    return ims::BatchView{z, h, y, &gamma};
  }
};

ad::ParamSet tiny_params(std::size_t d, std::size_t h, std::size_t c, std::uint64_t seed) {
  return {{"W0", random_matrix(d, h, seed, 0.6)},
          {"b0", random_matrix(1, h, seed + 1, 0.1)},
          {"W1", random_matrix(h, c, seed + 2, 0.6)},
          {"b1", random_matrix(1, c, seed + 3, 0.1)}};
}

}  // namespace

// ---------------------------------------------------------------------------
// Environment risks

TEST(EnvRisksTest, SingleEnvironmentIsMeanLoss) {
  const std::vector<double> l{1, 2, 3, 6};
  const auto r = ims::env_risks(l, Matrix(4, 1, 1.0));
  EXPECT_DOUBLE_EQ(r.risks[0], 3.0);
  EXPECT_DOUBLE_EQ(r.masses[0], 4.0);
}

TEST(EnvRisksTest, OneHotGivesPlainMeans) {
  const std::vector<double> l{1, 2, 3, 6};
  const auto r = ims::env_risks(l, ims::one_hot({0, 1, 0, 1}, 2));
  EXPECT_DOUBLE_EQ(r.risks[0], 2.0);
  EXPECT_DOUBLE_EQ(r.risks[1], 4.0);
}

TEST(EnvRisksTest, UniformMembershipsGiveGlobalMean) {
  const std::vector<double> l{0.5, 1.5, 2.5, 3.5, 4.5};
  const auto r = ims::env_risks(l, Matrix(5, 3, 1.0 / 3.0));
  for (double v : r.risks) EXPECT_NEAR(v, 2.5, 1e-14);
  for (double m : r.masses) EXPECT_NEAR(m, 5.0 / 3.0, 1e-14);
}

TEST(EnvRisksTest, EmptyEnvironmentsDroppedOrRejected) {
  const std::vector<double> l{1, 2};
  const auto r = ims::env_risks(l, Matrix{{1, 0}, {1, 0}});
  EXPECT_TRUE(r.active[0]);
  EXPECT_FALSE(r.active[1]);
  EXPECT_THROW(ims::env_risks(l, Matrix(2, 2, 0.0)), std::invalid_argument);
  EXPECT_THROW(ims::environment_weights(Matrix(2, 2, 0.0)), std::invalid_argument);
  EXPECT_EQ(ims::environment_weights(Matrix{{1, 0}, {1, 0}}).rows(), 1u);
}

TEST(EnvRisksTest, TapeRisksMatchNumeric) {
  const Matrix z = random_matrix(12, 3, 4);
  const auto y = cyclic_labels(12, 3);
  const Matrix gamma = random_memberships(12, 4, 5);
  ad::Tape t;
  ad::Var losses = ad::softmax_cross_entropy(t.constant(z), y);
  ad::Var risks = ims::env_risks(losses, ims::environment_weights(gamma));
  const auto ref = ims::env_risks(losses.value().data(), gamma);
  for (std::size_t e = 0; e < 4; ++e) EXPECT_NEAR(risks.value()(e, 0), ref.risks[e], 1e-14);
}

// ---------------------------------------------------------------------------
// Dummy-classifier gradient and IRM penalty

TEST(DummyGradTest, ZeroLogits) {
  const std::vector<int> y{0, 1, 1};
  const std::vector<double> w{1, 1, 1};
  EXPECT_EQ(ims::dummy_grad(Matrix(3, 2), y, w), 0.0);
}

TEST(DummyGradTest, SingleSampleClosedForm) {
  const std::vector<int> y{0};
  const std::vector<double> w{1};
  const double g = ims::dummy_grad(Matrix{{1, -1}}, y, w);
  EXPECT_NEAR(g, -2.0 * (1.0 - sigmoid(2.0)), 1e-15);
  EXPECT_NEAR(g, -0.2384, 1e-4);
}

TEST(DummyGradTest, OppositeContributionsCancel) {
  // A correct and a wrong prediction pull the multiplier in opposite
  // directions; weighting each by the other's magnitude balances them.
  const Matrix z{{1, -1}, {1, -1}};
  const std::vector<int> y{0, 1};
  const auto terms = ims::dummy_grad_terms(z, y);
  ASSERT_LT(terms[0], 0.0);
  ASSERT_GT(terms[1], 0.0);
  const std::vector<double> balanced{terms[1], -terms[0]};
  EXPECT_NEAR(ims::dummy_grad(z, y, balanced), 0.0, 1e-15);
}

TEST(DummyGradTest, MatchesFiniteDifferenceOfScaledCe) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Matrix z = random_matrix(10, 3, seed, 2.0);
    const auto y = cyclic_labels(10, 3);
    std::vector<double> w(10);
    std::mt19937_64 rng(seed);
    for (double& v : w) v = std::uniform_real_distribution<double>(0.1, 1.0)(rng);
    const double h = 1e-5;
    const double fd = (weighted_ce(z, y, w, 1 + h) - weighted_ce(z, y, w, 1 - h)) / (2 * h);
    const double g = ims::dummy_grad(z, y, w);
    EXPECT_LT(std::abs(g - fd) / std::max(std::abs(fd), 1e-12), 1e-5) << "seed " << seed;
  }
}

TEST(DummyGradTest, Errors) {
  const std::vector<int> y{0, 1};
  EXPECT_THROW(ims::dummy_grad(Matrix(2, 2), y, std::vector<double>{0, 0}), std::invalid_argument);
  EXPECT_THROW(ims::dummy_grad(Matrix(2, 2), y, std::vector<double>{1, -1}), std::invalid_argument);
  EXPECT_THROW(ims::dummy_grad(Matrix(2, 2), std::vector<int>{0, 2}, std::vector<double>{1, 1}),
               std::out_of_range);
}

TEST(DummyGradTest, SoftmaxProbabilitiesShiftInvariant) {
  Matrix z = random_matrix(5, 4, 3);
  const Matrix p = ad::softmax_rows_value(z);
  for (std::size_t c = 0; c < 4; ++c) z(2, c) += 37.5;
  const Matrix q = ad::softmax_rows_value(z);
  EXPECT_LT((p - q).max_abs(), 1e-14);
}

TEST(DummyGradTest, TapeDummyGradsMatchNumeric) {
  const Matrix z = random_matrix(16, 3, 9);
  const auto y = cyclic_labels(16, 3);
  const Matrix gamma = random_memberships(16, 3, 10);
  ad::Tape t;
  ad::Var g = ims::dummy_grads(t.constant(z), y, ims::environment_weights(gamma));
  for (std::size_t e = 0; e < 3; ++e) {
    std::vector<double> w(16);
    for (std::size_t i = 0; i < 16; ++i) w[i] = gamma(i, e);
    EXPECT_NEAR(g.value()(e, 0), ims::dummy_grad(z, y, w), 1e-14);
  }
}

TEST(IrmPenaltyTest, Examples) {
  ims::EnvRiskSet r;
  r.dummy_grads = {0.0, 0.0};
  EXPECT_EQ(ims::irm_penalty(r), 0.0);
  r.dummy_grads = {0.5, -0.5};
  EXPECT_DOUBLE_EQ(ims::irm_penalty(r), 0.5);
  r.dummy_grads = {0.3};
  EXPECT_DOUBLE_EQ(ims::irm_penalty(r), 0.09);
  r.dummy_grads = {0.3, 7.0};
  r.active = {true, false};
  EXPECT_DOUBLE_EQ(ims::irm_penalty(r), 0.09);
}

TEST(IrmPenaltyTest, NonNegativeOnRandomBatches) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix z = random_matrix(20, 2, seed, 3.0);
    const auto y = cyclic_labels(20, 2);
    const Matrix gamma = random_memberships(20, 5, seed);
    std::vector<double> losses(20, 1.0);
    auto r = ims::env_risks(losses, gamma);
    ims::attach_dummy_grads(r, z, y, gamma);
    EXPECT_GE(ims::irm_penalty(r), 0.0);
  }
}

// ---------------------------------------------------------------------------
// Compression terms

TEST(IbTermTest, IdenticalRepresentationsGiveZero) {
  ad::Tape t;
  const auto ib = ims::ib_term(t.param("phi", Matrix(16, 4, 0.3)));
  EXPECT_TRUE(ib.degenerate);
  EXPECT_EQ(ib.bits.scalar(), 0.0);
}

TEST(IbTermTest, SeparatedRepresentationsNearLogN) {
  ad::Tape t;
  Matrix phi(16, 16);
  for (std::size_t i = 0; i < 16; ++i) phi(i, i) = 10.0;
  const auto ib = ims::ib_term(t.param("phi", phi), 1.01, 0.5);
  EXPECT_NEAR(ib.bits.scalar(), 4.0, 1e-6);
}

TEST(IbTermTest, DuplicatedBatchBoundedByHalfSize) {
  const std::size_t m = 10;
  const Matrix base = random_matrix(m, 3, 6);
  Matrix phi(2 * m, 3);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t c = 0; c < 3; ++c) phi(i, c) = phi(i + m, c) = base(i, c);
  ad::Tape t;
  EXPECT_LE(ims::ib_term(t.param("phi", phi)).bits.scalar(), std::log2(double(m)) + 1e-6);
}

TEST(IbTermTest, PermutationInvariant) {
  const Matrix phi = random_matrix(20, 4, 2);
  Matrix rev(20, 4);
  for (std::size_t i = 0; i < 20; ++i)
    for (std::size_t c = 0; c < 4; ++c) rev(i, c) = phi(19 - i, c);
  ad::Tape t;
  EXPECT_NEAR(ims::ib_term(t.param("a", phi)).bits.scalar(), ims::ib_term(t.param("b", rev)).bits.scalar(),
              1e-10);
}

TEST(IbTermTest, SmallBatchRejected) {
  ad::Tape t;
  EXPECT_THROW(ims::ib_term(t.param("phi", random_matrix(8, 2, 1))), std::invalid_argument);
}

TEST(VarianceTermTest, ConstantIsZeroAndMatchesDefinition) {
  ad::Tape t;
  EXPECT_EQ(ims::variance_term(t.param("c", Matrix(10, 3, 2.0))).scalar(), 0.0);
  const Matrix x = random_matrix(10, 3, 4);
  double expected = 0.0;
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < 10; ++i) m += x(i, c) / 10.0;
    for (std::size_t i = 0; i < 10; ++i) v += (x(i, c) - m) * (x(i, c) - m) / 10.0;
    expected += v / 3.0;
  }
  EXPECT_NEAR(ims::variance_term(t.param("x", x)).scalar(), expected, 1e-14);
}

// ---------------------------------------------------------------------------
// Composed losses

TEST(ImsLossTest, ZeroWeightsReduceToErmBitwise) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    TinyNet net{random_matrix(16, 4, seed), cyclic_labels(16, 2), random_memberships(16, 3, seed)};
    const auto params = tiny_params(4, 6, 2, seed + 10);
    TrainConfig cfg;
    cfg.eta = 0.0;
    cfg.beta = 0.0;
    auto ims_build = [&](ad::Tape& t, const std::map<std::string, ad::Var>& p) {
      return ims::ims_loss(net.view(t, p), cfg).total;
    };
    auto erm_build = [&](ad::Tape& t, const std::map<std::string, ad::Var>& p) {
      return ims::erm_loss(net.view(t, p));
    };
    const double a = ad::evaluate_loss(ims_build, params), b = ad::evaluate_loss(erm_build, params);
    EXPECT_EQ(std::memcmp(&a, &b, sizeof a), 0);
    const auto ga = ad::tape_gradient(ims_build, params), gb = ad::tape_gradient(erm_build, params);
    for (const auto& [name, m] : ga.blocks) EXPECT_EQ(m, gb.at(name)) << name;
  }
}

TEST(ImsLossTest, FullLossGradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    TinyNet net{random_matrix(16, 4, 100 + seed), cyclic_labels(16, 2), random_memberships(16, 3, seed)};
    TrainConfig cfg;  // η = 0.005, β = 0.05
    cfg.k = 3;
    auto build = [&](ad::Tape& t, const std::map<std::string, ad::Var>& p) {
      return ims::ims_loss(net.view(t, p), cfg).total;
    };
    const auto report = ad::gradient_check(build, tiny_params(4, 6, 2, seed), 1e-6, 1e-3);
    EXPECT_TRUE(report.passed) << "seed " << seed << ": " << report.max_relative_error;
  }
}

TEST(ImsLossTest, DecompositionSumsToTotal) {
  TinyNet net{random_matrix(20, 3, 1), cyclic_labels(20, 3), random_memberships(20, 5, 2)};
  TrainConfig cfg;
  cfg.eta = 0.7;
  cfg.beta = 0.3;
  ad::Tape t;
  std::map<std::string, ad::Var> vars;
  for (const auto& [n, m] : tiny_params(3, 5, 3, 4)) vars.emplace(n, t.param(n, m));
  const auto terms = ims::ims_loss(net.view(t, vars), cfg);
  EXPECT_NEAR(terms.total.scalar(),
              terms.ce_value() + cfg.eta * terms.penalty_value() + cfg.beta * terms.compression_value(), 1e-10);
  EXPECT_GT(terms.compression_value(), 0.0);
}

TEST(ImsLossTest, IdenticalRowsCollapseEntropyTerm) {
  Matrix x(16, 4);
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t c = 0; c < 4; ++c) x(i, c) = 0.1 * (c + 1);
  TinyNet net{x, cyclic_labels(16, 2), random_memberships(16, 3, 3)};
  TrainConfig cfg;
  ad::Tape t;
  std::map<std::string, ad::Var> vars;
  for (const auto& [n, m] : tiny_params(4, 6, 2, 8)) vars.emplace(n, t.param(n, m));
  const auto terms = ims::ims_loss(net.view(t, vars), cfg);
  EXPECT_TRUE(terms.degenerate_entropy);
  EXPECT_NEAR(terms.total.scalar(), terms.ce_value() + cfg.eta * terms.penalty_value(), 1e-12);
}

TEST(ImsLossTest, MethodSelectorZeroesTerms) {
  TrainConfig cfg;
  cfg.method = ims::Method::Erm;
  EXPECT_EQ(cfg.effective_eta(), 0.0);
  EXPECT_EQ(cfg.effective_beta(), 0.0);
  cfg.method = ims::Method::Irm;
  EXPECT_EQ(cfg.effective_eta(), cfg.eta);
  EXPECT_EQ(cfg.effective_beta(), 0.0);
  cfg.method = ims::Method::Ib;
  EXPECT_EQ(cfg.effective_eta(), 0.0);
  EXPECT_EQ(cfg.effective_beta(), cfg.beta);
  cfg.method = ims::Method::Ims;
  EXPECT_EQ(cfg.effective_eta(), cfg.eta);
  EXPECT_EQ(cfg.effective_beta(), cfg.beta);
}

TEST(ImsLossTest, NormalizeByKDividesCe) {
  TinyNet net{random_matrix(16, 3, 1), cyclic_labels(16, 2), random_memberships(16, 4, 2)};
  ad::Tape t;
  std::map<std::string, ad::Var> vars;
  for (const auto& [n, m] : tiny_params(3, 4, 2, 3)) vars.emplace(n, t.param(n, m));
  const auto view = net.view(t, vars);
  EXPECT_NEAR(ims::erm_loss(view, true).scalar() * 4.0, ims::erm_loss(view, false).scalar(), 1e-12);
}

TEST(VarianceLossTest, ReducesToErmAndMatchesFiniteDifferences) {
  TinyNet net{random_matrix(12, 3, 5), cyclic_labels(12, 2), random_memberships(12, 2, 6)};
  TrainConfig cfg;
  cfg.eta = 0.0;
  cfg.beta = 0.0;
  auto params = tiny_params(3, 4, 2, 7);
  const double a = ad::evaluate_loss(
      [&](ad::Tape& t, const auto& p) { return ims::ib_irm_variance_loss(net.view(t, p), cfg).total; }, params);
  const double b = ad::evaluate_loss([&](ad::Tape& t, const auto& p) { return ims::erm_loss(net.view(t, p)); },
                                     params);
  EXPECT_EQ(a, b);
  cfg.eta = 0.1;
  cfg.beta = 0.5;
  const auto report = ad::gradient_check(
      [&](ad::Tape& t, const auto& p) { return ims::ib_irm_variance_loss(net.view(t, p), cfg).total; }, params,
      1e-5, 1e-4);
  EXPECT_TRUE(report.passed) << report.max_relative_error;
}

TEST(TrainConfigTest, Validation) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.batch_size = 8;
  EXPECT_THROW(cfg.validate(), ims::UsageError);
  cfg.method = ims::Method::Erm;
  EXPECT_NO_THROW(cfg.validate());
  cfg = TrainConfig{};
  cfg.eta = -1;
  EXPECT_THROW(cfg.validate(), ims::UsageError);
  cfg = TrainConfig{};
  cfg.alpha = 1.0;
  EXPECT_THROW(cfg.validate(), ims::UsageError);
}

TEST(TrainConfigTest, MethodNames) {
  for (auto m : {ims::Method::Erm, ims::Method::Irm, ims::Method::Ib, ims::Method::Ims, ims::Method::IbIrmVar})
    EXPECT_EQ(ims::parse_method(ims::method_name(m)), m);
  EXPECT_THROW(ims::parse_method("sgd"), ims::UsageError);
}
