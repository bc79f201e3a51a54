#ifndef IMS_INFOTHEORY_HPP
#define IMS_INFOTHEORY_HPP

// Matrix-based Rényi α-order entropy and the estimators built on it, plus
// the kernel two-sample (MMD) audit used to quantify train/test shift.
//
// All entropies are in bits. Gram matrices use a Gaussian RBF kernel for
// continuous features and an indicator kernel for discrete labels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ims/autodiff.hpp"
#include "ims/common.hpp"
#include "ims/dataset.hpp"
#include "ims/numerics.hpp"

namespace ims {

inline constexpr double kDefaultAlpha = 1.01;

struct KernelSpec {
  double sigma = 1.0;

  explicit KernelSpec(double s) : sigma(s) {
    if (!(s > 0.0) || !std::isfinite(s))
      throw std::invalid_argument("KernelSpec: bandwidth must be positive and finite");
  }
};

namespace detail {

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return s;
}

inline Matrix pairwise_squared_distances(const Matrix& x) {
  const std::size_t n = x.rows();
  Matrix d(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = squared_distance(x.row(i), x.row(j));
      d(i, j) = v;
      d(j, i) = v;
    }
  return d;
}

}  // namespace detail

// Which pairwise distances the median heuristic selected: the median
// distance is Σ weight·‖x_p − x_q‖ over these pairs (one pair for an odd
// count, two at weight ½ for an even count).
struct MedianPairs {
  double median = 0.0;
  std::vector<std::size_t> first, second;
  std::vector<double> weight;
};

namespace detail {

inline MedianPairs median_distance_pairs(const Matrix& features, bool skip_zero) {
  const std::size_t n = features.rows();
  struct Pair {
    double d;
    std::size_t p, q;
  };
  std::vector<Pair> pairs;
  pairs.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = std::sqrt(squared_distance(features.row(i), features.row(j)));
      if (!skip_zero || d > 0.0) pairs.push_back({d, i, j});
    }
  MedianPairs out;
  if (pairs.empty()) return out;
  auto less = [](const Pair& a, const Pair& b) {
    return a.d < b.d || (a.d == b.d && (a.p < b.p || (a.p == b.p && a.q < b.q)));
  };
  const std::size_t m = pairs.size() / 2;
  std::nth_element(pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(m), pairs.end(), less);
  const Pair hi = pairs[m];
  if (pairs.size() % 2 == 1) {
    out.median = hi.d;
    out.first = {hi.p};
    out.second = {hi.q};
    out.weight = {1.0};
    return out;
  }
  const Pair lo = *std::max_element(pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(m), less);
  out.median = 0.5 * (lo.d + hi.d);
  out.first = {lo.p, hi.p};
  out.second = {lo.q, hi.q};
  out.weight = {0.5, 0.5};
  return out;
}

}  // namespace detail

// Median of the pairwise Euclidean distances and the pairs that define it.
// When more than half of the pairs coincide, the median of the non-zero
// distances is used instead.
inline MedianPairs median_pairs(const Matrix& features) {
  const std::size_t n = features.rows();
  if (n < 2) throw DegenerateInput("median_bandwidth: need at least two rows");
  if (!features.all_finite()) throw std::invalid_argument("median_bandwidth: non-finite features");
  MedianPairs mp = detail::median_distance_pairs(features, false);
  if (mp.median > 0.0) return mp;
  mp = detail::median_distance_pairs(features, true);
  if (mp.weight.empty())
    throw DegenerateInput("median_bandwidth: all rows identical, bandwidth degenerate");
  return mp;
}

// Median pairwise Euclidean distance divided by √2.
inline double median_bandwidth(const Matrix& features) {
  return median_pairs(features).median / std::sqrt(2.0);
}

inline Matrix gram_from_squared_distances(const Matrix& sq, const KernelSpec& kernel) {
  const double inv = 1.0 / (2.0 * kernel.sigma * kernel.sigma);
  Matrix k(sq.rows(), sq.cols());
  for (std::size_t i = 0; i < sq.size(); ++i) k.data()[i] = std::exp(-sq.data()[i] * inv);
  return k;
}

inline Matrix gram(const Matrix& features, const KernelSpec& kernel) {
  if (features.rows() == 0) throw std::invalid_argument("gram: empty feature matrix");
  if (!features.all_finite()) throw std::invalid_argument("gram: non-finite features");
  return gram_from_squared_distances(detail::pairwise_squared_distances(features), kernel);
}

// K_ij = 1 when labels agree, 0 otherwise.
inline Matrix indicator_gram(std::span<const int> labels) {
  const std::size_t n = labels.size();
  if (n == 0) throw std::invalid_argument("indicator_gram: no labels");
  Matrix k(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) k(i, j) = labels[i] == labels[j] ? 1.0 : 0.0;
  return k;
}

// Symmetric, unit-trace, positive semidefinite.
class NpdMatrix {
 public:
  static constexpr double kTraceTolerance = 1e-9;
  static constexpr double kSymmetryTolerance = 1e-12;
  static constexpr double kMinEigenvalue = -1e-9;

  explicit NpdMatrix(Matrix a) : a_(std::move(a)) {
    if (!a_.is_square() || a_.rows() == 0)
      throw std::invalid_argument("NpdMatrix: matrix must be square and non-empty");
    if (!a_.all_finite()) throw std::invalid_argument("NpdMatrix: non-finite entries");
    if (std::abs(a_.trace() - 1.0) > kTraceTolerance)
      throw std::invalid_argument("NpdMatrix: trace differs from 1");
    for (std::size_t i = 0; i < a_.rows(); ++i)
      for (std::size_t j = i + 1; j < a_.cols(); ++j)
        if (std::abs(a_(i, j) - a_(j, i)) > kSymmetryTolerance)
          throw std::invalid_argument("NpdMatrix: matrix is not symmetric");
  }

  const Matrix& matrix() const { return a_; }
  std::size_t size() const { return a_.rows(); }

 private:
  Matrix a_;
};

// A_ij = K_ij / (n·√(K_ii·K_jj)).
inline NpdMatrix normalize_gram(const Matrix& k) {
  if (!k.is_square() || k.rows() == 0)
    throw std::invalid_argument("normalize_gram: Gram matrix must be square and non-empty");
  const std::size_t n = k.rows();
  std::vector<double> root(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(k(i, i) > 0.0)) throw std::invalid_argument("normalize_gram: zero diagonal entry");
    root[i] = std::sqrt(k(i, i));
  }
  Matrix a(n, n);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a(i, j) = inv_n * k(i, j) / (root[i] * root[j]);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double avg = 0.5 * (a(i, j) + a(j, i));
      a(i, j) = avg;
      a(j, i) = avg;
    }
  return NpdMatrix(std::move(a));
}

namespace detail {

inline void require_alpha(double alpha) {
  if (!(alpha > 0.0) || !std::isfinite(alpha))
    throw std::invalid_argument("renyi entropy: alpha must be positive");
  if (alpha == 1.0) throw std::invalid_argument("renyi entropy: alpha = 1 is not supported");
}

inline void require_psd(const EigenDecomposition& eig) {
  if (!eig.values.empty() && eig.values.back() < NpdMatrix::kMinEigenvalue)
    throw std::invalid_argument("NpdMatrix: smallest eigenvalue below -1e-9");
}

inline double trace_power(const EigenDecomposition& eig, double alpha) {
  double s = 0.0;
  for (double l : eig.values) {
    const double c = clamp_eigenvalue(l);
    if (c > 0.0) s += std::pow(c, alpha);
  }
  return s;
}

}  // namespace detail

// Spectrum and derived quantities shared by the entropy value and gradient.
struct RenyiEvaluation {
  EigenDecomposition eig;
  double trace_power = 0.0;  // Σ λ^α over clamped eigenvalues
  double entropy = 0.0;      // bits
};

inline RenyiEvaluation evaluate_renyi(const NpdMatrix& a, double alpha) {
  detail::require_alpha(alpha);
  RenyiEvaluation r;
  r.eig = sym_eig(a.matrix());
  detail::require_psd(r.eig);
  r.trace_power = detail::trace_power(r.eig, alpha);
  if (!(r.trace_power > 0.0)) throw DegenerateInput("renyi entropy: spectrum vanished");
  r.entropy = std::log2(r.trace_power) / (1.0 - alpha);
  return r;
}

// S_α(A) = log₂(Σ λᵢ^α) / (1 − α), in bits.
inline double renyi_entropy(const NpdMatrix& a, double alpha = kDefaultAlpha) {
  return evaluate_renyi(a, alpha).entropy;
}

// ∂S/∂A = α / ((1−α)·ln 2·tr(A^α)) · A^{α−1}, with zero eigenvalues mapped to 0.
inline Matrix renyi_entropy_gradient(const RenyiEvaluation& r, double alpha) {
  if (!(r.trace_power > 0.0))
    throw DegenerateInput("renyi entropy gradient: tr(A^alpha) is zero, degenerate batch");
  const double c = alpha / ((1.0 - alpha) * std::log(2.0) * r.trace_power);
  return spectral_apply(r.eig, [alpha, c](double l) {
    const double v = clamp_eigenvalue(l);
    return v > 0.0 ? c * std::pow(v, alpha - 1.0) : 0.0;
  });
}

inline Matrix renyi_entropy_backward(const NpdMatrix& a, double alpha = kDefaultAlpha) {
  detail::require_alpha(alpha);
  RenyiEvaluation r;
  r.eig = sym_eig(a.matrix());
  detail::require_psd(r.eig);
  r.trace_power = detail::trace_power(r.eig, alpha);
  return renyi_entropy_gradient(r, alpha);
}

// Custom tape operation over an n×n NPD matrix input.
inline ad::CustomOp renyi_entropy_op(double alpha = kDefaultAlpha) {
  return ad::register_custom(
      "renyi_entropy",
      [alpha](const Matrix& a) { return renyi_entropy(NpdMatrix(a), alpha); },
      [alpha](const Matrix& a) { return renyi_entropy_backward(NpdMatrix(a), alpha); });
}

// Entropy of a batch of representations together with dS/d(features).
struct FeatureEntropy {
  double bits = 0.0;
  Matrix gradient;  // n × d
  double sigma = 0.0;
  bool degenerate = false;
};

// The Gaussian Gram uses bandwidth `sigma` when given (held constant) and
// otherwise the median heuristic σ = m/√2, whose dependence on the features
// through the selected median pair(s) is part of the gradient. The chain
// runs S → A → K → X with ∂A_ij/∂K_ij = 1/n since K_ii = 1.
inline FeatureEntropy feature_entropy(const Matrix& x, double alpha = kDefaultAlpha,
                                      std::optional<double> sigma = std::nullopt) {
  detail::require_alpha(alpha);
  const std::size_t n = x.rows(), d = x.cols();
  FeatureEntropy out;
  out.gradient = Matrix(n, d);
  if (!x.all_finite()) throw std::invalid_argument("feature_entropy: non-finite features");
  std::optional<MedianPairs> median;
  if (!sigma) {
    try {
      median = median_pairs(x);
    } catch (const DegenerateInput&) {
      out.degenerate = true;  // all rows identical: rank-1 Gram, zero entropy
      return out;
    }
    sigma = median->median / std::sqrt(2.0);
  }
  out.sigma = *sigma;
  const Matrix sq = detail::pairwise_squared_distances(x);
  const Matrix k = gram_from_squared_distances(sq, KernelSpec(*sigma));
  const NpdMatrix a = normalize_gram(k);
  const RenyiEvaluation r = evaluate_renyi(a, alpha);
  out.bits = r.entropy;

  const Matrix g = renyi_entropy_gradient(r, alpha);
  // M = (G/n) ∘ K; with σ fixed, dS/dx_i = −(2/σ²)·Σ_j M_ij (x_i − x_j).
  const Matrix m = hadamard(g, k) * (1.0 / static_cast<double>(n));
  const Matrix mx = matmul(m, x);
  const double s2 = *sigma * *sigma;
  for (std::size_t i = 0; i < n; ++i) {
    double rs = 0.0;
    for (std::size_t j = 0; j < n; ++j) rs += m(i, j);
    for (std::size_t c = 0; c < d; ++c) out.gradient(i, c) = (-2.0 / s2) * (rs * x(i, c) - mx(i, c));
  }
  if (median) {
    // K_ij = exp(−D_ij / med²): ∂S/∂med = (2/med³)·Σ_ij M_ij D_ij, and
    // ∂med/∂x_p = w·(x_p − x_q)/‖x_p − x_q‖ for each selected pair.
    const double med = median->median;
    double dot = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) dot += m.data()[i] * sq.data()[i];
    const double ds_dmed = 2.0 * dot / (med * med * med);
    for (std::size_t t = 0; t < median->weight.size(); ++t) {
      const std::size_t p = median->first[t], q = median->second[t];
      const double dist = std::sqrt(sq(p, q));
      const double f = ds_dmed * median->weight[t] / dist;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = x(p, c) - x(q, c);
        out.gradient(p, c) += f * diff;
        out.gradient(q, c) -= f * diff;
      }
    }
  }
  return out;
}

// Tape node for S_α of a batch of representations.
inline ad::Var feature_entropy(ad::Var x, double alpha = kDefaultAlpha,
                               std::optional<double> sigma = std::nullopt) {
  FeatureEntropy fe = feature_entropy(x.value(), alpha, sigma);
  return ad::custom_scalar(x, fe.bits, std::move(fe.gradient), "renyi_entropy");
}

// (A∘B) / tr(A∘B).
inline NpdMatrix joint_npd(const NpdMatrix& a, const NpdMatrix& b) {
  if (a.size() != b.size()) throw std::invalid_argument("joint_npd: size mismatch");
  Matrix h = hadamard(a.matrix(), b.matrix());
  const double t = h.trace();
  if (!(t > 0.0)) throw DegenerateInput("joint_npd: tr(A∘B) is zero");
  h *= 1.0 / t;
  return NpdMatrix(std::move(h));
}

inline NpdMatrix joint_npd(const NpdMatrix& a, const NpdMatrix& b, const NpdMatrix& c) {
  return joint_npd(joint_npd(a, b), c);
}

// Normalized Gram of continuous features. Identical rows give the all-ones
// Gram for any bandwidth.
inline NpdMatrix feature_npd(const Matrix& x, std::optional<double> sigma = std::nullopt) {
  if (!sigma) {
    try {
      sigma = median_bandwidth(x);
    } catch (const DegenerateInput&) {
      sigma = 1.0;
    }
  }
  return normalize_gram(gram(x, KernelSpec(*sigma)));
}

inline NpdMatrix label_npd(std::span<const int> labels) {
  return normalize_gram(indicator_gram(labels));
}

// I(X;Y) = S(A) + S(B) − S(A∘B / tr).
inline double mutual_information(const NpdMatrix& ax, const NpdMatrix& ay,
                                 double alpha = kDefaultAlpha) {
  if (ax.size() != ay.size()) throw std::invalid_argument("mutual_information: row counts differ");
  return renyi_entropy(ax, alpha) + renyi_entropy(ay, alpha) -
         renyi_entropy(joint_npd(ax, ay), alpha);
}

inline double mutual_information(const Matrix& x, const Matrix& y, double alpha = kDefaultAlpha) {
  if (x.rows() != y.rows()) throw std::invalid_argument("mutual_information: row counts differ");
  return mutual_information(feature_npd(x), feature_npd(y), alpha);
}

// I(y;e|Φ) = S(y,Φ) + S(e,Φ) − S(Φ) − S(y,e,Φ). Diagnostic only.
inline double conditional_mi(std::span<const int> y, std::span<const int> env, const Matrix& phi,
                             double alpha = kDefaultAlpha) {
  if (y.size() != env.size() || y.size() != phi.rows())
    throw std::invalid_argument("conditional_mi: lengths differ");
  const NpdMatrix ay = label_npd(y);
  const NpdMatrix ae = label_npd(env);
  const NpdMatrix ap = feature_npd(phi);
  return renyi_entropy(joint_npd(ay, ap), alpha) + renyi_entropy(joint_npd(ae, ap), alpha) -
         renyi_entropy(ap, alpha) - renyi_entropy(joint_npd(ay, ae, ap), alpha);
}

// Small negative MI estimates are finite-sample noise.
inline constexpr double kNegativeMiTolerance = 1e-6;

struct ReportedMi {
  double bits = 0.0;
  bool warning = false;  // estimate was below −1e-6
};

inline ReportedMi report_mi(double estimate) {
  if (estimate < 0.0 && estimate >= -kNegativeMiTolerance) return {0.0, false};
  return {estimate, estimate < 0.0};
}

// ---------------------------------------------------------------------------
// Kernel two-sample statistics.

namespace detail {

inline Matrix stack_rows(const Matrix& x, const Matrix& y) {
  if (x.cols() != y.cols()) throw std::invalid_argument("mmd: feature dimensions differ");
  Matrix pooled(x.rows() + y.rows(), x.cols());
  std::copy(x.data().begin(), x.data().end(), pooled.data().begin());
  std::copy(y.data().begin(), y.data().end(),
            pooled.data().begin() + static_cast<std::ptrdiff_t>(x.size()));
  return pooled;
}

// Biased MMD² given a pooled Gram and a membership mask (true = first sample).
inline double mmd2_from_pooled(const Matrix& k, const std::vector<std::uint8_t>& in_x,
                               std::size_t nx) {
  const std::size_t n = k.rows();
  const std::size_t ny = n - nx;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = k.row(i);
    const bool xi = in_x[i] != 0;
    for (std::size_t j = 0; j < n; ++j) {
      const bool xj = in_x[j] != 0;
      if (xi && xj)
        sxx += row[j];
      else if (!xi && !xj)
        syy += row[j];
      else if (xi)
        sxy += row[j];
    }
  }
  const double dx = static_cast<double>(nx), dy = static_cast<double>(ny);
  const double v = sxx / (dx * dx) + syy / (dy * dy) - 2.0 * sxy / (dx * dy);
  return std::max(v, 0.0);
}

inline void require_two_samples(const Matrix& x, const Matrix& y) {
  if (x.rows() == 0 || y.rows() == 0) throw std::invalid_argument("mmd: empty input");
  if (x.rows() < 2 || y.rows() < 2) throw std::invalid_argument("mmd: need at least two rows per sample");
}

}  // namespace detail

// mean(K_xx) + mean(K_yy) − 2·mean(K_xy).
inline double mmd2_biased(const Matrix& x, const Matrix& y, const KernelSpec& kernel) {
  detail::require_two_samples(x, y);
  const Matrix k = gram(detail::stack_rows(x, y), kernel);
  std::vector<std::uint8_t> in_x(k.rows(), 0);
  std::fill(in_x.begin(), in_x.begin() + static_cast<std::ptrdiff_t>(x.rows()), 1);
  return detail::mmd2_from_pooled(k, in_x, x.rows());
}

struct PermutationTest {
  double statistic = 0.0;
  double bound = 0.0;
  std::vector<double> null_draws;  // sorted ascending
};

// Replicate r reshuffles the pooled sample with its own engine seeded from
// (seed, r), so replicates are independent tasks and results are
// bit-reproducible.
inline PermutationTest permutation_test(const Matrix& x, const Matrix& y, const KernelSpec& kernel,
                                        std::size_t n_perm, double level, std::uint64_t seed) {
  if (n_perm == 0) throw std::invalid_argument("permutation test: n_perm must be at least 1");
  if (!(level > 0.0 && level < 1.0))
    throw std::invalid_argument("permutation test: level must lie in (0, 1)");
  detail::require_two_samples(x, y);
  const Matrix k = gram(detail::stack_rows(x, y), kernel);
  const std::size_t n = k.rows();
  std::vector<std::uint8_t> mask(n, 0);
  std::fill(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(x.rows()), 1);

  PermutationTest out;
  out.statistic = detail::mmd2_from_pooled(k, mask, x.rows());
  out.null_draws.reserve(n_perm);
  std::vector<std::uint8_t> shuffled(mask);
  for (std::size_t r = 0; r < n_perm; ++r) {
    std::mt19937_64 rng(derive_seed(seed, r));
    shuffled = mask;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    out.null_draws.push_back(detail::mmd2_from_pooled(k, shuffled, x.rows()));
  }
  std::sort(out.null_draws.begin(), out.null_draws.end());
  const auto rank = static_cast<std::size_t>(std::ceil(level * static_cast<double>(n_perm)));
  out.bound = out.null_draws[std::clamp<std::size_t>(rank, 1, n_perm) - 1];
  return out;
}

// The ceil(level·n_perm)-th smallest permuted MMD².
inline double permutation_bound(const Matrix& x, const Matrix& y, const KernelSpec& kernel,
                                std::size_t n_perm, double level, std::uint64_t seed) {
  return permutation_test(x, y, kernel, n_perm, level, seed).bound;
}

struct KernelPolicy {
  // Fixed bandwidth when set; otherwise the median heuristic on each
  // class's pooled train+test rows.
  std::optional<double> fixed_sigma;

  KernelSpec for_pool(const Matrix& x, const Matrix& y) const {
    if (fixed_sigma) return KernelSpec(*fixed_sigma);
    try {
      return KernelSpec(median_bandwidth(detail::stack_rows(x, y)));
    } catch (const DegenerateInput&) {
      return KernelSpec(1.0);
    }
  }
};

struct ShiftRecord {
  int class_id = 0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  double mmd = 0.0;
  double bound95 = 0.0;
  bool significant = false;
  std::size_t permutations = 0;
};

struct ShiftReport {
  std::vector<ShiftRecord> records;
  std::vector<std::string> warnings;  // skipped classes and precondition notes
  double level = 0.95;
  std::size_t permutations = 0;

  std::size_t significant_count() const {
    return static_cast<std::size_t>(std::count_if(records.begin(), records.end(),
                                                  [](const ShiftRecord& r) { return r.significant; }));
  }
  double significant_fraction() const {
    return records.empty() ? 0.0
                           : static_cast<double>(significant_count()) /
                                 static_cast<double>(records.size());
  }
};

// One permutation test per class present in both sets. Class c uses seed
// derive_seed(seed, c).
inline ShiftReport audit_per_class(const LabeledDataset& train, const LabeledDataset& test,
                                   const KernelPolicy& policy, std::size_t n_perm, double level,
                                   std::uint64_t seed) {
  if (n_perm == 0) throw std::invalid_argument("audit: n_perm must be at least 1");
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("audit: level must lie in (0, 1)");
  if (train.dim() != test.dim()) throw std::invalid_argument("audit: feature dimensions differ");
  ShiftReport report;
  report.level = level;
  report.permutations = n_perm;

  const std::set<int> train_classes(train.labels.begin(), train.labels.end());
  const std::set<int> test_classes(test.labels.begin(), test.labels.end());
  std::vector<int> shared;
  std::set_intersection(train_classes.begin(), train_classes.end(), test_classes.begin(),
                        test_classes.end(), std::back_inserter(shared));
  if (shared.empty()) {
    report.warnings.push_back("no shared classes between train and test");
    return report;
  }
  for (int c : shared) {
    const Matrix xs = train.class_rows(c);
    const Matrix ys = test.class_rows(c);
    if (xs.rows() < 2 || ys.rows() < 2) {
      report.warnings.push_back("class " + std::to_string(c) + " skipped: fewer than 2 samples (" +
                                std::to_string(xs.rows()) + " train, " +
                                std::to_string(ys.rows()) + " test)");
      continue;
    }
    const PermutationTest t = permutation_test(xs, ys, policy.for_pool(xs, ys), n_perm, level,
                                               derive_seed(seed, static_cast<std::uint64_t>(c)));
    ShiftRecord r;
    r.class_id = c;
    r.n_train = xs.rows();
    r.n_test = ys.rows();
    r.mmd = t.statistic;
    r.bound95 = t.bound;
    r.significant = t.statistic > t.bound;
    r.permutations = n_perm;
    report.records.push_back(r);
  }
  return report;
}

inline void write_shift_csv(std::ostream& os, const ShiftReport& report) {
  os << "class_id,n_train,n_test,mmd,bound95,significant\n";
  for (const auto& r : report.records)
    os << r.class_id << ',' << r.n_train << ',' << r.n_test << ',' << format_real(r.mmd) << ','
       << format_real(r.bound95) << ',' << (r.significant ? 1 : 0) << '\n';
}

inline nlohmann::json shift_summary_json(const ShiftReport& report) {
  nlohmann::json j;
  j["level"] = report.level;
  j["permutations"] = report.permutations;
  j["classes_audited"] = report.records.size();
  j["significant_classes"] = report.significant_count();
  j["significant_fraction"] = report.significant_fraction();
  j["warnings"] = report.warnings;
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : report.records)
    recs.push_back({{"class_id", r.class_id},
                    {"n_train", r.n_train},
                    {"n_test", r.n_test},
                    {"mmd", r.mmd},
                    {"bound95", r.bound95},
                    {"significant", r.significant}});
  j["records"] = std::move(recs);
  return j;
}

}  // namespace ims

#endif  // IMS_INFOTHEORY_HPP
