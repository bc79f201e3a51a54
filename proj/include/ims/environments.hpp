#ifndef IMS_ENVIRONMENTS_HPP
#define IMS_ENVIRONMENTS_HPP

// Soft k-means partition of samples into latent environments.
//
// Responsibilities are the Gibbs softmin γ_il ∝ exp(−s·‖x_i − μ_l‖²) and
// centers are γ-weighted means. The tracked objective is
// E = Σ_l Σ_i γ_il ‖x_i − μ_l‖²; an update that would not lower E by at
// least the tolerance ends the iteration and is discarded, so the recorded
// objective history is non-increasing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "ims/common.hpp"
#include "ims/numerics.hpp"

namespace ims {

struct PartitionConfig {
  std::size_t k = 5;
  std::optional<double> stiffness;  // default: 1 / mean squared distance to the global mean
  std::size_t max_iterations = 100;
  double tolerance = 1e-10;
  std::uint64_t seed = 0;

  void validate() const {
    if (k < 1) throw UsageError("partition: K must be at least 1");
    if (!(tolerance > 0.0)) throw UsageError("partition: tolerance must be positive");
    if (stiffness && !(*stiffness > 0.0)) throw UsageError("partition: stiffness must be positive");
  }
};

struct EnvironmentAssignment {
  Matrix memberships;  // n × K, rows sum to 1
  Matrix centers;      // K × d
  double stiffness = 1.0;
  double objective = 0.0;
  std::vector<double> objective_history;  // E after initialization and each accepted step
  std::size_t iterations = 0;

  std::size_t size() const { return memberships.rows(); }
  std::size_t k() const { return memberships.cols(); }

  // Column masses Σ_i γ_il.
  std::vector<double> masses() const {
    std::vector<double> m(k(), 0.0);
    for (std::size_t i = 0; i < size(); ++i)
      for (std::size_t l = 0; l < k(); ++l) m[l] += memberships(i, l);
    return m;
  }

  EnvironmentAssignment rows(const std::vector<std::size_t>& idx) const {
    EnvironmentAssignment out = *this;
    out.memberships = Matrix(idx.size(), k());
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t l = 0; l < k(); ++l) out.memberships(r, l) = memberships(idx[r], l);
    return out;
  }
};

namespace detail {

inline double sqdist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c) {
    const double d = a[c] - b[c];
    s += d * d;
  }
  return s;
}

inline Matrix center_distances(const Matrix& x, const Matrix& centers) {
  Matrix d(x.rows(), centers.rows());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t l = 0; l < centers.rows(); ++l) d(i, l) = sqdist(x.row(i), centers.row(l));
  return d;
}

inline Matrix softmin_memberships(const Matrix& dist, double stiffness) {
  Matrix g(dist.rows(), dist.cols());
  for (std::size_t i = 0; i < dist.rows(); ++i) {
    double lo = std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l < dist.cols(); ++l) lo = std::min(lo, dist(i, l));
    double s = 0.0;
    for (std::size_t l = 0; l < dist.cols(); ++l) {
      g(i, l) = std::exp(-stiffness * (dist(i, l) - lo));
      s += g(i, l);
    }
    for (std::size_t l = 0; l < dist.cols(); ++l) g(i, l) /= s;
  }
  return g;
}

inline double partition_objective(const Matrix& gamma, const Matrix& dist) {
  double e = 0.0;
  for (std::size_t i = 0; i < gamma.size(); ++i) e += gamma.data()[i] * dist.data()[i];
  return e;
}

// Row whose nearest chosen center is farthest away; lowest index on ties.
inline std::size_t farthest_row(const Matrix& x, const Matrix& centers, std::size_t n_centers) {
  std::size_t best = 0;
  double best_d = -1.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double nearest = std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l < n_centers; ++l)
      nearest = std::min(nearest, sqdist(x.row(i), centers.row(l)));
    if (nearest > best_d) {
      best_d = nearest;
      best = i;
    }
  }
  return best;
}

}  // namespace detail

// Deterministic farthest-point seeding: the first center is the row farthest
// from the global mean, each further center the row farthest from all
// centers chosen so far. The rule depends only on the point set, which makes
// the partition equivariant under row permutations (up to exact ties).
inline Matrix farthest_point_centers(const Matrix& x, std::size_t k) {
  const std::size_t d = x.cols();
  Matrix mean(1, d);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t c = 0; c < d; ++c) mean(0, c) += x(i, c);
  mean *= 1.0 / static_cast<double>(x.rows());
  Matrix centers(k, d);
  const std::size_t first = detail::farthest_row(x, mean, 1);
  std::copy(x.row(first).begin(), x.row(first).end(), centers.row(0).begin());
  for (std::size_t l = 1; l < k; ++l) {
    const std::size_t r = detail::farthest_row(x, centers, l);
    std::copy(x.row(r).begin(), x.row(r).end(), centers.row(l).begin());
  }
  return centers;
}

inline double default_stiffness(const Matrix& x) {
  const std::size_t n = x.rows(), d = x.cols();
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) mean[c] += x(i, c);
  for (double& m : mean) m /= static_cast<double>(n);
  double msd = 0.0;
  for (std::size_t i = 0; i < n; ++i) msd += detail::sqdist(x.row(i), mean);
  msd /= static_cast<double>(n);
  return msd > 0.0 ? 1.0 / msd : 1.0;
}

inline EnvironmentAssignment soft_kmeans(const Matrix& features, const PartitionConfig& config) {
  config.validate();
  const std::size_t n = features.rows(), k = config.k, d = features.cols();
  if (n < k) throw UsageError("soft_kmeans: fewer samples (" + std::to_string(n) +
                              ") than environments (" + std::to_string(k) + ")");
  if (!features.all_finite()) throw DataError("soft_kmeans: non-finite features");

  EnvironmentAssignment a;
  a.stiffness = config.stiffness.value_or(default_stiffness(features));
  a.centers = farthest_point_centers(features, k);

  auto update_centers = [&](const Matrix& gamma, Matrix& centers) {
    std::vector<double> mass(k, 0.0);
    Matrix acc(k, d);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t l = 0; l < k; ++l) {
        const double g = gamma(i, l);
        mass[l] += g;
        for (std::size_t c = 0; c < d; ++c) acc(l, c) += g * features(i, c);
      }
    for (std::size_t l = 0; l < k; ++l) {
      if (mass[l] < 1e-12) {
        const std::size_t r = detail::farthest_row(features, centers, k);
        std::copy(features.row(r).begin(), features.row(r).end(), centers.row(l).begin());
        continue;
      }
      for (std::size_t c = 0; c < d; ++c) centers(l, c) = acc(l, c) / mass[l];
    }
  };

  Matrix dist = detail::center_distances(features, a.centers);
  a.memberships = detail::softmin_memberships(dist, a.stiffness);
  update_centers(a.memberships, a.centers);
  dist = detail::center_distances(features, a.centers);
  a.objective = detail::partition_objective(a.memberships, dist);
  a.objective_history.push_back(a.objective);
  a.iterations = 1;

  while (a.iterations < config.max_iterations) {
    Matrix gamma = detail::softmin_memberships(dist, a.stiffness);
    Matrix centers = a.centers;
    update_centers(gamma, centers);
    Matrix next_dist = detail::center_distances(features, centers);
    const double e = detail::partition_objective(gamma, next_dist);
    const double decrease = a.objective - e;
    if (decrease < 0.0) break;
    a.memberships = std::move(gamma);
    a.centers = std::move(centers);
    a.objective = e;
    a.objective_history.push_back(e);
    dist = std::move(next_dist);
    ++a.iterations;
    if (decrease < config.tolerance) break;
  }
  return a;
}

// Per-row argmax; ties go to the lowest environment index.
inline std::vector<int> harden(const EnvironmentAssignment& a) {
  std::vector<int> labels(a.size(), 0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t l = 1; l < a.k(); ++l)
      if (a.memberships(i, l) > a.memberships(i, best)) best = l;
    labels[i] = static_cast<int>(best);
  }
  return labels;
}

inline Matrix one_hot(const std::vector<int>& labels, std::size_t k) {
  Matrix m(labels.size(), k);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k)
      throw std::out_of_range("one_hot: label outside [0, K)");
    m(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  return m;
}

// Single environment holding every sample.
inline EnvironmentAssignment single_environment(std::size_t n) {
  EnvironmentAssignment a;
  a.memberships = Matrix(n, 1, 1.0);
  return a;
}

// Replaces soft memberships with their hardened one-hot form.
inline EnvironmentAssignment hardened(const EnvironmentAssignment& a) {
  EnvironmentAssignment out = a;
  out.memberships = one_hot(harden(a), a.k());
  return out;
}

// row_index,gamma_0,...,gamma_{K-1},hard_label
inline void write_assignment_csv(std::ostream& os, const EnvironmentAssignment& a) {
  os << "row_index";
  for (std::size_t l = 0; l < a.k(); ++l) os << ",gamma_" << l;
  os << ",hard_label\n";
  const auto hard = harden(a);
  for (std::size_t i = 0; i < a.size(); ++i) {
    os << i;
    for (std::size_t l = 0; l < a.k(); ++l) os << ',' << format_real(a.memberships(i, l));
    os << ',' << hard[i] << '\n';
  }
}

}  // namespace ims

#endif  // IMS_ENVIRONMENTS_HPP
