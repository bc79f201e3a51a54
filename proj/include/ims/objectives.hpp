#ifndef IMS_OBJECTIVES_HPP
#define IMS_OBJECTIVES_HPP

// Training objectives over soft environments.
//
//   total = Σ_e R^e  +  η·Σ_e g_e²  +  β·H(Φ(x))
//
// R^e is the γ-weighted mean cross-entropy of environment e and g_e the
// derivative of R^e with respect to a scalar multiplier w on the logits,
// evaluated at w = 1:
//
//   g_e = Σ_i γ_ie Σ_k (softmax(z_i)_k − 1[y_i = k])·z_ik / Σ_i γ_ie
//
// g_e is an ordinary function of the logits, so the penalty only needs
// first-order differentiation. H is the matrix-based Rényi entropy of the
// batch representations (the IB-IRM baseline swaps in their variance).

#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ims/autodiff.hpp"
#include "ims/common.hpp"
#include "ims/environments.hpp"
#include "ims/infotheory.hpp"
#include "ims/numerics.hpp"

namespace ims {

enum class Method { Erm, Irm, Ib, Ims, IbIrmVar };

inline std::string_view method_name(Method m) {
  switch (m) {
    case Method::Erm: return "erm";
    case Method::Irm: return "irm";
    case Method::Ib: return "ib";
    case Method::Ims: return "ims";
    case Method::IbIrmVar: return "ibirmvar";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  for (Method m : {Method::Erm, Method::Irm, Method::Ib, Method::Ims, Method::IbIrmVar})
    if (method_name(m) == s) return m;
  throw UsageError("unknown method '" + std::string(s) + "' (expected erm|irm|ib|ims|ibirmvar)");
}

enum class PartitionSource { Warmup, Raw };

inline constexpr std::size_t kMinEntropyBatch = 16;
inline constexpr double kEmptyEnvironmentMass = 1e-9;

struct TrainConfig {
  Method method = Method::Ims;
  double eta = 0.005;   // IRM penalty weight
  double beta = 0.05;   // compression weight
  double alpha = kDefaultAlpha;
  std::size_t k = 5;
  double learning_rate = 0.03;
  double momentum = 0.9;
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  bool hard_env = false;        // one-hot environments instead of soft memberships
  bool normalize_by_k = false;  // divide Σ_e R^e by the number of active environments
  PartitionSource partition_source = PartitionSource::Warmup;
  std::size_t warmup_epochs = 1;

  // Coefficients after the method selector has zeroed unused terms.
  double effective_eta() const {
    return (method == Method::Irm || method == Method::Ims || method == Method::IbIrmVar) ? eta : 0.0;
  }
  double effective_beta() const {
    return (method == Method::Ib || method == Method::Ims || method == Method::IbIrmVar) ? beta : 0.0;
  }
  bool uses_variance() const { return method == Method::IbIrmVar; }

  void validate() const {
    if (!(eta >= 0.0) || !(beta >= 0.0)) throw UsageError("eta and beta must be non-negative");
    if (!(alpha > 0.0) || alpha == 1.0) throw UsageError("alpha must be positive and differ from 1");
    if (k < 1) throw UsageError("K must be at least 1");
    if (batch_size < 1) throw UsageError("batch size must be positive");
    if (effective_beta() > 0.0 && !uses_variance() && batch_size < kMinEntropyBatch)
      throw UsageError("batch size must be at least 16 when beta > 0");
    if (!(learning_rate > 0.0)) throw UsageError("learning rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw UsageError("momentum must lie in [0, 1)");
  }
};

struct EnvRiskSet {
  std::vector<double> risks;           // R^e
  std::vector<double> dummy_grads;     // g_e
  std::vector<double> masses;          // Σ_i γ_ie
  std::vector<bool> active;            // mass ≥ 1e-9
};

// Numeric environment risks R^e = Σ_i γ_ie·ℓ_i / Σ_i γ_ie.
inline EnvRiskSet env_risks(std::span<const double> losses, const Matrix& memberships) {
  if (losses.size() != memberships.rows())
    throw std::invalid_argument("env_risks: loss count differs from membership rows");
  const std::size_t k = memberships.cols();
  EnvRiskSet s;
  s.risks.assign(k, 0.0);
  s.dummy_grads.assign(k, 0.0);
  s.masses.assign(k, 0.0);
  s.active.assign(k, false);
  for (std::size_t i = 0; i < losses.size(); ++i)
    for (std::size_t e = 0; e < k; ++e) {
      s.masses[e] += memberships(i, e);
      s.risks[e] += memberships(i, e) * losses[i];
    }
  bool any = false;
  for (std::size_t e = 0; e < k; ++e) {
    s.active[e] = s.masses[e] >= kEmptyEnvironmentMass;
    if (s.active[e]) {
      s.risks[e] /= s.masses[e];
      any = true;
    } else {
      s.risks[e] = 0.0;
    }
  }
  if (!any) throw std::invalid_argument("env_risks: every environment is empty");
  return s;
}

// Σ_k (softmax(z)_k − 1[y = k])·z_k for each row.
inline std::vector<double> dummy_grad_terms(const Matrix& logits, std::span<const int> labels) {
  if (labels.size() != logits.rows())
    throw std::invalid_argument("dummy_grad: label count differs from logit rows");
  const Matrix p = ad::softmax_rows_value(logits);
  std::vector<double> s(logits.rows(), 0.0);
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= logits.cols())
      throw std::out_of_range("dummy_grad: label index out of range");
    for (std::size_t c = 0; c < logits.cols(); ++c)
      s[i] += (p(i, c) - (static_cast<int>(c) == labels[i] ? 1.0 : 0.0)) * logits(i, c);
  }
  return s;
}

// d/dw of the weighted-mean CE of (w·z) at w = 1.
inline double dummy_grad(const Matrix& logits, std::span<const int> labels,
                         std::span<const double> weights) {
  if (weights.size() != logits.rows())
    throw std::invalid_argument("dummy_grad: weight count differs from logit rows");
  if (!logits.all_finite()) throw std::invalid_argument("dummy_grad: non-finite logits");
  const auto s = dummy_grad_terms(logits, labels);
  double num = 0.0, mass = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (weights[i] < 0.0) throw std::invalid_argument("dummy_grad: negative weight");
    num += weights[i] * s[i];
    mass += weights[i];
  }
  if (!(mass > 0.0)) throw std::invalid_argument("dummy_grad: zero total weight");
  return num / mass;
}

// Fills g_e for every active environment of `risks`.
inline void attach_dummy_grads(EnvRiskSet& risks, const Matrix& logits, std::span<const int> labels,
                               const Matrix& memberships) {
  const auto s = dummy_grad_terms(logits, labels);
  for (std::size_t e = 0; e < memberships.cols(); ++e) {
    if (!risks.active[e]) continue;
    double num = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) num += memberships(i, e) * s[i];
    risks.dummy_grads[e] = num / risks.masses[e];
  }
}

// Σ_e g_e² over environments with positive mass.
inline double irm_penalty(const EnvRiskSet& risks) {
  double p = 0.0;
  for (std::size_t e = 0; e < risks.dummy_grads.size(); ++e)
    if (risks.active.empty() || risks.active[e]) p += risks.dummy_grads[e] * risks.dummy_grads[e];
  return p;
}

// ---------------------------------------------------------------------------
// Tape construction.

// Rows are environments, columns batch samples: W_ei = γ_ie / Σ_j γ_je.
// Environments below the mass floor are dropped.
inline Matrix environment_weights(const Matrix& memberships) {
  std::vector<std::size_t> keep;
  std::vector<double> mass(memberships.cols(), 0.0);
  for (std::size_t i = 0; i < memberships.rows(); ++i)
    for (std::size_t e = 0; e < memberships.cols(); ++e) mass[e] += memberships(i, e);
  for (std::size_t e = 0; e < memberships.cols(); ++e)
    if (mass[e] >= kEmptyEnvironmentMass) keep.push_back(e);
  if (keep.empty()) throw std::invalid_argument("environment_weights: every environment is empty");
  Matrix w(keep.size(), memberships.rows());
  for (std::size_t r = 0; r < keep.size(); ++r)
    for (std::size_t i = 0; i < memberships.rows(); ++i)
      w(r, i) = memberships(i, keep[r]) / mass[keep[r]];
  return w;
}

// (K'×1) environment risks on the tape.
inline ad::Var env_risks(ad::Var per_sample_losses, const Matrix& env_weights) {
  return ad::matmul(per_sample_losses.tape->constant(env_weights), per_sample_losses);
}

// (K'×1) dummy-classifier gradients on the tape.
inline ad::Var dummy_grads(ad::Var logits, std::span<const int> labels, const Matrix& env_weights) {
  ad::Tape& t = *logits.tape;
  std::vector<int> ys(labels.begin(), labels.end());
  const Matrix targets = one_hot(ys, logits.cols());
  ad::Var residual = ad::sub(ad::softmax_rows(logits), t.constant(targets));
  ad::Var per_sample = ad::row_sum(ad::hadamard(residual, logits));
  return ad::matmul(t.constant(env_weights), per_sample);
}

inline ad::Var irm_penalty(ad::Var dummy) { return ad::sum(ad::square(dummy)); }

struct IbTerm {
  ad::Var bits;
  bool degenerate = false;  // identical representations; contributes 0
};

inline IbTerm ib_term(ad::Var batch_features, double alpha = kDefaultAlpha,
                      std::optional<double> sigma = std::nullopt) {
  if (batch_features.rows() < kMinEntropyBatch)
    throw std::invalid_argument("ib_term: batch must hold at least 16 rows");
  FeatureEntropy fe = feature_entropy(batch_features.value(), alpha, sigma);
  IbTerm out;
  out.degenerate = fe.degenerate;
  out.bits = ad::custom_scalar(batch_features, fe.bits, std::move(fe.gradient), "renyi_entropy");
  return out;
}

// Mean per-dimension (population) variance of the batch.
inline ad::Var variance_term(ad::Var batch_features) {
  const double denom = static_cast<double>(batch_features.rows() * batch_features.cols());
  return ad::scale(ad::sum(ad::square(ad::center_columns(batch_features))), 1.0 / denom);
}

// Tape nodes of one loss evaluation. `penalty` is always built (it is
// cheap and reported); the compression term only when its weight is
// positive.
struct LossTerms {
  ad::Var total;
  ad::Var ce;
  ad::Var penalty;
  std::optional<ad::Var> compression;  // entropy (bits) or variance
  double eta = 0.0;
  double beta = 0.0;
  bool degenerate_entropy = false;

  double ce_value() const { return ce.scalar(); }
  double penalty_value() const { return penalty.scalar(); }
  double compression_value() const { return compression ? compression->scalar() : 0.0; }
};

// Batch-level inputs: logits and representations already on the tape.
struct BatchView {
  ad::Var logits;
  ad::Var representation;
  std::span<const int> labels;
  const Matrix* memberships = nullptr;  // batch rows × K
};

inline ad::Var environment_ce(const BatchView& b, const Matrix& env_weights, bool normalize_by_k) {
  ad::Var losses = ad::softmax_cross_entropy(b.logits, b.labels);
  ad::Var ce = ad::sum(env_risks(losses, env_weights));
  if (normalize_by_k) ce = ad::scale(ce, 1.0 / static_cast<double>(env_weights.rows()));
  return ce;
}

// Σ_e R^e with no penalty or compression.
inline ad::Var erm_loss(const BatchView& b, bool normalize_by_k = false) {
  return environment_ce(b, environment_weights(*b.memberships), normalize_by_k);
}

inline LossTerms build_loss(const BatchView& b, const TrainConfig& cfg) {
  const Matrix w = environment_weights(*b.memberships);
  LossTerms out;
  out.eta = cfg.effective_eta();
  out.beta = cfg.effective_beta();
  out.ce = environment_ce(b, w, cfg.normalize_by_k);
  out.penalty = irm_penalty(dummy_grads(b.logits, b.labels, w));
  out.total = out.ce;
  if (out.eta > 0.0) out.total = ad::add(out.total, ad::scale(out.penalty, out.eta));
  if (out.beta > 0.0) {
    if (cfg.uses_variance()) {
      out.compression = variance_term(b.representation);
    } else {
      IbTerm ib = ib_term(b.representation, cfg.alpha);
      out.degenerate_entropy = ib.degenerate;
      out.compression = ib.bits;
    }
    out.total = ad::add(out.total, ad::scale(*out.compression, out.beta));
  }
  return out;
}

// Σ_e R^e + η·Σ_e g_e² + β·H(Φ).
inline LossTerms ims_loss(const BatchView& b, TrainConfig cfg) {
  if (cfg.method == Method::IbIrmVar) cfg.method = Method::Ims;
  return build_loss(b, cfg);
}

// Σ_e R^e + η·Σ_e g_e² + β·Var(Φ).
inline LossTerms ib_irm_variance_loss(const BatchView& b, TrainConfig cfg) {
  cfg.method = Method::IbIrmVar;
  return build_loss(b, cfg);
}

}  // namespace ims

#endif  // IMS_OBJECTIVES_HPP
