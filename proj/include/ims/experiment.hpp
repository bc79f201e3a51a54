#ifndef IMS_EXPERIMENT_HPP
#define IMS_EXPERIMENT_HPP

// Small MLP, synthetic spurious-correlation data, the deterministic training
// loop (SGD with momentum and cosine decay), evaluation and per-layer
// mutual-information profiling.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "ims/autodiff.hpp"
#include "ims/common.hpp"
#include "ims/dataset.hpp"
#include "ims/environments.hpp"
#include "ims/infotheory.hpp"
#include "ims/numerics.hpp"
#include "ims/objectives.hpp"

namespace ims {

// ---------------------------------------------------------------------------
// Model

enum class Activation : std::uint32_t { Tanh = 0, Relu = 1 };

// Hidden layers form the feature extractor Φ; the last layer is the linear
// classifier head.
struct MlpModel {
  std::vector<std::size_t> sizes;  // input, hidden..., classes
  Activation activation = Activation::Tanh;
  std::vector<Matrix> weights;     // sizes[l] × sizes[l+1]
  std::vector<Matrix> biases;      // 1 × sizes[l+1]

  std::size_t layer_count() const { return weights.size(); }
  std::size_t hidden_count() const { return weights.empty() ? 0 : weights.size() - 1; }
  std::size_t input_dim() const { return sizes.front(); }
  std::size_t class_count() const { return sizes.back(); }

  static std::string weight_name(std::size_t l) { return "W" + std::to_string(l); }
  static std::string bias_name(std::size_t l) { return "b" + std::to_string(l); }

  // Uniform(−1/√fan_in, 1/√fan_in) for weights and biases.
  static MlpModel init(std::vector<std::size_t> sizes, Activation act, std::uint64_t seed) {
    if (sizes.size() < 2) throw UsageError("model needs at least input and output sizes");
    for (std::size_t s : sizes)
      if (s == 0) throw UsageError("model layer sizes must be positive");
    MlpModel m;
    m.sizes = std::move(sizes);
    m.activation = act;
    std::mt19937_64 rng(derive_seed(seed, 0x1417));
    for (std::size_t l = 0; l + 1 < m.sizes.size(); ++l) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(m.sizes[l]));
      std::uniform_real_distribution<double> u(-bound, bound);
      Matrix w(m.sizes[l], m.sizes[l + 1]);
      for (double& v : w.data()) v = u(rng);
      Matrix b(1, m.sizes[l + 1]);
      for (double& v : b.data()) v = u(rng);
      m.weights.push_back(std::move(w));
      m.biases.push_back(std::move(b));
    }
    return m;
  }

  ad::ParamSet params() const {
    ad::ParamSet p;
    for (std::size_t l = 0; l < layer_count(); ++l) {
      p.emplace(weight_name(l), weights[l]);
      p.emplace(bias_name(l), biases[l]);
    }
    return p;
  }

  void set_params(const ad::ParamSet& p) {
    for (std::size_t l = 0; l < layer_count(); ++l) {
      weights[l] = p.at(weight_name(l));
      biases[l] = p.at(bias_name(l));
    }
  }

  bool all_finite() const {
    for (std::size_t l = 0; l < layer_count(); ++l)
      if (!weights[l].all_finite() || !biases[l].all_finite()) return false;
    return true;
  }

  friend bool operator==(const MlpModel&, const MlpModel&) = default;
};

struct ForwardPass {
  std::vector<ad::Var> hidden;  // post-activation outputs of each hidden layer
  ad::Var logits;

  ad::Var representation() const { return hidden.back(); }
};

inline ad::Var activate(ad::Var x, Activation a) {
  return a == Activation::Tanh ? ad::tanh(x) : ad::relu(x);
}

inline ForwardPass forward(const MlpModel& m, ad::Var input,
                           const std::map<std::string, ad::Var>& params) {
  ForwardPass f;
  ad::Var h = input;
  for (std::size_t l = 0; l < m.layer_count(); ++l) {
    ad::Var z = ad::add_row(ad::matmul(h, params.at(MlpModel::weight_name(l))),
                            params.at(MlpModel::bias_name(l)));
    if (l + 1 == m.layer_count()) {
      f.logits = z;
    } else {
      h = activate(z, m.activation);
      f.hidden.push_back(h);
    }
  }
  if (f.hidden.empty()) f.hidden.push_back(input);
  return f;
}

// Plain forward pass without a tape.
struct Activations {
  std::vector<Matrix> hidden;
  Matrix logits;
};

inline Activations forward_values(const MlpModel& m, const Matrix& x) {
  if (x.cols() != m.input_dim())
    throw std::invalid_argument("model expects " + std::to_string(m.input_dim()) +
                                " input features, data has " + std::to_string(x.cols()));
  Activations a;
  Matrix h = x;
  for (std::size_t l = 0; l < m.layer_count(); ++l) {
    Matrix z = matmul(h, m.weights[l]);
    for (std::size_t r = 0; r < z.rows(); ++r)
      for (std::size_t c = 0; c < z.cols(); ++c) z(r, c) += m.biases[l](0, c);
    if (l + 1 == m.layer_count()) {
      a.logits = std::move(z);
    } else {
      for (double& v : z.data()) v = m.activation == Activation::Tanh ? std::tanh(v) : std::max(v, 0.0);
      h = z;
      a.hidden.push_back(std::move(z));
    }
  }
  return a;
}

// ---------------------------------------------------------------------------
// Model file: little-endian binary.
//
//   bytes 0..7   magic "IMSMODEL"
//   u32          format version (1)
//   u32          activation (0 = tanh, 1 = relu)
//   u32          number of layer sizes L
//   u64 × L      layer sizes
//   per layer l: f64 × sizes[l]·sizes[l+1] weights (row-major), f64 × sizes[l+1] biases

inline constexpr char kModelMagic[8] = {'I', 'M', 'S', 'M', 'O', 'D', 'E', 'L'};
inline constexpr std::uint32_t kModelVersion = 1;

namespace detail {

template <class T>
void put_le(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T get_le(std::istream& is, const std::string& path) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T)))
    throw DataError(path + ": truncated model file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace detail

inline void write_model(std::ostream& os, const MlpModel& m) {
  os.write(kModelMagic, sizeof kModelMagic);
  detail::put_le<std::uint32_t>(os, kModelVersion);
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.activation));
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.sizes.size()));
  for (std::size_t s : m.sizes) detail::put_le<std::uint64_t>(os, s);
  for (std::size_t l = 0; l < m.layer_count(); ++l) {
    for (double v : m.weights[l].data()) detail::put_le<double>(os, v);
    for (double v : m.biases[l].data()) detail::put_le<double>(os, v);
  }
}

inline MlpModel read_model(std::istream& is, const std::string& path = "<stream>") {
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kModelMagic, sizeof magic) != 0)
    throw DataError(path + ": not a model file (bad magic)");
  const auto version = detail::get_le<std::uint32_t>(is, path);
  if (version != kModelVersion)
    throw DataError(path + ": unsupported model version " + std::to_string(version) +
                    " (expected " + std::to_string(kModelVersion) + ")");
  const auto act = detail::get_le<std::uint32_t>(is, path);
  if (act > 1) throw DataError(path + ": unknown activation code");
  const auto count = detail::get_le<std::uint32_t>(is, path);
  if (count < 2 || count > 64) throw DataError(path + ": implausible layer count");
  MlpModel m;
  m.activation = static_cast<Activation>(act);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto s = detail::get_le<std::uint64_t>(is, path);
    if (s == 0 || s > (1u << 20)) throw DataError(path + ": implausible layer size");
    m.sizes.push_back(static_cast<std::size_t>(s));
  }
  for (std::size_t l = 0; l + 1 < m.sizes.size(); ++l) {
    Matrix w(m.sizes[l], m.sizes[l + 1]);
    for (double& v : w.data()) v = detail::get_le<double>(is, path);
    Matrix b(1, m.sizes[l + 1]);
    for (double& v : b.data()) v = detail::get_le<double>(is, path);
    m.weights.push_back(std::move(w));
    m.biases.push_back(std::move(b));
  }
  return m;
}

inline void save_model(const std::string& path, const MlpModel& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  write_model(os, m);
}

inline MlpModel load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path + "'");
  return read_model(is, path);
}

// ---------------------------------------------------------------------------
// Synthetic spurious-correlation data

// Each class c has an invariant mean; a "color" is drawn per sample that
// agrees with the label with probability (1+ρ)/2 (otherwise a uniformly
// chosen other class) and is written into the spurious dimensions. The
// training set draws `majority_fraction` of every class with ρ (tag 0) and
// the rest with ρ' (tag 1); the test set uses ρ' throughout (tag 1).
struct SynthConfig {
  std::size_t classes = 2;
  std::size_t train_per_class = 500;
  std::size_t test_per_class = 1000;
  std::size_t invariant_dims = 2;
  double separation = 1.0;      // distance of each invariant class mean from the origin
  double invariant_noise = 1.0;
  std::size_t spurious_dims = 2;
  double spurious_scale = 1.0;  // half distance between color codes per dimension
  double spurious_noise = 0.1;
  double rho = 0.9;             // majority training regime
  double rho_test = -0.9;       // minority training regime and test set
  std::size_t noise_dims = 16;
  double majority_fraction = 0.75;
  std::uint64_t seed = 0;

  std::size_t dim() const { return invariant_dims + spurious_dims + noise_dims; }

  void validate() const {
    if (classes < 2) throw UsageError("synth: need at least two classes");
    if (train_per_class == 0 || test_per_class == 0) throw UsageError("synth: empty split");
    if (invariant_dims == 0) throw UsageError("synth: need at least one invariant dimension");
    if (classes > 2 && invariant_dims < classes)
      throw UsageError("synth: more than two classes need invariant_dims >= classes");
    if (!(majority_fraction >= 0.0 && majority_fraction <= 1.0))
      throw UsageError("synth: majority_fraction must lie in [0, 1]");
    if (!(rho >= -1.0 && rho <= 1.0) || !(rho_test >= -1.0 && rho_test <= 1.0))
      throw UsageError("synth: correlations must lie in [-1, 1]");
    if (invariant_noise < 0.0 || spurious_noise < 0.0) throw UsageError("synth: negative noise scale");
  }
};

namespace detail {

inline double invariant_mean(const SynthConfig& c, std::size_t cls, std::size_t dim) {
  if (c.classes == 2) {
    const double u = c.separation / std::sqrt(static_cast<double>(c.invariant_dims));
    return cls == 1 ? u : -u;
  }
  return dim == cls ? c.separation : 0.0;
}

inline double color_code(const SynthConfig& c, std::size_t color, std::size_t dim) {
  if (c.classes == 2) return color == 1 ? c.spurious_scale : -c.spurious_scale;
  return dim % c.classes == color ? c.spurious_scale : -c.spurious_scale;
}

inline void sample_rows(const SynthConfig& c, std::size_t cls, std::size_t count, double rho, int tag,
                        std::mt19937_64& rng, std::vector<double>& feats, std::vector<int>& labels,
                        std::vector<int>& tags) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> other(0, c.classes - 2);
  const double agree = 0.5 * (1.0 + rho);
  for (std::size_t r = 0; r < count; ++r) {
    for (std::size_t j = 0; j < c.invariant_dims; ++j)
      feats.push_back(invariant_mean(c, cls, j) + c.invariant_noise * gauss(rng));
    std::size_t color = cls;
    if (unit(rng) >= agree) {
      color = other(rng);
      if (color >= cls) ++color;
    }
    for (std::size_t j = 0; j < c.spurious_dims; ++j)
      feats.push_back(color_code(c, color, j) + c.spurious_noise * gauss(rng));
    for (std::size_t j = 0; j < c.noise_dims; ++j) feats.push_back(gauss(rng));
    labels.push_back(static_cast<int>(cls));
    tags.push_back(tag);
  }
}

inline LabeledDataset shuffled(LabeledDataset ds, std::mt19937_64& rng) {
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  return ds.subset(order);
}

}  // namespace detail

struct SplitData {
  LabeledDataset train;
  LabeledDataset test;
};

inline SplitData gen_spurious(const SynthConfig& c) {
  c.validate();
  std::mt19937_64 rng(derive_seed(c.seed, 0x5EED));
  const std::size_t d = c.dim();
  SplitData out;
  {
    std::vector<double> feats;
    std::vector<int> labels, tags;
    const auto majority = static_cast<std::size_t>(
        std::llround(c.majority_fraction * static_cast<double>(c.train_per_class)));
    for (std::size_t cls = 0; cls < c.classes; ++cls) {
      detail::sample_rows(c, cls, majority, c.rho, 0, rng, feats, labels, tags);
      detail::sample_rows(c, cls, c.train_per_class - majority, c.rho_test, 1, rng, feats, labels, tags);
    }
    LabeledDataset ds{Matrix(labels.size(), d, std::move(feats)), std::move(labels), std::move(tags)};
    out.train = detail::shuffled(std::move(ds), rng);
  }
  {
    std::vector<double> feats;
    std::vector<int> labels, tags;
    for (std::size_t cls = 0; cls < c.classes; ++cls)
      detail::sample_rows(c, cls, c.test_per_class, c.rho_test, 1, rng, feats, labels, tags);
    LabeledDataset ds{Matrix(labels.size(), d, std::move(feats)), std::move(labels), std::move(tags)};
    out.test = detail::shuffled(std::move(ds), rng);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

inline std::vector<int> predict(const MlpModel& m, const Matrix& x) {
  const Matrix logits = forward_values(m, x).logits;
  std::vector<int> pred(logits.rows(), 0);
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols(); ++c)
      if (logits(r, c) > logits(r, best)) best = c;
    pred[r] = static_cast<int>(best);
  }
  return pred;
}

// Top-1 accuracy; ties resolve to the lowest class index.
inline double evaluate(const MlpModel& m, const LabeledDataset& data) {
  if (data.dim() != m.input_dim())
    throw std::invalid_argument("evaluate: model expects " + std::to_string(m.input_dim()) +
                                " features, data has " + std::to_string(data.dim()));
  if (data.size() == 0) return 0.0;
  const auto pred = predict(m, data.features);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == data.labels[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;       // mean total loss over the epoch's batches
  double ce = 0.0;         // mean Σ_e R^e
  double penalty = 0.0;    // mean Σ_e g_e² (unweighted)
  double compression = 0.0;  // mean entropy bits or variance (unweighted)
  double train_accuracy = 0.0;
  double learning_rate = 0.0;  // rate used by the epoch's last step
  double max_decomposition_error = 0.0;  // max |total − (ce + η·penalty + β·compression)|
};

struct RunReport {
  std::string method;
  std::uint64_t seed = 0;
  double eta = 0.0;
  double beta = 0.0;
  double alpha = 0.0;
  std::size_t k = 0;
  std::vector<EpochRecord> epochs;
  double final_train_accuracy = 0.0;
  double test_accuracy = -1.0;  // −1 when no test set was supplied
  std::size_t steps = 0;
  std::size_t degenerate_entropy_batches = 0;
  double wall_seconds = 0.0;  // excluded from equality

  bool same_results(const RunReport& o) const;
};

inline bool operator==(const EpochRecord& a, const EpochRecord& b) {
  return a.epoch == b.epoch && a.loss == b.loss && a.ce == b.ce && a.penalty == b.penalty &&
         a.compression == b.compression && a.train_accuracy == b.train_accuracy &&
         a.learning_rate == b.learning_rate &&
         a.max_decomposition_error == b.max_decomposition_error;
}

inline bool RunReport::same_results(const RunReport& o) const {
  return method == o.method && seed == o.seed && eta == o.eta && beta == o.beta &&
         alpha == o.alpha && k == o.k && epochs == o.epochs &&
         final_train_accuracy == o.final_train_accuracy && test_accuracy == o.test_accuracy &&
         steps == o.steps && degenerate_entropy_batches == o.degenerate_entropy_batches;
}

// lr₀·½·(1 + cos(π·t/T)).
inline double cosine_lr(double lr0, std::size_t step, std::size_t total_steps) {
  if (total_steps == 0) return lr0;
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

class SgdMomentum {
 public:
  explicit SgdMomentum(double momentum) : momentum_(momentum) {}

  // v ← μ·v + g;  θ ← θ − lr·v
  void step(ad::ParamSet& params, const ad::Gradient& grad, double lr) {
    for (auto& [name, p] : params) {
      const Matrix& g = grad.at(name);
      auto [it, fresh] = velocity_.try_emplace(name, p.rows(), p.cols());
      Matrix& v = it->second;
      for (std::size_t i = 0; i < p.size(); ++i) {
        v.data()[i] = momentum_ * v.data()[i] + g.data()[i];
        p.data()[i] -= lr * v.data()[i];
      }
    }
  }

 private:
  double momentum_;
  std::map<std::string, Matrix> velocity_;
};

inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(seed, 0xE90C, epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

namespace detail {

inline std::vector<int> gather_labels(const std::vector<int>& labels,
                                      std::span<const std::size_t> idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(labels[i]);
  return out;
}

inline Matrix gather_rows(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), m.cols());
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy(m.row(idx[r]).begin(), m.row(idx[r]).end(), out.row(r).begin());
  return out;
}

}  // namespace detail

// Runs `epochs` epochs of minibatch SGD on `data` with the given environment
// memberships (n × K). Batches are consecutive slices of a per-epoch
// shuffle; a trailing remainder smaller than the batch size is dropped.
inline RunReport train(MlpModel& model, const LabeledDataset& data,
                       const EnvironmentAssignment& assignment, const TrainConfig& cfg) {
  cfg.validate();
  data.validate();
  if (data.dim() != model.input_dim())
    throw std::invalid_argument("train: model/data dimension mismatch");
  if (assignment.size() != data.size())
    throw std::invalid_argument("train: assignment rows differ from dataset rows");
  if (static_cast<std::size_t>(data.class_count()) > model.class_count())
    throw std::invalid_argument("train: labels exceed model class count");

  const auto t0 = std::chrono::steady_clock::now();
  const Matrix memberships =
      cfg.hard_env ? one_hot(harden(assignment), assignment.k()) : assignment.memberships;
  const std::size_t n = data.size();
  const std::size_t batch = std::min(cfg.batch_size, n);
  const std::size_t per_epoch = std::max<std::size_t>(1, n / batch);
  const std::size_t total = per_epoch * cfg.epochs;

  RunReport rep;
  rep.method = std::string(method_name(cfg.method));
  rep.seed = cfg.seed;
  rep.eta = cfg.effective_eta();
  rep.beta = cfg.effective_beta();
  rep.alpha = cfg.alpha;
  rep.k = assignment.k();

  ad::ParamSet params = model.params();
  SgdMomentum opt(cfg.momentum);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(n, cfg.seed, epoch);
    EpochRecord er;
    er.epoch = epoch;
    std::size_t correct = 0, seen = 0;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      std::span<const std::size_t> idx(order.data() + b * batch, batch);
      const Matrix xb = detail::gather_rows(data.features, idx);
      const std::vector<int> yb = detail::gather_labels(data.labels, idx);
      const Matrix gb = detail::gather_rows(memberships, idx);

      ad::Tape tape;
      std::map<std::string, ad::Var> vars;
      for (const auto& [name, value] : params) vars.emplace(name, tape.param(name, value));
      const ForwardPass fp = forward(model, tape.constant(xb), vars);
      BatchView view{fp.logits, fp.representation(), yb, &gb};
      const LossTerms terms = build_loss(view, cfg);

      const double total_v = terms.total.scalar();
      if (!std::isfinite(terms.ce_value()))
        throw NumericalError("non-finite loss at step " + std::to_string(step) + ": cross-entropy term");
      if (!std::isfinite(terms.penalty_value()))
        throw NumericalError("non-finite loss at step " + std::to_string(step) + ": IRM penalty term");
      if (!std::isfinite(terms.compression_value()))
        throw NumericalError("non-finite loss at step " + std::to_string(step) + ": compression term");
      if (!std::isfinite(total_v))
        throw NumericalError("non-finite loss at step " + std::to_string(step) + ": total");

      const double recomposed = terms.ce_value() + terms.eta * terms.penalty_value() +
                                terms.beta * terms.compression_value();
      er.max_decomposition_error = std::max(er.max_decomposition_error, std::abs(total_v - recomposed));
      er.loss += total_v;
      er.ce += terms.ce_value();
      er.penalty += terms.penalty_value();
      er.compression += terms.compression_value();
      if (terms.degenerate_entropy) ++rep.degenerate_entropy_batches;

      const Matrix& logits = fp.logits.value();
      for (std::size_t r = 0; r < logits.rows(); ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < logits.cols(); ++c)
          if (logits(r, c) > logits(r, best)) best = c;
        correct += static_cast<int>(best) == yb[r] ? 1 : 0;
      }
      seen += yb.size();

      tape.backward(terms.total);
      const double lr = cosine_lr(cfg.learning_rate, step, total);
      opt.step(params, tape.gradient(), lr);
      er.learning_rate = lr;
      ++step;
    }
    const double nb = static_cast<double>(per_epoch);
    er.loss /= nb;
    er.ce /= nb;
    er.penalty /= nb;
    er.compression /= nb;
    er.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    rep.epochs.push_back(er);
  }
  model.set_params(params);
  if (!model.all_finite()) throw NumericalError("training produced non-finite parameters");
  rep.steps = step;
  rep.final_train_accuracy = evaluate(model, data);
  rep.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

// Representations of the last hidden layer for every row.
inline Matrix representations(const MlpModel& m, const Matrix& x) {
  auto a = forward_values(m, x);
  return a.hidden.empty() ? x : a.hidden.back();
}

struct ExperimentResult {
  MlpModel model;
  EnvironmentAssignment assignment;
  RunReport report;
};

// Default architecture d → 64 → 32 → C with tanh.
inline std::vector<std::size_t> default_layer_sizes(std::size_t input, std::size_t classes) {
  return {input, 64, 32, classes};
}

// Full pipeline: initialize, warm up with plain cross-entropy, partition the
// training set with soft k-means (on warm-up representations or raw inputs),
// then train with the configured objective and evaluate on `test`.
inline ExperimentResult run_experiment(const LabeledDataset& train_set, const LabeledDataset* test_set,
                                       const TrainConfig& cfg,
                                       std::vector<std::size_t> layer_sizes = {}) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  if (layer_sizes.empty())
    layer_sizes = default_layer_sizes(train_set.dim(),
                                      static_cast<std::size_t>(std::max(2, train_set.class_count())));
  ExperimentResult res{MlpModel::init(std::move(layer_sizes), Activation::Tanh, cfg.seed), {}, {}};

  if (cfg.warmup_epochs > 0) {
    TrainConfig warm = cfg;
    warm.method = Method::Erm;
    warm.epochs = cfg.warmup_epochs;
    warm.seed = derive_seed(cfg.seed, 0x3A53);
    train(res.model, train_set, single_environment(train_set.size()), warm);
  }

  PartitionConfig pc;
  pc.k = cfg.k;
  pc.seed = cfg.seed;
  const Matrix partition_features = cfg.partition_source == PartitionSource::Raw
                                        ? train_set.features
                                        : representations(res.model, train_set.features);
  res.assignment = cfg.k == 1 ? single_environment(train_set.size())
                              : soft_kmeans(partition_features, pc);

  res.report = train(res.model, train_set, res.assignment, cfg);
  if (test_set) res.report.test_accuracy = evaluate(res.model, *test_set);
  res.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

inline nlohmann::json run_report_json(const RunReport& r) {
  nlohmann::json j;
  j["schema"] = "ims.run_report/1";
  j["method"] = r.method;
  j["seed"] = r.seed;
  j["eta"] = r.eta;
  j["beta"] = r.beta;
  j["alpha"] = r.alpha;
  j["k"] = r.k;
  j["steps"] = r.steps;
  j["final_train_accuracy"] = r.final_train_accuracy;
  j["test_accuracy"] = r.test_accuracy < 0.0 ? nlohmann::json(nullptr) : nlohmann::json(r.test_accuracy);
  j["degenerate_entropy_batches"] = r.degenerate_entropy_batches;
  j["wall_seconds"] = r.wall_seconds;
  nlohmann::json ep = nlohmann::json::array();
  for (const auto& e : r.epochs)
    ep.push_back({{"epoch", e.epoch},
                  {"loss", e.loss},
                  {"ce", e.ce},
                  {"penalty", e.penalty},
                  {"compression", e.compression},
                  {"train_accuracy", e.train_accuracy},
                  {"learning_rate", e.learning_rate}});
  j["epochs"] = std::move(ep);
  return j;
}

// epoch,loss,ce,penalty,compression,train_accuracy,learning_rate
inline void write_epoch_csv(std::ostream& os, const RunReport& r) {
  os << "epoch,loss,ce,penalty,compression,train_accuracy,learning_rate\n";
  for (const auto& e : r.epochs)
    os << e.epoch << ',' << format_real(e.loss) << ',' << format_real(e.ce) << ','
       << format_real(e.penalty) << ',' << format_real(e.compression) << ','
       << format_real(e.train_accuracy) << ',' << format_real(e.learning_rate) << '\n';
}

// ---------------------------------------------------------------------------
// Mutual-information profile

inline constexpr std::size_t kProfileRows = 256;
inline constexpr std::size_t kMinProfileRows = 64;

struct LayerMi {
  std::size_t layer = 0;  // 1-based hidden layer index
  double i_x_phi = 0.0;   // bits
  double i_y_phi = 0.0;   // bits
  bool warning = false;   // an estimate fell below −1e-6
};

// I(x;Φ_l) and I(y;Φ_l) for every hidden layer on the first 256 rows (all
// rows when fewer). When `last_only` is set only the final hidden layer is
// profiled.
inline std::vector<LayerMi> mi_profile(const MlpModel& m, const LabeledDataset& data,
                                       double alpha = kDefaultAlpha, bool last_only = false) {
  if (data.size() < kMinProfileRows)
    throw std::invalid_argument("mi_profile: need at least 64 rows, got " + std::to_string(data.size()));
  const std::size_t rows = std::min(kProfileRows, data.size());
  std::vector<std::size_t> idx(rows);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const LabeledDataset batch = data.subset(idx);

  const NpdMatrix ax = feature_npd(batch.features);
  const NpdMatrix ay = label_npd(batch.labels);
  const double sx = renyi_entropy(ax, alpha);
  const double sy = renyi_entropy(ay, alpha);
  const Activations act = forward_values(m, batch.features);

  std::vector<LayerMi> out;
  const std::size_t first = last_only ? act.hidden.size() - 1 : 0;
  for (std::size_t l = first; l < act.hidden.size(); ++l) {
    const NpdMatrix ap = feature_npd(act.hidden[l]);
    const double sp = renyi_entropy(ap, alpha);
    const ReportedMi ix = report_mi(sx + sp - renyi_entropy(joint_npd(ax, ap), alpha));
    const ReportedMi iy = report_mi(sy + sp - renyi_entropy(joint_npd(ay, ap), alpha));
    out.push_back({l + 1, ix.bits, iy.bits, ix.warning || iy.warning});
  }
  return out;
}

// layer,i_x_phi_bits,i_y_phi_bits
inline void write_mi_profile_csv(std::ostream& os, const std::vector<LayerMi>& rows) {
  os << "layer,i_x_phi_bits,i_y_phi_bits\n";
  for (const auto& r : rows)
    os << r.layer << ',' << format_real(r.i_x_phi) << ',' << format_real(r.i_y_phi) << '\n';
}

}  // namespace ims

#endif  // IMS_EXPERIMENT_HPP
