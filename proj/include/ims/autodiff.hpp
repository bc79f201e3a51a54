#ifndef IMS_AUTODIFF_HPP
#define IMS_AUTODIFF_HPP

// First-order reverse-mode differentiation over matrix-valued nodes.
//
// A Tape owns every node created while a loss is built. Nodes are appended
// in evaluation order, so parents always precede children and the backward
// pass is a single reverse sweep. Everything is double precision.

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ims/numerics.hpp"

namespace ims::ad {

class Tape;

enum class OpKind {
  Param,
  Constant,
  MatMul,
  Add,
  AddRow,
  Sub,
  Hadamard,
  Scale,
  Tanh,
  Relu,
  Sum,
  Square,
  SoftmaxRows,
  SoftmaxCrossEntropy,
  RowSum,
  CenterColumns,
  Custom,
};

// Handle to a node on a tape. Cheap to copy; only valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t index = 0;

  const Matrix& value() const;
  double scalar() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

struct TapeNode {
  OpKind kind = OpKind::Constant;
  std::vector<std::size_t> parents;
  Matrix value;
  Matrix adjoint;
  std::string label;  // parameter name or custom-op name
  // Reads this node's adjoint and accumulates into its parents' adjoints.
  std::function<void(Tape&, std::size_t)> backward;
};

struct Gradient {
  std::map<std::string, Matrix> blocks;

  const Matrix& at(const std::string& name) const { return blocks.at(name); }
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var param(std::string name, Matrix value) {
    for (const auto& n : nodes_)
      if (n.kind == OpKind::Param && n.label == name)
        throw std::invalid_argument("Tape::param: duplicate parameter '" + name + "'");
    return push(OpKind::Param, {}, std::move(value), nullptr, std::move(name));
  }

  Var constant(Matrix value) { return push(OpKind::Constant, {}, std::move(value), nullptr); }

  Var push(OpKind kind, std::vector<std::size_t> parents, Matrix value,
           std::function<void(Tape&, std::size_t)> backward, std::string label = {}) {
    TapeNode node;
    node.kind = kind;
    node.parents = std::move(parents);
    node.adjoint = Matrix(value.rows(), value.cols());
    node.value = std::move(value);
    node.backward = std::move(backward);
    node.label = std::move(label);
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1};
  }

  const TapeNode& node(std::size_t i) const { return nodes_.at(i); }
  TapeNode& node(std::size_t i) { return nodes_.at(i); }
  std::size_t size() const { return nodes_.size(); }

  const Matrix& value(Var v) const { return nodes_.at(v.index).value; }
  const Matrix& adjoint(Var v) const { return nodes_.at(v.index).adjoint; }

  void zero_adjoints() {
    for (auto& n : nodes_) std::fill(n.adjoint.data().begin(), n.adjoint.data().end(), 0.0);
  }

  // Adjoints are re-zeroed first, so repeated calls give identical results.
  void backward(Var root) {
    const Matrix& rv = value(root);
    if (rv.rows() != 1 || rv.cols() != 1)
      throw std::invalid_argument("Tape::backward: root must be a 1x1 scalar");
    zero_adjoints();
    nodes_[root.index].adjoint(0, 0) = 1.0;
    for (std::size_t i = root.index + 1; i-- > 0;) {
      if (nodes_[i].backward) nodes_[i].backward(*this, i);
    }
  }

  Gradient gradient() const {
    Gradient g;
    for (const auto& n : nodes_)
      if (n.kind == OpKind::Param) g.blocks.emplace(n.label, n.adjoint);
    return g;
  }

  // Adds `delta` into the adjoint of node `i`, enforcing the shape contract.
  void accumulate(std::size_t i, const Matrix& delta) {
    Matrix& adj = nodes_.at(i).adjoint;
    if (!adj.same_shape(delta))
      throw std::logic_error("Tape: adjoint shape mismatch on node " + std::to_string(i));
    adj += delta;
  }

 private:
  std::vector<TapeNode> nodes_;
};

inline const Matrix& Var::value() const { return tape->value(*this); }
inline double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw std::logic_error("Var::scalar: node is not 1x1");
  return v(0, 0);
}

namespace detail {

inline Tape& same_tape(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape)
    throw std::invalid_argument("autodiff: operands live on different tapes");
  return *a.tape;
}

inline void require_same_shape(Var a, Var b, const char* op) {
  if (!a.value().same_shape(b.value()))
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  Matrix out = ims::matmul(a.value(), b.value());
  return t.push(OpKind::MatMul, {a.index, b.index}, std::move(out),
                [a, b](Tape& tp, std::size_t self) {
                  const Matrix& g = tp.node(self).adjoint;
                  tp.accumulate(a.index, matmul_nt(g, tp.value(b)));
                  tp.accumulate(b.index, matmul_tn(tp.value(a), g));
                });
}

inline Var add(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  detail::require_same_shape(a, b, "add");
  return t.push(OpKind::Add, {a.index, b.index}, a.value() + b.value(),
                [a, b](Tape& tp, std::size_t self) {
                  const Matrix g = tp.node(self).adjoint;
                  tp.accumulate(a.index, g);
                  tp.accumulate(b.index, g);
                });
}

inline Var sub(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  detail::require_same_shape(a, b, "sub");
  return t.push(OpKind::Sub, {a.index, b.index}, a.value() - b.value(),
                [a, b](Tape& tp, std::size_t self) {
                  const Matrix g = tp.node(self).adjoint;
                  tp.accumulate(a.index, g);
                  tp.accumulate(b.index, g * -1.0);
                });
}

// x (n×m) plus a 1×m row broadcast over every row.
inline Var add_row(Var x, Var row) {
  Tape& t = detail::same_tape(x, row);
  const Matrix& xv = x.value();
  const Matrix& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != xv.cols())
    throw std::invalid_argument("add_row: row must be 1 x cols(x)");
  Matrix out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += rv(0, c);
  return t.push(OpKind::AddRow, {x.index, row.index}, std::move(out),
                [x, row](Tape& tp, std::size_t self) {
                  const Matrix& g = tp.node(self).adjoint;
                  Matrix gr(1, g.cols());
                  for (std::size_t r = 0; r < g.rows(); ++r)
                    for (std::size_t c = 0; c < g.cols(); ++c) gr(0, c) += g(r, c);
                  tp.accumulate(x.index, g);
                  tp.accumulate(row.index, gr);
                });
}

inline Var hadamard(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  detail::require_same_shape(a, b, "hadamard");
  return t.push(OpKind::Hadamard, {a.index, b.index}, ims::hadamard(a.value(), b.value()),
                [a, b](Tape& tp, std::size_t self) {
                  const Matrix& g = tp.node(self).adjoint;
                  tp.accumulate(a.index, ims::hadamard(g, tp.value(b)));
                  tp.accumulate(b.index, ims::hadamard(g, tp.value(a)));
                });
}

inline Var scale(Var x, double s) {
  return x.tape->push(OpKind::Scale, {x.index}, x.value() * s,
                      [x, s](Tape& tp, std::size_t self) {
                        tp.accumulate(x.index, tp.node(self).adjoint * s);
                      });
}

inline Var tanh(Var x) {
  Matrix out = x.value();
  for (double& v : out.data()) v = std::tanh(v);
  return x.tape->push(OpKind::Tanh, {x.index}, std::move(out), [x](Tape& tp, std::size_t self) {
    const Matrix& y = tp.node(self).value;
    Matrix d = tp.node(self).adjoint;
    for (std::size_t i = 0; i < d.size(); ++i) d.data()[i] *= 1.0 - y.data()[i] * y.data()[i];
    tp.accumulate(x.index, d);
  });
}

inline Var relu(Var x) {
  Matrix out = x.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return x.tape->push(OpKind::Relu, {x.index}, std::move(out), [x](Tape& tp, std::size_t self) {
    const Matrix& in = tp.value(x);
    Matrix d = tp.node(self).adjoint;
    for (std::size_t i = 0; i < d.size(); ++i)
      if (in.data()[i] <= 0.0) d.data()[i] = 0.0;
    tp.accumulate(x.index, d);
  });
}

inline Var sum(Var x) {
  Matrix out(1, 1, x.value().sum());
  return x.tape->push(OpKind::Sum, {x.index}, std::move(out), [x](Tape& tp, std::size_t self) {
    const double g = tp.node(self).adjoint(0, 0);
    const Matrix& in = tp.value(x);
    tp.accumulate(x.index, Matrix(in.rows(), in.cols(), g));
  });
}

inline Var square(Var x) {
  Matrix out = x.value();
  for (double& v : out.data()) v *= v;
  return x.tape->push(OpKind::Square, {x.index}, std::move(out), [x](Tape& tp, std::size_t self) {
    Matrix d = tp.node(self).adjoint;
    const Matrix& in = tp.value(x);
    for (std::size_t i = 0; i < d.size(); ++i) d.data()[i] *= 2.0 * in.data()[i];
    tp.accumulate(x.index, d);
  });
}

// n×m → n×1 row sums.
inline Var row_sum(Var x) {
  const Matrix& in = x.value();
  Matrix out(in.rows(), 1);
  for (std::size_t r = 0; r < in.rows(); ++r)
    for (std::size_t c = 0; c < in.cols(); ++c) out(r, 0) += in(r, c);
  return x.tape->push(OpKind::RowSum, {x.index}, std::move(out),
                      [x](Tape& tp, std::size_t self) {
                        const Matrix& g = tp.node(self).adjoint;
                        const Matrix& in2 = tp.value(x);
                        Matrix d(in2.rows(), in2.cols());
                        for (std::size_t r = 0; r < d.rows(); ++r)
                          for (std::size_t c = 0; c < d.cols(); ++c) d(r, c) = g(r, 0);
                        tp.accumulate(x.index, d);
                      });
}

// Subtracts each column's mean.
inline Var center_columns(Var x) {
  const Matrix& in = x.value();
  const std::size_t n = in.rows();
  Matrix out = in;
  for (std::size_t c = 0; c < in.cols(); ++c) {
    double m = 0.0;
    for (std::size_t r = 0; r < n; ++r) m += in(r, c);
    m /= static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) out(r, c) -= m;
  }
  return x.tape->push(OpKind::CenterColumns, {x.index}, std::move(out),
                      [x](Tape& tp, std::size_t self) {
                        Matrix g = tp.node(self).adjoint;
                        const std::size_t rows = g.rows();
                        for (std::size_t c = 0; c < g.cols(); ++c) {
                          double m = 0.0;
                          for (std::size_t r = 0; r < rows; ++r) m += g(r, c);
                          m /= static_cast<double>(rows);
                          for (std::size_t r = 0; r < rows; ++r) g(r, c) -= m;
                        }
                        tp.accumulate(x.index, g);
                      });
}

inline Matrix softmax_rows_value(const Matrix& z) {
  Matrix p = z;
  for (std::size_t r = 0; r < p.rows(); ++r) {
    auto row = p.row(r);
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double s = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      s += v;
    }
    for (double& v : row) v /= s;
  }
  return p;
}

inline Var softmax_rows(Var z) {
  return z.tape->push(OpKind::SoftmaxRows, {z.index}, softmax_rows_value(z.value()),
                      [z](Tape& tp, std::size_t self) {
                        const Matrix& p = tp.node(self).value;
                        const Matrix& g = tp.node(self).adjoint;
                        Matrix d(p.rows(), p.cols());
                        for (std::size_t r = 0; r < p.rows(); ++r) {
                          double dot = 0.0;
                          for (std::size_t c = 0; c < p.cols(); ++c) dot += g(r, c) * p(r, c);
                          for (std::size_t c = 0; c < p.cols(); ++c)
                            d(r, c) = p(r, c) * (g(r, c) - dot);
                        }
                        tp.accumulate(z.index, d);
                      });
}

// Per-sample cross-entropy, n×C logits → n×1 losses (natural log).
inline Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  const Matrix& z = logits.value();
  if (labels.size() != z.rows())
    throw std::invalid_argument("softmax_cross_entropy: label count differs from rows");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= z.cols())
      throw std::out_of_range("softmax_cross_entropy: label index out of range");
  Matrix out(z.rows(), 1);
  for (std::size_t r = 0; r < z.rows(); ++r) {
    auto row = z.row(r);
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double s = 0.0;
    for (double v : row) s += std::exp(v - mx);
    out(r, 0) = (mx + std::log(s)) - row[static_cast<std::size_t>(labels[r])];
  }
  std::vector<int> ys(labels.begin(), labels.end());
  return logits.tape->push(OpKind::SoftmaxCrossEntropy, {logits.index}, std::move(out),
                           [logits, ys = std::move(ys)](Tape& tp, std::size_t self) {
                             const Matrix& g = tp.node(self).adjoint;
                             Matrix d = softmax_rows_value(tp.value(logits));
                             for (std::size_t r = 0; r < d.rows(); ++r) {
                               d(r, static_cast<std::size_t>(ys[r])) -= 1.0;
                               for (std::size_t c = 0; c < d.cols(); ++c) d(r, c) *= g(r, 0);
                             }
                             tp.accumulate(logits.index, d);
                           });
}

// Scalar node whose local derivative with respect to `x` is already known.
inline Var custom_scalar(Var x, double value, Matrix local_grad, std::string name) {
  if (!local_grad.same_shape(x.value()))
    throw std::invalid_argument("custom_scalar: gradient shape differs from input");
  return x.tape->push(OpKind::Custom, {x.index}, Matrix(1, 1, value),
                      [x, g = std::move(local_grad)](Tape& tp, std::size_t self) {
                        tp.accumulate(x.index, g * tp.node(self).adjoint(0, 0));
                      },
                      std::move(name));
}

// A user-supplied matrix→scalar operation with an analytic backward rule.
class CustomOp {
 public:
  using Forward = std::function<double(const Matrix&)>;
  using Backward = std::function<Matrix(const Matrix&)>;

  CustomOp(std::string name, Forward forward, Backward backward)
      : def_(std::make_shared<Def>(Def{std::move(name), std::move(forward), std::move(backward)})) {}

  const std::string& name() const { return def_->name; }

  Var operator()(Var x) const {
    const double v = def_->forward(x.value());
    auto def = def_;
    return x.tape->push(OpKind::Custom, {x.index}, Matrix(1, 1, v),
                        [x, def](Tape& tp, std::size_t self) {
                          const Matrix& in = tp.value(x);
                          Matrix local = def->backward(in);
                          if (!local.same_shape(in))
                            throw std::logic_error("custom op '" + def->name +
                                                   "': backward returned " +
                                                   std::to_string(local.rows()) + "x" +
                                                   std::to_string(local.cols()) + " for a " +
                                                   std::to_string(in.rows()) + "x" +
                                                   std::to_string(in.cols()) + " input");
                          tp.accumulate(x.index, local * tp.node(self).adjoint(0, 0));
                        },
                        def_->name);
  }

 private:
  struct Def {
    std::string name;
    Forward forward;
    Backward backward;
  };
  std::shared_ptr<const Def> def_;
};

inline CustomOp register_custom(std::string name, CustomOp::Forward forward,
                                CustomOp::Backward backward) {
  return CustomOp(std::move(name), std::move(forward), std::move(backward));
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking.

using ParamSet = std::map<std::string, Matrix>;
using LossBuilder = std::function<Var(Tape&, const std::map<std::string, Var>&)>;

struct BlockCheck {
  std::string name;
  double max_abs_error = 0.0;
  double max_relative_error = 0.0;  // ‖tape − fd‖∞ / max(‖fd‖∞, 1e-12)
};

struct GradientCheckReport {
  std::vector<BlockCheck> blocks;
  double max_relative_error = 0.0;
  bool passed = false;
};

inline double evaluate_loss(const LossBuilder& build, const ParamSet& params) {
  Tape t;
  std::map<std::string, Var> vars;
  for (const auto& [name, value] : params) vars.emplace(name, t.param(name, value));
  return build(t, vars).scalar();
}

inline Gradient tape_gradient(const LossBuilder& build, const ParamSet& params,
                              double* loss_out = nullptr) {
  Tape t;
  std::map<std::string, Var> vars;
  for (const auto& [name, value] : params) vars.emplace(name, t.param(name, value));
  Var loss = build(t, vars);
  if (loss_out) *loss_out = loss.scalar();
  t.backward(loss);
  return t.gradient();
}

inline GradientCheckReport gradient_check(const LossBuilder& build, const ParamSet& params,
                                          double step, double tolerance) {
  GradientCheckReport report;
  const Gradient analytic = tape_gradient(build, params);
  ParamSet probe = params;
  for (const auto& [name, value] : params) {
    Matrix numeric(value.rows(), value.cols());
    Matrix& p = probe.at(name);
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double orig = p.data()[i];
      p.data()[i] = orig + step;
      const double up = evaluate_loss(build, probe);
      p.data()[i] = orig - step;
      const double down = evaluate_loss(build, probe);
      p.data()[i] = orig;
      numeric.data()[i] = (up - down) / (2.0 * step);
    }
    const Matrix diff = analytic.at(name) - numeric;
    BlockCheck b;
    b.name = name;
    b.max_abs_error = diff.max_abs();
    b.max_relative_error = b.max_abs_error / std::max(numeric.max_abs(), 1e-12);
    report.max_relative_error = std::max(report.max_relative_error, b.max_relative_error);
    report.blocks.push_back(std::move(b));
  }
  report.passed = report.max_relative_error < tolerance;
  return report;
}

}  // namespace ims::ad

#endif  // IMS_AUTODIFF_HPP
