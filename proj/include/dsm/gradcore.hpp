#pragma once

// Reverse-mode differentiation over a fixed set of dense matrix operations.
//
// A Tape records operations on row-batched matrices in creation order, which
// is a valid topological order, so backward() is a single reverse sweep.
// Leaves created with Tape::param() read from a ParamStore and accumulate
// their gradients back into it.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dsm/distributions.hpp"
#include "dsm/rng.hpp"

namespace dsm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Raised when an operand shape does not match; names the layer or operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// ---------------------------------------------------------------------------
// Parameters

using ParamId = std::size_t;

struct Param {
  std::string name;
  Matrix value;
  Matrix grad;
};

// Named parameter arrays with parallel gradient accumulators. Insertion order
// is preserved and defines iteration and serialization order.
class ParamStore {
 public:
  ParamId add(std::string name, Matrix value) {
    if (index_.contains(name)) throw UsageError("duplicate parameter '" + name + "'");
    Matrix grad = Matrix::Zero(value.rows(), value.cols());
    index_.emplace(name, params_.size());
    params_.push_back(Param{std::move(name), std::move(value), std::move(grad)});
    return params_.size() - 1;
  }

  ParamId id(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
    return it->second;
  }

  bool contains(const std::string& name) const { return index_.contains(name); }

  Param& operator[](ParamId id) { return params_.at(id); }
  const Param& operator[](ParamId id) const { return params_.at(id); }

  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero();
  }

 private:
  std::vector<Param> params_;
  std::map<std::string, ParamId> index_;
};

// ---------------------------------------------------------------------------
// Activations

enum class ActivationKind { relu6, selu, tanh, softmax };

inline constexpr double kSeluScale = 1.0507009873554804934193349852946;
inline constexpr double kSeluAlpha = 1.6732632423543772848170429916717;

inline double relu6(double x) { return std::min(std::max(x, 0.0), 6.0); }

inline double selu(double x) {
  return x > 0.0 ? kSeluScale * x : kSeluScale * kSeluAlpha * std::expm1(x);
}

inline double relu6_derivative(double x) { return (x > 0.0 && x < 6.0) ? 1.0 : 0.0; }

inline double selu_derivative(double x) {
  return x > 0.0 ? kSeluScale : kSeluScale * kSeluAlpha * std::exp(x);
}

inline Vector softmax(const Vector& logits) {
  const double top = logits.maxCoeff();
  Vector e = (logits.array() - top).exp();
  return e / e.sum();
}

inline Vector log_softmax(const Vector& logits) {
  const double top = logits.maxCoeff();
  const double lse = top + std::log((logits.array() - top).exp().sum());
  return logits.array() - lse;
}

inline double activation(ActivationKind kind, double x) {
  switch (kind) {
    case ActivationKind::relu6: return relu6(x);
    case ActivationKind::selu: return selu(x);
    case ActivationKind::tanh: return std::tanh(x);
    case ActivationKind::softmax: return 1.0;  // softmax of a single logit
  }
  return x;
}

inline Vector activation(ActivationKind kind, const Vector& x) {
  if (kind == ActivationKind::softmax) return softmax(x);
  return x.unaryExpr([kind](double v) { return activation(kind, v); });
}

// ---------------------------------------------------------------------------
// Tape

class Tape;

struct Var {
  int id = -1;
  const Tape* owner = nullptr;
};

class Tape {
 public:
  Tape() = default;
  explicit Tape(ParamStore* store) : store_(store), grads_(store) {}
  // Read-only tape: parameters can be used but backward() cannot write gradients.
  explicit Tape(const ParamStore* store) : store_(store) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  const Matrix& value(Var v) const { return node(v).value; }
  double scalar(Var v) const {
    const auto& m = value(v);
    if (m.size() != 1) throw DimensionError("scalar(): node is not 1x1");
    return m(0, 0);
  }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Matrix m) { return push(std::move(m), {}, nullptr); }

  Var param(ParamId id) {
    if (store_ == nullptr) throw UsageError("tape has no parameter store");
    Var v = push((*store_)[id].value, {}, nullptr);
    nodes_.back().param = static_cast<long>(id);
    nodes_.back().needs_grad = true;
    return v;
  }

  Var param(const std::string& name) {
    if (store_ == nullptr) throw UsageError("tape has no parameter store");
    return param(store_->id(name));
  }

  Var matmul(Var a, Var b, const std::string& where = "matmul") {
    const Matrix& av = value(a);
    const Matrix& bv = value(b);
    if (av.cols() != bv.rows()) {
      throw DimensionError(where + ": expected " + std::to_string(bv.rows()) + " inputs, got " +
                           std::to_string(av.cols()));
    }
    return push(av * bv, {a.id, b.id}, [](Tape& t, int self) {
      auto& n = t.nodes_[self];
      const int ia = n.parents[0];
      const int ib = n.parents[1];
      if (t.nodes_[ia].needs_grad) t.accumulate(ia, n.grad * t.nodes_[ib].value.transpose());
      if (t.nodes_[ib].needs_grad) t.accumulate(ib, t.nodes_[ia].value.transpose() * n.grad);
    });
  }

  // a (n x c) + row (1 x c) broadcast over rows.
  Var add_row(Var a, Var row, const std::string& where = "add_row") {
    const Matrix& av = value(a);
    const Matrix& rv = value(row);
    if (rv.rows() != 1 || rv.cols() != av.cols()) {
      throw DimensionError(where + ": bias has shape " + shape(rv) + ", expected 1x" +
                           std::to_string(av.cols()));
    }
    Matrix out = av.rowwise() + rv.row(0);
    return push(std::move(out), {a.id, row.id}, [](Tape& t, int self) {
      auto& n = t.nodes_[self];
      t.accumulate(n.parents[0], n.grad);
      t.accumulate(n.parents[1], n.grad.colwise().sum());
    });
  }

  // Selects rows of a by index; the backward pass scatter-adds.
  Var gather_rows(Var a, std::span<const int> rows) {
    const Matrix& av = value(a);
    Matrix out(static_cast<Eigen::Index>(rows.size()), av.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i] < 0 || rows[i] >= av.rows()) throw DimensionError("gather_rows: index out of range");
      out.row(static_cast<Eigen::Index>(i)) = av.row(rows[i]);
    }
    std::vector<int> index(rows.begin(), rows.end());
    return push(std::move(out), {a.id}, [index = std::move(index)](Tape& t, int self) {
      auto& n = t.nodes_[self];
      const int ia = n.parents[0];
      const auto& src = t.nodes_[ia].value;
      Matrix g = Matrix::Zero(src.rows(), src.cols());
      for (std::size_t i = 0; i < index.size(); ++i) {
        g.row(index[i]) += n.grad.row(static_cast<Eigen::Index>(i));
      }
      t.accumulate(ia, g);
    });
  }

  Var add(Var a, Var b) {
    same_shape(a, b, "add");
    return push(value(a) + value(b), {a.id, b.id}, [](Tape& t, int self) {
      auto& n = t.nodes_[self];
      t.accumulate(n.parents[0], n.grad);
      t.accumulate(n.parents[1], n.grad);
    });
  }

  Var mul(Var a, Var b) {
    same_shape(a, b, "mul");
    return push(value(a).cwiseProduct(value(b)), {a.id, b.id}, [](Tape& t, int self) {
      auto& n = t.nodes_[self];
      const int ia = n.parents[0];
      const int ib = n.parents[1];
      t.accumulate(ia, n.grad.cwiseProduct(t.nodes_[ib].value));
      t.accumulate(ib, n.grad.cwiseProduct(t.nodes_[ia].value));
    });
  }

  Var scale(Var a, double factor) {
    return push(value(a) * factor, {a.id}, [factor](Tape& t, int self) {
      auto& n = t.nodes_[self];
      t.accumulate(n.parents[0], n.grad * factor);
    });
  }

  Var shift(Var a, double offset) {
    return push(value(a).array() + offset, {a.id}, [](Tape& t, int self) {
      auto& n = t.nodes_[self];
      t.accumulate(n.parents[0], n.grad);
    });
  }

  Var square(Var a) {
    return push(value(a).array().square(), {a.id}, [](Tape& t, int self) {
      auto& n = t.nodes_[self];
      const int ia = n.parents[0];
      t.accumulate(ia, 2.0 * n.grad.cwiseProduct(t.nodes_[ia].value));
    });
  }

  Var sum(Var a) {
    Matrix out(1, 1);
    out(0, 0) = value(a).sum();
    return push(std::move(out), {a.id}, [](Tape& t, int self) {
      auto& n = t.nodes_[self];
      const int ia = n.parents[0];
      const auto& src = t.nodes_[ia].value;
      t.accumulate(ia, Matrix::Constant(src.rows(), src.cols(), n.grad(0, 0)));
    });
  }

  // (n x c) -> (n x 1)
  Var row_sum(Var a) {
    return push(value(a).rowwise().sum(), {a.id}, [](Tape& t, int self) {
      auto& n = t.nodes_[self];
      const int ia = n.parents[0];
      const auto cols = t.nodes_[ia].value.cols();
      t.accumulate(ia, n.grad.replicate(1, cols));
    });
  }

  // sum_i weights_i * a_i for a column a (n x 1); returns 1x1.
  Var weighted_sum(Var a, const Vector& weights) {
    const Matrix& av = value(a);
    if (av.cols() != 1 || av.rows() != weights.size()) {
      throw DimensionError("weighted_sum: operand " + shape(av) + " vs " +
                           std::to_string(weights.size()) + " weights");
    }
    Matrix out(1, 1);
    out(0, 0) = av.col(0).dot(weights);
    return push(std::move(out), {a.id}, [weights](Tape& t, int self) {
      auto& n = t.nodes_[self];
      t.accumulate(n.parents[0], Matrix(weights * n.grad(0, 0)));
    });
  }

  Var activate(Var a, ActivationKind kind) {
    if (kind == ActivationKind::softmax) return softmax_rows(a);
    const Matrix& x = value(a);
    Matrix out = x.unaryExpr([kind](double v) { return activation(kind, v); });
    return push(std::move(out), {a.id}, [kind](Tape& t, int self) {
      auto& n = t.nodes_[self];
      const int ia = n.parents[0];
      const Matrix& x = t.nodes_[ia].value;
      Matrix d;
      switch (kind) {
        case ActivationKind::relu6: d = x.unaryExpr(&relu6_derivative); break;
        case ActivationKind::selu: d = x.unaryExpr(&selu_derivative); break;
        default: d = 1.0 - n.value.array().square(); break;  // tanh
      }
      t.accumulate(ia, n.grad.cwiseProduct(d));
    });
  }

  Var softmax_rows(Var a) {
    Matrix out = value(a);
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
      out.row(r) = softmax(out.row(r).transpose()).transpose();
    }
    return push(std::move(out), {a.id}, [](Tape& t, int self) {
      auto& n = t.nodes_[self];
      const Matrix& y = n.value;
      Vector dot = n.grad.cwiseProduct(y).rowwise().sum();
      Matrix g = y.cwiseProduct(n.grad - dot.replicate(1, y.cols()));
      t.accumulate(n.parents[0], g);
    });
  }

  Var log_softmax_rows(Var a) {
    Matrix out = value(a);
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
      out.row(r) = log_softmax(out.row(r).transpose()).transpose();
    }
    return push(std::move(out), {a.id}, [](Tape& t, int self) {
      auto& n = t.nodes_[self];
      Matrix probs = n.value.array().exp();
      Vector total = n.grad.rowwise().sum();
      t.accumulate(n.parents[0], n.grad - probs.cwiseProduct(total.replicate(1, probs.cols())));
    });
  }

  enum class PrimitiveTerm { log_pdf, log_survival };

  // Elementwise primitive log density or log survival. log_shape and log_scale
  // are n x K; times has n entries (row i uses times[i] for every column).
  Var primitive(PrimitiveFamily family, PrimitiveTerm term, Var log_shape, Var log_scale,
                std::span<const double> times) {
    same_shape(log_shape, log_scale, "primitive");
    const Matrix& a = value(log_shape);
    const Matrix& b = value(log_scale);
    if (static_cast<std::size_t>(a.rows()) != times.size()) {
      throw DimensionError("primitive: " + std::to_string(a.rows()) + " rows vs " +
                           std::to_string(times.size()) + " times");
    }
    Matrix out(a.rows(), a.cols());
    Matrix da(a.rows(), a.cols());
    Matrix db(a.rows(), a.cols());
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
      for (Eigen::Index r = 0; r < a.rows(); ++r) {
        const PrimitiveParams p{a(r, c), b(r, c)};
        const double t = times[static_cast<std::size_t>(r)];
        const TermWithGradient term_value = term == PrimitiveTerm::log_pdf
                                                ? log_pdf_with_gradient(family, p, t)
                                                : log_survival_with_gradient(family, p, t);
        out(r, c) = term_value.value;
        da(r, c) = term_value.grad.d_log_shape;
        db(r, c) = term_value.grad.d_log_scale;
      }
    }
    return push(std::move(out), {log_shape.id, log_scale.id},
                [da = std::move(da), db = std::move(db)](Tape& t, int self) {
                  auto& n = t.nodes_[self];
                  t.accumulate(n.parents[0], n.grad.cwiseProduct(da));
                  t.accumulate(n.parents[1], n.grad.cwiseProduct(db));
                });
  }

  // Reverse sweep from a 1x1 node. Parameter gradients are added to the
  // store's accumulators; calling backward() again adds them again.
  double backward(Var loss) {
    if (loss.owner != this || loss.id < 0 || static_cast<std::size_t>(loss.id) >= nodes_.size()) {
      throw UsageError("backward() called on a node that was not recorded on this tape");
    }
    const double out = scalar(loss);
    if (grads_ == nullptr && store_ != nullptr) {
      throw UsageError("backward() on a read-only tape");
    }
    for (auto& n : nodes_) n.grad.resize(0, 0);
    nodes_[static_cast<std::size_t>(loss.id)].grad = Matrix::Ones(1, 1);
    for (int i = loss.id; i >= 0; --i) {
      auto& n = nodes_[static_cast<std::size_t>(i)];
      if (n.grad.size() == 0) continue;
      if (n.backprop) n.backprop(*this, i);
      if (n.param >= 0) (*grads_)[static_cast<ParamId>(n.param)].grad += n.grad;
    }
    return out;
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::vector<int> parents;
    std::function<void(Tape&, int)> backprop;
    long param = -1;
    bool needs_grad = false;
  };

  const Node& node(Var v) const {
    if (v.owner != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
      throw UsageError("variable does not belong to this tape");
    }
    return nodes_[static_cast<std::size_t>(v.id)];
  }

  static std::string shape(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
  }

  void same_shape(Var a, Var b, const char* op) const {
    const Matrix& av = value(a);
    const Matrix& bv = value(b);
    if (av.rows() != bv.rows() || av.cols() != bv.cols()) {
      throw DimensionError(std::string(op) + ": shapes " + shape(av) + " and " + shape(bv));
    }
  }

  Var push(Matrix value, std::vector<int> parents, std::function<void(Tape&, int)> backprop) {
    bool needs_grad = false;
    for (int p : parents) needs_grad = needs_grad || nodes_[static_cast<std::size_t>(p)].needs_grad;
    nodes_.push_back(
        Node{std::move(value), Matrix(), std::move(parents), std::move(backprop), -1, needs_grad});
    return Var{static_cast<int>(nodes_.size() - 1), this};
  }

  void accumulate(int id, const Matrix& g) {
    auto& dest = nodes_[static_cast<std::size_t>(id)];
    if (!dest.needs_grad) return;
    auto& target = dest.grad;
    if (target.size() == 0) {
      target = g;
    } else {
      target += g;
    }
  }

  const ParamStore* store_ = nullptr;
  ParamStore* grads_ = nullptr;
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Multilayer perceptron

struct LayerSpec {
  int input_dim = 0;
  std::vector<int> hidden;  // widths; depth = hidden.size()

  int output_dim() const { return hidden.empty() ? input_dim : hidden.back(); }
};

struct Mlp {
  LayerSpec spec;
  std::vector<ParamId> weights;
  std::vector<ParamId> biases;
  ActivationKind kind = ActivationKind::relu6;

  // Registers "layer<i>.weight" (fan_in x fan_out, Glorot-uniform) and
  // "layer<i>.bias" (zeros) in the store.
  static Mlp create(ParamStore& store, const LayerSpec& spec, Rng& rng) {
    if (spec.hidden.empty()) throw std::invalid_argument("MLP needs at least one hidden layer");
    Mlp mlp;
    mlp.spec = spec;
    int fan_in = spec.input_dim;
    for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
      const int fan_out = spec.hidden[i];
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      Matrix w(fan_in, fan_out);
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = rng.uniform(-limit, limit);
      }
      const std::string prefix = "layer" + std::to_string(i);
      mlp.weights.push_back(store.add(prefix + ".weight", std::move(w)));
      mlp.biases.push_back(store.add(prefix + ".bias", Matrix::Zero(1, fan_out)));
      fan_in = fan_out;
    }
    return mlp;
  }

  // Binds to parameters already present in a store (after deserialization).
  static Mlp bind(const ParamStore& store, const LayerSpec& spec) {
    Mlp mlp;
    mlp.spec = spec;
    for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
      const std::string prefix = "layer" + std::to_string(i);
      mlp.weights.push_back(store.id(prefix + ".weight"));
      mlp.biases.push_back(store.id(prefix + ".bias"));
    }
    return mlp;
  }

  Var forward(Tape& tape, Var x) const {
    Var h = x;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      const std::string where = "layer " + std::to_string(i);
      h = tape.matmul(h, tape.param(weights[i]), where);
      h = tape.add_row(h, tape.param(biases[i]), where);
      h = tape.activate(h, kind);
    }
    return h;
  }
};

// Final hidden representation for a batch of rows (n x d) -> (n x width).
inline Matrix mlp_forward(const Matrix& x, const ParamStore& store, const Mlp& mlp) {
  Tape tape(&store);
  return tape.value(mlp.forward(tape, tape.constant(x)));
}

}  // namespace dsm
