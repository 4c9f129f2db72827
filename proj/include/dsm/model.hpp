#pragma once

// The mixture-of-primitives survival model.
//
// A shared MLP maps covariates x to a representation phi(x). Each risk m owns
// a head: gating logits phi(x)^T w, and per-component parameters
//   log_scale_k = base_log_scale_k + act(phi(x)^T zeta)_k
//   log_shape_k = base_log_shape_k + act(phi(x)^T xi)_k
// with act = SELU for Weibull and tanh for Log-Normal. The shift is applied in
// the stored (log) coordinates so scales and Weibull shapes stay positive.
//
// Internally the model works on times divided by time_scale. Everything that
// takes or returns times through the public prediction API uses raw time.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dsm/distributions.hpp"
#include "dsm/gradcore.hpp"
#include "dsm/rng.hpp"

namespace dsm {

struct ModelConfig {
  PrimitiveFamily family = PrimitiveFamily::weibull;
  int k = 4;
  int risks = 1;
  double alpha = 1.0;
  double lambda = 1e-8;
  LayerSpec layers;
};

struct RiskHead {
  ParamId gate = 0;        // hidden x K
  ParamId scale_head = 0;  // hidden x K, zeta
  ParamId shape_head = 0;  // hidden x K, xi
  ParamId base_log_scale = 0;  // 1 x K
  ParamId base_log_shape = 0;  // 1 x K
  PrimitiveParams anchor;      // prior mean for the base parameters
};

struct InstanceMixture {
  PrimitiveFamily family = PrimitiveFamily::weibull;
  Vector weights;
  std::vector<PrimitiveParams> components;
};

// Per-row mixture parameters for a batch, each n x K.
struct MixtureBatch {
  PrimitiveFamily family = PrimitiveFamily::weibull;
  Matrix weights;
  Matrix log_shape;
  Matrix log_scale;
};

inline ActivationKind head_activation(PrimitiveFamily family) {
  return family == PrimitiveFamily::weibull ? ActivationKind::selu : ActivationKind::tanh;
}

inline std::string risk_prefix(int risk) { return "risk" + std::to_string(risk); }

class DsmModel {
 public:
  ModelConfig config;
  ParamStore store;
  Mlp mlp;
  std::vector<RiskHead> heads;  // heads[m - 1] is risk m
  double time_scale = 1.0;
  std::vector<std::string> feature_names;

  // Fresh model. Base parameters start at the per-risk anchors jittered by
  // N(0, jitter^2); weights are Glorot-uniform, biases zero.
  static DsmModel create(const ModelConfig& config, std::span<const PrimitiveParams> anchors,
                         Rng& rng, double jitter = 0.1) {
    validate(config);
    if (!anchors.empty() && anchors.size() != static_cast<std::size_t>(config.risks)) {
      throw std::invalid_argument("one anchor per risk required");
    }
    DsmModel model;
    model.config = config;
    model.mlp = Mlp::create(model.store, config.layers, rng);
    const int hidden = config.layers.output_dim();
    for (int m = 1; m <= config.risks; ++m) {
      const PrimitiveParams anchor = anchors.empty() ? PrimitiveParams{} : anchors[m - 1];
      const std::string prefix = risk_prefix(m);
      RiskHead head;
      head.anchor = anchor;
      head.gate = model.store.add(prefix + ".gate", glorot(hidden, config.k, rng));
      head.scale_head = model.store.add(prefix + ".scale_head", glorot(hidden, config.k, rng));
      head.shape_head = model.store.add(prefix + ".shape_head", glorot(hidden, config.k, rng));
      Matrix base_scale(1, config.k);
      Matrix base_shape(1, config.k);
      for (int c = 0; c < config.k; ++c) {
        base_scale(0, c) = anchor.log_scale + jitter * rng.normal();
        base_shape(0, c) = anchor.log_shape + jitter * rng.normal();
      }
      head.base_log_scale = model.store.add(prefix + ".base_log_scale", std::move(base_scale));
      head.base_log_shape = model.store.add(prefix + ".base_log_shape", std::move(base_shape));
      model.heads.push_back(head);
    }
    return model;
  }

  // Rebinds mlp and heads to a store populated by deserialization.
  void bind(std::span<const PrimitiveParams> anchors) {
    validate(config);
    mlp = Mlp::bind(store, config.layers);
    heads.clear();
    for (int m = 1; m <= config.risks; ++m) {
      const std::string prefix = risk_prefix(m);
      RiskHead head;
      head.anchor = anchors[static_cast<std::size_t>(m - 1)];
      head.gate = store.id(prefix + ".gate");
      head.scale_head = store.id(prefix + ".scale_head");
      head.shape_head = store.id(prefix + ".shape_head");
      head.base_log_scale = store.id(prefix + ".base_log_scale");
      head.base_log_shape = store.id(prefix + ".base_log_shape");
      heads.push_back(head);
    }
  }

  const RiskHead& head(int risk) const {
    if (risk < 1 || risk > config.risks) {
      throw std::out_of_range("risk " + std::to_string(risk) + " outside 1.." +
                              std::to_string(config.risks));
    }
    return heads[static_cast<std::size_t>(risk - 1)];
  }

  int input_dim() const { return config.layers.input_dim; }
  int hidden_dim() const { return config.layers.output_dim(); }

  static void validate(const ModelConfig& config) {
    if (config.k < 1) throw std::invalid_argument("K must be >= 1");
    if (config.risks < 1) throw std::invalid_argument("at least one risk required");
    if (config.alpha < 0.0 || config.alpha > 1.0) throw std::invalid_argument("alpha must be in [0, 1]");
    if (config.lambda < 0.0) throw std::invalid_argument("lambda must be >= 0");
    if (config.layers.input_dim < 1) throw std::invalid_argument("input dimension must be >= 1");
    if (config.layers.hidden.empty()) throw std::invalid_argument("at least one hidden layer required");
  }

 private:
  static Matrix glorot(int fan_in, int fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Matrix w(fan_in, fan_out);
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = rng.uniform(-limit, limit);
    }
    return w;
  }
};

// ---------------------------------------------------------------------------
// Graph construction

struct RiskGraph {
  Var logits;
  Var log_shape;
  Var log_scale;
};

inline void check_input(const DsmModel& model, const Matrix& x) {
  if (x.cols() != model.input_dim()) {
    throw DimensionError("layer 0: expected " + std::to_string(model.input_dim()) +
                         " inputs, got " + std::to_string(x.cols()));
  }
}

inline RiskGraph risk_graph(Tape& tape, const DsmModel& model, Var phi, int risk) {
  const RiskHead& h = model.head(risk);
  const ActivationKind act = head_activation(model.config.family);
  RiskGraph g;
  g.logits = tape.matmul(phi, tape.param(h.gate), risk_prefix(risk) + ".gate");
  Var scale_shift = tape.activate(tape.matmul(phi, tape.param(h.scale_head)), act);
  Var shape_shift = tape.activate(tape.matmul(phi, tape.param(h.shape_head)), act);
  g.log_scale = tape.add_row(scale_shift, tape.param(h.base_log_scale));
  g.log_shape = tape.add_row(shape_shift, tape.param(h.base_log_shape));
  return g;
}

// Prior penalty for one risk: lambda * sum_k (base_scale_k - anchor)^2 + (base_shape_k - anchor)^2.
inline Var prior_graph(Tape& tape, const DsmModel& model, int risk) {
  const RiskHead& h = model.head(risk);
  Var ds = tape.shift(tape.param(h.base_log_scale), -h.anchor.log_scale);
  Var dh = tape.shift(tape.param(h.base_log_shape), -h.anchor.log_shape);
  Var total = tape.add(tape.sum(tape.square(ds)), tape.sum(tape.square(dh)));
  return tape.scale(total, model.config.lambda);
}

inline double prior_loss(const DsmModel& model, int risk) {
  Tape tape(&model.store);
  return tape.scalar(prior_graph(tape, model, risk));
}

// Combined objective on a batch with times already in model units:
//   sum_m [ -mean_{label = m} ELBO_U - alpha * mean_{label != m} ELBO_C + prior_m ].
// An empty group contributes zero.
inline Var loss_graph(Tape& tape, const DsmModel& model, const Matrix& x,
                      std::span<const double> times, std::span<const int> labels) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (n == 0) throw std::invalid_argument("combined_loss: empty batch");
  if (times.size() != n || labels.size() != n) {
    throw DimensionError("combined_loss: rows, times and labels differ in length");
  }
  check_input(model, x);
  for (int label : labels) {
    if (label < 0 || label > model.config.risks) {
      throw std::invalid_argument("label " + std::to_string(label) + " outside 0.." +
                                  std::to_string(model.config.risks));
    }
  }
  const PrimitiveFamily family = model.config.family;
  Var phi = model.mlp.forward(tape, tape.constant(x));
  Var total = tape.constant(Matrix::Zero(1, 1));
  for (int m = 1; m <= model.config.risks; ++m) {
    RiskGraph g = risk_graph(tape, model, phi, m);
    Var weights = tape.softmax_rows(g.logits);
    std::vector<int> uncensored;
    std::vector<int> censored;
    std::vector<double> t_uncensored;
    std::vector<double> t_censored;
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i] == m) {
        uncensored.push_back(static_cast<int>(i));
        t_uncensored.push_back(times[i]);
      } else {
        censored.push_back(static_cast<int>(i));
        t_censored.push_back(times[i]);
      }
    }
    auto group_mean = [&](const std::vector<int>& rows, const std::vector<double>& t,
                          Tape::PrimitiveTerm term) {
      Var w = tape.gather_rows(weights, rows);
      Var a = tape.gather_rows(g.log_shape, rows);
      Var b = tape.gather_rows(g.log_scale, rows);
      Var terms = tape.primitive(family, term, a, b, t);
      Var elbo = tape.row_sum(tape.mul(w, terms));
      const Vector mean_weights =
          Vector::Constant(static_cast<Eigen::Index>(rows.size()), 1.0 / static_cast<double>(rows.size()));
      return tape.weighted_sum(elbo, mean_weights);
    };
    if (!uncensored.empty()) {
      Var u = group_mean(uncensored, t_uncensored, Tape::PrimitiveTerm::log_pdf);
      total = tape.add(total, tape.scale(u, -1.0));
    }
    if (!censored.empty() && model.config.alpha != 0.0) {
      Var c = group_mean(censored, t_censored, Tape::PrimitiveTerm::log_survival);
      total = tape.add(total, tape.scale(c, -model.config.alpha));
    }
    total = tape.add(total, prior_graph(tape, model, m));
  }
  return total;
}

inline std::vector<double> to_model_time(const DsmModel& model, std::span<const double> times) {
  std::vector<double> out(times.begin(), times.end());
  for (double& t : out) t /= model.time_scale;
  return out;
}

// Combined loss on raw times.
inline double combined_loss(const DsmModel& model, const Matrix& x, std::span<const double> times,
                            std::span<const int> labels) {
  Tape tape(&model.store);
  const auto scaled = to_model_time(model, times);
  return tape.scalar(loss_graph(tape, model, x, scaled, labels));
}

// Combined loss on raw times; gradients are added to model.store.
inline double combined_loss_backward(DsmModel& model, const Matrix& x, std::span<const double> times,
                                     std::span<const int> labels) {
  Tape tape(&model.store);
  const auto scaled = to_model_time(model, times);
  return tape.backward(loss_graph(tape, model, x, scaled, labels));
}

// ---------------------------------------------------------------------------
// Prediction

inline Matrix extract_representation(const DsmModel& model, const Matrix& x) {
  check_input(model, x);
  return mlp_forward(x, model.store, model.mlp);
}

// Mixture parameters for every row, in raw time units.
inline MixtureBatch mixture_batch(const DsmModel& model, int risk, const Matrix& x) {
  check_input(model, x);
  Tape tape(&model.store);
  Var phi = model.mlp.forward(tape, tape.constant(x));
  RiskGraph g = risk_graph(tape, model, phi, risk);
  MixtureBatch out;
  out.family = model.config.family;
  out.weights = tape.value(tape.softmax_rows(g.logits));
  out.log_shape = tape.value(g.log_shape);
  out.log_scale = tape.value(g.log_scale);
  // Rescaling time by s moves the Weibull log-scale and the Log-Normal
  // location by ln s.
  const double shift = std::log(model.time_scale);
  if (model.config.family == PrimitiveFamily::weibull) {
    out.log_scale.array() += shift;
  } else {
    out.log_shape.array() += shift;
  }
  return out;
}

inline InstanceMixture row_mixture(const MixtureBatch& batch, Eigen::Index row) {
  InstanceMixture mix;
  mix.family = batch.family;
  mix.weights = batch.weights.row(row).transpose();
  for (Eigen::Index c = 0; c < batch.weights.cols(); ++c) {
    mix.components.push_back({batch.log_shape(row, c), batch.log_scale(row, c)});
  }
  return mix;
}

inline InstanceMixture instance_mixture(const DsmModel& model, int risk, const Vector& x) {
  return row_mixture(mixture_batch(model, risk, Matrix(x.transpose())), 0);
}

// Jensen lower bound on ln sum_k w_k f_k(t).
inline double elbo_uncensored(const InstanceMixture& mix, double t) {
  double total = 0.0;
  for (std::size_t k = 0; k < mix.components.size(); ++k) {
    total += mix.weights[static_cast<Eigen::Index>(k)] * log_pdf(mix.family, mix.components[k], t);
  }
  return total;
}

// Jensen lower bound on ln sum_k w_k S_k(t).
inline double elbo_censored(const InstanceMixture& mix, double t) {
  double total = 0.0;
  for (std::size_t k = 0; k < mix.components.size(); ++k) {
    total += mix.weights[static_cast<Eigen::Index>(k)] * log_survival(mix.family, mix.components[k], t);
  }
  return total;
}

namespace detail {

template <typename Term>
double log_mixture(const InstanceMixture& mix, Term term) {
  double top = -std::numeric_limits<double>::infinity();
  std::vector<double> parts(mix.components.size());
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const double w = mix.weights[static_cast<Eigen::Index>(k)];
    parts[k] = w > 0.0 ? std::log(w) + term(mix.components[k]) : -std::numeric_limits<double>::infinity();
    top = std::max(top, parts[k]);
  }
  if (!std::isfinite(top)) return top;
  double acc = 0.0;
  for (double p : parts) acc += std::exp(p - top);
  return top + std::log(acc);
}

}  // namespace detail

// Exact ln sum_k w_k f_k(t).
inline double log_mixture_density(const InstanceMixture& mix, double t) {
  return detail::log_mixture(mix, [&](const PrimitiveParams& p) { return log_pdf(mix.family, p, t); });
}

// Exact ln sum_k w_k S_k(t).
inline double log_mixture_survival(const InstanceMixture& mix, double t) {
  return detail::log_mixture(mix, [&](const PrimitiveParams& p) { return log_survival(mix.family, p, t); });
}

inline double mixture_survival(const InstanceMixture& mix, double t) {
  if (t < 0.0) throw std::domain_error("survival requires t >= 0");
  if (t == 0.0) return 1.0;
  double s = 0.0;
  for (std::size_t k = 0; k < mix.components.size(); ++k) {
    s += mix.weights[static_cast<Eigen::Index>(k)] * std::exp(log_survival(mix.family, mix.components[k], t));
  }
  return std::clamp(s, 0.0, 1.0);
}

// S(t | x) for each row at a single raw time t.
inline Vector predict_survival(const DsmModel& model, int risk, const Matrix& x, double t) {
  const MixtureBatch batch = mixture_batch(model, risk, x);
  Vector out(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) out[r] = mixture_survival(row_mixture(batch, r), t);
  return out;
}

inline double predict_survival(const DsmModel& model, int risk, const Vector& x, double t) {
  return mixture_survival(instance_mixture(model, risk, x), t);
}

// S(t | x) over a grid of times: rows x times.
inline Matrix predict_survival_curve(const DsmModel& model, int risk, const Matrix& x,
                                     std::span<const double> times) {
  const MixtureBatch batch = mixture_batch(model, risk, x);
  Matrix out(x.rows(), static_cast<Eigen::Index>(times.size()));
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const InstanceMixture mix = row_mixture(batch, r);
    for (std::size_t j = 0; j < times.size(); ++j) {
      out(r, static_cast<Eigen::Index>(j)) = mixture_survival(mix, times[j]);
    }
  }
  return out;
}

// Per-risk estimated CDF, 1 - S_m(t | x); the ranking score for C^td.
inline Vector predict_cif(const DsmModel& model, int risk, const Matrix& x, double t) {
  return Vector::Ones(x.rows()) - predict_survival(model, risk, x, t);
}

inline double predict_cif(const DsmModel& model, int risk, const Vector& x, double t) {
  return 1.0 - predict_survival(model, risk, x, t);
}

inline std::size_t parameter_count(const DsmModel& model) { return model.store.scalar_count(); }

}  // namespace dsm
