#pragma once

// Linear Cox proportional hazards with Breslow ties and a ridge penalty,
// fitted by damped Newton iterations. Used as the downstream evaluator of
// learned representations.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dsm/data.hpp"
#include "dsm/gradcore.hpp"
#include "dsm/metrics.hpp"
#include "dsm/training.hpp"

namespace dsm {

struct CphObjective {
  double value = 0.0;
  Vector gradient;
  Matrix hessian;
};

// Breslow negative log partial likelihood divided by the number of events,
// plus (ridge / 2) * |coef|^2, with gradient and Hessian.
inline CphObjective cph_objective(const Matrix& x, std::span<const double> times, std::span<const std::uint8_t> events,
                                  const Vector& coef, double ridge, bool with_hessian = true) {
  const auto n = static_cast<std::size_t>(x.rows());
  const Eigen::Index d = x.cols();
  if (times.size() != n || events.size() != n || coef.size() != d) {
    throw DimensionError("cph_objective: inconsistent shapes");
  }
  const double n_events = static_cast<double>(std::count_if(events.begin(), events.end(), [](auto e) { return e != 0; }));
  if (n_events == 0.0) throw std::invalid_argument("cph: no events");
  const Vector eta = x * coef;
  const double shift = eta.size() > 0 ? eta.maxCoeff() : 0.0;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return times[a] > times[b]; });

  CphObjective out;
  out.gradient = Vector::Zero(d);
  if (with_hessian) out.hessian = Matrix::Zero(d, d);
  double s0 = 0.0;
  Vector s1 = Vector::Zero(d);
  Matrix s2 = with_hessian ? Matrix::Zero(d, d) : Matrix();
  double nll = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && times[order[j]] == times[order[i]]) ++j;
    std::size_t deaths = 0;
    Vector event_x_sum = Vector::Zero(d);
    double event_eta_sum = 0.0;
    for (std::size_t g = i; g < j; ++g) {
      const auto r = static_cast<Eigen::Index>(order[g]);
      const double w = std::exp(eta[r] - shift);
      s0 += w;
      s1.noalias() += w * x.row(r).transpose();
      if (with_hessian) s2.selfadjointView<Eigen::Lower>().rankUpdate(x.row(r).transpose(), w);
      if (events[order[g]]) {
        ++deaths;
        event_x_sum += x.row(r).transpose();
        event_eta_sum += eta[r];
      }
    }
    if (deaths > 0) {
      const double dd = static_cast<double>(deaths);
      const Vector mean = s1 / s0;
      nll -= event_eta_sum - dd * (shift + std::log(s0));
      out.gradient -= event_x_sum - dd * mean;
      if (with_hessian) {
        Matrix cov = s2.selfadjointView<Eigen::Lower>();
        out.hessian += dd * (cov / s0 - mean * mean.transpose());
      }
    }
    i = j;
  }
  out.value = nll / n_events + 0.5 * ridge * coef.squaredNorm();
  out.gradient = out.gradient / n_events + ridge * coef;
  if (with_hessian) out.hessian = out.hessian / n_events + ridge * Matrix::Identity(d, d);
  return out;
}

struct CphModel {
  Vector coef;  // on the original feature scale; zero for dropped features
  double ridge = 1e-4;
  int iterations = 0;
  double gradient_norm = 0.0;
};

class CphConvergenceError : public std::runtime_error {
 public:
  CphConvergenceError(const std::string& what, int iterations, double gradient_norm)
      : std::runtime_error(what), iterations(iterations), gradient_norm(gradient_norm) {}
  int iterations;
  double gradient_norm;
};

struct CphOptions {
  double ridge = 1e-4;
  int max_iterations = 100;
  double tolerance = 1e-6;
};

// Fits on standardized features (zero-variance columns dropped); events are
// rows with label == 1.
inline CphModel cph_fit(const Matrix& x, std::span<const double> times, std::span<const std::uint8_t> events,
                        const CphOptions& options = {}) {
  const Eigen::Index d = x.cols();
  const double n = static_cast<double>(x.rows());
  if (x.rows() == 0) throw std::invalid_argument("cph_fit: empty data");
  const Vector mean = x.colwise().mean().transpose();
  Vector sd(d);
  for (Eigen::Index c = 0; c < d; ++c) sd[c] = std::sqrt((x.col(c).array() - mean[c]).square().sum() / n);
  std::vector<Eigen::Index> kept;
  for (Eigen::Index c = 0; c < d; ++c) {
    if (sd[c] > 1e-12 * std::max(1.0, std::abs(mean[c]))) kept.push_back(c);
  }
  Matrix z(x.rows(), static_cast<Eigen::Index>(kept.size()));
  for (std::size_t j = 0; j < kept.size(); ++j) {
    const Eigen::Index c = kept[j];
    z.col(static_cast<Eigen::Index>(j)) = (x.col(c).array() - mean[c]) / sd[c];
  }

  CphModel model;
  model.ridge = options.ridge;
  Vector beta = Vector::Zero(z.cols());
  CphObjective obj = cph_objective(z, times, events, beta, options.ridge);
  int it = 0;
  while (obj.gradient.norm() > options.tolerance) {
    if (it >= options.max_iterations) {
      throw CphConvergenceError("cph_fit: no convergence after " + std::to_string(it) + " iterations", it,
                                obj.gradient.norm());
    }
    const Vector step = obj.hessian.ldlt().solve(-obj.gradient);
    double scale = 1.0;
    CphObjective trial;
    for (int halving = 0; halving < 40; ++halving) {
      trial = cph_objective(z, times, events, beta + scale * step, options.ridge);
      if (std::isfinite(trial.value) && trial.value <= obj.value) break;
      scale *= 0.5;
    }
    if (!(trial.value <= obj.value)) {
      throw CphConvergenceError("cph_fit: line search failed", it, obj.gradient.norm());
    }
    const bool stalled = trial.value == obj.value;
    beta += scale * step;
    obj = std::move(trial);
    ++it;
    if (stalled) break;
  }
  model.iterations = it;
  model.gradient_norm = obj.gradient.norm();
  model.coef = Vector::Zero(d);
  for (std::size_t j = 0; j < kept.size(); ++j) {
    model.coef[kept[j]] = beta[static_cast<Eigen::Index>(j)] / sd[kept[j]];
  }
  return model;
}

inline CphModel cph_fit(const SurvivalDataset& ds, const CphOptions& options = {}) {
  const EventFlags events = ds.event_flags(1);
  return cph_fit(ds.features, ds.times, events, options);
}

// Log relative hazard coef . x
inline double cph_risk(const CphModel& model, const Vector& x) {
  if (x.size() != model.coef.size()) throw DimensionError("cph_risk: dimension mismatch");
  return model.coef.dot(x);
}

inline Vector cph_risk(const CphModel& model, const Matrix& x) {
  if (x.cols() != model.coef.size()) throw DimensionError("cph_risk: dimension mismatch");
  return x * model.coef;
}

struct TransferResult {
  double c_index = 0.0;
  double ci_half_width = 0.0;  // 90% normal approximation over folds
  std::vector<double> fold_c;
};

// Harrell C of a CPH model fit on `features` over held-out stratified folds.
inline TransferResult transfer_eval(const Matrix& features, std::span<const double> times, std::span<const int> labels,
                                    std::size_t folds, std::uint64_t seed, const CphOptions& options = {}) {
  if (static_cast<std::size_t>(features.rows()) != times.size() || times.size() != labels.size()) {
    throw DimensionError("transfer_eval: embeddings not row-aligned with outcomes");
  }
  SurvivalDataset ds;
  ds.features = features;
  ds.times.assign(times.begin(), times.end());
  ds.labels.assign(labels.begin(), labels.end());
  ds.risks = 1;
  TransferResult out;
  for (const Fold& fold : kfold_split(ds, folds, seed)) {
    const SurvivalDataset train = ds.subset(fold.train);
    const SurvivalDataset test = ds.subset(fold.validation);
    const CphModel model = cph_fit(train, options);
    const Vector risk = cph_risk(model, test.features);
    const EventFlags events = test.event_flags(1);
    if (auto c = harrell_c(std::span(risk.data(), static_cast<std::size_t>(risk.size())), test.times, events)) {
      out.fold_c.push_back(c->value);
    } else {
      warn("transfer_eval: fold without comparable pairs skipped");
    }
  }
  if (out.fold_c.empty()) throw std::runtime_error("transfer_eval: no fold produced a C-index");
  const auto [mean, se] = mean_and_se(out.fold_c);
  out.c_index = mean;
  out.ci_half_width = 1.6448536269514722 * se;
  return out;
}

}  // namespace dsm
