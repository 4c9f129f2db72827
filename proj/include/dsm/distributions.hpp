#pragma once

// Weibull and Log-Normal primitive distributions in log-parameter space.
//
// PrimitiveParams::log_shape holds ln(eta) for the Weibull and the location
// mu (unconstrained, stored as-is) for the Log-Normal. PrimitiveParams::log_scale
// holds ln(beta) for the Weibull and ln(sigma) for the Log-Normal. All gradients
// are taken with respect to these stored coordinates.

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>

namespace dsm {

enum class PrimitiveFamily { weibull, lognormal };

inline std::string_view to_string(PrimitiveFamily family) {
  return family == PrimitiveFamily::weibull ? "weibull" : "lognormal";
}

inline PrimitiveFamily parse_family(std::string_view name) {
  if (name == "weibull") return PrimitiveFamily::weibull;
  if (name == "lognormal" || name == "log-normal") return PrimitiveFamily::lognormal;
  throw std::invalid_argument("unknown primitive family '" + std::string(name) + "'");
}

struct PrimitiveParams {
  double log_shape = 0.0;
  double log_scale = 0.0;
};

struct ParamGradient {
  double d_log_shape = 0.0;
  double d_log_scale = 0.0;
};

struct TermWithGradient {
  double value = 0.0;
  ParamGradient grad;
};

namespace detail {

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;

inline void require_positive_time(double t) {
  if (!(t > 0.0)) throw std::domain_error("log_pdf requires t > 0, got " + std::to_string(t));
}

inline void require_nonnegative_time(double t) {
  if (!(t >= 0.0)) throw std::domain_error("log_survival requires t >= 0, got " + std::to_string(t));
}

}  // namespace detail

// ln(erfc(x)), finite for all finite x. std::erfc is used until it approaches
// underflow, then the asymptotic expansion
//   erfc(x) ~ exp(-x^2) / (x sqrt(pi)) * (1 - 1/(2x^2) + 3/(4x^4) - 15/(8x^6) + 105/(16x^8)).
inline double log_erfc(double x) {
  if (x < 20.0) return std::log(std::erfc(x));
  const double inv = 1.0 / (x * x);
  const double series = 1.0 + inv * (-0.5 + inv * (0.75 + inv * (-1.875 + inv * 6.5625)));
  return -x * x - std::log(x) - 0.5 * std::log(std::numbers::pi) + std::log(series);
}

inline TermWithGradient log_pdf_with_gradient(PrimitiveFamily family, PrimitiveParams p, double t) {
  detail::require_positive_time(t);
  const double log_t = std::log(t);
  if (family == PrimitiveFamily::weibull) {
    const double shape = std::exp(p.log_shape);
    const double z = log_t - p.log_scale;
    const double u = std::exp(shape * z);  // (t / beta)^eta
    TermWithGradient out;
    out.value = p.log_shape - p.log_scale + (shape - 1.0) * z - u;
    out.grad.d_log_shape = 1.0 + shape * z * (1.0 - u);
    out.grad.d_log_scale = shape * (u - 1.0);
    return out;
  }
  const double sigma = std::exp(p.log_scale);
  const double s = (log_t - p.log_shape) / sigma;
  TermWithGradient out;
  out.value = -log_t - p.log_scale - detail::kHalfLog2Pi - 0.5 * s * s;
  out.grad.d_log_shape = s / sigma;
  out.grad.d_log_scale = s * s - 1.0;
  return out;
}

inline TermWithGradient log_survival_with_gradient(PrimitiveFamily family, PrimitiveParams p,
                                                   double t) {
  detail::require_nonnegative_time(t);
  if (t == 0.0) return {};
  const double log_t = std::log(t);
  if (family == PrimitiveFamily::weibull) {
    const double shape = std::exp(p.log_shape);
    const double z = log_t - p.log_scale;
    const double u = std::exp(shape * z);
    TermWithGradient out;
    out.value = -u;
    out.grad.d_log_shape = -u * shape * z;
    out.grad.d_log_scale = shape * u;
    return out;
  }
  const double sigma = std::exp(p.log_scale);
  const double s = (log_t - p.log_shape) / sigma;
  // ln S = ln Phi(-s) = ln(erfc(s / sqrt 2) / 2)
  const double log_surv = log_erfc(s / std::numbers::sqrt2) - std::numbers::ln2;
  // inverse Mills ratio phi(s) / Phi(-s)
  const double mills = std::exp(-0.5 * s * s - detail::kHalfLog2Pi - log_surv);
  TermWithGradient out;
  out.value = log_surv;
  out.grad.d_log_shape = mills / sigma;
  out.grad.d_log_scale = mills * s;
  return out;
}

inline double log_pdf(PrimitiveFamily family, PrimitiveParams p, double t) {
  return log_pdf_with_gradient(family, p, t).value;
}

inline double log_survival(PrimitiveFamily family, PrimitiveParams p, double t) {
  return log_survival_with_gradient(family, p, t).value;
}

inline ParamGradient grad_log_pdf(PrimitiveFamily family, PrimitiveParams p, double t) {
  return log_pdf_with_gradient(family, p, t).grad;
}

inline ParamGradient grad_log_survival(PrimitiveFamily family, PrimitiveParams p, double t) {
  return log_survival_with_gradient(family, p, t).grad;
}

}  // namespace dsm
