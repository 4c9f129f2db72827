#pragma once

// Evaluation under right censoring: Kaplan-Meier, inverse-probability-of-
// censoring weights, time-dependent concordance, censoring-weighted Brier
// score and Harrell's concordance.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dsm/log.hpp"

namespace dsm {

// Event indicators are bytes (1 = event of interest) so they can be viewed as spans.
using EventFlags = std::vector<std::uint8_t>;

// Right-continuous step function: at(t) is the value after every jump at
// times <= t; before(t) is the left limit, the value at the largest
// breakpoint strictly below t. Both equal 1 before the first breakpoint.
class StepFunction {
 public:
  StepFunction() = default;
  StepFunction(std::vector<double> times, std::vector<double> values)
      : times_(std::move(times)), values_(std::move(values)) {
    if (times_.size() != values_.size()) throw std::invalid_argument("StepFunction: size mismatch");
  }

  double at(double t) const {
    auto it = std::upper_bound(times_.begin(), times_.end(), t);
    if (it == times_.begin()) return 1.0;
    return values_[static_cast<std::size_t>(it - times_.begin() - 1)];
  }

  double before(double t) const {
    auto it = std::lower_bound(times_.begin(), times_.end(), t);
    if (it == times_.begin()) return 1.0;
    return values_[static_cast<std::size_t>(it - times_.begin() - 1)];
  }

  const std::vector<double>& times() const { return times_; }
  const std::vector<double>& values() const { return values_; }

 private:
  std::vector<double> times_;
  std::vector<double> values_;
};

// Product-limit estimator prod_{t_j <= t} (1 - d_j / n_j) over distinct event times.
inline StepFunction kaplan_meier(std::span<const double> times, std::span<const std::uint8_t> events) {
  if (times.empty()) throw std::invalid_argument("kaplan_meier: empty input");
  if (times.size() != events.size()) throw std::invalid_argument("kaplan_meier: size mismatch");
  std::vector<std::size_t> order(times.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return times[a] < times[b]; });
  for (double t : times) {
    if (!(t >= 0.0)) throw std::invalid_argument("kaplan_meier: times must be >= 0");
  }
  std::vector<double> bp;
  std::vector<double> vals;
  double surv = 1.0;
  std::size_t at_risk = times.size();
  std::size_t i = 0;
  while (i < order.size()) {
    const double t = times[order[i]];
    std::size_t deaths = 0;
    std::size_t j = i;
    while (j < order.size() && times[order[j]] == t) {
      deaths += events[order[j]] ? 1 : 0;
      ++j;
    }
    if (deaths > 0) {
      surv *= 1.0 - static_cast<double>(deaths) / static_cast<double>(at_risk);
      bp.push_back(t);
      vals.push_back(surv);
    }
    at_risk -= j - i;
    i = j;
  }
  return StepFunction(std::move(bp), std::move(vals));
}

// KM of the censoring time: rows with label 0 are the "events".
inline StepFunction censoring_distribution(std::span<const double> times, std::span<const int> labels) {
  std::vector<std::uint8_t> flags(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) flags[i] = labels[i] == 0 ? 1 : 0;
  return kaplan_meier(times, flags);
}

struct ConcordanceResult {
  double value = 0.0;
  double comparable_pairs = 0.0;  // unweighted count
};

namespace detail {

class Fenwick {
 public:
  explicit Fenwick(std::size_t n) : tree_(n + 1, 0.0) {}
  void add(std::size_t i, double v) {
    for (++i; i < tree_.size(); i += i & (~i + 1)) tree_[i] += v;
  }
  // sum over [0, i)
  double prefix(std::size_t i) const {
    double s = 0.0;
    for (; i > 0; i -= i & (~i + 1)) s += tree_[i];
    return s;
  }

 private:
  std::vector<double> tree_;
};

// Per-subject concordance counts against all subjects with strictly larger
// time. Subjects that are not anchors (not an event, or beyond the horizon)
// get zero counts.
struct PairCounts {
  std::vector<double> concordant;  // ties in score count 0.5
  std::vector<double> comparable;
};

inline PairCounts pair_counts(std::span<const double> scores, std::span<const double> times,
                              std::span<const std::uint8_t> events, double horizon) {
  const std::size_t n = scores.size();
  if (times.size() != n || events.size() != n) throw std::invalid_argument("concordance: size mismatch");
  std::vector<double> sorted_scores(scores.begin(), scores.end());
  std::sort(sorted_scores.begin(), sorted_scores.end());
  sorted_scores.erase(std::unique(sorted_scores.begin(), sorted_scores.end()), sorted_scores.end());
  std::vector<std::size_t> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    rank[i] = static_cast<std::size_t>(
        std::lower_bound(sorted_scores.begin(), sorted_scores.end(), scores[i]) - sorted_scores.begin());
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return times[a] > times[b]; });

  PairCounts out{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  Fenwick tree(sorted_scores.size());
  double inserted = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && times[order[j]] == times[order[i]]) ++j;
    for (std::size_t g = i; g < j; ++g) {
      const std::size_t s = order[g];
      if (!events[s] || times[s] > horizon) continue;
      const double below = tree.prefix(rank[s]);
      const double equal = tree.prefix(rank[s] + 1) - below;
      out.concordant[s] = below + 0.5 * equal;
      out.comparable[s] = inserted;
    }
    for (std::size_t g = i; g < j; ++g) tree.add(rank[order[g]], 1.0);
    inserted += static_cast<double>(j - i);
    i = j;
  }
  return out;
}

}  // namespace detail

// Time-dependent concordance at horizon t*: comparable pairs (i, j) have
// event_i, T_i < T_j and T_i <= t*; each pair of anchor i is weighted by
// 1 / G(T_i-)^2. Returns nullopt when no pair is comparable.
inline std::optional<ConcordanceResult> ctd(std::span<const double> scores, std::span<const double> times,
                                            std::span<const std::uint8_t> events, double horizon,
                                            const StepFunction& censoring) {
  if (!(horizon > 0.0)) throw std::invalid_argument("ctd: horizon must be > 0");
  const auto counts = detail::pair_counts(scores, times, events, horizon);
  double num = 0.0;
  double den = 0.0;
  double pairs = 0.0;
  std::size_t dropped = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (counts.comparable[i] == 0.0) continue;
    const double g = censoring.before(times[i]);
    if (!(g > 0.0)) {
      ++dropped;
      continue;
    }
    const double w = 1.0 / (g * g);
    num += w * counts.concordant[i];
    den += w * counts.comparable[i];
    pairs += counts.comparable[i];
  }
  if (dropped > 0) {
    warn("ctd: dropped pairs of " + std::to_string(dropped) + " subjects with zero censoring survival");
  }
  if (den == 0.0) return std::nullopt;
  return ConcordanceResult{num / den, pairs};
}

// Harrell's concordance: unweighted, no horizon.
inline std::optional<ConcordanceResult> harrell_c(std::span<const double> scores, std::span<const double> times,
                                                  std::span<const std::uint8_t> events) {
  const auto counts =
      detail::pair_counts(scores, times, events, std::numeric_limits<double>::infinity());
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    num += counts.concordant[i];
    den += counts.comparable[i];
  }
  if (den == 0.0) return std::nullopt;
  return ConcordanceResult{num / den, den};
}

// Censoring-weighted Brier score of predicted survival S(t*|x_i) at t*.
inline double brier(std::span<const double> survival, std::span<const double> times,
                    std::span<const std::uint8_t> events, double horizon, const StepFunction& censoring) {
  if (!(horizon > 0.0)) throw std::invalid_argument("brier: horizon must be > 0");
  const std::size_t n = survival.size();
  if (times.size() != n || events.size() != n) throw std::invalid_argument("brier: size mismatch");
  const double g_horizon = censoring.at(horizon);
  double total = 0.0;
  std::size_t used = 0;
  std::size_t dropped = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = survival[i];
    if (times[i] <= horizon) {
      if (events[i]) {
        const double g = censoring.before(times[i]);
        if (!(g > 0.0)) {
          ++dropped;
          continue;
        }
        total += s * s / g;
      }
    } else {
      if (!(g_horizon > 0.0)) {
        ++dropped;
        continue;
      }
      total += (1.0 - s) * (1.0 - s) / g_horizon;
    }
    ++used;
  }
  if (dropped > 0) warn("brier: dropped " + std::to_string(dropped) + " rows with zero censoring survival");
  if (used == 0) throw std::invalid_argument("brier: no usable rows");
  return total / static_cast<double>(used);
}

struct EvalHorizons {
  std::vector<double> levels;
  std::vector<double> times;
};

// Nearest-rank quantiles of the event times (censored rows ignored).
inline EvalHorizons event_quantiles(std::span<const double> times, std::span<const std::uint8_t> events,
                                    std::span<const double> levels) {
  std::vector<double> ev;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (events[i]) ev.push_back(times[i]);
  }
  if (ev.empty()) throw std::invalid_argument("event_quantiles: no events");
  std::sort(ev.begin(), ev.end());
  EvalHorizons out;
  for (double p : levels) {
    if (p < 0.0 || p > 1.0) throw std::invalid_argument("event_quantiles: level outside [0, 1]");
    const double pos = std::ceil(p * static_cast<double>(ev.size()) - 1e-9);
    const auto rank = static_cast<std::size_t>(std::clamp(pos, 1.0, static_cast<double>(ev.size())));
    out.levels.push_back(p);
    out.times.push_back(ev[rank - 1]);
  }
  return out;
}

}  // namespace dsm
