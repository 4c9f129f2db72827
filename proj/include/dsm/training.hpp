#pragma once

// Adam optimization of the combined loss, early stopping, and grid search
// with stratified k-fold cross-validation on validation C^td.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "dsm/data.hpp"
#include "dsm/gradcore.hpp"
#include "dsm/log.hpp"
#include "dsm/metrics.hpp"
#include "dsm/model.hpp"
#include "dsm/rng.hpp"

namespace dsm {

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step = 0;
  std::vector<Matrix> first;
  std::vector<Matrix> second;

  explicit AdamState(const ParamStore& store) {
    for (const auto& p : store) {
      first.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
      second.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    }
  }
};

// Bias-corrected Adam update; gradients are cleared afterwards.
inline void adam_step(ParamStore& store, AdamState& state, double learning_rate) {
  if (state.first.size() != store.size()) throw UsageError("adam_step: state does not match store");
  for (const auto& p : store) {
    if (!p.grad.allFinite()) throw std::runtime_error("adam_step: non-finite gradient in '" + p.name + "'");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < store.size(); ++i) {
    Param& p = store[i];
    Matrix& m = state.first[i];
    Matrix& v = state.second[i];
    m = state.beta1 * m + (1.0 - state.beta1) * p.grad;
    v = state.beta2 * v + (1.0 - state.beta2) * p.grad.cwiseAbs2();
    p.value.array() -= learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + state.epsilon);
    if (!p.value.allFinite()) throw std::runtime_error("adam_step: parameter '" + p.name + "' became non-finite");
    p.grad.setZero();
  }
}

// ---------------------------------------------------------------------------
// Anchors

// Covariate-free maximum-likelihood fit of one primitive to event times.
inline PrimitiveParams fit_primitive_mle(PrimitiveFamily family, std::span<const double> times) {
  if (times.empty()) throw std::invalid_argument("fit_primitive_mle: no event times");
  std::vector<double> logs;
  for (double t : times) {
    if (!(t > 0.0)) throw std::invalid_argument("fit_primitive_mle: times must be > 0");
    logs.push_back(std::log(t));
  }
  const double n = static_cast<double>(logs.size());
  const double mean_log = std::accumulate(logs.begin(), logs.end(), 0.0) / n;
  if (family == PrimitiveFamily::lognormal) {
    double ss = 0.0;
    for (double l : logs) ss += (l - mean_log) * (l - mean_log);
    const double sigma = std::max(std::sqrt(ss / n), 1e-3);
    return {mean_log, std::log(sigma)};
  }
  const auto [lo_it, hi_it] = std::minmax_element(logs.begin(), logs.end());
  if (*hi_it - *lo_it < 1e-12) {
    return {0.0, mean_log};  // degenerate sample: exponential through the point
  }
  const double top = *hi_it;
  // log-sum-exp of eta * l and the matching weighted sum of l
  auto moments = [&](double eta) {
    double s0 = 0.0;
    double s1 = 0.0;
    for (double l : logs) {
      const double w = std::exp(eta * (l - top));
      s0 += w;
      s1 += w * l;
    }
    return std::pair{s0, s1};
  };
  // Profile score 1/eta + mean(ln t) - sum t^eta ln t / sum t^eta decreases in eta.
  auto score = [&](double log_eta) {
    const double eta = std::exp(log_eta);
    const auto [s0, s1] = moments(eta);
    return 1.0 / eta + mean_log - s1 / s0;
  };
  double lo = -10.0;
  double hi = 10.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (score(mid) > 0.0 ? lo : hi) = mid;
  }
  const double eta = std::exp(0.5 * (lo + hi));
  const auto [s0, s1] = moments(eta);
  const double log_beta = (eta * top + std::log(s0 / n)) / eta;
  return {std::log(eta), log_beta};
}

// ---------------------------------------------------------------------------
// Fitting

struct TrainConfig {
  double learning_rate = 1e-3;
  int k = 4;
  double alpha = 1.0;
  double lambda = 1e-8;
  PrimitiveFamily family = PrimitiveFamily::weibull;
  int hidden_layers = 1;
  int hidden_width = 50;
  int max_epochs = 200;
  int batch_size = 0;  // 0: full batch up to 4096 rows, else 1024
  int patience = 10;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;

  std::string describe() const {
    std::ostringstream os;
    os << "lr=" << learning_rate << ";k=" << k << ";alpha=" << alpha << ";lambda=" << lambda
       << ";family=" << to_string(family) << ";layers=" << hidden_layers << ";width=" << hidden_width
       << ";epochs=" << max_epochs << ";batch=" << batch_size << ";patience=" << patience
       << ";val=" << validation_fraction;
    return os.str();
  }

  // Stable identifier of the hyperparameters (seed excluded).
  std::string hash() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(describe())));
    return buf;
  }
};

struct FitResult {
  DsmModel model;
  std::vector<double> train_loss;       // per epoch
  std::vector<double> validation_loss;  // per epoch, empty without a holdout
  int best_epoch = 0;
  double initial_loss = 0.0;  // full training-set loss before the first step
  double final_loss = 0.0;    // full training-set loss of the returned model
};

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 == 1 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

inline void check_trainable(const SurvivalDataset& ds) {
  if (ds.size() == 0) throw std::invalid_argument("fit: empty dataset");
  ds.validate();
  for (int m = 1; m <= ds.risks; ++m) {
    if (ds.count_label(m) == 0) {
      throw std::invalid_argument("fit: risk " + std::to_string(m) + " has no uncensored rows");
    }
  }
}

inline FitResult fit(const SurvivalDataset& data, const TrainConfig& config) {
  check_trainable(data);
  if (config.hidden_layers < 1) throw std::invalid_argument("fit: at least one hidden layer required");
  if (config.learning_rate <= 0.0) throw std::invalid_argument("fit: learning rate must be > 0");

  std::vector<double> event_times;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.labels[i] != 0) event_times.push_back(data.times[i]);
  }
  const double time_scale = median(event_times);

  Fold split;
  if (config.validation_fraction > 0.0) {
    split = stratified_holdout(data.labels, config.validation_fraction, config.seed);
  } else {
    split.train.resize(data.size());
    std::iota(split.train.begin(), split.train.end(), 0);
  }
  const SurvivalDataset train = data.subset(split.train);
  const SurvivalDataset holdout = data.subset(split.validation);
  check_trainable(train);

  std::vector<PrimitiveParams> anchors;
  for (int m = 1; m <= data.risks; ++m) {
    std::vector<double> t;
    for (std::size_t i = 0; i < train.size(); ++i) {
      if (train.labels[i] == m) t.push_back(train.times[i] / time_scale);
    }
    anchors.push_back(fit_primitive_mle(config.family, t));
  }

  ModelConfig mc;
  mc.family = config.family;
  mc.k = config.k;
  mc.risks = data.risks;
  mc.alpha = config.alpha;
  mc.lambda = config.lambda;
  mc.layers.input_dim = static_cast<int>(data.dim());
  mc.layers.hidden.assign(static_cast<std::size_t>(config.hidden_layers), config.hidden_width);
  Rng init_rng = Rng::stream(config.seed, "fit.init");
  FitResult result{DsmModel::create(mc, anchors, init_rng), {}, {}, 0, 0.0, 0.0};
  DsmModel& model = result.model;
  model.time_scale = time_scale;
  model.feature_names = data.feature_names;

  const std::size_t n = train.size();
  const std::size_t batch = config.batch_size > 0 ? static_cast<std::size_t>(config.batch_size)
                                                  : (n <= 4096 ? n : std::size_t{1024});
  result.initial_loss = combined_loss(model, train.features, train.times, train.labels);

  AdamState adam(model.store);
  Rng batch_rng = Rng::stream(config.seed, "fit.batches");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<Matrix> best = [&] {
    std::vector<Matrix> snap;
    for (const auto& p : model.store) snap.push_back(p.value);
    return snap;
  }();
  double best_loss = std::numeric_limits<double>::infinity();
  int since_best = 0;
  model.store.zero_grad();

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    if (batch < n) batch_rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t stop = std::min(n, start + batch);
      double loss;
      if (batch >= n) {
        loss = combined_loss_backward(model, train.features, train.times, train.labels);
      } else {
        std::vector<std::size_t> rows(order.begin() + static_cast<long>(start), order.begin() + static_cast<long>(stop));
        const SurvivalDataset mb = train.subset(rows);
        loss = combined_loss_backward(model, mb.features, mb.times, mb.labels);
      }
      if (!std::isfinite(loss)) {
        throw std::runtime_error("fit: non-finite loss at epoch " + std::to_string(epoch));
      }
      adam_step(model.store, adam, config.learning_rate);
      epoch_loss += loss * static_cast<double>(stop - start);
    }
    result.train_loss.push_back(epoch_loss / static_cast<double>(n));

    double monitored = result.train_loss.back();
    if (holdout.size() > 0) {
      monitored = combined_loss(model, holdout.features, holdout.times, holdout.labels);
      if (!std::isfinite(monitored)) {
        throw std::runtime_error("fit: non-finite validation loss at epoch " + std::to_string(epoch));
      }
      result.validation_loss.push_back(monitored);
    }
    if (monitored < best_loss) {
      best_loss = monitored;
      result.best_epoch = epoch;
      since_best = 0;
      std::size_t i = 0;
      for (const auto& p : model.store) best[i++] = p.value;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  std::size_t i = 0;
  for (auto& p : model.store) p.value = best[i++];
  result.final_loss = combined_loss(model, train.features, train.times, train.labels);
  return result;
}

// ---------------------------------------------------------------------------
// Grid search with cross-validation

struct GridSpec {
  std::vector<double> learning_rates{1e-3, 1e-4};
  std::vector<int> ks{4, 6, 8};
  std::vector<double> alphas{0.5, 0.75, 1.0};
  std::vector<PrimitiveFamily> families{PrimitiveFamily::weibull, PrimitiveFamily::lognormal};
  std::vector<int> hidden_layers{1, 2};
  std::vector<int> hidden_widths{50, 100};
  TrainConfig base;  // lambda, epochs, batch size, patience, holdout fraction

  std::vector<TrainConfig> expand() const {
    std::vector<TrainConfig> out;
    for (auto family : families)
      for (int layers : hidden_layers)
        for (int width : hidden_widths)
          for (int k : ks)
            for (double alpha : alphas)
              for (double lr : learning_rates) {
                TrainConfig c = base;
                c.family = family;
                c.hidden_layers = layers;
                c.hidden_width = width;
                c.k = k;
                c.alpha = alpha;
                c.learning_rate = lr;
                out.push_back(c);
              }
    return out;
  }
};

struct FoldMetric {
  std::size_t config_index = 0;
  std::string config_hash;
  std::size_t fold = 0;
  int risk = 1;
  double level = 0.0;
  double horizon = 0.0;
  std::optional<double> ctd;
  std::optional<double> brier;
  double comparable_pairs = 0.0;
};

struct HorizonSummary {
  int risk = 1;
  double level = 0.0;
  double horizon = 0.0;
  double mean_ctd = std::numeric_limits<double>::quiet_NaN();
  double se_ctd = std::numeric_limits<double>::quiet_NaN();
  double mean_brier = std::numeric_limits<double>::quiet_NaN();
  double se_brier = std::numeric_limits<double>::quiet_NaN();
  std::size_t folds = 0;
};

struct ConfigSummary {
  TrainConfig config;
  std::string hash;
  std::size_t parameter_count = 0;
  double score = std::numeric_limits<double>::quiet_NaN();  // selection score
  std::vector<HorizonSummary> horizons;
};

struct CvResult {
  std::size_t best = 0;
  std::vector<ConfigSummary> configs;
  std::vector<FoldMetric> fold_metrics;
  std::vector<std::vector<double>> horizons;  // [risk - 1][level index]
  std::vector<double> levels;
};

struct CvOptions {
  std::vector<double> levels{0.25, 0.5, 0.75, 1.0};
  // Applied to each training fold before fitting (fold index passed).
  std::function<SurvivalDataset(const SurvivalDataset&, std::size_t)> train_transform;
  unsigned threads = 0;  // 0: DSM_THREADS or hardware concurrency
};

inline unsigned worker_count(unsigned requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("DSM_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

// Runs body(i) for i in [0, count) on up to `threads` workers.
inline void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& body) {
  threads = std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(count, 1)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i; (i = next.fetch_add(1)) < count;) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
        next = count;
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// C^td and Brier of a fitted model on an evaluation set at the given horizons
// (horizons[risk - 1][j] for levels[j]). The censoring distribution is
// estimated on the evaluation set itself.
inline std::vector<FoldMetric> evaluate_model(const DsmModel& model, const SurvivalDataset& eval,
                                              const std::vector<double>& levels,
                                              const std::vector<std::vector<double>>& horizons) {
  std::vector<FoldMetric> out;
  const StepFunction censoring = censoring_distribution(eval.times, eval.labels);
  for (int m = 1; m <= model.config.risks; ++m) {
    const EventFlags events = eval.event_flags(m);
    const bool any_event = std::any_of(events.begin(), events.end(), [](auto e) { return e != 0; });
    for (std::size_t j = 0; j < levels.size(); ++j) {
      FoldMetric fm;
      fm.risk = m;
      fm.level = levels[j];
      fm.horizon = horizons[static_cast<std::size_t>(m - 1)][j];
      if (any_event) {
        const Vector surv = predict_survival(model, m, eval.features, fm.horizon);
        const Vector cif = Vector::Ones(surv.size()) - surv;
        if (auto c = ctd(std::span(cif.data(), static_cast<std::size_t>(cif.size())), eval.times, events,
                         fm.horizon, censoring)) {
          fm.ctd = c->value;
          fm.comparable_pairs = c->comparable_pairs;
        }
        fm.brier = brier(std::span(surv.data(), static_cast<std::size_t>(surv.size())), eval.times, events,
                         fm.horizon, censoring);
      }
      out.push_back(fm);
    }
  }
  return out;
}

inline std::vector<std::vector<double>> risk_horizons(const SurvivalDataset& ds, const std::vector<double>& levels) {
  std::vector<std::vector<double>> out;
  for (int m = 1; m <= ds.risks; ++m) {
    const EventFlags events = ds.event_flags(m);
    out.push_back(event_quantiles(ds.times, events, levels).times);
  }
  return out;
}

// Mean and standard error (sd / sqrt(n)) of the present values.
inline std::pair<double, double> mean_and_se(const std::vector<double>& v) {
  if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0)) / std::sqrt(n)};
}

// Every grid point is fit on each training fold (seeded per fold) and scored
// by C^td on the held-out fold at event-time quantile horizons of the full
// dataset. The best configuration maximises the mean fold C^td over risks
// and the sub-100% levels; ties go to the smaller model.
// Highest score wins; exact ties go to the smaller network. NaN scores are skipped.
inline std::optional<std::size_t> select_best(const std::vector<ConfigSummary>& configs) {
  std::optional<std::size_t> best;
  for (std::size_t c = 0; c < configs.size(); ++c) {
    const auto& s = configs[c];
    if (std::isnan(s.score)) continue;
    if (!best) {
      best = c;
      continue;
    }
    const auto& b = configs[*best];
    if (s.score > b.score || (s.score == b.score && s.parameter_count < b.parameter_count)) best = c;
  }
  return best;
}

inline CvResult grid_search_cv(const SurvivalDataset& ds, const std::vector<TrainConfig>& grid, std::size_t k,
                               std::uint64_t seed, const CvOptions& options = {}) {
  if (grid.empty()) throw std::invalid_argument("grid_search_cv: empty grid");
  if (k < 2) throw std::invalid_argument("grid_search_cv: k must be >= 2");
  CvResult result;
  result.levels = options.levels;
  result.horizons = risk_horizons(ds, options.levels);
  const std::vector<Fold> folds = kfold_split(ds, k, seed);

  std::vector<std::vector<FoldMetric>> task_metrics(grid.size() * k);
  std::vector<std::size_t> task_params(grid.size() * k, 0);
  parallel_for(grid.size() * k, worker_count(options.threads), [&](std::size_t task) {
    const std::size_t c = task / k;
    const std::size_t f = task % k;
    SurvivalDataset train = ds.subset(folds[f].train);
    const SurvivalDataset valid = ds.subset(folds[f].validation);
    if (options.train_transform) train = options.train_transform(train, f);
    if (valid.labels.end() == std::find_if(valid.labels.begin(), valid.labels.end(), [](int l) { return l != 0; })) {
      warn("fold " + std::to_string(f) + " has no events; skipped");
      return;
    }
    TrainConfig cfg = grid[c];
    std::uint64_t s = seed ^ (0x9e3779b97f4a7c15ULL * (f + 1));
    cfg.seed = splitmix64(s);
    const FitResult fitted = fit(train, cfg);
    task_params[task] = parameter_count(fitted.model);
    auto metrics = evaluate_model(fitted.model, valid, options.levels, result.horizons);
    for (auto& fm : metrics) {
      fm.config_index = c;
      fm.config_hash = grid[c].hash();
      fm.fold = f;
    }
    task_metrics[task] = std::move(metrics);
  });
  for (auto& tm : task_metrics) {
    for (auto& fm : tm) result.fold_metrics.push_back(std::move(fm));
  }

  for (std::size_t c = 0; c < grid.size(); ++c) {
    ConfigSummary summary;
    summary.config = grid[c];
    summary.hash = grid[c].hash();
    for (std::size_t f = 0; f < k; ++f) summary.parameter_count = std::max(summary.parameter_count, task_params[c * k + f]);
    double score_sum = 0.0;
    std::size_t score_n = 0;
    const bool has_partial_levels =
        std::any_of(options.levels.begin(), options.levels.end(), [](double l) { return l < 1.0; });
    for (int m = 1; m <= ds.risks; ++m) {
      for (std::size_t j = 0; j < options.levels.size(); ++j) {
        std::vector<double> ctds;
        std::vector<double> briers;
        for (const auto& fm : result.fold_metrics) {
          if (fm.config_index != c || fm.risk != m || fm.level != options.levels[j]) continue;
          if (fm.ctd) ctds.push_back(*fm.ctd);
          if (fm.brier) briers.push_back(*fm.brier);
        }
        HorizonSummary hs;
        hs.risk = m;
        hs.level = options.levels[j];
        hs.horizon = result.horizons[static_cast<std::size_t>(m - 1)][j];
        std::tie(hs.mean_ctd, hs.se_ctd) = mean_and_se(ctds);
        std::tie(hs.mean_brier, hs.se_brier) = mean_and_se(briers);
        hs.folds = ctds.size();
        if ((!has_partial_levels || hs.level < 1.0) && !ctds.empty()) {
          score_sum += hs.mean_ctd;
          ++score_n;
        }
        summary.horizons.push_back(hs);
      }
    }
    if (score_n > 0) summary.score = score_sum / static_cast<double>(score_n);
    result.configs.push_back(std::move(summary));
  }

  const auto best = select_best(result.configs);
  if (!best) throw std::runtime_error("grid_search_cv: no configuration produced a C^td value");
  result.best = *best;
  return result;
}

}  // namespace dsm
