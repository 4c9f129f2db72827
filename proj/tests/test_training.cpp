#include <gtest/gtest.h>

#include <atomic>
#include <cmath>

#include "dsm/training.hpp"

using dsm::Matrix;
using dsm::TrainConfig;

namespace {

dsm::SurvivalDataset small_synthetic(std::size_t n, std::uint64_t seed) {
  dsm::GeneratorSpec spec;
  spec.n = n;
  spec.seed = seed;
  return dsm::generate_synthetic(spec);
}

TrainConfig quick_config() {
  TrainConfig c;
  c.k = 2;
  c.hidden_width = 8;
  c.max_epochs = 15;
  c.learning_rate = 1e-2;
  c.seed = 3;
  return c;
}

dsm::SurvivalDataset exponential_sample(std::size_t n, std::uint64_t seed) {
  dsm::Rng rng(seed);
  dsm::SurvivalDataset ds;
  ds.features = Matrix::Zero(static_cast<Eigen::Index>(n), 1);
  for (std::size_t i = 0; i < n; ++i) {
    ds.times.push_back(rng.exponential(1.0));
    ds.labels.push_back(1);
  }
  return ds;
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  dsm::ParamStore store;
  store.add("p", Matrix::Constant(2, 2, 0.7));
  dsm::AdamState state(store);
  dsm::adam_step(store, state, 1e-3);
  EXPECT_EQ(state.step, 1);
  EXPECT_EQ(store[0].value, Matrix::Constant(2, 2, 0.7));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  dsm::ParamStore store;
  store.add("p", Matrix::Zero(1, 3));
  store[0].grad << 0.5, -3.0, 1e-2;
  dsm::AdamState state(store);
  dsm::adam_step(store, state, 1e-3);
  EXPECT_NEAR(store[0].value(0, 0), -1e-3, 1e-9);
  EXPECT_NEAR(store[0].value(0, 1), 1e-3, 1e-9);
  EXPECT_NEAR(store[0].value(0, 2), -1e-3, 1e-6);
  EXPECT_EQ(store[0].grad.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Adam, NanGradientNamesParameter) {
  dsm::ParamStore store;
  store.add("risk1.gate", Matrix::Zero(1, 1));
  store[0].grad(0, 0) = std::nan("");
  dsm::AdamState state(store);
  try {
    dsm::adam_step(store, state, 1e-3);
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("risk1.gate"), std::string::npos);
  }
}

TEST(PrimitiveMle, ExponentialAndLogNormal) {
  dsm::Rng rng(1);
  std::vector<double> t;
  for (int i = 0; i < 20000; ++i) t.push_back(rng.exponential(2.0));
  const auto w = dsm::fit_primitive_mle(dsm::PrimitiveFamily::weibull, t);
  EXPECT_NEAR(std::exp(w.log_shape), 1.0, 0.03);
  EXPECT_NEAR(std::exp(w.log_scale), 2.0, 0.06);

  std::vector<double> ln;
  double sum = 0.0;
  for (int i = 0; i < 1000; ++i) {
    ln.push_back(std::exp(rng.normal(0.3, 0.8)));
    sum += std::log(ln.back());
  }
  const auto l = dsm::fit_primitive_mle(dsm::PrimitiveFamily::lognormal, ln);
  EXPECT_NEAR(l.log_shape, sum / 1000.0, 1e-12);
  EXPECT_NEAR(std::exp(l.log_scale), 0.8, 0.05);

  const std::vector<double> same{2.0, 2.0, 2.0};
  const auto d = dsm::fit_primitive_mle(dsm::PrimitiveFamily::lognormal, same);
  EXPECT_NEAR(std::exp(d.log_scale), 1e-3, 1e-15);
  EXPECT_THROW(dsm::fit_primitive_mle(dsm::PrimitiveFamily::weibull, std::vector<double>{}), std::invalid_argument);
}

TEST(PrimitiveMle, WeibullScoreIsZeroAtSolution) {
  dsm::Rng rng(2);
  std::vector<double> t;
  for (int i = 0; i < 500; ++i) t.push_back(std::pow(rng.exponential(1.0), 1.0 / 2.5) * 3.0);
  const auto p = dsm::fit_primitive_mle(dsm::PrimitiveFamily::weibull, t);
  // Gradient of the total log-likelihood in stored coordinates is zero.
  double ga = 0.0, gb = 0.0;
  for (double v : t) {
    const auto g = dsm::grad_log_pdf(dsm::PrimitiveFamily::weibull, p, v);
    ga += g.d_log_shape;
    gb += g.d_log_scale;
  }
  EXPECT_NEAR(ga / 500.0, 0.0, 1e-8);
  EXPECT_NEAR(gb / 500.0, 0.0, 1e-8);
  EXPECT_NEAR(std::exp(p.log_shape), 2.5, 0.25);
}

TEST(Fit, ExponentialRecoversUnitParameters) {
  const auto ds = exponential_sample(2000, 77);
  TrainConfig c;
  c.k = 1;
  c.hidden_width = 10;
  c.lambda = 0.0;
  c.seed = 5;
  const auto r = dsm::fit(ds, c);
  const auto mix = dsm::instance_mixture(r.model, 1, dsm::Vector::Zero(1));
  const double eta = std::exp(mix.components[0].log_shape);
  const double beta = std::exp(mix.components[0].log_scale);
  EXPECT_GE(eta, 0.9);
  EXPECT_LE(eta, 1.1);
  EXPECT_GE(beta, 0.9);
  EXPECT_LE(beta, 1.1);
}

TEST(Fit, DeterministicTrace) {
  const auto ds = small_synthetic(400, 1);
  const auto a = dsm::fit(ds, quick_config());
  const auto b = dsm::fit(ds, quick_config());
  EXPECT_EQ(a.train_loss, b.train_loss);
  EXPECT_EQ(a.validation_loss, b.validation_loss);
  auto ia = a.model.store.begin();
  for (const auto& p : b.model.store) EXPECT_EQ(p.value, (ia++)->value);
}

TEST(Fit, DescendsFromInitialisation) {
  const auto ds = small_synthetic(400, 2);
  const auto r = dsm::fit(ds, quick_config());
  EXPECT_LE(r.final_loss, r.initial_loss);
  EXPECT_FALSE(r.train_loss.empty());
  EXPECT_EQ(r.train_loss.size(), r.validation_loss.size());
}

TEST(Fit, AlphaZeroIgnoresCensoredRows) {
  const auto ds = small_synthetic(600, 4);
  TrainConfig c = quick_config();
  c.alpha = 0.0;
  c.lambda = 0.0;
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.labels[i] != 0) keep.push_back(i);
  }
  const auto full = dsm::fit(ds, c);
  const auto events_only = dsm::fit(ds.subset(keep), c);
  ASSERT_EQ(full.train_loss.size(), events_only.train_loss.size());
  for (std::size_t e = 0; e < full.train_loss.size(); ++e) {
    EXPECT_NEAR(full.validation_loss[e], events_only.validation_loss[e], 1e-12 * std::abs(full.validation_loss[e]));
  }
}

TEST(Fit, EarlyStoppingRestoresBest) {
  const auto ds = small_synthetic(300, 6);
  TrainConfig c = quick_config();
  c.learning_rate = 0.05;
  c.max_epochs = 60;
  c.patience = 3;
  const auto r = dsm::fit(ds, c);
  const double best = *std::min_element(r.validation_loss.begin(), r.validation_loss.end());
  EXPECT_EQ(r.validation_loss[static_cast<std::size_t>(r.best_epoch)], best);
  EXPECT_LE(static_cast<int>(r.validation_loss.size()), r.best_epoch + 1 + c.patience);
}

TEST(Fit, Errors) {
  auto ds = small_synthetic(100, 1);
  for (int& l : ds.labels) {
    if (l == 2) l = 0;
  }
  EXPECT_THROW(dsm::fit(ds, quick_config()), std::invalid_argument);
  dsm::SurvivalDataset empty;
  empty.features = Matrix(0, 2);
  EXPECT_THROW(dsm::fit(empty, quick_config()), std::invalid_argument);
}

TEST(Config, HashIgnoresSeedButNotHyperparameters) {
  TrainConfig a, b;
  b.seed = 99;
  EXPECT_EQ(a.hash(), b.hash());
  b.k = 6;
  EXPECT_NE(a.hash(), b.hash());
  EXPECT_EQ(a.hash().size(), 16u);
}

TEST(Grid, FullGridSize) {
  dsm::GridSpec g;
  EXPECT_EQ(g.expand().size(), 2u * 3 * 3 * 2 * 2 * 2);
}

TEST(GridSearch, SinglePointGrid) {
  const auto ds = small_synthetic(300, 8);
  const auto cv = dsm::grid_search_cv(ds, {quick_config()}, 3, 11, dsm::CvOptions{{0.25, 0.5, 0.75}, {}, 1});
  EXPECT_EQ(cv.best, 0u);
  EXPECT_EQ(cv.configs.size(), 1u);
  EXPECT_EQ(cv.fold_metrics.size(), 3u * 2 * 3);
  EXPECT_EQ(cv.configs[0].horizons.size(), 2u * 3);
  for (const auto& h : cv.configs[0].horizons) EXPECT_TRUE(std::isfinite(h.mean_ctd));
  EXPECT_TRUE(std::isfinite(cv.configs[0].score));
}

TEST(GridSearch, DeterministicAcrossThreadCounts) {
  const auto ds = small_synthetic(300, 8);
  TrainConfig other = quick_config();
  other.k = 3;
  const std::vector<TrainConfig> grid{quick_config(), other};
  const auto a = dsm::grid_search_cv(ds, grid, 2, 11, dsm::CvOptions{{0.5}, {}, 1});
  const auto b = dsm::grid_search_cv(ds, grid, 2, 11, dsm::CvOptions{{0.5}, {}, 3});
  ASSERT_EQ(a.fold_metrics.size(), b.fold_metrics.size());
  for (std::size_t i = 0; i < a.fold_metrics.size(); ++i) EXPECT_EQ(a.fold_metrics[i].ctd, b.fold_metrics[i].ctd);
  EXPECT_EQ(a.best, b.best);
}

TEST(GridSearch, TieGoesToSmallerModel) {
  std::vector<dsm::ConfigSummary> c(3);
  c[0].score = 0.7;
  c[0].parameter_count = 100;
  c[1].score = 0.7;
  c[1].parameter_count = 50;
  c[2].parameter_count = 10;
  EXPECT_EQ(dsm::select_best(c), 1u);
  c[0].score = 0.71;
  EXPECT_EQ(dsm::select_best(c), 0u);
  EXPECT_FALSE(dsm::select_best(std::vector<dsm::ConfigSummary>(2)).has_value());
}

TEST(GridSearch, Errors) {
  const auto ds = small_synthetic(50, 1);
  EXPECT_THROW(dsm::grid_search_cv(ds, {}, 2, 1), std::invalid_argument);
  EXPECT_THROW(dsm::grid_search_cv(ds, {quick_config()}, 1, 1), std::invalid_argument);
}

TEST(Parallel, CoversAllIndicesAndPropagatesErrors) {
  std::vector<std::atomic<int>> hits(100);
  dsm::parallel_for(100, 4, [&](std::size_t i) { hits[i]++; });
  for (auto& h : hits) EXPECT_EQ(h.load(), 1);
  EXPECT_THROW(dsm::parallel_for(10, 3, [](std::size_t i) {
                 if (i == 5) throw std::runtime_error("boom");
               }),
               std::runtime_error);
}

TEST(Parallel, WorkerCountHonoursEnvironment) {
  setenv("DSM_THREADS", "3", 1);
  EXPECT_EQ(dsm::worker_count(0), 3u);
  EXPECT_EQ(dsm::worker_count(2), 2u);
  unsetenv("DSM_THREADS");
}

TEST(Stats, MeanAndStandardError) {
  const auto [m, se] = dsm::mean_and_se({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(m, 2.5);
  EXPECT_NEAR(se, std::sqrt(5.0 / 3.0) / 2.0, 1e-15);
  EXPECT_DOUBLE_EQ(dsm::median({3.0, 1.0, 2.0, 10.0}), 2.5);
}
