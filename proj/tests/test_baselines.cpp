#include <gtest/gtest.h>

#include <cmath>

#include "dsm/baselines.hpp"

using dsm::Matrix;
using dsm::Vector;

namespace {

// Breslow negative log partial likelihood by the defining double sum.
double nll_oracle(const Matrix& x, const std::vector<double>& t, const dsm::EventFlags& e, const Vector& b,
                  double ridge) {
  double total = 0.0;
  double events = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    if (!e[static_cast<std::size_t>(i)]) continue;
    double risk_set = 0.0;
    for (Eigen::Index j = 0; j < x.rows(); ++j) {
      if (t[static_cast<std::size_t>(j)] >= t[static_cast<std::size_t>(i)]) risk_set += std::exp(x.row(j).dot(b));
    }
    total += -x.row(i).dot(b) + std::log(risk_set);
    events += 1.0;
  }
  return total / events + 0.5 * ridge * b.squaredNorm();
}

struct CoxSample {
  Matrix x;
  std::vector<double> t;
  dsm::EventFlags e;
};

// Proportional hazards with exponential baseline and independent censoring.
CoxSample cox_sample(std::size_t n, const Vector& beta, std::uint64_t seed) {
  dsm::Rng rng(seed);
  CoxSample s;
  s.x.resize(static_cast<Eigen::Index>(n), beta.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (Eigen::Index c = 0; c < beta.size(); ++c) s.x(static_cast<Eigen::Index>(i), c) = rng.normal(0.0, 1.0);
    const double event = rng.exponential(std::exp(-s.x.row(static_cast<Eigen::Index>(i)).dot(beta)));
    const double censor = rng.exponential(2.0);
    s.t.push_back(std::min(event, censor));
    s.e.push_back(event <= censor ? 1 : 0);
  }
  return s;
}

}  // namespace

TEST(CphObjective, ThreeSubjectHandValue) {
  Matrix x(3, 1);
  x << 1.0, 0.0, -1.0;
  const std::vector<double> t{1.0, 2.0, 3.0};
  const dsm::EventFlags e{1, 1, 0};
  Vector b(1);
  b << 0.5;
  // events at t=1 (set {1,2,3}) and t=2 (set {2,3})
  const double hand = (-0.5 + std::log(std::exp(0.5) + 1.0 + std::exp(-0.5)) + std::log(1.0 + std::exp(-0.5))) / 2.0;
  const auto obj = dsm::cph_objective(x, t, e, b, 0.0);
  EXPECT_NEAR(obj.value, hand, 1e-14);
  EXPECT_NEAR(dsm::cph_objective(x, t, e, b, 0.2).value, hand + 0.1 * 0.25, 1e-14);
}

TEST(CphObjective, MatchesOracleWithTies) {
  dsm::Rng rng(5);
  Matrix x(40, 3);
  std::vector<double> t;
  dsm::EventFlags e;
  for (Eigen::Index i = 0; i < 40; ++i) {
    for (Eigen::Index c = 0; c < 3; ++c) x(i, c) = rng.normal(0.0, 1.0);
    t.push_back(static_cast<double>(rng.below(8)));  // heavy ties
    e.push_back(rng.uniform() < 0.6 ? 1 : 0);
  }
  Vector b(3);
  b << 0.3, -0.7, 0.1;
  EXPECT_NEAR(dsm::cph_objective(x, t, e, b, 1e-4).value, nll_oracle(x, t, e, b, 1e-4), 1e-12);
}

TEST(CphObjective, GradientAndHessianMatchFiniteDifferences) {
  const Vector beta = (Vector(3) << 0.4, -0.2, 0.8).finished();
  const auto s = cox_sample(80, beta, 9);
  const Vector b = (Vector(3) << 0.1, 0.2, -0.3).finished();
  const auto obj = dsm::cph_objective(s.x, s.t, s.e, b, 1e-4);
  const double h = 1e-6;
  for (Eigen::Index c = 0; c < 3; ++c) {
    Vector up = b, down = b;
    up[c] += h;
    down[c] -= h;
    const auto fu = dsm::cph_objective(s.x, s.t, s.e, up, 1e-4);
    const auto fd = dsm::cph_objective(s.x, s.t, s.e, down, 1e-4);
    EXPECT_NEAR(obj.gradient[c], (fu.value - fd.value) / (2 * h), 1e-6);
    for (Eigen::Index r = 0; r < 3; ++r) {
      EXPECT_NEAR(obj.hessian(r, c), (fu.gradient[r] - fd.gradient[r]) / (2 * h), 1e-6);
    }
  }
}

TEST(CphFit, OneDimensionalGridOracle) {
  const Vector beta = (Vector(1) << 0.9).finished();
  const auto s = cox_sample(150, beta, 21);
  dsm::CphOptions opt;
  opt.ridge = 0.0;
  const auto model = dsm::cph_fit(s.x, s.t, s.e, opt);
  // golden-section search on the oracle in original units
  double lo = -5.0, hi = 5.0;
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  auto f = [&](double v) { return nll_oracle(s.x, s.t, s.e, (Vector(1) << v).finished(), 0.0); };
  while (hi - lo > 1e-9) {
    const double a = hi - g * (hi - lo);
    const double b = lo + g * (hi - lo);
    if (f(a) < f(b)) hi = b;
    else lo = a;
  }
  EXPECT_NEAR(model.coef[0], 0.5 * (lo + hi), 1e-4);
  EXPECT_GT(model.coef[0], 0.0);
}

TEST(CphFit, RecoversSimulatedCoefficientsAndConverges) {
  const Vector beta = (Vector(2) << 1.0, -0.5).finished();
  const auto s = cox_sample(3000, beta, 4);
  const auto model = dsm::cph_fit(s.x, s.t, s.e);
  EXPECT_NEAR(model.coef[0], 1.0, 0.1);
  EXPECT_NEAR(model.coef[1], -0.5, 0.1);
  EXPECT_LE(model.gradient_norm, 1e-6);
  EXPECT_LE(model.iterations, 100);
}

TEST(CphFit, ZeroVarianceFeatureGetsZeroCoefficient) {
  const Vector beta = (Vector(1) << 0.7).finished();
  auto s = cox_sample(200, beta, 2);
  Matrix x(s.x.rows(), 2);
  x.col(0) = s.x.col(0);
  x.col(1).setConstant(3.0);
  const auto model = dsm::cph_fit(x, s.t, s.e);
  EXPECT_EQ(model.coef[1], 0.0);
  EXPECT_NEAR(model.coef[0], dsm::cph_fit(s.x, s.t, s.e).coef[0], 1e-6);
}

TEST(CphFit, RankingInvariantToAffineRescaling) {
  const Vector beta = (Vector(2) << 0.6, 0.3).finished();
  const auto s = cox_sample(300, beta, 8);
  Matrix scaled = s.x;
  scaled.col(0) = scaled.col(0) * 250.0 + Vector::Constant(scaled.rows(), 1e3);
  const Vector r1 = dsm::cph_risk(dsm::cph_fit(s.x, s.t, s.e), s.x);
  const Vector r2 = dsm::cph_risk(dsm::cph_fit(scaled, s.t, s.e), scaled);
  // equal up to an additive constant
  const Vector diff = r2 - r1;
  EXPECT_NEAR(diff.maxCoeff() - diff.minCoeff(), 0.0, 1e-6);
}

TEST(CphFit, NoEventsAndNonConvergence) {
  Matrix x = Matrix::Random(5, 1);
  const std::vector<double> t{1, 2, 3, 4, 5};
  EXPECT_THROW(dsm::cph_fit(x, t, dsm::EventFlags(5, 0)), std::invalid_argument);
  const Vector beta = (Vector(2) << 1.0, -0.5).finished();
  const auto s = cox_sample(200, beta, 4);
  dsm::CphOptions opt;
  opt.max_iterations = 0;
  try {
    dsm::cph_fit(s.x, s.t, s.e, opt);
    FAIL();
  } catch (const dsm::CphConvergenceError& err) {
    EXPECT_EQ(err.iterations, 0);
    EXPECT_GT(err.gradient_norm, 1e-6);
  }
}

TEST(CphRisk, LinearInFeatures) {
  dsm::CphModel m;
  m.coef = (Vector(2) << 2.0, -1.0).finished();
  const Vector a = (Vector(2) << 1.0, 3.0).finished();
  const Vector b = (Vector(2) << -2.0, 0.5).finished();
  EXPECT_DOUBLE_EQ(dsm::cph_risk(m, Vector(a + b)), dsm::cph_risk(m, a) + dsm::cph_risk(m, b));
  EXPECT_THROW(dsm::cph_risk(m, Vector(Vector::Zero(3))), dsm::DimensionError);
}

TEST(Transfer, SeparatingEmbeddingNearOneRandomNearHalf) {
  dsm::Rng rng(17);
  const std::size_t n = 600;
  Matrix good(static_cast<Eigen::Index>(n), 2);
  Matrix noise(static_cast<Eigen::Index>(n), 2);
  std::vector<double> t;
  std::vector<int> labels;
  for (std::size_t i = 0; i < n; ++i) {
    const double ti = rng.exponential(1.0);
    t.push_back(ti);
    labels.push_back(rng.uniform() < 0.7 ? 1 : 0);
    good(static_cast<Eigen::Index>(i), 0) = -std::log(ti);
    good(static_cast<Eigen::Index>(i), 1) = rng.normal(0.0, 1.0);
    noise(static_cast<Eigen::Index>(i), 0) = rng.normal(0.0, 1.0);
    noise(static_cast<Eigen::Index>(i), 1) = rng.normal(0.0, 1.0);
  }
  const auto hi = dsm::transfer_eval(good, t, labels, 5, 1);
  EXPECT_GT(hi.c_index, 0.97);
  EXPECT_EQ(hi.fold_c.size(), 5u);
  const auto lo = dsm::transfer_eval(noise, t, labels, 5, 1);
  EXPECT_NEAR(lo.c_index, 0.5, 0.06);
  EXPECT_GT(lo.ci_half_width, 0.0);
  EXPECT_THROW(dsm::transfer_eval(noise, std::vector<double>(3, 1.0), labels, 5, 1), dsm::DimensionError);
}
