#include <gtest/gtest.h>

#include <cmath>

#include "dsm/gradcore.hpp"
#include "dsm/rng.hpp"

using dsm::ActivationKind;
using dsm::Matrix;
using dsm::ParamStore;
using dsm::Tape;
using dsm::Var;
using dsm::Vector;

namespace {

Matrix random_matrix(dsm::Rng& rng, int r, int c) {
  Matrix m(r, c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < r; ++i) m(i, j) = rng.normal();
  return m;
}

// Central-difference check of every parameter coordinate of `loss`.
void check_gradients(ParamStore& store, const std::function<Var(Tape&)>& loss, double tol = 1e-6) {
  store.zero_grad();
  {
    Tape tape(&store);
    tape.backward(loss(tape));
  }
  const double h = 1e-6;
  for (auto& p : store) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      const double saved = p.value.data()[i];
      auto eval = [&](double v) {
        p.value.data()[i] = v;
        Tape tape(static_cast<const ParamStore*>(&store));
        return tape.scalar(loss(tape));
      };
      const double fd = (eval(saved + h) - eval(saved - h)) / (2 * h);
      p.value.data()[i] = saved;
      const double g = p.grad.data()[i];
      EXPECT_LE(std::abs(g - fd) / std::max(1.0, std::abs(fd)), tol) << p.name << "[" << i << "]";
    }
  }
}

}  // namespace

TEST(Activation, Values) {
  EXPECT_EQ(dsm::activation(ActivationKind::selu, 0.0), 0.0);
  EXPECT_NEAR(dsm::activation(ActivationKind::selu, 1.0), 1.0507009873554805, 1e-15);
  EXPECT_NEAR(dsm::activation(ActivationKind::selu, -1.0), 1.0507009873554805 * 1.6732632423543772 * std::expm1(-1.0),
              1e-15);
  EXPECT_EQ(dsm::activation(ActivationKind::relu6, 7.0), 6.0);
  EXPECT_EQ(dsm::activation(ActivationKind::relu6, -1.0), 0.0);
  EXPECT_EQ(dsm::activation(ActivationKind::relu6, 2.5), 2.5);
}

TEST(Activation, SoftmaxEqualLogitsIsUniform) {
  const Vector p = dsm::activation(ActivationKind::softmax, Vector::Constant(4, 3.7));
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(p[i], 0.25, 1e-15);
}

TEST(Activation, SoftmaxShiftInvarianceAndNormalisation) {
  dsm::Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    Vector z(6);
    for (int i = 0; i < 6; ++i) z[i] = rng.normal(0, 5);
    const Vector p = dsm::softmax(z);
    const Vector q = dsm::softmax((z.array() + rng.normal(0, 50)).matrix());
    EXPECT_NEAR(p.sum(), 1.0, 1e-12);
    Eigen::Index ap, aq;
    p.maxCoeff(&ap);
    q.maxCoeff(&aq);
    EXPECT_EQ(ap, aq);
    EXPECT_LE((p - q).cwiseAbs().maxCoeff(), 1e-12);
    const Vector lp = dsm::log_softmax(z);
    for (int i = 0; i < 6; ++i) EXPECT_NEAR(std::exp(lp[i]), p[i], 1e-12);
  }
}

TEST(Activation, Ranges) {
  dsm::Rng rng(8);
  for (int i = 0; i < 1000; ++i) {
    const double x = rng.normal(0, 10);
    const double r = dsm::activation(ActivationKind::relu6, x);
    EXPECT_GE(r, 0.0);
    EXPECT_LE(r, 6.0);
    const double t = dsm::activation(ActivationKind::tanh, x * 0.1);
    EXPECT_GT(t, -1.0);
    EXPECT_LT(t, 1.0);
  }
}

TEST(Backward, SingleParameterHasUnitGradient) {
  ParamStore store;
  const auto id = store.add("p", Matrix::Constant(1, 1, 3.0));
  Tape tape(&store);
  tape.backward(tape.param(id));
  EXPECT_EQ(store[id].grad(0, 0), 1.0);
}

TEST(Backward, QuadraticAndAccumulation) {
  ParamStore store;
  Matrix v(1, 2);
  v << 1.0, 2.0;
  const auto id = store.add("p", v);
  Tape tape(&store);
  Var loss = tape.sum(tape.square(tape.param(id)));
  EXPECT_EQ(tape.backward(loss), 5.0);
  EXPECT_EQ(store[id].grad(0, 0), 2.0);
  EXPECT_EQ(store[id].grad(0, 1), 4.0);
  tape.backward(loss);
  EXPECT_EQ(store[id].grad(0, 1), 8.0);
  store.zero_grad();
  EXPECT_EQ(store[id].grad(0, 1), 0.0);
}

TEST(Backward, UsageErrors) {
  ParamStore store;
  store.add("p", Matrix::Ones(1, 1));
  Tape tape(&store);
  EXPECT_THROW(tape.backward(Var{}), dsm::UsageError);
  Tape other(&store);
  Var foreign = other.param(0);
  EXPECT_THROW(tape.backward(foreign), dsm::UsageError);
  Tape read_only(static_cast<const ParamStore*>(&store));
  EXPECT_THROW(read_only.backward(read_only.param(0)), dsm::UsageError);
}

TEST(Backward, OperationsMatchFiniteDifferences) {
  dsm::Rng rng(17);
  ParamStore store;
  const auto w = store.add("w", random_matrix(rng, 3, 4));
  const auto b = store.add("b", random_matrix(rng, 1, 4));
  const auto g = store.add("g", random_matrix(rng, 4, 3));
  const Matrix x = random_matrix(rng, 5, 3);
  const std::vector<int> rows{4, 0, 2, 2};
  const std::vector<double> times{0.5, 1.2, 2.0, 0.7};
  for (auto kind : {ActivationKind::relu6, ActivationKind::selu, ActivationKind::tanh, ActivationKind::softmax}) {
    check_gradients(store, [&](Tape& t) {
      Var h = t.activate(t.add_row(t.matmul(t.constant(x), t.param(w)), t.param(b)), kind);
      Var logits = t.matmul(h, t.param(g));
      Var lw = t.log_softmax_rows(logits);
      Var sw = t.softmax_rows(logits);
      Var picked = t.gather_rows(t.mul(sw, lw), rows);
      Var e = t.row_sum(picked);
      Var v = t.weighted_sum(e, Vector::LinSpaced(4, 0.1, 1.0));
      Var shape = t.scale(t.gather_rows(logits, rows), 0.3);
      Var scale = t.shift(t.gather_rows(sw, rows), -0.2);
      Var prim = t.primitive(dsm::PrimitiveFamily::weibull, Tape::PrimitiveTerm::log_pdf, shape, scale, times);
      Var prim2 = t.primitive(dsm::PrimitiveFamily::lognormal, Tape::PrimitiveTerm::log_survival, shape, scale, times);
      return t.add(t.add(v, t.sum(prim)), t.sum(t.square(prim2)));
    });
  }
}

TEST(Mlp, ZeroWeightsGiveZero) {
  ParamStore store;
  dsm::Rng rng(1);
  dsm::LayerSpec spec{3, {5, 4}};
  const auto mlp = dsm::Mlp::create(store, spec, rng);
  for (auto& p : store) p.value.setZero();
  const Matrix out = dsm::mlp_forward(Matrix::Random(2, 3), store, mlp);
  EXPECT_EQ(out.rows(), 2);
  EXPECT_EQ(out.cols(), 4);
  EXPECT_EQ(out.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Mlp, IdentityLayerClampsWithRelu6) {
  ParamStore store;
  dsm::Rng rng(1);
  const auto mlp = dsm::Mlp::create(store, dsm::LayerSpec{2, {2}}, rng);
  store[mlp.weights[0]].value = Matrix::Identity(2, 2);
  Matrix x(1, 2);
  x << 7.0, -1.0;
  const Matrix out = dsm::mlp_forward(x, store, mlp);
  EXPECT_EQ(out(0, 0), 6.0);
  EXPECT_EQ(out(0, 1), 0.0);
}

TEST(Mlp, TwoLayerMatchesHandEvaluation) {
  ParamStore store;
  dsm::Rng rng(77);
  const auto mlp = dsm::Mlp::create(store, dsm::LayerSpec{2, {2, 2}}, rng);
  store[mlp.biases[0]].value << 0.1, -0.2;
  store[mlp.biases[1]].value << 0.05, 0.3;
  const Matrix& w0 = store[mlp.weights[0]].value;
  const Matrix& w1 = store[mlp.weights[1]].value;
  const double x0 = 0.8, x1 = -1.5;
  auto r6 = [](double v) { return std::min(std::max(v, 0.0), 6.0); };
  const double h0 = r6(x0 * w0(0, 0) + x1 * w0(1, 0) + 0.1);
  const double h1 = r6(x0 * w0(0, 1) + x1 * w0(1, 1) - 0.2);
  const double o0 = r6(h0 * w1(0, 0) + h1 * w1(1, 0) + 0.05);
  const double o1 = r6(h0 * w1(0, 1) + h1 * w1(1, 1) + 0.3);
  Matrix x(1, 2);
  x << x0, x1;
  const Matrix out = dsm::mlp_forward(x, store, mlp);
  EXPECT_NEAR(out(0, 0), o0, 1e-15);
  EXPECT_NEAR(out(0, 1), o1, 1e-15);
}

TEST(Mlp, GlorotRangeAndZeroBias) {
  ParamStore store;
  dsm::Rng rng(2);
  const auto mlp = dsm::Mlp::create(store, dsm::LayerSpec{10, {50}}, rng);
  const double limit = std::sqrt(6.0 / 60.0);
  EXPECT_LE(store[mlp.weights[0]].value.cwiseAbs().maxCoeff(), limit);
  EXPECT_EQ(store[mlp.biases[0]].value.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(store[mlp.weights[0]].name, "layer0.weight");
}

TEST(Mlp, DimensionErrorNamesLayer) {
  ParamStore store;
  dsm::Rng rng(2);
  const auto mlp = dsm::Mlp::create(store, dsm::LayerSpec{3, {4}}, rng);
  try {
    dsm::mlp_forward(Matrix::Zero(1, 5), store, mlp);
    FAIL() << "expected DimensionError";
  } catch (const dsm::DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 0"), std::string::npos);
  }
}

TEST(ParamStore, DuplicateNamesRejected) {
  ParamStore store;
  store.add("a", Matrix::Zero(1, 1));
  EXPECT_THROW(store.add("a", Matrix::Zero(1, 1)), dsm::UsageError);
  EXPECT_THROW(store.id("missing"), std::out_of_range);
}
