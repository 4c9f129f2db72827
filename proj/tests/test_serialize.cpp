#include <gtest/gtest.h>

#include <sstream>

#include "dsm/serialize.hpp"

namespace {

dsm::DsmModel sample_model(dsm::PrimitiveFamily family) {
  dsm::ModelConfig c;
  c.family = family;
  c.k = 3;
  c.risks = 2;
  c.alpha = 0.5;
  c.lambda = 1e-8;
  c.layers.input_dim = 4;
  c.layers.hidden = {7, 5};
  dsm::Rng rng(42);
  const std::vector<dsm::PrimitiveParams> anchors{{0.1, -0.3}, {-0.2, 0.7}};
  auto m = dsm::DsmModel::create(c, anchors, rng);
  m.time_scale = 0.73125;
  m.feature_names = {"age", "sex=female", "x with spaces", "bp"};
  return m;
}

std::string save(const dsm::DsmModel& m) {
  std::ostringstream os;
  dsm::save_model(os, m);
  return os.str();
}

dsm::DsmModel load(const std::string& s) {
  std::istringstream is(s);
  return dsm::load_model(is);
}

std::string replace_line(std::string text, const std::string& prefix, const std::string& with) {
  const auto at = text.find("\n" + prefix);
  const auto end = text.find('\n', at + 1);
  return text.replace(at + 1, end - at - 1, with);
}

}  // namespace

TEST(Serialize, RoundTripIsBitExact) {
  for (auto family : {dsm::PrimitiveFamily::weibull, dsm::PrimitiveFamily::lognormal}) {
    const auto m = sample_model(family);
    const auto text = save(m);
    const auto back = load(text);
    EXPECT_EQ(save(back), text);
    EXPECT_EQ(back.feature_names, m.feature_names);
    EXPECT_EQ(back.time_scale, m.time_scale);
    dsm::Rng rng(3);
    dsm::Matrix x(6, 4);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    for (int risk : {1, 2}) {
      for (double t : {0.1, 0.9, 3.0}) {
        const dsm::Vector a = dsm::predict_survival(m, risk, x, t);
        const dsm::Vector b = dsm::predict_survival(back, risk, x, t);
        EXPECT_EQ(a, b);
      }
    }
  }
}

TEST(Serialize, RoundTripThroughFile) {
  const auto m = sample_model(dsm::PrimitiveFamily::weibull);
  const std::string path = ::testing::TempDir() + "dsm_model_roundtrip.txt";
  dsm::save_model(path, m);
  EXPECT_EQ(save(dsm::load_model(path)), save(m));
  EXPECT_THROW(dsm::load_model(path + ".missing"), std::runtime_error);
}

TEST(Serialize, MalformedFilesReportLine) {
  const auto text = save(sample_model(dsm::PrimitiveFamily::weibull));
  auto message = [](const std::string& s) {
    try {
      load(s);
    } catch (const std::exception& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message("dsm-model 2\n").find("line 1"), std::string::npos);
  EXPECT_NE(message("").find("header"), std::string::npos);
  EXPECT_NE(message(text.substr(0, text.size() - 4)).find("truncated"), std::string::npos);
  EXPECT_NE(message(replace_line(text, "alpha", "alpha 0.5x")).find("line 5"), std::string::npos);
  EXPECT_NE(message(replace_line(text, "k ", "colour blue")).find("unknown key"), std::string::npos);
  EXPECT_NE(message(replace_line(text, "hidden", "hidden 7 6")).find("shape"), std::string::npos);
  EXPECT_NE(message(replace_line(text, "features", "features 3")).find("feature count"), std::string::npos);
  EXPECT_NE(message(replace_line(text, "anchor 2", "")).find("anchor"), std::string::npos);
  EXPECT_NE(message(replace_line(text, "param risk1.gate", "")).find("parameter"), std::string::npos);
}
