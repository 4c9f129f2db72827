#pragma once

// Text model files. Layout:
//
//   dsm-model 1
//   family weibull
//   k 4
//   risks 2
//   alpha 1
//   lambda 1e-08
//   input_dim 12
//   hidden 50 50
//   time_scale 0.731
//   features 12
//   feature <name>            (one line per feature, name runs to end of line)
//   anchor <risk> <log_shape> <log_scale>
//   param <name> <rows> <cols> <values in column-major order...>
//   end
//
// Doubles use the shortest round-trip representation, so save/load is exact.

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dsm/data.hpp"
#include "dsm/model.hpp"

namespace dsm {

namespace detail {

inline double parse_model_double(const std::string& token, int line) {
  double v = 0.0;
  const char* end = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(token.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw std::runtime_error("model file line " + std::to_string(line) + ": bad number '" + token + "'");
  }
  return v;
}

}  // namespace detail

inline void save_model(std::ostream& out, const DsmModel& model) {
  const auto& c = model.config;
  out << "dsm-model 1\n";
  out << "family " << to_string(c.family) << '\n';
  out << "k " << c.k << '\n';
  out << "risks " << c.risks << '\n';
  out << "alpha " << detail::format_double(c.alpha) << '\n';
  out << "lambda " << detail::format_double(c.lambda) << '\n';
  out << "input_dim " << c.layers.input_dim << '\n';
  out << "hidden";
  for (int w : c.layers.hidden) out << ' ' << w;
  out << '\n';
  out << "time_scale " << detail::format_double(model.time_scale) << '\n';
  out << "features " << model.feature_names.size() << '\n';
  for (const auto& name : model.feature_names) out << "feature " << name << '\n';
  for (int m = 1; m <= c.risks; ++m) {
    const auto& a = model.head(m).anchor;
    out << "anchor " << m << ' ' << detail::format_double(a.log_shape) << ' ' << detail::format_double(a.log_scale)
        << '\n';
  }
  for (const auto& p : model.store) {
    out << "param " << p.name << ' ' << p.value.rows() << ' ' << p.value.cols();
    for (Eigen::Index i = 0; i < p.value.size(); ++i) out << ' ' << detail::format_double(p.value.data()[i]);
    out << '\n';
  }
  out << "end\n";
}

inline void save_model(const std::string& path, const DsmModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write model file '" + path + "'");
  save_model(out, model);
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

inline DsmModel load_model(std::istream& in) {
  DsmModel model;
  std::vector<PrimitiveParams> anchors;
  std::string line;
  int lineno = 0;
  bool header = false;
  bool ended = false;
  std::size_t expected_features = 0;
  auto fail = [&](const std::string& msg) {
    throw std::runtime_error("model file line " + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header) {
      if (line != "dsm-model 1") fail("expected 'dsm-model 1' header");
      header = true;
      continue;
    }
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    auto number = [&]() {
      std::string tok;
      if (!(ls >> tok)) fail("missing value for '" + key + "'");
      return detail::parse_model_double(tok, lineno);
    };
    auto integer = [&]() {
      long v = 0;
      if (!(ls >> v)) fail("missing integer for '" + key + "'");
      return static_cast<int>(v);
    };
    if (key == "family") {
      std::string f;
      ls >> f;
      model.config.family = parse_family(f);
    } else if (key == "k") {
      model.config.k = integer();
    } else if (key == "risks") {
      model.config.risks = integer();
    } else if (key == "alpha") {
      model.config.alpha = number();
    } else if (key == "lambda") {
      model.config.lambda = number();
    } else if (key == "input_dim") {
      model.config.layers.input_dim = integer();
    } else if (key == "hidden") {
      int w = 0;
      while (ls >> w) model.config.layers.hidden.push_back(w);
    } else if (key == "time_scale") {
      model.time_scale = number();
    } else if (key == "features") {
      expected_features = static_cast<std::size_t>(integer());
    } else if (key == "feature") {
      model.feature_names.push_back(line.size() > 8 ? line.substr(8) : std::string());
    } else if (key == "anchor") {
      const int m = integer();
      if (m != static_cast<int>(anchors.size()) + 1) fail("anchors out of order");
      PrimitiveParams a;
      a.log_shape = number();
      a.log_scale = number();
      anchors.push_back(a);
    } else if (key == "param") {
      std::string name;
      long rows = 0;
      long cols = 0;
      if (!(ls >> name >> rows >> cols) || rows < 0 || cols < 0) fail("bad param header");
      Matrix value(rows, cols);
      for (Eigen::Index i = 0; i < value.size(); ++i) value.data()[i] = number();
      std::string extra;
      if (ls >> extra) fail("too many values for '" + name + "'");
      model.store.add(name, std::move(value));
    } else if (key == "end") {
      ended = true;
      break;
    } else {
      fail("unknown key '" + key + "'");
    }
  }
  if (!header) throw std::runtime_error("model file: empty or missing header");
  if (!ended) throw std::runtime_error("model file: truncated (no 'end' line)");
  if (model.feature_names.size() != expected_features) throw std::runtime_error("model file: feature count mismatch");
  if (anchors.size() != static_cast<std::size_t>(model.config.risks)) {
    throw std::runtime_error("model file: expected one anchor per risk");
  }
  DsmModel::validate(model.config);
  // Shapes must match a freshly built model of the same configuration.
  Rng scratch(0);
  const DsmModel reference = DsmModel::create(model.config, anchors, scratch);
  if (reference.store.size() != model.store.size()) throw std::runtime_error("model file: parameter count mismatch");
  for (const auto& p : reference.store) {
    if (!model.store.contains(p.name)) throw std::runtime_error("model file: missing parameter '" + p.name + "'");
    const Matrix& v = model.store[model.store.id(p.name)].value;
    if (v.rows() != p.value.rows() || v.cols() != p.value.cols()) {
      throw std::runtime_error("model file: parameter '" + p.name + "' has wrong shape");
    }
  }
  model.bind(anchors);
  return model;
}

inline DsmModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read model file '" + path + "'");
  return load_model(in);
}

}  // namespace dsm
