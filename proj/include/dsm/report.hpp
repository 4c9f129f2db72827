#pragma once

// Run manifests and metric report writers (CSV tables and a JSON summary).

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dsm/data.hpp"
#include "dsm/training.hpp"

#ifndef DSM_GIT_DESCRIBE
#define DSM_GIT_DESCRIBE "unknown"
#endif

namespace dsm {

// Writes through a temporary file in the same directory and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct RunManifest {
  std::string command;
  std::string config_hash;
  std::map<std::string, std::uint64_t> seeds;
  std::map<std::string, std::string> inputs;
  std::map<std::string, std::string> outputs;
  nlohmann::ordered_json parameters = nlohmann::ordered_json::object();
  std::string git_describe = DSM_GIT_DESCRIBE;
  std::string started = utc_timestamp();

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["command"] = command;
    j["config_hash"] = config_hash;
    j["seeds"] = seeds;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["parameters"] = parameters;
    j["git_describe"] = git_describe;
    j["started"] = started;
    return j;
  }
};

inline constexpr const char* kManifestName = "manifest.json";

inline void write_manifest(const std::filesystem::path& dir, const RunManifest& manifest) {
  write_file_atomic(dir / kManifestName, manifest.to_json().dump(2) + "\n");
}

namespace detail {
inline std::string cell(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }
inline std::string cell(double v) { return std::isnan(v) ? std::string() : format_double(v); }
}  // namespace detail

// One row per (config, fold, risk, level). Missing metrics are empty cells.
inline std::string cv_fold_csv(const CvResult& cv) {
  std::ostringstream os;
  os << "config_hash,fold,risk,level,horizon,ctd,brier,comparable_pairs\n";
  for (const auto& fm : cv.fold_metrics) {
    os << fm.config_hash << ',' << fm.fold << ',' << fm.risk << ',' << detail::format_double(fm.level) << ','
       << detail::format_double(fm.horizon) << ',' << detail::cell(fm.ctd) << ',' << detail::cell(fm.brier) << ','
       << detail::format_double(fm.comparable_pairs) << '\n';
  }
  return os.str();
}

// Mean and standard error per configuration and horizon.
inline std::string cv_summary_csv(const CvResult& cv) {
  std::ostringstream os;
  os << "config_hash,best,parameter_count,score,risk,level,horizon,ctd_mean,ctd_se,brier_mean,brier_se,folds\n";
  for (std::size_t c = 0; c < cv.configs.size(); ++c) {
    const auto& s = cv.configs[c];
    for (const auto& h : s.horizons) {
      os << s.hash << ',' << (c == cv.best ? 1 : 0) << ',' << s.parameter_count << ',' << detail::cell(s.score)
         << ',' << h.risk << ',' << detail::format_double(h.level) << ',' << detail::format_double(h.horizon) << ','
         << detail::cell(h.mean_ctd) << ',' << detail::cell(h.se_ctd) << ',' << detail::cell(h.mean_brier) << ','
         << detail::cell(h.se_brier) << ',' << h.folds << '\n';
    }
  }
  return os.str();
}

inline nlohmann::ordered_json json_number(double v) {
  return std::isnan(v) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(v);
}

inline nlohmann::ordered_json cv_summary_json(const CvResult& cv) {
  nlohmann::ordered_json j;
  const auto& best = cv.configs.at(cv.best);
  j["best_config"] = best.config.describe();
  j["best_config_hash"] = best.hash;
  j["parameter_count"] = best.parameter_count;
  j["score"] = json_number(best.score);
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& h : best.horizons) {
    nlohmann::ordered_json r;
    r["risk"] = h.risk;
    r["level"] = h.level;
    r["horizon"] = h.horizon;
    r["ctd_mean"] = json_number(h.mean_ctd);
    r["ctd_se"] = json_number(h.se_ctd);
    r["brier_mean"] = json_number(h.mean_brier);
    r["brier_se"] = json_number(h.se_brier);
    r["folds"] = h.folds;
    rows.push_back(r);
  }
  j["horizons"] = rows;
  nlohmann::ordered_json all = nlohmann::ordered_json::array();
  for (const auto& s : cv.configs) {
    all.push_back({{"hash", s.hash}, {"config", s.config.describe()}, {"score", json_number(s.score)},
                   {"parameter_count", s.parameter_count}});
  }
  j["configs"] = all;
  return j;
}

// A NaN level (explicit horizon time) is written as an empty cell.
inline std::string eval_csv(const std::vector<FoldMetric>& metrics) {
  std::ostringstream os;
  os << "risk,horizon_level,horizon_time,ctd,brier,n_comparable_pairs\n";
  for (const auto& fm : metrics) {
    os << fm.risk << ',' << detail::cell(fm.level) << ',' << detail::format_double(fm.horizon) << ','
       << detail::cell(fm.ctd) << ',' << detail::cell(fm.brier) << ',' << detail::format_double(fm.comparable_pairs)
       << '\n';
  }
  return os.str();
}

// Representation rows with the outcome columns appended.
inline std::string embeddings_csv(const Matrix& embeddings, std::span<const double> times, std::span<const int> labels) {
  std::ostringstream os;
  for (Eigen::Index c = 0; c < embeddings.cols(); ++c) os << "phi" << c << ',';
  os << "time,event\n";
  for (Eigen::Index r = 0; r < embeddings.rows(); ++r) {
    for (Eigen::Index c = 0; c < embeddings.cols(); ++c) os << detail::format_double(embeddings(r, c)) << ',';
    os << detail::format_double(times[static_cast<std::size_t>(r)]) << ',' << labels[static_cast<std::size_t>(r)]
       << '\n';
  }
  return os.str();
}

}  // namespace dsm
