#pragma once

// Survival datasets: CSV ingestion with one-hot encoding and mean/mode
// imputation, the competing-risks synthetic generator, artificial censoring,
// stratified splitting and the two-halves transfer split.

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

#include "dsm/gradcore.hpp"
#include "dsm/metrics.hpp"
#include "dsm/rng.hpp"

namespace dsm {

struct SurvivalDataset {
  Matrix features;                 // n x d
  std::vector<double> times;       // n, > 0
  std::vector<int> labels;         // n, 0 = censored, m >= 1 = risk m
  std::vector<std::string> feature_names;
  int risks = 1;

  std::size_t size() const { return times.size(); }
  Eigen::Index dim() const { return features.cols(); }

  EventFlags event_flags(int risk) const {
    EventFlags flags(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) flags[i] = labels[i] == risk ? 1 : 0;
    return flags;
  }

  std::size_t count_label(int label) const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
  }

  SurvivalDataset subset(std::span<const std::size_t> rows) const {
    SurvivalDataset out;
    out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
    out.feature_names = feature_names;
    out.risks = risks;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      out.features.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(rows[i]));
      out.times.push_back(times.at(rows[i]));
      out.labels.push_back(labels.at(rows[i]));
    }
    return out;
  }

  void validate() const {
    if (static_cast<std::size_t>(features.rows()) != times.size() || labels.size() != times.size()) {
      throw std::invalid_argument("dataset: features, times and labels differ in length");
    }
    if (!feature_names.empty() && static_cast<Eigen::Index>(feature_names.size()) != features.cols()) {
      throw std::invalid_argument("dataset: feature name count does not match columns");
    }
    for (std::size_t i = 0; i < times.size(); ++i) {
      if (!std::isfinite(times[i]) || times[i] <= 0.0) {
        throw std::invalid_argument("dataset: row " + std::to_string(i) + " has non-positive time");
      }
      if (labels[i] < 0 || labels[i] > risks) {
        throw std::invalid_argument("dataset: row " + std::to_string(i) + " has label outside 0.." +
                                    std::to_string(risks));
      }
    }
    if (!features.allFinite()) throw std::invalid_argument("dataset: non-finite feature value");
  }
};

// ---------------------------------------------------------------------------
// CSV

// Column-wise table as read from disk. Numeric columns keep NaN for missing
// cells; categorical columns keep std::nullopt.
struct RawColumn {
  std::string name;
  bool categorical = false;
  std::vector<double> numeric;
  std::vector<std::optional<std::string>> levels;
};

struct RawTable {
  std::vector<RawColumn> columns;
  std::size_t rows = 0;

  const RawColumn& column(const std::string& name) const {
    for (const auto& c : columns) {
      if (c.name == name) return c;
    }
    throw std::invalid_argument("column '" + name + "' not found");
  }
};

namespace detail {

inline bool is_missing_token(const std::string& cell) {
  return cell.empty() || cell == "NA" || cell == "NaN" || cell == "nan" || cell == "?";
}

inline std::optional<double> parse_double(const std::string& cell) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  while (first < last && *first == ' ') ++first;
  while (last > first && *(last - 1) == ' ') --last;
  if (first < last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) return std::nullopt;
  return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  cells.push_back(std::move(cur));
  return cells;
}

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  return out + "\"";
}

}  // namespace detail

// Reads a CSV with a header row. A column is categorical if it is listed in
// `categorical` or, when that set is empty, if any non-missing cell is not a
// number. Missing cells are empty, NA, NaN, nan or ?.
inline RawTable read_csv_table(std::istream& in, const std::set<std::string>& categorical = {}) {
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("csv: empty input");
  const auto header = detail::split_csv_line(line);
  std::vector<std::vector<std::string>> cells(header.size());
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    auto parts = detail::split_csv_line(line);
    if (parts.size() != header.size()) {
      throw std::invalid_argument("csv: row " + std::to_string(row + 1) + " has " +
                                  std::to_string(parts.size()) + " cells, expected " +
                                  std::to_string(header.size()));
    }
    for (std::size_t c = 0; c < parts.size(); ++c) cells[c].push_back(std::move(parts[c]));
    ++row;
  }
  RawTable table;
  table.rows = row;
  for (std::size_t c = 0; c < header.size(); ++c) {
    RawColumn col;
    col.name = header[c];
    bool as_categorical = categorical.contains(col.name);
    if (categorical.empty()) {
      for (const auto& cell : cells[c]) {
        if (!detail::is_missing_token(cell) && !detail::parse_double(cell)) {
          as_categorical = true;
          break;
        }
      }
    }
    col.categorical = as_categorical;
    for (std::size_t r = 0; r < cells[c].size(); ++r) {
      const auto& cell = cells[c][r];
      const bool missing = detail::is_missing_token(cell);
      if (as_categorical) {
        col.levels.push_back(missing ? std::nullopt : std::optional<std::string>(cell));
      } else if (missing) {
        col.numeric.push_back(std::numeric_limits<double>::quiet_NaN());
      } else if (auto v = detail::parse_double(cell)) {
        col.numeric.push_back(*v);
      } else {
        throw std::invalid_argument("csv: row " + std::to_string(r + 1) + ", column '" + col.name +
                                    "': cannot parse '" + cell + "' as a number");
      }
    }
    table.columns.push_back(std::move(col));
  }
  return table;
}

inline RawTable read_csv_table(const std::string& path, const std::set<std::string>& categorical = {}) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return read_csv_table(in, categorical);
}

// ---------------------------------------------------------------------------
// Imputation

// Fill values learned from a training table: mean for numeric columns, mode
// (first-appearance order breaks ties) for categorical columns. Per-column
// overrides replace the learned fill for numeric columns.
class Imputer {
 public:
  static Imputer fit(const RawTable& train, const std::map<std::string, double>& overrides = {}) {
    Imputer imp;
    for (const auto& col : train.columns) {
      Fill fill;
      fill.categorical = col.categorical;
      if (auto it = overrides.find(col.name); it != overrides.end() && !col.categorical) {
        fill.numeric = it->second;
      } else if (!col.categorical) {
        double sum = 0.0;
        std::size_t count = 0;
        for (double v : col.numeric) {
          if (!std::isnan(v)) {
            sum += v;
            ++count;
          }
        }
        if (count == 0) throw std::invalid_argument("impute: column '" + col.name + "' is entirely missing");
        fill.numeric = sum / static_cast<double>(count);
      } else {
        std::vector<std::string> order;
        std::map<std::string, std::size_t> counts;
        for (const auto& lv : col.levels) {
          if (!lv) continue;
          if (counts[*lv]++ == 0) order.push_back(*lv);
        }
        if (order.empty()) throw std::invalid_argument("impute: column '" + col.name + "' is entirely missing");
        fill.level = order.front();
        for (const auto& lv : order) {
          if (counts[lv] > counts[fill.level]) fill.level = lv;
        }
      }
      imp.fills_.emplace(col.name, fill);
    }
    return imp;
  }

  RawTable apply(RawTable table) const {
    for (auto& col : table.columns) {
      auto it = fills_.find(col.name);
      if (it == fills_.end()) continue;
      if (col.categorical) {
        for (auto& lv : col.levels) {
          if (!lv) lv = it->second.level;
        }
      } else {
        for (double& v : col.numeric) {
          if (std::isnan(v)) v = it->second.numeric;
        }
      }
    }
    return table;
  }

  double numeric_fill(const std::string& column) const { return fills_.at(column).numeric; }
  const std::string& level_fill(const std::string& column) const { return fills_.at(column).level; }

 private:
  struct Fill {
    bool categorical = false;
    double numeric = 0.0;
    std::string level;
  };
  std::map<std::string, Fill> fills_;
};

// Normal-value fills for SUPPORT day-3 physiology columns.
inline std::map<std::string, double> support_normal_values() {
  return {{"alb", 3.5},  {"pafi", 333.3}, {"bili", 1.01},  {"crea", 1.01},
          {"bun", 6.51}, {"wblc", 9.0},   {"urine", 2502.0}};
}

// One-hot layout: categorical levels in first-appearance order of the table
// the schema was built from.
struct FeatureSchema {
  struct Entry {
    std::string column;
    bool categorical = false;
    std::vector<std::string> levels;
  };
  std::vector<Entry> entries;
  std::string time_column = "time";
  std::string event_column = "event";

  static FeatureSchema from_table(const RawTable& table, const std::string& time_column,
                                  const std::string& event_column) {
    FeatureSchema schema;
    schema.time_column = time_column;
    schema.event_column = event_column;
    table.column(time_column);
    table.column(event_column);
    for (const auto& col : table.columns) {
      if (col.name == time_column || col.name == event_column) continue;
      Entry e;
      e.column = col.name;
      e.categorical = col.categorical;
      if (col.categorical) {
        for (const auto& lv : col.levels) {
          if (lv && std::find(e.levels.begin(), e.levels.end(), *lv) == e.levels.end()) e.levels.push_back(*lv);
        }
      }
      schema.entries.push_back(std::move(e));
    }
    return schema;
  }

  std::vector<std::string> feature_names() const {
    std::vector<std::string> names;
    for (const auto& e : entries) {
      if (!e.categorical) {
        names.push_back(e.column);
      } else {
        for (const auto& lv : e.levels) names.push_back(e.column + "=" + lv);
      }
    }
    return names;
  }
};

// Builds a dataset from a table without missing values.
inline SurvivalDataset encode(const RawTable& table, const FeatureSchema& schema) {
  const auto& time_col = table.column(schema.time_column);
  const auto& event_col = table.column(schema.event_column);
  if (time_col.categorical || event_col.categorical) {
    throw std::invalid_argument("csv: time and event columns must be numeric");
  }
  SurvivalDataset ds;
  ds.feature_names = schema.feature_names();
  ds.features.resize(static_cast<Eigen::Index>(table.rows), static_cast<Eigen::Index>(ds.feature_names.size()));
  int max_label = 0;
  for (std::size_t r = 0; r < table.rows; ++r) {
    const double t = time_col.numeric[r];
    const double e = event_col.numeric[r];
    if (std::isnan(t) || std::isnan(e)) {
      throw std::invalid_argument("csv: row " + std::to_string(r + 1) + ": missing time or event");
    }
    if (e != std::floor(e) || e < 0) {
      throw std::invalid_argument("csv: row " + std::to_string(r + 1) + ", column '" + schema.event_column +
                                  "': event must be a non-negative integer");
    }
    ds.times.push_back(t);
    ds.labels.push_back(static_cast<int>(e));
    max_label = std::max(max_label, static_cast<int>(e));
  }
  Eigen::Index out_col = 0;
  for (const auto& entry : schema.entries) {
    const auto& col = table.column(entry.column);
    if (col.categorical != entry.categorical) {
      throw std::invalid_argument("csv: column '" + entry.column + "' changed type");
    }
    if (!entry.categorical) {
      for (std::size_t r = 0; r < table.rows; ++r) {
        if (std::isnan(col.numeric[r])) {
          throw std::invalid_argument("csv: row " + std::to_string(r + 1) + ", column '" + entry.column +
                                      "': missing value (enable imputation)");
        }
        ds.features(static_cast<Eigen::Index>(r), out_col) = col.numeric[r];
      }
      ++out_col;
    } else {
      for (std::size_t r = 0; r < table.rows; ++r) {
        if (!col.levels[r]) {
          throw std::invalid_argument("csv: row " + std::to_string(r + 1) + ", column '" + entry.column +
                                      "': missing value (enable imputation)");
        }
        for (std::size_t l = 0; l < entry.levels.size(); ++l) {
          ds.features(static_cast<Eigen::Index>(r), out_col + static_cast<Eigen::Index>(l)) =
              *col.levels[r] == entry.levels[l] ? 1.0 : 0.0;
        }
      }
      out_col += static_cast<Eigen::Index>(entry.levels.size());
    }
  }
  ds.risks = std::max(1, max_label);
  ds.validate();
  return ds;
}

struct LoadOptions {
  std::string time_column = "time";
  std::string event_column = "event";
  bool impute = false;
  std::map<std::string, double> overrides;
  std::set<std::string> categorical;
};

inline SurvivalDataset load_csv(const std::string& path, const LoadOptions& options = {}) {
  RawTable table = read_csv_table(path, options.categorical);
  if (options.impute) table = Imputer::fit(table, options.overrides).apply(std::move(table));
  return encode(table, FeatureSchema::from_table(table, options.time_column, options.event_column));
}

// Header: feature names, then time and event. Shortest round-trip formatting.
inline void write_csv(std::ostream& out, const SurvivalDataset& ds) {
  for (const auto& name : ds.feature_names) out << detail::quote_if_needed(name) << ',';
  out << "time,event\n";
  for (std::size_t r = 0; r < ds.size(); ++r) {
    for (Eigen::Index c = 0; c < ds.features.cols(); ++c) {
      out << detail::format_double(ds.features(static_cast<Eigen::Index>(r), c)) << ',';
    }
    out << detail::format_double(ds.times[r]) << ',' << ds.labels[r] << '\n';
  }
}

inline void write_csv(const std::string& path, const SurvivalDataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  write_csv(out, ds);
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Synthetic competing risks

struct GeneratorSpec {
  std::size_t n = 30000;
  int block_dim = 4;
  std::uint64_t seed = 0;
  double censor_fraction = 0.5;
};

struct SyntheticSample {
  SurvivalDataset dataset;
  std::vector<double> latent1;  // event-time draws before censoring
  std::vector<double> latent2;
  std::vector<double> mean1;  // exponential means
  std::vector<double> mean2;
  Vector gamma1, gamma2, gamma3;
};

inline constexpr double kSyntheticMeanFloor = 1e-3;

// Three standard-normal covariate blocks x1, x2, x3; coefficient vectors
// gamma1..3 ~ N(0, I) drawn once from the seed; T_k ~ Exponential with mean
// max((gamma3.x3)^2 + gammak.xk, 1e-3). Observed time is min(T1, T2) with the
// argmin as label; each row is censored with probability censor_fraction at a
// time ~ U(0, min(T1, T2)).
inline SyntheticSample generate_synthetic_sample(const GeneratorSpec& spec) {
  if (spec.n == 0) throw std::invalid_argument("generator: n must be > 0");
  if (spec.block_dim < 1) throw std::invalid_argument("generator: block dimension must be >= 1");
  if (spec.censor_fraction < 0.0 || spec.censor_fraction > 1.0) {
    throw std::invalid_argument("generator: censoring fraction outside [0, 1]");
  }
  const int b = spec.block_dim;
  Rng gamma_rng = Rng::stream(spec.seed, "synthetic.gamma");
  SyntheticSample s;
  s.gamma1.resize(b);
  s.gamma2.resize(b);
  s.gamma3.resize(b);
  for (int i = 0; i < b; ++i) s.gamma1[i] = gamma_rng.normal();
  for (int i = 0; i < b; ++i) s.gamma2[i] = gamma_rng.normal();
  for (int i = 0; i < b; ++i) s.gamma3[i] = gamma_rng.normal();

  Rng x_rng = Rng::stream(spec.seed, "synthetic.covariates");
  Rng t_rng = Rng::stream(spec.seed, "synthetic.event_times");
  Rng c_rng = Rng::stream(spec.seed, "synthetic.censoring");
  auto& ds = s.dataset;
  ds.risks = 2;
  ds.features.resize(static_cast<Eigen::Index>(spec.n), 3 * b);
  for (int block = 1; block <= 3; ++block) {
    for (int i = 1; i <= b; ++i) ds.feature_names.push_back("x" + std::to_string(block) + "_" + std::to_string(i));
  }
  for (std::size_t r = 0; r < spec.n; ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    for (Eigen::Index c = 0; c < 3 * b; ++c) ds.features(row, c) = x_rng.normal();
    const double q = ds.features.row(row).segment(2 * b, b).dot(s.gamma3.transpose());
    const double l1 = ds.features.row(row).segment(0, b).dot(s.gamma1.transpose());
    const double l2 = ds.features.row(row).segment(b, b).dot(s.gamma2.transpose());
    const double m1 = std::max(q * q + l1, kSyntheticMeanFloor);
    const double m2 = std::max(q * q + l2, kSyntheticMeanFloor);
    const double t1 = t_rng.exponential(m1);
    const double t2 = t_rng.exponential(m2);
    const double first = std::min(t1, t2);
    const bool censor = c_rng.bernoulli(spec.censor_fraction);
    const double u = c_rng.uniform_open();
    s.mean1.push_back(m1);
    s.mean2.push_back(m2);
    s.latent1.push_back(t1);
    s.latent2.push_back(t2);
    if (censor) {
      ds.times.push_back(u * first);
      ds.labels.push_back(0);
    } else {
      ds.times.push_back(first);
      ds.labels.push_back(t1 <= t2 ? 1 : 2);
    }
  }
  ds.validate();
  return s;
}

inline SurvivalDataset generate_synthetic(const GeneratorSpec& spec) {
  return generate_synthetic_sample(spec).dataset;
}

// Censors round(fraction * #uncensored) randomly chosen uncensored rows at a
// new time ~ U(0, T_original).
inline SurvivalDataset apply_artificial_censoring(SurvivalDataset ds, double fraction, std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0) throw std::invalid_argument("artificial censoring: fraction outside [0, 1]");
  std::vector<std::size_t> uncensored;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.labels[i] != 0) uncensored.push_back(i);
  }
  const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(uncensored.size())));
  if (count == 0) return ds;
  Rng rng = Rng::stream(seed, "artificial_censoring");
  rng.shuffle(uncensored);
  for (std::size_t j = 0; j < count; ++j) {
    const std::size_t i = uncensored[j];
    ds.times[i] *= rng.uniform_open();
    ds.labels[i] = 0;
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Splits

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

// Stratified k-fold: rows of each label are shuffled with their own stream
// and dealt round-robin, continuing the fold counter across labels.
inline std::vector<Fold> kfold_split(std::span<const int> labels, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("kfold: k must be >= 2");
  if (k > labels.size()) throw std::invalid_argument("kfold: k exceeds number of rows");
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(i);
  std::vector<std::size_t> assignment(labels.size());
  std::size_t counter = 0;
  for (auto& [label, rows] : groups) {
    Rng rng = Rng::stream(seed, "kfold", static_cast<std::uint64_t>(label));
    rng.shuffle(rows);
    for (std::size_t r : rows) assignment[r] = counter++ % k;
  }
  std::vector<Fold> folds(k);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t f = 0; f < k; ++f) {
      (assignment[i] == f ? folds[f].validation : folds[f].train).push_back(i);
    }
  }
  return folds;
}

inline std::vector<Fold> kfold_split(const SurvivalDataset& ds, std::size_t k, std::uint64_t seed) {
  return kfold_split(ds.labels, k, seed);
}

// Stratified holdout: for each label, round(fraction * count) rows chosen with
// a per-label stream go to the holdout.
inline Fold stratified_holdout(std::span<const int> labels, double fraction, std::uint64_t seed) {
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(i);
  std::vector<std::uint8_t> held(labels.size(), 0);
  for (auto& [label, rows] : groups) {
    Rng rng = Rng::stream(seed, "holdout", static_cast<std::uint64_t>(label));
    rng.shuffle(rows);
    const auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(rows.size())));
    for (std::size_t j = 0; j < take && j < rows.size(); ++j) held[rows[j]] = 1;
  }
  Fold out;
  for (std::size_t i = 0; i < labels.size(); ++i) (held[i] ? out.validation : out.train).push_back(i);
  return out;
}

struct TransferSplit {
  SurvivalDataset a;  // event 1 vs censored
  SurvivalDataset b;  // event 2 (relabelled 1) vs censored
  std::vector<std::size_t> rows_a;  // source rows kept in a
  std::vector<std::size_t> rows_b;
  std::size_t discarded_a = 0;
  std::size_t discarded_b = 0;
};

// Random halves of a two-risk dataset. Half A drops rows whose first event
// was risk 2; half B drops rows whose first event was risk 1. Both become
// single-risk datasets.
inline TransferSplit transfer_split(const SurvivalDataset& ds, std::uint64_t seed) {
  if (ds.risks != 2) throw std::invalid_argument("transfer_split: dataset must have two risks");
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::stream(seed, "transfer_split");
  rng.shuffle(order);
  const std::size_t half = ds.size() / 2;
  TransferSplit out;
  for (std::size_t j = 0; j < order.size(); ++j) {
    const std::size_t i = order[j];
    const bool in_a = j < half;
    const int drop = in_a ? 2 : 1;
    if (ds.labels[i] == drop) {
      ++(in_a ? out.discarded_a : out.discarded_b);
      continue;
    }
    (in_a ? out.rows_a : out.rows_b).push_back(i);
  }
  std::sort(out.rows_a.begin(), out.rows_a.end());
  std::sort(out.rows_b.begin(), out.rows_b.end());
  out.a = ds.subset(out.rows_a);
  out.b = ds.subset(out.rows_b);
  out.a.risks = 1;
  out.b.risks = 1;
  for (int& l : out.b.labels) l = l == 2 ? 1 : 0;
  return out;
}

}  // namespace dsm
