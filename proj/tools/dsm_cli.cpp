// dsm: command-line driver for generating data, training, cross-validation,
// censoring ablation, evaluation, embedding export and the transfer experiment.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "dsm/baselines.hpp"
#include "dsm/report.hpp"
#include "dsm/serialize.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Hyperparameters. List-valued options span a grid; `train` needs one value each.
struct Hyper {
  std::vector<double> lr{1e-3};
  std::vector<int> k{4};
  std::vector<double> alpha{1.0};
  std::vector<std::string> family{"weibull"};
  std::vector<int> layers{1};
  std::vector<int> width{50};
  double lambda = 1e-8;
  int epochs = 200;
  int batch = 0;
  int patience = 10;
  double validation = 0.1;

  void add_to(CLI::App* app) {
    app->add_option("--lr", lr, "learning rate(s)")->delimiter(',')->capture_default_str();
    app->add_option("--k", k, "mixture components")->delimiter(',')->capture_default_str();
    app->add_option("--alpha", alpha, "censored-term weight(s)")->delimiter(',')->capture_default_str();
    app->add_option("--family", family, "weibull and/or lognormal")->delimiter(',')->capture_default_str();
    app->add_option("--layers", layers, "hidden layer count(s)")->delimiter(',')->capture_default_str();
    app->add_option("--width", width, "hidden layer width(s)")->delimiter(',')->capture_default_str();
    app->add_option("--lambda", lambda, "prior strength")->capture_default_str();
    app->add_option("--epochs", epochs, "maximum epochs")->capture_default_str();
    app->add_option("--batch", batch, "minibatch size (0: automatic)")->capture_default_str();
    app->add_option("--patience", patience, "early stopping patience")->capture_default_str();
    app->add_option("--validation", validation, "holdout fraction for early stopping")->capture_default_str();
  }

  std::vector<dsm::TrainConfig> grid(std::uint64_t seed) const {
    dsm::GridSpec g;
    g.learning_rates = lr;
    g.ks = k;
    g.alphas = alpha;
    g.families.clear();
    for (const auto& f : family) g.families.push_back(dsm::parse_family(f));
    g.hidden_layers = layers;
    g.hidden_widths = width;
    g.base.lambda = lambda;
    g.base.max_epochs = epochs;
    g.base.batch_size = batch;
    g.base.patience = patience;
    g.base.validation_fraction = validation;
    g.base.seed = seed;
    return g.expand();
  }

  ordered_json to_json() const {
    return {{"lr", lr},         {"k", k},           {"alpha", alpha},       {"family", family},
            {"layers", layers}, {"width", width},   {"lambda", lambda},     {"epochs", epochs},
            {"batch", batch},   {"patience", patience}, {"validation", validation}};
  }
};

Hyper default_grid() {
  const dsm::GridSpec g;
  Hyper h;
  h.lr = g.learning_rates;
  h.k = g.ks;
  h.alpha = g.alphas;
  h.family = {"weibull", "lognormal"};
  h.layers = g.hidden_layers;
  h.width = g.hidden_widths;
  return h;
}

struct DataOptions {
  std::string path;
  std::string time_column = "time";
  std::string event_column = "event";
  bool impute = false;
  bool support_normals = false;
  std::vector<std::string> categorical;

  void add_to(CLI::App* app) {
    app->add_option("--data", path, "input CSV")->required()->check(CLI::ExistingFile);
    app->add_option("--time-col", time_column, "time column")->capture_default_str();
    app->add_option("--event-col", event_column, "event column (0 = censored)")->capture_default_str();
    app->add_option("--categorical", categorical, "categorical columns")->delimiter(',');
    app->add_flag("--impute", impute, "mean/mode imputation of missing cells");
    app->add_flag("--support-normals", support_normals, "impute with SUPPORT normal values where available");
  }

  dsm::SurvivalDataset load() const {
    dsm::LoadOptions o;
    o.time_column = time_column;
    o.event_column = event_column;
    o.impute = impute || support_normals;
    if (support_normals) o.overrides = dsm::support_normal_values();
    o.categorical = {categorical.begin(), categorical.end()};
    return dsm::load_csv(path, o);
  }
};

// Values from a flat key=value file fill options not given on the command line.
void apply_config(CLI::App* app, const std::string& path) {
  if (path.empty()) return;
  for (const auto& item : CLI::ConfigINI().from_file(path)) {
    if (!item.parents.empty()) throw CLI::ConfigError("config: sections are not supported ('" + item.fullname() + "')");
    if (item.name == "config") continue;
    CLI::Option* opt = app->get_option_no_throw("--" + item.name);
    if (opt == nullptr) throw CLI::ConfigError("config: unknown key '" + item.name + "'");
    if (opt->count() > 0) continue;
    opt->add_result(item.inputs);
    opt->run_callback();
  }
}

std::vector<double> parse_levels(const std::vector<double>& levels) {
  for (double l : levels) {
    if (!(l > 0.0 && l <= 1.0)) throw dsm::UsageError("quantile levels must lie in (0, 1]");
  }
  return levels;
}

std::string write_dataset(const fs::path& path, const dsm::SurvivalDataset& ds) {
  std::ostringstream os;
  dsm::write_csv(os, ds);
  dsm::write_file_atomic(path, os.str());
  return path.string();
}

std::string combined_hash(const std::vector<dsm::TrainConfig>& grid) {
  std::string all;
  for (const auto& c : grid) all += c.hash();
  return hex16(dsm::fnv1a(all));
}

void check_features(const dsm::DsmModel& model, const dsm::SurvivalDataset& ds) {
  if (!model.feature_names.empty() && model.feature_names != ds.feature_names) {
    throw dsm::DimensionError("data columns do not match the model's training features");
  }
}

// ---------------------------------------------------------------------------

struct GenerateCmd {
  std::size_t n = 30000;
  std::uint64_t seed = 0;
  double censor_frac = 0.5;
  int block_dim = 4;
  std::string out;

  void run() const {
    dsm::GeneratorSpec spec;
    spec.n = n;
    spec.seed = seed;
    spec.censor_fraction = censor_frac;
    spec.block_dim = block_dim;
    const fs::path dir(out);
    dsm::RunManifest m;
    m.command = "generate";
    m.seeds["seed"] = seed;
    m.outputs["data"] = (dir / "data.csv").string();
    m.parameters = {{"n", n}, {"censor_frac", censor_frac}, {"block_dim", block_dim}};
    m.config_hash = hex16(dsm::fnv1a(m.parameters.dump()));
    dsm::write_manifest(dir, m);
    const auto ds = dsm::generate_synthetic(spec);
    write_dataset(dir / "data.csv", ds);
    std::cout << "wrote " << ds.size() << " rows";
    for (int label = 0; label <= ds.risks; ++label) std::cout << ", label " << label << ": " << ds.count_label(label);
    std::cout << '\n';
  }
};

struct TrainCmd {
  DataOptions data;
  Hyper hyper;
  std::uint64_t seed = 0;
  std::string config;
  std::string out;

  void run() const {
    const auto grid = hyper.grid(seed);
    if (grid.size() != 1) throw dsm::UsageError("train takes a single value for every hyperparameter");
    const dsm::TrainConfig& cfg = grid.front();
    const fs::path dir(out);
    dsm::RunManifest m;
    m.command = "train";
    m.config_hash = cfg.hash();
    m.seeds["seed"] = seed;
    m.inputs["data"] = data.path;
    if (!config.empty()) m.inputs["config"] = config;
    m.outputs["model"] = (dir / "model.txt").string();
    m.outputs["train_log"] = (dir / "train_log.csv").string();
    m.parameters = hyper.to_json();
    dsm::write_manifest(dir, m);

    const auto ds = data.load();
    const auto result = dsm::fit(ds, cfg);
    std::ostringstream model_text;
    dsm::save_model(model_text, result.model);
    dsm::write_file_atomic(dir / "model.txt", model_text.str());
    std::ostringstream log;
    log << "epoch,train_loss,validation_loss\n";
    for (std::size_t e = 0; e < result.train_loss.size(); ++e) {
      log << e << ',' << dsm::detail::format_double(result.train_loss[e]) << ',';
      if (e < result.validation_loss.size()) log << dsm::detail::format_double(result.validation_loss[e]);
      log << '\n';
    }
    dsm::write_file_atomic(dir / "train_log.csv", log.str());
    std::cout << "config " << cfg.hash() << " (" << cfg.describe() << ")\n"
              << "epochs " << result.train_loss.size() << ", best " << result.best_epoch << ", loss "
              << result.initial_loss << " -> " << result.final_loss << ", parameters "
              << dsm::parameter_count(result.model) << '\n';
  }
};

struct CvCmd {
  DataOptions data;
  Hyper hyper = default_grid();
  std::uint64_t seed = 0;
  std::size_t folds = 5;
  std::vector<double> levels{0.25, 0.5, 0.75};
  unsigned threads = 0;
  std::string config;
  std::string out;

  void add_common(CLI::App* app) {
    data.add_to(app);
    hyper.add_to(app);
    app->add_option("--seed", seed, "seed for folds and initialisation")->capture_default_str();
    app->add_option("--folds", folds, "number of folds")->capture_default_str();
    app->add_option("--levels", levels, "event-time quantile levels for horizons")->delimiter(',')->capture_default_str();
    app->add_option("--threads", threads, "worker threads (0: DSM_THREADS or all cores)");
    app->add_option("--config", config, "flat key=value file; flags override it");
    app->add_option("--out", out, "output directory")->required();
  }

  dsm::CvResult cross_validate(const dsm::SurvivalDataset& ds, const std::vector<dsm::TrainConfig>& grid,
                               double fraction) const {
    dsm::CvOptions o;
    o.levels = parse_levels(levels);
    o.threads = threads;
    if (fraction > 0.0) {
      const std::uint64_t s = seed;
      o.train_transform = [fraction, s](const dsm::SurvivalDataset& train, std::size_t fold) {
        std::uint64_t state = s ^ (0x9e3779b97f4a7c15ULL * (fold + 1));
        return dsm::apply_artificial_censoring(train, fraction, dsm::splitmix64(state));
      };
    }
    return dsm::grid_search_cv(ds, grid, folds, seed, o);
  }

  static void write_results(const fs::path& dir, const dsm::CvResult& cv) {
    dsm::write_file_atomic(dir / "cv_folds.csv", dsm::cv_fold_csv(cv));
    dsm::write_file_atomic(dir / "cv_summary.csv", dsm::cv_summary_csv(cv));
    dsm::write_file_atomic(dir / "cv_summary.json", dsm::cv_summary_json(cv).dump(2) + "\n");
  }

  dsm::RunManifest manifest(const std::string& command, const std::vector<dsm::TrainConfig>& grid,
                            const fs::path& dir) const {
    dsm::RunManifest m;
    m.command = command;
    m.config_hash = combined_hash(grid);
    m.seeds["seed"] = seed;
    m.inputs["data"] = data.path;
    if (!config.empty()) m.inputs["config"] = config;
    m.outputs["folds"] = (dir / "cv_folds.csv").string();
    m.outputs["summary"] = (dir / "cv_summary.csv").string();
    m.outputs["summary_json"] = (dir / "cv_summary.json").string();
    m.parameters = hyper.to_json();
    m.parameters["folds"] = folds;
    m.parameters["levels"] = levels;
    m.parameters["grid_size"] = grid.size();
    return m;
  }

  static void print_best(const dsm::CvResult& cv) {
    const auto& best = cv.configs[cv.best];
    std::cout << "best " << best.hash << " (" << best.config.describe() << "), score "
              << dsm::detail::cell(best.score) << '\n';
    for (const auto& h : best.horizons) {
      std::cout << "  risk " << h.risk << " q" << h.level << " t=" << h.horizon << "  ctd "
                << dsm::detail::cell(h.mean_ctd) << " +- " << dsm::detail::cell(h.se_ctd) << "  brier "
                << dsm::detail::cell(h.mean_brier) << '\n';
    }
  }

  void run() const {
    const auto grid = hyper.grid(seed);
    const fs::path dir(out);
    dsm::write_manifest(dir, manifest("cv", grid, dir));
    const auto ds = data.load();
    const auto cv = cross_validate(ds, grid, 0.0);
    write_results(dir, cv);
    print_best(cv);
  }
};

struct AblateCmd {
  CvCmd cv;
  std::vector<double> fractions{0.0, 0.25, 0.5};

  void run() const {
    for (double f : fractions) {
      if (f < 0.0 || f > 1.0) throw dsm::UsageError("censoring fractions must lie in [0, 1]");
    }
    const auto grid = cv.hyper.grid(cv.seed);
    const fs::path dir(cv.out);
    dsm::RunManifest top;
    top.command = "ablate-censoring";
    top.config_hash = combined_hash(grid);
    top.seeds["seed"] = cv.seed;
    top.inputs["data"] = cv.data.path;
    top.outputs["summary"] = (dir / "ablation.csv").string();
    top.parameters = cv.hyper.to_json();
    top.parameters["fractions"] = fractions;
    top.parameters["folds"] = cv.folds;
    top.parameters["levels"] = cv.levels;
    std::vector<std::string> subdirs;
    for (double f : fractions) {
      subdirs.push_back("fraction_" + dsm::detail::format_double(f));
      top.outputs[subdirs.back()] = (dir / subdirs.back()).string();
    }
    dsm::write_manifest(dir, top);

    const auto ds = cv.data.load();
    std::ostringstream table;
    table << "fraction,config_hash,risk,level,horizon,ctd_mean,ctd_se,brier_mean,brier_se\n";
    for (std::size_t i = 0; i < fractions.size(); ++i) {
      const fs::path sub = dir / subdirs[i];
      auto m = cv.manifest("ablate-censoring", grid, sub);
      m.parameters["fraction"] = fractions[i];
      dsm::write_manifest(sub, m);
      const auto result = cv.cross_validate(ds, grid, fractions[i]);
      CvCmd::write_results(sub, result);
      const auto& best = result.configs[result.best];
      std::cout << "fraction " << fractions[i] << ": ";
      for (const auto& h : best.horizons) {
        table << dsm::detail::format_double(fractions[i]) << ',' << best.hash << ',' << h.risk << ','
              << dsm::detail::format_double(h.level) << ',' << dsm::detail::format_double(h.horizon) << ','
              << dsm::detail::cell(h.mean_ctd) << ',' << dsm::detail::cell(h.se_ctd) << ','
              << dsm::detail::cell(h.mean_brier) << ',' << dsm::detail::cell(h.se_brier) << '\n';
        std::cout << " r" << h.risk << "@" << h.level << "=" << dsm::detail::cell(h.mean_ctd);
      }
      std::cout << '\n';
    }
    dsm::write_file_atomic(dir / "ablation.csv", table.str());
  }
};

struct EvalCmd {
  DataOptions data;
  std::string model_path;
  std::vector<double> levels{0.25, 0.5, 0.75};
  std::vector<double> horizons;
  std::string out;

  void run() const {
    const fs::path dir(out);
    dsm::RunManifest m;
    m.command = "eval";
    m.inputs["model"] = model_path;
    m.inputs["data"] = data.path;
    m.outputs["metrics"] = (dir / "eval.csv").string();
    std::ifstream in(model_path, std::ios::binary);
    const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    std::istringstream model_stream(text);
    const auto model = dsm::load_model(model_stream);
    m.config_hash = hex16(dsm::fnv1a(text));
    m.parameters = {{"levels", levels}, {"horizons", horizons}, {"parameter_count", dsm::parameter_count(model)}};
    dsm::write_manifest(dir, m);

    const auto ds = data.load();
    check_features(model, ds);
    if (ds.risks > model.config.risks) throw dsm::DimensionError("data has more risks than the model");
    std::vector<double> lv;
    std::vector<std::vector<double>> hz;
    if (!horizons.empty()) {
      const double tmax = *std::max_element(ds.times.begin(), ds.times.end());
      for (double t : horizons) {
        if (!(t > 0.0)) throw dsm::UsageError("horizons must be positive");
        if (t > tmax) dsm::warn("horizon " + dsm::detail::format_double(t) + " exceeds the largest observed time");
      }
      lv.assign(horizons.size(), std::numeric_limits<double>::quiet_NaN());
      hz.assign(static_cast<std::size_t>(model.config.risks), horizons);
    } else {
      lv = parse_levels(levels);
      dsm::SurvivalDataset shaped = ds;
      shaped.risks = model.config.risks;
      hz = dsm::risk_horizons(shaped, lv);
    }
    const auto metrics = dsm::evaluate_model(model, ds, lv, hz);
    dsm::write_file_atomic(dir / "eval.csv", dsm::eval_csv(metrics));
    std::cout << "parameter_count " << dsm::parameter_count(model) << '\n' << dsm::eval_csv(metrics);
  }
};

struct EmbedCmd {
  DataOptions data;
  std::string model_path;
  std::string out;

  void run() const {
    const fs::path dir(out);
    dsm::RunManifest m;
    m.command = "embed";
    m.inputs["model"] = model_path;
    m.inputs["data"] = data.path;
    m.outputs["embeddings"] = (dir / "embeddings.csv").string();
    dsm::write_manifest(dir, m);
    const auto model = dsm::load_model(model_path);
    const auto ds = data.load();
    check_features(model, ds);
    const dsm::Matrix emb = dsm::extract_representation(model, ds.features);
    dsm::write_file_atomic(dir / "embeddings.csv", dsm::embeddings_csv(emb, ds.times, ds.labels));
    std::cout << "wrote " << emb.rows() << " x " << emb.cols() << " embeddings\n";
  }
};

struct TransferCmd {
  std::size_t n = 30000;
  std::uint64_t seed = 0;
  double censor_frac = 0.5;
  std::size_t folds = 5;
  std::size_t tune_folds = 3;
  unsigned threads = 0;
  Hyper hyper;
  std::string config;
  std::string out;

  TransferCmd() {
    hyper.layers = {1, 2};
    hyper.width = {25, 50, 100};
  }

  static std::string row(const std::string& name, const dsm::TransferResult& r) {
    std::ostringstream os;
    os << "representation,c_index,ci_half_width,ci_low,ci_high,folds\n"
       << name << ',' << dsm::detail::format_double(r.c_index) << ',' << dsm::detail::format_double(r.ci_half_width)
       << ',' << dsm::detail::format_double(r.c_index - r.ci_half_width) << ','
       << dsm::detail::format_double(r.c_index + r.ci_half_width) << ',' << r.fold_c.size() << '\n';
    return os.str();
  }

  void run() const {
    const auto grid = hyper.grid(seed);
    const fs::path dir(out);
    dsm::RunManifest m;
    m.command = "transfer";
    m.config_hash = combined_hash(grid);
    m.seeds["seed"] = seed;
    if (!config.empty()) m.inputs["config"] = config;
    m.outputs["transfer"] = (dir / "transfer.csv").string();
    m.outputs["raw_cph"] = (dir / "raw_cph.csv").string();
    m.outputs["embeddings"] = (dir / "embeddings_b.csv").string();
    m.outputs["model"] = (dir / "model_a.txt").string();
    if (grid.size() > 1) m.outputs["tuning"] = (dir / "tuning_summary.csv").string();
    m.parameters = hyper.to_json();
    m.parameters["n"] = n;
    m.parameters["censor_frac"] = censor_frac;
    m.parameters["folds"] = folds;
    m.parameters["tune_folds"] = tune_folds;
    dsm::write_manifest(dir, m);

    dsm::GeneratorSpec spec;
    spec.n = n;
    spec.seed = seed;
    spec.censor_fraction = censor_frac;
    const auto split = dsm::transfer_split(dsm::generate_synthetic(spec), seed);

    dsm::TrainConfig chosen = grid.front();
    if (grid.size() > 1) {
      dsm::CvOptions o;
      o.levels = {0.25, 0.5, 0.75};
      o.threads = threads;
      const auto cv = dsm::grid_search_cv(split.a, grid, tune_folds, seed, o);
      dsm::write_file_atomic(dir / "tuning_summary.csv", dsm::cv_summary_csv(cv));
      chosen = cv.configs[cv.best].config;
      chosen.seed = seed;
    }
    const auto fitted = dsm::fit(split.a, chosen);
    std::ostringstream model_text;
    dsm::save_model(model_text, fitted.model);
    dsm::write_file_atomic(dir / "model_a.txt", model_text.str());

    const dsm::Matrix emb = dsm::extract_representation(fitted.model, split.b.features);
    dsm::write_file_atomic(dir / "embeddings_b.csv", dsm::embeddings_csv(emb, split.b.times, split.b.labels));
    const auto dsm_result = dsm::transfer_eval(emb, split.b.times, split.b.labels, folds, seed);
    const auto raw_result = dsm::transfer_eval(split.b.features, split.b.times, split.b.labels, folds, seed);
    dsm::write_file_atomic(dir / "transfer.csv", row("dsm", dsm_result));
    dsm::write_file_atomic(dir / "raw_cph.csv", row("raw", raw_result));
    std::cout << "set A " << split.a.size() << " rows (" << split.discarded_a << " dropped), set B " << split.b.size()
              << " rows (" << split.discarded_b << " dropped)\n"
              << "config " << chosen.hash() << " (" << chosen.describe() << ")\n"
              << "dsm embeddings C = " << dsm_result.c_index << " +- " << dsm_result.ci_half_width << " (90%)\n"
              << "raw features   C = " << raw_result.c_index << " +- " << raw_result.ci_half_width << " (90%)\n";
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixture-of-primitives survival regression"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(DSM_GIT_DESCRIBE));

  GenerateCmd gen;
  auto* g = app.add_subcommand("generate", "write a synthetic competing-risks dataset");
  g->add_option("--n", gen.n, "rows")->capture_default_str();
  g->add_option("--seed", gen.seed, "generator seed")->capture_default_str();
  g->add_option("--censor-frac", gen.censor_frac, "fraction of censored rows")->capture_default_str();
  g->add_option("--block-dim", gen.block_dim, "dimension of each covariate block")->capture_default_str();
  g->add_option("--out", gen.out, "output directory")->required();

  TrainCmd train;
  auto* t = app.add_subcommand("train", "fit one model");
  train.data.add_to(t);
  train.hyper.add_to(t);
  t->add_option("--seed", train.seed, "initialisation and holdout seed")->capture_default_str();
  t->add_option("--config", train.config, "flat key=value file; flags override it");
  t->add_option("--out", train.out, "output directory")->required();

  CvCmd cv;
  auto* c = app.add_subcommand("cv", "grid search with k-fold cross-validation");
  cv.add_common(c);

  AblateCmd ablate;
  auto* a = app.add_subcommand("ablate-censoring", "cross-validate with extra censoring of the training folds");
  ablate.cv.add_common(a);
  a->add_option("--fractions", ablate.fractions, "fractions of uncensored training rows to censor")
      ->delimiter(',')
      ->capture_default_str();

  EvalCmd eval;
  auto* e = app.add_subcommand("eval", "C^td and Brier score of a saved model");
  eval.data.add_to(e);
  e->add_option("--model", eval.model_path, "model file")->required()->check(CLI::ExistingFile);
  auto* lv = e->add_option("--levels", eval.levels, "event-time quantile levels")->delimiter(',')->capture_default_str();
  e->add_option("--horizons", eval.horizons, "explicit horizon times")->delimiter(',')->excludes(lv);
  e->add_option("--out", eval.out, "output directory")->required();

  EmbedCmd embed;
  auto* m = app.add_subcommand("embed", "export the shared representation");
  embed.data.add_to(m);
  m->add_option("--model", embed.model_path, "model file")->required()->check(CLI::ExistingFile);
  m->add_option("--out", embed.out, "output directory")->required();

  TransferCmd transfer;
  auto* x = app.add_subcommand("transfer", "event-1 representation reused for event-2 risk with CPH");
  x->add_option("--n", transfer.n, "rows generated before splitting")->capture_default_str();
  x->add_option("--seed", transfer.seed, "seed for data, split, training and folds")->capture_default_str();
  x->add_option("--censor-frac", transfer.censor_frac, "fraction of censored rows")->capture_default_str();
  x->add_option("--folds", transfer.folds, "CPH evaluation folds")->capture_default_str();
  x->add_option("--tune-folds", transfer.tune_folds, "folds for tuning the representation")->capture_default_str();
  x->add_option("--threads", transfer.threads, "worker threads (0: DSM_THREADS or all cores)");
  transfer.hyper.add_to(x);
  x->add_option("--config", transfer.config, "flat key=value file; flags override it");
  x->add_option("--out", transfer.out, "output directory")->required();

  try {
    app.parse(argc, argv);
    if (*t) apply_config(t, train.config);
    if (*c) apply_config(c, cv.config);
    if (*a) apply_config(a, ablate.cv.config);
    if (*x) apply_config(x, transfer.config);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  }

  try {
    if (*g) gen.run();
    if (*t) train.run();
    if (*c) cv.run();
    if (*a) ablate.run();
    if (*e) eval.run();
    if (*m) embed.run();
    if (*x) transfer.run();
  } catch (const dsm::UsageError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
  return 0;
}
