#include "mealrec/cli.hpp"

#include "mealrec/config.hpp"
#include "mealrec/experiments.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <charconv>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

namespace mealrec::cli {
namespace {

namespace fs = std::filesystem;

const char* const kInteractions = "interactions.tsv";
const char* const kFeatures = "features.json";
const char* const kConfigEcho = "config.ini";
const char* const kCheckpoint = "checkpoint.bin";

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string data_dir;
  std::string checkpoint;
  std::vector<std::string> overrides;
  std::vector<std::string> users;
};

struct LoadedData {
  data::SplitDataset dataset;
  data::FeatureStore store;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void apply_overrides(config::RunConfig& cfg, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw config::ConfigError("--set expects key=value, got '" + o + "'");
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t") + 1);
      return s;
    };
    config::set_value(cfg, trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
  }
}

config::RunConfig build_config(const Options& opt, bool needs_seed) {
  config::RunConfig cfg;
  if (!opt.config_path.empty()) {
    if (!fs::exists(opt.config_path)) throw config::ConfigError("config file not found: " + opt.config_path);
    cfg = config::parse_config(opt.config_path);
  }
  apply_overrides(cfg, opt.overrides);
  if (opt.seed) cfg.train.seed = *opt.seed;
  if (needs_seed && !opt.seed) throw UsageError("--seed is required for this command");
  return cfg;
}

/// Configuration stored in a checkpoint, with --config and --set layered on top.
config::RunConfig checkpoint_config(const Options& opt, const training::Checkpoint& ck) {
  config::RunConfig cfg = config::parse_config_text(ck.config_echo);
  if (!opt.config_path.empty()) {
    if (!fs::exists(opt.config_path)) throw config::ConfigError("config file not found: " + opt.config_path);
    cfg = config::parse_config(opt.config_path, cfg);
  }
  apply_overrides(cfg, opt.overrides);
  if (opt.seed) cfg.train.seed = *opt.seed;
  return cfg;
}

void require(const std::string& value, const std::string& flag) {
  if (value.empty()) throw UsageError(flag + " is required for this command");
}

fs::path prepare_out(const Options& opt) {
  require(opt.out_dir, "--out");
  fs::create_directories(opt.out_dir);
  return opt.out_dir;
}

LoadedData load_data(const fs::path& dir, const config::RunConfig& cfg) {
  const auto records = data::four_core_filter(data::parse_interactions(dir / kInteractions), cfg.data.core);
  if (records.empty()) throw std::runtime_error("no interactions survive the core filter in " + dir.string());
  LoadedData d{data::leave_one_out_split(records, cfg.backbone.max_len), data::load_features(dir / kFeatures)};
  return d;
}

nlohmann::json report_json(const eval::EvalReport& r) { return eval::to_json(r); }

int cmd_synth(const Options& opt, std::ostream& out) {
  config::RunConfig cfg = build_config(opt, true);
  const fs::path dir = prepare_out(opt);
  const data::SynthData synth = data::synth_generate(cfg.data.synth, cfg.train.seed);
  data::write_interactions(dir / kInteractions, synth.records);
  data::save_features(synth.store, dir, "features");
  write_text(dir / kConfigEcho, config::echo(cfg));
  out << "synth: " << synth.records.size() << " interactions, " << synth.store.size() << " items -> " << dir.string()
      << "\n";
  return 0;
}

int cmd_prepare(const Options& opt, std::ostream& out) {
  config::RunConfig cfg = build_config(opt, false);
  require(opt.data_dir, "--data");
  const fs::path dir = prepare_out(opt);
  const auto raw = data::parse_interactions(fs::path(opt.data_dir) / kInteractions);
  const auto filtered = data::four_core_filter(raw, cfg.data.core);
  const data::SplitDataset split = data::leave_one_out_split(filtered, cfg.backbone.max_len);
  const data::FeatureStore store = data::load_features(fs::path(opt.data_dir) / kFeatures);
  // Keep features only for surviving items, in vocabulary order.
  Mat global(static_cast<Eigen::Index>(split.items.size()), store.visual_dim());
  Mat frames(static_cast<Eigen::Index>(split.items.size()) * store.frames(), store.visual_dim());
  Mat text(static_cast<Eigen::Index>(split.items.size()), store.text_dim());
  for (std::size_t i = 0; i < split.items.size(); ++i) {
    if (!store.contains(split.items[i])) throw std::runtime_error("missing features for item " + split.items[i]);
    const auto r = static_cast<Eigen::Index>(store.row(split.items[i]));
    const auto o = static_cast<Eigen::Index>(i);
    global.row(o) = store.global().row(r);
    frames.middleRows(o * store.frames(), store.frames()) = store.frame_rows().middleRows(r * store.frames(), store.frames());
    text.row(o) = store.text().row(r);
  }
  data::write_interactions(dir / kInteractions, filtered);
  data::save_features(data::FeatureStore(split.items, store.frames(), global, frames, text), dir, "features");
  const nlohmann::json summary = {{"raw_interactions", raw.size()},
                                  {"interactions", filtered.size()},
                                  {"users", split.users.size()},
                                  {"items", split.items.size()},
                                  {"max_len", split.max_len}};
  write_text(dir / "split_summary.json", summary.dump(2) + "\n");
  write_text(dir / kConfigEcho, config::echo(cfg));
  out << "prepare: " << raw.size() << " -> " << filtered.size() << " interactions, " << split.users.size()
      << " users, " << split.items.size() << " items\n";
  return 0;
}

int cmd_train(const Options& opt, std::ostream& out) {
  config::RunConfig cfg = build_config(opt, true);
  require(opt.data_dir, "--data");
  const fs::path dir = prepare_out(opt);
  write_text(dir / kConfigEcho, config::echo(cfg));
  LoadedData d = load_data(opt.data_dir, cfg);
  const data::FeatureTable features = data::align_features(d.store, d.dataset);
  const ModelConfig model_cfg = config::model_config(cfg, d.dataset, d.store);
  eval::EvalOptions options = cfg.eval;
  options.seed = cfg.train.seed;
  std::ofstream log(dir / "train_log.jsonl", std::ios::binary);
  training::FitResult fit =
      training::fit(d.dataset, features, model_cfg, cfg.train, options, [&](const training::EpochLog& e) {
        log << training::to_json(e).dump() << "\n" << std::flush;
        out << "epoch " << e.epoch << " L_total=" << e.total << " val HR@10=" << e.val_hr10
            << " N@10=" << e.val_ndcg10 << "\n";
      });
  training::save_checkpoint(dir / kCheckpoint, fit.model.params(), config::echo(cfg));
  const diffusion::Schedule sched = training::make_schedule(cfg.train);
  nlohmann::json metrics = {{"best_epoch", fit.best_epoch}};
  std::string csv = experiments::ResultsCsv::header() + "\n";
  for (eval::Split split : {eval::Split::validation, eval::Split::test}) {
    eval::EvalReport r = eval::evaluate(fit.model, d.dataset, features, sched, cfg.train.gamma, options, split);
    r.condition = {to_string(cfg.variant), 0.0, cfg.train.lambda_tcd, cfg.train.lambda_npd, cfg.train.steps,
                   cfg.train.seed};
    metrics[eval::to_string(split)] = report_json(r);
    csv += experiments::ResultsCsv::row(r, "0", 0.0) + "\n";
    out << eval::to_string(split) << ": HR@10=" << r.hr_at(10) << " N@10=" << r.ndcg_at(10) << "\n";
  }
  write_text(dir / "metrics.json", metrics.dump(2) + "\n");
  write_text(dir / "metrics.csv", csv);
  return 0;
}

struct Restored {
  config::RunConfig cfg;
  LoadedData data;
  data::FeatureTable features;
  Model model;
};

Restored restore(const Options& opt) {
  require(opt.data_dir, "--data");
  require(opt.checkpoint, "--checkpoint");
  if (!fs::exists(opt.checkpoint)) throw UsageError("checkpoint not found: " + opt.checkpoint);
  training::Checkpoint ck = training::load_checkpoint(opt.checkpoint);
  config::RunConfig cfg = checkpoint_config(opt, ck);
  LoadedData d = load_data(opt.data_dir, cfg);
  data::FeatureTable features = data::align_features(d.store, d.dataset);
  const ModelConfig model_cfg = config::model_config(cfg, d.dataset, d.store);
  Model model(model_cfg, std::move(ck.params));
  return {std::move(cfg), std::move(d), std::move(features), std::move(model)};
}

int cmd_evaluate(const Options& opt, std::ostream& out) {
  Restored r = restore(opt);
  const fs::path dir = prepare_out(opt);
  write_text(dir / kConfigEcho, config::echo(r.cfg));
  eval::EvalOptions options = r.cfg.eval;
  options.seed = r.cfg.train.seed;
  const diffusion::Schedule sched = training::make_schedule(r.cfg.train);
  nlohmann::json reports = nlohmann::json::object();
  std::string csv = experiments::ResultsCsv::header() + "\n";
  for (eval::Split split : {eval::Split::validation, eval::Split::test}) {
    eval::EvalReport rep = eval::evaluate(r.model, r.data.dataset, r.features, sched, r.cfg.train.gamma, options, split);
    rep.condition = {to_string(r.cfg.variant), 0.0, r.cfg.train.lambda_tcd, r.cfg.train.lambda_npd,
                     r.cfg.train.steps, r.cfg.train.seed};
    reports[eval::to_string(split)] = report_json(rep);
    csv += experiments::ResultsCsv::row(rep, "0", 0.0) + "\n";
    out << eval::to_string(split) << ": HR@10=" << rep.hr_at(10) << " N@10=" << rep.ndcg_at(10) << "\n";
  }
  const eval::EvalReport pop = eval::popularity_baseline(r.data.dataset, options, eval::Split::test);
  reports["popularity_test"] = report_json(pop);
  write_text(dir / "report.json", reports.dump(2) + "\n");
  write_text(dir / "report.csv", csv);
  return 0;
}

int cmd_experiment(const Options& opt, const std::string& kind, std::ostream& out) {
  config::RunConfig cfg = build_config(opt, true);
  require(opt.data_dir, "--data");
  const fs::path dir = prepare_out(opt);
  write_text(dir / kConfigEcho, config::echo(cfg));
  LoadedData d = load_data(opt.data_dir, cfg);
  experiments::ExperimentPlan plan = experiments::plan_from_config(cfg, dir);
  experiments::Inputs inputs{d.dataset, d.store};
  experiments::ResultsCsv csv(dir / "results.csv");
  std::vector<experiments::RunResult> rows;
  if (kind == "ablate") {
    rows = experiments::run_ablation(plan, cfg, inputs, &csv);
  } else if (kind == "noise-sweep") {
    rows = experiments::run_noise_sweep(plan, cfg, inputs, &csv);
  } else {
    experiments::SensitivityResult grid = experiments::run_sensitivity(plan, cfg, inputs, &csv);
    for (const std::string metric : {"HR@10", "N@10"}) {
      experiments::write_heatmap(dir / ("heatmap_lambda_T_" + metric + ".csv"), grid.tcd_grid, false, metric);
      experiments::write_heatmap(dir / ("heatmap_lambda_N_" + metric + ".csv"), grid.npd_grid, true, metric);
    }
    rows = grid.tcd_grid;
    rows.insert(rows.end(), grid.npd_grid.begin(), grid.npd_grid.end());
  }
  for (const auto& m : experiments::median_summary(rows)) {
    out << m.condition.variant << " sigma=" << m.condition.sigma << " lambda_T=" << m.condition.lambda_tcd
        << " lambda_N=" << m.condition.lambda_npd << " T=" << m.condition.steps << ": median HR@10=" << m.hr_at(10)
        << " N@10=" << m.ndcg_at(10) << "\n";
  }
  return 0;
}

int cmd_export(const Options& opt, std::ostream& out) {
  Restored r = restore(opt);
  const fs::path dir = prepare_out(opt);
  if (opt.users.empty()) throw UsageError("--users is required for export-embeddings");
  write_text(dir / kConfigEcho, config::echo(r.cfg));
  experiments::export_embeddings(r.model, r.cfg, r.data.dataset, r.features, opt.users, dir / "embeddings.csv");
  out << "exported " << opt.users.size() << " users -> " << (dir / "embeddings.csv").string() << "\n";
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hierarchical diffusion recommender: data preparation, training, evaluation and experiments",
               "mealrec"};
  app.require_subcommand(1);
  Options opt;
  std::string seed_text;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"synth", "generate a synthetic dataset and its features"},
      {"prepare", "4-core filter and split a dataset in the interactions/features format"},
      {"train", "train a model and write its checkpoint, log and metrics"},
      {"evaluate", "evaluate a checkpoint on the validation and test splits"},
      {"ablate", "train and evaluate each variant for each seed"},
      {"noise-sweep", "train and evaluate the full model under visual feature noise"},
      {"sweep", "sensitivity grids over (lambda_T, T) and (lambda_N, T)"},
      {"export-embeddings", "export preference, target and frame vectors of chosen users"}};
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opt.config_path, "configuration file");
    sub->add_option("--seed", seed_text, "master seed");
    sub->add_option("--out", opt.out_dir, "output directory");
    sub->add_option("--data", opt.data_dir, "dataset directory (interactions.tsv + features.json)");
    sub->add_option("--set", opt.overrides, "override a configuration key, section.key=value");
    if (name == "evaluate" || name == "export-embeddings") {
      sub->add_option("--checkpoint", opt.checkpoint, "checkpoint file");
    }
    if (name == "export-embeddings") sub->add_option("--users", opt.users, "user ids")->delimiter(',');
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  } catch (const CLI::ParseError& e) {
    app.exit(e, err, err);
    err << app.help();
    return 2;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (!seed_text.empty()) {
      std::uint64_t v = 0;
      const auto [ptr, ec] = std::from_chars(seed_text.data(), seed_text.data() + seed_text.size(), v);
      if (ec != std::errc() || ptr != seed_text.data() + seed_text.size()) {
        throw UsageError("--seed expects a non-negative integer, got '" + seed_text + "'");
      }
      opt.seed = v;
    }
    if (command == "synth") return cmd_synth(opt, out);
    if (command == "prepare") return cmd_prepare(opt, out);
    if (command == "train") return cmd_train(opt, out);
    if (command == "evaluate") return cmd_evaluate(opt, out);
    if (command == "export-embeddings") return cmd_export(opt, out);
    return cmd_experiment(opt, command, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n" << app.get_subcommand(command)->help();
    return 2;
  } catch (const config::ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace mealrec::cli
