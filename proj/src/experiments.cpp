#include "mealrec/experiments.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

namespace mealrec::experiments {
namespace {

std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

/// Empty when the report has no such cutoff.
std::string metric_cell(const eval::EvalReport& r, int k, bool hit) {
  if (std::find(r.ks.begin(), r.ks.end(), k) == r.ks.end()) return "";
  return fmt(hit ? r.hr_at(k) : r.ndcg_at(k));
}

double median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

std::string condition_key(const eval::Condition& c) {
  return c.variant + "|" + fmt(c.sigma) + "|" + fmt(c.lambda_tcd) + "|" + fmt(c.lambda_npd) + "|" +
         std::to_string(c.steps);
}

void write_log(const std::filesystem::path& dir, const std::string& name, const std::vector<training::EpochLog>& log) {
  if (dir.empty()) return;
  std::filesystem::create_directories(dir / "logs");
  std::ofstream out(dir / "logs" / (name + ".jsonl"));
  for (const auto& entry : log) out << training::to_json(entry).dump() << "\n";
}

std::string run_name(const eval::Condition& c, std::uint64_t replicate) {
  std::ostringstream s;
  s << c.variant << "_sigma" << c.sigma << "_lT" << c.lambda_tcd << "_lN" << c.lambda_npd << "_T" << c.steps
    << "_rep" << replicate;
  return s.str();
}

RunResult run_replicate(const ExperimentPlan& plan, config::RunConfig cfg, const Inputs& inputs, Variant variant,
                        double sigma, double lambda_tcd, double lambda_npd, int steps, std::uint64_t replicate,
                        std::uint64_t master) {
  cfg.train.lambda_tcd = lambda_tcd;
  cfg.train.lambda_npd = lambda_npd;
  cfg.train.steps = steps;
  cfg.train.seed = replicate_seed(master, replicate);
  RunResult r = run_condition(cfg, inputs, variant, sigma);
  r.replicate = replicate;
  write_log(plan.out_dir, run_name(r.report.condition, replicate), r.log);
  return r;
}

}  // namespace

void ExperimentPlan::validate() const {
  if (seeds.empty()) throw std::invalid_argument("experiment plan needs at least one seed");
  if (variants.empty() || sigmas.empty() || lambda_tcd.empty() || lambda_npd.empty() || steps.empty()) {
    throw std::invalid_argument("experiment grids must be non-empty");
  }
  for (double s : sigmas) {
    if (!(s >= 0.0)) throw std::invalid_argument("sigma must be >= 0");
  }
  for (double l : lambda_tcd) {
    if (!(l >= 0.0)) throw std::invalid_argument("lambda_T must be >= 0");
  }
  for (double l : lambda_npd) {
    if (!(l >= 0.0)) throw std::invalid_argument("lambda_N must be >= 0");
  }
  for (int t : steps) {
    if (t < 1) throw std::invalid_argument("T must be >= 1");
  }
}

ExperimentPlan plan_from_config(const config::RunConfig& cfg, const std::filesystem::path& out_dir) {
  ExperimentPlan plan;
  plan.variants.clear();
  for (const auto& v : cfg.experiment.variants) plan.variants.push_back(parse_variant(v));
  plan.sigmas = cfg.experiment.sigmas;
  plan.lambda_tcd = cfg.experiment.lambda_grid;
  plan.lambda_npd = cfg.experiment.lambda_grid;
  plan.steps = cfg.experiment.steps_grid;
  plan.seeds = cfg.experiment.seeds;
  plan.out_dir = out_dir;
  plan.validate();
  return plan;
}

ModelConfig apply_variant(ModelConfig cfg, Variant variant) {
  cfg.variant = variant;
  return cfg;
}

std::uint64_t replicate_seed(std::uint64_t master, std::uint64_t replicate) {
  return derive_seed(master, "replicate", replicate);
}

RunResult run_condition(const config::RunConfig& cfg, const Inputs& inputs, Variant variant, double sigma) {
  const auto started = std::chrono::steady_clock::now();
  const data::FeatureStore noisy =
      data::inject_noise(inputs.store, sigma, derive_seed(cfg.train.seed, "feature-noise"));
  const data::FeatureTable features = data::align_features(noisy, inputs.dataset);
  const ModelConfig model_cfg = apply_variant(config::model_config(cfg, inputs.dataset, noisy), variant);
  eval::EvalOptions options = cfg.eval;
  options.seed = cfg.train.seed;
  training::FitResult fit = training::fit(inputs.dataset, features, model_cfg, cfg.train, options);
  const diffusion::Schedule sched = training::make_schedule(cfg.train);
  RunResult r;
  r.report = eval::evaluate(fit.model, inputs.dataset, features, sched, cfg.train.gamma, options, eval::Split::test);
  r.report.condition = {to_string(variant), sigma, cfg.train.lambda_tcd, cfg.train.lambda_npd, cfg.train.steps,
                        cfg.train.seed};
  r.log = std::move(fit.log);
  if (cfg.experiment.record_runtime) {
    r.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  }
  return r;
}

ResultsCsv::ResultsCsv(const std::filesystem::path& path) : out_(path) {
  if (!out_) throw std::runtime_error("cannot write " + path.string());
  out_ << header() << "\n" << std::flush;
}

std::string ResultsCsv::header() {
  return "kind,variant,sigma,lambda_T,lambda_N,T,seed,replicate,split,HR@10,N@10,HR@20,N@20,users,runtime_seconds";
}

std::string ResultsCsv::row(const eval::EvalReport& r, const std::string& replicate, double runtime) {
  const bool summary = replicate == "median";
  std::ostringstream s;
  s << (summary ? "median" : "detail") << "," << r.condition.variant << "," << fmt(r.condition.sigma) << ","
    << fmt(r.condition.lambda_tcd) << "," << fmt(r.condition.lambda_npd) << "," << r.condition.steps << ","
    << (summary ? std::string() : std::to_string(r.condition.seed)) << "," << replicate << "," << r.split << ","
    << metric_cell(r, 10, true) << "," << metric_cell(r, 10, false) << "," << metric_cell(r, 20, true) << ","
    << metric_cell(r, 20, false) << "," << r.users << "," << fmt(runtime);
  return s.str();
}

void ResultsCsv::write(const RunResult& r) {
  out_ << row(r.report, std::to_string(r.replicate), r.runtime_seconds) << "\n" << std::flush;
}

void ResultsCsv::write_summary(const std::vector<RunResult>& rows) {
  for (const auto& m : median_summary(rows)) out_ << row(m, "median", 0.0) << "\n";
  out_ << std::flush;
}

std::vector<eval::EvalReport> median_summary(const std::vector<RunResult>& rows) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const RunResult*>> groups;
  for (const auto& r : rows) {
    const std::string key = condition_key(r.report.condition);
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(&r);
  }
  std::vector<eval::EvalReport> out;
  for (const auto& key : order) {
    const auto& members = groups[key];
    eval::EvalReport m = members.front()->report;
    m.condition.seed = 0;
    for (std::size_t i = 0; i < m.ks.size(); ++i) {
      std::vector<double> hits, ndcgs;
      for (const auto* r : members) {
        hits.push_back(r->report.hit[i]);
        ndcgs.push_back(r->report.ndcg[i]);
      }
      m.hit[i] = median(hits);
      m.ndcg[i] = median(ndcgs);
    }
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<RunResult> run_ablation(const ExperimentPlan& plan, const config::RunConfig& base, const Inputs& inputs,
                                    ResultsCsv* csv) {
  plan.validate();
  std::vector<RunResult> rows;
  for (Variant v : plan.variants) {
    for (std::uint64_t s : plan.seeds) {
      rows.push_back(run_replicate(plan, base, inputs, v, 0.0, base.train.lambda_tcd, base.train.lambda_npd,
                                   base.train.steps, s, base.train.seed));
      if (csv) csv->write(rows.back());
    }
  }
  if (csv) csv->write_summary(rows);
  return rows;
}

std::vector<RunResult> run_noise_sweep(const ExperimentPlan& plan, const config::RunConfig& base,
                                       const Inputs& inputs, ResultsCsv* csv) {
  plan.validate();
  std::vector<RunResult> rows;
  for (double sigma : plan.sigmas) {
    for (std::uint64_t s : plan.seeds) {
      rows.push_back(run_replicate(plan, base, inputs, Variant::full, sigma, base.train.lambda_tcd,
                                   base.train.lambda_npd, base.train.steps, s, base.train.seed));
      if (csv) csv->write(rows.back());
    }
  }
  if (csv) csv->write_summary(rows);
  return rows;
}

SensitivityResult run_sensitivity(const ExperimentPlan& plan, const config::RunConfig& base, const Inputs& inputs,
                                  ResultsCsv* csv) {
  plan.validate();
  SensitivityResult out;
  for (double lambda : plan.lambda_tcd) {
    for (int steps : plan.steps) {
      for (std::uint64_t s : plan.seeds) {
        out.tcd_grid.push_back(run_replicate(plan, base, inputs, Variant::full, 0.0, lambda, base.train.lambda_npd,
                                             steps, s, base.train.seed));
        if (csv) csv->write(out.tcd_grid.back());
      }
    }
  }
  for (double lambda : plan.lambda_npd) {
    for (int steps : plan.steps) {
      for (std::uint64_t s : plan.seeds) {
        out.npd_grid.push_back(run_replicate(plan, base, inputs, Variant::full, 0.0, base.train.lambda_tcd, lambda,
                                             steps, s, base.train.seed));
        if (csv) csv->write(out.npd_grid.back());
      }
    }
  }
  if (csv) {
    std::vector<RunResult> all = out.tcd_grid;
    all.insert(all.end(), out.npd_grid.begin(), out.npd_grid.end());
    csv->write_summary(all);
  }
  return out;
}

void write_heatmap(const std::filesystem::path& path, const std::vector<RunResult>& grid, bool npd_pair,
                   const std::string& metric) {
  const auto summary = median_summary(grid);
  std::vector<double> lambdas;
  std::vector<int> steps;
  for (const auto& m : summary) {
    const double l = npd_pair ? m.condition.lambda_npd : m.condition.lambda_tcd;
    if (std::find(lambdas.begin(), lambdas.end(), l) == lambdas.end()) lambdas.push_back(l);
    if (std::find(steps.begin(), steps.end(), m.condition.steps) == steps.end()) steps.push_back(m.condition.steps);
  }
  auto value = [&](const eval::EvalReport& m) {
    if (metric == "HR@10") return m.hr_at(10);
    if (metric == "N@10") return m.ndcg_at(10);
    if (metric == "HR@20") return m.hr_at(20);
    if (metric == "N@20") return m.ndcg_at(20);
    throw std::invalid_argument("unknown metric " + metric);
  };
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << (npd_pair ? "lambda_N" : "lambda_T") << "\\T";
  for (int t : steps) out << "," << t;
  out << "\n";
  for (double l : lambdas) {
    out << fmt(l);
    for (int t : steps) {
      out << ",";
      for (const auto& m : summary) {
        const double ml = npd_pair ? m.condition.lambda_npd : m.condition.lambda_tcd;
        if (ml == l && m.condition.steps == t) out << fmt(value(m));
      }
    }
    out << "\n";
  }
}

void export_embeddings(Model& model, const config::RunConfig& cfg, const data::SplitDataset& dataset,
                       const data::FeatureTable& features, const std::vector<std::string>& user_ids,
                       const std::filesystem::path& out_path) {
  const auto all = eval::split_examples(dataset, eval::Split::test);
  std::vector<Example> chosen;
  for (const auto& id : user_ids) {
    auto it = std::find_if(dataset.users.begin(), dataset.users.end(),
                           [&](const data::UserSplit& u) { return u.user_id == id; });
    if (it == dataset.users.end()) throw std::invalid_argument("unknown user '" + id + "'");
    chosen.push_back(all[static_cast<std::size_t>(it - dataset.users.begin())]);
  }
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write " + out_path.string());
  const int k = model.config().tcd.frames;
  const int width = std::max(model.config().backbone.dim, model.config().tcd.dim);
  out << "role,user_id,index";
  for (int c = 0; c < width; ++c) out << ",c" << c;
  out << "\n";
  if (chosen.empty()) return;
  const diffusion::Schedule sched = training::make_schedule(cfg.train);
  Batch batch = make_batch(chosen, features, dataset.max_len, cfg.train.gamma);
  std::vector<Rng> streams;
  Representation rep = model.infer(batch, sched, eval::user_noise(cfg.train.seed, chosen, streams));
  auto write_row = [&](const std::string& role, const std::string& user, int index, const auto& vec) {
    out << role << "," << user << "," << index;
    for (Eigen::Index c = 0; c < vec.size(); ++c) out << "," << fmt(vec(c));
    for (Eigen::Index c = vec.size(); c < width; ++c) out << ",";
    out << "\n";
  };
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const std::string& user = dataset.users[chosen[i].user].user_id;
    write_row("preference", user, 0, rep.preference.row(row));
    write_row("target_item", user, 0, model.item_embeddings().row(chosen[i].target));
    for (int f = 0; f < k; ++f) write_row("frame", user, f, rep.frames.row(row * k + f));
  }
}

}  // namespace mealrec::experiments
