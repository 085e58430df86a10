// Acceptance suite: one PASS/FAIL line per criterion, then a summary.
// Exit status is non-zero when any hard criterion fails; the ablation
// ordering is reported but does not affect the status.

#include "mealrec/cli.hpp"
#include "mealrec/config.hpp"
#include "mealrec/experiments.hpp"
#include "mealrec/npd.hpp"
#include "mealrec/schedule.hpp"
#include "mealrec/tcd.hpp"
#include "mealrec/training.hpp"
#include "oracles.hpp"
#include "support.hpp"
#include "world.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>

using namespace mealrec;
namespace fs = std::filesystem;

template <typename C>
concept HasStepCount = requires(C c) { c.steps; } || requires(C c) { c.T; };
static_assert(!HasStepCount<npd::NpdConfig>, "the preference denoiser must not be configured with a step count");

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string title;
  double budget_seconds;  // 0: no runtime bound
  bool soft = false;
};

struct Summary {
  int hard_failures = 0;
  int soft_failures = 0;
  std::ofstream report{"acceptance_report.txt"};
};

std::string fmt(const char* pattern, double a) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), pattern, a);
  return buf;
}

template <typename F>
void run(Summary& summary, const Criterion& c, F&& body) {
  const auto start = std::chrono::steady_clock::now();
  Verdict v;
  try {
    v = body();
  } catch (const std::exception& e) {
    v = {false, std::string("exception: ") + e.what()};
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (c.budget_seconds > 0.0 && seconds > c.budget_seconds) {
    v.pass = false;
    v.detail += fmt("; exceeded the %.0f s budget", c.budget_seconds);
  }
  std::string tag = v.pass ? "PASS" : "FAIL";
  if (!v.pass && c.soft) tag = "FAIL (soft, flagged)";
  std::ostringstream line;
  line << tag << "  [" << c.id << "] " << c.title << " (" << fmt("%.2f", seconds) << " s): " << v.detail;
  std::cout << line.str() << std::endl;
  summary.report << line.str() << std::endl;
  if (!v.pass) ++(c.soft ? summary.soft_failures : summary.hard_failures);
}

// ---------------------------------------------------------------------------
// 1. Forward process moments

struct Moments {
  std::vector<double> mean, var;
};

Moments column_moments(const Mat& x) {
  Moments m;
  const double n = static_cast<double>(x.rows());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    double s = 0.0;
    for (Eigen::Index r = 0; r < x.rows(); ++r) s += x(r, c);
    const double mean = s / n;
    double ss = 0.0;
    for (Eigen::Index r = 0; r < x.rows(); ++r) ss += (x(r, c) - mean) * (x(r, c) - mean);
    m.mean.push_back(mean);
    m.var.push_back(ss / (n - 1.0));
  }
  return m;
}

Verdict forward_moments() {
  Rng rng(20240601);
  const int n = 10000;
  const int dims = 1;  // scalar x_0: 20 comparisons per run
  int comparisons = 0, outside = 0;
  double worst = 0.0;
  std::ostringstream seen;
  for (int s = 0; s < 5; ++s) {
    std::uniform_int_distribution<int> pick_t(5, 25);
    const int steps = s == 0 ? 5 : s == 1 ? 25 : pick_t(rng);
    std::uniform_real_distribution<double> lo(1e-5, 1e-3), hi(0.01, 0.05);
    const double start = lo(rng), end = hi(rng);
    const auto sched = diffusion::make_schedule(steps, start, end, s % 2 == 0);
    std::uniform_int_distribution<int> pick_step(1, steps);
    const int t = s < 2 ? steps : pick_step(rng);
    const Mat x0 = gaussian(1, dims, rng);
    const Mat x0_rows = x0.replicate(n, 1);

    const Mat closed = diffusion::q_sample(x0_rows, t, gaussian(n, dims, rng), sched);
    Mat chain = x0_rows;
    for (int k = 1; k <= t; ++k) {
      chain = std::sqrt(sched.alpha(k)) * chain + std::sqrt(sched.beta(k)) * gaussian(n, dims, rng);
    }
    const double var = 1.0 - sched.alpha_bar(t);
    const double se_mean = std::sqrt(var / n);
    const double se_var = var * std::sqrt(2.0 / (n - 1));
    for (const Mat* sample : {&closed, static_cast<const Mat*>(&chain)}) {
      const Moments m = column_moments(*sample);
      for (int d = 0; d < dims; ++d) {
        const double mean = std::sqrt(sched.alpha_bar(t)) * x0(0, d);
        const double zm = std::abs(m.mean[static_cast<std::size_t>(d)] - mean) / se_mean;
        const double zv = std::abs(m.var[static_cast<std::size_t>(d)] - var) / se_var;
        worst = std::max({worst, zm, zv});
        comparisons += 2;
        outside += (zm > 3.0) + (zv > 3.0);
      }
    }
    seen << (s ? "," : "") << "T=" << steps << "/t=" << t;
  }
  std::ostringstream detail;
  detail << comparisons << " moment comparisons (closed form and iterated chain vs analytic, n=" << n << ", "
         << seen.str() << "), largest deviation " << fmt("%.2f", worst) << " SE, " << outside << " beyond 3 SE";
  return {outside == 0, detail.str()};
}

// ---------------------------------------------------------------------------
// 2. Last reverse step

Verdict reverse_collapse() {
  Rng rng(7);
  int schedules = 0, mismatches = 0;
  for (int i = 0; i < 200; ++i) {
    std::uniform_int_distribution<int> pick_t(1, 50);
    std::uniform_real_distribution<double> lo(1e-6, 1e-2), span(0.0, 0.3);
    const int steps = pick_t(rng);
    const double start = lo(rng);
    const auto sched = i % 3 == 0 ? diffusion::make_schedule(steps, start, start + span(rng), i % 2 == 0)
                                  : diffusion::Schedule::linear(steps, start, std::min(0.9, start + span(rng)));
    ++schedules;
    if (sched.posterior_variance(1) != 0.0) ++mismatches;
    const Mat x_t = gaussian(4, 6, rng);
    const Mat x0_hat = gaussian(4, 6, rng);
    const Mat zero = Mat::Zero(4, 6);
    if (!(diffusion::posterior_step(x_t, x0_hat, 1, sched, zero) == x0_hat)) ++mismatches;
  }
  return {mismatches == 0, std::to_string(schedules) +
                               " schedules: posterior variance at t=1 is 0 and the t=1 step returns x0_hat "
                               "bit-exactly; mismatches " +
                               std::to_string(mismatches)};
}

// ---------------------------------------------------------------------------
// 3. Gradients of the four losses

Verdict gradients() {
  const auto world = testing::make_world(testing::tiny_config(), 3);
  auto examples = training::training_examples(world.dataset);
  examples.resize(std::min<std::size_t>(4, examples.size()));
  const auto sched = training::make_schedule(world.cfg.train);
  const Batch batch = make_batch(examples, world.features, world.dataset.max_len, world.cfg.train.gamma);
  ModelConfig mc = world.model();
  mc.backbone.dropout = 0.0;
  mc.npd.dropout = 0.0;
  Model model(mc, 7);
  Rng draw_rng(8);
  const DiffusionDraws draws = training::draw_diffusion(batch, mc, world.cfg.train, draw_rng);
  const double lambda_t = 0.4, lambda_n = 0.6;

  const std::vector<std::pair<std::string, int>> parts{{"L_T", 0}, {"L_N", 1}, {"L_R", 2}, {"L_total", 3}};
  std::ostringstream detail;
  bool ok = true;
  Rng pick_rng(9);
  for (const auto& [label, part] : parts) {
    auto loss = [&, part = part](ad::Tape& t) {
      auto fw = model.forward_train(t, batch, sched, draws, lambda_t, lambda_n, nn::Dropout{});
      return part == 0 ? fw.tcd : part == 1 ? fw.npd : part == 2 ? fw.rec : fw.total;
    };
    ParamStore& store = model.params();
    store.zero_grad();
    {
      ad::Tape tape;
      tape.backward(loss(tape));
    }
    // Relative error is only meaningful where the gradient is not zero.
    std::vector<std::pair<std::string, Eigen::Index>> candidates;
    for (const auto& name : store.names()) {
      const Mat& g = store.get(name).grad;
      for (Eigen::Index i = 0; i < g.size(); ++i) {
        if (std::abs(g.data()[i]) > 1e-5) candidates.push_back({name, i});
      }
    }
    std::shuffle(candidates.begin(), candidates.end(), pick_rng);
    candidates.resize(std::min<std::size_t>(12, candidates.size()));
    double worst = 0.0;
    std::set<std::string> modules;
    for (const auto& [name, index] : candidates) {
      Parameter& p = store.get(name);
      const double analytic = p.grad.data()[index];
      const double saved = p.value.data()[index];
      auto at = [&](double v) {
        p.value.data()[index] = v;
        ad::Tape tape(false);
        return loss(tape).value()(0, 0);
      };
      const double h = 1e-6;
      const double numeric = (at(saved + h) - at(saved - h)) / (2.0 * h);
      p.value.data()[index] = saved;
      worst = std::max(worst, testing::rel_error(analytic, numeric));
      modules.insert(name.substr(0, name.find('.')));
    }
    const bool part_ok = candidates.size() >= 3 && worst < 1e-4;
    ok = ok && part_ok;
    detail << label << ": " << candidates.size() << " probes over {";
    for (auto it = modules.begin(); it != modules.end(); ++it) detail << (it == modules.begin() ? "" : ",") << *it;
    detail << "} max rel err " << fmt("%.1e", worst) << "; ";
  }
  return {ok, detail.str()};
}

// ---------------------------------------------------------------------------
// 4. Blind preference denoiser

Verdict blindness() {
  const auto world = testing::make_world(testing::tiny_config(), 4);
  Model model(world.model(), 5);
  const npd::NpdConfig& c = model.config().npd;
  ParamStore& store = model.params();
  for (const auto& name : store.names()) {
    if (name.rfind("npd.", 0) == 0 && (name.find("time") != std::string::npos || name.find("step") != std::string::npos)) {
      return {false, "parameter " + name + " looks step-indexed"};
    }
  }
  Rng rng(6);
  const Mat condition = npd::build_condition(store, c, gaussian(c.frames, c.visual_dim, rng), gaussian(1, c.text_dim, rng));
  const Mat x0 = gaussian(1, c.dim, rng);
  const int steps = 7;
  const auto sched = diffusion::make_schedule(steps, 1e-4, 0.02, true);

  std::vector<Mat> draws, latents;
  std::vector<int> counters;
  npd::NoiseFn noise = [&](int, Eigen::Index r, Eigen::Index cols) {
    draws.push_back(gaussian(r, cols, rng));
    return draws.back();
  };
  npd::recover_preference(store, c, x0, condition, sched, npd::ChainStart::from_noise, noise,
                          [&](int t, const Mat& x, const Mat&) {
                            counters.push_back(t);
                            latents.push_back(x);
                          });
  // For every counter value t, the denoiser's prediction inside the chain
  // equals a single-step (counter 1) chain started from the same latent.
  const auto one = diffusion::make_schedule(1, 1e-4, 0.02, true);
  int compared = 0, differing = 0;
  for (std::size_t i = 0; i + 1 < latents.size(); ++i) {
    const int t = counters[i];
    const Mat start = latents[i];
    npd::NoiseFn fixed = [&](int, Eigen::Index, Eigen::Index) { return start; };
    const Mat pred_at_one = npd::recover_preference(store, c, x0, condition, one, npd::ChainStart::from_noise, fixed);
    const Mat next = diffusion::posterior_step(latents[i], pred_at_one, t, sched, draws[i + 1]);
    ++compared;
    differing += !(next == latents[i + 1]);
  }
  std::ostringstream detail;
  detail << "static check: NpdConfig has no step count and no npd parameter is named by step; dynamic: " << compared
         << " chain steps (counters " << counters.front() << ".." << counters.back()
         << ") reproduced exactly from counter-1 predictions, " << differing << " differences";
  return {differing == 0 && compared == steps - 1, detail.str()};
}

// ---------------------------------------------------------------------------
// 5. Metric oracle

Verdict metric_oracle() {
  auto cfg = testing::tiny_config();
  cfg.data.synth.users = 20;
  cfg.data.synth.items = 50;
  cfg.data.synth.clusters = 5;
  cfg.data.core = 1;
  const auto world = testing::make_world(cfg, 5);
  if (world.dataset.users.size() != 20) return {false, "toy does not have 20 users"};
  Model model(world.model(), 6);
  const auto sched = training::make_schedule(cfg.train);
  double worst = 0.0;
  int rank_mismatches = 0, reports = 0;
  for (auto split : {eval::Split::validation, eval::Split::test}) {
    for (bool mask : {true, false}) {
      eval::EvalOptions opt;
      opt.ks = {1, 5, 10, 20, 50};
      opt.mask_history = mask;
      opt.batch_size = 6;
      opt.seed = 17;
      const auto report = eval::evaluate(model, world.dataset, world.features, sched, cfg.train.gamma, opt, split);
      const auto ref = testing::reference_evaluate(model, world.dataset, world.features, sched, cfg.train.gamma, opt, split);
      ++reports;
      for (std::size_t j = 0; j < opt.ks.size(); ++j) {
        worst = std::max({worst, std::abs(report.hit[j] - ref.hit[j]), std::abs(report.ndcg[j] - ref.ndcg[j])});
      }
      // Per-user ranks through the library's ranking function.
      const auto examples = eval::split_examples(world.dataset, split);
      for (std::size_t u = 0; u < examples.size(); ++u) {
        const std::vector<Example> one{examples[u]};
        const Batch b = make_batch(one, world.features, world.dataset.max_len, cfg.train.gamma);
        Rng stream = make_stream(opt.seed, "eval-chain", examples[u].user);
        const auto rep = model.infer(b, sched, [&](int, Eigen::Index r, Eigen::Index c) { return gaussian(r, c, stream); });
        std::vector<double> scores = eval::score_items(rep.preference, model.item_embeddings());
        if (mask) {
          for (int item : examples[u].history) {
            if (item != examples[u].target) scores[static_cast<std::size_t>(item - 1)] = -std::numeric_limits<double>::infinity();
          }
        }
        rank_mismatches += eval::target_rank(scores, static_cast<std::size_t>(examples[u].target - 1)) != ref.ranks[u];
      }
    }
  }
  // Spot values: ranks 4 and 15 of a 100-item list.
  std::vector<double> scores(100);
  for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = 100.0 - static_cast<double>(i);
  const std::vector<int> ks{20};
  const double n4 = eval::topk_metrics(scores, 3, ks)[0].ndcg;
  const double n15 = eval::topk_metrics(scores, 14, ks)[0].ndcg;
  const bool spots = std::abs(n4 - 1.0 / std::log2(5.0)) < 1e-15 && std::abs(n4 - 0.4307) < 5e-5 && n15 == 0.25;
  std::ostringstream detail;
  detail << reports << " reports (2 splits x masking on/off, 20 users, " << world.dataset.num_items()
         << " items): max |HR/NDCG diff| " << fmt("%.1e", worst) << ", rank mismatches " << rank_mismatches
         << "; NDCG at rank 4 = " << fmt("%.4f", n4) << ", rank 15 = " << fmt("%.4f", n15);
  return {worst <= 1e-12 && rank_mismatches == 0 && spots, detail.str()};
}

// ---------------------------------------------------------------------------
// 6. Core filter and split

Verdict protocol(const std::vector<std::pair<std::string, std::vector<data::InteractionRecord>>>& generated) {
  Rng rng(5);
  int agree = 0, nonempty = 0;
  for (int toy = 0; toy < 20; ++toy) {
    const auto recs = testing::random_bipartite(rng, 5 + toy % 2, 5 + (toy / 2) % 2, 0.7 + 0.02 * (toy % 10));
    const auto out = data::four_core_filter(recs);
    agree += out == testing::brute_force_core(recs, 4);
    nonempty += !out.empty();
  }
  int datasets = 0, users = 0, violations = 0;
  Rng ts_rng(8);
  for (int toy = 0; toy < 20; ++toy) {
    auto recs = testing::random_bipartite(ts_rng, 12, 12, 0.6);
    std::uniform_int_distribution<std::int64_t> ts(0, 20);
    for (auto& r : recs) r.timestamp = ts(ts_rng);
    const auto core = data::four_core_filter(recs);
    const auto ds = data::leave_one_out_split(core, 5);
    violations += testing::chronology_violations(core, ds);
    users += static_cast<int>(ds.users.size());
    ++datasets;
  }
  for (const auto& [name, records] : generated) {
    const auto core = data::four_core_filter(records);
    const auto ds = data::leave_one_out_split(core, config::RunConfig{}.backbone.max_len);
    violations += testing::chronology_violations(core, ds);
    users += static_cast<int>(ds.users.size());
    ++datasets;
  }
  std::ostringstream detail;
  detail << "core filter agrees with subset enumeration on " << agree << "/20 toys (" << nonempty
         << " non-empty); chronology violations " << violations << " over " << users << " users in " << datasets
         << " datasets";
  return {agree == 20 && violations == 0, detail.str()};
}

// ---------------------------------------------------------------------------
// 7. Recency weights

Verdict recency() {
  Rng rng(77);
  std::uniform_int_distribution<int> pick_len(1, 60);
  std::uniform_real_distribution<double> pick_gamma(0.0, 3.0);
  double worst_sum = 0.0, worst_ratio = 0.0;
  for (int i = 0; i < 100; ++i) {
    const int len = i == 0 ? 1 : pick_len(rng);
    const double gamma = pick_gamma(rng);
    const auto w = tcd::recency_weights(len, gamma);
    double sum = 0.0;
    for (double x : w) sum += x;
    worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
    for (std::size_t k = 1; k < w.size(); ++k) {
      worst_ratio = std::max(worst_ratio, std::abs(w[k] / w[k - 1] / std::exp(gamma) - 1.0));
    }
  }
  bool uniform = true;
  for (int len : {1, 2, 7, 50}) {
    for (double x : tcd::recency_weights(len, 0.0)) uniform = uniform && x == 1.0 / len;
  }
  std::ostringstream detail;
  detail << "100 random (L, gamma): max |sum - 1| " << fmt("%.1e", worst_sum) << ", max |ratio / e^gamma - 1| "
         << fmt("%.1e", worst_ratio) << " (" << fmt("%.1f", worst_ratio / std::numeric_limits<double>::epsilon())
         << " ulp); gamma=0 uniform: " << (uniform ? "yes" : "no");
  return {worst_sum <= 1e-9 && worst_ratio <= 1e-12 && uniform, detail.str()};
}

// ---------------------------------------------------------------------------
// 8-10. Training on the default synthetic preset

struct PresetRuns {
  config::RunConfig cfg;
  data::SplitDataset dataset;
  data::FeatureStore store;
  std::vector<data::InteractionRecord> records;
  std::vector<experiments::RunResult> ablation;
  std::vector<experiments::RunResult> noise;
  double popularity_hr10 = 0.0;
  std::vector<double> untrained_hr10;
};

config::RunConfig preset_config() {
  config::RunConfig cfg;  // default synthetic preset: 500 users, 300 items, noise 0.2
  cfg.train.epochs = 12;
  cfg.train.min_batches_per_epoch = 32;
  cfg.train.seed = 1;
  cfg.experiment.record_runtime = true;
  return cfg;
}

double median_of(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

std::vector<double> hr10_of(const std::vector<experiments::RunResult>& rows, const std::string& variant, double sigma) {
  std::vector<double> out;
  for (const auto& r : rows) {
    if (r.report.condition.variant == variant && r.report.condition.sigma == sigma) out.push_back(r.report.hr_at(10));
  }
  return out;
}

void print_rows(const std::vector<experiments::RunResult>& rows) {
  for (const auto& r : rows) {
    std::cout << "      " << r.report.condition.variant << " sigma=" << r.report.condition.sigma
              << " replicate=" << r.replicate << " seed=" << r.report.condition.seed
              << " HR@10=" << fmt("%.4f", r.report.hr_at(10)) << " N@10=" << fmt("%.4f", r.report.ndcg_at(10))
              << " (" << fmt("%.1f", r.runtime_seconds) << " s)" << std::endl;
  }
}

Verdict learnability(PresetRuns& p) {
  std::cout << "      training 4 variants x 3 seeds on the default synthetic preset..." << std::endl;
  experiments::ExperimentPlan plan;
  plan.variants = {Variant::full, Variant::no_tcd, Variant::no_npd, Variant::no_both};
  plan.seeds = {1, 2, 3};
  const experiments::Inputs inputs{p.dataset, p.store};
  p.ablation = experiments::run_ablation(plan, p.cfg, inputs, nullptr);
  print_rows(p.ablation);

  eval::EvalOptions opt = p.cfg.eval;
  p.popularity_hr10 = eval::popularity_baseline(p.dataset, opt, eval::Split::test).hr_at(10);
  const data::FeatureTable features = data::align_features(p.store, p.dataset);
  const auto sched = training::make_schedule(p.cfg.train);
  for (std::uint64_t rep : plan.seeds) {
    const std::uint64_t seed = experiments::replicate_seed(p.cfg.train.seed, rep);
    Model untrained(config::model_config(p.cfg, p.dataset, p.store), derive_seed(seed, "model"));
    opt.seed = seed;
    p.untrained_hr10.push_back(
        eval::evaluate(untrained, p.dataset, features, sched, p.cfg.train.gamma, opt, eval::Split::test).hr_at(10));
  }

  double full_seconds = 0.0;
  for (const auto& r : p.ablation) {
    if (r.report.condition.variant == "full") full_seconds += r.runtime_seconds;
  }
  const double full = median_of(hr10_of(p.ablation, "full", 0.0));
  const double chance = 10.0 / p.dataset.num_items();
  const double null_hr = std::max(chance, median_of(p.untrained_hr10));
  std::ostringstream detail;
  detail << "median full HR@10 " << fmt("%.4f", full) << " vs popularity " << fmt("%.4f", p.popularity_hr10) << " ("
         << fmt("%.1fx", full / p.popularity_hr10) << ") and null " << fmt("%.4f", null_hr) << " [k/N "
         << fmt("%.4f", chance) << ", untrained median " << fmt("%.4f", median_of(p.untrained_hr10)) << "] ("
         << fmt("%.1fx", full / null_hr) << "); 3 full-model runs took " << fmt("%.0f", full_seconds) << " s";
  const bool ok = full >= 2.0 * p.popularity_hr10 && full >= 2.0 * null_hr && full_seconds <= 600.0;
  return {ok, detail.str()};
}

Verdict ablation_order(const PresetRuns& p) {
  if (p.ablation.empty()) return {false, "ablation runs unavailable"};
  const double full = median_of(hr10_of(p.ablation, "full", 0.0));
  const double no_tcd = median_of(hr10_of(p.ablation, "no_tcd", 0.0));
  const double no_npd = median_of(hr10_of(p.ablation, "no_npd", 0.0));
  const double no_both = median_of(hr10_of(p.ablation, "no_both", 0.0));
  const double middle = std::min(no_tcd, no_npd);
  std::ostringstream detail;
  detail << "median HR@10 full " << fmt("%.4f", full) << ", no_tcd " << fmt("%.4f", no_tcd) << ", no_npd "
         << fmt("%.4f", no_npd) << ", no_both " << fmt("%.4f", no_both) << "; full >= min(no_tcd, no_npd): "
         << (full >= middle ? "yes" : "no") << ", min(no_tcd, no_npd) >= no_both: " << (middle >= no_both ? "yes" : "no");
  return {full >= middle && middle >= no_both, detail.str()};
}

Verdict noise_sweep(PresetRuns& p) {
  if (p.ablation.empty()) return {false, "sigma = 0 runs unavailable"};
  std::cout << "      training the full model at sigma 0.1, 0.3, 0.5 x 3 seeds "
               "(sigma 0 reuses the full-model ablation runs, which are the same computation)..."
            << std::endl;
  experiments::ExperimentPlan plan;
  plan.sigmas = {0.1, 0.3, 0.5};
  plan.seeds = {1, 2, 3};
  const experiments::Inputs inputs{p.dataset, p.store};
  p.noise = experiments::run_noise_sweep(plan, p.cfg, inputs, nullptr);
  print_rows(p.noise);
  std::vector<experiments::RunResult> all;
  for (const auto& r : p.ablation) {
    if (r.report.condition.variant == "full") all.push_back(r);
  }
  all.insert(all.end(), p.noise.begin(), p.noise.end());
  bool finite = true;
  for (const auto& r : all) {
    for (double v : r.report.hit) finite = finite && std::isfinite(v);
    for (double v : r.report.ndcg) finite = finite && std::isfinite(v);
  }
  std::ostringstream detail;
  detail << "median HR@10 by sigma:";
  for (double s : {0.0, 0.1, 0.3, 0.5}) detail << " " << s << "->" << fmt("%.4f", median_of(hr10_of(all, "full", s)));
  const double clean = median_of(hr10_of(all, "full", 0.0));
  const double noisy = median_of(hr10_of(all, "full", 0.5));
  detail << "; all metrics finite: " << (finite ? "yes" : "no");
  return {finite && all.size() == 12 && clean >= noisy, detail.str()};
}

// ---------------------------------------------------------------------------
// 11. Command determinism

int cli(std::vector<std::string> args, std::string& err) {
  args.insert(args.begin(), "mealrec");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, errs;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, errs);
  err = errs.str();
  return code;
}

Verdict determinism() {
  testing::TempDir dir("acceptance-cli");
  auto c = testing::tiny_config();
  c.train.epochs = 2;
  c.train.min_batches_per_epoch = 4;
  c.experiment.variants = {"full", "no_tcd"};
  c.experiment.sigmas = {0.0, 0.3};
  c.experiment.seeds = {1, 2};
  c.experiment.lambda_grid = {0.1, 0.5};
  c.experiment.steps_grid = {2, 3};
  testing::write_file(dir / "run.ini", config::echo(c));
  const std::string ini = (dir / "run.ini").string();

  const std::vector<std::string> commands{"synth", "prepare", "train", "evaluate", "export-embeddings",
                                          "ablate", "noise-sweep", "sweep"};
  std::string err;
  for (const char* run : {"first", "second"}) {
    const fs::path root = dir / run;
    const std::string data = (root / "synth").string();
    const std::string ck = (root / "train" / "checkpoint.bin").string();
    for (const auto& cmd : commands) {
      std::vector<std::string> args{cmd, "--config", ini, "--out", (root / cmd).string()};
      if (cmd == "synth") {
        args.insert(args.end(), {"--seed", "11"});
      } else if (cmd == "evaluate" || cmd == "export-embeddings") {
        args = {cmd, "--data", data, "--checkpoint", ck, "--out", (root / cmd).string()};
        if (cmd == "export-embeddings") args.insert(args.end(), {"--users", "u00,u01,u02"});
      } else {
        args.insert(args.end(), {"--data", data});
        if (cmd != "prepare") args.insert(args.end(), {"--seed", "5"});
      }
      if (cli(args, err) != 0) return {false, cmd + " failed: " + err};
    }
  }
  std::set<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir / "first")) {
    if (e.is_regular_file()) files.insert(fs::relative(e.path(), dir / "first"));
  }
  int differing = 0, missing = 0;
  for (const auto& f : files) {
    if (!fs::exists(dir / "second" / f)) {
      ++missing;
      continue;
    }
    differing += testing::read_file(dir / "first" / f) != testing::read_file(dir / "second" / f);
  }
  std::size_t second_count = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir / "second")) second_count += e.is_regular_file();
  std::ostringstream detail;
  detail << commands.size() << " commands run twice; " << files.size()
         << " output files (logs, checkpoint, CSVs, embeddings, config echoes) compared, " << differing
         << " differ, " << missing + (second_count - (files.size() - missing)) << " unmatched";
  return {differing == 0 && missing == 0 && second_count == files.size() && files.size() >= 20, detail.str()};
}

}  // namespace

int main() {
  Summary s;
  std::cout << "Acceptance suite" << std::endl;
  run(s, {1, "forward process matches analytic moments", 10.0}, forward_moments);
  run(s, {2, "reverse step collapses at t=1", 1.0}, reverse_collapse);
  run(s, {3, "analytic gradients of L_T, L_N, L_R, L_total match central differences", 60.0}, gradients);
  run(s, {4, "preference denoiser is blind to the step counter", 0.0}, blindness);
  run(s, {5, "evaluator matches the brute-force reference", 10.0}, metric_oracle);

  PresetRuns preset;
  preset.cfg = preset_config();
  {
    auto synth = data::synth_generate(preset.cfg.data.synth, 1);
    preset.records = synth.records;
    const auto core = data::four_core_filter(synth.records, preset.cfg.data.core);
    preset.dataset = data::leave_one_out_split(core, preset.cfg.backbone.max_len);
    preset.store = std::move(synth.store);
  }
  std::vector<std::pair<std::string, std::vector<data::InteractionRecord>>> generated{{"default preset", preset.records}};
  for (std::uint64_t seed : {2, 3}) generated.push_back({"preset seed", data::synth_generate(preset.cfg.data.synth, seed).records});

  run(s, {6, "4-core filter and leave-one-out split", 0.0}, [&] { return protocol(generated); });
  run(s, {7, "recency weights", 0.0}, recency);
  run(s, {8, "learnability on the default synthetic preset", 0.0}, [&] { return learnability(preset); });
  run(s, {9, "ablation ordering", 0.0, true}, [&] { return ablation_order(preset); });
  run(s, {10, "feature-noise sweep", 0.0}, [&] { return noise_sweep(preset); });
  run(s, {11, "command reruns are byte-identical", 0.0}, determinism);

  std::ostringstream total;
  total << "Summary: " << s.hard_failures << " hard failure(s), " << s.soft_failures << " flagged soft failure(s)";
  std::cout << total.str() << std::endl;
  s.report << total.str() << std::endl;
  return s.hard_failures == 0 ? 0 : 1;
}
