#pragma once

// Experiment harness: ablations, feature-noise sweeps, sensitivity grids and
// embedding export. Each run trains from scratch and is evaluated on the test
// split; results are appended to a CSV one row at a time.

#include "mealrec/config.hpp"

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace mealrec::experiments {

struct ExperimentPlan {
  std::vector<Variant> variants{Variant::full};
  std::vector<double> sigmas{0.0};
  std::vector<double> lambda_tcd{0.1};
  std::vector<double> lambda_npd{0.1};
  std::vector<int> steps{10};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::filesystem::path out_dir;  // empty: no per-run logs are written

  void validate() const;
};

/// Plan for the experiment section of a run configuration.
ExperimentPlan plan_from_config(const config::RunConfig& cfg, const std::filesystem::path& out_dir);

/// Model configuration with the diffusion modules swapped for the variant.
ModelConfig apply_variant(ModelConfig cfg, Variant variant);

/// Loaded inputs shared (read-only) by every run.
struct Inputs {
  const data::SplitDataset& dataset;
  const data::FeatureStore& store;  // clean features; noise is applied to copies
};

/// Seed a replicate trains with, derived from the master seed.
std::uint64_t replicate_seed(std::uint64_t master, std::uint64_t replicate);

struct RunResult {
  eval::EvalReport report;  // test split, condition filled in
  std::uint64_t replicate = 0;
  double runtime_seconds = 0.0;
  std::vector<training::EpochLog> log;
};

/// One training + test evaluation under an explicit condition. `cfg.train.seed`
/// is used as is; sigma > 0 perturbs a copy of the visual features.
RunResult run_condition(const config::RunConfig& cfg, const Inputs& inputs, Variant variant, double sigma);

/// CSV sink: writes the header once and flushes every row.
class ResultsCsv {
 public:
  explicit ResultsCsv(const std::filesystem::path& path);
  void write(const RunResult& row);
  void write_summary(const std::vector<RunResult>& rows);

  static std::string header();
  static std::string row(const eval::EvalReport& report, const std::string& replicate, double runtime);

 private:
  std::ofstream out_;
};

/// Median over seeds of every metric, one entry per condition in first-seen order.
std::vector<eval::EvalReport> median_summary(const std::vector<RunResult>& rows);

std::vector<RunResult> run_ablation(const ExperimentPlan& plan, const config::RunConfig& base, const Inputs& inputs,
                                    ResultsCsv* csv);

std::vector<RunResult> run_noise_sweep(const ExperimentPlan& plan, const config::RunConfig& base,
                                       const Inputs& inputs, ResultsCsv* csv);

/// Sweeps (lambda_T x T) with lambda_N fixed and (lambda_N x T) with lambda_T
/// fixed, using the plan's lambda lists as the grids for the two pairs.
struct SensitivityResult {
  std::vector<RunResult> tcd_grid;
  std::vector<RunResult> npd_grid;
};

SensitivityResult run_sensitivity(const ExperimentPlan& plan, const config::RunConfig& base, const Inputs& inputs,
                                  ResultsCsv* csv);

/// Heat-map table of the median `metric` over seeds: rows lambda, columns T.
void write_heatmap(const std::filesystem::path& path, const std::vector<RunResult>& grid, bool npd_pair,
                   const std::string& metric);

/// Writes `role,user_id,index,c0..` rows: the preference vector, the test
/// target's item embedding and the K frame vectors entering the condition.
void export_embeddings(Model& model, const config::RunConfig& cfg, const data::SplitDataset& dataset,
                       const data::FeatureTable& features, const std::vector<std::string>& user_ids,
                       const std::filesystem::path& out_path);

}  // namespace mealrec::experiments
