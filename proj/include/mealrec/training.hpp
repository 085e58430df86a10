#pragma once

// Joint optimization of the encoder, TCD and NPD under
// L_total = L_rec + lambda_T * L_tcd + lambda_N * L_npd.

#include "mealrec/eval.hpp"
#include "mealrec/model.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mealrec::training {

enum class TimestepSampling { uniform_1_to_T, fixed_set };

TimestepSampling parse_timestep_sampling(const std::string& name);
std::string to_string(TimestepSampling s);

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 2048;
  /// The batch shrinks so an epoch has at least this many updates.
  int min_batches_per_epoch = 16;
  int epochs = 30;
  int patience = 10;  // early stopping on validation NDCG@10
  double lambda_tcd = 0.1;
  double lambda_npd = 0.1;
  int steps = 10;  // T, shared by TCD and NPD
  double beta_start = 1e-4;
  double beta_end = 0.02;
  bool beta_rescale = true;
  double gamma = 0.9;
  std::uint64_t seed = 0;
  double clip_norm = 5.0;
  TimestepSampling t_sampling = TimestepSampling::uniform_1_to_T;
  bool log_wall_time = false;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
};

diffusion::Schedule make_schedule(const TrainConfig& cfg);

/// Uniform integer in [1, T].
int sample_timestep(int steps, Rng& rng);
/// fixed_set draws uniformly from {5, 10, 15, 20, 25} restricted to <= T
/// (falling back to T when none qualify).
int sample_timestep(TimestepSampling mode, int steps, Rng& rng);

/// -log softmax(scores)[target].
double rec_loss(std::span<const double> scores, std::size_t target);

/// One example per training position: every proper prefix of a user's
/// training sequence predicts the following item.
std::vector<Example> training_examples(const data::SplitDataset& dataset);

int effective_batch_size(const TrainConfig& cfg, std::size_t examples);

DiffusionDraws draw_diffusion(const Batch& batch, const ModelConfig& model, const TrainConfig& cfg, Rng& rng);

struct LossParts {
  double total = 0.0;
  double rec = 0.0;
  double tcd = 0.0;
  double npd = 0.0;
};

/// Records the batch loss on `tape` and returns the scalar parts.
LossParts total_loss(Model& model, ad::Tape& tape, const Batch& batch, const diffusion::Schedule& sched,
                     const TrainConfig& cfg, Rng& diffusion_rng, Rng* dropout_rng, ad::Var* total = nullptr);

/// Adaptive-moment optimizer with global-norm gradient clipping.
class Adam {
 public:
  Adam(const ParamStore& params, const TrainConfig& cfg);
  /// Clips, applies one update and returns the pre-clip gradient norm.
  double step(ParamStore& params);

 private:
  TrainConfig cfg_;
  std::vector<Mat> m_;
  std::vector<Mat> v_;
  long long t_ = 0;
};

struct EpochLog {
  int epoch = 0;
  double total = 0.0;
  double rec = 0.0;
  double tcd = 0.0;
  double npd = 0.0;
  double val_hr10 = 0.0;
  double val_ndcg10 = 0.0;
  double wall_seconds = 0.0;
};

nlohmann::json to_json(const EpochLog& log);

struct FitResult {
  Model model;
  std::vector<EpochLog> log;
  int best_epoch = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Trains from a fresh initialization and keeps the best-validation weights.
/// Throws std::runtime_error if the loss becomes non-finite.
/// Validation uses `eval_options` (which must include k = 10) exactly as a
/// standalone evaluate call would.
FitResult fit(const data::SplitDataset& dataset, const data::FeatureTable& features, const ModelConfig& model_cfg,
              const TrainConfig& cfg, const eval::EvalOptions& eval_options, const EpochCallback& on_epoch = {});

/// Self-describing binary container: magic, config echo, named float64 arrays.
void save_checkpoint(const std::filesystem::path& path, const ParamStore& params, const std::string& config_echo);

struct Checkpoint {
  ParamStore params;
  std::string config_echo;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mealrec::training
