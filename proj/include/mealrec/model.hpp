#pragma once

// The full recommender: sequence encoder -> TCD frame refinement -> NPD
// preference recovery -> dot-product scoring against item embeddings.

#include "mealrec/backbone.hpp"
#include "mealrec/data.hpp"
#include "mealrec/npd.hpp"
#include "mealrec/schedule.hpp"
#include "mealrec/tcd.hpp"

#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mealrec {

/// Ablation variants: no_tcd feeds raw frames to the condition, no_npd swaps
/// the preference denoiser for an MLP fusion, no_both does both.
enum class Variant { full, no_tcd, no_npd, no_both };

Variant parse_variant(const std::string& name);
std::string to_string(Variant v);

struct ModelConfig {
  backbone::EncoderConfig backbone;
  tcd::TcdConfig tcd;
  npd::NpdConfig npd;
  Variant variant = Variant::full;

  bool uses_tcd() const { return variant == Variant::full || variant == Variant::no_npd; }
  bool uses_npd() const { return variant == Variant::full || variant == Variant::no_tcd; }
};

/// One next-item prediction: the history (oldest first) and the held-out item.
struct Example {
  std::vector<int> history;
  int target = 0;
  std::size_t user = 0;  // index into SplitDataset::users
};

/// Dense tensors for a set of examples.
struct Batch {
  int size = 0;
  int length = 0;             // padded row width: the longest history, capped at max_len
  std::vector<int> item_ids;  // size x length, left padded
  Mat frames;                 // (size*K) x d_v, frames of each latest item
  Mat text;                   // size x d_h, text of each latest item
  Mat context;                // size x d_v, recency-weighted history visuals
  std::vector<int> targets;
  std::vector<std::size_t> users;
};

Batch make_batch(std::span<const Example> examples, const data::FeatureTable& features, int max_len,
                 double gamma);

/// Per-example diffusion draws for one training step.
struct DiffusionDraws {
  std::vector<int> tcd_steps;
  std::vector<int> npd_steps;
  Mat tcd_eps;  // (size*K) x d_v
  Mat npd_eps;  // size x d
  Rng* chain_rng = nullptr;  // only for the full_chain TCD training mode
};

struct TrainForward {
  ad::Var total;
  ad::Var rec;
  ad::Var tcd;  // invalid when the variant has no TCD
  ad::Var npd;  // invalid when the variant has no NPD
};

struct Representation {
  Mat x0;          // size x d backbone output
  Mat frames;      // (size*K) x d_v visual input to the condition (refined or raw)
  Mat preference;  // size x d final user representation
};

class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t init_seed);
  Model(ModelConfig cfg, ParamStore params);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return *params_; }
  const ParamStore& params() const { return *params_; }
  const backbone::SequenceEncoder& encoder() const { return *encoder_; }

  TrainForward forward_train(ad::Tape& tape, const Batch& batch, const diffusion::Schedule& sched,
                             const DiffusionDraws& draws, double lambda_tcd, double lambda_npd,
                             const nn::Dropout& drop);

  /// Evaluation-mode forward pass; noise(g, r, c) supplies draws for example g.
  Representation infer(const Batch& batch, const diffusion::Schedule& sched, const tcd::NoiseFn& noise);

  /// Item embedding table including the padding row.
  const Mat& item_embeddings() const;

 private:
  ad::Var fuse(ad::Tape& tape, ad::Var x0, ad::Var condition, const nn::Dropout& drop);
  void register_fusion(Rng& rng);

  ModelConfig cfg_;
  std::unique_ptr<ParamStore> params_;
  std::unique_ptr<backbone::SequenceEncoder> encoder_;
};

}  // namespace mealrec
