#pragma once

// Temporal-guided content diffusion: refines the frame sequence of a user's
// latest item under a recency-weighted visual context.

#include "mealrec/autograd.hpp"
#include "mealrec/layers.hpp"
#include "mealrec/schedule.hpp"

#include <functional>
#include <span>
#include <vector>

namespace mealrec::tcd {

enum class RefineMode { one_step, full_chain };
enum class ChainStart { from_noise, from_corrupted };

struct TcdConfig {
  int frames = 5;       // K
  int dim = 32;         // d_v
  int steps = 10;       // T, length of the timestep embedding table
  int heads = 1;
  double gamma = 0.9;
  bool detach_target = false;
  RefineMode train_refine_mode = RefineMode::one_step;
  ChainStart eval_start = ChainStart::from_noise;
};

struct VisualContext {
  Mat vector;  // 1 x d_v
  double gamma = 0.9;
};

/// alpha_k proportional to exp(-gamma (L - k)), k = 1..L.
std::vector<double> recency_weights(int length, double gamma);
/// Recency-weighted convex combination of the rows of history_visuals (L x d_v).
VisualContext visual_context(const Mat& history_visuals, double gamma);

void register_params(ParamStore& store, const TcdConfig& cfg, Rng& rng);

/// Batched temporal encoder: frames are (G*K) x d_v; returns z_0 of the same shape.
ad::Var temporal_encode(ad::Tape& tape, ParamStore& store, const TcdConfig& cfg, ad::Var frames,
                        const nn::Dropout& drop = {});
/// Batched clean-latent prediction f(z_t, t, c_v); steps holds one t per group,
/// context is G x d_v.
ad::Var denoise(ad::Tape& tape, ParamStore& store, const TcdConfig& cfg, ad::Var z_t,
                std::span<const int> steps, ad::Var context);

/// Per-group noise: returns a rows x cols draw for group g.
using NoiseFn = std::function<Mat(int group, Eigen::Index rows, Eigen::Index cols)>;

/// Runs the reverse chain z_T -> ... -> z_0_hat for every group on the tape
/// (differentiable when the tape records gradients). `clean` is only read for
/// ChainStart::from_corrupted.
ad::Var reverse_chain(ad::Tape& tape, ParamStore& store, const TcdConfig& cfg, ad::Var clean,
                      ad::Var context, const diffusion::Schedule& sched, ChainStart start,
                      const NoiseFn& noise);

struct LossTerms {
  ad::Var loss;        // 1 x 1 mean squared reconstruction error
  ad::Var prediction;  // one-step z_0_hat at the sampled steps
  ad::Var clean;       // z_0
};

/// ||z_0 - f(q_sample(z_0, t, eps), t, c_v)||^2 averaged over elements, with
/// caller-supplied per-group steps and noise eps ((G*K) x d_v).
LossTerms training_loss(ad::Tape& tape, ParamStore& store, const TcdConfig& cfg, ad::Var frames,
                        ad::Var context, const diffusion::Schedule& sched,
                        std::span<const int> steps, const Mat& eps, const nn::Dropout& drop = {});

// Single-item conveniences on plain matrices.
Mat temporal_encode(ParamStore& store, const TcdConfig& cfg, const Mat& frames);
Mat denoise_frames(ParamStore& store, const TcdConfig& cfg, const Mat& z_t, int t,
                   const VisualContext& context);
Mat refine(ParamStore& store, const TcdConfig& cfg, const Mat& frames, const VisualContext& context,
           const diffusion::Schedule& sched, Rng& rng);

}  // namespace mealrec::tcd
