#pragma once

// Noise-unconditional preference denoising. The denoiser never receives the
// diffusion step; the sampler alone tracks it.

#include "mealrec/autograd.hpp"
#include "mealrec/layers.hpp"
#include "mealrec/schedule.hpp"

#include <functional>
#include <span>

namespace mealrec::npd {

enum class ChainStart { from_noise, from_corrupted };

struct NpdConfig {
  int dim = 64;         // d
  int visual_dim = 32;  // d_v
  int text_dim = 16;    // d_h
  int frames = 5;       // K
  int blocks = 2;
  int heads = 2;
  double dropout = 0.2;
  bool residual = false;
  ChainStart eval_start = ChainStart::from_corrupted;

  /// Condition tokens per example: K frame tokens then one text token.
  int condition_tokens() const { return frames + 1; }
};

void register_params(ParamStore& store, const NpdConfig& cfg, Rng& rng);

/// Projects G groups of K visual rows ((G*K) x d_v) and G text rows (G x d_h)
/// into (G*(K+1)) x d condition tokens ordered [frames 1..K, text].
ad::Var build_condition(ad::Tape& tape, ParamStore& store, const NpdConfig& cfg, ad::Var visual,
                        ad::Var text);

/// x0_hat = g(x_t, c_m): self-attention over {x_t} and the condition tokens,
/// reading out the transformed x_t token. x_t is G x d.
ad::Var blind_denoise(ad::Tape& tape, ParamStore& store, const NpdConfig& cfg, ad::Var x_t,
                      ad::Var condition, const nn::Dropout& drop = {});

using NoiseFn = std::function<Mat(int group, Eigen::Index rows, Eigen::Index cols)>;
/// Called once per reverse step with the step counter, the current latent and
/// the condition actually handed to the denoiser.
using ChainObserver = std::function<void(int step, const Mat& x_t, const Mat& condition)>;

/// Reverse chain x_T -> ... -> x0_hat for G users under a fixed condition
/// (G*(K+1)) x d. Returns G x d.
Mat recover_preference(ParamStore& store, const NpdConfig& cfg, const Mat& x0, const Mat& condition,
                       const diffusion::Schedule& sched, ChainStart start, const NoiseFn& noise,
                       const ChainObserver& observer = {});
Mat recover_preference(ParamStore& store, const NpdConfig& cfg, const Mat& x0, const Mat& condition,
                       const diffusion::Schedule& sched, Rng& rng, ChainStart start);

struct LossTerms {
  ad::Var loss;        // 1 x 1
  ad::Var prediction;  // G x d one-step x0_hat
};

/// One q_sample and one denoiser call per example: mean ||x_0 - g(x_t, c_m)||^2.
LossTerms training_loss(ad::Tape& tape, ParamStore& store, const NpdConfig& cfg, ad::Var x0,
                        ad::Var condition, const diffusion::Schedule& sched,
                        std::span<const int> steps, const Mat& eps, const nn::Dropout& drop = {});

// Single-example conveniences.
Mat build_condition(ParamStore& store, const NpdConfig& cfg, const Mat& frames, const Mat& text);
Mat blind_denoise(ParamStore& store, const NpdConfig& cfg, const Mat& x_t, const Mat& condition);

}  // namespace mealrec::npd
