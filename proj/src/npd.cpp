#include "mealrec/npd.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mealrec::npd {

void register_params(ParamStore& store, const NpdConfig& cfg, Rng& rng) {
  if (cfg.dim % cfg.heads != 0) throw std::invalid_argument("NPD dim must be divisible by heads");
  nn::add_linear(store, "npd.visual_proj", cfg.visual_dim, cfg.dim, rng);
  nn::add_linear(store, "npd.text_proj", cfg.text_dim, cfg.dim, rng);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(cfg.dim)));
  // One learned slot embedding per token position: [x_t, frames 1..K, text].
  Mat slots(cfg.condition_tokens() + 1, cfg.dim);
  for (Eigen::Index i = 0; i < slots.size(); ++i) slots.data()[i] = normal(rng);
  store.add("npd.slot_embedding", std::move(slots));
  for (int b = 0; b < cfg.blocks; ++b) {
    nn::add_attention_block(store, "npd.block" + std::to_string(b), cfg.dim, cfg.dim, rng);
  }
  nn::add_layer_norm(store, "npd.ln_out", cfg.dim);
  nn::add_linear(store, "npd.out", cfg.dim, cfg.dim, rng);
}

ad::Var build_condition(ad::Tape& tape, ParamStore& store, const NpdConfig& cfg, ad::Var visual,
                        ad::Var text) {
  if (visual.cols() != cfg.visual_dim || text.cols() != cfg.text_dim) {
    throw std::invalid_argument("build_condition: feature width mismatch");
  }
  if (visual.rows() != text.rows() * cfg.frames) {
    throw std::invalid_argument("build_condition: expected K frame rows per text row");
  }
  const ad::Var parts[] = {nn::linear(tape, store, "npd.visual_proj", visual),
                           nn::linear(tape, store, "npd.text_proj", text)};
  const int sizes[] = {cfg.frames, 1};
  return ad::interleave_groups(parts, sizes);
}

ad::Var blind_denoise(ad::Tape& tape, ParamStore& store, const NpdConfig& cfg, ad::Var x_t,
                      ad::Var condition, const nn::Dropout& drop) {
  const int m = cfg.condition_tokens();
  const int groups = static_cast<int>(x_t.rows());
  if (x_t.cols() != cfg.dim || condition.cols() != cfg.dim ||
      condition.rows() != static_cast<Eigen::Index>(groups) * m) {
    throw std::invalid_argument("blind_denoise: dimension mismatch");
  }
  const ad::Var parts[] = {x_t, condition};
  const int sizes[] = {1, m};
  ad::Var h = ad::interleave_groups(parts, sizes);
  std::vector<int> slot(static_cast<std::size_t>(groups) * (m + 1));
  for (std::size_t r = 0; r < slot.size(); ++r) slot[r] = static_cast<int>(r % static_cast<std::size_t>(m + 1));
  h = ad::add(h, ad::rows(tape.param(store, "npd.slot_embedding"), slot));
  ad::AttentionSpec spec;
  spec.groups = groups;
  spec.query_len = m + 1;
  spec.key_len = m + 1;
  spec.heads = cfg.heads;
  for (int b = 0; b < cfg.blocks; ++b) {
    h = nn::attention_block(tape, store, "npd.block" + std::to_string(b), h, spec, drop);
  }
  std::vector<int> readout(static_cast<std::size_t>(groups));
  for (int g = 0; g < groups; ++g) readout[static_cast<std::size_t>(g)] = g * (m + 1);
  ad::Var x = nn::layer_norm(tape, store, "npd.ln_out", ad::rows(h, std::move(readout)));
  return nn::linear(tape, store, "npd.out", x);
}

Mat recover_preference(ParamStore& store, const NpdConfig& cfg, const Mat& x0, const Mat& condition,
                       const diffusion::Schedule& sched, ChainStart start, const NoiseFn& noise,
                       const ChainObserver& observer) {
  const int groups = static_cast<int>(x0.rows());
  auto draw = [&]() {
    Mat m(groups, x0.cols());
    for (int g = 0; g < groups; ++g) m.row(g) = noise(g, 1, x0.cols());
    return m;
  };
  const int T = sched.steps();
  Mat x = start == ChainStart::from_noise ? draw() : diffusion::q_sample(x0, T, draw(), sched);
  for (int t = T; t >= 1; --t) {
    if (observer) observer(t, x, condition);
    Mat x0_hat;
    {
      ad::Tape tape(false);
      x0_hat = blind_denoise(tape, store, cfg, tape.constant(x), tape.constant(condition)).value();
    }
    if (t == 1) return x0_hat;
    x = diffusion::posterior_step(x, x0_hat, t, sched, draw());
  }
  throw std::logic_error("recover_preference: unreachable");
}

Mat recover_preference(ParamStore& store, const NpdConfig& cfg, const Mat& x0, const Mat& condition,
                       const diffusion::Schedule& sched, Rng& rng, ChainStart start) {
  NoiseFn noise = [&rng](int, Eigen::Index r, Eigen::Index c) { return gaussian(r, c, rng); };
  return recover_preference(store, cfg, x0, condition, sched, start, noise);
}

LossTerms training_loss(ad::Tape& tape, ParamStore& store, const NpdConfig& cfg, ad::Var x0,
                        ad::Var condition, const diffusion::Schedule& sched,
                        std::span<const int> steps, const Mat& eps, const nn::Dropout& drop) {
  if (eps.rows() != x0.rows() || eps.cols() != x0.cols() ||
      static_cast<Eigen::Index>(steps.size()) != x0.rows()) {
    throw std::invalid_argument("npd training_loss: shape mismatch");
  }
  std::vector<double> signal(steps.size());
  Mat scaled_noise(eps.rows(), eps.cols());
  for (std::size_t g = 0; g < steps.size(); ++g) {
    const double ab = sched.alpha_bar(steps[g]);
    signal[g] = std::sqrt(ab);
    scaled_noise.row(static_cast<Eigen::Index>(g)) = std::sqrt(1.0 - ab) * eps.row(static_cast<Eigen::Index>(g));
  }
  ad::Var x_t = ad::add(ad::row_scale(x0, std::move(signal)), tape.constant(std::move(scaled_noise)));
  ad::Var pred = blind_denoise(tape, store, cfg, x_t, condition, drop);
  return {ad::mse(x0, pred), pred};
}

Mat build_condition(ParamStore& store, const NpdConfig& cfg, const Mat& frames, const Mat& text) {
  ad::Tape tape(false);
  return build_condition(tape, store, cfg, tape.constant(frames), tape.constant(text)).value();
}

Mat blind_denoise(ParamStore& store, const NpdConfig& cfg, const Mat& x_t, const Mat& condition) {
  ad::Tape tape(false);
  return blind_denoise(tape, store, cfg, tape.constant(x_t), tape.constant(condition)).value();
}

}  // namespace mealrec::npd
