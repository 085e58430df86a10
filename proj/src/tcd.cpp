#include "mealrec/tcd.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mealrec::tcd {

std::vector<double> recency_weights(int length, double gamma) {
  if (length < 1) throw std::invalid_argument("recency_weights: empty history");
  if (!(gamma >= 0.0)) throw std::invalid_argument("recency_weights: gamma must be >= 0");
  std::vector<double> w(static_cast<std::size_t>(length));
  double total = 0.0;
  for (int k = 1; k <= length; ++k) {
    w[static_cast<std::size_t>(k - 1)] = std::exp(-gamma * (length - k));
    total += w[static_cast<std::size_t>(k - 1)];
  }
  for (double& x : w) x /= total;
  return w;
}

VisualContext visual_context(const Mat& history_visuals, double gamma) {
  const auto w = recency_weights(static_cast<int>(history_visuals.rows()), gamma);
  VisualContext ctx;
  ctx.gamma = gamma;
  ctx.vector = Mat::Zero(1, history_visuals.cols());
  for (Eigen::Index k = 0; k < history_visuals.rows(); ++k) {
    ctx.vector += w[static_cast<std::size_t>(k)] * history_visuals.row(k);
  }
  return ctx;
}

namespace {

int pooled_len(int k) { return (k + 1) / 2; }

// Average of adjacent frame pairs; an odd tail frame passes through alone.
Mat pool_map(int k) {
  const int m = pooled_len(k);
  Mat map = Mat::Zero(m, k);
  for (int j = 0; j < m; ++j) {
    const int a = 2 * j;
    const int b = std::min(2 * j + 1, k - 1);
    if (a == b) {
      map(j, a) = 1.0;
    } else {
      map(j, a) = 0.5;
      map(j, b) = 0.5;
    }
  }
  return map;
}

Mat upsample_map(int k) {
  Mat map = Mat::Zero(k, pooled_len(k));
  for (int i = 0; i < k; ++i) map(i, i / 2) = 1.0;
  return map;
}

Mat sinusoidal_table(int steps, int dim) {
  Mat table(steps, dim);
  for (int t = 0; t < steps; ++t) {
    for (int i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / dim);
      const double angle = static_cast<double>(t + 1) * freq;
      table(t, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return table;
}

void add_cross_block(ParamStore& store, const std::string& prefix, int width, int context_dim,
                     Rng& rng) {
  nn::add_layer_norm(store, prefix + ".ln", width);
  nn::add_linear(store, prefix + ".query", width, width, rng);
  nn::add_linear(store, prefix + ".context", context_dim, width, rng);
  store.add(prefix + ".null_token", nn::xavier(1, width, rng));
  nn::add_linear(store, prefix + ".key", width, width, rng);
  nn::add_linear(store, prefix + ".value", width, width, rng);
  nn::add_linear(store, prefix + ".out", width, width, rng);
}

// Frame queries attend over two context tokens: the projected c_v and a
// learned null token, so a level can choose how much guidance to take.
ad::Var cross_block(ad::Tape& tape, ParamStore& store, const std::string& prefix, ad::Var h,
                    ad::Var context, int len, int heads) {
  const int groups = static_cast<int>(context.rows());
  ad::Var q = nn::linear(tape, store, prefix + ".query", nn::layer_norm(tape, store, prefix + ".ln", h));
  const ad::Var parts[] = {nn::linear(tape, store, prefix + ".context", context),
                           ad::repeat_rows(tape.param(store, prefix + ".null_token"), groups)};
  const int sizes[] = {1, 1};
  ad::Var tokens = ad::interleave_groups(parts, sizes);
  ad::Var k = nn::linear(tape, store, prefix + ".key", tokens);
  ad::Var v = nn::linear(tape, store, prefix + ".value", tokens);
  ad::AttentionSpec spec;
  spec.groups = groups;
  spec.query_len = len;
  spec.key_len = 2;
  spec.heads = heads;
  return ad::add(h, nn::linear(tape, store, prefix + ".out", ad::attention(q, k, v, spec)));
}

ad::Var conv3(ad::Tape& tape, ParamStore& store, const std::string& prefix, ad::Var x, int len) {
  return nn::linear(tape, store, prefix, ad::im2col3(x, len));
}

std::vector<int> repeat_step(int t, int groups) { return std::vector<int>(static_cast<std::size_t>(groups), t); }

}  // namespace

void register_params(ParamStore& store, const TcdConfig& cfg, Rng& rng) {
  const int dv = cfg.dim;
  if (cfg.frames < 1 || dv < 1 || cfg.steps < 1) throw std::invalid_argument("bad TCD shape");
  if (dv % cfg.heads != 0) throw std::invalid_argument("TCD dim must be divisible by heads");
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(dv)));
  Mat pos(cfg.frames, dv);
  for (Eigen::Index i = 0; i < pos.size(); ++i) pos.data()[i] = normal(rng);
  store.add("tcd.frame_position", std::move(pos));
  nn::add_attention_block(store, "tcd.encoder", dv, 2 * dv, rng);
  store.add("tcd.time_embedding", sinusoidal_table(cfg.steps, dv));
  nn::add_linear(store, "tcd.unet.in_conv", 3 * dv, dv, rng);
  nn::add_linear(store, "tcd.unet.time1", dv, dv, rng);
  add_cross_block(store, "tcd.unet.cross1", dv, dv, rng);
  nn::add_linear(store, "tcd.unet.mid_conv", 3 * dv, 2 * dv, rng);
  nn::add_linear(store, "tcd.unet.time2", dv, 2 * dv, rng);
  add_cross_block(store, "tcd.unet.cross2", 2 * dv, dv, rng);
  nn::add_linear(store, "tcd.unet.up_conv", 3 * 2 * dv, dv, rng);
  nn::add_linear(store, "tcd.unet.merge_conv", 3 * 2 * dv, dv, rng);
  nn::add_linear(store, "tcd.unet.out", dv, dv, rng);
}

ad::Var temporal_encode(ad::Tape& tape, ParamStore& store, const TcdConfig& cfg, ad::Var frames,
                        const nn::Dropout& drop) {
  const int k = cfg.frames;
  if (frames.cols() != cfg.dim) throw std::invalid_argument("temporal_encode: frame width mismatch");
  if (frames.rows() == 0 || frames.rows() % k != 0) {
    throw std::invalid_argument("temporal_encode: frame count does not match positional table");
  }
  const int groups = static_cast<int>(frames.rows() / k);
  std::vector<int> pos_index(static_cast<std::size_t>(groups) * k);
  for (std::size_t r = 0; r < pos_index.size(); ++r) pos_index[r] = static_cast<int>(r % static_cast<std::size_t>(k));
  ad::Var x = ad::add(frames, ad::rows(tape.param(store, "tcd.frame_position"), pos_index));
  ad::AttentionSpec spec;
  spec.groups = groups;
  spec.query_len = k;
  spec.key_len = k;
  spec.heads = cfg.heads;
  return nn::attention_block(tape, store, "tcd.encoder", x, spec, drop);
}

ad::Var denoise(ad::Tape& tape, ParamStore& store, const TcdConfig& cfg, ad::Var z_t,
                std::span<const int> steps, ad::Var context) {
  const int k = cfg.frames;
  const int groups = static_cast<int>(context.rows());
  if (context.cols() != cfg.dim) throw std::invalid_argument("denoise: context width mismatch");
  if (z_t.cols() != cfg.dim || z_t.rows() != static_cast<Eigen::Index>(groups) * k) {
    throw std::invalid_argument("denoise: latent shape mismatch");
  }
  if (static_cast<int>(steps.size()) != groups) throw std::invalid_argument("denoise: one step per group");
  ad::Var table = tape.param(store, "tcd.time_embedding");
  std::vector<int> step_rows(steps.size());
  for (std::size_t g = 0; g < steps.size(); ++g) {
    if (steps[g] < 1 || steps[g] > table.rows()) {
      throw std::out_of_range("denoise: step " + std::to_string(steps[g]) + " outside [1, " +
                              std::to_string(table.rows()) + "]");
    }
    step_rows[g] = steps[g] - 1;
  }
  ad::Var temb = ad::rows(table, step_rows);
  const int k2 = pooled_len(k);

  ad::Var h = conv3(tape, store, "tcd.unet.in_conv", z_t, k);
  h = ad::add(h, ad::repeat_rows(nn::linear(tape, store, "tcd.unet.time1", temb), k));
  h = cross_block(tape, store, "tcd.unet.cross1", ad::gelu(h), context, k, cfg.heads);
  ad::Var skip = h;

  ad::Var low = ad::group_map(h, pool_map(k));
  low = conv3(tape, store, "tcd.unet.mid_conv", low, k2);
  low = ad::add(low, ad::repeat_rows(nn::linear(tape, store, "tcd.unet.time2", temb), k2));
  low = cross_block(tape, store, "tcd.unet.cross2", ad::gelu(low), context, k2, cfg.heads);

  ad::Var up = conv3(tape, store, "tcd.unet.up_conv", ad::group_map(low, upsample_map(k)), k);
  const ad::Var merged_parts[] = {up, skip};
  ad::Var merged = ad::gelu(conv3(tape, store, "tcd.unet.merge_conv", ad::concat_cols(merged_parts), k));
  return nn::linear(tape, store, "tcd.unet.out", merged);
}

ad::Var reverse_chain(ad::Tape& tape, ParamStore& store, const TcdConfig& cfg, ad::Var clean,
                      ad::Var context, const diffusion::Schedule& sched, ChainStart start,
                      const NoiseFn& noise) {
  if (sched.steps() != cfg.steps) {
    throw std::invalid_argument("reverse_chain: schedule length differs from timestep table");
  }
  const int k = cfg.frames;
  const int groups = static_cast<int>(context.rows());
  auto draw = [&]() {
    Mat m(static_cast<Eigen::Index>(groups) * k, cfg.dim);
    for (int g = 0; g < groups; ++g) m.middleRows(static_cast<Eigen::Index>(g) * k, k) = noise(g, k, cfg.dim);
    return m;
  };
  const int T = sched.steps();
  ad::Var z;
  if (start == ChainStart::from_noise) {
    z = tape.constant(draw());
  } else {
    z = tape.constant(diffusion::q_sample(clean.value(), T, draw(), sched));
  }
  for (int t = T; t >= 1; --t) {
    ad::Var pred = denoise(tape, store, cfg, z, repeat_step(t, groups), context);
    if (t == 1) return pred;
    z = ad::add(ad::add(ad::scale(pred, sched.mean_coef_x0(t)), ad::scale(z, sched.mean_coef_xt(t))),
                tape.constant(sched.sigma(t) * draw()));
  }
  throw std::logic_error("reverse_chain: unreachable");
}

LossTerms training_loss(ad::Tape& tape, ParamStore& store, const TcdConfig& cfg, ad::Var frames,
                        ad::Var context, const diffusion::Schedule& sched,
                        std::span<const int> steps, const Mat& eps, const nn::Dropout& drop) {
  ad::Var z0 = temporal_encode(tape, store, cfg, frames, drop);
  if (eps.rows() != z0.rows() || eps.cols() != z0.cols()) {
    throw std::invalid_argument("training_loss: noise shape mismatch");
  }
  const int k = cfg.frames;
  std::vector<double> signal(static_cast<std::size_t>(z0.rows()));
  Mat scaled_noise(eps.rows(), eps.cols());
  for (Eigen::Index r = 0; r < z0.rows(); ++r) {
    const double ab = sched.alpha_bar(steps[static_cast<std::size_t>(r / k)]);
    signal[static_cast<std::size_t>(r)] = std::sqrt(ab);
    scaled_noise.row(r) = std::sqrt(1.0 - ab) * eps.row(r);
  }
  ad::Var z_t = ad::add(ad::row_scale(z0, std::move(signal)), tape.constant(std::move(scaled_noise)));
  ad::Var pred = denoise(tape, store, cfg, z_t, steps, context);
  ad::Var target = cfg.detach_target ? tape.constant(z0.value()) : z0;
  return {ad::mse(target, pred), pred, z0};
}

Mat temporal_encode(ParamStore& store, const TcdConfig& cfg, const Mat& frames) {
  ad::Tape tape(false);
  return temporal_encode(tape, store, cfg, tape.constant(frames)).value();
}

Mat denoise_frames(ParamStore& store, const TcdConfig& cfg, const Mat& z_t, int t,
                   const VisualContext& context) {
  ad::Tape tape(false);
  const int steps[] = {t};
  return denoise(tape, store, cfg, tape.constant(z_t), steps, tape.constant(context.vector)).value();
}

Mat refine(ParamStore& store, const TcdConfig& cfg, const Mat& frames, const VisualContext& context,
           const diffusion::Schedule& sched, Rng& rng) {
  ad::Tape tape(false);
  ad::Var z0 = temporal_encode(tape, store, cfg, tape.constant(frames));
  NoiseFn noise = [&rng](int, Eigen::Index r, Eigen::Index c) { return gaussian(r, c, rng); };
  return reverse_chain(tape, store, cfg, z0, tape.constant(context.vector), sched, cfg.eval_start,
                       noise)
      .value();
}

}  // namespace mealrec::tcd
