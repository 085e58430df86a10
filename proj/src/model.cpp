#include "mealrec/model.hpp"

#include <algorithm>
#include <stdexcept>

namespace mealrec {

Variant parse_variant(const std::string& name) {
  if (name == "full") return Variant::full;
  if (name == "no_tcd") return Variant::no_tcd;
  if (name == "no_npd") return Variant::no_npd;
  if (name == "no_both") return Variant::no_both;
  throw std::invalid_argument("unknown variant '" + name + "'");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_tcd: return "no_tcd";
    case Variant::no_npd: return "no_npd";
    case Variant::no_both: return "no_both";
  }
  return "full";
}

Batch make_batch(std::span<const Example> examples, const data::FeatureTable& features, int max_len,
                 double gamma) {
  Batch b;
  b.size = static_cast<int>(examples.size());
  const int k = features.frames;
  for (const Example& ex : examples) b.length = std::max(b.length, static_cast<int>(ex.history.size()));
  b.length = std::min(b.length, max_len);
  b.item_ids.reserve(examples.size() * static_cast<std::size_t>(b.length));
  b.frames.resize(static_cast<Eigen::Index>(b.size) * k, features.global.cols());
  b.text.resize(b.size, features.text.cols());
  b.context.resize(b.size, features.global.cols());
  for (int i = 0; i < b.size; ++i) {
    const Example& ex = examples[static_cast<std::size_t>(i)];
    if (ex.history.empty()) throw std::invalid_argument("make_batch: empty history");
    auto padded = backbone::pad_left(ex.history, b.length);
    b.item_ids.insert(b.item_ids.end(), padded.begin(), padded.end());
    const int latest = ex.history.back();
    b.frames.middleRows(static_cast<Eigen::Index>(i) * k, k) =
        features.frames_rows.middleRows(static_cast<Eigen::Index>(latest) * k, k);
    b.text.row(i) = features.text.row(latest);
    const std::size_t n = std::min(ex.history.size(), static_cast<std::size_t>(max_len));
    Mat visuals(static_cast<Eigen::Index>(n), features.global.cols());
    for (std::size_t j = 0; j < n; ++j) {
      visuals.row(static_cast<Eigen::Index>(j)) = features.global.row(ex.history[ex.history.size() - n + j]);
    }
    b.context.row(i) = tcd::visual_context(visuals, gamma).vector;
    b.targets.push_back(ex.target);
    b.users.push_back(ex.user);
  }
  return b;
}

Model::Model(ModelConfig cfg, std::uint64_t init_seed)
    : cfg_(cfg), params_(std::make_unique<ParamStore>()),
      encoder_(std::make_unique<backbone::SelfAttentionEncoder>(cfg.backbone)) {
  Rng rng = make_stream(init_seed, "init");
  encoder_->register_params(*params_, rng);
  tcd::register_params(*params_, cfg_.tcd, rng);
  npd::register_params(*params_, cfg_.npd, rng);
  register_fusion(rng);
}

Model::Model(ModelConfig cfg, ParamStore params)
    : cfg_(cfg), params_(std::make_unique<ParamStore>(std::move(params))),
      encoder_(std::make_unique<backbone::SelfAttentionEncoder>(cfg.backbone)) {
  // Validate that the store matches the architecture by building a fresh one.
  Model reference(cfg, 0);
  if (reference.params().size() != params_->size()) {
    throw std::invalid_argument("parameter set does not match the model configuration");
  }
  for (std::size_t i = 0; i < params_->size(); ++i) {
    const Parameter& want = reference.params()[i];
    if (!params_->contains(want.name)) throw std::invalid_argument("missing parameter " + want.name);
    const Parameter& have = params_->get(want.name);
    if (have.value.rows() != want.value.rows() || have.value.cols() != want.value.cols()) {
      throw std::invalid_argument("parameter " + want.name + " has the wrong shape");
    }
  }
}

void Model::register_fusion(Rng& rng) {
  const int d = cfg_.backbone.dim;
  nn::add_linear(*params_, "fusion.hidden", 3 * d, d, rng);
  nn::add_linear(*params_, "fusion.out", d, d, rng);
}

ad::Var Model::fuse(ad::Tape& tape, ad::Var x0, ad::Var condition, const nn::Dropout& drop) {
  const int m = cfg_.npd.condition_tokens();
  const int k = cfg_.npd.frames;
  const int groups = static_cast<int>(x0.rows());
  // Mean of the K visual tokens and the trailing text token, per example.
  Mat pool = Mat::Zero(2, m);
  pool.block(0, 0, 1, k).setConstant(1.0 / k);
  pool(1, m - 1) = 1.0;
  ad::Var pooled = ad::group_map(condition, pool);
  std::vector<int> visual_rows(static_cast<std::size_t>(groups)), text_rows(static_cast<std::size_t>(groups));
  for (int g = 0; g < groups; ++g) {
    visual_rows[static_cast<std::size_t>(g)] = 2 * g;
    text_rows[static_cast<std::size_t>(g)] = 2 * g + 1;
  }
  const ad::Var parts[] = {x0, ad::rows(pooled, visual_rows), ad::rows(pooled, text_rows)};
  ad::Var h = ad::gelu(nn::linear(tape, *params_, "fusion.hidden", ad::concat_cols(parts)));
  return nn::linear(tape, *params_, "fusion.out", drop.apply(h));
}

TrainForward Model::forward_train(ad::Tape& tape, const Batch& batch, const diffusion::Schedule& sched,
                                  const DiffusionDraws& draws, double lambda_tcd, double lambda_npd,
                                  const nn::Dropout& drop) {
  if (lambda_tcd < 0.0 || lambda_npd < 0.0) throw std::invalid_argument("loss weights must be >= 0");
  TrainForward out;
  backbone::EncodedSequences enc = encoder_->encode(tape, *params_, batch.item_ids, batch.length, drop);
  ad::Var frames = tape.constant(batch.frames);
  ad::Var context = tape.constant(batch.context);
  ad::Var visual = frames;
  if (cfg_.uses_tcd()) {
    tcd::LossTerms terms = tcd::training_loss(tape, *params_, cfg_.tcd, frames, context, sched,
                                              draws.tcd_steps, draws.tcd_eps, drop);
    out.tcd = terms.loss;
    if (cfg_.tcd.train_refine_mode == tcd::RefineMode::one_step) {
      visual = terms.prediction;
    } else {
      if (draws.chain_rng == nullptr) throw std::invalid_argument("full_chain refinement needs a noise stream");
      Rng& rng = *draws.chain_rng;
      tcd::NoiseFn noise = [&rng](int, Eigen::Index r, Eigen::Index c) { return gaussian(r, c, rng); };
      visual = tcd::reverse_chain(tape, *params_, cfg_.tcd, terms.clean, context, sched,
                                  cfg_.tcd.eval_start, noise);
    }
  }
  ad::Var condition = npd::build_condition(tape, *params_, cfg_.npd, visual, tape.constant(batch.text));
  ad::Var preference;
  if (cfg_.uses_npd()) {
    npd::LossTerms terms = npd::training_loss(tape, *params_, cfg_.npd, enc.last, condition, sched,
                                              draws.npd_steps, draws.npd_eps, drop);
    out.npd = terms.loss;
    preference = terms.prediction;
  } else {
    preference = fuse(tape, enc.last, condition, drop);
  }
  if (cfg_.npd.residual) preference = ad::add(preference, enc.last);

  std::vector<int> item_rows(static_cast<std::size_t>(cfg_.backbone.num_items));
  std::vector<int> targets(batch.targets.size());
  for (std::size_t i = 0; i < item_rows.size(); ++i) item_rows[i] = static_cast<int>(i) + 1;
  for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = batch.targets[i] - 1;
  ad::Var items = ad::rows(encoder_->item_table(tape, *params_), std::move(item_rows));
  out.rec = ad::cross_entropy(ad::matmul_nt(preference, items), std::move(targets));

  std::vector<ad::Var> terms{out.rec};
  std::vector<double> weights{1.0};
  if (out.tcd.valid()) {
    terms.push_back(out.tcd);
    weights.push_back(lambda_tcd);
  }
  if (out.npd.valid()) {
    terms.push_back(out.npd);
    weights.push_back(lambda_npd);
  }
  out.total = ad::sum_scalars(terms, weights);
  return out;
}

Representation Model::infer(const Batch& batch, const diffusion::Schedule& sched, const tcd::NoiseFn& noise) {
  Representation rep;
  ad::Tape tape(false);
  backbone::EncodedSequences enc = encoder_->encode(tape, *params_, batch.item_ids, batch.length, nn::Dropout{});
  rep.x0 = enc.last.value();
  ad::Var frames = tape.constant(batch.frames);
  ad::Var visual = frames;
  if (cfg_.uses_tcd()) {
    ad::Var context = tape.constant(batch.context);
    ad::Var z0 = tcd::temporal_encode(tape, *params_, cfg_.tcd, frames);
    visual = tcd::reverse_chain(tape, *params_, cfg_.tcd, z0, context, sched, cfg_.tcd.eval_start, noise);
  }
  rep.frames = visual.value();
  ad::Var condition = npd::build_condition(tape, *params_, cfg_.npd, visual, tape.constant(batch.text));
  if (cfg_.uses_npd()) {
    rep.preference = npd::recover_preference(*params_, cfg_.npd, rep.x0, condition.value(), sched,
                                             cfg_.npd.eval_start, noise);
  } else {
    rep.preference = fuse(tape, enc.last, condition, nn::Dropout{}).value();
  }
  if (cfg_.npd.residual) rep.preference += rep.x0;
  return rep;
}

const Mat& Model::item_embeddings() const { return params_->get("backbone.item_embedding").value; }

}  // namespace mealrec
