#pragma once

// Small synthetic datasets and model configurations for end-to-end tests.

#include "mealrec/config.hpp"
#include "mealrec/data.hpp"

namespace mealrec::testing {

/// Shapes small enough for a model to train in seconds.
inline config::RunConfig tiny_config() {
  config::RunConfig c;
  c.data.synth.users = 40;
  c.data.synth.items = 30;
  c.data.synth.frames = 3;
  c.data.synth.visual_dim = 8;
  c.data.synth.text_dim = 4;
  c.data.synth.clusters = 3;
  c.data.synth.min_len = 6;
  c.data.synth.max_len = 9;
  c.backbone.dim = 8;
  c.backbone.max_len = 6;
  c.backbone.blocks = 1;
  c.backbone.heads = 2;
  c.backbone.dropout = 0.1;
  c.npd.blocks = 1;
  c.npd.heads = 2;
  c.tcd.heads = 1;
  c.train.steps = 3;
  c.train.epochs = 3;
  c.train.batch_size = 64;
  c.train.seed = 1;
  c.eval.batch_size = 7;
  return c;
}

struct World {
  config::RunConfig cfg;
  data::SplitDataset dataset;
  data::FeatureStore store;
  data::FeatureTable features;

  ModelConfig model() const { return config::model_config(cfg, dataset, store); }
};

inline World make_world(const config::RunConfig& cfg, std::uint64_t data_seed) {
  World w;
  w.cfg = cfg;
  auto synth = data::synth_generate(cfg.data.synth, data_seed);
  const auto core = data::four_core_filter(synth.records, cfg.data.core);
  w.dataset = data::leave_one_out_split(core, cfg.backbone.max_len);
  w.store = std::move(synth.store);
  w.features = data::align_features(w.store, w.dataset);
  return w;
}

}  // namespace mealrec::testing
