#pragma once

// Run configuration: a flat INI dialect over the sections data, backbone,
// tcd, npd, train, eval and experiment.
//
//   # comment
//   [train]
//   lambda_T = 0.1
//   eval.ks = 10, 20        # dotted keys work anywhere
//
// Unknown keys and malformed lines are rejected with their line number.

#include "mealrec/data.hpp"
#include "mealrec/eval.hpp"
#include "mealrec/model.hpp"
#include "mealrec/training.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace mealrec::config {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataSection {
  data::SynthConfig synth;
  int core = 4;
};

struct ExperimentSection {
  std::vector<std::string> variants{"full", "no_tcd", "no_npd", "no_both"};
  std::vector<double> sigmas{0.0, 0.1, 0.3, 0.5};
  std::vector<double> lambda_grid{0.01, 0.05, 0.1, 0.3, 0.5, 0.7, 0.9};
  std::vector<int> steps_grid{5, 10, 15, 20, 25};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  bool record_runtime = false;
};

struct RunConfig {
  DataSection data;
  backbone::EncoderConfig backbone;
  tcd::TcdConfig tcd;
  npd::NpdConfig npd;
  training::TrainConfig train;
  Variant variant = Variant::full;
  eval::EvalOptions eval;
  ExperimentSection experiment;
};

/// Applies `key = value` where key is `section.name`.
void set_value(RunConfig& cfg, const std::string& key, const std::string& value);

/// Parses a document on top of `base` (defaults when omitted).
RunConfig parse_config_text(const std::string& text, const RunConfig& base = {});
RunConfig parse_config(const std::filesystem::path& path, const RunConfig& base = {});

/// Canonical text of every key; parsing it reproduces the configuration.
std::string echo(const RunConfig& cfg);

/// Every recognised key, `section.name`.
std::vector<std::string> known_keys();

/// Model shape for a dataset: vocabulary and feature dimensions come from the
/// data, T and gamma from the training section, the variant from `cfg.variant`.
ModelConfig model_config(const RunConfig& cfg, const data::SplitDataset& dataset, const data::FeatureStore& store);

}  // namespace mealrec::config
