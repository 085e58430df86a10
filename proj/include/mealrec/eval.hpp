#pragma once

// Full-ranking leave-one-out evaluation with HR@k and NDCG@k.

#include "mealrec/data.hpp"
#include "mealrec/model.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace mealrec::eval {

enum class Split { validation, test };
std::string to_string(Split s);

struct EvalOptions {
  std::vector<int> ks{10, 20};
  bool mask_history = true;
  int batch_size = 256;
  std::uint64_t seed = 0;  // per-user chain noise is drawn from streams of this seed
};

/// Experiment condition a report belongs to.
struct Condition {
  std::string variant = "full";
  double sigma = 0.0;
  double lambda_tcd = 0.0;
  double lambda_npd = 0.0;
  int steps = 0;
  std::uint64_t seed = 0;
};

struct EvalReport {
  std::string split;
  std::size_t users = 0;
  std::vector<int> ks;
  std::vector<double> hit;   // HR@k, aligned with ks
  std::vector<double> ndcg;  // NDCG@k, aligned with ks
  Condition condition;

  double hr_at(int k) const;
  double ndcg_at(int k) const;
};

nlohmann::json to_json(const EvalReport& r);

struct TopK {
  int k = 0;
  double hit = 0.0;
  double ndcg = 0.0;
};

/// Scores for items 1..N (padding excluded): scores[i - 1] = x_hat . e_i.
/// `items` is the full (N+1) x d table including the padding row.
std::vector<double> score_items(const Mat& x_hat, const Mat& items);

/// 1-based rank of scores[target]; ties go to the lower index.
int target_rank(std::span<const double> scores, std::size_t target);

std::vector<TopK> topk_metrics(std::span<const double> scores, std::size_t target, std::span<const int> ks);

/// Inputs and target of every user for a split (train prefix for validation,
/// train prefix plus the validation item for test).
std::vector<Example> split_examples(const data::SplitDataset& dataset, Split split);

/// Writes the per-item scores (index i - 1 for item i) of a batch of examples.
using Scorer = std::function<void(std::span<const Example> batch, std::vector<std::vector<double>>& scores)>;

/// Averages topk metrics over `examples` in the given order, masking history
/// items when requested. Sums are compensated so the result does not depend
/// on user order beyond rounding.
EvalReport evaluate_examples(std::span<const Example> examples, const Scorer& scorer,
                             const EvalOptions& options, const std::string& split_name);

EvalReport evaluate(Model& model, const data::SplitDataset& dataset, const data::FeatureTable& features,
                    const diffusion::Schedule& sched, double gamma, const EvalOptions& options, Split split);

/// Ranks every item by its training-prefix interaction count.
EvalReport popularity_baseline(const data::SplitDataset& dataset, const EvalOptions& options, Split split);

/// Noise source keyed by user index, independent of batching and order.
tcd::NoiseFn user_noise(std::uint64_t seed, std::span<const Example> batch, std::vector<Rng>& streams);

}  // namespace mealrec::eval
