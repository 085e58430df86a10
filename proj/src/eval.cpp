#include "mealrec/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mealrec::eval {

std::string to_string(Split s) { return s == Split::validation ? "validation" : "test"; }

namespace {

// Neumaier compensated summation.
struct CompensatedSum {
  double sum = 0.0;
  double carry = 0.0;

  void add(double x) {
    const double t = sum + x;
    if (std::abs(sum) >= std::abs(x)) carry += (sum - t) + x;
    else carry += (x - t) + sum;
    sum = t;
  }
  double value() const { return sum + carry; }
};

std::size_t index_of(const std::vector<int>& ks, int k) {
  auto it = std::find(ks.begin(), ks.end(), k);
  if (it == ks.end()) throw std::out_of_range("report has no metrics at k=" + std::to_string(k));
  return static_cast<std::size_t>(it - ks.begin());
}

}  // namespace

double EvalReport::hr_at(int k) const { return hit[index_of(ks, k)]; }
double EvalReport::ndcg_at(int k) const { return ndcg[index_of(ks, k)]; }

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json metrics = nlohmann::json::object();
  for (std::size_t i = 0; i < r.ks.size(); ++i) {
    metrics["HR@" + std::to_string(r.ks[i])] = r.hit[i];
    metrics["N@" + std::to_string(r.ks[i])] = r.ndcg[i];
  }
  return {{"split", r.split},
          {"users", r.users},
          {"metrics", metrics},
          {"condition",
           {{"variant", r.condition.variant},
            {"sigma", r.condition.sigma},
            {"lambda_T", r.condition.lambda_tcd},
            {"lambda_N", r.condition.lambda_npd},
            {"T", r.condition.steps},
            {"seed", r.condition.seed}}}};
}

std::vector<double> score_items(const Mat& x_hat, const Mat& items) {
  if (x_hat.rows() != 1 || x_hat.cols() != items.cols()) {
    throw std::invalid_argument("score_items: dimension mismatch");
  }
  if (items.rows() < 1) throw std::invalid_argument("score_items: empty item table");
  Eigen::VectorXd s = items.bottomRows(items.rows() - 1) * x_hat.row(0).transpose();
  return {s.data(), s.data() + s.size()};
}

int target_rank(std::span<const double> scores, std::size_t target) {
  if (target >= scores.size()) throw std::out_of_range("target outside score vector");
  const double ts = scores[target];
  int rank = 1;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (scores[j] > ts || (scores[j] == ts && j < target)) ++rank;
  }
  return rank;
}

std::vector<TopK> topk_metrics(std::span<const double> scores, std::size_t target, std::span<const int> ks) {
  const int rank = target_rank(scores, target);
  std::vector<TopK> out;
  for (int k : ks) {
    TopK m;
    m.k = k;
    if (rank <= k) {
      m.hit = 1.0;
      m.ndcg = 1.0 / std::log2(static_cast<double>(rank) + 1.0);
    }
    out.push_back(m);
  }
  return out;
}

std::vector<Example> split_examples(const data::SplitDataset& dataset, Split split) {
  std::vector<Example> out;
  out.reserve(dataset.users.size());
  for (std::size_t u = 0; u < dataset.users.size(); ++u) {
    const auto& us = dataset.users[u];
    Example ex;
    ex.user = u;
    ex.history = us.train;
    if (split == Split::test) {
      ex.history.push_back(us.valid);
      if (static_cast<int>(ex.history.size()) > dataset.max_len) ex.history.erase(ex.history.begin());
      ex.target = us.test;
    } else {
      ex.target = us.valid;
    }
    if (ex.history.empty()) continue;
    out.push_back(std::move(ex));
  }
  return out;
}

EvalReport evaluate_examples(std::span<const Example> examples, const Scorer& scorer,
                             const EvalOptions& options, const std::string& split_name) {
  EvalReport report;
  report.split = split_name;
  report.ks = options.ks;
  std::vector<CompensatedSum> hit(options.ks.size()), ndcg(options.ks.size());
  const std::size_t step = static_cast<std::size_t>(std::max(1, options.batch_size));
  std::vector<std::vector<double>> scores;
  for (std::size_t begin = 0; begin < examples.size(); begin += step) {
    auto batch = examples.subspan(begin, std::min(step, examples.size() - begin));
    scores.assign(batch.size(), {});
    scorer(batch, scores);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      auto& s = scores[i];
      const Example& ex = batch[i];
      if (options.mask_history) {
        for (int item : ex.history) {
          if (item != ex.target) s[static_cast<std::size_t>(item - 1)] = -std::numeric_limits<double>::infinity();
        }
      }
      auto m = topk_metrics(s, static_cast<std::size_t>(ex.target - 1), options.ks);
      for (std::size_t j = 0; j < m.size(); ++j) {
        hit[j].add(m[j].hit);
        ndcg[j].add(m[j].ndcg);
      }
    }
  }
  report.users = examples.size();
  const double n = examples.empty() ? 1.0 : static_cast<double>(examples.size());
  for (std::size_t j = 0; j < options.ks.size(); ++j) {
    report.hit.push_back(hit[j].value() / n);
    report.ndcg.push_back(ndcg[j].value() / n);
  }
  return report;
}

tcd::NoiseFn user_noise(std::uint64_t seed, std::span<const Example> batch, std::vector<Rng>& streams) {
  streams.clear();
  for (const Example& ex : batch) streams.push_back(make_stream(seed, "eval-chain", ex.user));
  return [&streams](int g, Eigen::Index r, Eigen::Index c) {
    return gaussian(r, c, streams[static_cast<std::size_t>(g)]);
  };
}

EvalReport evaluate(Model& model, const data::SplitDataset& dataset, const data::FeatureTable& features,
                    const diffusion::Schedule& sched, double gamma, const EvalOptions& options, Split split) {
  const auto examples = split_examples(dataset, split);
  Scorer scorer = [&](std::span<const Example> batch, std::vector<std::vector<double>>& scores) {
    Batch b = make_batch(batch, features, dataset.max_len, gamma);
    std::vector<Rng> streams;
    Representation rep = model.infer(b, sched, user_noise(options.seed, batch, streams));
    const Mat& items = model.item_embeddings();
    Mat all = rep.preference * items.bottomRows(items.rows() - 1).transpose();
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto row = all.row(static_cast<Eigen::Index>(i));
      scores[i].assign(row.data(), row.data() + row.size());
    }
  };
  return evaluate_examples(examples, scorer, options, to_string(split));
}

EvalReport popularity_baseline(const data::SplitDataset& dataset, const EvalOptions& options, Split split) {
  std::vector<double> counts(static_cast<std::size_t>(dataset.num_items()), 0.0);
  for (const auto& u : dataset.users) {
    for (int item : u.train) counts[static_cast<std::size_t>(item - 1)] += 1.0;
  }
  const auto examples = split_examples(dataset, split);
  Scorer scorer = [&](std::span<const Example> batch, std::vector<std::vector<double>>& scores) {
    for (std::size_t i = 0; i < batch.size(); ++i) scores[i] = counts;
  };
  return evaluate_examples(examples, scorer, options, to_string(split));
}

}  // namespace mealrec::eval
