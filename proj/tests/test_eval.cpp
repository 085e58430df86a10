#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mealrec/eval.hpp"
#include "mealrec/training.hpp"
#include "oracles.hpp"
#include "support.hpp"
#include "world.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace mealrec;
using eval::EvalOptions;

TEST_CASE("item scores") {
  Mat x(1, 2);
  x << 1, 2;
  Mat items(4, 2);
  items << 9, 9, 1, 0, 0, 1, 1, 1;  // row 0 is padding
  CHECK(eval::score_items(x, items) == std::vector<double>{1, 2, 3});
  CHECK(eval::score_items(Mat::Zero(1, 2), items) == std::vector<double>{0, 0, 0});
  Mat eye = Mat::Zero(4, 3);
  eye.bottomRows(3) = Mat::Identity(3, 3);
  Mat v(1, 3);
  v << 0.5, -1, 4;
  CHECK(eval::score_items(v, eye) == std::vector<double>{0.5, -1, 4});
  CHECK_THROWS_AS(eval::score_items(v, items), std::invalid_argument);
}

TEST_CASE("ranks and top-k metrics") {
  std::vector<double> scores(30);
  std::iota(scores.rbegin(), scores.rend(), 0.0);  // index 0 scores highest
  const int ks[] = {10, 20};
  auto m = eval::topk_metrics(scores, 0, ks);
  CHECK(m[0].hit == 1.0);
  CHECK(m[0].ndcg == 1.0);
  m = eval::topk_metrics(scores, 3, ks);
  CHECK(eval::target_rank(scores, 3) == 4);
  CHECK(m[0].ndcg == doctest::Approx(1.0 / std::log2(5.0)));
  CHECK(m[0].ndcg == doctest::Approx(0.4307).epsilon(1e-4));
  m = eval::topk_metrics(scores, 14, ks);
  CHECK(m[0].hit == 0.0);
  CHECK(m[0].ndcg == 0.0);
  CHECK(m[1].hit == 1.0);
  CHECK(m[1].ndcg == 0.25);

  const std::vector<double> tied{1.0, 5.0, 5.0, 5.0};
  CHECK(eval::target_rank(tied, 1) == 1);
  CHECK(eval::target_rank(tied, 3) == 3);
  CHECK_THROWS_AS(eval::target_rank(tied, 4), std::out_of_range);
}

TEST_CASE("report invariants and order independence") {
  Rng rng(3);
  std::vector<Example> examples;
  const int n = 40;
  std::uniform_int_distribution<int> item(1, n);
  for (std::size_t u = 0; u < 300; ++u) examples.push_back({{item(rng), item(rng)}, item(rng), u});
  std::vector<std::vector<double>> table(examples.size());
  for (auto& row : table) {
    row.resize(n);
    for (double& s : row) s = std::uniform_real_distribution<double>(0, 1)(rng);
  }
  eval::Scorer scorer = [&](std::span<const Example> batch, std::vector<std::vector<double>>& scores) {
    for (std::size_t i = 0; i < batch.size(); ++i) scores[i] = table[batch[i].user];
  };
  EvalOptions opt;
  opt.ks = {5, 10, 20};
  opt.batch_size = 16;
  const auto base = eval::evaluate_examples(examples, scorer, opt, "test");
  CHECK(base.users == 300);
  for (std::size_t j = 0; j < opt.ks.size(); ++j) {
    CHECK(base.ndcg[j] <= base.hit[j]);
    if (j > 0) {
      CHECK(base.hit[j] >= base.hit[j - 1]);
      CHECK(base.ndcg[j] >= base.ndcg[j - 1]);
    }
  }
  auto shuffled = examples;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  opt.batch_size = 5;
  const auto other = eval::evaluate_examples(shuffled, scorer, opt, "test");
  for (std::size_t j = 0; j < opt.ks.size(); ++j) {
    CHECK(std::abs(other.hit[j] - base.hit[j]) <= 1e-12);
    CHECK(std::abs(other.ndcg[j] - base.ndcg[j]) <= 1e-12);
  }
  CHECK_THROWS_AS(base.hr_at(50), std::out_of_range);
  const auto j = eval::to_json(base);
  CHECK(j["metrics"]["HR@10"].get<double>() == base.hr_at(10));
  CHECK(j["users"].get<std::size_t>() == 300);
}

TEST_CASE("independent random scores give HR@k close to k over candidate count") {
  const int n = 60;
  Rng rng(4);
  std::uniform_int_distribution<int> item(1, n);
  std::vector<Example> examples;
  for (std::size_t u = 0; u < 4000; ++u) {
    Example ex{{}, item(rng), u};
    for (int h = 0; h < 5; ++h) ex.history.push_back(item(rng));
    examples.push_back(ex);
  }
  eval::Scorer scorer = [&](std::span<const Example> batch, std::vector<std::vector<double>>& scores) {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      scores[i].resize(n);
      for (double& s : scores[i]) s = std::uniform_real_distribution<double>(0, 1)(rng);
    }
  };
  EvalOptions opt;
  for (bool mask : {false, true}) {
    opt.mask_history = mask;
    const auto report = eval::evaluate_examples(examples, scorer, opt, "test");
    double expected = 0.0, var = 0.0;
    for (const auto& ex : examples) {
      int candidates = n;
      if (mask) {
        std::vector<int> h = ex.history;
        std::sort(h.begin(), h.end());
        h.erase(std::unique(h.begin(), h.end()), h.end());
        candidates -= static_cast<int>(h.size()) - static_cast<int>(std::count(h.begin(), h.end(), ex.target));
      }
      const double p = std::min(1.0, 10.0 / candidates);
      expected += p;
      var += p * (1 - p);
    }
    const double users = static_cast<double>(examples.size());
    expected /= users;
    const double se = std::sqrt(var) / users;
    INFO("mask ", mask, " HR@10 ", report.hr_at(10), " expected ", expected);
    CHECK(std::abs(report.hr_at(10) - expected) < 3.0 * se);
  }
}

TEST_CASE("model evaluation matches the reference evaluator") {
  auto cfg = testing::tiny_config();
  cfg.data.synth.users = 20;
  cfg.data.synth.items = 50;
  cfg.data.synth.clusters = 5;
  cfg.data.core = 1;
  const auto world = testing::make_world(cfg, 5);
  REQUIRE(world.dataset.users.size() == 20);
  REQUIRE(world.dataset.num_items() <= 50);
  Model model(world.model(), 6);
  const auto sched = training::make_schedule(cfg.train);
  for (auto split : {eval::Split::validation, eval::Split::test}) {
    for (bool mask : {true, false}) {
      EvalOptions opt;
      opt.ks = {1, 5, 10, 20};
      opt.mask_history = mask;
      opt.batch_size = 6;
      opt.seed = 17;
      const auto report = eval::evaluate(model, world.dataset, world.features, sched, cfg.train.gamma, opt, split);
      const auto ref = testing::reference_evaluate(model, world.dataset, world.features, sched, cfg.train.gamma, opt, split);
      CHECK(report.users == ref.ranks.size());
      for (std::size_t j = 0; j < opt.ks.size(); ++j) {
        CHECK(std::abs(report.hit[j] - ref.hit[j]) <= 1e-12);
        CHECK(std::abs(report.ndcg[j] - ref.ndcg[j]) <= 1e-12);
      }
      // Rank by rank: a single-user evaluation at k = rank hits and at rank - 1 misses.
      const auto examples = eval::split_examples(world.dataset, split);
      for (std::size_t u = 0; u < examples.size(); ++u) {
        EvalOptions one = opt;
        const int rank = ref.ranks[u];
        one.ks = {rank, std::max(rank - 1, 1)};
        eval::Scorer scorer = [&](std::span<const Example> batch, std::vector<std::vector<double>>& scores) {
          const Batch b = make_batch(batch, world.features, world.dataset.max_len, cfg.train.gamma);
          Rng stream = make_stream(opt.seed, "eval-chain", batch[0].user);
          const auto rep = model.infer(b, sched, [&](int, Eigen::Index r, Eigen::Index c) { return gaussian(r, c, stream); });
          scores[0] = eval::score_items(rep.preference, model.item_embeddings());
        };
        const auto r = eval::evaluate_examples(std::span(examples).subspan(u, 1), scorer, one, "x");
        CHECK(r.hit[0] == 1.0);
        if (rank > 1) CHECK(r.hit[1] == 0.0);
      }
    }
  }
}

TEST_CASE("a target embedding aligned with the preference ranks first") {
  const std::vector<data::InteractionRecord> recs{{"u", "a", 1}, {"u", "a", 2}, {"u", "b", 3}};
  const auto ds = data::leave_one_out_split(recs, 4);
  auto cfg = testing::tiny_config();
  data::FeatureStore store({"a", "b"}, cfg.data.synth.frames, Mat::Ones(2, cfg.data.synth.visual_dim),
                           Mat::Ones(2 * cfg.data.synth.frames, cfg.data.synth.visual_dim),
                           Mat::Ones(2, cfg.data.synth.text_dim));
  const auto features = data::align_features(store, ds);
  Model model(config::model_config(cfg, ds, store), 3);
  const auto sched = training::make_schedule(cfg.train);
  EvalOptions opt;
  opt.mask_history = false;
  // History is item a (index 1); item b (index 2) never enters the forward pass.
  const Batch b = make_batch(eval::split_examples(ds, eval::Split::test), features, ds.max_len, cfg.train.gamma);
  Rng r = make_stream(opt.seed, "eval-chain", 0);
  const Mat p = model.infer(b, sched, [&](int, Eigen::Index rows, Eigen::Index cols) { return gaussian(rows, cols, r); })
                    .preference;
  Mat& items = model.params().get("backbone.item_embedding").value;
  const double margin = std::abs(items.row(1).dot(p.row(0))) + 1.0;
  items.row(2) = p.row(0) * (margin / p.squaredNorm());
  const auto report = eval::evaluate(model, ds, features, sched, cfg.train.gamma, opt, eval::Split::test);
  CHECK(report.users == 1);
  CHECK(report.hr_at(10) == 1.0);
  CHECK(report.ndcg_at(10) == 1.0);
}

TEST_CASE("popularity baseline ranks by training counts") {
  std::vector<data::InteractionRecord> recs;
  std::int64_t t = 0;
  // Item "p" dominates training prefixes; each user's test target is "p" or "q".
  for (int u = 0; u < 5; ++u) {
    const std::string id = "u" + std::to_string(u);
    recs.push_back({id, "p", t++});
    recs.push_back({id, "r" + std::to_string(u), t++});
    recs.push_back({id, "s", t++});
    recs.push_back({id, u < 3 ? "p" : "q", t++});
  }
  const auto ds = data::leave_one_out_split(recs, 5);
  EvalOptions opt;
  opt.mask_history = false;
  opt.ks = {1, 10};
  const auto report = eval::popularity_baseline(ds, opt, eval::Split::test);
  CHECK(report.hr_at(1) == doctest::Approx(3.0 / 5.0));
}
