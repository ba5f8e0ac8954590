// Copyright 2026 The TTR Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "support/checks.hpp"
#include "support/error_matchers.hpp"
#include "support/oracles.hpp"
#include "ttr/evaluation.hpp"

namespace ttr {
namespace {

using Ids = std::vector<std::size_t>;

TEST(TopK, BasisRows) {
  const RowMatrix items = RowMatrix::Identity(4, 4);
  EXPECT_EQ(top_k(Vector::Unit(4, 2), items, 1), Ids{2});
}

TEST(TopK, TiesGoToLowerIndex) {
  const RowMatrix items = RowMatrix::Ones(6, 2);
  EXPECT_EQ(top_k(Vector::Ones(2), items, 3), (Ids{0, 1, 2}));
  const std::vector<double> s{1, 3, 3, 2, 3};
  EXPECT_EQ(top_k_scores(s, 4), (Ids{1, 2, 4, 3}));
}

TEST(TopK, RandomTableMatchesFullSort) {
  std::mt19937_64 rng(20);
  const RowMatrix items = RowMatrix::Random(20, 4);
  const Vector q = Vector::Random(4);
  const Vector s = items * q;
  EXPECT_EQ(top_k(q, items, 5), oracle::full_sort_top_k({s.data(), s.data() + s.size()}, 5));
}

TEST(TopK, Errors) {
  const RowMatrix items = RowMatrix::Ones(3, 2);
  EXPECT_TTR_ERROR(top_k(Vector::Ones(2), items, 4), ErrorCode::kKTooLarge);
  EXPECT_TTR_ERROR(top_k(Vector::Ones(2), items, 0), ErrorCode::kInvalidArgument);
  EXPECT_TTR_ERROR(top_k(Vector::Ones(3), items, 1), ErrorCode::kDimensionMismatch);
}

TEST(TopK, SweepAgainstFullSort) {
  const auto r = checks::top_k_sweep(3, 300);
  EXPECT_TRUE(r.ok()) << r.first_failure;
}

TEST(Metrics, HitRateExamples) {
  const Ids rec{4, 9, 7};
  EXPECT_DOUBLE_EQ(hit_rate_at_k(rec, Ids{4, 5}, 3), 0.5);
  EXPECT_DOUBLE_EQ(hit_rate_at_k(rec, Ids{7, 9}, 3), 1.0);
  EXPECT_DOUBLE_EQ(hit_rate_at_k(rec, Ids{1, 2}, 3), 0.0);
  EXPECT_DOUBLE_EQ(hit_rate_at_k(rec, Ids{7}, 2), 0.0);
}

TEST(Metrics, NdcgExamples) {
  const Ids rec{4, 9, 7, 1};
  EXPECT_DOUBLE_EQ(ndcg_at_k(rec, Ids{4}, 4), 1.0);
  EXPECT_DOUBLE_EQ(ndcg_at_k(rec, Ids{7}, 3), 0.5);
  EXPECT_DOUBLE_EQ(ndcg_at_k(rec, Ids{2}, 4), 0.0);
}

TEST(Metrics, MapExamples) {
  const Ids rec{4, 9, 7, 1};
  EXPECT_NEAR(map_at_k(rec, Ids{4, 7}, 3), (1.0 + 2.0 / 3.0) / 2.0, 1e-15);
  EXPECT_NEAR(map_at_k(rec, Ids{4, 7}, 3), 0.8333, 1e-4);
  EXPECT_DOUBLE_EQ(map_at_k(rec, Ids{9, 4}, 4), 1.0);
  EXPECT_DOUBLE_EQ(map_at_k(rec, Ids{3}, 4), 0.0);
}

TEST(Metrics, Errors) {
  const Ids rec{1, 2};
  EXPECT_TTR_ERROR(hit_rate_at_k(rec, Ids{}, 1), ErrorCode::kEmptyRelevantSet);
  EXPECT_TTR_ERROR(ndcg_at_k(rec, Ids{}, 1), ErrorCode::kEmptyRelevantSet);
  EXPECT_TTR_ERROR(map_at_k(rec, Ids{}, 1), ErrorCode::kEmptyRelevantSet);
  EXPECT_TTR_ERROR(hit_rate_at_k(rec, Ids{1}, 3), ErrorCode::kInvalidArgument);
}

TEST(Metrics, SweepAgainstBruteForce) {
  const auto r = checks::metric_sweep(4, 1000, 1e-12);
  EXPECT_TRUE(r.ok()) << r.first_failure << " worst " << r.worst;
}

// Small fixture: n users with random bags and random validation stores.
struct World {
  Vocabulary users;
  Vocabulary stores;
  std::vector<InteractionRecord> validation;
  std::vector<BagOfStores> features;
};

World make_world(std::size_t n_users, std::size_t n_stores, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  World w;
  for (std::size_t u = 0; u < n_users; ++u) w.users.add("u" + std::to_string(u));
  for (std::size_t s = 0; s < n_stores; ++s) w.stores.add("s" + std::to_string(s));
  w.features.resize(n_users);
  for (std::size_t u = 0; u < n_users; ++u) {
    for (int i = 0; i < 3; ++i) w.features[u].store_indices.push_back(rng() % n_stores);
    const std::size_t n_val = 1 + rng() % 3;
    for (std::size_t i = 0; i < n_val; ++i) {
      w.validation.push_back({"u" + std::to_string(u), "s" + std::to_string(rng() % n_stores),
                              static_cast<Timestamp>(i), std::nullopt});
    }
  }
  return w;
}

ModelConfig bow_config() {
  ModelConfig c;
  c.variant = Variant::kBow;
  c.dim = 4;
  c.seed = 3;
  return c;
}

TEST(Evaluate, SingleUserRankedFirst) {
  Vocabulary users(std::vector<std::string>{"u"});
  Vocabulary stores(std::vector<std::string>{"a", "b", "c"});
  const std::vector<InteractionRecord> val{{"u", "b", 1, std::nullopt}};
  TwoTowerModel m(bow_config(), 1, 3);
  const std::vector<double> up{1, 0, 0, 0}, zero{0, 0, 0, 0};
  for (std::size_t i = 0; i < 3; ++i) m.item_table()->set_row(i, i == 1 ? up : zero);
  m.query_store_table()->set_row(0, up);
  const std::vector<BagOfStores> features{{{0}, 0}};
  EvalOptions opts;
  opts.ks = {1, 2, 3};
  const auto r = evaluate(m, build_eval_set(val, users, stores), features, opts);
  EXPECT_EQ(r.n_users, 1u);
  for (const auto& [k, hr] : r.hit_rate) EXPECT_EQ(hr, 1.0) << k;
}

TEST(Evaluate, ZeroModelMatchesTieBreakOracle) {
  const World w = make_world(30, 12, 5);
  ModelConfig c = bow_config();
  c.init_scale = 0.0;
  const TwoTowerModel m(c, 30, 12);
  EvalOptions opts;
  opts.ks = {1, 3, 12};
  const EvalSet eval = build_eval_set(w.validation, w.users, w.stores);
  const auto r = evaluate(m, eval, w.features, opts);

  for (std::size_t k : opts.ks) {
    Ids prefix(12);
    std::iota(prefix.begin(), prefix.end(), std::size_t{0});
    double hr = 0.0, nd = 0.0, ap = 0.0;
    for (const auto& u : eval.users) {
      hr += oracle::hit_rate(prefix, u.relevant, k);
      nd += oracle::ndcg(prefix, u.relevant, k);
      ap += oracle::average_precision(prefix, u.relevant, k);
    }
    const double n = static_cast<double>(eval.users.size());
    EXPECT_NEAR(r.hit_rate.at(k), hr / n, 1e-12);
    EXPECT_NEAR(r.ndcg.at(k), nd / n, 1e-12);
    EXPECT_NEAR(r.map.at(k), ap / n, 1e-12);
  }
}

TEST(Evaluate, ReportHasExactlyRequestedKs) {
  const World w = make_world(10, 30, 6);
  EvalOptions opts;
  opts.ks = {5, 20};
  const auto r = evaluate(TwoTowerModel(bow_config(), 10, 30),
                          build_eval_set(w.validation, w.users, w.stores), w.features, opts);
  EXPECT_EQ(r.hit_rate.size(), 2u);
  EXPECT_TRUE(r.hit_rate.count(5) && r.hit_rate.count(20));
  EXPECT_EQ(r.ndcg.size(), 2u);
  EXPECT_EQ(r.map.size(), 2u);
  EXPECT_EQ(r.parameter_count, 2u * 30u * 4u);
}

TEST(Evaluate, MonotoneInKAndFullRecallAtS) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const World w = make_world(40, 25, seed);
    EvalOptions opts;
    opts.ks = {1, 2, 5, 10, 24, 25};
    ModelConfig c = bow_config();
    c.seed = seed;
    const auto r = evaluate(TwoTowerModel(c, 40, 25), build_eval_set(w.validation, w.users, w.stores),
                            w.features, opts);
    double prev = 0.0;
    for (const auto& [k, hr] : r.hit_rate) {
      EXPECT_GE(hr, prev);
      EXPECT_GE(r.ndcg.at(k), 0.0);
      EXPECT_LE(r.ndcg.at(k), 1.0);
      EXPECT_GE(r.map.at(k), 0.0);
      EXPECT_LE(r.map.at(k), 1.0);
      prev = hr;
    }
    EXPECT_EQ(r.hit_rate.at(25), 1.0);
  }
}

TEST(Evaluate, ThreadCountDoesNotChangeResults) {
  const World w = make_world(200, 50, 9);
  const EvalSet eval = build_eval_set(w.validation, w.users, w.stores);
  const TwoTowerModel m(bow_config(), 200, 50);
  EvalOptions one, four;
  one.ks = four.ks = {5, 20, 50};
  four.threads = 4;
  EXPECT_TRUE(evaluate(m, eval, w.features, one).same_metrics(evaluate(m, eval, w.features, four)));
}

TEST(Evaluate, Errors) {
  const World w = make_world(5, 10, 1);
  const EvalSet eval = build_eval_set(w.validation, w.users, w.stores);
  const TwoTowerModel m(bow_config(), 5, 10);
  EvalOptions opts;
  opts.ks = {11};
  EXPECT_TTR_ERROR(evaluate(m, eval, w.features, opts), ErrorCode::kKTooLarge);
  opts.ks = {5};
  EXPECT_TTR_ERROR(evaluate(m, EvalSet{}, w.features, opts), ErrorCode::kNoEvaluableUsers);
}

TEST(Evaluate, ExcludeSeenRemovesTrainingStores) {
  Vocabulary users(std::vector<std::string>{"u"});
  Vocabulary stores(std::vector<std::string>{"a", "b", "c"});
  const std::vector<InteractionRecord> val{{"u", "c", 1, std::nullopt}};
  ModelConfig c = bow_config();
  c.init_scale = 0.0;
  const TwoTowerModel m(c, 1, 3);
  const std::vector<BagOfStores> features{{{0, 1}, 0}};
  const std::vector<std::vector<std::size_t>> seen{{0, 1}};
  EvalOptions opts;
  opts.ks = {1};
  const EvalSet eval = build_eval_set(val, users, stores);
  EXPECT_EQ(evaluate(m, eval, features, opts).hit_rate.at(1), 0.0);
  opts.exclude_seen = true;
  opts.seen = &seen;
  EXPECT_EQ(evaluate(m, eval, features, opts).hit_rate.at(1), 1.0);
}

TEST(EvalSet, CountsUnknownRecords) {
  Vocabulary users(std::vector<std::string>{"u", "v"});
  Vocabulary stores(std::vector<std::string>{"a"});
  const std::vector<InteractionRecord> val{{"u", "a", 1, std::nullopt},
                                           {"u", "a", 2, std::nullopt},
                                           {"x", "a", 3, std::nullopt},
                                           {"v", "zz", 4, std::nullopt}};
  const EvalSet e = build_eval_set(val, users, stores);
  ASSERT_EQ(e.users.size(), 1u);
  EXPECT_EQ(e.users[0].relevant, Ids{0});
  EXPECT_EQ(e.unknown_user_records, 1u);
  EXPECT_EQ(e.unknown_store_records, 1u);

  const World w = make_world(100, 10, 2);
  const EvalSet full = build_eval_set(w.validation, w.users, w.stores);
  const EvalSet s1 = sample_eval_set(full, 20, 7), s2 = sample_eval_set(full, 20, 7);
  ASSERT_EQ(s1.users.size(), 20u);
  for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(s1.users[i].user, s2.users[i].user);
  EXPECT_TRUE(std::is_sorted(s1.users.begin(), s1.users.end(),
                             [](const EvalUser& a, const EvalUser& b) { return a.user < b.user; }));
}

TEST(MetricsReport, JsonAndCsv) {
  MetricsReport r;
  r.hit_rate = {{5, 0.25}, {20, 0.5}};
  r.ndcg = {{5, 0.125}, {20, 0.3}};
  r.map = {{5, 0.1}, {20, 0.2}};
  r.n_users = 12;
  r.parameter_count = 3200;
  const MetricsReport back = metrics_from_json(to_json(r));
  EXPECT_TRUE(back.same_metrics(r));
  EXPECT_EQ(to_json(r)["averaging"], "users");
  EXPECT_EQ(metrics_csv_header(r),
            "model,hit_rate@5,hit_rate@20,ndcg@5,ndcg@20,map@5,map@20,n_users,parameter_count");
  EXPECT_EQ(metrics_csv_row("bow", r).rfind("bow,0.250000,0.500000,", 0), 0u);
}

}  // namespace
}  // namespace ttr
