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
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ttr/embedding.hpp"
#include "ttr/interactions.hpp"
#include "ttr/towers.hpp"

namespace ttr {

inline const std::vector<std::size_t> kDefaultHitRateKs{5, 20, 100, 200, 300, 400, 500};

// Indices of the k largest scores, best first. Ties go to the lower index.
std::vector<std::size_t> top_k_scores(std::span<const double> scores, std::size_t k);

// Exact maximum-inner-product top-k over every row of `items`.
std::vector<std::size_t> top_k(const Vector& query, const RowMatrix& items, std::size_t k);

// Binary-relevance ranking metrics over the first k recommendations.
// `relevant` is treated as a set and must be non-empty.
double hit_rate_at_k(std::span<const std::size_t> recommended,
                     std::span<const std::size_t> relevant, std::size_t k);
double ndcg_at_k(std::span<const std::size_t> recommended,
                 std::span<const std::size_t> relevant, std::size_t k);
double map_at_k(std::span<const std::size_t> recommended,
                std::span<const std::size_t> relevant, std::size_t k);

struct EvalUser {
  std::size_t user = 0;
  std::vector<std::size_t> relevant;  // distinct store indices, ascending
};

// Validation users with their relevant stores. Users or stores without a
// training-vocabulary entry cannot be scored and are only counted.
struct EvalSet {
  std::vector<EvalUser> users;  // ascending by user index
  std::size_t unknown_user_records = 0;
  std::size_t unknown_store_records = 0;
};

EvalSet build_eval_set(const std::vector<InteractionRecord>& validation,
                       const Vocabulary& users, const Vocabulary& stores);

// Deterministic subsample of at most `max_users` users, kept in user order.
EvalSet sample_eval_set(const EvalSet& full, std::size_t max_users, std::uint64_t seed);

struct EvalOptions {
  std::vector<std::size_t> ks = kDefaultHitRateKs;
  unsigned threads = 1;
  // Drop each user's training stores from the candidate list.
  bool exclude_seen = false;
  const std::vector<std::vector<std::size_t>>* seen = nullptr;  // per user index
  // When set, relevant sets keep only stores with relevant_filter[store].
  const std::vector<bool>* relevant_filter = nullptr;
};

struct MetricsReport {
  std::map<std::size_t, double> hit_rate;
  std::map<std::size_t, double> ndcg;
  std::map<std::size_t, double> map;
  std::size_t n_users = 0;
  std::size_t n_skipped = 0;
  std::uint64_t parameter_count = 0;
  double wall_clock_seconds = 0.0;
  std::string averaging = "users";

  // Equality of every metric and count; wall clock is ignored.
  bool same_metrics(const MetricsReport& other) const;
};

MetricsReport evaluate(const TwoTowerModel& model, const EvalSet& eval,
                       const std::vector<BagOfStores>& features, const EvalOptions& options);

nlohmann::json to_json(const MetricsReport& report);
MetricsReport metrics_from_json(const nlohmann::json& doc);

// Table-style CSV: "model,hit_rate@k...,ndcg@k...,map@k...,n_users,parameter_count".
std::string metrics_csv_header(const MetricsReport& report);
std::string metrics_csv_row(const std::string& label, const MetricsReport& report);

}  // namespace ttr
