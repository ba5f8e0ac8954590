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
#include "ttr/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <queue>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "ttr/error.hpp"
#include "ttr/random.hpp"

namespace ttr {

namespace {

struct Scored {
  double score;
  std::size_t index;
};

// Strict ranking order: higher score first, then lower index.
struct RanksBefore {
  bool operator()(const Scored& a, const Scored& b) const {
    if (a.score != b.score) return a.score > b.score;
    return a.index < b.index;
  }
};

std::vector<std::size_t> sorted_set(std::span<const std::size_t> values) {
  std::vector<std::size_t> out(values.begin(), values.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<std::size_t> checked_relevant(std::span<const std::size_t> recommended,
                                          std::span<const std::size_t> relevant,
                                          std::size_t k) {
  require(!relevant.empty(), ErrorCode::kEmptyRelevantSet, "relevant set is empty");
  require(k >= 1, ErrorCode::kInvalidArgument, "k must be >= 1");
  require(recommended.size() >= k, ErrorCode::kInvalidArgument,
          fmt::format("{} recommendations for k={}", recommended.size(), k));
  return sorted_set(relevant);
}

bool contains(const std::vector<std::size_t>& sorted, std::size_t value) {
  return std::binary_search(sorted.begin(), sorted.end(), value);
}

}  // namespace

std::vector<std::size_t> top_k_scores(std::span<const double> scores, std::size_t k) {
  require(k >= 1, ErrorCode::kInvalidArgument, "k must be >= 1");
  require(k <= scores.size(), ErrorCode::kKTooLarge,
          fmt::format("k={} exceeds {} items", k, scores.size()));
  // Max-heap under RanksBefore keeps the worst retained item on top.
  std::priority_queue<Scored, std::vector<Scored>, RanksBefore> heap;
  const RanksBefore before;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const Scored item{scores[i], i};
    if (heap.size() < k) {
      heap.push(item);
    } else if (before(item, heap.top())) {
      heap.pop();
      heap.push(item);
    }
  }
  std::vector<std::size_t> out(heap.size());
  for (std::size_t i = heap.size(); i-- > 0;) {
    out[i] = heap.top().index;
    heap.pop();
  }
  return out;
}

std::vector<std::size_t> top_k(const Vector& query, const RowMatrix& items, std::size_t k) {
  require(query.size() == items.cols(), ErrorCode::kDimensionMismatch, "top_k dims");
  const Vector scores = items * query;
  return top_k_scores(std::span<const double>(scores.data(), scores.size()), k);
}

double hit_rate_at_k(std::span<const std::size_t> recommended,
                     std::span<const std::size_t> relevant, std::size_t k) {
  const auto rel = checked_relevant(recommended, relevant, k);
  std::size_t hits = 0;
  for (std::size_t p = 0; p < k; ++p) hits += contains(rel, recommended[p]) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(rel.size());
}

double ndcg_at_k(std::span<const std::size_t> recommended,
                 std::span<const std::size_t> relevant, std::size_t k) {
  const auto rel = checked_relevant(recommended, relevant, k);
  double dcg = 0.0;
  for (std::size_t p = 0; p < k; ++p) {
    if (contains(rel, recommended[p])) dcg += 1.0 / std::log2(static_cast<double>(p) + 2.0);
  }
  double idcg = 0.0;
  for (std::size_t p = 0; p < std::min(k, rel.size()); ++p) {
    idcg += 1.0 / std::log2(static_cast<double>(p) + 2.0);
  }
  return dcg / idcg;
}

double map_at_k(std::span<const std::size_t> recommended,
                std::span<const std::size_t> relevant, std::size_t k) {
  const auto rel = checked_relevant(recommended, relevant, k);
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t p = 0; p < k; ++p) {
    if (contains(rel, recommended[p])) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(p + 1);
    }
  }
  return sum / static_cast<double>(std::min(k, rel.size()));
}

EvalSet build_eval_set(const std::vector<InteractionRecord>& validation,
                       const Vocabulary& users, const Vocabulary& stores) {
  EvalSet out;
  std::map<std::size_t, std::vector<std::size_t>> relevant;
  for (const auto& r : validation) {
    const auto user = users.find(r.user_id);
    if (!user) {
      ++out.unknown_user_records;
      continue;
    }
    const auto store = stores.find(r.store_id);
    if (!store) {
      ++out.unknown_store_records;
      continue;
    }
    relevant[*user].push_back(*store);
  }
  out.users.reserve(relevant.size());
  for (auto& [user, stores_seen] : relevant) {
    out.users.push_back({user, sorted_set(stores_seen)});
  }
  return out;
}

EvalSet sample_eval_set(const EvalSet& full, std::size_t max_users, std::uint64_t seed) {
  if (full.users.size() <= max_users) return full;
  std::vector<std::size_t> order(full.users.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  order.resize(max_users);
  std::sort(order.begin(), order.end());
  EvalSet out;
  out.unknown_user_records = full.unknown_user_records;
  out.unknown_store_records = full.unknown_store_records;
  for (auto i : order) out.users.push_back(full.users[i]);
  return out;
}

bool MetricsReport::same_metrics(const MetricsReport& other) const {
  return hit_rate == other.hit_rate && ndcg == other.ndcg && map == other.map &&
         n_users == other.n_users && n_skipped == other.n_skipped &&
         parameter_count == other.parameter_count && averaging == other.averaging;
}

namespace {

struct UserMetrics {
  bool evaluated = false;
  std::vector<double> hit_rate;
  std::vector<double> ndcg;
  std::vector<double> map;
};

}  // namespace

MetricsReport evaluate(const TwoTowerModel& model, const EvalSet& eval,
                       const std::vector<BagOfStores>& features, const EvalOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  require(!options.ks.empty(), ErrorCode::kInvalidArgument, "no k values to evaluate");
  std::vector<std::size_t> ks = options.ks;
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  require(ks.front() >= 1, ErrorCode::kInvalidArgument, "k must be >= 1");
  require(ks.back() <= model.n_stores(), ErrorCode::kKTooLarge,
          fmt::format("k={} exceeds {} stores", ks.back(), model.n_stores()));
  if (options.relevant_filter) {
    require(options.relevant_filter->size() == model.n_stores(), ErrorCode::kDimensionMismatch,
            "relevant filter size");
  }
  const std::size_t max_k = ks.back();
  const RowMatrix items = item_embeddings(model);

  std::vector<UserMetrics> per_user(eval.users.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t u = begin; u < end; ++u) {
      const auto& entry = eval.users[u];
      std::vector<std::size_t> relevant = entry.relevant;
      if (options.relevant_filter) {
        std::erase_if(relevant, [&](std::size_t s) {
          return s >= options.relevant_filter->size() || !(*options.relevant_filter)[s];
        });
      }
      if (relevant.empty()) continue;
      if (model.variant() == Variant::kDmf ? entry.user >= model.n_users()
                                           : entry.user >= features.size()) {
        continue;
      }
      const Vector query = query_for_user(model, entry.user, features);
      Vector scores = items * query;
      if (options.exclude_seen && options.seen && entry.user < options.seen->size()) {
        for (auto s : (*options.seen)[entry.user]) {
          if (s < static_cast<std::size_t>(scores.size())) {
            scores(static_cast<Eigen::Index>(s)) = -std::numeric_limits<double>::infinity();
          }
        }
      }
      const auto ranked =
          top_k_scores(std::span<const double>(scores.data(), scores.size()), max_k);
      auto& m = per_user[u];
      m.evaluated = true;
      for (auto k : ks) {
        m.hit_rate.push_back(hit_rate_at_k(ranked, relevant, k));
        m.ndcg.push_back(ndcg_at_k(ranked, relevant, k));
        m.map.push_back(map_at_k(ranked, relevant, k));
      }
    }
  };

  const std::size_t n = eval.users.size();
  const unsigned threads =
      static_cast<unsigned>(std::clamp<std::size_t>(options.threads, 1, std::max<std::size_t>(n, 1)));
  if (threads <= 1) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t begin = std::min(n, t * chunk);
      const std::size_t end = std::min(n, begin + chunk);
      pool.emplace_back(work, begin, end);
    }
    for (auto& th : pool) th.join();
  }

  MetricsReport report;
  std::vector<double> hr(ks.size(), 0.0), nd(ks.size(), 0.0), mp(ks.size(), 0.0);
  for (const auto& m : per_user) {
    if (!m.evaluated) {
      ++report.n_skipped;
      continue;
    }
    ++report.n_users;
    for (std::size_t i = 0; i < ks.size(); ++i) {
      hr[i] += m.hit_rate[i];
      nd[i] += m.ndcg[i];
      mp[i] += m.map[i];
    }
  }
  if (report.n_users == 0) fail(ErrorCode::kNoEvaluableUsers, "no evaluable users");
  const double denom = static_cast<double>(report.n_users);
  for (std::size_t i = 0; i < ks.size(); ++i) {
    report.hit_rate[ks[i]] = hr[i] / denom;
    report.ndcg[ks[i]] = nd[i] / denom;
    report.map[ks[i]] = mp[i] / denom;
  }
  report.parameter_count = parameter_count(model);
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

namespace {

nlohmann::json metric_map_to_json(const std::map<std::size_t, double>& m) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [k, v] : m) out[std::to_string(k)] = v;
  return out;
}

std::map<std::size_t, double> metric_map_from_json(const nlohmann::json& doc) {
  std::map<std::size_t, double> out;
  for (const auto& [key, value] : doc.items()) {
    out[static_cast<std::size_t>(std::stoull(key))] = value.get<double>();
  }
  return out;
}

}  // namespace

nlohmann::json to_json(const MetricsReport& report) {
  return {
      {"hit_rate", metric_map_to_json(report.hit_rate)},
      {"ndcg", metric_map_to_json(report.ndcg)},
      {"map", metric_map_to_json(report.map)},
      {"n_users", report.n_users},
      {"n_skipped", report.n_skipped},
      {"parameter_count", report.parameter_count},
      {"wall_clock_seconds", report.wall_clock_seconds},
      {"averaging", report.averaging},
  };
}

MetricsReport metrics_from_json(const nlohmann::json& doc) {
  try {
    MetricsReport r;
    r.hit_rate = metric_map_from_json(doc.at("hit_rate"));
    r.ndcg = metric_map_from_json(doc.at("ndcg"));
    r.map = metric_map_from_json(doc.at("map"));
    r.n_users = doc.at("n_users").get<std::size_t>();
    r.n_skipped = doc.at("n_skipped").get<std::size_t>();
    r.parameter_count = doc.at("parameter_count").get<std::uint64_t>();
    r.wall_clock_seconds = doc.value("wall_clock_seconds", 0.0);
    r.averaging = doc.value("averaging", std::string("users"));
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormatError, std::string("metrics report: ") + e.what());
  }
}

std::string metrics_csv_header(const MetricsReport& report) {
  std::string out = "model";
  for (const auto& [k, v] : report.hit_rate) out += fmt::format(",hit_rate@{}", k);
  for (const auto& [k, v] : report.ndcg) out += fmt::format(",ndcg@{}", k);
  for (const auto& [k, v] : report.map) out += fmt::format(",map@{}", k);
  out += ",n_users,parameter_count";
  return out;
}

std::string metrics_csv_row(const std::string& label, const MetricsReport& report) {
  std::string out = label;
  for (const auto& [k, v] : report.hit_rate) out += fmt::format(",{:.6f}", v);
  for (const auto& [k, v] : report.ndcg) out += fmt::format(",{:.6f}", v);
  for (const auto& [k, v] : report.map) out += fmt::format(",{:.6f}", v);
  out += fmt::format(",{},{}", report.n_users, report.parameter_count);
  return out;
}

}  // namespace ttr
