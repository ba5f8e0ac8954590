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
#include "ttr/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "ttr/error.hpp"
#include "ttr/random.hpp"

namespace ttr {

void SynthConfig::validate() const {
  require(n_users >= 1, ErrorCode::kConfigInvalid, "n_users must be >= 1");
  require(n_stores >= 1, ErrorCode::kConfigInvalid, "n_stores must be >= 1");
  require(n_clusters >= 1, ErrorCode::kConfigInvalid, "n_clusters must be >= 1");
  require(days >= 1, ErrorCode::kConfigInvalid, "days must be >= 1");
  require(n_clusters <= n_stores, ErrorCode::kConfigInvalid, "n_clusters must be <= n_stores");
  require(zipf_exponent >= 0.0 && std::isfinite(zipf_exponent), ErrorCode::kConfigInvalid,
          "zipf_exponent must be >= 0");
  require(orders_per_user_mean >= 0.0 && std::isfinite(orders_per_user_mean),
          ErrorCode::kConfigInvalid, "orders_per_user_mean must be >= 0");
  require(user_sample_fraction > 0.0 && user_sample_fraction <= 1.0, ErrorCode::kConfigInvalid,
          "user_sample_fraction must be in (0, 1]");
  require(noise >= 0.0 && noise <= 1.0, ErrorCode::kConfigInvalid, "noise must be in [0, 1]");
}

namespace {

constexpr std::uint64_t kLayoutStream = 0;
constexpr std::uint64_t kUserStream = 1;

Rng user_rng(const SynthConfig& config, std::size_t user) {
  return Rng(mix_seed(mix_seed(config.seed, kUserStream), user));
}

}  // namespace

SynthWorld build_world(const SynthConfig& config) {
  config.validate();
  SynthWorld world;
  std::vector<std::size_t> perm(config.n_stores);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng layout(mix_seed(config.seed, kLayoutStream));
  layout.shuffle(std::span<std::size_t>(perm));

  world.store_cluster.resize(config.n_stores);
  world.store_weight.resize(config.n_stores);
  world.clusters.resize(config.n_clusters);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    const std::size_t cluster = i % config.n_clusters;
    world.store_cluster[perm[i]] = cluster;
    world.clusters[cluster].push_back(perm[i]);
  }
  for (const auto& members : world.clusters) {
    double total = 0.0;
    for (std::size_t r = 0; r < members.size(); ++r) {
      total += std::pow(static_cast<double>(r + 1), -config.zipf_exponent);
    }
    for (std::size_t r = 0; r < members.size(); ++r) {
      world.store_weight[members[r]] =
          std::pow(static_cast<double>(r + 1), -config.zipf_exponent) / total;
    }
  }

  world.user_cluster.resize(config.n_users);
  for (std::size_t u = 0; u < config.n_users; ++u) {
    Rng rng = user_rng(config, u);
    world.user_cluster[u] = static_cast<std::size_t>(rng.below(config.n_clusters));
  }
  return world;
}

std::vector<double> expected_store_marginals(const SynthConfig& config,
                                             const SynthWorld& world) {
  std::vector<double> p(config.n_stores);
  const double home = (1.0 - config.noise) / static_cast<double>(config.n_clusters);
  const double uniform = config.noise / static_cast<double>(config.n_stores);
  for (std::size_t s = 0; s < config.n_stores; ++s) p[s] = home * world.store_weight[s] + uniform;
  return p;
}

std::vector<InteractionRecord> generate(const SynthConfig& config) {
  const SynthWorld world = build_world(config);

  std::vector<std::vector<double>> cumulative(config.n_clusters);
  for (std::size_t c = 0; c < config.n_clusters; ++c) {
    double acc = 0.0;
    for (auto s : world.clusters[c]) {
      acc += world.store_weight[s];
      cumulative[c].push_back(acc);
    }
  }

  const auto horizon = static_cast<std::uint64_t>(config.days) *
                       static_cast<std::uint64_t>(kSecondsPerDay);
  std::vector<InteractionRecord> records;
  for (std::size_t u = 0; u < config.n_users; ++u) {
    Rng rng = user_rng(config, u);
    const auto cluster = static_cast<std::size_t>(rng.below(config.n_clusters));
    const bool sampled = rng.bernoulli(config.user_sample_fraction);
    const std::uint64_t orders = rng.poisson(config.orders_per_user_mean);
    if (!sampled) continue;
    const std::string user_id = "u" + std::to_string(u);
    const auto& cdf = cumulative[cluster];
    for (std::uint64_t o = 0; o < orders; ++o) {
      std::size_t store;
      if (rng.bernoulli(config.noise)) {
        store = static_cast<std::size_t>(rng.below(config.n_stores));
      } else {
        const double x = rng.uniform() * cdf.back();
        auto it = std::upper_bound(cdf.begin(), cdf.end(), x);
        if (it == cdf.end()) --it;
        store = world.clusters[cluster][static_cast<std::size_t>(it - cdf.begin())];
      }
      const auto ts = static_cast<Timestamp>(rng.below(horizon));
      records.push_back({user_id, "s" + std::to_string(store), ts, std::nullopt});
    }
  }
  std::stable_sort(records.begin(), records.end(),
                   [](const InteractionRecord& a, const InteractionRecord& b) {
                     return a.timestamp < b.timestamp;
                   });
  return records;
}

}  // namespace ttr
