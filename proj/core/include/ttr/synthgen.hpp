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

// Synthetic order logs with latent store clusters and Zipf popularity.
//
// Stores are split into clusters. Inside a cluster the store of rank r has
// weight r^-zipf_exponent. Each user has a home cluster; an order comes from
// the home cluster's popularity distribution with probability 1 - noise and
// uniformly from all stores otherwise.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "ttr/interactions.hpp"

namespace ttr {

struct SynthConfig {
  std::size_t n_users = 20000;
  std::size_t n_stores = 1000;
  std::size_t n_clusters = 20;
  double zipf_exponent = 1.0;
  std::size_t days = 127;
  double orders_per_user_mean = 12.0;
  double user_sample_fraction = 1.0;
  double noise = 0.1;
  std::uint64_t seed = 1;

  void validate() const;  // throws ConfigInvalid
};

struct SynthWorld {
  std::vector<std::size_t> store_cluster;          // cluster of each store
  std::vector<double> store_weight;                // within-cluster probability
  std::vector<std::vector<std::size_t>> clusters;  // stores by cluster, rank order
  std::vector<std::size_t> user_cluster;           // home cluster of each user
};

// Cluster layout and user home clusters; a pure function of the config.
SynthWorld build_world(const SynthConfig& config);

// Marginal store distribution implied by the config when home clusters are
// uniform over clusters.
std::vector<double> expected_store_marginals(const SynthConfig& config, const SynthWorld& world);

// Records sorted by timestamp; ties keep generation order. Users are named
// "u<index>" and stores "s<index>".
std::vector<InteractionRecord> generate(const SynthConfig& config);

}  // namespace ttr
