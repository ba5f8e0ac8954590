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

// Two-tower retrieval models. Both towers are additive: a tower's output is
// the (pooled) embedding of its single ID feature, compared by dot product.
//
//   kDmf        query = user_table[user]           item = item_table[store]
//   kBow        query = pool(query_table[bag])      item = item_table[store]
//   kBowShared  as kBow, with query_table and item_table the same table

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string_view>

#include "ttr/embedding.hpp"
#include "ttr/interactions.hpp"

namespace ttr {

enum class Variant { kDmf, kBow, kBowShared };

std::string_view to_string(Variant variant);
std::optional<Variant> parse_variant(std::string_view name);  // dmf|bow|bow-shared
std::string_view to_string(Pooling pooling);
std::optional<Pooling> parse_pooling(std::string_view name);

struct ModelConfig {
  Variant variant = Variant::kBowShared;
  std::size_t dim = 32;
  double temperature = 0.1;  // used only inside the training loss
  Pooling pooling = Pooling::kMean;
  std::uint64_t seed = 0;
  double init_scale = kDefaultInitScale;
  // L2-normalize tower outputs. Off by default.
  bool normalize = false;

  void validate() const;
};

class TwoTowerModel {
 public:
  TwoTowerModel(const ModelConfig& config, std::size_t n_users, std::size_t n_stores);

  // Assembles a model from existing tables (checkpoint loading). For
  // kBowShared, pass the same handle as query_store_table and item_table.
  TwoTowerModel(const ModelConfig& config, std::size_t n_users, std::size_t n_stores,
                TableHandle user_table, TableHandle query_store_table,
                TableHandle item_table);

  const ModelConfig& config() const noexcept { return config_; }
  Variant variant() const noexcept { return config_.variant; }
  std::size_t n_users() const noexcept { return n_users_; }
  std::size_t n_stores() const noexcept { return n_stores_; }

  // Null when absent for the variant.
  const TableHandle& user_table() const noexcept { return user_table_; }
  const TableHandle& query_store_table() const noexcept { return query_store_table_; }
  const TableHandle& item_table() const noexcept { return item_table_; }

  bool shares_tables() const noexcept { return query_store_table_ == item_table_; }

 private:
  void check_invariants() const;

  ModelConfig config_;
  std::size_t n_users_ = 0;
  std::size_t n_stores_ = 0;
  TableHandle user_table_;
  TableHandle query_store_table_;
  TableHandle item_table_;
};

// DMF query tower.
Vector query_forward(const TwoTowerModel& model, std::size_t user);
// BoW query tower.
Vector query_forward(const TwoTowerModel& model, const BagOfStores& bag);
// Dispatches on the variant: the user row for kDmf, the user's bag otherwise.
Vector query_for_user(const TwoTowerModel& model, std::size_t user,
                      const std::vector<BagOfStores>& features);

Vector item_forward(const TwoTowerModel& model, std::size_t item);

// All item-tower outputs, one row per store.
RowMatrix item_embeddings(const TwoTowerModel& model);

double score(const Vector& query, const Vector& item);

// Output normalization used when ModelConfig::normalize is set. A zero
// vector maps to itself.
Vector l2_normalize(const Vector& raw);
// Gradient w.r.t. `raw` given the gradient w.r.t. l2_normalize(raw).
Vector l2_normalize_backward(const Vector& raw, const Vector& upstream);

std::uint64_t parameter_count(const TwoTowerModel& model);
std::uint64_t parameter_count(Variant variant, std::uint64_t n_users, std::uint64_t n_stores,
                              std::uint64_t dim);

// Model checkpoint: a plain-text key=value header ending in a "---" line,
// followed by one table block per distinct table (one when shared=true).
void save_checkpoint(const TwoTowerModel& model, const std::filesystem::path& path);
void save_checkpoint(const TwoTowerModel& model, std::ostream& out);
TwoTowerModel load_checkpoint(const std::filesystem::path& path);
TwoTowerModel load_checkpoint(std::istream& in);

}  // namespace ttr
