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
#include "ttr/towers.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>

#include <fmt/format.h>

#include "ttr/error.hpp"
#include "ttr/random.hpp"

namespace ttr {

std::string_view to_string(Variant variant) {
  switch (variant) {
    case Variant::kDmf: return "dmf";
    case Variant::kBow: return "bow";
    case Variant::kBowShared: return "bow-shared";
  }
  return "?";
}

std::optional<Variant> parse_variant(std::string_view name) {
  if (name == "dmf") return Variant::kDmf;
  if (name == "bow") return Variant::kBow;
  if (name == "bow-shared") return Variant::kBowShared;
  return std::nullopt;
}

std::string_view to_string(Pooling pooling) {
  return pooling == Pooling::kMean ? "mean" : "sum";
}

std::optional<Pooling> parse_pooling(std::string_view name) {
  if (name == "mean") return Pooling::kMean;
  if (name == "sum") return Pooling::kSum;
  return std::nullopt;
}

void ModelConfig::validate() const {
  require(dim >= 1, ErrorCode::kConfigInvalid, "model dim must be >= 1");
  require(temperature > 0.0 && std::isfinite(temperature), ErrorCode::kConfigInvalid,
          "temperature must be positive");
  require(init_scale >= 0.0 && std::isfinite(init_scale), ErrorCode::kConfigInvalid,
          "init_scale must be non-negative");
}

namespace {

// Stream ids for deriving per-table seeds from the model seed.
constexpr std::uint64_t kUserTableStream = 1;
constexpr std::uint64_t kQueryTableStream = 2;
constexpr std::uint64_t kItemTableStream = 3;

}  // namespace

TwoTowerModel::TwoTowerModel(const ModelConfig& config, std::size_t n_users,
                             std::size_t n_stores)
    : config_(config), n_users_(n_users), n_stores_(n_stores) {
  config_.validate();
  require(n_stores >= 1, ErrorCode::kInvalidArgument, "model needs at least one store");
  const auto seed = config_.seed;
  item_table_ = new_table(n_stores, config_.dim, mix_seed(seed, kItemTableStream),
                          config_.init_scale);
  switch (config_.variant) {
    case Variant::kDmf:
      require(n_users >= 1, ErrorCode::kInvalidArgument, "DMF needs at least one user");
      user_table_ = new_table(n_users, config_.dim, mix_seed(seed, kUserTableStream),
                              config_.init_scale);
      break;
    case Variant::kBow:
      query_store_table_ = new_table(n_stores, config_.dim, mix_seed(seed, kQueryTableStream),
                                     config_.init_scale);
      break;
    case Variant::kBowShared:
      query_store_table_ = item_table_;
      break;
  }
  check_invariants();
}

TwoTowerModel::TwoTowerModel(const ModelConfig& config, std::size_t n_users,
                             std::size_t n_stores, TableHandle user_table,
                             TableHandle query_store_table, TableHandle item_table)
    : config_(config),
      n_users_(n_users),
      n_stores_(n_stores),
      user_table_(std::move(user_table)),
      query_store_table_(std::move(query_store_table)),
      item_table_(std::move(item_table)) {
  config_.validate();
  check_invariants();
}

void TwoTowerModel::check_invariants() const {
  require(item_table_ && item_table_->rows() == n_stores_ && item_table_->dim() == config_.dim,
          ErrorCode::kVariantMismatch, "item table shape");
  switch (config_.variant) {
    case Variant::kDmf:
      require(user_table_ && !query_store_table_, ErrorCode::kVariantMismatch,
              "DMF needs a user table and no query store table");
      require(user_table_->rows() == n_users_ && user_table_->dim() == config_.dim,
              ErrorCode::kVariantMismatch, "user table shape");
      break;
    case Variant::kBow:
    case Variant::kBowShared: {
      require(!user_table_ && query_store_table_, ErrorCode::kVariantMismatch,
              "BoW variants need a query store table and no user table");
      require(query_store_table_->rows() == n_stores_ &&
                  query_store_table_->dim() == config_.dim,
              ErrorCode::kVariantMismatch, "query store table shape");
      const bool shared = query_store_table_ == item_table_;
      require(shared == (config_.variant == Variant::kBowShared), ErrorCode::kVariantMismatch,
              shared ? "bow must not share tables" : "bow-shared must alias one table");
      break;
    }
  }
}

Vector l2_normalize(const Vector& raw) {
  const double norm = raw.norm();
  return norm > 0.0 ? Vector(raw / norm) : raw;
}

Vector l2_normalize_backward(const Vector& raw, const Vector& upstream) {
  const double norm = raw.norm();
  if (norm == 0.0) return upstream;
  const Vector y = raw / norm;
  return (upstream - y * y.dot(upstream)) / norm;
}

namespace {

Vector finish(const TwoTowerModel& model, Vector v) {
  return model.config().normalize ? l2_normalize(v) : v;
}

}  // namespace

Vector query_forward(const TwoTowerModel& model, std::size_t user) {
  require(model.variant() == Variant::kDmf, ErrorCode::kVariantMismatch,
          "user-index query on a BoW model");
  return finish(model, lookup(*model.user_table(), user));
}

Vector query_forward(const TwoTowerModel& model, const BagOfStores& bag) {
  require(model.variant() != Variant::kDmf, ErrorCode::kVariantMismatch,
          "bag query on a DMF model");
  return finish(model, pooled_lookup(*model.query_store_table(), bag.store_indices,
                                     model.config().pooling));
}

Vector query_for_user(const TwoTowerModel& model, std::size_t user,
                      const std::vector<BagOfStores>& features) {
  if (model.variant() == Variant::kDmf) return query_forward(model, user);
  require(user < features.size(), ErrorCode::kIndexOutOfRange,
          "no features for user " + std::to_string(user));
  return query_forward(model, features[user]);
}

Vector item_forward(const TwoTowerModel& model, std::size_t item) {
  return finish(model, lookup(*model.item_table(), item));
}

RowMatrix item_embeddings(const TwoTowerModel& model) {
  RowMatrix items = model.item_table()->weights();
  if (model.config().normalize) {
    for (Eigen::Index i = 0; i < items.rows(); ++i) {
      const double norm = items.row(i).norm();
      if (norm > 0.0) items.row(i) /= norm;
    }
  }
  return items;
}

double score(const Vector& query, const Vector& item) {
  require(query.size() == item.size(), ErrorCode::kDimensionMismatch,
          fmt::format("score: {} vs {}", query.size(), item.size()));
  return query.dot(item);
}

std::uint64_t parameter_count(Variant variant, std::uint64_t n_users, std::uint64_t n_stores,
                              std::uint64_t dim) {
  switch (variant) {
    case Variant::kDmf: return (n_users + n_stores) * dim;
    case Variant::kBow: return 2 * n_stores * dim;
    case Variant::kBowShared: return n_stores * dim;
  }
  return 0;
}

std::uint64_t parameter_count(const TwoTowerModel& model) {
  return parameter_count(model.variant(), model.n_users(), model.n_stores(),
                         model.config().dim);
}

namespace {

constexpr std::string_view kCheckpointTag = "ttr-model 1";
constexpr std::string_view kHeaderEnd = "---";

std::string format_double(double v) { return fmt::format("{:.17g}", v); }

template <typename T>
T parse_number(const std::map<std::string, std::string>& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) fail(ErrorCode::kFormatError, "checkpoint header missing " + key);
  const std::string& s = it->second;
  T value{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    fail(ErrorCode::kFormatError, "bad checkpoint value " + key + "=" + s);
  }
  return value;
}

const std::string& header_value(const std::map<std::string, std::string>& kv,
                                const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) fail(ErrorCode::kFormatError, "checkpoint header missing " + key);
  return it->second;
}

}  // namespace

void save_checkpoint(const TwoTowerModel& model, std::ostream& out) {
  const auto& c = model.config();
  out << kCheckpointTag << '\n'
      << "variant=" << to_string(c.variant) << '\n'
      << "dim=" << c.dim << '\n'
      << "temperature=" << format_double(c.temperature) << '\n'
      << "pooling=" << to_string(c.pooling) << '\n'
      << "seed=" << c.seed << '\n'
      << "init_scale=" << format_double(c.init_scale) << '\n'
      << "normalize=" << (c.normalize ? "true" : "false") << '\n'
      << "n_users=" << model.n_users() << '\n'
      << "n_stores=" << model.n_stores() << '\n'
      << "shared=" << (model.shares_tables() ? "true" : "false") << '\n'
      << kHeaderEnd << '\n';
  switch (c.variant) {
    case Variant::kDmf:
      write_table(out, *model.user_table());
      write_table(out, *model.item_table());
      break;
    case Variant::kBow:
      write_table(out, *model.query_store_table());
      write_table(out, *model.item_table());
      break;
    case Variant::kBowShared:
      write_table(out, *model.item_table());
      break;
  }
  if (!out) fail(ErrorCode::kIoError, "checkpoint write failed");
}

void save_checkpoint(const TwoTowerModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoError, "cannot write " + path.string());
  save_checkpoint(model, out);
}

TwoTowerModel load_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointTag) {
    fail(ErrorCode::kFormatError, "not a ttr model checkpoint");
  }
  std::map<std::string, std::string> kv;
  bool terminated = false;
  while (std::getline(in, line)) {
    if (line == kHeaderEnd) {
      terminated = true;
      break;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorCode::kFormatError, "bad header line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  if (!terminated) fail(ErrorCode::kFormatError, "truncated checkpoint header");

  ModelConfig config;
  const auto variant = parse_variant(header_value(kv, "variant"));
  if (!variant) fail(ErrorCode::kFormatError, "unknown variant");
  config.variant = *variant;
  config.dim = parse_number<std::size_t>(kv, "dim");
  config.temperature = parse_number<double>(kv, "temperature");
  const auto pooling = parse_pooling(header_value(kv, "pooling"));
  if (!pooling) fail(ErrorCode::kFormatError, "unknown pooling");
  config.pooling = *pooling;
  config.seed = parse_number<std::uint64_t>(kv, "seed");
  config.init_scale = parse_number<double>(kv, "init_scale");
  config.normalize = header_value(kv, "normalize") == "true";
  const auto n_users = parse_number<std::size_t>(kv, "n_users");
  const auto n_stores = parse_number<std::size_t>(kv, "n_stores");
  const bool shared = header_value(kv, "shared") == "true";
  if (shared != (config.variant == Variant::kBowShared)) {
    fail(ErrorCode::kFormatError, "shared flag inconsistent with variant");
  }

  auto read_block = [&](std::size_t rows) {
    auto table = std::make_shared<EmbeddingTable>(read_table(in));
    if (table->rows() != rows || table->dim() != config.dim) {
      fail(ErrorCode::kFormatError, "table block shape does not match header");
    }
    return table;
  };

  try {
    switch (config.variant) {
      case Variant::kDmf: {
        auto users = read_block(n_users);
        auto items = read_block(n_stores);
        return TwoTowerModel(config, n_users, n_stores, users, nullptr, items);
      }
      case Variant::kBow: {
        auto query = read_block(n_stores);
        auto items = read_block(n_stores);
        return TwoTowerModel(config, n_users, n_stores, nullptr, query, items);
      }
      case Variant::kBowShared: {
        auto table = read_block(n_stores);
        return TwoTowerModel(config, n_users, n_stores, nullptr, table, table);
      }
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kFormatError) throw;
    fail(ErrorCode::kFormatError, e.what());
  }
  fail(ErrorCode::kFormatError, "unreachable variant");
}

TwoTowerModel load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorCode::kFileNotFound, path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIoError, "cannot open " + path.string());
  return load_checkpoint(in);
}

}  // namespace ttr
