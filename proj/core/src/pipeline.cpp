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
#include "ttr/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <iterator>
#include <numeric>
#include <set>
#include <string>

#include <fmt/format.h>

#include "ttr/error.hpp"
#include "ttr/random.hpp"

namespace ttr {

using json = nlohmann::json;

namespace {

constexpr std::uint64_t kSynthSeedStream = 101;
constexpr std::uint64_t kModelSeedStream = 102;
constexpr std::uint64_t kTrainSeedStream = 103;

void reject_unknown_keys(const json& obj, std::string_view section,
                         std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) {
    fail(ErrorCode::kConfigInvalid, fmt::format("'{}' must be an object", section));
  }
  for (const auto& [key, value] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      fail(ErrorCode::kConfigInvalid, fmt::format("unknown key '{}' in '{}'", key, section));
    }
  }
}

template <typename T>
void read_key(const json& obj, const char* key, T& out) {
  if (const auto it = obj.find(key); it != obj.end()) out = it->get<T>();
}

}  // namespace

void RunConfig::validate() const {
  synth.validate();
  model.validate();
  train.validate();
  require(data.validation_days >= 1, ErrorCode::kConfigInvalid, "validation_days must be >= 1");
  require(data.bow.window_days >= 1, ErrorCode::kConfigInvalid, "window_days must be >= 1");
  require(data.bow.max_bag_len >= 1, ErrorCode::kConfigInvalid, "max_bag_len must be >= 1");
  require(!eval_ks.empty(), ErrorCode::kConfigInvalid, "eval ks must not be empty");
  for (auto k : eval_ks) require(k >= 1, ErrorCode::kConfigInvalid, "eval k must be >= 1");
}

void apply_seed(RunConfig& config, std::uint64_t seed) {
  config.seed = seed;
  config.synth.seed = mix_seed(seed, kSynthSeedStream);
  config.model.seed = mix_seed(seed, kModelSeedStream);
  config.train.seed = mix_seed(seed, kTrainSeedStream);
}

RunConfig run_config_from_json(const json& doc) {
  RunConfig c;
  try {
    reject_unknown_keys(doc, "config", {"seed", "synth", "data", "model", "train", "eval"});
    std::uint64_t seed = c.seed;
    read_key(doc, "seed", seed);

    if (const auto it = doc.find("synth"); it != doc.end()) {
      const json& s = *it;
      reject_unknown_keys(s, "synth",
                          {"n_users", "n_stores", "n_clusters", "zipf_exponent", "days",
                           "orders_per_user_mean", "user_sample_fraction", "noise"});
      read_key(s, "n_users", c.synth.n_users);
      read_key(s, "n_stores", c.synth.n_stores);
      read_key(s, "n_clusters", c.synth.n_clusters);
      read_key(s, "zipf_exponent", c.synth.zipf_exponent);
      read_key(s, "days", c.synth.days);
      read_key(s, "orders_per_user_mean", c.synth.orders_per_user_mean);
      read_key(s, "user_sample_fraction", c.synth.user_sample_fraction);
      read_key(s, "noise", c.synth.noise);
    }
    if (const auto it = doc.find("data"); it != doc.end()) {
      const json& d = *it;
      reject_unknown_keys(d, "data", {"validation_days", "window_days", "max_bag_len", "format",
                                      "max_malformed"});
      read_key(d, "validation_days", c.data.validation_days);
      read_key(d, "window_days", c.data.bow.window_days);
      read_key(d, "max_bag_len", c.data.bow.max_bag_len);
      read_key(d, "max_malformed", c.data.max_malformed);
      if (d.contains("format")) {
        const auto format = parse_format(d.at("format").get<std::string>());
        if (!format) fail(ErrorCode::kConfigInvalid, "data.format must be jsonl or csv");
        c.data.format = *format;
      }
    }
    if (const auto it = doc.find("model"); it != doc.end()) {
      const json& m = *it;
      reject_unknown_keys(m, "model", {"variant", "dim", "temperature", "pooling", "init_scale",
                                       "normalize"});
      if (m.contains("variant")) {
        const auto variant = parse_variant(m.at("variant").get<std::string>());
        if (!variant) fail(ErrorCode::kConfigInvalid, "model.variant must be dmf|bow|bow-shared");
        c.model.variant = *variant;
      }
      if (m.contains("pooling")) {
        const auto pooling = parse_pooling(m.at("pooling").get<std::string>());
        if (!pooling) fail(ErrorCode::kConfigInvalid, "model.pooling must be mean|sum");
        c.model.pooling = *pooling;
      }
      read_key(m, "dim", c.model.dim);
      read_key(m, "temperature", c.model.temperature);
      read_key(m, "init_scale", c.model.init_scale);
      read_key(m, "normalize", c.model.normalize);
    }
    if (const auto it = doc.find("train"); it != doc.end()) {
      const json& t = *it;
      reject_unknown_keys(t, "train",
                          {"batch_size", "epochs", "lr", "adagrad_eps", "cache_capacity",
                           "eval_every_steps", "eval_users", "eval_ks", "freq_smoothing",
                           "use_logq", "use_cache", "use_mask"});
      read_key(t, "batch_size", c.train.batch_size);
      read_key(t, "epochs", c.train.epochs);
      read_key(t, "lr", c.train.lr);
      read_key(t, "adagrad_eps", c.train.adagrad_eps);
      read_key(t, "cache_capacity", c.train.cache_capacity);
      read_key(t, "eval_every_steps", c.train.eval_every_steps);
      read_key(t, "eval_users", c.train.eval_users);
      read_key(t, "eval_ks", c.train.eval_ks);
      read_key(t, "freq_smoothing", c.train.freq_smoothing);
      read_key(t, "use_logq", c.train.use_logq);
      read_key(t, "use_cache", c.train.use_cache);
      read_key(t, "use_mask", c.train.use_mask);
    }
    if (const auto it = doc.find("eval"); it != doc.end()) {
      const json& e = *it;
      reject_unknown_keys(e, "eval", {"ks", "exclude_seen", "threads"});
      read_key(e, "ks", c.eval_ks);
      read_key(e, "exclude_seen", c.exclude_seen);
      read_key(e, "threads", c.eval_threads);
    }
    apply_seed(c, seed);
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfigInvalid, e.what());
  }
  c.validate();
  return c;
}

json to_json(const RunConfig& c) {
  return {
      {"seed", c.seed},
      {"synth",
       {{"n_users", c.synth.n_users},
        {"n_stores", c.synth.n_stores},
        {"n_clusters", c.synth.n_clusters},
        {"zipf_exponent", c.synth.zipf_exponent},
        {"days", c.synth.days},
        {"orders_per_user_mean", c.synth.orders_per_user_mean},
        {"user_sample_fraction", c.synth.user_sample_fraction},
        {"noise", c.synth.noise}}},
      {"data",
       {{"validation_days", c.data.validation_days},
        {"window_days", c.data.bow.window_days},
        {"max_bag_len", c.data.bow.max_bag_len},
        {"format", to_string(c.data.format)},
        {"max_malformed", c.data.max_malformed}}},
      {"model",
       {{"variant", to_string(c.model.variant)},
        {"dim", c.model.dim},
        {"temperature", c.model.temperature},
        {"pooling", to_string(c.model.pooling)},
        {"init_scale", c.model.init_scale},
        {"normalize", c.model.normalize}}},
      {"train",
       {{"batch_size", c.train.batch_size},
        {"epochs", c.train.epochs},
        {"lr", c.train.lr},
        {"adagrad_eps", c.train.adagrad_eps},
        {"cache_capacity", c.train.cache_capacity},
        {"eval_every_steps", c.train.eval_every_steps},
        {"eval_users", c.train.eval_users},
        {"eval_ks", c.train.eval_ks},
        {"freq_smoothing", c.train.freq_smoothing},
        {"use_logq", c.train.use_logq},
        {"use_cache", c.train.use_cache},
        {"use_mask", c.train.use_mask}}},
      {"eval", {{"ks", c.eval_ks}, {"exclude_seen", c.exclude_seen}, {"threads", c.eval_threads}}},
  };
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kConfigInvalid, "cannot read config " + path.string());
  json doc;
  try {
    doc = json::parse(in, nullptr, /*allow_exceptions=*/true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfigInvalid, path.string() + ": " + e.what());
  }
  return run_config_from_json(doc);
}

std::string fingerprint_bytes(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

std::string fingerprint_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIoError, "cannot read " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return fingerprint_bytes(bytes);
}

MetricsReport evaluate_model(const TwoTowerModel& model, const TrainingData& data,
                             const std::vector<std::size_t>& ks, unsigned threads,
                             bool exclude_seen, const std::vector<bool>* relevant_filter) {
  EvalOptions options;
  options.ks = ks;
  options.threads = threads;
  options.relevant_filter = relevant_filter;
  std::vector<std::vector<std::size_t>> seen;
  if (exclude_seen) {
    seen.resize(data.vocab.users.size());
    for (const auto& p : data.pairs) seen[p.user].push_back(p.store);
    options.exclude_seen = true;
    options.seen = &seen;
  }
  return evaluate(model, data.validation, data.features, options);
}

TrainingData prepare_with_vocabulary(const SplitDataset& split, Vocabularies vocab,
                                     const BowOptions& bow) {
  TrainingData data;
  data.split_time = split.split_time;
  std::vector<InteractionRecord> known;
  known.reserve(split.train.size());
  for (const auto& r : split.train) {
    const auto u = vocab.users.find(r.user_id);
    const auto s = vocab.stores.find(r.store_id);
    if (!u || !s) continue;
    data.pairs.push_back({*u, *s});
    known.push_back(r);
  }
  data.features = build_bow_features(known, vocab.users, vocab.stores, split.split_time, bow);
  data.validation = build_eval_set(split.validation, vocab.users, vocab.stores);
  data.vocab = std::move(vocab);
  return data;
}

json vocabularies_to_json(const Vocabularies& vocab) {
  return {{"users", vocab.users.tokens()}, {"stores", vocab.stores.tokens()}};
}

Vocabularies vocabularies_from_json(const json& doc) {
  try {
    Vocabularies v{Vocabulary(doc.at("users").get<std::vector<std::string>>()),
                   Vocabulary(doc.at("stores").get<std::vector<std::string>>())};
    return v;
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormatError, std::string("vocabulary: ") + e.what());
  }
}

std::vector<bool> tail_store_filter(const TrainingData& data) {
  const std::size_t n = data.vocab.stores.size();
  std::vector<std::uint64_t> counts(n, 0);
  for (const auto& p : data.pairs) ++counts[p.store];
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return counts[a] < counts[b]; });
  std::vector<bool> tail(n, false);
  for (std::size_t i = 0; i < n / 2; ++i) tail[order[i]] = true;
  return tail;
}

TrainingRun run_training(const std::vector<InteractionRecord>& records, const RunConfig& config) {
  config.validate();
  const SplitDataset split = temporal_split(records, config.data.validation_days);
  TrainingData data = prepare_training_data(split, config.data.bow);
  require(!data.pairs.empty(), ErrorCode::kEmptyDataset, "training partition is empty");

  TwoTowerModel model(config.model, data.vocab.users.size(), data.vocab.stores.size());
  TrainConfig train_config = config.train;
  train_config.eval_threads = config.eval_threads;
  TrainingLog log = train(model, data, train_config);

  std::vector<std::size_t> ks = config.eval_ks;
  std::erase_if(ks, [&](std::size_t k) { return k > model.n_stores(); });
  if (ks.empty()) fail(ErrorCode::kConfigInvalid, "every eval k exceeds the store count");
  MetricsReport report = evaluate_model(model, data, ks, config.eval_threads, config.exclude_seen);
  return {std::move(data), std::move(model), std::move(log), std::move(report)};
}

}  // namespace ttr
