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

// Run configuration and the end-to-end train/evaluate pipeline shared by the
// command-line tool and the acceptance suite.

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ttr/evaluation.hpp"
#include "ttr/interactions.hpp"
#include "ttr/synthgen.hpp"
#include "ttr/towers.hpp"
#include "ttr/trainer.hpp"

namespace ttr {

inline constexpr std::string_view kVersion = "0.1.0";

struct DataConfig {
  int validation_days = 7;
  BowOptions bow;
  InteractionFormat format = InteractionFormat::kJsonl;
  std::size_t max_malformed = 0;
};

struct RunConfig {
  std::uint64_t seed = 1;  // every component seed is derived from this
  SynthConfig synth;
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  std::vector<std::size_t> eval_ks = kDefaultHitRateKs;
  bool exclude_seen = false;
  unsigned eval_threads = 1;

  void validate() const;
};

// Component seeds are derived from `seed`; this overwrites them.
void apply_seed(RunConfig& config, std::uint64_t seed);

// Missing keys keep their defaults, unknown keys are rejected. Seeds inside
// the document are ignored in favor of the top-level "seed".
RunConfig run_config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const RunConfig& config);

// Reads a JSON config file; // and /* */ comments are allowed.
RunConfig load_run_config(const std::filesystem::path& path);

// 64-bit FNV-1a, hex encoded.
std::string fingerprint_bytes(std::string_view bytes);
std::string fingerprint_file(const std::filesystem::path& path);

struct TrainingRun {
  TrainingData data;
  TwoTowerModel model;
  TrainingLog log;
  MetricsReport report;  // full validation set
};

TrainingRun run_training(const std::vector<InteractionRecord>& records, const RunConfig& config);

MetricsReport evaluate_model(const TwoTowerModel& model, const TrainingData& data,
                             const std::vector<std::size_t>& ks, unsigned threads,
                             bool exclude_seen = false,
                             const std::vector<bool>* relevant_filter = nullptr);

// Rebuilds training-side inputs against an existing vocabulary, e.g. to
// evaluate a saved model on a data file. Records naming unknown users or
// stores are dropped from the training side.
TrainingData prepare_with_vocabulary(const SplitDataset& split, Vocabularies vocab,
                                     const BowOptions& bow = {});

// {"users": [...], "stores": [...]}, tokens in index order.
nlohmann::json vocabularies_to_json(const Vocabularies& vocab);
Vocabularies vocabularies_from_json(const nlohmann::json& doc);

// Stores whose training frequency is in the lower half (ties broken by
// index), as a per-store flag.
std::vector<bool> tail_store_filter(const TrainingData& data);

}  // namespace ttr
