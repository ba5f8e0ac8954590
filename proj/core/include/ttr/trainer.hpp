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
#include <iosfwd>
#include <map>
#include <optional>
#include <string_view>
#include <vector>

#include "ttr/evaluation.hpp"
#include "ttr/interactions.hpp"
#include "ttr/towers.hpp"

namespace ttr {

struct TrainConfig {
  std::size_t batch_size = 256;  // large-scale setting: 8192
  std::size_t epochs = 10;
  double lr = 0.02;
  double adagrad_eps = kDefaultAdagradEps;
  std::size_t cache_capacity = 6144;
  std::size_t eval_every_steps = 50;  // 0 disables periodic evaluation
  std::size_t eval_users = 512;       // validation subsample for periodic evaluation
  std::vector<std::size_t> eval_ks{20};
  unsigned eval_threads = 1;
  double freq_smoothing = 1.0;
  std::uint64_t seed = 0;
  bool use_logq = true;
  bool use_cache = true;
  bool use_mask = true;

  void validate() const;  // throws ConfigInvalid
};

struct TrainPair {
  std::size_t user = 0;
  std::size_t store = 0;
};

// Everything the training loop consumes, indexed by training vocabularies.
struct TrainingData {
  Vocabularies vocab;                // from training records only
  std::vector<TrainPair> pairs;      // one per training record, in record order
  std::vector<BagOfStores> features; // per user index, anchored at split_time
  EvalSet validation;
  Timestamp split_time = 0;
};

TrainingData prepare_training_data(const SplitDataset& split, const BowOptions& bow = {});

struct StepRecord {
  std::size_t step = 0;  // 1-based, global across epochs
  std::size_t epoch = 0;
  double loss = 0.0;
  std::size_t touched_rows = 0;          // distinct rows updated, all tables
  std::uint64_t freq_fingerprint = 0;    // frequency table state used by the step
};

struct EvalRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::map<std::size_t, double> hit_rate;
};

struct TrainingLog {
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
  std::vector<double> epoch_seconds;

  std::vector<double> losses() const;
};

// Runs the mini-batch loop, updating the model's tables in place.
TrainingLog train(TwoTowerModel& model, const TrainingData& data, const TrainConfig& config);

// First evaluated step whose metric reaches `threshold`. Only "hit_rate" is
// logged; an unknown metric or k raises UnknownMetric.
std::optional<std::size_t> steps_to_threshold(const TrainingLog& log, std::string_view metric,
                                              std::size_t k, double threshold);

// JSONL: {"type":"step",...} and {"type":"eval",...} records, then one
// {"type":"epoch",...} record per epoch.
void write_training_log_jsonl(std::ostream& out, const TrainingLog& log);
TrainingLog read_training_log_jsonl(std::istream& in);

// One row per step: step,loss,hit_rate_at_<k>... (metric cells blank
// between evaluations).
void write_training_curve_csv(std::ostream& out, const TrainingLog& log);

}  // namespace ttr
