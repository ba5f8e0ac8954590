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
#include "ttr/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <deque>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>
#include <string>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "ttr/error.hpp"
#include "ttr/loss.hpp"
#include "ttr/random.hpp"

namespace ttr {

void TrainConfig::validate() const {
  require(batch_size >= 1, ErrorCode::kConfigInvalid, "batch_size must be >= 1");
  require(epochs >= 1, ErrorCode::kConfigInvalid, "epochs must be >= 1");
  require(lr >= 0.0 && std::isfinite(lr), ErrorCode::kConfigInvalid, "lr must be >= 0");
  require(adagrad_eps >= 0.0, ErrorCode::kConfigInvalid, "adagrad_eps must be >= 0");
  require(freq_smoothing >= 0.0, ErrorCode::kConfigInvalid, "freq_smoothing must be >= 0");
  require(eval_every_steps == 0 || !eval_ks.empty(), ErrorCode::kConfigInvalid,
          "periodic evaluation needs eval_ks");
}

std::vector<double> TrainingLog::losses() const {
  std::vector<double> out;
  out.reserve(steps.size());
  for (const auto& s : steps) out.push_back(s.loss);
  return out;
}

TrainingData prepare_training_data(const SplitDataset& split, const BowOptions& bow) {
  TrainingData data;
  data.split_time = split.split_time;
  data.vocab = build_vocabularies(split.train);
  data.pairs.reserve(split.train.size());
  for (const auto& r : split.train) {
    data.pairs.push_back({data.vocab.users.index_of(r.user_id),
                          data.vocab.stores.index_of(r.store_id)});
  }
  data.features = build_bow_features(split.train, data.vocab.users, data.vocab.stores,
                                     split.split_time, bow);
  data.validation = build_eval_set(split.validation, data.vocab.users, data.vocab.stores);
  if (data.validation.unknown_user_records + data.validation.unknown_store_records > 0) {
    spdlog::warn("validation: skipped {} records of unseen users and {} of unseen stores",
                 data.validation.unknown_user_records, data.validation.unknown_store_records);
  }
  return data;
}

namespace {

constexpr std::uint64_t kShuffleStream = 11;
constexpr std::uint64_t kEvalSampleStream = 12;

void check_consistency(const TwoTowerModel& model, const TrainingData& data) {
  require(model.n_stores() == data.vocab.stores.size(), ErrorCode::kVocabularyMismatch,
          fmt::format("model has {} stores, data {}", model.n_stores(), data.vocab.stores.size()));
  if (model.variant() == Variant::kDmf) {
    require(model.n_users() == data.vocab.users.size(), ErrorCode::kVocabularyMismatch,
            fmt::format("model has {} users, data {}", model.n_users(), data.vocab.users.size()));
  } else {
    require(data.features.size() == data.vocab.users.size(), ErrorCode::kVocabularyMismatch,
            "feature map does not cover the user vocabulary");
  }
  for (const auto& p : data.pairs) {
    require(p.store < model.n_stores() && p.user < data.vocab.users.size(),
            ErrorCode::kVocabularyMismatch, "training pair outside vocabulary");
  }
}

// Gradients for one step, keyed by physical table so that aliased tables
// share one accumulator.
class StepGradients {
 public:
  SparseGradient& for_table(const TableHandle& table) {
    for (auto& [ptr, grad] : grads_) {
      if (ptr == table.get()) return grad;
    }
    grads_.emplace_back(table.get(), SparseGradient(table->dim()));
    return grads_.back().second;
  }

  std::size_t touched_rows() const {
    std::size_t n = 0;
    for (const auto& [ptr, grad] : grads_) n += grad.touched_rows();
    return n;
  }

  void apply(double lr, double eps) {
    for (auto& [ptr, grad] : grads_) grad.apply_adagrad(*ptr, lr, eps);
  }

 private:
  std::deque<std::pair<EmbeddingTable*, SparseGradient>> grads_;  // stable references
};

}  // namespace

TrainingLog train(TwoTowerModel& model, const TrainingData& data, const TrainConfig& config) {
  config.validate();
  require(!data.pairs.empty(), ErrorCode::kEmptyDataset, "no training pairs");
  check_consistency(model, data);

  const auto& mc = model.config();
  const bool dmf = model.variant() == Variant::kDmf;
  const auto dim = static_cast<Eigen::Index>(mc.dim);

  FrequencyTable freq(model.n_stores(), config.freq_smoothing);
  NegativeCache cache(config.cache_capacity);
  const LossOptions loss_options{mc.temperature, config.use_logq, config.use_cache,
                                 config.use_mask};

  EvalSet eval_sample;
  const bool periodic_eval = config.eval_every_steps > 0 && !data.validation.users.empty();
  if (periodic_eval) {
    eval_sample = sample_eval_set(data.validation, config.eval_users,
                                  mix_seed(config.seed, kEvalSampleStream));
  }
  EvalOptions eval_options;
  eval_options.ks = config.eval_ks;
  eval_options.threads = config.eval_threads;

  std::vector<std::size_t> order(data.pairs.size());
  std::vector<std::size_t> epoch_positives(data.pairs.size());
  for (std::size_t i = 0; i < data.pairs.size(); ++i) epoch_positives[i] = data.pairs[i].store;

  TrainingLog log;
  std::size_t step = 0;
  RowMatrix raw_queries, raw_items, queries, items;
  std::vector<std::size_t> positives;

  auto run_eval = [&](std::size_t epoch) {
    const auto report = evaluate(model, eval_sample, data.features, eval_options);
    log.evals.push_back({step, epoch, report.hit_rate});
  };

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    // Pre-pass: sampling probabilities stay fixed for the whole epoch.
    freq.update(epoch_positives);
    const std::uint64_t fingerprint = freq.fingerprint();

    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(mix_seed(config.seed, kShuffleStream + 1000 * epoch));
    shuffle_rng.shuffle(std::span<std::size_t>(order));

    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      const auto batch = static_cast<Eigen::Index>(end - begin);
      raw_queries.resize(batch, dim);
      raw_items.resize(batch, dim);
      positives.resize(static_cast<std::size_t>(batch));

      for (Eigen::Index b = 0; b < batch; ++b) {
        const auto& pair = data.pairs[order[begin + static_cast<std::size_t>(b)]];
        positives[static_cast<std::size_t>(b)] = pair.store;
        if (dmf) {
          raw_queries.row(b) = lookup(*model.user_table(), pair.user).transpose();
        } else {
          raw_queries.row(b) = pooled_lookup(*model.query_store_table(),
                                             data.features[pair.user].store_indices, mc.pooling)
                                   .transpose();
        }
        raw_items.row(b) = model.item_table()->weights().row(static_cast<Eigen::Index>(pair.store));
      }
      queries = raw_queries;
      items = raw_items;
      if (mc.normalize) {
        for (Eigen::Index b = 0; b < batch; ++b) {
          queries.row(b) = l2_normalize(raw_queries.row(b).transpose()).transpose();
          items.row(b) = l2_normalize(raw_items.row(b).transpose()).transpose();
        }
      }

      LossOutput out = inbatch_softmax_loss(queries, items, positives, cache, freq, loss_options);

      StepGradients grads;
      SparseGradient& item_grad = grads.for_table(model.item_table());
      SparseGradient& query_grad =
          grads.for_table(dmf ? model.user_table() : model.query_store_table());
      for (Eigen::Index b = 0; b < batch; ++b) {
        const auto& pair = data.pairs[order[begin + static_cast<std::size_t>(b)]];
        Vector gq = out.grad_query.row(b).transpose();
        Vector gi = out.grad_item.row(b).transpose();
        if (mc.normalize) {
          gq = l2_normalize_backward(raw_queries.row(b).transpose(), gq);
          gi = l2_normalize_backward(raw_items.row(b).transpose(), gi);
        }
        if (dmf) {
          query_grad.add(pair.user, gq);
        } else {
          const auto& bag = data.features[pair.user].store_indices;
          if (!bag.empty()) {
            const double w =
                mc.pooling == Pooling::kMean ? 1.0 / static_cast<double>(bag.size()) : 1.0;
            for (auto s : bag) query_grad.add(s, gq, w);
          }
        }
        item_grad.add(pair.store, gi);
      }
      const std::size_t touched = grads.touched_rows();
      grads.apply(config.lr, config.adagrad_eps);

      ++step;
      log.steps.push_back({step, epoch, out.loss, touched, fingerprint});
      if (periodic_eval && step % config.eval_every_steps == 0) run_eval(epoch);
    }
    log.epoch_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count());
    spdlog::debug("epoch {} done: {} steps, last loss {:.5f}", epoch, step,
                  log.steps.back().loss);
  }
  if (periodic_eval && (log.evals.empty() || log.evals.back().step != step)) {
    run_eval(config.epochs - 1);
  }
  return log;
}

std::optional<std::size_t> steps_to_threshold(const TrainingLog& log, std::string_view metric,
                                              std::size_t k, double threshold) {
  if (metric != "hit_rate") fail(ErrorCode::kUnknownMetric, std::string(metric));
  bool seen = false;
  for (const auto& e : log.evals) {
    const auto it = e.hit_rate.find(k);
    if (it == e.hit_rate.end()) continue;
    seen = true;
    if (it->second >= threshold) return e.step;
  }
  if (!seen) fail(ErrorCode::kUnknownMetric, fmt::format("hit_rate@{} not in log", k));
  return std::nullopt;
}

void write_training_log_jsonl(std::ostream& out, const TrainingLog& log) {
  using nlohmann::json;
  std::size_t e = 0;
  for (const auto& s : log.steps) {
    out << json{{"type", "step"},
                {"step", s.step},
                {"epoch", s.epoch},
                {"loss", s.loss},
                {"touched_rows", s.touched_rows}}
               .dump()
        << '\n';
    while (e < log.evals.size() && log.evals[e].step == s.step) {
      json hr = json::object();
      for (const auto& [k, v] : log.evals[e].hit_rate) hr[std::to_string(k)] = v;
      out << json{{"type", "eval"},
                  {"step", log.evals[e].step},
                  {"epoch", log.evals[e].epoch},
                  {"hit_rate", std::move(hr)}}
                 .dump()
          << '\n';
      ++e;
    }
  }
  for (std::size_t i = 0; i < log.epoch_seconds.size(); ++i) {
    out << json{{"type", "epoch"}, {"epoch", i}, {"seconds", log.epoch_seconds[i]}}.dump()
        << '\n';
  }
}

TrainingLog read_training_log_jsonl(std::istream& in) {
  using nlohmann::json;
  TrainingLog log;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json doc = json::parse(line);
      const auto type = doc.at("type").get<std::string>();
      if (type == "step") {
        log.steps.push_back({doc.at("step").get<std::size_t>(), doc.at("epoch").get<std::size_t>(),
                             doc.at("loss").get<double>(),
                             doc.value("touched_rows", std::size_t{0}), 0});
      } else if (type == "eval") {
        EvalRecord rec{doc.at("step").get<std::size_t>(), doc.at("epoch").get<std::size_t>(), {}};
        for (const auto& [k, v] : doc.at("hit_rate").items()) {
          rec.hit_rate[static_cast<std::size_t>(std::stoull(k))] = v.get<double>();
        }
        log.evals.push_back(std::move(rec));
      } else if (type == "epoch") {
        log.epoch_seconds.push_back(doc.at("seconds").get<double>());
      }
    } catch (const std::exception& e) {
      throw Error(ErrorCode::kParseError, e.what(), line_no);
    }
  }
  return log;
}

void write_training_curve_csv(std::ostream& out, const TrainingLog& log) {
  std::set<std::size_t> ks;
  for (const auto& e : log.evals) {
    for (const auto& [k, v] : e.hit_rate) ks.insert(k);
  }
  out << "step,loss";
  for (auto k : ks) out << ",hit_rate_at_" << k;
  out << '\n';
  std::size_t e = 0;
  for (const auto& s : log.steps) {
    out << s.step << ',' << fmt::format("{:.17g}", s.loss);
    const EvalRecord* eval = nullptr;
    while (e < log.evals.size() && log.evals[e].step <= s.step) {
      if (log.evals[e].step == s.step) eval = &log.evals[e];
      ++e;
    }
    for (auto k : ks) {
      out << ',';
      if (eval) {
        if (auto it = eval->hit_rate.find(k); it != eval->hit_rate.end()) {
          out << fmt::format("{:.17g}", it->second);
        }
      }
    }
    out << '\n';
  }
}

}  // namespace ttr
