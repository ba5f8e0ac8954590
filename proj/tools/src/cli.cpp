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
#include "cli.hpp"

#include <unistd.h>

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "ttr/error.hpp"
#include "ttr/pipeline.hpp"

namespace ttr::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kManifestFile = "manifest.json";
constexpr const char* kCheckpointFile = "model.ckpt";
constexpr const char* kVocabFile = "vocab.json";
constexpr const char* kLogFile = "train_log.jsonl";
constexpr const char* kCurveFile = "train_curve.csv";
constexpr const char* kMetricsJsonFile = "metrics.json";
constexpr const char* kMetricsCsvFile = "metrics.csv";

bool is_usage_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kConfigInvalid:
    case ErrorCode::kKTooLarge:
    case ErrorCode::kUnknownMetric:
      return true;
    default:
      return false;
  }
}

// Output directory written under a temporary sibling name and renamed into
// place on commit.
class StagedDir {
 public:
  StagedDir(fs::path target, bool force) : target_(std::move(target)) {
    if (fs::exists(target_) && !force) {
      fail(ErrorCode::kInvalidArgument,
           fmt::format("{} exists; pass --force to replace it", target_.string()));
    }
    const fs::path parent = target_.has_parent_path() ? target_.parent_path() : fs::path(".");
    fs::create_directories(parent);
    staging_ = parent / fmt::format(".{}.tmp-{}", target_.filename().string(), ::getpid());
    fs::remove_all(staging_);
    fs::create_directory(staging_);
  }
  StagedDir(const StagedDir&) = delete;
  StagedDir& operator=(const StagedDir&) = delete;
  ~StagedDir() {
    if (committed_) return;
    std::error_code ec;
    fs::remove_all(staging_, ec);
  }

  fs::path path(std::string_view name) const { return staging_ / name; }

  void commit() {
    if (fs::exists(target_)) fs::remove_all(target_);
    fs::rename(staging_, target_);
    committed_ = true;
  }

 private:
  fs::path target_;
  fs::path staging_;
  bool committed_ = false;
};

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) fail(ErrorCode::kIoError, "cannot write " + path.string());
}

// Single-file output: temp file in the same directory, then rename.
void write_file_atomic(const fs::path& path, const std::string& text, bool force) {
  if (fs::exists(path) && !force) {
    fail(ErrorCode::kInvalidArgument,
         fmt::format("{} exists; pass --force to replace it", path.string()));
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += fmt::format(".tmp-{}", ::getpid());
  write_text_file(tmp, text);
  fs::rename(tmp, path);
}

json read_json_file(const fs::path& path, ErrorCode missing) {
  std::ifstream in(path);
  if (!in) fail(missing, "cannot read " + path.string());
  try {
    return json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormatError, path.string() + ": " + e.what());
  }
}

// Accepts a plain config or a run manifest (whose "config" is used).
RunConfig load_config(const std::optional<fs::path>& path) {
  if (!path) {
    RunConfig config;
    apply_seed(config, config.seed);
    return config;
  }
  json doc;
  {
    std::ifstream in(*path);
    if (!in) fail(ErrorCode::kConfigInvalid, "cannot read config " + path->string());
    try {
      doc = json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::exception& e) {
      fail(ErrorCode::kConfigInvalid, path->string() + ": " + e.what());
    }
  }
  if (doc.is_object() && doc.value("tool", "") == "ttr" && doc.contains("config")) {
    return run_config_from_json(doc.at("config"));
  }
  return run_config_from_json(doc);
}

unsigned resolve_threads(unsigned configured) {
  unsigned threads = configured == 0 ? std::max(1u, std::thread::hardware_concurrency())
                                     : configured;
  if (const char* env = std::getenv("TTR_THREADS"); env != nullptr && *env != '\0') {
    unsigned cap = 0;
    const std::string_view s(env);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), cap);
    if (ec != std::errc() || ptr != s.data() + s.size() || cap == 0) {
      fail(ErrorCode::kConfigInvalid, "TTR_THREADS must be a positive integer");
    }
    threads = std::min(threads, cap);
  }
  return threads;
}

json library_versions() {
  return {{"ttr", std::string(kVersion)},
          {"eigen", fmt::format("{}.{}.{}", EIGEN_WORLD_VERSION, EIGEN_MAJOR_VERSION,
                                EIGEN_MINOR_VERSION)},
          {"nlohmann_json", fmt::format("{}.{}.{}", NLOHMANN_JSON_VERSION_MAJOR,
                                        NLOHMANN_JSON_VERSION_MINOR,
                                        NLOHMANN_JSON_VERSION_PATCH)},
          {"fmt", FMT_VERSION},
          {"spdlog", fmt::format("{}.{}.{}", SPDLOG_VER_MAJOR, SPDLOG_VER_MINOR,
                                 SPDLOG_VER_PATCH)}};
}

json manifest(std::string_view command, const RunConfig& config, json data, json artifacts) {
  return {{"tool", "ttr"},        {"command", command},         {"seed", config.seed},
          {"config", to_json(config)}, {"data", std::move(data)}, {"artifacts", std::move(artifacts)},
          {"versions", library_versions()}};
}

// A data argument may name an interaction file or a `generate` output dir.
fs::path resolve_data_path(const fs::path& data) {
  if (!fs::is_directory(data)) return data;
  for (const char* name : {"interactions.jsonl", "interactions.csv"}) {
    if (fs::exists(data / name)) return data / name;
  }
  fail(ErrorCode::kFileNotFound, "no interactions file in " + data.string());
}

InteractionFormat format_for(const fs::path& path, InteractionFormat fallback) {
  if (path.extension() == ".csv") return InteractionFormat::kCsv;
  if (path.extension() == ".jsonl") return InteractionFormat::kJsonl;
  return fallback;
}

std::vector<InteractionRecord> load_records(const fs::path& path, const DataConfig& data) {
  IngestOptions options;
  options.max_malformed = data.max_malformed;
  IngestResult result = ingest_interactions(path, format_for(path, data.format), options);
  for (const auto& bad : result.malformed) {
    spdlog::warn("{}:{}: skipped malformed line: {}", path.string(), bad.line, bad.reason);
  }
  return std::move(result.records);
}

std::vector<std::size_t> parse_ks(const std::string& text) {
  std::vector<std::size_t> ks;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t k = 0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), k);
    if (ec != std::errc() || ptr != item.data() + item.size() || k == 0) {
      fail(ErrorCode::kInvalidArgument, "--ks expects positive integers, got '" + item + "'");
    }
    ks.push_back(k);
  }
  if (ks.empty()) fail(ErrorCode::kInvalidArgument, "--ks is empty");
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  return ks;
}

struct CommonOptions {
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  bool force = false;
};

void apply_common(RunConfig& config, const CommonOptions& common) {
  if (common.seed) apply_seed(config, *common.seed);
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
  CommonOptions common;
  fs::path out;
  std::string format = "jsonl";
};

int cmd_generate(const GenerateArgs& args, std::ostream& out) {
  RunConfig config = load_config(args.common.config);
  apply_common(config, args.common);
  const auto format = parse_format(args.format);
  if (!format) fail(ErrorCode::kInvalidArgument, "--format must be jsonl or csv");
  config.data.format = *format;
  config.validate();

  StagedDir dir(args.out, args.common.force);
  const auto records = generate(config.synth);
  const std::string data_name = fmt::format("interactions.{}", to_string(*format));
  write_interactions(dir.path(data_name), records, *format);

  const json doc = manifest("generate", config,
                            {{"path", data_name},
                             {"fingerprint", fingerprint_file(dir.path(data_name))},
                             {"records", records.size()}},
                            {{"interactions", data_name}});
  write_text_file(dir.path(kManifestFile), doc.dump(2) + "\n");
  dir.commit();
  out << fmt::format("wrote {} records to {}\n", records.size(),
                     (args.out / data_name).string());
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  CommonOptions common;
  fs::path out;
  fs::path data;
  std::optional<std::string> variant;
  std::optional<std::string> ks;
  std::optional<std::size_t> epochs;
};

int cmd_train(const TrainArgs& args, std::ostream& out) {
  RunConfig config = load_config(args.common.config);
  apply_common(config, args.common);
  if (args.variant) {
    const auto variant = parse_variant(*args.variant);
    if (!variant) {
      fail(ErrorCode::kInvalidArgument, "--variant must be dmf, bow or bow-shared");
    }
    config.model.variant = *variant;
  }
  if (args.ks) config.eval_ks = parse_ks(*args.ks);
  if (args.epochs) config.train.epochs = *args.epochs;
  config.eval_threads = resolve_threads(config.eval_threads);
  config.validate();

  const fs::path data_path = resolve_data_path(args.data);
  StagedDir dir(args.out, args.common.force);
  const auto records = load_records(data_path, config.data);
  spdlog::info("training {} on {} records", to_string(config.model.variant), records.size());
  const TrainingRun run = run_training(records, config);

  save_checkpoint(run.model, dir.path(kCheckpointFile));
  write_text_file(dir.path(kVocabFile), vocabularies_to_json(run.data.vocab).dump() + "\n");
  {
    std::ofstream log_out(dir.path(kLogFile));
    write_training_log_jsonl(log_out, run.log);
    std::ofstream curve_out(dir.path(kCurveFile));
    write_training_curve_csv(curve_out, run.log);
    if (!log_out || !curve_out) fail(ErrorCode::kIoError, "cannot write training log");
  }
  write_text_file(dir.path(kMetricsJsonFile), to_json(run.report).dump(2) + "\n");
  write_text_file(dir.path(kMetricsCsvFile), metrics_csv_header(run.report) + "\n" +
                                                  metrics_csv_row(args.out.filename().string(),
                                                                  run.report) +
                                                  "\n");
  const json doc = manifest(
      "train", config,
      {{"path", fs::absolute(data_path).lexically_normal().string()},
       {"fingerprint", fingerprint_file(data_path)},
       {"records", records.size()}},
      {{"checkpoint", kCheckpointFile},
       {"vocabulary", kVocabFile},
       {"training_log", kLogFile},
       {"training_curve", kCurveFile},
       {"metrics_json", kMetricsJsonFile},
       {"metrics_csv", kMetricsCsvFile}});
  write_text_file(dir.path(kManifestFile), doc.dump(2) + "\n");
  dir.commit();

  out << fmt::format("{}: {} steps, final loss {:.5f}\n", args.out.string(),
                     run.log.steps.size(), run.log.steps.back().loss);
  for (const auto& [k, v] : run.report.hit_rate) out << fmt::format("  hit_rate@{} {:.4f}\n", k, v);
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
  CommonOptions common;
  fs::path checkpoint;
  fs::path data;
  std::optional<std::string> ks;
  std::optional<fs::path> out;
  bool exclude_seen = false;
};

int cmd_evaluate(const EvaluateArgs& args, std::ostream& out) {
  fs::path ckpt = args.checkpoint;
  if (fs::is_directory(ckpt)) ckpt /= kCheckpointFile;
  const fs::path run_dir = ckpt.has_parent_path() ? ckpt.parent_path() : fs::path(".");

  // Data settings come from --config, else from the run's manifest.
  std::optional<fs::path> config_path = args.common.config;
  if (!config_path && fs::exists(run_dir / kManifestFile)) config_path = run_dir / kManifestFile;
  RunConfig config = load_config(config_path);
  apply_common(config, args.common);
  if (args.ks) config.eval_ks = parse_ks(*args.ks);
  if (args.exclude_seen) config.exclude_seen = true;
  config.eval_threads = resolve_threads(config.eval_threads);

  const TwoTowerModel model = load_checkpoint(ckpt);
  Vocabularies vocab = vocabularies_from_json(read_json_file(run_dir / kVocabFile,
                                                             ErrorCode::kFileNotFound));
  require(vocab.stores.size() == model.n_stores(), ErrorCode::kVocabularyMismatch,
          "vocabulary does not match checkpoint");

  const auto records = load_records(resolve_data_path(args.data), config.data);
  const SplitDataset split = temporal_split(records, config.data.validation_days);
  const TrainingData data = prepare_with_vocabulary(split, std::move(vocab), config.data.bow);
  const MetricsReport report =
      evaluate_model(model, data, config.eval_ks, config.eval_threads, config.exclude_seen);

  const std::string text = to_json(report).dump(2) + "\n";
  if (args.out) {
    write_file_atomic(*args.out, text, args.common.force);
  } else {
    out << text;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct CompareArgs {
  std::vector<fs::path> runs;
  std::optional<fs::path> out;
  std::optional<double> threshold;
  std::size_t threshold_k = 20;
  bool force = false;
};

struct RunSummary {
  std::string label;
  MetricsReport report;
  std::optional<TrainingLog> log;
  std::optional<std::size_t> steps;
};

int cmd_compare(const CompareArgs& args, std::ostream& out) {
  if (args.runs.size() < 2) fail(ErrorCode::kInvalidArgument, "compare needs at least 2 runs");

  std::vector<RunSummary> rows;
  for (const auto& dir : args.runs) {
    RunSummary row;
    row.label = dir.filename().empty() ? dir.parent_path().filename().string()
                                       : dir.filename().string();
    const fs::path metrics_path = dir / kMetricsJsonFile;
    if (!fs::exists(metrics_path)) {
      fail(ErrorCode::kMissingReport, fmt::format("run '{}' has no {}", dir.string(),
                                                  kMetricsJsonFile));
    }
    row.report = metrics_from_json(read_json_file(metrics_path, ErrorCode::kMissingReport));
    if (std::ifstream log_in(dir / kLogFile); log_in) row.log = read_training_log_jsonl(log_in);
    rows.push_back(std::move(row));
  }

  // k columns shared by every run.
  std::vector<std::size_t> ks;
  for (const auto& [k, v] : rows.front().report.hit_rate) {
    const bool everywhere = std::all_of(rows.begin(), rows.end(), [k = k](const RunSummary& r) {
      return r.report.hit_rate.count(k) > 0;
    });
    if (everywhere) ks.push_back(k);
  }
  if (ks.empty()) fail(ErrorCode::kMissingReport, "runs share no hit_rate@k column");

  // Default threshold: 80% of the best final logged hit rate at threshold_k.
  std::optional<double> threshold = args.threshold;
  if (!threshold) {
    double best = -1.0;
    for (const auto& r : rows) {
      if (!r.log || r.log->evals.empty()) continue;
      const auto& last = r.log->evals.back().hit_rate;
      if (const auto it = last.find(args.threshold_k); it != last.end()) {
        best = std::max(best, it->second);
      }
    }
    if (best >= 0.0) threshold = 0.8 * best;
  }
  for (auto& r : rows) {
    if (!r.log || !threshold) continue;
    try {
      r.steps = steps_to_threshold(*r.log, "hit_rate", args.threshold_k, *threshold);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kUnknownMetric) throw;
    }
  }

  const std::size_t max_k = ks.back();
  std::stable_sort(rows.begin(), rows.end(), [max_k](const RunSummary& a, const RunSummary& b) {
    return a.report.hit_rate.at(max_k) > b.report.hit_rate.at(max_k);
  });

  std::vector<std::string> header{"run"};
  for (auto k : ks) header.push_back(fmt::format("hit_rate@{}", k));
  header.push_back("parameter_count");
  header.push_back(fmt::format("steps_to_hr@{}", args.threshold_k));
  std::vector<std::vector<std::string>> table{header};
  for (const auto& r : rows) {
    std::vector<std::string> cells{r.label};
    for (auto k : ks) cells.push_back(fmt::format("{:.4f}", r.report.hit_rate.at(k)));
    cells.push_back(std::to_string(r.report.parameter_count));
    cells.push_back(r.steps ? std::to_string(*r.steps) : "");
    table.push_back(std::move(cells));
  }

  std::vector<std::size_t> widths(header.size(), 0);
  for (const auto& cells : table) {
    for (std::size_t c = 0; c < cells.size(); ++c) widths[c] = std::max(widths[c], cells[c].size());
  }
  for (const auto& cells : table) {
    std::string line;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c > 0) line += "  ";
      line += c == 0 ? fmt::format("{:<{}}", cells[c], widths[c])
                     : fmt::format("{:>{}}", cells[c], widths[c]);
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out << line << '\n';
  }
  if (threshold) out << fmt::format("threshold hit_rate@{} >= {:.4f}\n", args.threshold_k, *threshold);

  if (args.out) {
    std::string csv;
    for (const auto& cells : table) {
      for (std::size_t c = 0; c < cells.size(); ++c) {
        if (c > 0) csv += ',';
        csv += cells[c];
      }
      csv += '\n';
    }
    write_file_atomic(*args.out, csv, args.force);
  }
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-tower retrieval training and evaluation", "ttr"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));
  std::string log_level = "warn";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  auto add_common = [](CLI::App* sub, CommonOptions& common, bool with_seed) {
    sub->add_option("--config", common.config, "JSON config file or run manifest")
        ->check(CLI::ExistingFile);
    if (with_seed) sub->add_option("--seed", common.seed, "top-level seed (overrides config)");
    sub->add_flag("--force", common.force, "replace existing outputs");
  };

  GenerateArgs gen;
  CLI::App* generate_cmd = app.add_subcommand("generate", "write a synthetic interaction log");
  add_common(generate_cmd, gen.common, true);
  generate_cmd->add_option("--out", gen.out, "output directory")->required();
  generate_cmd->add_option("--format", gen.format, "jsonl|csv")
      ->check(CLI::IsMember({"jsonl", "csv"}));

  TrainArgs tr;
  CLI::App* train_cmd = app.add_subcommand("train", "train one model variant");
  add_common(train_cmd, tr.common, true);
  train_cmd->add_option("--data", tr.data, "interaction file or generate output")
      ->required()
      ->check(CLI::ExistingPath);
  train_cmd->add_option("--out", tr.out, "run directory")->required();
  train_cmd->add_option("--variant", tr.variant, "dmf|bow|bow-shared");
  train_cmd->add_option("--ks", tr.ks, "final evaluation cutoffs, comma separated");
  train_cmd->add_option("--epochs", tr.epochs, "override train.epochs")
      ->check(CLI::PositiveNumber);

  EvaluateArgs ev;
  CLI::App* evaluate_cmd = app.add_subcommand("evaluate", "score a checkpoint on validation data");
  add_common(evaluate_cmd, ev.common, false);
  evaluate_cmd->add_option("--checkpoint", ev.checkpoint, "checkpoint file or run directory")
      ->required()
      ->check(CLI::ExistingPath);
  evaluate_cmd->add_option("--data", ev.data, "interaction file or generate output")
      ->required()
      ->check(CLI::ExistingPath);
  evaluate_cmd->add_option("--ks", ev.ks, "cutoffs, comma separated");
  evaluate_cmd->add_option("--out", ev.out, "write the report here instead of stdout");
  evaluate_cmd->add_flag("--exclude-seen", ev.exclude_seen,
                         "drop each user's training stores from the candidates");

  CompareArgs cmp;
  CLI::App* compare_cmd = app.add_subcommand("compare", "tabulate several runs");
  compare_cmd->add_option("runs", cmp.runs, "run directories")->required();
  compare_cmd->add_option("--out", cmp.out, "also write the table as CSV");
  compare_cmd->add_option("--threshold", cmp.threshold,
                          "hit-rate threshold (default: 0.8 x best final logged value)");
  compare_cmd->add_option("--threshold-k", cmp.threshold_k, "k of the threshold metric");
  compare_cmd->add_flag("--force", cmp.force, "replace an existing --out file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  spdlog::set_level(spdlog::level::from_str(log_level));
  try {
    if (generate_cmd->parsed()) return cmd_generate(gen, out);
    if (train_cmd->parsed()) return cmd_train(tr, out);
    if (evaluate_cmd->parsed()) return cmd_evaluate(ev, out);
    return cmd_compare(cmp, out);
  } catch (const Error& e) {
    err << "ttr: " << e.what() << '\n';
    return is_usage_error(e.code()) ? kExitUsage : kExitFailure;
  } catch (const std::exception& e) {
    err << "ttr: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace ttr::cli
