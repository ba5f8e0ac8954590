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
#include "ttr/interactions.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "ttr/error.hpp"

namespace ttr {

using json = nlohmann::json;

std::optional<InteractionFormat> parse_format(std::string_view name) {
  if (name == "jsonl") return InteractionFormat::kJsonl;
  if (name == "csv") return InteractionFormat::kCsv;
  return std::nullopt;
}

std::string_view to_string(InteractionFormat format) {
  return format == InteractionFormat::kJsonl ? "jsonl" : "csv";
}

namespace {

// Collects malformed lines and enforces the tolerance.
class MalformedTracker {
 public:
  MalformedTracker(IngestResult& result, std::size_t tolerance)
      : result_(result), tolerance_(tolerance) {}

  void report(std::size_t line, std::string reason) {
    if (tolerance_ == 0) throw Error(ErrorCode::kParseError, reason, line);
    result_.malformed.push_back({line, std::move(reason)});
    if (result_.malformed.size() > tolerance_) {
      fail(ErrorCode::kTooManyMalformedLines,
           std::to_string(result_.malformed.size()) +
               " malformed lines exceed tolerance of " +
               std::to_string(tolerance_) + " (last at line " +
               std::to_string(line) + ": " + result_.malformed.back().reason + ")");
    }
  }

 private:
  IngestResult& result_;
  std::size_t tolerance_;
};

std::optional<std::string> parse_jsonl_line(const std::string& line,
                                            InteractionRecord& out) {
  const json doc = json::parse(line, nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded()) return "invalid JSON";
  if (!doc.is_object()) return "expected a JSON object";

  const auto user = doc.find("user");
  if (user == doc.end() || !user->is_string()) return "\"user\" must be a string";
  const auto store = doc.find("store");
  if (store == doc.end() || !store->is_string()) return "\"store\" must be a string";
  const auto ts = doc.find("ts");
  if (ts == doc.end() || !ts->is_number_integer()) return "\"ts\" must be an integer";

  out.user_id = user->get<std::string>();
  out.store_id = store->get<std::string>();
  if (out.user_id.empty()) return "\"user\" is empty";
  if (out.store_id.empty()) return "\"store\" is empty";
  if (ts->is_number_unsigned()) {
    const auto v = ts->get<std::uint64_t>();
    if (v > static_cast<std::uint64_t>(INT64_MAX)) return "\"ts\" out of range";
    out.timestamp = static_cast<Timestamp>(v);
  } else {
    out.timestamp = ts->get<std::int64_t>();
  }
  if (out.timestamp < 0) return "\"ts\" is negative";

  out.source.reset();
  if (const auto src = doc.find("source"); src != doc.end() && !src->is_null()) {
    if (!src->is_string()) return "\"source\" must be a string";
    out.source = src->get<std::string>();
  }
  return std::nullopt;
}

void read_jsonl(std::istream& in, IngestResult& result, MalformedTracker& tracker) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    InteractionRecord record;
    if (auto reason = parse_jsonl_line(line, record)) {
      tracker.report(line_no, std::move(*reason));
      continue;
    }
    result.records.push_back(std::move(record));
  }
}

struct CsvRow {
  std::vector<std::string> fields;
  std::size_t line = 0;
  bool malformed = false;
};

// RFC-4180 reader. Quoted fields may contain separators, doubled quotes and
// line breaks; `line` is the physical line the row starts on.
class CsvReader {
 public:
  explicit CsvReader(std::istream& in) : in_(in) {}

  std::optional<CsvRow> next() {
    CsvRow row;
    int c = in_.peek();
    if (c == EOF) return std::nullopt;
    row.line = line_ + 1;

    std::string field;
    bool in_quotes = false;
    bool was_quoted = false;
    while (true) {
      c = in_.get();
      if (c == EOF) {
        if (in_quotes) row.malformed = true;
        row.fields.push_back(std::move(field));
        ++line_;
        return row;
      }
      const char ch = static_cast<char>(c);
      if (in_quotes) {
        if (ch == '"') {
          if (in_.peek() == '"') {
            in_.get();
            field.push_back('"');
          } else {
            in_quotes = false;
          }
        } else {
          if (ch == '\n') ++line_;
          field.push_back(ch);
        }
        continue;
      }
      if (ch == '"') {
        if (!field.empty() || was_quoted) row.malformed = true;
        in_quotes = true;
        was_quoted = true;
      } else if (ch == ',') {
        row.fields.push_back(std::move(field));
        field.clear();
        was_quoted = false;
      } else if (ch == '\r' && in_.peek() == '\n') {
        continue;
      } else if (ch == '\n') {
        row.fields.push_back(std::move(field));
        ++line_;
        return row;
      } else {
        if (was_quoted) row.malformed = true;
        field.push_back(ch);
      }
    }
  }

 private:
  std::istream& in_;
  std::size_t line_ = 0;
};

bool is_blank(const CsvRow& row) {
  return row.fields.size() == 1 && row.fields[0].empty();
}

std::optional<std::string> parse_csv_row(const CsvRow& row, bool has_source,
                                         InteractionRecord& out) {
  if (row.malformed) return "malformed quoting";
  const std::size_t expected = has_source ? 4 : 3;
  if (row.fields.size() != expected) {
    return "expected " + std::to_string(expected) + " fields, got " +
           std::to_string(row.fields.size());
  }
  out.user_id = row.fields[0];
  out.store_id = row.fields[1];
  if (out.user_id.empty()) return "user is empty";
  if (out.store_id.empty()) return "store is empty";
  const std::string& ts = row.fields[2];
  Timestamp value = 0;
  const auto [ptr, ec] = std::from_chars(ts.data(), ts.data() + ts.size(), value);
  if (ec != std::errc{} || ptr != ts.data() + ts.size() || ts.empty()) {
    return "ts is not an integer: '" + ts + "'";
  }
  if (value < 0) return "ts is negative";
  out.timestamp = value;
  out.source.reset();
  if (has_source && !row.fields[3].empty()) out.source = row.fields[3];
  return std::nullopt;
}

void read_csv(std::istream& in, IngestResult& result, MalformedTracker& tracker) {
  CsvReader reader(in);
  auto header = reader.next();
  while (header && is_blank(*header)) header = reader.next();
  if (!header) return;

  const std::vector<std::string> base{"user", "store", "ts"};
  const std::vector<std::string> with_source{"user", "store", "ts", "source"};
  bool has_source = false;
  if (header->fields == with_source) {
    has_source = true;
  } else if (header->fields != base) {
    throw Error(ErrorCode::kParseError,
                "CSV header must be 'user,store,ts[,source]'", header->line);
  }

  while (auto row = reader.next()) {
    if (is_blank(*row)) continue;
    InteractionRecord record;
    if (auto reason = parse_csv_row(*row, has_source, record)) {
      tracker.report(row->line, std::move(*reason));
      continue;
    }
    result.records.push_back(std::move(record));
  }
}

void write_csv_field(std::ostream& out, std::string_view value) {
  if (value.find_first_of(",\"\r\n") == std::string_view::npos) {
    out << value;
    return;
  }
  out << '"';
  for (char c : value) {
    if (c == '"') out << '"';
    out << c;
  }
  out << '"';
}

}  // namespace

IngestResult read_interactions(std::istream& in, InteractionFormat format,
                               const IngestOptions& options) {
  IngestResult result;
  MalformedTracker tracker(result, options.max_malformed);
  if (format == InteractionFormat::kJsonl) {
    read_jsonl(in, result, tracker);
  } else {
    read_csv(in, result, tracker);
  }
  if (!result.malformed.empty()) {
    spdlog::warn("skipped {} malformed interaction lines", result.malformed.size());
  }
  return result;
}

IngestResult ingest_interactions(const std::filesystem::path& path,
                                 InteractionFormat format,
                                 const IngestOptions& options) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    fail(ErrorCode::kFileNotFound, path.string());
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIoError, "cannot open " + path.string());
  return read_interactions(in, format, options);
}

void write_interactions(std::ostream& out,
                        const std::vector<InteractionRecord>& records,
                        InteractionFormat format) {
  if (format == InteractionFormat::kJsonl) {
    for (const auto& r : records) {
      json doc{{"user", r.user_id}, {"store", r.store_id}, {"ts", r.timestamp}};
      if (r.source) doc["source"] = *r.source;
      out << doc.dump() << '\n';
    }
    return;
  }
  const bool has_source = std::any_of(records.begin(), records.end(),
                                      [](const auto& r) { return r.source.has_value(); });
  out << (has_source ? "user,store,ts,source\n" : "user,store,ts\n");
  for (const auto& r : records) {
    write_csv_field(out, r.user_id);
    out << ',';
    write_csv_field(out, r.store_id);
    out << ',' << r.timestamp;
    if (has_source) {
      out << ',';
      if (r.source) write_csv_field(out, *r.source);
    }
    out << '\n';
  }
}

void write_interactions(const std::filesystem::path& path,
                        const std::vector<InteractionRecord>& records,
                        InteractionFormat format) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoError, "cannot write " + path.string());
  write_interactions(out, records, format);
  if (!out) fail(ErrorCode::kIoError, "write failed: " + path.string());
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) {
  for (auto& t : tokens) {
    if (find(t)) fail(ErrorCode::kInvalidArgument, "duplicate vocabulary token: " + t);
    add(t);
  }
}

std::size_t Vocabulary::add(std::string_view token) {
  if (auto it = index_.find(token); it != index_.end()) return it->second;
  const std::size_t index = tokens_.size();
  tokens_.emplace_back(token);
  index_.emplace(tokens_.back(), index);
  return index;
}

std::optional<std::size_t> Vocabulary::find(std::string_view token) const {
  if (auto it = index_.find(token); it != index_.end()) return it->second;
  return std::nullopt;
}

std::size_t Vocabulary::index_of(std::string_view token) const {
  if (auto index = find(token)) return *index;
  fail(ErrorCode::kInvalidArgument, "unknown token: " + std::string(token));
}

const std::string& Vocabulary::token(std::size_t index) const {
  require(index < tokens_.size(), ErrorCode::kIndexOutOfRange,
          "vocabulary index " + std::to_string(index));
  return tokens_[index];
}

Vocabularies build_vocabularies(const std::vector<InteractionRecord>& records) {
  Vocabularies vocab;
  for (const auto& r : records) {
    vocab.users.add(r.user_id);
    vocab.stores.add(r.store_id);
  }
  return vocab;
}

SplitDataset temporal_split(const std::vector<InteractionRecord>& records,
                            int validation_days) {
  require(validation_days >= 1, ErrorCode::kInvalidArgument,
          "validation_days must be >= 1");
  require(!records.empty(), ErrorCode::kEmptyDataset, "no interactions to split");

  Timestamp max_ts = records.front().timestamp;
  for (const auto& r : records) max_ts = std::max(max_ts, r.timestamp);

  SplitDataset split;
  split.split_time = max_ts - static_cast<Timestamp>(validation_days) * kSecondsPerDay;
  for (const auto& r : records) {
    (r.timestamp < split.split_time ? split.train : split.validation).push_back(r);
  }
  if (split.train.empty()) spdlog::warn("temporal split: train partition is empty");
  if (split.validation.empty()) spdlog::warn("temporal split: validation partition is empty");
  return split;
}

std::vector<BagOfStores> build_bow_features(
    const std::vector<InteractionRecord>& train, const Vocabulary& users,
    const Vocabulary& stores, Timestamp as_of, const BowOptions& options) {
  require(options.window_days >= 1, ErrorCode::kInvalidArgument, "window_days must be >= 1");
  require(options.max_bag_len >= 1, ErrorCode::kInvalidArgument, "max_bag_len must be >= 1");

  struct Event {
    Timestamp ts;
    std::size_t order;
    std::size_t store;
  };
  std::vector<std::vector<Event>> per_user(users.size());
  const Timestamp window = static_cast<Timestamp>(options.window_days) * kSecondsPerDay;

  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto& r = train[i];
    const auto store = stores.find(r.store_id);
    if (!store) fail(ErrorCode::kUnknownStore, r.store_id);
    const auto user = users.find(r.user_id);
    if (!user) fail(ErrorCode::kUnknownUser, r.user_id);
    if (r.timestamp > as_of || as_of - r.timestamp > window) continue;
    per_user[*user].push_back({r.timestamp, i, *store});
  }

  std::vector<BagOfStores> bags(users.size());
  for (std::size_t u = 0; u < users.size(); ++u) {
    auto& events = per_user[u];
    std::stable_sort(events.begin(), events.end(),
                     [](const Event& a, const Event& b) { return a.ts > b.ts; });
    const std::size_t n = std::min(events.size(), options.max_bag_len);
    bags[u].as_of = as_of;
    bags[u].store_indices.reserve(n);
    for (std::size_t k = 0; k < n; ++k) bags[u].store_indices.push_back(events[k].store);
  }
  return bags;
}

void write_feature_snapshot(std::ostream& out,
                            const std::vector<BagOfStores>& features,
                            const Vocabulary& users, const Vocabulary& stores) {
  require(features.size() == users.size(), ErrorCode::kVocabularyMismatch,
          "feature map size differs from user vocabulary");
  for (std::size_t u = 0; u < features.size(); ++u) {
    json bag = json::array();
    for (auto s : features[u].store_indices) bag.push_back(stores.token(s));
    out << json{{"user", users.token(u)}, {"bag", std::move(bag)}, {"as_of", features[u].as_of}}
               .dump()
        << '\n';
  }
}

std::vector<BagOfStores> read_feature_snapshot(std::istream& in,
                                               const Vocabulary& users,
                                               const Vocabulary& stores) {
  std::vector<BagOfStores> bags(users.size());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const json doc = json::parse(line, nullptr, false);
    if (doc.is_discarded() || !doc.is_object() || !doc.contains("user") ||
        !doc.contains("bag") || !doc.contains("as_of")) {
      throw Error(ErrorCode::kParseError, "bad feature snapshot line", line_no);
    }
    try {
      const auto user = users.find(doc.at("user").get<std::string>());
      if (!user) fail(ErrorCode::kUnknownUser, doc.at("user").get<std::string>());
      auto& bag = bags[*user];
      bag.as_of = doc.at("as_of").get<Timestamp>();
      for (const auto& token : doc.at("bag")) {
        const auto store = stores.find(token.get<std::string>());
        if (!store) fail(ErrorCode::kUnknownStore, token.get<std::string>());
        bag.store_indices.push_back(*store);
      }
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kParseError, e.what(), line_no);
    }
  }
  return bags;
}

}  // namespace ttr
