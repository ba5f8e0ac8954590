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

// Interaction logs, ID vocabularies, the temporal split and Bag-of-Stores
// user features.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace ttr {

using Timestamp = std::int64_t;
inline constexpr Timestamp kSecondsPerDay = 86400;

struct InteractionRecord {
  std::string user_id;
  std::string store_id;
  Timestamp timestamp = 0;
  std::optional<std::string> source;

  bool operator==(const InteractionRecord&) const = default;
};

enum class InteractionFormat { kJsonl, kCsv };

std::optional<InteractionFormat> parse_format(std::string_view name);
std::string_view to_string(InteractionFormat format);

struct IngestOptions {
  // Malformed lines tolerated before ingestion fails. With 0 the first bad
  // line raises ParseError; above 0 bad lines are skipped and reported, and
  // one more than the tolerance raises TooManyMalformedLines.
  std::size_t max_malformed = 0;
};

struct MalformedLine {
  std::size_t line = 0;  // 1-based
  std::string reason;
};

struct IngestResult {
  std::vector<InteractionRecord> records;
  std::vector<MalformedLine> malformed;
};

IngestResult ingest_interactions(const std::filesystem::path& path,
                                 InteractionFormat format,
                                 const IngestOptions& options = {});
IngestResult read_interactions(std::istream& in, InteractionFormat format,
                               const IngestOptions& options = {});

void write_interactions(std::ostream& out,
                        const std::vector<InteractionRecord>& records,
                        InteractionFormat format);
void write_interactions(const std::filesystem::path& path,
                        const std::vector<InteractionRecord>& records,
                        InteractionFormat format);

// Dense token <-> index bijection, indices assigned in insertion order.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens);

  // Returns the existing index when the token is already present.
  std::size_t add(std::string_view token);

  std::optional<std::size_t> find(std::string_view token) const;
  std::size_t index_of(std::string_view token) const;  // throws if absent
  const std::string& token(std::size_t index) const;

  std::size_t size() const noexcept { return tokens_.size(); }
  bool empty() const noexcept { return tokens_.empty(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  struct Hash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const noexcept {
      return std::hash<std::string_view>{}(s);
    }
  };
  std::unordered_map<std::string, std::size_t, Hash, std::equal_to<>> index_;
  std::vector<std::string> tokens_;
};

struct Vocabularies {
  Vocabulary users;
  Vocabulary stores;
};

Vocabularies build_vocabularies(const std::vector<InteractionRecord>& records);

struct SplitDataset {
  std::vector<InteractionRecord> train;
  std::vector<InteractionRecord> validation;
  Timestamp split_time = 0;
};

// split_time = max(ts) - validation_days * 86400. Records keep their order.
// Logs a warning when either side comes out empty.
SplitDataset temporal_split(const std::vector<InteractionRecord>& records,
                            int validation_days = 7);

// A user's previously ordered stores, most recent first. Repeat visits are
// kept as separate entries.
struct BagOfStores {
  std::vector<std::size_t> store_indices;
  Timestamp as_of = 0;

  bool operator==(const BagOfStores&) const = default;
};

struct BowOptions {
  int window_days = 120;
  std::size_t max_bag_len = 50;
};

// One bag per user vocabulary index. Records newer than `as_of` are not
// used. Ties in timestamp keep input order.
std::vector<BagOfStores> build_bow_features(
    const std::vector<InteractionRecord>& train, const Vocabulary& users,
    const Vocabulary& stores, Timestamp as_of, const BowOptions& options = {});

// Feature snapshot export: one JSON object per user with keys "user",
// "bag" (store tokens, most recent first) and "as_of".
void write_feature_snapshot(std::ostream& out,
                            const std::vector<BagOfStores>& features,
                            const Vocabulary& users, const Vocabulary& stores);
std::vector<BagOfStores> read_feature_snapshot(std::istream& in,
                                               const Vocabulary& users,
                                               const Vocabulary& stores);

}  // namespace ttr
