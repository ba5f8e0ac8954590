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
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ttr {

enum class ErrorCode {
  kInvalidArgument,  // precondition violation
  kFileNotFound,
  kIoError,
  kParseError,
  kTooManyMalformedLines,
  kEmptyDataset,
  kUnknownStore,
  kUnknownUser,
  kIndexOutOfRange,
  kNonFiniteGradient,
  kNonFiniteInput,
  kVariantMismatch,
  kDimensionMismatch,
  kLengthMismatch,
  kEmptyBatch,
  kVocabularyMismatch,
  kUnknownMetric,
  kFormatError,
  kKTooLarge,
  kEmptyRelevantSet,
  kNoEvaluableUsers,
  kConfigInvalid,
  kMissingReport,
};

std::string_view to_string(ErrorCode code);

// Single exception type for the library. `code()` identifies the failure,
// `line()` is set for parse errors.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message,
        std::optional<std::size_t> line = std::nullopt);

  ErrorCode code() const noexcept { return code_; }
  std::optional<std::size_t> line() const noexcept { return line_; }

 private:
  ErrorCode code_;
  std::optional<std::size_t> line_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace ttr
