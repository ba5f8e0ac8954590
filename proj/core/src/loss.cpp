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
#include "ttr/loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <unordered_map>

#include "ttr/error.hpp"

namespace ttr {

FrequencyTable::FrequencyTable(std::size_t n_items, double smoothing)
    : counts_(n_items, 0), smoothing_(smoothing) {
  require(n_items >= 1, ErrorCode::kInvalidArgument, "frequency table needs >= 1 item");
  require(smoothing >= 0.0 && std::isfinite(smoothing), ErrorCode::kInvalidArgument,
          "smoothing must be non-negative");
}

void FrequencyTable::update(std::span<const std::size_t> items) {
  for (auto item : items) {
    require(item < counts_.size(), ErrorCode::kIndexOutOfRange,
            "frequency item " + std::to_string(item));
  }
  for (auto item : items) ++counts_[item];
  total_ += items.size();
}

std::uint64_t FrequencyTable::count(std::size_t item) const {
  require(item < counts_.size(), ErrorCode::kIndexOutOfRange,
          "frequency item " + std::to_string(item));
  return counts_[item];
}

double FrequencyTable::prob(std::size_t item) const {
  const double denom =
      static_cast<double>(total_) + smoothing_ * static_cast<double>(counts_.size());
  require(denom > 0.0, ErrorCode::kInvalidArgument,
          "probability undefined: no counts and no smoothing");
  return (static_cast<double>(count(item)) + smoothing_) / denom;
}

double FrequencyTable::log_prob(std::size_t item) const { return std::log(prob(item)); }

std::uint64_t FrequencyTable::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  };
  for (auto c : counts_) mix(c);
  mix(total_);
  return h;
}

void NegativeCache::push_row(std::size_t id, const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  if (storage_.rows() == 0) {
    storage_.resize(static_cast<Eigen::Index>(capacity_), row.size());
    ids_.assign(capacity_, 0);
  }
  require(row.size() == storage_.cols(), ErrorCode::kDimensionMismatch,
          "cache push: embedding dim differs from cached entries");
  storage_.row(static_cast<Eigen::Index>(next_)) = row;
  ids_[next_] = id;
  next_ = (next_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
}

void NegativeCache::push(std::span<const std::size_t> ids,
                         std::span<const Vector> embeddings) {
  require(ids.size() == embeddings.size(), ErrorCode::kLengthMismatch,
          "cache push: " + std::to_string(ids.size()) + " ids, " +
              std::to_string(embeddings.size()) + " embeddings");
  if (capacity_ == 0) return;
  // Only the newest `capacity_` entries can survive.
  const std::size_t skip = ids.size() > capacity_ ? ids.size() - capacity_ : 0;
  for (std::size_t i = skip; i < ids.size(); ++i) push_row(ids[i], embeddings[i].transpose());
}

void NegativeCache::push(std::span<const std::size_t> ids, const RowMatrix& embeddings) {
  require(ids.size() == static_cast<std::size_t>(embeddings.rows()),
          ErrorCode::kLengthMismatch, "cache push: id/embedding count mismatch");
  if (capacity_ == 0) return;
  const std::size_t skip = ids.size() > capacity_ ? ids.size() - capacity_ : 0;
  for (std::size_t i = skip; i < ids.size(); ++i) {
    push_row(ids[i], embeddings.row(static_cast<Eigen::Index>(i)));
  }
}

void NegativeCache::clear() {
  size_ = 0;
  next_ = 0;
}

std::vector<NegativeCache::Entry> NegativeCache::entries() const {
  std::vector<Entry> out;
  out.reserve(size_);
  const std::size_t oldest = size_ < capacity_ ? 0 : next_;
  for (std::size_t k = 0; k < size_; ++k) {
    const std::size_t slot = (oldest + k) % capacity_;
    out.push_back({ids_[slot], storage_.row(static_cast<Eigen::Index>(slot)).transpose()});
  }
  return out;
}

std::size_t HitMask::count() const {
  return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), std::uint8_t{1}));
}

HitMask accidental_hit_mask(std::span<const std::size_t> positives,
                            std::span<const std::size_t> candidates) {
  HitMask mask(positives.size(), candidates.size());
  std::unordered_map<std::size_t, std::vector<std::size_t>> columns_by_id;
  for (std::size_t j = 0; j < candidates.size(); ++j) columns_by_id[candidates[j]].push_back(j);
  for (std::size_t i = 0; i < positives.size(); ++i) {
    const auto it = columns_by_id.find(positives[i]);
    if (it == columns_by_id.end()) continue;
    for (auto j : it->second) {
      if (j != i) mask.set(i, j);
    }
  }
  return mask;
}

LossOutput softmax_loss_and_grad(const RowMatrix& queries, const RowMatrix& items,
                                 std::span<const std::size_t> positives,
                                 const NegativeCache& cache, const FrequencyTable& freq,
                                 const LossOptions& options) {
  const auto batch = static_cast<std::size_t>(queries.rows());
  require(batch >= 1, ErrorCode::kEmptyBatch, "batch is empty");
  require(options.temperature > 0.0 && std::isfinite(options.temperature),
          ErrorCode::kInvalidArgument, "temperature must be positive");
  require(static_cast<std::size_t>(items.rows()) == batch && positives.size() == batch,
          ErrorCode::kLengthMismatch, "queries, items and positives must have B rows");
  require(queries.cols() == items.cols(), ErrorCode::kDimensionMismatch,
          "query and item dims differ");
  require(queries.allFinite() && items.allFinite(), ErrorCode::kNonFiniteInput,
          "non-finite embedding in batch");
  const Eigen::Index dim = queries.cols();

  const std::size_t n_cached = options.use_cache ? cache.size() : 0;
  const std::size_t n_cols = batch + n_cached;
  const auto cached = cache.slots();
  if (n_cached > 0) {
    require(cached.cols() == dim, ErrorCode::kDimensionMismatch,
            "cached embedding dim differs from batch");
  }
  std::vector<std::size_t> ids(positives.begin(), positives.end());
  if (n_cached > 0) ids.insert(ids.end(), cache.slot_ids().begin(), cache.slot_ids().end());

  const auto B = static_cast<Eigen::Index>(batch);
  const auto C = static_cast<Eigen::Index>(n_cached);
  const double inv_temp = 1.0 / options.temperature;
  RowMatrix logits(B, static_cast<Eigen::Index>(n_cols));
  logits.leftCols(B).noalias() = queries * items.transpose();
  if (n_cached > 0) logits.rightCols(C).noalias() = queries * cached.transpose();
  logits *= inv_temp;
  if (options.use_logq) {
    Eigen::RowVectorXd correction(static_cast<Eigen::Index>(n_cols));
    for (std::size_t j = 0; j < n_cols; ++j) {
      correction(static_cast<Eigen::Index>(j)) = freq.log_prob(ids[j]);
    }
    logits.rowwise() -= correction;
  }

  LossOutput out;
  out.candidates = n_cols;
  // Masked cells get -inf so they drop out of both the max and the sum.
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  constexpr double kMinExponent = -700.0;
  const double kMinTerm = std::exp(kMinExponent);
  if (options.use_mask) {
    std::unordered_map<std::size_t, std::vector<std::size_t>> rows_by_id;
    for (std::size_t i = 0; i < batch; ++i) rows_by_id[positives[i]].push_back(i);
    for (std::size_t j = 0; j < n_cols; ++j) {
      const auto it = rows_by_id.find(ids[j]);
      if (it == rows_by_id.end()) continue;
      for (auto i : it->second) {
        if (i == j) continue;
        logits(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = kNegInf;
        ++out.masked;
      }
    }
  }

  // logits becomes the masked softmax, then softmax minus one-hot.
  double total = 0.0;
  for (Eigen::Index i = 0; i < B; ++i) {
    auto row = logits.row(i);
    const double max_logit = row.maxCoeff();
    const double positive_logit = row(i);
    // Terms below exp(-700) are dropped; letting them through produces
    // subnormals that slow the gradient products down by orders of magnitude.
    row = (row.array() - max_logit).max(kMinExponent).exp().matrix();
    row = (row.array() > kMinTerm).select(row.array(), 0.0).matrix();
    const double sum = row.sum();
    total += std::log(sum) + (max_logit - positive_logit);
    row /= sum;
    row(i) -= 1.0;
  }
  if (!std::isfinite(total)) fail(ErrorCode::kNonFiniteInput, "loss overflowed");
  out.loss = std::max(0.0, total / static_cast<double>(batch));

  const double scale = inv_temp / static_cast<double>(batch);
  out.grad_query.noalias() = logits.leftCols(B) * items;
  if (n_cached > 0) out.grad_query.noalias() += logits.rightCols(C) * cached;
  out.grad_query *= scale;
  out.grad_item.noalias() = logits.leftCols(B).transpose() * queries;
  out.grad_item *= scale;
  return out;
}

LossOutput inbatch_softmax_loss(const RowMatrix& queries, const RowMatrix& items,
                                std::span<const std::size_t> positives, NegativeCache& cache,
                                const FrequencyTable& freq, const LossOptions& options) {
  LossOutput out = softmax_loss_and_grad(queries, items, positives, cache, freq, options);
  if (options.use_cache) cache.push(positives, items);
  return out;
}

}  // namespace ttr
