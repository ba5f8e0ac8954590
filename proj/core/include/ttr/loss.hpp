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

// In-batch sampled softmax with temperature, logQ correction, accidental-hit
// removal and a FIFO cache of cross-batch negatives.
//
// For a batch of B (query, positive item) pairs the candidate columns are the
// B in-batch item embeddings followed by the cached embeddings. Row i's
// positive is column i. With
//
//   l_ij = (q_i . e_j) / temperature - [use_logq] * log p(id_j)
//
// and masked columns removed from the normalizer, the loss is
//
//   L = -(1/B) sum_i (l_ii - logsumexp_j l_ij).

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ttr/embedding.hpp"

namespace ttr {

// Smoothed empirical sampling probabilities:
//   p(i) = (count_i + k) / (total + k * S).
class FrequencyTable {
 public:
  explicit FrequencyTable(std::size_t n_items, double smoothing = 1.0);

  void update(std::span<const std::size_t> items);

  double prob(std::size_t item) const;
  double log_prob(std::size_t item) const;

  std::size_t size() const noexcept { return counts_.size(); }
  std::uint64_t count(std::size_t item) const;
  std::uint64_t total() const noexcept { return total_; }
  double smoothing() const noexcept { return smoothing_; }
  const std::vector<std::uint64_t>& counts() const noexcept { return counts_; }

  // FNV-1a over counts and total; lets callers check the table is unchanged.
  std::uint64_t fingerprint() const;

 private:
  std::vector<std::uint64_t> counts_;
  std::uint64_t total_ = 0;
  double smoothing_;
};

// FIFO of detached (item id, embedding) snapshots, stored as a ring buffer.
class NegativeCache {
 public:
  struct Entry {
    std::size_t id;
    Vector embedding;
  };

  explicit NegativeCache(std::size_t capacity = 6144) : capacity_(capacity) {}

  // Appends in order; the oldest entries are evicted beyond capacity. Every
  // embedding must have the dim of the first one pushed.
  void push(std::span<const std::size_t> ids, std::span<const Vector> embeddings);
  void push(std::span<const std::size_t> ids, const RowMatrix& embeddings);

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t size() const noexcept { return size_; }
  bool empty() const noexcept { return size_ == 0; }
  void clear();

  // Entries oldest first (copies).
  std::vector<Entry> entries() const;

  // Raw storage: the first size() rows are live, in slot order rather than
  // insertion order.
  Eigen::Ref<const RowMatrix> slots() const {
    return storage_.topRows(static_cast<Eigen::Index>(size_));
  }
  std::span<const std::size_t> slot_ids() const { return {ids_.data(), size_}; }

 private:
  void push_row(std::size_t id, const Eigen::Ref<const Eigen::RowVectorXd>& row);

  std::size_t capacity_;
  std::size_t size_ = 0;
  std::size_t next_ = 0;  // slot written by the next push
  std::vector<std::size_t> ids_;
  RowMatrix storage_;
};

// Row-major B x C boolean matrix; true means the cell is excluded.
class HitMask {
 public:
  HitMask(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), cells_(rows * cols, 0) {}

  bool operator()(std::size_t i, std::size_t j) const { return cells_[i * cols_ + j] != 0; }
  void set(std::size_t i, std::size_t j) { cells_[i * cols_ + j] = 1; }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t count() const;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<std::uint8_t> cells_;
};

// mask(i, j) iff candidates[j] == positives[i] and j != i. Column i is the
// designated positive of row i and is never masked.
HitMask accidental_hit_mask(std::span<const std::size_t> positives,
                            std::span<const std::size_t> candidates);

struct LossOptions {
  double temperature = 0.1;
  bool use_logq = true;
  bool use_cache = true;
  bool use_mask = true;
};

struct LossOutput {
  double loss = 0.0;
  RowMatrix grad_query;  // B x dim
  RowMatrix grad_item;   // B x dim, in-batch items only
  std::size_t masked = 0;
  std::size_t candidates = 0;
};

// Loss and gradients only; the cache is read, never modified.
LossOutput softmax_loss_and_grad(const RowMatrix& queries, const RowMatrix& items,
                                 std::span<const std::size_t> positives,
                                 const NegativeCache& cache, const FrequencyTable& freq,
                                 const LossOptions& options);

// As softmax_loss_and_grad, then pushes the batch's (id, embedding) pairs
// into the cache when options.use_cache is set.
LossOutput inbatch_softmax_loss(const RowMatrix& queries, const RowMatrix& items,
                                std::span<const std::size_t> positives, NegativeCache& cache,
                                const FrequencyTable& freq, const LossOptions& options);

}  // namespace ttr
