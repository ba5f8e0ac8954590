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
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace ttr {

using Vector = Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Pooling { kMean, kSum };

inline constexpr double kDefaultInitScale = 0.05;
inline constexpr double kDefaultAdagradEps = 1e-10;

// Row-per-ID parameter matrix with per-parameter AdaGrad accumulators.
// Weights are initialized i.i.d. uniform in [-init_scale, init_scale].
class EmbeddingTable {
 public:
  EmbeddingTable(std::size_t rows, std::size_t dim, std::uint64_t seed,
                 double init_scale = kDefaultInitScale);

  std::size_t rows() const noexcept { return static_cast<std::size_t>(weights_.rows()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(weights_.cols()); }
  std::uint64_t seed() const noexcept { return seed_; }

  const RowMatrix& weights() const noexcept { return weights_; }
  const RowMatrix& accumulators() const noexcept { return accumulators_; }

  // Direct writes, for tests and checkpoint loading.
  void set_row(std::size_t idx, std::span<const double> values);
  void set_accumulator_row(std::size_t idx, std::span<const double> values);

  void check_index(std::size_t idx) const;

 private:
  friend void adagrad_update(EmbeddingTable&, std::size_t, std::span<const double>,
                             double, double);

  RowMatrix weights_;
  RowMatrix accumulators_;
  std::uint64_t seed_ = 0;
};

// Identity reference to a table. Two handles may alias one table; writes
// through either are visible through both. Layer sharing is built on this.
using TableHandle = std::shared_ptr<EmbeddingTable>;

TableHandle new_table(std::size_t rows, std::size_t dim, std::uint64_t seed,
                      double init_scale = kDefaultInitScale);

Vector lookup(const EmbeddingTable& table, std::size_t idx);

// Mean (or sum) of the bag's rows; an empty bag gives the zero vector.
Vector pooled_lookup(const EmbeddingTable& table, std::span<const std::size_t> bag,
                     Pooling pooling = Pooling::kMean);

// acc += g*g; w -= lr * g / (sqrt(acc) + eps), using the incremented acc.
void adagrad_update(EmbeddingTable& table, std::size_t idx, std::span<const double> grad,
                    double lr, double eps = kDefaultAdagradEps);

struct RowGradient {
  std::size_t row = 0;
  Vector grad;
};

// Gradient of pooled_lookup w.r.t. each distinct bag row, ascending by row.
std::vector<RowGradient> pooled_backward(const EmbeddingTable& table,
                                         std::span<const std::size_t> bag,
                                         const Vector& upstream,
                                         Pooling pooling = Pooling::kMean);

// Sums per-row gradients so that each row receives exactly one AdaGrad step
// per batch, independent of accumulation order.
class SparseGradient {
 public:
  explicit SparseGradient(std::size_t dim) : dim_(dim) {}

  void add(std::size_t row, const Vector& grad);
  void add(std::size_t row, const Vector& grad, double scale);

  std::size_t touched_rows() const noexcept { return rows_.size(); }
  const std::map<std::size_t, Vector>& rows() const noexcept { return rows_; }

  // Rows are applied in ascending order.
  void apply_adagrad(EmbeddingTable& table, double lr, double eps = kDefaultAdagradEps) const;

 private:
  std::size_t dim_;
  std::map<std::size_t, Vector> rows_;
};

// Binary table block: "TTEB", version u32, rows u64, dim u64, flags u32,
// then row-major weights and accumulators as little-endian float32.
inline constexpr std::uint32_t kTableFormatVersion = 1;
inline constexpr std::uint32_t kTableFlagAccumulators = 1u;

void write_table(std::ostream& out, const EmbeddingTable& table);
EmbeddingTable read_table(std::istream& in);

// Size in bytes of a serialized table block.
std::uint64_t table_block_size(std::size_t rows, std::size_t dim);

}  // namespace ttr
