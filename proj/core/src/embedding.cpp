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
#include "ttr/embedding.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <istream>
#include <ostream>
#include <string>

#include "ttr/error.hpp"
#include "ttr/random.hpp"

namespace ttr {

EmbeddingTable::EmbeddingTable(std::size_t rows, std::size_t dim, std::uint64_t seed,
                               double init_scale)
    : seed_(seed) {
  require(rows >= 1 && dim >= 1, ErrorCode::kInvalidArgument,
          "embedding table needs rows >= 1 and dim >= 1");
  require(init_scale >= 0.0 && std::isfinite(init_scale), ErrorCode::kInvalidArgument,
          "init_scale must be finite and non-negative");
  weights_.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dim));
  accumulators_.setZero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dim));
  Rng rng(seed);
  double* w = weights_.data();
  for (Eigen::Index i = 0; i < weights_.size(); ++i) {
    w[i] = init_scale == 0.0 ? 0.0 : rng.uniform(-init_scale, init_scale);
  }
}

void EmbeddingTable::check_index(std::size_t idx) const {
  require(idx < rows(), ErrorCode::kIndexOutOfRange,
          "row " + std::to_string(idx) + " of " + std::to_string(rows()));
}

void EmbeddingTable::set_row(std::size_t idx, std::span<const double> values) {
  check_index(idx);
  require(values.size() == dim(), ErrorCode::kDimensionMismatch, "set_row");
  for (std::size_t d = 0; d < values.size(); ++d) weights_(idx, d) = values[d];
}

void EmbeddingTable::set_accumulator_row(std::size_t idx, std::span<const double> values) {
  check_index(idx);
  require(values.size() == dim(), ErrorCode::kDimensionMismatch, "set_accumulator_row");
  for (std::size_t d = 0; d < values.size(); ++d) {
    require(values[d] >= 0.0, ErrorCode::kInvalidArgument, "negative accumulator");
    accumulators_(idx, d) = values[d];
  }
}

TableHandle new_table(std::size_t rows, std::size_t dim, std::uint64_t seed,
                      double init_scale) {
  return std::make_shared<EmbeddingTable>(rows, dim, seed, init_scale);
}

Vector lookup(const EmbeddingTable& table, std::size_t idx) {
  table.check_index(idx);
  return table.weights().row(static_cast<Eigen::Index>(idx)).transpose();
}

Vector pooled_lookup(const EmbeddingTable& table, std::span<const std::size_t> bag,
                     Pooling pooling) {
  Vector out = Vector::Zero(static_cast<Eigen::Index>(table.dim()));
  for (auto idx : bag) {
    table.check_index(idx);
    out += table.weights().row(static_cast<Eigen::Index>(idx)).transpose();
  }
  if (pooling == Pooling::kMean && !bag.empty()) out /= static_cast<double>(bag.size());
  return out;
}

void adagrad_update(EmbeddingTable& table, std::size_t idx, std::span<const double> grad,
                    double lr, double eps) {
  table.check_index(idx);
  require(grad.size() == table.dim(), ErrorCode::kDimensionMismatch, "adagrad_update");
  for (double g : grad) {
    require(std::isfinite(g), ErrorCode::kNonFiniteGradient,
            "gradient for row " + std::to_string(idx));
  }
  auto w = table.weights_.row(static_cast<Eigen::Index>(idx));
  auto acc = table.accumulators_.row(static_cast<Eigen::Index>(idx));
  for (std::size_t d = 0; d < grad.size(); ++d) {
    const double g = grad[d];
    if (g == 0.0) continue;
    const auto col = static_cast<Eigen::Index>(d);
    acc(col) += g * g;
    w(col) -= lr * g / (std::sqrt(acc(col)) + eps);
  }
}

std::vector<RowGradient> pooled_backward(const EmbeddingTable& table,
                                         std::span<const std::size_t> bag,
                                         const Vector& upstream, Pooling pooling) {
  require(static_cast<std::size_t>(upstream.size()) == table.dim(),
          ErrorCode::kDimensionMismatch, "pooled_backward upstream");
  std::map<std::size_t, std::size_t> counts;
  for (auto idx : bag) {
    table.check_index(idx);
    ++counts[idx];
  }
  std::vector<RowGradient> out;
  out.reserve(counts.size());
  const double denom = pooling == Pooling::kMean ? static_cast<double>(bag.size()) : 1.0;
  for (const auto& [row, count] : counts) {
    out.push_back({row, upstream * (static_cast<double>(count) / denom)});
  }
  return out;
}

void SparseGradient::add(std::size_t row, const Vector& grad) { add(row, grad, 1.0); }

void SparseGradient::add(std::size_t row, const Vector& grad, double scale) {
  require(static_cast<std::size_t>(grad.size()) == dim_, ErrorCode::kDimensionMismatch,
          "SparseGradient::add");
  auto [it, inserted] = rows_.try_emplace(row, Vector::Zero(static_cast<Eigen::Index>(dim_)));
  it->second += scale * grad;
}

void SparseGradient::apply_adagrad(EmbeddingTable& table, double lr, double eps) const {
  for (const auto& [row, grad] : rows_) {
    adagrad_update(table, row, std::span<const double>(grad.data(), grad.size()), lr, eps);
  }
}

namespace {

constexpr std::array<char, 4> kMagic{'T', 'T', 'E', 'B'};
constexpr std::uint64_t kHeaderBytes = 4 + 4 + 8 + 8 + 4;

template <typename T>
void put_le(std::ostream& out, T value) {
  std::array<char, sizeof(T)> bytes{};
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xff);
  }
  out.write(bytes.data(), bytes.size());
}

template <typename T>
T get_le(std::istream& in) {
  std::array<unsigned char, sizeof(T)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (in.gcount() != static_cast<std::streamsize>(sizeof(T))) {
    fail(ErrorCode::kFormatError, "truncated table block");
  }
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[i]) << (8 * i);
  return value;
}

void put_matrix(std::ostream& out, const RowMatrix& m) {
  const double* p = m.data();
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(p[i])));
  }
}

void get_matrix(std::istream& in, std::size_t rows, std::size_t dim, RowMatrix& m) {
  m.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dim));
  double* p = m.data();
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    p[i] = static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(in)));
  }
}

}  // namespace

std::uint64_t table_block_size(std::size_t rows, std::size_t dim) {
  return kHeaderBytes + 2ULL * rows * dim * sizeof(float);
}

void write_table(std::ostream& out, const EmbeddingTable& table) {
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kTableFormatVersion);
  put_le<std::uint64_t>(out, table.rows());
  put_le<std::uint64_t>(out, table.dim());
  put_le<std::uint32_t>(out, kTableFlagAccumulators);
  put_matrix(out, table.weights());
  put_matrix(out, table.accumulators());
  if (!out) fail(ErrorCode::kIoError, "failed writing table block");
}

EmbeddingTable read_table(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (in.gcount() != 4) fail(ErrorCode::kFormatError, "truncated table header");
  if (magic != kMagic) fail(ErrorCode::kFormatError, "bad table magic");
  const auto version = get_le<std::uint32_t>(in);
  if (version != kTableFormatVersion) {
    fail(ErrorCode::kFormatError, "unsupported table version " + std::to_string(version));
  }
  const auto rows = get_le<std::uint64_t>(in);
  const auto dim = get_le<std::uint64_t>(in);
  const auto flags = get_le<std::uint32_t>(in);
  if (rows == 0 || dim == 0) fail(ErrorCode::kFormatError, "empty table block");
  if (dim > (1ULL << 20) || rows > (1ULL << 40) / dim) {
    fail(ErrorCode::kFormatError, "implausible table shape");
  }

  EmbeddingTable table(rows, dim, 0, 0.0);
  RowMatrix weights;
  get_matrix(in, rows, dim, weights);
  RowMatrix acc = RowMatrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dim));
  if (flags & kTableFlagAccumulators) get_matrix(in, rows, dim, acc);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto i = static_cast<Eigen::Index>(r);
    table.set_row(r, std::span<const double>(weights.row(i).data(), dim));
    for (Eigen::Index d = 0; d < acc.cols(); ++d) {
      if (!(acc(i, d) >= 0.0)) fail(ErrorCode::kFormatError, "negative accumulator");
    }
    table.set_accumulator_row(r, std::span<const double>(acc.row(i).data(), dim));
  }
  return table;
}

}  // namespace ttr
