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
#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "support/error_matchers.hpp"
#include "ttr/embedding.hpp"

namespace ttr {
namespace {

void set(EmbeddingTable& t, std::size_t row, std::vector<double> v) { t.set_row(row, v); }

TEST(NewTable, SameSeedIsBitwiseIdentical) {
  const auto a = new_table(2, 3, 7);
  const auto b = new_table(2, 3, 7);
  EXPECT_EQ(a->weights(), b->weights());
  EXPECT_EQ(a->seed(), 7u);
  EXPECT_TRUE((a->accumulators().array() == 0.0).all());
  EXPECT_NE(new_table(2, 3, 8)->weights(), a->weights());
}

TEST(NewTable, WeightsWithinInitScale) {
  const auto t = new_table(50, 8, 1, 0.05);
  EXPECT_LE(t->weights().cwiseAbs().maxCoeff(), 0.05);
  EXPECT_GT(t->weights().cwiseAbs().maxCoeff(), 0.0);
}

TEST(NewTable, ZeroInitScaleGivesZeroWeights) {
  EXPECT_TRUE((new_table(4, 3, 1, 0.0)->weights().array() == 0.0).all());
}

TEST(NewTable, RejectsEmptyShape) {
  EXPECT_TTR_ERROR(new_table(0, 3, 1), ErrorCode::kInvalidArgument);
  EXPECT_TTR_ERROR(new_table(3, 0, 1), ErrorCode::kInvalidArgument);
}

TEST(Lookup, ReturnsRowCopy) {
  auto t = new_table(3, 3, 1);
  set(*t, 1, {1, 2, 3});
  EXPECT_EQ(lookup(*t, 1), Vector::LinSpaced(3, 1, 3));
  EXPECT_EQ(lookup(*t, 0), lookup(*t, 0));
  EXPECT_TTR_ERROR(lookup(*t, 3), ErrorCode::kIndexOutOfRange);
}

TEST(PooledLookup, Examples) {
  auto t = new_table(3, 2, 1);
  set(*t, 0, {2, 0});
  set(*t, 1, {0, 2});
  const std::vector<std::size_t> single{2}, pair{0, 1}, none{};
  EXPECT_EQ(pooled_lookup(*t, single), lookup(*t, 2));
  EXPECT_EQ(pooled_lookup(*t, pair), Vector::Ones(2));
  EXPECT_EQ(pooled_lookup(*t, none), Vector::Zero(2));
  EXPECT_EQ(pooled_lookup(*t, pair, Pooling::kSum), Vector::Constant(2, 2.0));
  const std::vector<std::size_t> bad{0, 3};
  EXPECT_TTR_ERROR(pooled_lookup(*t, bad), ErrorCode::kIndexOutOfRange);
}

TEST(Adagrad, SingleStep) {
  EmbeddingTable t(1, 1, 0, 0.0);
  set(t, 0, {1.0});
  const std::vector<double> g{0.5};
  adagrad_update(t, 0, g, 0.1);
  EXPECT_DOUBLE_EQ(t.accumulators()(0, 0), 0.25);
  EXPECT_NEAR(t.weights()(0, 0), 1.0 - 0.1 * 0.5 / (0.5 + 1e-10), 1e-15);
  EXPECT_NEAR(t.weights()(0, 0), 0.9, 1e-9);
}

TEST(Adagrad, TwoUnitSteps) {
  EmbeddingTable t(1, 1, 0, 0.0);
  set(t, 0, {3.0});
  const std::vector<double> g{1.0};
  adagrad_update(t, 0, g, 1.0);
  adagrad_update(t, 0, g, 1.0);
  EXPECT_NEAR(t.weights()(0, 0), 3.0 - 1.70711, 1e-5);
  EXPECT_NEAR(t.weights()(0, 0), 3.0 - 1.0 - 1.0 / std::sqrt(2.0), 1e-9);
}

TEST(Adagrad, ZeroGradientIsNoOp) {
  auto t = new_table(2, 3, 5);
  const RowMatrix w = t->weights();
  const std::vector<double> g(3, 0.0);
  adagrad_update(*t, 1, g, 0.5);
  EXPECT_EQ(t->weights(), w);
  EXPECT_TRUE((t->accumulators().array() == 0.0).all());
}

TEST(Adagrad, ZeroLearningRateStillAccumulates) {
  auto t = new_table(2, 2, 5);
  const RowMatrix w = t->weights();
  const std::vector<double> g{1.0, -2.0};
  adagrad_update(*t, 0, g, 0.0);
  EXPECT_EQ(t->weights(), w);
  EXPECT_DOUBLE_EQ(t->accumulators()(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(t->accumulators()(0, 1), 4.0);
}

TEST(Adagrad, Errors) {
  auto t = new_table(2, 2, 5);
  const std::vector<double> ok{1.0, 1.0};
  const std::vector<double> nan{1.0, std::nan("")};
  const std::vector<double> inf{HUGE_VAL, 0.0};
  EXPECT_TTR_ERROR(adagrad_update(*t, 2, ok, 0.1), ErrorCode::kIndexOutOfRange);
  EXPECT_TTR_ERROR(adagrad_update(*t, 0, nan, 0.1), ErrorCode::kNonFiniteGradient);
  EXPECT_TTR_ERROR(adagrad_update(*t, 0, inf, 0.1), ErrorCode::kNonFiniteGradient);
}

TEST(Adagrad, AccumulatorsNeverDecreaseAndWeightsStayFinite) {
  auto t = new_table(5, 4, 11);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal(0.0, 3.0);
  RowMatrix prev = t->accumulators();
  for (int step = 0; step < 500; ++step) {
    std::vector<double> g(4);
    for (auto& x : g) x = normal(rng);
    adagrad_update(*t, rng() % 5, g, 0.1);
    ASSERT_TRUE((t->accumulators().array() >= prev.array()).all());
    ASSERT_TRUE(t->weights().allFinite());
    prev = t->accumulators();
  }
}

TEST(Aliasing, UpdateThroughOneHandleVisibleThroughOther) {
  TableHandle a = new_table(3, 2, 1);
  TableHandle b = a;
  const std::vector<double> g{1.0, 1.0};
  const Vector before = lookup(*b, 2);
  adagrad_update(*a, 2, g, 0.5);
  EXPECT_EQ(lookup(*b, 2), lookup(*a, 2));
  EXPECT_NE(lookup(*b, 2), before);
}

TEST(PooledBackward, Examples) {
  const auto t = new_table(4, 2, 1);
  const Vector up = Vector::Constant(2, 2.0);
  const std::vector<std::size_t> ij{3, 1}, ii{2, 2}, none{};

  const auto g = pooled_backward(*t, ij, up);
  ASSERT_EQ(g.size(), 2u);
  EXPECT_EQ(g[0].row, 1u);
  EXPECT_EQ(g[1].row, 3u);
  EXPECT_EQ(g[0].grad, Vector::Ones(2));
  EXPECT_EQ(g[1].grad, Vector::Ones(2));

  const auto d = pooled_backward(*t, ii, up);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].row, 2u);
  EXPECT_EQ(d[0].grad, up);

  EXPECT_TRUE(pooled_backward(*t, none, up).empty());
  const std::vector<std::size_t> bad{4};
  EXPECT_TTR_ERROR(pooled_backward(*t, bad, up), ErrorCode::kIndexOutOfRange);
}

class PooledGradientCheck : public ::testing::TestWithParam<Pooling> {};

TEST_P(PooledGradientCheck, MatchesFiniteDifferences) {
  const Pooling pooling = GetParam();
  std::mt19937_64 rng(42);
  const double h = 1e-4;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t rows = 1 + rng() % 6, dim = 1 + rng() % 5;
    EmbeddingTable t(rows, dim, rng(), 1.0);
    std::vector<std::size_t> bag(1 + rng() % 8);
    for (auto& b : bag) b = rng() % rows;
    Vector u(dim);
    for (Eigen::Index c = 0; c < u.size(); ++c) u(c) = std::uniform_real_distribution<>(-1, 1)(rng);

    const auto analytic = pooled_backward(t, bag, u, pooling);
    auto objective = [&] { return pooled_lookup(t, bag, pooling).dot(u); };
    for (const auto& [row, grad] : analytic) {
      for (std::size_t c = 0; c < dim; ++c) {
        std::vector<double> r(t.weights().row(row).begin(), t.weights().row(row).end());
        const double saved = r[c];
        r[c] = saved + h;
        t.set_row(row, r);
        const double up = objective();
        r[c] = saved - h;
        t.set_row(row, r);
        const double down = objective();
        r[c] = saved;
        t.set_row(row, r);
        const double numeric = (up - down) / (2 * h);
        const double rel = std::abs(numeric - grad(c)) / std::max({std::abs(numeric), std::abs(grad(c)), 1e-8});
        EXPECT_LT(rel, 1e-4) << "trial " << trial << " row " << row << " col " << c;
      }
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Pooling, PooledGradientCheck,
                         ::testing::Values(Pooling::kMean, Pooling::kSum));

TEST(SparseGradient, DuplicatesSummedIntoOneStep) {
  EmbeddingTable summed(3, 2, 9), manual(3, 2, 9);
  SparseGradient sg(2);
  sg.add(1, Vector::Constant(2, 0.5));
  sg.add(1, Vector::Constant(2, 0.25), 2.0);
  sg.add(0, Vector::Constant(2, -1.0));
  EXPECT_EQ(sg.touched_rows(), 2u);
  sg.apply_adagrad(summed, 0.1);

  const std::vector<double> g1{1.0, 1.0}, g0{-1.0, -1.0};
  adagrad_update(manual, 0, g0, 0.1);
  adagrad_update(manual, 1, g1, 0.1);
  EXPECT_EQ(summed.weights(), manual.weights());
  EXPECT_EQ(summed.accumulators(), manual.accumulators());
}

TEST(SparseGradient, OrderIndependent) {
  std::mt19937_64 rng(5);
  std::vector<std::pair<std::size_t, Vector>> grads;
  for (int i = 0; i < 40; ++i) grads.emplace_back(rng() % 4, Vector::Random(3));
  EmbeddingTable a(4, 3, 1), b(4, 3, 1);
  SparseGradient fwd(3), rev(3);
  for (const auto& [r, g] : grads) fwd.add(r, g);
  for (auto it = grads.rbegin(); it != grads.rend(); ++it) rev.add(it->first, it->second);
  fwd.apply_adagrad(a, 0.1);
  rev.apply_adagrad(b, 0.1);
  EXPECT_TRUE(a.weights().isApprox(b.weights(), 1e-14));
}

TEST(TableCheckpoint, RoundTripAtFloat32) {
  EmbeddingTable t(5, 3, 17);
  const std::vector<double> g{0.1, -0.2, 0.3};
  adagrad_update(t, 2, g, 0.1);
  std::stringstream buf;
  write_table(buf, t);
  EXPECT_EQ(buf.str().size(), table_block_size(5, 3));
  const EmbeddingTable back = read_table(buf);
  EXPECT_EQ(back.rows(), 5u);
  EXPECT_EQ(back.dim(), 3u);
  EXPECT_EQ(back.weights(), t.weights().cast<float>().cast<double>());
  EXPECT_EQ(back.accumulators(), t.accumulators().cast<float>().cast<double>());

  // A float32-exact table survives a second trip bit for bit.
  std::stringstream again;
  write_table(again, back);
  EXPECT_EQ(again.str(), [&] { std::stringstream s; write_table(s, back); return s.str(); }());
  EXPECT_EQ(read_table(again).weights(), back.weights());
}

TEST(TableCheckpoint, RejectsCorruptInput) {
  EmbeddingTable t(2, 2, 1);
  std::stringstream buf;
  write_table(buf, t);
  const std::string bytes = buf.str();

  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  EXPECT_TTR_ERROR(read_table(truncated), ErrorCode::kFormatError);

  std::string wrong = bytes;
  wrong[0] = 'X';
  std::stringstream bad_magic(wrong);
  EXPECT_TTR_ERROR(read_table(bad_magic), ErrorCode::kFormatError);
}

}  // namespace
}  // namespace ttr
