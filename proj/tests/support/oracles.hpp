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

// Brute-force reference implementations used as test oracles. They share no
// code with the library: plain loops over std::vector, no Eigen.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <set>
#include <vector>

namespace ttr::oracle {

using Mat = std::vector<std::vector<double>>;

struct SoftmaxProblem {
  Mat queries;                             // B x d
  Mat items;                               // B x d
  std::vector<std::size_t> positives;      // B
  Mat cached;                              // C x d
  std::vector<std::size_t> cached_ids;     // C
  std::vector<double> log_prob;            // indexed by store id; empty = no logQ
  double temperature = 1.0;
  bool mask = true;
};

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Mean over rows of -log softmax(positive) with colliding columns removed.
inline double softmax_loss(const SoftmaxProblem& p) {
  const std::size_t batch = p.queries.size();
  double total = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    std::vector<double> logits;
    double positive = 0.0;
    auto consider = [&](const std::vector<double>& emb, std::size_t id, bool is_positive) {
      if (!is_positive && p.mask && id == p.positives[i]) return;
      double l = dot(p.queries[i], emb) / p.temperature;
      if (!p.log_prob.empty()) l -= p.log_prob[id];
      if (is_positive) positive = l;
      logits.push_back(l);
    };
    for (std::size_t j = 0; j < batch; ++j) consider(p.items[j], p.positives[j], j == i);
    for (std::size_t c = 0; c < p.cached.size(); ++c) consider(p.cached[c], p.cached_ids[c], false);
    const double m = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double l : logits) sum += std::exp(l - m);
    total += m + std::log(sum) - positive;
  }
  return total / static_cast<double>(batch);
}

struct FiniteDifferenceGrads {
  Mat queries;
  Mat items;
};

// Central differences of softmax_loss with respect to every query and item
// coordinate.
inline FiniteDifferenceGrads finite_difference(SoftmaxProblem p, double h = 1e-5) {
  FiniteDifferenceGrads g;
  auto sweep = [&](Mat& target, Mat& out) {
    out.assign(target.size(), std::vector<double>(target.empty() ? 0 : target[0].size(), 0.0));
    for (std::size_t r = 0; r < target.size(); ++r) {
      for (std::size_t c = 0; c < target[r].size(); ++c) {
        const double saved = target[r][c];
        target[r][c] = saved + h;
        const double up = softmax_loss(p);
        target[r][c] = saved - h;
        const double down = softmax_loss(p);
        target[r][c] = saved;
        out[r][c] = (up - down) / (2.0 * h);
      }
    }
  };
  sweep(p.queries, g.queries);
  sweep(p.items, g.items);
  return g;
}

// Indices sorted by descending score, ties by ascending index; first k.
inline std::vector<std::size_t> full_sort_top_k(const std::vector<double>& scores, std::size_t k) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  idx.resize(k);
  return idx;
}

inline double hit_rate(const std::vector<std::size_t>& rec, const std::vector<std::size_t>& rel,
                       std::size_t k) {
  const std::set<std::size_t> relevant(rel.begin(), rel.end());
  std::set<std::size_t> found;
  for (std::size_t p = 0; p < k; ++p) {
    if (relevant.count(rec[p])) found.insert(rec[p]);
  }
  return static_cast<double>(found.size()) / static_cast<double>(relevant.size());
}

inline double ndcg(const std::vector<std::size_t>& rec, const std::vector<std::size_t>& rel,
                   std::size_t k) {
  const std::set<std::size_t> relevant(rel.begin(), rel.end());
  double dcg = 0.0;
  for (std::size_t p = 1; p <= k; ++p) {
    if (relevant.count(rec[p - 1])) dcg += 1.0 / std::log2(static_cast<double>(p) + 1.0);
  }
  double idcg = 0.0;
  for (std::size_t p = 1; p <= std::min(k, relevant.size()); ++p) {
    idcg += 1.0 / std::log2(static_cast<double>(p) + 1.0);
  }
  return dcg / idcg;
}

inline double average_precision(const std::vector<std::size_t>& rec,
                                const std::vector<std::size_t>& rel, std::size_t k) {
  const std::set<std::size_t> relevant(rel.begin(), rel.end());
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t p = 1; p <= k; ++p) {
    if (relevant.count(rec[p - 1])) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(p);
    }
  }
  return sum / static_cast<double>(std::min(k, relevant.size()));
}

}  // namespace ttr::oracle
