// Copyright 2026 The Authors.
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

//
// Coreset selection: smoothed gradient distances, greedy facility-location
// cover, nearest-assignment weights and pooled per-epoch selection.
//

#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "pcore/dataset.hpp"
#include "pcore/error.hpp"
#include "pcore/model.hpp"
#include "pcore/numeric.hpp"
#include "pcore/posterior.hpp"

namespace pcore {

struct DistanceMatrix {
  Matrix values;  // R x R
  PosteriorSpec posterior;
  ParamGroup group = ParamGroup::kOutput;
  int num_states = 1;

  Index size() const { return values.rows(); }
  double operator()(Index i, Index j) const { return values(i, j); }
};

// Per-sample gradient features at one model state, one row per pool entry.
inline RowMatrix gradient_features(const ModelState& state, const Dataset& ds,
                                   std::span<const std::size_t> pool,
                                   ParamGroup group, int threads = 1) {
  require_group(state.spec, group);
  const Index dim = state.spec.group_range(group).size;
  RowMatrix f(static_cast<Index>(pool.size()), dim);
  parallel_for(pool.size(), threads, [&](std::size_t r) {
    f.row(static_cast<Index>(r)) = per_sample_grad(state, ds, pool[r], group).transpose();
  });
  return f;
}

namespace detail {

inline double row_distance(const RowMatrix& f, Index i, Index j) {
  double s = 0.0;
  for (Index c = 0; c < f.cols(); ++c) {
    const double t = f(i, c) - f(j, c);
    s += t * t;
  }
  return std::sqrt(s);
}

}  // namespace detail

// Pairwise Euclidean distances between feature rows.
inline Matrix pairwise_distances(const RowMatrix& f, int threads = 1) {
  const Index r = f.rows();
  Matrix d = Matrix::Zero(r, r);
  parallel_for(static_cast<std::size_t>(r), threads, [&](std::size_t iu) {
    const auto i = static_cast<Index>(iu);
    for (Index j = i + 1; j < r; ++j) d(i, j) = detail::row_distance(f, i, j);
  });
  for (Index i = 0; i < r; ++i) {
    for (Index j = i + 1; j < r; ++j) d(j, i) = d(i, j);
  }
  return d;
}

// d(i, j) = (1/M) sum_k || g_i^k - g_j^k || over M posterior states shared by
// every pair (mean of norms). The ensemble posterior instead averages the
// features over members and takes one norm.
inline DistanceMatrix smoothed_distances(const ModelState& state, const Dataset& ds,
                                         std::span<const std::size_t> pool,
                                         const Posterior& posterior,
                                         ParamGroup feature_group, RngStream& rng,
                                         int threads = 1) {
  require(!pool.empty(), "smoothed_distances: empty pool");
  require_group(state.spec, feature_group);
  const std::vector<ModelState> states = posterior.sample(state, ds, pool, rng);
  const auto r = static_cast<Index>(pool.size());

  DistanceMatrix out;
  out.posterior = posterior.spec;
  out.group = feature_group;
  out.num_states = static_cast<int>(states.size());

  if (posterior.aggregation() == Aggregation::kNormOfMean) {
    RowMatrix mean = RowMatrix::Zero(r, state.spec.group_range(feature_group).size);
    for (const auto& s : states) mean += gradient_features(s, ds, pool, feature_group, threads);
    mean /= static_cast<double>(states.size());
    out.values = pairwise_distances(mean, threads);
    return out;
  }

  Matrix acc = Matrix::Zero(r, r);
  for (const auto& s : states) {
    acc += pairwise_distances(gradient_features(s, ds, pool, feature_group, threads),
                              threads);
  }
  out.values = acc / static_cast<double>(states.size());
  return out;
}

struct GreedyResult {
  std::vector<std::size_t> picks;   // pool-local indices in pick order
  std::vector<double> cost_after;   // sum_i min_{j in S} D(i, j) after each pick
  std::vector<double> gains;        // coverage gain of each pick
};

// Greedy maximization of F(S) = sum_i (d_max - min_{j in S} D(i, j)) under
// |S| = m. Ties go to the lowest index.
inline GreedyResult greedy_cover(const Matrix& d, std::size_t m) {
  const auto r = static_cast<std::size_t>(d.rows());
  require(d.rows() == d.cols(), "greedy_cover: distance matrix is not square");
  require(m >= 1 && m <= r, "greedy_cover: m must be in [1, R]");
  const double d_max = d.maxCoeff();
  std::vector<double> cur(r, d_max);
  std::vector<char> taken(r, 0);
  GreedyResult res;
  for (std::size_t step = 0; step < m; ++step) {
    double best_gain = -1.0;
    std::size_t best = r;
    for (std::size_t j = 0; j < r; ++j) {
      if (taken[j]) continue;
      double gain = 0.0;
      for (std::size_t i = 0; i < r; ++i) {
        const double dij = d(static_cast<Index>(i), static_cast<Index>(j));
        if (dij < cur[i]) gain += cur[i] - dij;
      }
      if (gain > best_gain) {
        best_gain = gain;
        best = j;
      }
    }
    taken[best] = 1;
    double cost = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
      cur[i] = std::min(cur[i], d(static_cast<Index>(i), static_cast<Index>(best)));
      cost += cur[i];
    }
    res.picks.push_back(best);
    res.gains.push_back(best_gain);
    res.cost_after.push_back(cost);
  }
  return res;
}

// Coverage F(S) for an arbitrary set, used by oracles and diagnostics.
inline double coverage(const Matrix& d, std::span<const std::size_t> selected) {
  const double d_max = d.maxCoeff();
  double f = 0.0;
  for (Index i = 0; i < d.rows(); ++i) {
    double best = d_max;
    for (std::size_t j : selected) best = std::min(best, d(i, static_cast<Index>(j)));
    f += d_max - best;
  }
  return f;
}

// gamma_j = number of pool points whose nearest selected element is j. Ties
// go to the earliest pick; a selected point always counts toward itself.
inline std::vector<int> gamma_weights(const Matrix& d,
                                      std::span<const std::size_t> selected) {
  require(!selected.empty(), "gamma_weights: empty selection");
  const auto r = static_cast<std::size_t>(d.rows());
  std::vector<std::size_t> slot(r, selected.size());
  for (std::size_t s = 0; s < selected.size(); ++s) {
    require(selected[s] < r, "gamma_weights: selection outside pool");
    require(slot[selected[s]] == selected.size(), "gamma_weights: duplicate selection");
    slot[selected[s]] = s;
  }
  std::vector<int> gamma(selected.size(), 0);
  for (std::size_t i = 0; i < r; ++i) {
    if (slot[i] < selected.size()) {
      ++gamma[slot[i]];
      continue;
    }
    std::size_t best = 0;
    for (std::size_t s = 1; s < selected.size(); ++s) {
      if (d(static_cast<Index>(i), static_cast<Index>(selected[s])) <
          d(static_cast<Index>(i), static_cast<Index>(selected[best]))) {
        best = s;
      }
    }
    ++gamma[best];
  }
  return gamma;
}

// ---------------------------------------------------------------------------

struct CoresetEntry {
  std::size_t index = 0;  // dataset index
  int gamma = 1;
  int pool = 0;

  bool operator==(const CoresetEntry&) const = default;
};

struct Rational {
  std::uint64_t num = 1;
  std::uint64_t den = 1;

  static Rational reduced(std::uint64_t n, std::uint64_t d) {
    const std::uint64_t g = std::gcd(n, d);
    return {n / g, d / g};
  }
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  bool operator==(const Rational&) const = default;
};

struct Coreset {
  std::vector<CoresetEntry> entries;
  int epoch = 0;
  std::string method;
  // Uniform multiplier on every gamma (n / budget for the random baseline).
  Rational weight_scale;

  std::size_t size() const { return entries.size(); }

  std::vector<std::size_t> indices() const {
    std::vector<std::size_t> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.index);
    return out;
  }
  std::vector<double> weights() const {
    std::vector<double> out;
    out.reserve(entries.size());
    const double s = weight_scale.value();
    for (const auto& e : entries) out.push_back(e.gamma * s);
    return out;
  }

  bool operator==(const Coreset&) const = default;
};

struct SelectionConfig {
  std::size_t pool_size = 0;  // R
  std::size_t num_pools = 1;  // P
  std::size_t per_pool = 1;   // m
  ParamGroup feature_group = ParamGroup::kOutput;
  int threads = 1;
};

// One epoch's selection: a single shuffle is cut into P disjoint pools of R
// indices; each pool contributes its m greedy picks with gamma weights.
inline Coreset select_round(const ModelState& state, const Dataset& ds,
                            const SelectionConfig& cfg, const Posterior& posterior,
                            const RngStream& rng, int epoch = 0,
                            const std::string& method = "stable") {
  require(cfg.pool_size >= 1 && cfg.num_pools >= 1, "select_round: empty pools");
  require(cfg.num_pools * cfg.pool_size <= ds.size(),
          "select_round: P * R exceeds the dataset size", ErrorKind::kBudget);
  require(cfg.per_pool >= 1 && cfg.per_pool <= cfg.pool_size,
          "select_round: m must be in [1, R]");
  validate(posterior.spec, state.spec);

  std::vector<std::size_t> order = ds.all_indices();
  RngStream shuffle_rng = rng.child("shuffle");
  shuffle_rng.shuffle(order);

  Coreset out;
  out.epoch = epoch;
  out.method = method;
  for (std::size_t p = 0; p < cfg.num_pools; ++p) {
    const std::span<const std::size_t> pool(order.data() + p * cfg.pool_size,
                                            cfg.pool_size);
    RngStream pool_rng = rng.child("pool", p);
    const DistanceMatrix d = smoothed_distances(state, ds, pool, posterior,
                                                cfg.feature_group, pool_rng, cfg.threads);
    const GreedyResult g = greedy_cover(d.values, cfg.per_pool);
    const std::vector<int> gamma = gamma_weights(d.values, g.picks);
    for (std::size_t s = 0; s < g.picks.size(); ++s) {
      out.entries.push_back({pool[g.picks[s]], gamma[s], static_cast<int>(p)});
    }
  }
  return out;
}

// Uniform sample without replacement; every entry carries weight n / budget.
inline Coreset baseline_random(std::size_t n, std::size_t budget, const RngStream& rng,
                               int epoch = 0) {
  require(budget >= 1 && budget <= n, "baseline_random: budget must be in [1, n]");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  RngStream r = rng.child("random");
  for (std::size_t i = 0; i < budget; ++i) {
    std::swap(order[i], order[i + r.uniform_index(n - i)]);
  }
  Coreset out;
  out.epoch = epoch;
  out.method = "random";
  out.weight_scale = Rational::reduced(n, budget);
  for (std::size_t i = 0; i < budget; ++i) out.entries.push_back({order[i], 1, 0});
  return out;
}

// Craig-style selection: one unperturbed evaluation per pool.
inline Coreset baseline_unsmoothed(const ModelState& state, const Dataset& ds,
                                   const SelectionConfig& cfg, const RngStream& rng,
                                   int epoch = 0) {
  return select_round(state, ds, cfg, Posterior{PosteriorSpec::point(), {}}, rng,
                      epoch, "unsmoothed");
}

inline std::string format_gamma(const Coreset& c, const CoresetEntry& e) {
  if (c.weight_scale == Rational{}) return std::to_string(e.gamma);
  const Rational w = Rational::reduced(e.gamma * c.weight_scale.num, c.weight_scale.den);
  return std::to_string(w.num) + "/" + std::to_string(w.den);
}

inline void write_coreset_csv_header(std::ostream& os) {
  os << "epoch,pool,index,gamma,method\n";
}

inline void write_coreset_csv_rows(std::ostream& os, const Coreset& c) {
  for (const auto& e : c.entries) {
    os << c.epoch << ',' << e.pool << ',' << e.index << ',' << format_gamma(c, e)
       << ',' << c.method << '\n';
  }
}

}  // namespace pcore
