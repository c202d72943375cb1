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
// Training loop with per-epoch coreset re-selection.
//
// Every epoch: select S_t at the current weights (or take all / a random
// sample), sort it by dataset index, shuffle it into batches and take one SGD
// step per batch on the gamma-weighted mean loss.
//

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pcore/dataset.hpp"
#include "pcore/error.hpp"
#include "pcore/gradient_match.hpp"
#include "pcore/model.hpp"
#include "pcore/numeric.hpp"
#include "pcore/posterior.hpp"
#include "pcore/selection.hpp"

namespace pcore {

enum class Method { kFull, kRandom, kUnsmoothed, kStable };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::kFull: return "full";
    case Method::kRandom: return "random";
    case Method::kUnsmoothed: return "unsmoothed";
    case Method::kStable: return "stable";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "full") return Method::kFull;
  if (s == "random") return Method::kRandom;
  if (s == "unsmoothed") return Method::kUnsmoothed;
  if (s == "stable") return Method::kStable;
  throw Error(ErrorKind::kConfig, "unknown method '" + s + "'");
}

struct Schedule {
  int epochs = 60;
  double peak_lr = 0.1;
  int warmup_epochs = 6;
  std::vector<int> milestones{36, 51};
  double decay_factor = 0.1;
  // When set, overrides warmup and decay with a constant rate.
  std::optional<double> constant_lr;
};

inline double lr_schedule(int epoch, const Schedule& s) {
  if (s.constant_lr) return *s.constant_lr;
  if (epoch < s.warmup_epochs) {
    return s.peak_lr * (epoch + 1) / static_cast<double>(s.warmup_epochs);
  }
  double lr = s.peak_lr;
  for (int m : s.milestones) {
    if (epoch >= m) lr *= s.decay_factor;
  }
  return lr;
}

struct TrainConfig {
  ModelSpec model;
  Method method = Method::kStable;
  PosteriorSpec posterior;
  double budget_fraction = 0.1;  // q
  std::size_t pool_size = 100;   // R
  std::size_t num_pools = 0;     // P; 0 derives floor(q n) / m
  std::size_t per_pool = 10;     // m
  ParamGroup feature_group = ParamGroup::kOutput;
  std::size_t batch_size = 32;
  Schedule schedule;
  std::uint64_t seed = 0;
  bool use_gamma_in_sgd = true;
  int threads = 1;
};

inline std::size_t budget_size(const TrainConfig& cfg, std::size_t n) {
  return static_cast<std::size_t>(std::floor(cfg.budget_fraction * n));
}

inline std::size_t resolved_num_pools(const TrainConfig& cfg, std::size_t n) {
  if (cfg.num_pools > 0) return cfg.num_pools;
  const std::size_t budget = budget_size(cfg, n);
  return std::max<std::size_t>(1, (budget + cfg.per_pool / 2) / cfg.per_pool);
}

inline void validate(const TrainConfig& cfg, std::size_t n) {
  const Schedule& s = cfg.schedule;
  require(s.epochs >= 1, "train: epochs must be >= 1", ErrorKind::kConfig);
  require(s.peak_lr > 0.0, "train: peak learning rate must be > 0", ErrorKind::kConfig);
  require(s.warmup_epochs >= 0, "train: warmup must be >= 0", ErrorKind::kConfig);
  for (std::size_t i = 1; i < s.milestones.size(); ++i) {
    require(s.milestones[i - 1] < s.milestones[i], "train: milestones must ascend",
            ErrorKind::kConfig);
  }
  require(!s.constant_lr || *s.constant_lr > 0.0, "train: constant lr must be > 0",
          ErrorKind::kConfig);
  require(cfg.batch_size >= 1, "train: batch size must be >= 1", ErrorKind::kConfig);
  require(n >= 1, "train: empty training set", ErrorKind::kConfig);
  if (cfg.method == Method::kFull) return;
  require(cfg.budget_fraction > 0.0 && cfg.budget_fraction <= 1.0,
          "train: budget fraction must be in (0, 1]", ErrorKind::kConfig);
  const std::size_t budget = budget_size(cfg, n);
  require(budget >= 1, "train: budget rounds to zero samples", ErrorKind::kConfig);
  if (cfg.method == Method::kRandom) return;
  const std::size_t p = resolved_num_pools(cfg, n);
  require(cfg.per_pool >= 1 && cfg.per_pool <= cfg.pool_size,
          "train: per-pool picks m must be in [1, R]", ErrorKind::kConfig);
  const std::size_t got = p * cfg.per_pool;
  require((got > budget ? got - budget : budget - got) < cfg.per_pool,
          "train: P * m does not match floor(q n)", ErrorKind::kConfig);
  require(p * cfg.pool_size <= n, "train: P * R exceeds the dataset size",
          ErrorKind::kBudget);
}

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double test_loss = 0.0;
  double test_accuracy = 0.0;
  double grad_match = 0.0;             // verbatim formula
  double grad_match_normalized = 0.0;
  double grad_norm_sq = 0.0;           // ||grad l(w_t)||^2 on the full train set
  std::size_t coreset_size = 0;
  double selection_seconds = 0.0;
  double step_seconds = 0.0;
};

struct MetricsLog {
  std::vector<EpochMetrics> rows;
  std::string method;
  bool diverged = false;
  int diverged_epoch = -1;

  const EpochMetrics& last() const { return rows.back(); }
};

struct Evaluation {
  double accuracy = 0.0;
  double loss = 0.0;
};

inline Evaluation evaluate(const ModelState& state, const Dataset& ds) {
  require(ds.size() > 0, "evaluate: empty dataset");
  std::size_t correct = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    correct += predict(state, ds, i) == ds.labels[i];
    total += sample_loss(state, ds, i);
  }
  const auto n = static_cast<double>(ds.size());
  return {static_cast<double>(correct) / n, total / n};
}

struct TrainResult {
  ModelState state;
  MetricsLog log;
  std::vector<Coreset> coresets;  // one per epoch (subset methods)
};

struct TrainOptions {
  bool keep_coresets = false;
  // Parameter snapshot after every epoch.
  std::vector<Vector>* trajectory = nullptr;
  // Pre-trained members for the ensemble posterior.
  const std::vector<ModelState>* ensemble_members = nullptr;
};

inline constexpr double kDivergenceLoss = 1e6;

TrainResult train(const TrainConfig& cfg, const Dataset& train_ds,
                  const Dataset& test_ds, const TrainOptions& opts = {});

// M models trained on the full data with identical settings except the seed.
inline std::vector<ModelState> ensemble_posterior(const TrainConfig& cfg,
                                                  const Dataset& train_ds,
                                                  const Dataset& test_ds,
                                                  const std::vector<std::uint64_t>& seeds) {
  require(seeds.size() >= 2, "ensemble_posterior: need at least two seeds");
  require(std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() == seeds.size(),
          "ensemble_posterior: duplicate seeds");
  std::vector<ModelState> members;
  for (std::uint64_t s : seeds) {
    TrainConfig c = cfg;
    c.method = Method::kFull;
    c.seed = s;
    members.push_back(train(c, train_ds, test_ds).state);
  }
  return members;
}

inline TrainResult train(const TrainConfig& cfg, const Dataset& train_ds,
                         const Dataset& test_ds, const TrainOptions& opts) {
  using Clock = std::chrono::steady_clock;
  const std::size_t n = train_ds.size();
  validate(cfg, n);
  require(cfg.model.input_dim == train_ds.dim(), "train: model input dim mismatch",
          ErrorKind::kConfig);
  require(cfg.model.num_classes >= train_ds.num_classes,
          "train: model has fewer classes than the dataset", ErrorKind::kConfig);

  const RngStream root(cfg.seed);
  RngStream init_rng = root.child("init");
  TrainResult res{init_state(cfg.model, init_rng), {}, {}};
  res.log.method = method_name(cfg.method);

  Posterior posterior{cfg.posterior, {}};
  if (cfg.method == Method::kStable) {
    if (posterior.spec.theory_schedule) {
      posterior.spec.sigma =
          theory_sigma(posterior.spec.num_samples, cfg.schedule.epochs,
                       cfg.model.group_range(posterior.spec.target_group).size);
    }
    if (posterior.spec.kind == PosteriorKind::kEnsemble) {
      if (opts.ensemble_members) {
        posterior.members = *opts.ensemble_members;
      } else if (posterior.spec.ensemble_seeds.size() == 1) {
        TrainConfig c = cfg;
        c.method = Method::kFull;
        c.seed = posterior.spec.ensemble_seeds[0];
        posterior.members.push_back(train(c, train_ds, test_ds).state);
      } else {
        posterior.members =
            ensemble_posterior(cfg, train_ds, test_ds, posterior.spec.ensemble_seeds);
      }
    }
    validate(posterior.spec, cfg.model);
  }

  SelectionConfig sel;
  sel.pool_size = cfg.pool_size;
  sel.num_pools = resolved_num_pools(cfg, n);
  sel.per_pool = cfg.per_pool;
  sel.feature_group = cfg.feature_group;
  sel.threads = cfg.threads;

  ModelState& state = res.state;
  for (int epoch = 0; epoch < cfg.schedule.epochs; ++epoch) {
    EpochMetrics row;
    row.epoch = epoch;
    row.lr = lr_schedule(epoch, cfg.schedule);

    const auto t0 = Clock::now();
    const RngStream sel_rng = root.child("select", static_cast<std::uint64_t>(epoch));
    Coreset cs;
    switch (cfg.method) {
      case Method::kFull:
        cs.method = "full";
        cs.epoch = epoch;
        for (std::size_t i = 0; i < n; ++i) cs.entries.push_back({i, 1, 0});
        break;
      case Method::kRandom:
        cs = baseline_random(n, budget_size(cfg, n), sel_rng, epoch);
        break;
      case Method::kUnsmoothed:
        cs = baseline_unsmoothed(state, train_ds, sel, sel_rng, epoch);
        break;
      case Method::kStable:
        cs = select_round(state, train_ds, sel, posterior, sel_rng, epoch, "stable");
        break;
    }
    const auto t1 = Clock::now();
    row.selection_seconds = std::chrono::duration<double>(t1 - t0).count();

    const Vector full_sum = gradient_sum(state, train_ds);
    row.grad_norm_sq = (full_sum / static_cast<double>(n)).squaredNorm();
    const GradientMatch gm = gradient_match_error(state, cs, train_ds, &full_sum);
    row.grad_match = gm.verbatim;
    row.grad_match_normalized = gm.normalized;
    row.coreset_size = cs.size();

    // Canonical order, then one shuffled pass in batches.
    std::stable_sort(cs.entries.begin(), cs.entries.end(),
                     [](const CoresetEntry& a, const CoresetEntry& b) {
                       return a.index < b.index;
                     });
    const std::vector<double> all_w = cs.weights();
    std::vector<std::size_t> order(cs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    RngStream batch_rng = root.child("batches", static_cast<std::uint64_t>(epoch));
    batch_rng.shuffle(order);

    const auto t2 = Clock::now();
    std::vector<std::size_t> bidx;
    std::vector<double> bw;
    bool blown = false;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      bidx.clear();
      bw.clear();
      for (std::size_t s = start; s < stop; ++s) {
        bidx.push_back(cs.entries[order[s]].index);
        bw.push_back(cfg.use_gamma_in_sgd ? all_w[order[s]] : 1.0);
      }
      state.params -= row.lr * batch_grad(state, train_ds, bidx, bw);
      if (!state.params.allFinite()) {
        blown = true;
        break;
      }
    }
    row.step_seconds = std::chrono::duration<double>(Clock::now() - t2).count();

    if (blown) {
      row.train_loss = std::numeric_limits<double>::infinity();
    } else {
      row.train_loss = evaluate(state, train_ds).loss;
      const Evaluation te = evaluate(state, test_ds);
      row.test_loss = te.loss;
      row.test_accuracy = te.accuracy;
    }
    res.log.rows.push_back(row);
    if (opts.trajectory) opts.trajectory->push_back(state.params);
    if (opts.keep_coresets) res.coresets.push_back(std::move(cs));

    if (!std::isfinite(row.train_loss) || row.train_loss > kDivergenceLoss) {
      res.log.diverged = true;
      res.log.diverged_epoch = epoch;
      break;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline void write_metrics_csv(std::ostream& os, const MetricsLog& log,
                              bool with_timing = false) {
  using detail::fmt_double;
  os << "epoch,lr,train_loss,test_loss,test_accuracy,grad_match,"
        "grad_match_normalized,grad_norm_sq,coreset_size";
  if (with_timing) os << ",selection_seconds,step_seconds";
  os << '\n';
  for (const auto& r : log.rows) {
    os << r.epoch << ',' << fmt_double(r.lr) << ',' << fmt_double(r.train_loss) << ','
       << fmt_double(r.test_loss) << ',' << fmt_double(r.test_accuracy) << ','
       << fmt_double(r.grad_match) << ',' << fmt_double(r.grad_match_normalized) << ','
       << fmt_double(r.grad_norm_sq) << ',' << r.coreset_size;
    if (with_timing) {
      os << ',' << fmt_double(r.selection_seconds) << ',' << fmt_double(r.step_seconds);
    }
    os << '\n';
  }
}

inline nlohmann::json summary_json(const MetricsLog& log, bool with_timing = false) {
  nlohmann::json j;
  j["method"] = log.method;
  j["epochs_completed"] = log.rows.size();
  j["diverged"] = log.diverged;
  j["diverged_epoch"] = log.diverged ? nlohmann::json(log.diverged_epoch) : nlohmann::json();
  if (!log.rows.empty() && !log.diverged) {
    j["final_test_accuracy"] = log.last().test_accuracy;
    j["final_test_loss"] = log.last().test_loss;
    j["final_train_loss"] = log.last().train_loss;
  }
  if (with_timing) {
    double sel = 0.0, step = 0.0;
    for (const auto& r : log.rows) {
      sel += r.selection_seconds;
      step += r.step_seconds;
    }
    j["selection_seconds"] = sel;
    j["step_seconds"] = step;
  }
  return j;
}

}  // namespace pcore
