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
// Diagnostics: loss-landscape slices, stability estimates, curvature
// alignment probes on tiny models, convergence probes and a 2-D toy model of
// noisy versus smoothed gradient descent.
//

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Cholesky>

#include "pcore/dataset.hpp"
#include "pcore/error.hpp"
#include "pcore/gradient_match.hpp"
#include "pcore/model.hpp"
#include "pcore/numeric.hpp"
#include "pcore/posterior.hpp"
#include "pcore/selection.hpp"
#include "pcore/trainer.hpp"

namespace pcore {

// ---------------------------------------------------------------------------
// Loss landscape f(alpha, beta) = l(w + alpha * delta + beta * eta).

struct LandscapeGrid {
  std::vector<double> alphas;
  std::vector<double> betas;
  Matrix values;  // values(a, b) = f(alphas[a], betas[b])
  Vector delta_dir;
  Vector eta_dir;
  std::string eval_tag;  // "full" or "coreset-weighted"
  double origin_loss = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;
};

// Random directions, rescaled so each group's direction norm equals that
// group's parameter norm. Groups whose parameters are all zero get a zero
// direction.
inline std::pair<Vector, Vector> landscape_directions(
    const Vector& params, std::span<const GroupRange> groups, std::uint64_t seed,
    std::vector<std::string>* warnings = nullptr) {
  RngStream rng = RngStream(seed).child("landscape");
  const Index p = params.size();
  Vector delta = sample_gaussian(rng, p, 1.0);
  Vector eta = sample_gaussian(rng, p, 1.0);
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const GroupRange g = groups[gi];
    if (g.size == 0) continue;
    const double pn = params.segment(g.offset, g.size).norm();
    if (pn == 0.0) {
      delta.segment(g.offset, g.size).setZero();
      eta.segment(g.offset, g.size).setZero();
      if (warnings) {
        warnings->push_back("parameter group " + std::to_string(gi) +
                            " has zero norm; its directions are zero");
      }
      continue;
    }
    for (Vector* v : {&delta, &eta}) {
      auto seg = v->segment(g.offset, g.size);
      seg *= pn / seg.norm();
    }
  }
  return {delta, eta};
}

inline std::vector<double> grid_axis(int grid_n, double range) {
  std::vector<double> axis(static_cast<std::size_t>(grid_n));
  for (int i = 0; i < grid_n; ++i) {
    axis[static_cast<std::size_t>(i)] = -range + 2.0 * range * i / (grid_n - 1);
  }
  return axis;
}

template <typename LossFn>
LandscapeGrid landscape_slice_fn(const Vector& params,
                                 std::span<const GroupRange> groups, LossFn&& loss_fn,
                                 int grid_n, double range, std::uint64_t seed) {
  require(grid_n >= 2, "landscape_slice: grid_n must be >= 2");
  require(range >= 0.0, "landscape_slice: range must be >= 0");
  LandscapeGrid g;
  g.seed = seed;
  std::tie(g.delta_dir, g.eta_dir) =
      landscape_directions(params, groups, seed, &g.warnings);
  g.alphas = grid_axis(grid_n, range);
  g.betas = g.alphas;
  g.values.resize(grid_n, grid_n);
  for (int a = 0; a < grid_n; ++a) {
    for (int b = 0; b < grid_n; ++b) {
      const Vector w = params + g.alphas[a] * g.delta_dir + g.betas[b] * g.eta_dir;
      g.values(a, b) = loss_fn(w);
    }
  }
  g.origin_loss = loss_fn(params);
  return g;
}

inline LandscapeGrid landscape_slice(const ModelState& state, const Dataset& ds,
                                     std::span<const std::size_t> eval_indices,
                                     std::span<const double> gamma, int grid_n,
                                     double range, std::uint64_t seed) {
  std::vector<GroupRange> groups;
  for (ParamGroup pg : {ParamGroup::kCore, ParamGroup::kNormalization,
                        ParamGroup::kOutput}) {
    groups.push_back(state.range(pg));
  }
  ModelState probe = state;
  LandscapeGrid g = landscape_slice_fn(
      state.params, groups,
      [&](const Vector& w) {
        probe.params = w;
        return loss(probe, ds, eval_indices, gamma);
      },
      grid_n, range, seed);
  g.eval_tag = gamma.empty() ? "full" : "coreset-weighted";
  return g;
}

inline double landscape_mse(const LandscapeGrid& a, const LandscapeGrid& b) {
  require(a.values.rows() == b.values.rows() && a.values.cols() == b.values.cols(),
          "landscape_mse: grid sizes differ");
  require(a.alphas == b.alphas && a.betas == b.betas,
          "landscape_mse: grid coordinates differ");
  require(a.delta_dir.size() == b.delta_dir.size() && a.delta_dir == b.delta_dir &&
              a.eta_dir == b.eta_dir,
          "landscape_mse: grids use different directions");
  double s = 0.0;
  for (Index i = 0; i < a.values.rows(); ++i) {
    for (Index j = 0; j < a.values.cols(); ++j) {
      const double t = a.values(i, j) - b.values(i, j);
      s += t * t;
    }
  }
  return s / static_cast<double>(a.values.size());
}

inline void write_landscape_csv(std::ostream& os, const LandscapeGrid& g) {
  os << "alpha,beta,loss\n";
  for (std::size_t a = 0; a < g.alphas.size(); ++a) {
    for (std::size_t b = 0; b < g.betas.size(); ++b) {
      os << detail::fmt_double(g.alphas[a]) << ',' << detail::fmt_double(g.betas[b])
         << ',' << detail::fmt_double(g.values(static_cast<Index>(a), static_cast<Index>(b)))
         << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Stability: E_w || grad l_{S'}(w) - grad l(w) ||^2 with the subset gradient
// normalized by its total weight.

struct StabilityEstimate {
  double mean = 0.0;
  double stderr_ = 0.0;
  std::vector<double> samples;
};

inline StabilityEstimate stability_estimate(const ModelState& state,
                                            std::span<const std::size_t> subset,
                                            std::span<const double> weights,
                                            const Dataset& ds,
                                            const PosteriorSpec& posterior,
                                            int num_eval, RngStream& rng) {
  require(num_eval >= 1, "stability_estimate: num_eval must be >= 1");
  require(!subset.empty(), "stability_estimate: empty subset");
  PosteriorSpec one = posterior;
  one.kind = PosteriorKind::kSpherical;
  one.num_samples = 1;
  double wsum = 0.0;
  for (std::size_t r = 0; r < subset.size(); ++r) wsum += weights.empty() ? 1.0 : weights[r];
  const auto n = static_cast<double>(ds.size());

  StabilityEstimate est;
  est.samples.reserve(static_cast<std::size_t>(num_eval));
  for (int k = 0; k < num_eval; ++k) {
    const ModelState w = draw_perturbed(one, state, rng).front();
    const Vector full = gradient_sum(w, ds) / n;
    const Vector sub = gradient_sum(w, ds, subset, weights) / wsum;
    est.samples.push_back((sub - full).squaredNorm());
  }
  double s = 0.0;
  for (double v : est.samples) s += v;
  est.mean = s / num_eval;
  if (num_eval > 1) {
    double ss = 0.0;
    for (double v : est.samples) ss += (v - est.mean) * (v - est.mean);
    est.stderr_ = std::sqrt(ss / (num_eval - 1) / num_eval);
  }
  return est;
}

inline StabilityEstimate stability_estimate(const ModelState& state, const Coreset& coreset,
                                            const Dataset& ds,
                                            const PosteriorSpec& posterior,
                                            int num_eval, RngStream& rng) {
  const auto idx = coreset.indices();
  const auto w = coreset.weights();
  return stability_estimate(state, idx, w, ds, posterior, num_eval, rng);
}

// ---------------------------------------------------------------------------
// Curvature alignment probe on tiny models.

struct TheoremProbeRow {
  int subset_id = 0;
  std::size_t subset_size = 0;
  double stability = 0.0;        // epsilon-hat
  double stability_stderr = 0.0;
  double hessian_gap_norm = 0.0;   // ||H_{S'} - H_S||_2
  double hessian_gap_trsq = 0.0;   // tr((H_{S'} - H_S)^2)
  double newton_gap = 0.0;
  double sigma = 0.0;
};

enum class ProbeWeights { kUniform, kGreedy };

struct ProbeOptions {
  int num_subsets = 30;
  std::size_t subset_size = 0;  // 0 draws a size uniformly from [2, n - 1]
  double sigma = 0.01;
  int num_eval = 64;
  ProbeWeights weights = ProbeWeights::kUniform;
};

inline TheoremProbeRow probe_subset(const ModelState& state, const Dataset& ds,
                                    std::span<const std::size_t> subset,
                                    std::span<const double> weights, double sigma,
                                    int num_eval, RngStream& rng) {
  const std::vector<std::size_t> all = ds.all_indices();
  const Matrix hs = hessian(state, ds, all);
  const Matrix hsub = hessian(state, ds, subset, weights);
  const Vector gs = batch_grad(state, ds, all);
  const Vector gsub = batch_grad(state, ds, subset, weights);
  const Matrix e = hsub - hs;
  const Index p = hs.rows();
  const double ridge = 1e-6 * hs.trace() / static_cast<double>(p);
  const Matrix id = Matrix::Identity(p, p);
  const Vector ns = (hs + ridge * id).ldlt().solve(gs);
  const Vector nsub = (hsub + ridge * id).ldlt().solve(gsub);

  PosteriorSpec post;
  post.sigma = sigma;
  post.num_samples = 1;
  post.target_group = ParamGroup::kAll;
  const StabilityEstimate st =
      stability_estimate(state, subset, weights, ds, post, num_eval, rng);

  TheoremProbeRow row;
  row.subset_size = subset.size();
  row.stability = st.mean;
  row.stability_stderr = st.stderr_;
  row.hessian_gap_norm = spectral_norm(e);
  row.hessian_gap_trsq = trace_square(e);
  row.newton_gap = (nsub - ns).norm();
  row.sigma = sigma;
  return row;
}

inline std::vector<TheoremProbeRow> theorem1_probe(const ModelState& state,
                                                   const Dataset& ds,
                                                   const ProbeOptions& opt,
                                                   const RngStream& rng) {
  require(state.spec.param_count() <= kHessianBudget,
          "theorem1_probe: model exceeds the Hessian budget", ErrorKind::kBudget);
  require(ds.size() >= 3, "theorem1_probe: need at least three samples");
  require(opt.num_subsets >= 1, "theorem1_probe: num_subsets must be >= 1");
  const std::size_t n = ds.size();
  std::vector<TheoremProbeRow> rows;
  for (int s = 0; s < opt.num_subsets; ++s) {
    RngStream r = rng.child("subset", static_cast<std::uint64_t>(s));
    const std::size_t size =
        opt.subset_size > 0 ? opt.subset_size : 2 + r.uniform_index(n - 2);
    require(size >= 1 && size <= n, "theorem1_probe: subset size out of range");
    std::vector<std::size_t> subset;
    std::vector<double> weights;
    if (opt.weights == ProbeWeights::kUniform) {
      std::vector<std::size_t> order = ds.all_indices();
      r.shuffle(order);
      subset.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(size));
      std::sort(subset.begin(), subset.end());
    } else {
      const std::vector<std::size_t> all = ds.all_indices();
      PosteriorSpec ps;
      ps.sigma = opt.sigma;
      ps.num_samples = 4;
      ps.target_group = ParamGroup::kAll;
      RngStream dr = r.child("distances");
      const DistanceMatrix d = smoothed_distances(state, ds, all, Posterior{ps, {}},
                                                  ParamGroup::kAll, dr);
      const GreedyResult g = greedy_cover(d.values, size);
      const std::vector<int> gamma = gamma_weights(d.values, g.picks);
      subset = g.picks;
      for (int v : gamma) weights.push_back(v);
    }
    RngStream er = r.child("stability");
    TheoremProbeRow row =
        probe_subset(state, ds, subset, weights, opt.sigma, opt.num_eval, er);
    row.subset_id = s;
    rows.push_back(row);
  }
  return rows;
}

inline void write_probe_csv(std::ostream& os, const std::vector<TheoremProbeRow>& rows) {
  using detail::fmt_double;
  os << "subset_id,subset_size,stability,stability_stderr,hessian_gap_norm,"
        "hessian_gap_trsq,newton_gap,sigma\n";
  for (const auto& r : rows) {
    os << r.subset_id << ',' << r.subset_size << ',' << fmt_double(r.stability) << ','
       << fmt_double(r.stability_stderr) << ',' << fmt_double(r.hessian_gap_norm) << ','
       << fmt_double(r.hessian_gap_trsq) << ',' << fmt_double(r.newton_gap) << ','
       << fmt_double(r.sigma) << '\n';
  }
}

// Spearman rank correlation with average ranks for ties.
inline double spearman(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size() && x.size() >= 2, "spearman: need two equal-length samples");
  const auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> o(v.size());
    std::iota(o.begin(), o.end(), std::size_t{0});
    std::stable_sort(o.begin(), o.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < o.size();) {
      std::size_t j = i;
      while (j + 1 < o.size() && v[o[j + 1]] == v[o[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t t = i; t <= j; ++t) r[o[t]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return (sxx == 0.0 || syy == 0.0) ? 0.0 : sxy / std::sqrt(sxx * syy);
}

// ---------------------------------------------------------------------------
// Convergence probe.

struct ConvergenceProbeReport {
  std::vector<double> grad_norm_sq;   // per epoch, at the start of the epoch
  std::vector<double> quarter_means;  // four entries
  double running_average = 0.0;       // mean over all epochs
  double smoothness = 0.0;            // beta-hat
  double sampling_noise = 0.0;        // sigma_1-hat
  double learning_rate = 0.0;         // constant rate used (theory schedule)
  double sigma = 0.0;                 // posterior std used
  bool diverged = false;
};

// max ||grad l(u) - grad l(v)|| / ||u - v|| over random nearby pairs.
inline double estimate_smoothness(const ModelState& state, const Dataset& ds,
                                  int num_pairs, double radius, RngStream& rng) {
  const std::vector<std::size_t> all = ds.all_indices();
  const Index p = state.spec.param_count();
  double best = 0.0;
  ModelState u = state, v = state;
  for (int k = 0; k < num_pairs; ++k) {
    u.params = state.params + sample_gaussian(rng, p, radius);
    v.params = u.params + sample_gaussian(rng, p, 0.1 * radius);
    const double num = (batch_grad(u, ds, all) - batch_grad(v, ds, all)).norm();
    const double den = (u.params - v.params).norm();
    if (den > 0.0) best = std::max(best, num / den);
  }
  return best;
}

// Mean squared deviation of mini-batch gradients from the full gradient over
// one shuffled pass; returns its square root.
inline double estimate_sampling_noise(const ModelState& state, const Dataset& ds,
                                      std::size_t batch_size, RngStream& rng) {
  std::vector<std::size_t> order = ds.all_indices();
  const Vector full = batch_grad(state, ds, order);
  rng.shuffle(order);
  double acc = 0.0;
  int count = 0;
  for (std::size_t s = 0; s < order.size(); s += batch_size) {
    const std::size_t e = std::min(order.size(), s + batch_size);
    const std::span<const std::size_t> b(order.data() + s, e - s);
    acc += (batch_grad(state, ds, b) - full).squaredNorm();
    ++count;
  }
  return std::sqrt(acc / count);
}

inline std::vector<double> quarter_means(std::span<const double> series) {
  std::vector<double> q(4, 0.0);
  const std::size_t t = series.size();
  require(t >= 4, "quarter_means: need at least four points");
  for (std::size_t k = 0; k < 4; ++k) {
    const std::size_t lo = t * k / 4, hi = t * (k + 1) / 4;
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += series[i];
    q[k] = s / static_cast<double>(hi - lo);
  }
  return q;
}

inline ConvergenceProbeReport convergence_probe(TrainConfig cfg, const Dataset& train_ds,
                                                const Dataset& test_ds,
                                                bool theory_schedule) {
  require(cfg.schedule.epochs >= 4, "convergence_probe: need at least four epochs");
  ConvergenceProbeReport rep;
  const RngStream root(cfg.seed);
  RngStream init_rng = root.child("init");
  const ModelState w0 = init_state(cfg.model, init_rng);
  RngStream probe_rng = root.child("probe");
  rep.smoothness = estimate_smoothness(w0, train_ds, 16, 0.1, probe_rng);

  if (theory_schedule) {
    const double t = cfg.schedule.epochs;
    const double inv_beta = rep.smoothness > 0.0 ? 1.0 / rep.smoothness : 1.0;
    cfg.schedule.constant_lr = std::min(1.0 / std::sqrt(t), inv_beta);
    cfg.posterior.theory_schedule = true;
  }
  rep.learning_rate = cfg.schedule.constant_lr.value_or(cfg.schedule.peak_lr);
  rep.sigma = cfg.posterior.theory_schedule
                  ? theory_sigma(cfg.posterior.num_samples, cfg.schedule.epochs,
                                 cfg.model.group_range(cfg.posterior.target_group).size)
                  : cfg.posterior.sigma;

  const TrainResult res = train(cfg, train_ds, test_ds);
  rep.diverged = res.log.diverged;
  for (const auto& r : res.log.rows) rep.grad_norm_sq.push_back(r.grad_norm_sq);
  if (rep.grad_norm_sq.size() >= 4) rep.quarter_means = quarter_means(rep.grad_norm_sq);
  rep.running_average =
      std::accumulate(rep.grad_norm_sq.begin(), rep.grad_norm_sq.end(), 0.0) /
      static_cast<double>(std::max<std::size_t>(1, rep.grad_norm_sq.size()));
  RngStream noise_rng = root.child("noise");
  rep.sampling_noise = estimate_sampling_noise(res.state, train_ds, cfg.batch_size, noise_rng);
  return rep;
}

inline void write_convergence_csv(std::ostream& os, const ConvergenceProbeReport& r) {
  using detail::fmt_double;
  os << "epoch,grad_norm_sq\n";
  for (std::size_t i = 0; i < r.grad_norm_sq.size(); ++i) {
    os << i << ',' << fmt_double(r.grad_norm_sq[i]) << '\n';
  }
}

// Plain gradient descent from w0 for a fixed number of steps; returns every
// iterate including w0.
template <typename GradFn>
std::vector<Vector> gradient_descent(GradFn&& grad, Vector w0, double lr, int steps) {
  std::vector<Vector> path{w0};
  for (int s = 0; s < steps; ++s) {
    w0 -= lr * grad(w0);
    path.push_back(w0);
  }
  return path;
}

// ---------------------------------------------------------------------------
// Toy model: f(w) = 1/2 w^T A w with an injected high-frequency term
// a * sum_i sin(kappa w_i), whose gradient is a kappa cos(kappa w).

struct ToyConfig {
  Eigen::Matrix2d a = (Eigen::Matrix2d() << 1.0, 0.0, 0.0, 10.0).finished();
  double noise_amp = 0.5;
  double freq = 50.0;
  double smooth_sigma = 0.2;
  int num_samples = 32;
  int steps = 200;
  double lr = 0.05;
  Eigen::Vector2d w0{2.0, 2.0};
  // Start point is w0 + U(-jitter, jitter)^2, drawn from the seed.
  double start_jitter = 0.1;
  std::uint64_t seed = 0;
};

struct ToyTrajectories {
  std::vector<Eigen::Vector2d> exact;
  std::vector<Eigen::Vector2d> noisy;
  std::vector<Eigen::Vector2d> smoothed;
};

inline ToyTrajectories toy_trajectory(const ToyConfig& c) {
  require((c.a - c.a.transpose()).cwiseAbs().maxCoeff() <= 1e-12,
          "toy_trajectory: A must be symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(c.a);
  require(es.eigenvalues().minCoeff() >= 0.0, "toy_trajectory: A must be PSD");
  require(c.num_samples >= 1 && c.steps >= 0 && c.smooth_sigma >= 0.0,
          "toy_trajectory: invalid configuration");

  RngStream root(c.seed);
  RngStream start_rng = root.child("start");
  Eigen::Vector2d w0 = c.w0;
  for (int i = 0; i < 2; ++i) w0[i] += c.start_jitter * (2.0 * start_rng.uniform() - 1.0);

  const auto exact_grad = [&](const Eigen::Vector2d& w) -> Eigen::Vector2d {
    return c.a * w;
  };
  const auto noisy_grad = [&](const Eigen::Vector2d& w) -> Eigen::Vector2d {
    Eigen::Vector2d g = c.a * w;
    for (int i = 0; i < 2; ++i) g[i] += c.noise_amp * c.freq * std::cos(c.freq * w[i]);
    return g;
  };

  ToyTrajectories t;
  Eigen::Vector2d we = w0, wn = w0, ws = w0;
  t.exact.push_back(we);
  t.noisy.push_back(wn);
  t.smoothed.push_back(ws);
  RngStream smooth_rng = root.child("smooth");
  for (int s = 0; s < c.steps; ++s) {
    we -= c.lr * exact_grad(we);
    wn -= c.lr * noisy_grad(wn);
    Eigen::Vector2d acc = Eigen::Vector2d::Zero();
    for (int k = 0; k < c.num_samples; ++k) {
      Eigen::Vector2d z;
      z[0] = smooth_rng.normal();
      z[1] = smooth_rng.normal();
      acc += noisy_grad(ws + c.smooth_sigma * z);
    }
    ws -= c.lr * (acc / static_cast<double>(c.num_samples));
    t.exact.push_back(we);
    t.noisy.push_back(wn);
    t.smoothed.push_back(ws);
  }
  return t;
}

inline void write_trajectory_csv(std::ostream& os, const ToyTrajectories& t) {
  using detail::fmt_double;
  os << "step,w1,w2,method\n";
  const auto emit = [&](const std::vector<Eigen::Vector2d>& path, const char* name) {
    for (std::size_t s = 0; s < path.size(); ++s) {
      os << s << ',' << fmt_double(path[s][0]) << ',' << fmt_double(path[s][1]) << ','
         << name << '\n';
    }
  };
  emit(t.exact, "exact");
  emit(t.noisy, "noisy");
  emit(t.smoothed, "smoothed");
}

}  // namespace pcore
