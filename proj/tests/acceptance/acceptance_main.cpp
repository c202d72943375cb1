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

// Acceptance runner: one PASS/FAIL line per criterion. Pass criterion
// numbers as arguments to run a subset.

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pcore/commands.hpp"

namespace {

using namespace pcore;
using nlohmann::json;
namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string Fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double Mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double Sd(const std::vector<double>& v) {
  const double m = Mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

// ---------------------------------------------------------------------------

double BestCoverage(const Matrix& d, std::size_t m) {
  const auto r = static_cast<std::size_t>(d.rows());
  double best = -1.0;
  for (std::uint32_t mask = 1; mask < (1u << r); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcount(mask)) != m) continue;
    std::vector<std::size_t> s;
    for (std::size_t j = 0; j < r; ++j) {
      if (mask & (1u << j)) s.push_back(j);
    }
    best = std::max(best, coverage(d, s));
  }
  return best;
}

Outcome GreedyOracle() {
  RngStream rng(2026);
  int exact = 0, bound_ok = 0;
  const int n = 50;
  for (int t = 0; t < n; ++t) {
    const std::size_t r = 3 + rng.uniform_index(8);
    const std::size_t m = 1 + rng.uniform_index(2);
    RowMatrix f(static_cast<Index>(r), 4);
    for (Index i = 0; i < f.rows(); ++i) {
      for (Index c = 0; c < f.cols(); ++c) f(i, c) = rng.normal();
    }
    const Matrix d = pairwise_distances(f);
    const GreedyResult g = greedy_cover(d, m);
    const double opt = BestCoverage(d, m);
    const double got = coverage(d, g.picks);
    bound_ok += got >= (1.0 - std::exp(-1.0)) * opt - 1e-12;
    exact += got >= opt - 1e-12;
  }
  return {bound_ok == n && exact >= 40,
          Fmt("bound held %d/%d, exact optimum %d/%d", bound_ok, n, exact, n)};
}

Outcome GradientChecks() {
  const Dataset ds = gen_blobs(3, 60, 5, 0.5, 7);
  double worst_grad = 0.0;
  for (const ModelSpec& spec : {ModelSpec::softmax(5, 3), ModelSpec::mlp(5, 6, 3)}) {
    RngStream rng = RngStream(31).child(spec.kind == ModelKind::kMlp ? "mlp" : "softmax");
    for (int t = 0; t < 100; ++t) {
      RngStream init = rng.child("init", static_cast<std::uint64_t>(t));
      ModelState st = init_state(spec, init);
      st.params += sample_gaussian(init, spec.param_count(), 0.3);
      const std::size_t i = rng.uniform_index(ds.size());
      worst_grad = std::max(worst_grad,
                            relative_error(per_sample_grad(st, ds, i), fd_sample_grad(st, ds, i)));
    }
  }
  RngStream hr(5);
  const ModelSpec sm = ModelSpec::softmax(5, 3);
  const ModelState st(sm, sample_gaussian(hr, sm.param_count(), 0.5));
  const auto all = ds.all_indices();
  const double hess = relative_error(hessian(st, ds, all), fd_hessian(st, ds, all));
  return {worst_grad <= 1e-5 && hess <= 1e-4,
          Fmt("worst gradient rel err %.2e (<= 1e-5), Hessian rel Frobenius err %.2e (<= 1e-4)",
              worst_grad, hess)};
}

Outcome ReductionIdentities() {
  const Split sp = split(gen_blobs(4, 1000, 8, 0.4, 3), 0.8, 3);
  TrainConfig base;
  base.model = ModelSpec::mlp(8, 16, 4);
  base.budget_fraction = 0.1;
  base.pool_size = 40;
  base.per_pool = 10;
  base.schedule.epochs = 10;
  base.schedule.warmup_epochs = 1;
  base.schedule.milestones = {6, 8};
  base.seed = 77;

  TrainConfig s = base, u = base;
  s.method = Method::kStable;
  s.posterior.sigma = 0.0;
  s.posterior.num_samples = 1;
  u.method = Method::kUnsmoothed;
  std::vector<Vector> ts, tu;
  const TrainResult a = train(s, sp.train, sp.test, {true, &ts, nullptr});
  const TrainResult b = train(u, sp.train, sp.test, {true, &tu, nullptr});
  bool coresets_equal = a.coresets.size() == b.coresets.size();
  for (std::size_t e = 0; coresets_equal && e < a.coresets.size(); ++e) {
    coresets_equal = a.coresets[e].entries == b.coresets[e].entries;
  }
  const bool traj_su = ts == tu;

  const std::size_t n = sp.train.size();
  TrainConfig w = base, f = base;
  w.method = Method::kStable;
  w.budget_fraction = 1.0;
  w.pool_size = n;
  w.num_pools = 1;
  w.per_pool = n;
  f.method = Method::kFull;
  std::vector<Vector> tw, tf;
  train(w, sp.train, sp.test, {false, &tw, nullptr});
  train(f, sp.train, sp.test, {false, &tf, nullptr});
  const bool traj_wf = tw == tf;
  return {coresets_equal && traj_su && traj_wf,
          Fmt("point-stable vs unsmoothed: coresets %s, trajectories %s; whole-set stable vs "
              "full: trajectories %s",
              coresets_equal ? "identical" : "differ", traj_su ? "identical" : "differ",
              traj_wf ? "identical" : "differ")};
}

// Blobs stand in for the MNIST subset. 12500 samples split 0.8 gives a
// 10000-sample training set.
json CorruptionConfig(std::uint64_t seed) {
  return {{"seed", seed},
          {"dataset",
           {{"num_classes", 10},
            {"num_samples", 12500},
            {"dim", 20},
            {"spread", 0.25},
            {"corruption_ratio", 0.5},
            {"seed", seed},
            {"corruption_seed", seed + 100}}},
          {"model", {{"kind", "mlp"}, {"hidden", 32}}},
          {"posterior", {{"sigma", 0.1}, {"num_samples", 4}, {"target_group", "all"}}},
          {"selection", {{"budget_fraction", 0.1}, {"pool_size", 100}, {"per_pool", 10}}},
          {"training", {{"epochs", 60}}}};
}

struct CorruptionRuns {
  // [seed][method] with methods random, unsmoothed, stable.
  std::vector<std::vector<MetricsLog>> logs;
  double seconds = 0.0;
};

const CorruptionRuns& CorruptionExperiment() {
  static CorruptionRuns runs = [] {
    CorruptionRuns r;
    const auto t0 = std::chrono::steady_clock::now();
    for (std::uint64_t seed : {1, 2, 3}) {
      const ExperimentConfig c = parse_config(CorruptionConfig(seed));
      const ExperimentData data = load_experiment_data(c.dataset);
      TrainConfig cfg = c.train;
      cfg.model = model_for(c, data.train);
      std::vector<MetricsLog> per;
      for (Method m : {Method::kRandom, Method::kUnsmoothed, Method::kStable}) {
        cfg.method = m;
        per.push_back(train(cfg, data.train, data.test).log);
      }
      r.logs.push_back(std::move(per));
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
  }();
  return runs;
}

Outcome CorruptionRobustness() {
  const CorruptionRuns& r = CorruptionExperiment();
  double acc[3] = {0, 0, 0};
  for (const auto& per : r.logs) {
    for (int m = 0; m < 3; ++m) {
      acc[m] += per[m].diverged ? 0.0 : per[m].last().test_accuracy / r.logs.size();
    }
  }
  const double gap = acc[2] - acc[1];
  const bool pass = gap >= 0.10 && acc[2] >= acc[0] - 0.02 && r.seconds < 1800.0;
  return {pass, Fmt("mean test acc random %.4f, unsmoothed %.4f, stable %.4f; stable - "
                    "unsmoothed = %+.4f (need >= +0.10), stable - random = %+.4f (need >= "
                    "-0.02); %.0f s",
                    acc[0], acc[1], acc[2], gap, acc[2] - acc[0], r.seconds)};
}

Outcome GradientMatchSuperiority() {
  const CorruptionRuns& r = CorruptionExperiment();
  int wins = 0;
  std::string per_seed;
  for (const auto& per : r.logs) {
    const auto window = [](const MetricsLog& log) {
      std::vector<double> v;
      for (const auto& row : log.rows) {
        if (row.epoch >= 10) v.push_back(row.grad_match);
      }
      return v.empty() ? INFINITY : Mean(v);
    };
    const double u = window(per[1]), s = window(per[2]);
    wins += s <= u;
    per_seed += Fmt(" (%.3f vs %.3f)", s, u);
  }
  return {wins >= 2, Fmt("stable <= unsmoothed in %d/3 seeds; stable vs unsmoothed:%s", wins,
                         per_seed.c_str())};
}

Outcome LandscapeAlignment() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> mse_stable, mse_unsmoothed;
  int ties = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const ExperimentConfig c = parse_config(
        {{"seed", seed},
         {"dataset",
          {{"num_classes", 10}, {"num_samples", 6250}, {"dim", 20}, {"spread", 0.25},
           {"seed", seed}}},
         {"model", {{"kind", "mlp"}, {"hidden", 32}}},
         {"training", {{"epochs", 20}, {"warmup_epochs", 2}, {"milestones", {12, 17}}}},
         {"diagnostics",
          {{"landscape",
            {{"grid", 20}, {"range", 1.0}, {"budget_fraction", 0.01},
             {"methods", {"unsmoothed", "stable"}}}}}}});
    const ExperimentData data = load_experiment_data(c.dataset);
    const LandscapeRun run =
        landscape_experiment(c, data.train, data.test, c.diagnostics.landscape.methods);
    mse_unsmoothed.push_back(run.mse[0]);
    mse_stable.push_back(run.mse[1]);
    ties += run.mse[0] == run.mse[1];
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double ms = median(mse_stable), mu = median(mse_unsmoothed);
  return {ms <= mu && secs < 600.0,
          Fmt("median MSE stable %.4g vs unsmoothed %.4g over 10 seeds (%d seeds tied); %.0f s",
              ms, mu, ties, secs)};
}

Outcome TheoremProbe() {
  const ExperimentConfig c = parse_config(
      {{"seed", 1},
       {"dataset", {{"num_classes", 3}, {"num_samples", 75}, {"dim", 3}, {"spread", 0.5}}},
       {"model", {{"kind", "softmax"}}},
       {"training",
        {{"method", "full"}, {"epochs", 20}, {"warmup_epochs", 0},
         {"milestones", json::array()}}}});
  const ExperimentData data = load_experiment_data(c.dataset);
  TrainConfig cfg = c.train;
  cfg.model = model_for(c, data.train);
  const ModelState w = train(cfg, data.train, data.test).state;
  ProbeOptions opt;
  opt.num_subsets = 30;
  opt.sigma = 0.01;
  opt.num_eval = 64;
  const auto rows = theorem1_probe(w, data.train, opt, RngStream(c.seed).child("theorem1"));
  std::vector<double> eps, gap;
  for (const auto& r : rows) {
    eps.push_back(r.stability);
    gap.push_back(r.hessian_gap_norm);
  }
  const double rho = spearman(eps, gap);
  RngStream er(3);
  const auto all = data.train.all_indices();
  const TheoremProbeRow zero = probe_subset(w, data.train, all, {}, opt.sigma, opt.num_eval, er);
  const double zmax = std::max({zero.stability, zero.hessian_gap_norm, zero.hessian_gap_trsq,
                                zero.newton_gap});
  return {rho >= 0.5 && zmax <= 1e-8,
          Fmt("Spearman %.3f over 30 subsets (>= 0.5); full-set row max %.2e (<= 1e-8)", rho,
              zmax)};
}

Outcome ConvergenceProbe() {
  int ok = 0;
  std::string per_seed;
  for (std::uint64_t seed : {1, 2, 3}) {
    const ExperimentConfig c = parse_config(
        {{"seed", seed},
         {"dataset", {{"seed", seed}}},
         {"model", {{"kind", "mlp"}, {"hidden", 32}}},
         {"posterior", {{"target_group", "all"}}},
         {"training", {{"method", "stable"}, {"epochs", 60}}}});
    const ExperimentData data = load_experiment_data(c.dataset);
    TrainConfig cfg = c.train;
    cfg.model = model_for(c, data.train);
    const ConvergenceProbeReport r = convergence_probe(cfg, data.train, data.test, true);
    const bool pass = !r.diverged && r.quarter_means[3] <= 0.5 * r.quarter_means[0];
    ok += pass;
    per_seed += Fmt(" (%.3g -> %.3g, lr %.3g)", r.quarter_means[0], r.quarter_means[3],
                    r.learning_rate);
  }
  return {ok == 3, Fmt("decay held in %d/3 seeds; first -> final quarter:%s", ok,
                       per_seed.c_str())};
}

Outcome ToyTrajectory() {
  const ExperimentConfig c = parse_config(json::object());
  const TrajectorySummary s =
      trajectory_sweep(c.diagnostics.trajectory.toy, 0, 20);
  return {s.median_smoothed < s.median_noisy,
          Fmt("median final distance smoothed %.4f vs noisy %.4f over 20 seeds",
              s.median_smoothed, s.median_noisy)};
}

std::string Slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome CliDeterminism() {
  const fs::path dir = fs::temp_directory_path() / ("pcore_accept_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  const json cfg = {
      {"seed", 4},
      {"threads", 1},
      {"dataset",
       {{"num_classes", 3}, {"num_samples", 250}, {"dim", 4}, {"spread", 0.4},
        {"corruption_ratio", 0.3}}},
      {"model", {{"kind", "mlp"}, {"hidden", 4}}},
      {"selection", {{"budget_fraction", 0.2}, {"pool_size", 20}, {"per_pool", 5}}},
      {"training", {{"epochs", 6}, {"warmup_epochs", 1}, {"milestones", {4}}, {"batch_size", 16}}},
      {"diagnostics",
       {{"write_coresets", true},
        {"landscape", {{"grid", 5}, {"budget_fraction", 0.1}}},
        {"theorem1", {{"num_subsets", 6}, {"num_eval", 4}}},
        {"trajectory", {{"steps", 50}, {"num_seeds", 4}}}}}};
  std::ofstream(dir / "config.json") << cfg.dump(2);

  int same = 0, total = 0;
  std::string bad;
  for (const auto& [name, fn] : command_table()) {
    for (const char* run : {"a", "b"}) {
      const std::string cmd = std::string("'") + PCORE_CLI_PATH + "' " + name + " --config '" +
                              (dir / "config.json").string() + "' --threads 1 --out '" +
                              (dir / name / run).string() + "' >/dev/null 2>&1";
      const int rc = std::system(cmd.c_str());
      if (!WIFEXITED(rc) || WEXITSTATUS(rc) != 0) bad += " " + name + "(exit)";
    }
    for (const auto& e : fs::directory_iterator(dir / name / "a")) {
      ++total;
      if (Slurp(e.path()) == Slurp(dir / name / "b" / e.path().filename())) {
        ++same;
      } else {
        bad += " " + name + "/" + e.path().filename().string();
      }
    }
  }
  fs::remove_all(dir);
  return {bad.empty() && total > 0,
          Fmt("%d/%d files byte-identical across %zu commands%s%s", same, total,
              command_table().size(), bad.empty() ? "" : "; mismatches:", bad.c_str())};
}

Outcome MonteCarloConsistency() {
  Dataset ds;
  ds.num_classes = 2;
  ds.features.resize(2, 2);
  ds.features << 1.0, -0.5, -0.3, 0.8;
  ds.labels = {0, 1};
  RngStream init(12);
  const ModelSpec spec = ModelSpec::softmax(2, 2);
  const ModelState st(spec, sample_gaussian(init, spec.param_count(), 0.5));
  const std::vector<std::size_t> pool{0, 1};
  const auto estimate = [&](int m, RngStream rng) {
    PosteriorSpec p;
    p.sigma = 0.05;
    p.num_samples = m;
    p.target_group = ParamGroup::kAll;
    return smoothed_distances(st, ds, pool, Posterior{p, {}}, ParamGroup::kAll, rng)(0, 1);
  };
  const RngStream root(99);
  const double oracle = estimate(100000, root.child("oracle"));
  std::vector<double> at_m, at_4m;
  for (int r = 0; r < 50; ++r) {
    at_m.push_back(estimate(8, root.child("m", static_cast<std::uint64_t>(r))));
    at_4m.push_back(estimate(32, root.child("4m", static_cast<std::uint64_t>(r))));
  }
  const double se = Sd(at_m) / std::sqrt(static_cast<double>(at_m.size()));
  const double z = std::abs(Mean(at_m) - oracle) / se;
  const double ratio = Sd(at_4m) / Sd(at_m);
  return {z <= 3.0 && ratio <= 0.7,
          Fmt("M=8 mean %.5f vs oracle %.5f: %.2f SE (<= 3); sd ratio 4M/M %.3f (<= 0.7)",
              Mean(at_m), oracle, z, ratio)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"greedy vs exhaustive oracle", GreedyOracle},
      {"gradient and Hessian checks", GradientChecks},
      {"reduction identities", ReductionIdentities},
      {"corruption robustness", CorruptionRobustness},
      {"gradient-match superiority", GradientMatchSuperiority},
      {"landscape alignment", LandscapeAlignment},
      {"curvature probe", TheoremProbe},
      {"convergence probe", ConvergenceProbe},
      {"toy trajectory", ToyTrajectory},
      {"CLI determinism", CliDeterminism},
      {"Monte Carlo consistency", MonteCarloConsistency},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::printf("%s criterion %d (%s): %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id,
                criteria[k].first.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
