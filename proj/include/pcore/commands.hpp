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

// Batch commands behind the command-line driver. Each command reads a
// resolved ExperimentConfig, writes its artifacts plus `config.json` into the
// output directory, and reports failures as `error.json`.

#pragma once

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pcore/config.hpp"
#include "pcore/dataset.hpp"
#include "pcore/diagnostics.hpp"
#include "pcore/error.hpp"
#include "pcore/model.hpp"
#include "pcore/selection.hpp"
#include "pcore/trainer.hpp"

namespace pcore {

inline constexpr const char* kOutRootEnv = "PCORE_OUT_ROOT";

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitIo = 3,
  kExitDiverged = 4,
};

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig:
    case ErrorKind::kInvalidArgument:
    case ErrorKind::kBudget:
      return kExitConfig;
    case ErrorKind::kIo:
    case ErrorKind::kFormat:
      return kExitIo;
    case ErrorKind::kDiverged:
      return kExitDiverged;
  }
  return kExitFailure;
}

// --out, else config output_dir, else $PCORE_OUT_ROOT/<command>, else
// ./pcore_out/<command>.
inline std::string resolve_output_dir(const std::string& command,
                                      const std::optional<std::string>& flag,
                                      const std::optional<std::string>& from_config) {
  if (flag && !flag->empty()) return *flag;
  if (from_config && !from_config->empty()) return *from_config;
  const char* root = std::getenv(kOutRootEnv);
  const std::filesystem::path base = (root && *root) ? root : "pcore_out";
  return (base / command).string();
}

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << text;
  out.flush();
  if (!out) throw Error(ErrorKind::kIo, "write failed: " + path.string());
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  write_text(path, j.dump(2) + "\n");
}

template <typename Writer>
void write_stream(const std::filesystem::path& path, Writer&& w) {
  std::ostringstream os;
  w(os);
  write_text(path, os.str());
}

inline TrainConfig train_config(const ExperimentConfig& c, const Dataset& train) {
  TrainConfig t = c.train;
  t.model = model_for(c, train);
  return t;
}

// Coreset of one method at a fixed state, with the budget of `cfg`.
inline Coreset select_with(Method m, const TrainConfig& cfg, const ModelState& state,
                           const Dataset& ds, const RngStream& rng) {
  const std::size_t n = ds.size();
  validate(cfg, n);
  SelectionConfig sel;
  sel.pool_size = cfg.pool_size;
  sel.num_pools = resolved_num_pools(cfg, n);
  sel.per_pool = cfg.per_pool;
  sel.feature_group = cfg.feature_group;
  sel.threads = cfg.threads;
  switch (m) {
    case Method::kFull: {
      Coreset cs;
      cs.method = "full";
      for (std::size_t i = 0; i < n; ++i) cs.entries.push_back({i, 1, 0});
      return cs;
    }
    case Method::kRandom:
      return baseline_random(n, budget_size(cfg, n), rng);
    case Method::kUnsmoothed:
      return baseline_unsmoothed(state, ds, sel, rng);
    case Method::kStable: {
      Posterior post{cfg.posterior, {}};
      require(post.spec.kind != PosteriorKind::kEnsemble,
              "select: the ensemble posterior is only available through train",
              ErrorKind::kConfig);
      return select_round(state, ds, sel, post, rng, 0, "stable");
    }
  }
  return {};
}

}  // namespace detail

struct CommandContext {
  ExperimentConfig config;
  std::filesystem::path out;
};

using CommandFn = std::function<void(const CommandContext&)>;

// Thrown by commands whose run completed but diverged; artifacts are already
// written when it propagates.
struct Diverged : Error {
  int epoch;
  explicit Diverged(int e)
      : Error(ErrorKind::kDiverged, "training diverged at epoch " + std::to_string(e)),
        epoch(e) {}
};

inline void cmd_gen_data(const CommandContext& ctx) {
  DatasetConfig d = ctx.config.dataset;
  d.corruption_ratio = 0.0;
  const ExperimentData data = load_experiment_data(d);
  save_dataset(data.train, (ctx.out / "train.pcd").string());
  save_dataset(data.test, (ctx.out / "test.pcd").string());
  detail::write_json(ctx.out / "dataset.json",
                     {{"train_size", data.train.size()},
                      {"test_size", data.test.size()},
                      {"dim", data.train.dim()},
                      {"num_classes", data.train.num_classes},
                      {"name", data.train.name}});
}

inline void cmd_corrupt(const CommandContext& ctx) {
  const DatasetConfig& d = ctx.config.dataset;
  require(d.corruption_ratio > 0.0, "corrupt: dataset.corruption_ratio must be > 0",
          ErrorKind::kConfig);
  const ExperimentData data = load_experiment_data(d);
  save_dataset(data.train, (ctx.out / "train.pcd").string());
  save_dataset(data.test, (ctx.out / "test.pcd").string());
  detail::write_json(ctx.out / "corruption.json",
                     {{"ratio", d.corruption_ratio},
                      {"seed", d.corruption_seed},
                      {"flipped", data.train.corruption_count},
                      {"train_size", data.train.size()}});
}

inline void cmd_train(const CommandContext& ctx) {
  const ExperimentConfig& c = ctx.config;
  const ExperimentData data = load_experiment_data(c.dataset);
  const TrainConfig cfg = detail::train_config(c, data.train);
  TrainOptions opts;
  opts.keep_coresets = c.diagnostics.write_coresets;
  const TrainResult res = train(cfg, data.train, data.test, opts);
  const bool timing = c.diagnostics.timing;
  detail::write_stream(ctx.out / "metrics.csv",
                       [&](std::ostream& os) { write_metrics_csv(os, res.log, timing); });
  detail::write_json(ctx.out / "summary.json", summary_json(res.log, timing));
  save_state(res.state, (ctx.out / "final_state.pcm").string());
  if (opts.keep_coresets) {
    detail::write_stream(ctx.out / "coresets.csv", [&](std::ostream& os) {
      write_coreset_csv_header(os);
      for (const auto& cs : res.coresets) write_coreset_csv_rows(os, cs);
    });
  }
  if (res.log.diverged) throw Diverged(res.log.diverged_epoch);
}

inline void cmd_select(const CommandContext& ctx) {
  const ExperimentConfig& c = ctx.config;
  const ExperimentData data = load_experiment_data(c.dataset);
  const TrainConfig cfg = detail::train_config(c, data.train);
  const RngStream root(c.seed);
  ModelState state;
  if (!c.state_path.empty()) {
    state = load_state(c.state_path);
    require(state.spec == cfg.model, "select: stored state does not match the model",
            ErrorKind::kConfig);
  } else {
    RngStream init = root.child("init");
    state = init_state(cfg.model, init);
  }
  const Coreset cs =
      detail::select_with(cfg.method, cfg, state, data.train, root.child("select", 0));
  detail::write_stream(ctx.out / "coreset.csv", [&](std::ostream& os) {
    write_coreset_csv_header(os);
    write_coreset_csv_rows(os, cs);
  });
  const GradientMatch gm = gradient_match_error(state, cs, data.train);
  detail::write_json(ctx.out / "selection.json",
                     {{"method", method_name(cfg.method)},
                      {"size", cs.size()},
                      {"grad_match", gm.verbatim},
                      {"grad_match_normalized", gm.normalized}});
}

// Result of the paired landscape experiment: one full-data grid and one
// coreset-weighted grid per method, all on the same directions.
struct LandscapeRun {
  LandscapeGrid full;
  std::vector<std::pair<std::string, LandscapeGrid>> coresets;
  std::vector<double> mse;
};

inline LandscapeRun landscape_experiment(const ExperimentConfig& c, const Dataset& train,
                                         const Dataset& test,
                                         const std::vector<std::string>& methods) {
  TrainConfig cfg = detail::train_config(c, train);
  cfg.method = Method::kFull;
  const TrainResult trained = pcore::train(cfg, train, test);
  if (trained.log.diverged) throw Diverged(trained.log.diverged_epoch);
  const ModelState& w = trained.state;

  TrainConfig sel = cfg;
  sel.budget_fraction = c.diagnostics.landscape.budget_fraction;
  const LandscapeConfig& lc = c.diagnostics.landscape;
  const RngStream root(c.seed);
  const std::uint64_t dir_seed = root.child("directions").next_u64();

  LandscapeRun run;
  const std::vector<std::size_t> all = train.all_indices();
  run.full = landscape_slice(w, train, all, {}, lc.grid, lc.range, dir_seed);
  for (const auto& name : methods) {
    const Method m = parse_method(name);
    const Coreset cs = detail::select_with(m, sel, w, train, root.child("landscape-select"));
    const auto idx = cs.indices();
    const auto gw = cs.weights();
    LandscapeGrid g = landscape_slice(w, train, idx, gw, lc.grid, lc.range, dir_seed);
    run.mse.push_back(landscape_mse(run.full, g));
    run.coresets.emplace_back(name, std::move(g));
  }
  return run;
}

inline void cmd_landscape(const CommandContext& ctx) {
  const ExperimentConfig& c = ctx.config;
  const ExperimentData data = load_experiment_data(c.dataset);
  const LandscapeRun run =
      landscape_experiment(c, data.train, data.test, c.diagnostics.landscape.methods);
  detail::write_stream(ctx.out / "landscape_full.csv",
                       [&](std::ostream& os) { write_landscape_csv(os, run.full); });
  nlohmann::json summary;
  summary["origin_loss_full"] = run.full.origin_loss;
  for (std::size_t i = 0; i < run.coresets.size(); ++i) {
    const auto& [name, g] = run.coresets[i];
    detail::write_stream(ctx.out / ("landscape_" + name + ".csv"),
                         [&](std::ostream& os) { write_landscape_csv(os, g); });
    summary["mse"][name] = run.mse[i];
    summary["origin_loss"][name] = g.origin_loss;
  }
  nlohmann::json warnings = nlohmann::json::array();
  for (const auto& w : run.full.warnings) warnings.push_back(w);
  summary["warnings"] = warnings;
  detail::write_json(ctx.out / "landscape.json", summary);
}

inline void cmd_gradmatch(const CommandContext& ctx) {
  const ExperimentConfig& c = ctx.config;
  const ExperimentData data = load_experiment_data(c.dataset);
  std::ostringstream os;
  os << "epoch,method,grad_match,grad_match_normalized\n";
  nlohmann::json summary;
  int diverged_epoch = -1;
  for (const auto& name : c.diagnostics.gradmatch.methods) {
    TrainConfig cfg = detail::train_config(c, data.train);
    cfg.method = parse_method(name);
    const TrainResult res = train(cfg, data.train, data.test);
    double sum = 0.0;
    for (const auto& r : res.log.rows) {
      os << r.epoch << ',' << name << ',' << detail::fmt_double(r.grad_match) << ','
         << detail::fmt_double(r.grad_match_normalized) << '\n';
      sum += r.grad_match;
    }
    summary[name] = {{"mean_grad_match",
                      res.log.rows.empty() ? 0.0 : sum / res.log.rows.size()},
                     {"diverged", res.log.diverged}};
    if (res.log.diverged && diverged_epoch < 0) diverged_epoch = res.log.diverged_epoch;
  }
  detail::write_text(ctx.out / "gradmatch.csv", os.str());
  detail::write_json(ctx.out / "gradmatch.json", summary);
  if (diverged_epoch >= 0) throw Diverged(diverged_epoch);
}

inline void cmd_verify_theorem1(const CommandContext& ctx) {
  const ExperimentConfig& c = ctx.config;
  const ExperimentData data = load_experiment_data(c.dataset);
  TrainConfig cfg = detail::train_config(c, data.train);
  require(cfg.model.param_count() <= kHessianBudget,
          "verify-theorem1: model exceeds the Hessian budget", ErrorKind::kConfig);
  cfg.method = Method::kFull;
  const TrainResult trained = train(cfg, data.train, data.test);
  if (trained.log.diverged) throw Diverged(trained.log.diverged_epoch);

  const Theorem1Config& tc = c.diagnostics.theorem1;
  ProbeOptions opt;
  opt.num_subsets = tc.num_subsets;
  opt.subset_size = tc.subset_size;
  opt.sigma = tc.sigma;
  opt.num_eval = tc.num_eval;
  opt.weights = tc.weights == "greedy" ? ProbeWeights::kGreedy : ProbeWeights::kUniform;
  const auto rows =
      theorem1_probe(trained.state, data.train, opt, RngStream(c.seed).child("theorem1"));
  detail::write_stream(ctx.out / "theorem1.csv",
                       [&](std::ostream& os) { write_probe_csv(os, rows); });
  std::vector<double> eps, norm;
  for (const auto& r : rows) {
    eps.push_back(r.stability);
    norm.push_back(r.hessian_gap_norm);
  }
  nlohmann::json summary{{"num_subsets", rows.size()}};
  summary["spearman_stability_vs_gap"] =
      rows.size() >= 2 ? nlohmann::json(spearman(eps, norm)) : nlohmann::json();
  detail::write_json(ctx.out / "theorem1.json", summary);
}

inline void cmd_converge(const CommandContext& ctx) {
  const ExperimentConfig& c = ctx.config;
  const ExperimentData data = load_experiment_data(c.dataset);
  const TrainConfig cfg = detail::train_config(c, data.train);
  const ConvergenceProbeReport rep =
      convergence_probe(cfg, data.train, data.test, c.diagnostics.converge.theory_schedule);
  detail::write_stream(ctx.out / "convergence.csv",
                       [&](std::ostream& os) { write_convergence_csv(os, rep); });
  detail::write_json(ctx.out / "convergence.json",
                     {{"quarter_means", rep.quarter_means},
                      {"running_average", rep.running_average},
                      {"smoothness", rep.smoothness},
                      {"sampling_noise", rep.sampling_noise},
                      {"learning_rate", rep.learning_rate},
                      {"sigma", rep.sigma},
                      {"diverged", rep.diverged}});
  if (rep.diverged) throw Diverged(static_cast<int>(rep.grad_norm_sq.size()) - 1);
}

struct TrajectorySummary {
  std::vector<double> noisy_distance;
  std::vector<double> smoothed_distance;
  double median_noisy = 0.0;
  double median_smoothed = 0.0;
};

inline double median(std::vector<double> v) {
  require(!v.empty(), "median: empty input");
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

// Final-point distances to the exact trajectory over seeds base, base+1, ...
inline TrajectorySummary trajectory_sweep(ToyConfig toy, std::uint64_t base, int num_seeds) {
  TrajectorySummary s;
  for (int i = 0; i < num_seeds; ++i) {
    toy.seed = base + static_cast<std::uint64_t>(i);
    const ToyTrajectories t = toy_trajectory(toy);
    s.noisy_distance.push_back((t.noisy.back() - t.exact.back()).norm());
    s.smoothed_distance.push_back((t.smoothed.back() - t.exact.back()).norm());
  }
  s.median_noisy = median(s.noisy_distance);
  s.median_smoothed = median(s.smoothed_distance);
  return s;
}

inline void cmd_trajectory(const CommandContext& ctx) {
  const ExperimentConfig& c = ctx.config;
  ToyConfig toy = c.diagnostics.trajectory.toy;
  toy.seed = c.seed;
  const ToyTrajectories t = toy_trajectory(toy);
  detail::write_stream(ctx.out / "trajectory.csv",
                       [&](std::ostream& os) { write_trajectory_csv(os, t); });
  const TrajectorySummary s =
      trajectory_sweep(toy, c.seed, c.diagnostics.trajectory.num_seeds);
  std::ostringstream os;
  os << "seed,noisy_distance,smoothed_distance\n";
  for (std::size_t i = 0; i < s.noisy_distance.size(); ++i) {
    os << c.seed + i << ',' << detail::fmt_double(s.noisy_distance[i]) << ','
       << detail::fmt_double(s.smoothed_distance[i]) << '\n';
  }
  detail::write_text(ctx.out / "trajectory_seeds.csv", os.str());
  detail::write_json(ctx.out / "trajectory.json",
                     {{"num_seeds", s.noisy_distance.size()},
                      {"median_noisy_distance", s.median_noisy},
                      {"median_smoothed_distance", s.median_smoothed}});
}

inline const std::map<std::string, CommandFn>& command_table() {
  static const std::map<std::string, CommandFn> table{
      {"gen-data", cmd_gen_data},
      {"corrupt", cmd_corrupt},
      {"train", cmd_train},
      {"select", cmd_select},
      {"landscape", cmd_landscape},
      {"gradmatch", cmd_gradmatch},
      {"verify-theorem1", cmd_verify_theorem1},
      {"converge", cmd_converge},
      {"trajectory", cmd_trajectory},
  };
  return table;
}

struct CommandOverrides {
  std::optional<std::string> config_path;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> method;
};

// Runs one command end to end and returns the process exit code. Failures
// are written to `<out>/error.json` when the directory is usable and always
// echoed as one JSON line on `err`.
inline int run_command(const std::string& name, const CommandOverrides& ov,
                       std::ostream& err = std::cerr) {
  std::filesystem::path out;
  const auto report = [&](ErrorKind kind, const std::string& msg,
                          nlohmann::json extra = nlohmann::json::object()) {
    const int code = exit_code_for(kind);
    nlohmann::json j{{"status", kind == ErrorKind::kDiverged ? "diverged" : "error"},
                     {"command", name},
                     {"kind", error_kind_name(kind)},
                     {"exit_code", code},
                     {"message", msg}};
    j.update(extra);
    err << j.dump() << std::endl;
    if (!out.empty()) {
      std::error_code ec;
      std::filesystem::create_directories(out, ec);
      if (!ec) {
        std::ofstream f(out / "error.json", std::ios::binary);
        if (f) f << j.dump(2) << "\n";
      }
    }
    return code;
  };

  const auto it = command_table().find(name);
  if (it == command_table().end()) {
    return report(ErrorKind::kConfig, "unknown command: " + name);
  }
  try {
    // Provisional location so config errors still leave an error.json.
    out = resolve_output_dir(name, ov.out, std::nullopt);
    ExperimentConfig cfg =
        ov.config_path ? load_config(*ov.config_path) : parse_config(nlohmann::json::object());
    out = resolve_output_dir(name, ov.out, cfg.output_dir);
    if (ov.seed) cfg.seed = cfg.train.seed = *ov.seed;
    if (ov.threads) {
      require(*ov.threads >= 1, "--threads must be >= 1", ErrorKind::kConfig);
      cfg.threads = cfg.train.threads = *ov.threads;
    }
    if (ov.method) {
      Method m;
      try {
        m = parse_method(*ov.method);
      } catch (const Error& e) {
        throw Error(ErrorKind::kConfig, std::string("--method: ") + e.what());
      }
      cfg.train.method = m;
      cfg.diagnostics.gradmatch.methods = {*ov.method};
      if (m == Method::kRandom || m == Method::kUnsmoothed || m == Method::kStable) {
        cfg.diagnostics.landscape.methods = {*ov.method};
      }
    }
    std::error_code ec;
    std::filesystem::create_directories(out, ec);
    if (ec) throw Error(ErrorKind::kIo, "cannot create output directory " + out.string());
    std::filesystem::remove(out / "error.json", ec);
    detail::write_json(out / "config.json", config_to_json(cfg));
    it->second(CommandContext{cfg, out});
  } catch (const Diverged& e) {
    return report(ErrorKind::kDiverged, e.what(), {{"diverged_epoch", e.epoch}});
  } catch (const Error& e) {
    return report(e.kind(), e.what());
  } catch (const std::exception& e) {
    err << nlohmann::json{{"status", "error"},
                          {"command", name},
                          {"kind", "internal"},
                          {"exit_code", kExitFailure},
                          {"message", e.what()}}
               .dump()
        << std::endl;
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace pcore
