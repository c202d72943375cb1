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

// Experiment configuration: a JSON document parsed strictly (unknown keys and
// wrong types are errors) into typed sections, and serialized back in fully
// resolved form.

#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pcore/dataset.hpp"
#include "pcore/diagnostics.hpp"
#include "pcore/error.hpp"
#include "pcore/model.hpp"
#include "pcore/posterior.hpp"
#include "pcore/trainer.hpp"

namespace pcore {

struct DatasetConfig {
  std::string source = "blobs";  // blobs | idx | file
  // blobs
  int num_classes = 10;
  std::size_t num_samples = 2000;
  Index dim = 20;
  double spread = 0.25;
  // idx
  std::string images;
  std::string labels;
  std::size_t max_samples = 0;  // 0 keeps every record
  // file (containers written by gen-data / corrupt)
  std::string train_path;
  std::string test_path;
  // idx and blobs are split by this fraction; file sources are pre-split.
  double train_fraction = 0.8;
  double corruption_ratio = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t corruption_seed = 1;
};

struct LandscapeConfig {
  int grid = 20;
  double range = 1.0;
  double budget_fraction = 0.01;
  std::vector<std::string> methods{"unsmoothed", "stable"};
};

struct Theorem1Config {
  int num_subsets = 30;
  std::size_t subset_size = 0;
  double sigma = 0.01;
  int num_eval = 64;
  std::string weights = "uniform";
};

struct GradmatchConfig {
  std::vector<std::string> methods{"unsmoothed", "stable"};
};

struct ConvergeConfig {
  bool theory_schedule = true;
};

struct TrajectoryConfig {
  ToyConfig toy;
  int num_seeds = 20;
};

struct DiagnosticsConfig {
  bool timing = false;
  bool write_coresets = false;
  LandscapeConfig landscape;
  Theorem1Config theorem1;
  GradmatchConfig gradmatch;
  ConvergeConfig converge;
  TrajectoryConfig trajectory;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  int threads = 1;
  std::optional<std::string> output_dir;
  DatasetConfig dataset;
  std::string model_kind = "mlp";
  Index hidden = 32;
  std::string state_path;  // optional starting state for `select`
  PosteriorSpec posterior;
  // Everything from TrainConfig except the model (derived from the data).
  TrainConfig train;
  DiagnosticsConfig diagnostics;
};

namespace detail {

// Strict reader over one JSON object: each accessor marks its key as known,
// and finish() rejects whatever was not consumed.
class Section {
 public:
  Section(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_, "expected an object");
  }

  [[noreturn]] static void fail(const std::string& where, const std::string& what) {
    throw Error(ErrorKind::kConfig, "config: " + where + ": " + what);
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }
  const nlohmann::json& at(const std::string& key) const { return j_.at(key); }
  std::string where(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    out = convert<T>(j_.at(key), where(key));
  }
  template <typename T>
  void get(const std::string& key, std::optional<T>& out) {
    if (!has(key)) return;
    out = convert<T>(j_.at(key), where(key));
  }
  template <typename T>
  void get(const std::string& key, std::vector<T>& out) {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_array()) fail(where(key), "expected an array");
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i) {
      out.push_back(convert<T>(v[i], where(key) + "[" + std::to_string(i) + "]"));
    }
  }

  void get(const std::string& key, std::vector<std::vector<double>>& out) {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_array()) fail(where(key), "expected an array");
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_array()) fail(where(key), "expected an array of arrays");
      std::vector<double> row;
      for (std::size_t k = 0; k < v[i].size(); ++k) {
        row.push_back(convert<double>(v[i][k], where(key)));
      }
      out.push_back(std::move(row));
    }
  }

  Section child(const std::string& key) {
    seen_.insert(key);
    static const nlohmann::json kEmpty = nlohmann::json::object();
    if (!j_.contains(key) || j_.at(key).is_null()) return Section(kEmpty, where(key));
    return Section(j_.at(key), where(key));
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) fail(where(key), "unknown key");
    }
  }

 private:
  template <typename T>
  static T convert(const nlohmann::json& v, const std::string& where) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) fail(where, "expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) fail(where, "expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) fail(where, "expected a number");
      const double d = v.get<double>();
      if (!std::isfinite(d)) fail(where, "expected a finite number");
      return d;
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
        fail(where, "expected a non-negative integer");
      }
      return static_cast<T>(v.get<std::uint64_t>());
    } else {
      static_assert(std::is_integral_v<T>);
      if (!v.is_number_integer()) fail(where, "expected an integer");
      const auto x = v.get<std::int64_t>();
      if (x < std::numeric_limits<T>::min() || x > std::numeric_limits<T>::max()) {
        fail(where, "integer out of range");
      }
      return static_cast<T>(x);
    }
  }

  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename Fn>
auto config_enum(const std::string& where, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    Section::fail(where, e.what());
  }
}

inline void check(bool cond, const std::string& where, const std::string& what) {
  if (!cond) Section::fail(where, what);
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  using detail::check;
  using detail::config_enum;
  using detail::Section;
  ExperimentConfig c;
  Section root(j, "");
  root.get("seed", c.seed);
  root.get("threads", c.threads);
  root.get("output_dir", c.output_dir);
  check(c.threads >= 1, "threads", "must be >= 1");

  {
    Section s = root.child("dataset");
    DatasetConfig& d = c.dataset;
    s.get("source", d.source);
    s.get("num_classes", d.num_classes);
    s.get("num_samples", d.num_samples);
    s.get("dim", d.dim);
    s.get("spread", d.spread);
    s.get("images", d.images);
    s.get("labels", d.labels);
    s.get("max_samples", d.max_samples);
    s.get("train_path", d.train_path);
    s.get("test_path", d.test_path);
    s.get("train_fraction", d.train_fraction);
    s.get("corruption_ratio", d.corruption_ratio);
    s.get("seed", d.seed);
    s.get("corruption_seed", d.corruption_seed);
    s.finish();
    check(d.source == "blobs" || d.source == "idx" || d.source == "file",
          "dataset.source", "must be one of blobs, idx, file");
    if (d.source == "blobs") {
      check(d.num_classes >= 2, "dataset.num_classes", "must be >= 2");
      check(d.dim >= 1, "dataset.dim", "must be >= 1");
      check(d.spread > 0.0, "dataset.spread", "must be > 0");
      check(d.num_samples >= static_cast<std::size_t>(d.num_classes),
            "dataset.num_samples", "must be >= num_classes");
    } else if (d.source == "idx") {
      check(!d.images.empty() && !d.labels.empty(), "dataset",
            "idx source needs images and labels paths");
    } else {
      check(!d.train_path.empty() && !d.test_path.empty(), "dataset",
            "file source needs train_path and test_path");
    }
    check(d.train_fraction > 0.0 && d.train_fraction < 1.0, "dataset.train_fraction",
          "must be in (0, 1)");
    check(d.corruption_ratio >= 0.0 && d.corruption_ratio <= 1.0,
          "dataset.corruption_ratio", "must be in [0, 1]");
  }

  {
    Section s = root.child("model");
    s.get("kind", c.model_kind);
    s.get("hidden", c.hidden);
    s.get("state_path", c.state_path);
    s.finish();
    check(c.model_kind == "mlp" || c.model_kind == "softmax", "model.kind",
          "must be mlp or softmax");
    check(c.hidden >= 1, "model.hidden", "must be >= 1");
  }

  {
    Section s = root.child("posterior");
    PosteriorSpec& p = c.posterior;
    if (s.has("kind")) {
      const std::string k = s.at("kind").is_string() ? s.at("kind").get<std::string>() : "";
      p.kind = config_enum("posterior.kind", [&] { return parse_posterior_kind(k); });
    }
    s.get("sigma", p.sigma);
    s.get("num_samples", p.num_samples);
    if (s.has("target_group")) {
      const std::string g =
          s.at("target_group").is_string() ? s.at("target_group").get<std::string>() : "";
      p.target_group = config_enum("posterior.target_group", [&] { return parse_group(g); });
    }
    s.get("ridge", p.ridge);
    s.get("ensemble_seeds", p.ensemble_seeds);
    s.get("theory_schedule", p.theory_schedule);
    s.finish();
    check(p.sigma >= 0.0, "posterior.sigma", "must be >= 0");
    check(p.num_samples >= 1, "posterior.num_samples", "must be >= 1");
    check(!p.ridge || *p.ridge > 0.0, "posterior.ridge", "must be > 0");
    check(p.kind != PosteriorKind::kEnsemble || !p.ensemble_seeds.empty(),
          "posterior.ensemble_seeds", "ensemble posterior needs at least one seed");
  }

  TrainConfig& t = c.train;
  {
    Section s = root.child("selection");
    s.get("budget_fraction", t.budget_fraction);
    s.get("pool_size", t.pool_size);
    s.get("num_pools", t.num_pools);
    s.get("per_pool", t.per_pool);
    if (s.has("feature_group")) {
      const std::string g =
          s.at("feature_group").is_string() ? s.at("feature_group").get<std::string>() : "";
      t.feature_group = config_enum("selection.feature_group", [&] { return parse_group(g); });
    }
    s.finish();
    check(t.budget_fraction > 0.0 && t.budget_fraction <= 1.0,
          "selection.budget_fraction", "must be in (0, 1]");
    check(t.pool_size >= 1, "selection.pool_size", "must be >= 1");
    check(t.per_pool >= 1 && t.per_pool <= t.pool_size, "selection.per_pool",
          "must be in [1, pool_size]");
  }

  {
    Section s = root.child("training");
    if (s.has("method")) {
      const std::string m = s.at("method").is_string() ? s.at("method").get<std::string>() : "";
      t.method = config_enum("training.method", [&] { return parse_method(m); });
    }
    Schedule& sc = t.schedule;
    s.get("epochs", sc.epochs);
    s.get("peak_lr", sc.peak_lr);
    s.get("warmup_epochs", sc.warmup_epochs);
    s.get("milestones", sc.milestones);
    s.get("decay_factor", sc.decay_factor);
    s.get("constant_lr", sc.constant_lr);
    s.get("batch_size", t.batch_size);
    s.get("use_gamma_in_sgd", t.use_gamma_in_sgd);
    s.finish();
    check(sc.epochs >= 1, "training.epochs", "must be >= 1");
    check(sc.peak_lr > 0.0, "training.peak_lr", "must be > 0");
    check(sc.warmup_epochs >= 0, "training.warmup_epochs", "must be >= 0");
    for (std::size_t i = 1; i < sc.milestones.size(); ++i) {
      check(sc.milestones[i - 1] < sc.milestones[i], "training.milestones",
            "must be strictly ascending");
    }
    check(sc.decay_factor > 0.0, "training.decay_factor", "must be > 0");
    check(!sc.constant_lr || *sc.constant_lr > 0.0, "training.constant_lr", "must be > 0");
    check(t.batch_size >= 1, "training.batch_size", "must be >= 1");
  }

  {
    Section s = root.child("diagnostics");
    DiagnosticsConfig& d = c.diagnostics;
    s.get("timing", d.timing);
    s.get("write_coresets", d.write_coresets);
    {
      Section l = s.child("landscape");
      l.get("grid", d.landscape.grid);
      l.get("range", d.landscape.range);
      l.get("budget_fraction", d.landscape.budget_fraction);
      l.get("methods", d.landscape.methods);
      l.finish();
      check(d.landscape.grid >= 2, "diagnostics.landscape.grid", "must be >= 2");
      check(d.landscape.range >= 0.0, "diagnostics.landscape.range", "must be >= 0");
      check(d.landscape.budget_fraction > 0.0 && d.landscape.budget_fraction <= 1.0,
            "diagnostics.landscape.budget_fraction", "must be in (0, 1]");
      for (const auto& m : d.landscape.methods) {
        check(m == "unsmoothed" || m == "stable" || m == "random",
              "diagnostics.landscape.methods", "entries must be random, unsmoothed or stable");
      }
    }
    {
      Section p = s.child("theorem1");
      p.get("num_subsets", d.theorem1.num_subsets);
      p.get("subset_size", d.theorem1.subset_size);
      p.get("sigma", d.theorem1.sigma);
      p.get("num_eval", d.theorem1.num_eval);
      p.get("weights", d.theorem1.weights);
      p.finish();
      check(d.theorem1.num_subsets >= 1, "diagnostics.theorem1.num_subsets", "must be >= 1");
      check(d.theorem1.num_eval >= 1, "diagnostics.theorem1.num_eval", "must be >= 1");
      check(d.theorem1.sigma >= 0.0, "diagnostics.theorem1.sigma", "must be >= 0");
      check(d.theorem1.weights == "uniform" || d.theorem1.weights == "greedy",
            "diagnostics.theorem1.weights", "must be uniform or greedy");
    }
    {
      Section g = s.child("gradmatch");
      g.get("methods", d.gradmatch.methods);
      g.finish();
      check(!d.gradmatch.methods.empty(), "diagnostics.gradmatch.methods",
            "must not be empty");
      for (const auto& m : d.gradmatch.methods) {
        config_enum("diagnostics.gradmatch.methods", [&] { return parse_method(m); });
      }
    }
    {
      Section v = s.child("converge");
      v.get("theory_schedule", d.converge.theory_schedule);
      v.finish();
    }
    {
      Section tr = s.child("trajectory");
      ToyConfig& toy = d.trajectory.toy;
      if (tr.has("a")) {
        std::vector<std::vector<double>> a;
        tr.get("a", a);
        check(a.size() == 2 && a[0].size() == 2 && a[1].size() == 2,
              "diagnostics.trajectory.a", "must be a 2x2 matrix");
        toy.a << a[0][0], a[0][1], a[1][0], a[1][1];
      }
      tr.get("noise_amp", toy.noise_amp);
      tr.get("freq", toy.freq);
      tr.get("sigma", toy.smooth_sigma);
      tr.get("num_samples", toy.num_samples);
      tr.get("steps", toy.steps);
      tr.get("lr", toy.lr);
      if (tr.has("w0")) {
        std::vector<double> w0;
        tr.get("w0", w0);
        check(w0.size() == 2, "diagnostics.trajectory.w0", "must have two entries");
        toy.w0 << w0[0], w0[1];
      }
      tr.get("start_jitter", toy.start_jitter);
      tr.get("num_seeds", d.trajectory.num_seeds);
      tr.finish();
      check(toy.num_samples >= 1, "diagnostics.trajectory.num_samples", "must be >= 1");
      check(toy.steps >= 0, "diagnostics.trajectory.steps", "must be >= 0");
      check(toy.smooth_sigma >= 0.0, "diagnostics.trajectory.sigma", "must be >= 0");
      check(toy.start_jitter >= 0.0, "diagnostics.trajectory.start_jitter", "must be >= 0");
      check(d.trajectory.num_seeds >= 1, "diagnostics.trajectory.num_seeds", "must be >= 1");
    }
    s.finish();
  }
  root.finish();

  c.train.posterior = c.posterior;
  c.train.seed = c.seed;
  c.train.threads = c.threads;
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::kConfig, std::string("config: invalid JSON: ") + e.what());
  }
  return parse_config(j);
}

// Fully resolved form. The output directory is deliberately left out: it does
// not affect any result, and leaving it out keeps echoes of identical runs
// byte-identical.
inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  using nlohmann::json;
  const DatasetConfig& d = c.dataset;
  const TrainConfig& t = c.train;
  const PosteriorSpec& p = c.posterior;
  const DiagnosticsConfig& g = c.diagnostics;
  const ToyConfig& toy = g.trajectory.toy;
  json j;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["dataset"] = {{"source", d.source},
                  {"num_classes", d.num_classes},
                  {"num_samples", d.num_samples},
                  {"dim", d.dim},
                  {"spread", d.spread},
                  {"images", d.images},
                  {"labels", d.labels},
                  {"max_samples", d.max_samples},
                  {"train_path", d.train_path},
                  {"test_path", d.test_path},
                  {"train_fraction", d.train_fraction},
                  {"corruption_ratio", d.corruption_ratio},
                  {"seed", d.seed},
                  {"corruption_seed", d.corruption_seed}};
  j["model"] = {{"kind", c.model_kind}, {"hidden", c.hidden}, {"state_path", c.state_path}};
  j["posterior"] = {{"kind", posterior_kind_name(p.kind)},
                    {"sigma", p.sigma},
                    {"num_samples", p.num_samples},
                    {"target_group", group_name(p.target_group)},
                    {"ridge", p.ridge ? json(*p.ridge) : json(nullptr)},
                    {"ensemble_seeds", p.ensemble_seeds},
                    {"theory_schedule", p.theory_schedule}};
  j["selection"] = {{"budget_fraction", t.budget_fraction},
                    {"pool_size", t.pool_size},
                    {"num_pools", t.num_pools},
                    {"per_pool", t.per_pool},
                    {"feature_group", group_name(t.feature_group)}};
  j["training"] = {{"method", method_name(t.method)},
                   {"epochs", t.schedule.epochs},
                   {"peak_lr", t.schedule.peak_lr},
                   {"warmup_epochs", t.schedule.warmup_epochs},
                   {"milestones", t.schedule.milestones},
                   {"decay_factor", t.schedule.decay_factor},
                   {"constant_lr", t.schedule.constant_lr ? json(*t.schedule.constant_lr)
                                                          : json(nullptr)},
                   {"batch_size", t.batch_size},
                   {"use_gamma_in_sgd", t.use_gamma_in_sgd}};
  j["diagnostics"] = {
      {"timing", g.timing},
      {"write_coresets", g.write_coresets},
      {"landscape",
       {{"grid", g.landscape.grid},
        {"range", g.landscape.range},
        {"budget_fraction", g.landscape.budget_fraction},
        {"methods", g.landscape.methods}}},
      {"theorem1",
       {{"num_subsets", g.theorem1.num_subsets},
        {"subset_size", g.theorem1.subset_size},
        {"sigma", g.theorem1.sigma},
        {"num_eval", g.theorem1.num_eval},
        {"weights", g.theorem1.weights}}},
      {"gradmatch", {{"methods", g.gradmatch.methods}}},
      {"converge", {{"theory_schedule", g.converge.theory_schedule}}},
      {"trajectory",
       {{"a", {{toy.a(0, 0), toy.a(0, 1)}, {toy.a(1, 0), toy.a(1, 1)}}},
        {"noise_amp", toy.noise_amp},
        {"freq", toy.freq},
        {"sigma", toy.smooth_sigma},
        {"num_samples", toy.num_samples},
        {"steps", toy.steps},
        {"lr", toy.lr},
        {"w0", {toy.w0[0], toy.w0[1]}},
        {"start_jitter", toy.start_jitter},
        {"num_seeds", g.trajectory.num_seeds}}}};
  return j;
}

// Train/test pair described by the dataset section, corruption applied.
struct ExperimentData {
  Dataset train;
  Dataset test;
};

inline ExperimentData load_experiment_data(const DatasetConfig& d) {
  ExperimentData out;
  if (d.source == "file") {
    out.train = load_dataset(d.train_path);
    out.test = load_dataset(d.test_path);
  } else {
    Dataset all;
    if (d.source == "blobs") {
      all = gen_blobs(d.num_classes, d.num_samples, d.dim, d.spread, d.seed);
    } else {
      all = load_idx(d.images, d.labels);
      if (d.max_samples > 0 && d.max_samples < all.size()) {
        std::vector<std::size_t> head(d.max_samples);
        for (std::size_t i = 0; i < head.size(); ++i) head[i] = i;
        all = subset(all, head);
      }
    }
    Split s = split(all, d.train_fraction, d.seed);
    out.train = std::move(s.train);
    out.test = std::move(s.test);
  }
  if (d.corruption_ratio > 0.0) {
    out.train = corrupt_labels(out.train, d.corruption_ratio, d.corruption_seed);
  }
  return out;
}

inline ModelSpec model_for(const ExperimentConfig& c, const Dataset& train) {
  const int k = std::max(2, train.num_classes);
  return c.model_kind == "mlp" ? ModelSpec::mlp(train.dim(), c.hidden, k)
                               : ModelSpec::softmax(train.dim(), k);
}

}  // namespace pcore
