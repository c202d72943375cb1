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

// Command-line driver. Usage:
//
//   pcore <command> [--config FILE] [--out DIR] [--seed N] [--threads N]
//                   [--method full|random|unsmoothed|stable]
//
// Commands: gen-data, corrupt, train, select, landscape, gradmatch,
// verify-theorem1, converge, trajectory.

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "pcore/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Posterior-smoothed coreset selection experiments"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  pcore::CommandOverrides ov;
  std::string config, out, method;
  std::uint64_t seed = 0;
  int threads = 1;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"gen-data", "Generate or import a dataset and write the train/test split"},
      {"corrupt", "Flip a fraction of training labels"},
      {"train", "Train with a full, random, unsmoothed or stable data pipeline"},
      {"select", "Run one selection round and write the coreset"},
      {"landscape", "Paired loss-landscape grids for full data and coresets"},
      {"gradmatch", "Per-epoch gradient-match error for each method"},
      {"verify-theorem1", "Stability versus Hessian-gap probe on a small model"},
      {"converge", "Gradient-norm decay under the theory schedule"},
      {"trajectory", "Toy exact / noisy / smoothed gradient descent paths"},
  };
  std::vector<CLI::App*> subs;
  for (const auto& [name, help] : commands) {
    CLI::App* s = app.add_subcommand(name, help);
    s->add_option("--config", config, "Experiment config (JSON)");
    s->add_option("--out", out, "Output directory");
    s->add_option("--seed", seed, "Global seed (overrides the config)");
    s->add_option("--threads", threads, "Worker threads (1 is bit-exact)")
        ->check(CLI::PositiveNumber);
    s->add_option("--method", method, "full | random | unsmoothed | stable");
    subs.push_back(s);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << nlohmann::json{{"status", "error"},
                                {"kind", "usage"},
                                {"exit_code", pcore::kExitConfig},
                                {"message", e.what()}}
                     .dump()
              << std::endl;
    return pcore::kExitConfig;
  }

  for (CLI::App* s : subs) {
    if (!s->parsed()) continue;
    if (s->count("--config")) ov.config_path = config;
    if (s->count("--out")) ov.out = out;
    if (s->count("--seed")) ov.seed = seed;
    if (s->count("--threads")) ov.threads = threads;
    if (s->count("--method")) ov.method = method;
    return pcore::run_command(s->get_name(), ov);
  }
  return pcore::kExitConfig;
}
