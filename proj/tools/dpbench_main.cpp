/* Copyright 2026 The Datapipe Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "datapipe/bench.hpp"
#include "datapipe/serialize.hpp"

namespace {

using namespace datapipe;

constexpr int kExitSpecError = 2;
constexpr int kExitRuntimeError = 3;

struct CommonArgs {
  std::string spec_path;
  std::string mode = "hand-tuned";
  int epochs = -1;
  double budget_cpu = -1;
  double budget_ram_mb = -1;
  std::vector<std::string> disabled_rules;
  std::string deterministic;  // "", "true", "false"
  uint64_t seed = 0;
  bool seed_set = false;
  std::string report_path;
  bool tuner_dump = false;
};

void AddCommonFlags(CLI::App* cmd, CommonArgs& args, bool with_mode) {
  cmd->add_option("--spec", args.spec_path, "pipeline description file")
      ->required();
  if (with_mode) {
    cmd->add_option("--mode", args.mode,
                    "sequential | hand-tuned | tuned | all-features");
  }
  cmd->add_option("--epochs", args.epochs, "measured epochs (default: spec)");
  cmd->add_option("--budget-cpu", args.budget_cpu, "CPU parallelism budget");
  cmd->add_option("--budget-ram-mb", args.budget_ram_mb, "RAM budget in MiB");
  cmd->add_option("--disable-rule", args.disabled_rules,
                  "disable a rewrite rule by name (repeatable)");
  cmd->add_option("--deterministic", args.deterministic,
                  "override deterministic ordering (true|false)");
  cmd->add_option("--seed", args.seed, "base seed override")
      ->each([&args](const std::string&) { args.seed_set = true; });
  cmd->add_option("--report", args.report_path, "write a JSON report here");
  cmd->add_flag("--tuner-dump", args.tuner_dump,
                "include the tuner's model state in the report");
}

bench::RunConfig ToRunConfig(const CommonArgs& args) {
  bench::RunConfig config;
  auto mode = bench::RunModeFromName(args.mode);
  if (!mode) {
    throw PipelineError(ErrorCode::kParseError, "unknown mode: " + args.mode);
  }
  config.mode = *mode;
  if (args.epochs > 0) config.epochs = args.epochs;
  if (args.budget_cpu > 0) config.cpu_budget = args.budget_cpu;
  if (args.budget_ram_mb > 0) config.ram_budget_mb = args.budget_ram_mb;
  config.disabled_rules = args.disabled_rules;
  if (args.deterministic == "true") config.deterministic = true;
  if (args.deterministic == "false") config.deterministic = false;
  if (args.seed_set) config.seed = args.seed;
  config.tuner_dump = args.tuner_dump;
  return config;
}

void WriteReport(const std::string& path, const std::string& payload) {
  if (path.empty()) return;
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw PipelineError(ErrorCode::kMissingFile,
                        "cannot write report: " + path);
  }
  out << payload << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Self-tuning data pipeline benchmark harness: runs pipeline "
      "descriptions, compares execution modes, and searches parameter "
      "grids."};
  app.require_subcommand(1);

  CommonArgs run_args;
  CLI::App* run_cmd =
      app.add_subcommand("run", "run a pipeline in one mode and report");
  AddCommonFlags(run_cmd, run_args, /*with_mode=*/true);

  CommonArgs compare_args;
  CLI::App* compare_cmd = app.add_subcommand(
      "compare", "run sequential / hand-tuned / tuned and print speedups");
  AddCommonFlags(compare_cmd, compare_args, /*with_mode=*/false);

  CommonArgs grid_args;
  std::vector<std::string> grid_specs;
  CLI::App* grid_cmd = app.add_subcommand(
      "gridsearch", "measure every grid point over tunable knobs");
  AddCommonFlags(grid_cmd, grid_args, /*with_mode=*/false);
  grid_cmd->add_option(
      "--grid", grid_specs,
      "axis as <tunable>=<lo>..<hi>, e.g. map@1=1..8 (repeatable; "
      "tunables are knobs written as AUTO in the spec)");

  CommonArgs dump_args;
  bool dump_optimized = false;
  CLI::App* dump_cmd =
      app.add_subcommand("dump-graph", "print the parsed pipeline graph");
  AddCommonFlags(dump_cmd, dump_args, /*with_mode=*/false);
  dump_cmd->add_flag("--optimized", dump_optimized,
                     "also apply static optimization and print the result");

  CommonArgs fp_args;
  CLI::App* fp_cmd = app.add_subcommand(
      "fingerprint", "print the pipeline's seed-invariant fingerprint");
  AddCommonFlags(fp_cmd, fp_args, /*with_mode=*/false);

  CLI11_PARSE(app, argc, argv);

  UdfRegistry registry;
  try {
    if (run_cmd->parsed()) {
      auto pipeline = ParsePipelineSpecFile(run_args.spec_path, registry);
      bench::RunConfig config = ToRunConfig(run_args);
      try {
        bench::RunReport report = bench::Run(pipeline, config, registry);
        std::cout << report.ToText();
        WriteReport(run_args.report_path, report.ToJson());
      } catch (const PipelineError& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return kExitRuntimeError;
      }
    } else if (compare_cmd->parsed()) {
      auto pipeline = ParsePipelineSpecFile(compare_args.spec_path, registry);
      bench::RunConfig config = ToRunConfig(compare_args);
      try {
        bench::CompareReport report =
            bench::Compare(pipeline, config, registry);
        std::cout << report.ToText();
        WriteReport(compare_args.report_path, report.ToJson());
      } catch (const PipelineError& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return kExitRuntimeError;
      }
    } else if (grid_cmd->parsed()) {
      auto pipeline = ParsePipelineSpecFile(grid_args.spec_path, registry);
      std::vector<bench::GridAxis> grid;
      for (const auto& spec : grid_specs) {
        size_t eq = spec.find('=');
        size_t dots = spec.find("..");
        if (eq == std::string::npos || dots == std::string::npos ||
            dots < eq) {
          std::cerr << "bad --grid axis '" << spec
                    << "' (want name=lo..hi)\n";
          return kExitSpecError;
        }
        bench::GridAxis axis;
        axis.tunable_name = spec.substr(0, eq);
        int64_t lo = std::stoll(spec.substr(eq + 1, dots - eq - 1));
        int64_t hi = std::stoll(spec.substr(dots + 2));
        for (int64_t v = lo; v <= hi; ++v) axis.values.push_back(v);
        grid.push_back(std::move(axis));
      }
      if (grid.empty()) {
        // Default: sweep every AUTO knob over [1, 8].
        for (const auto& t : pipeline.tunables) {
          bench::GridAxis axis;
          axis.tunable_name = t.name;
          for (int64_t v = 1; v <= 8; ++v) axis.values.push_back(v);
          grid.push_back(std::move(axis));
        }
      }
      bench::RunConfig config = ToRunConfig(grid_args);
      try {
        bench::GridSearchResult result =
            bench::GridSearch(pipeline, grid, config, registry);
        std::cout << result.ToText();
        WriteReport(grid_args.report_path, result.ToJson());
      } catch (const PipelineError& e) {
        if (e.code() == ErrorCode::kGridTooLarge ||
            e.code() == ErrorCode::kInvalidAttr) {
          std::cerr << "grid error: " << e.what() << "\n";
          return kExitSpecError;
        }
        std::cerr << "runtime error: " << e.what() << "\n";
        return kExitRuntimeError;
      }
    } else if (dump_cmd->parsed()) {
      auto pipeline = ParsePipelineSpecFile(dump_args.spec_path, registry);
      std::cout << pipeline.graph.ToString();
      if (dump_optimized) {
        RuleSet rules = RuleSet::Default();
        for (const auto& rule : dump_args.disabled_rules) {
          rules.Disable(rule);
        }
        auto [optimized, report] = Optimize(pipeline.graph, rules, registry);
        std::cout << "-- after optimization --\n" << optimized.ToString();
        std::cout << report.ToString();
      }
    } else if (fp_cmd->parsed()) {
      auto pipeline = ParsePipelineSpecFile(fp_args.spec_path, registry);
      std::cout << GraphFingerprint(pipeline.graph).ToHex() << "\n";
    }
  } catch (const PipelineError& e) {
    std::cerr << "spec error: " << e.what() << "\n";
    return kExitSpecError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntimeError;
  }
  return 0;
}
