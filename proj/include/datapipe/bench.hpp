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
#ifndef DATAPIPE_BENCH_HPP_
#define DATAPIPE_BENCH_HPP_

#include <optional>
#include <string>
#include <vector>

#include "datapipe/optimizer.hpp"
#include "datapipe/pipeline_spec.hpp"
#include "datapipe/tuner.hpp"

namespace datapipe::bench {

enum class RunMode {
  kSequential,   // parallelism forced to 1, prefetch stripped
  kHandTuned,    // knobs as written in the spec (AUTO resolves to 1)
  kTuned,        // tunable knobs delegated to the autotuner
  kAllFeatures,  // tuned + static optimization + nondeterministic order
};

const char* RunModeName(RunMode mode);
std::optional<RunMode> RunModeFromName(const std::string& name);

struct RunConfig {
  RunMode mode = RunMode::kHandTuned;
  std::optional<int> epochs;           // measured epochs; spec default 5
  std::optional<double> cpu_budget;
  std::optional<double> ram_budget_mb;
  std::optional<bool> deterministic;
  std::optional<uint64_t> seed;
  std::vector<std::string> disabled_rules;
  bool tuner_dump = false;
};

struct NodeStat {
  std::string path;
  std::string label;
  double self_time_ms = 0;
  int64_t elements = 0;
};

struct RunReport {
  RunMode mode = RunMode::kHandTuned;
  int epochs = 0;
  int64_t elements_per_epoch = 0;
  std::vector<double> epoch_wall_ms;
  double median_epoch_ms = 0;
  double p50_batch_ms = 0;
  double p90_batch_ms = 0;
  double p99_batch_ms = 0;
  std::vector<NodeStat> node_stats;
  RewriteReport rewrites;
  std::vector<autotune::ParamSetting> final_params;
  std::string tuner_dump;

  std::string ToText() const;
  std::string ToJson() const;
};

// Builds the mode's variant of the pipeline, runs one warm-up epoch plus the
// measured epochs on a single driver thread, and reports wall times,
// per-element latency percentiles, per-node metrics, applied rewrites, and
// the final tuned parameters.
RunReport Run(const ParsedPipeline& pipeline, const RunConfig& config,
              UdfRegistry& registry);

struct CompareReport {
  RunReport sequential;
  RunReport hand_tuned;
  RunReport tuned;
  double speedup_hand_vs_sequential = 0;
  double speedup_tuned_vs_sequential = 0;
  double tuned_vs_hand = 0;  // tuned time / hand time

  std::string ToText() const;
  std::string ToJson() const;
};

CompareReport Compare(const ParsedPipeline& pipeline, const RunConfig& config,
                      UdfRegistry& registry);

struct GridAxis {
  std::string tunable_name;  // from ParsedPipeline::tunables
  std::vector<int64_t> values;
};

struct GridPoint {
  std::vector<std::pair<std::string, int64_t>> assignment;
  double median_epoch_ms = 0;
};

struct GridSearchResult {
  std::vector<GridPoint> points;
  GridPoint best;

  std::string ToText() const;
  std::string ToJson() const;
};

// Measures every grid point (bounded: at most 4096 points, else
// GridTooLarge) with one warm-up and `epochs` measured epochs, returning the
// assignment with the smallest median epoch time.
GridSearchResult GridSearch(const ParsedPipeline& pipeline,
                            const std::vector<GridAxis>& grid,
                            const RunConfig& config, UdfRegistry& registry);

}  // namespace datapipe::bench

#endif  // DATAPIPE_BENCH_HPP_
