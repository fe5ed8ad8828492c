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
#ifndef DATAPIPE_PIPELINE_SPEC_HPP_
#define DATAPIPE_PIPELINE_SPEC_HPP_

#include <optional>
#include <string>
#include <vector>

#include "datapipe/graph.hpp"
#include "datapipe/runtime.hpp"
#include "datapipe/udf.hpp"

namespace datapipe {

// A benchmark pipeline parsed from the line-oriented text format (see
// docs/formats.md): one source stanza, ordered op stanzas, and optional
// options / budget / epochs / disable lines. The AUTO token marks knobs
// delegated to the autotuner.
struct ParsedPipeline {
  DatasetGraph graph;
  IteratorOptions options;
  // Simulated consumer think time between pulls (a training step).
  double consumer_think_ms = 0;
  std::optional<double> cpu_budget;
  std::optional<double> ram_budget_mb;
  int epochs = 5;
  std::vector<std::string> disabled_rules;

  // Stanza indexes of tunable knobs, for grid construction: pairs of
  // (human name like "map@2.parallel", node path within the graph).
  struct TunableRef {
    std::string name;
    std::string attr;   // "num_parallel_calls" | "buffer_size"
    int stanza_index;   // position in the op list
  };
  std::vector<TunableRef> tunables;
};

// Parses `text`, registering the synthetic UDFs the pipeline references in
// `registry` (names are derived from stanza positions, so re-parsing the
// same document reuses entries). Throws ParseError with line/column on
// malformed input.
ParsedPipeline ParsePipelineSpec(const std::string& text,
                                 UdfRegistry& registry);

ParsedPipeline ParsePipelineSpecFile(const std::string& path,
                                     UdfRegistry& registry);

}  // namespace datapipe

#endif  // DATAPIPE_PIPELINE_SPEC_HPP_
