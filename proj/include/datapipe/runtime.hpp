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
#ifndef DATAPIPE_RUNTIME_HPP_
#define DATAPIPE_RUNTIME_HPP_

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "datapipe/element.hpp"
#include "datapipe/graph.hpp"
#include "datapipe/model.hpp"
#include "datapipe/udf.hpp"

namespace datapipe {

class NodeIterator;
struct IteratorContext;

struct IteratorOptions {
  // Deterministic ordering: parallel transformations release results in
  // input-sequence order. Disabling it allows any completed result through,
  // trading reproducibility for straggler tolerance.
  bool deterministic = true;
  // Base seed mixed into every random transformation. When absent, a fresh
  // seed is drawn once per iterator, so runs are not reproducible unless
  // shuffle nodes carry their own seed attrs.
  std::optional<uint64_t> seed_override;
};

struct NodeMetricsRow {
  std::string path;
  std::string label;
  int64_t self_time_ns = 0;
  int64_t elements_produced = 0;
};

// The stateful instantiation of a pipeline: owns the iterator tree, worker
// threads, the analytical-model mirror, and per-node metrics. Thread-safe:
// GetNext may be called from multiple threads concurrently.
class PipelineIterator {
 public:
  PipelineIterator(DatasetGraph graph, const UdfRegistry& registry,
                   IteratorOptions options);
  ~PipelineIterator();

  PipelineIterator(const PipelineIterator&) = delete;
  PipelineIterator& operator=(const PipelineIterator&) = delete;

  // Returns the next element, or nullopt after the end of the sequence
  // (sticky). Errors propagate as exceptions; the iterator stays usable for
  // subsequent elements after a UdfError.
  std::optional<Element> GetNext();

  const DatasetGraph& graph() const { return graph_; }
  const IteratorOptions& options() const { return options_; }
  uint64_t base_seed() const { return base_seed_; }

  const std::shared_ptr<autotune::Model>& model() const { return model_; }

  std::vector<NodeMetricsRow> Metrics() const;

  // Elements delivered from the root so far.
  int64_t root_delivered() const;

  // Per-node-path progress counters (cumulative across iterator re-creation
  // within this pipeline). Used by checkpointing.
  std::map<std::string, int64_t> NodeProgress() const;

 private:
  DatasetGraph graph_;
  IteratorOptions options_;
  uint64_t base_seed_;
  std::shared_ptr<autotune::Model> model_;
  std::shared_ptr<IteratorContext> ctx_;
  std::unique_ptr<NodeIterator> root_;
};

// Creates a fresh iterator positioned at the start of `graph`. Validates
// eagerly: every referenced UDF must be registered with the right shape
// (UnknownUdf) and every from_file source outside sub-datasets must point at
// existing files (MissingFile).
std::unique_ptr<PipelineIterator> MakeIterator(const DatasetGraph& graph,
                                               const UdfRegistry& registry,
                                               IteratorOptions options = {});

// Writes `elements` in the length-prefixed record format read by from_file:
// repeated [u32 little-endian payload length][payload bytes]. Elements must
// be single byte-string components.
void WriteRecordFile(const std::string& path,
                     const std::vector<std::string>& payloads);

}  // namespace datapipe

#endif  // DATAPIPE_RUNTIME_HPP_
