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
#ifndef DATAPIPE_CHECKPOINT_HPP_
#define DATAPIPE_CHECKPOINT_HPP_

#include <memory>
#include <string>

#include "datapipe/runtime.hpp"

namespace datapipe {

// Versioned binary snapshot of an iterator's position (see docs/formats.md).
// The blob carries the graph fingerprint, the effective base seed, and
// per-node progress counters; element data is never persisted. In-flight
// buffered results are dropped at save time and recomputed on restore.
struct CheckpointBlob {
  std::string bytes;
};

// Captures the iterator's position. The caller must ensure no GetNext call
// is in flight. Buffered-but-undelivered work is excluded (it will be
// recomputed after restore).
CheckpointBlob Save(const PipelineIterator& it);

// Rebuilds a fresh iterator for `graph` and deterministically replays it to
// the saved position, so the restored iterator produces exactly the elements
// the saved one had not yet delivered (deterministic mode). Throws
// FingerprintMismatch when `graph` differs from the saved pipeline,
// VersionMismatch for unknown blob versions, and CorruptBlob for damaged or
// inconsistent payloads.
std::unique_ptr<PipelineIterator> Restore(const DatasetGraph& graph,
                                          const UdfRegistry& registry,
                                          const CheckpointBlob& blob);

void WriteCheckpointFile(const std::string& path, const CheckpointBlob& blob);
CheckpointBlob ReadCheckpointFile(const std::string& path);

}  // namespace datapipe

#endif  // DATAPIPE_CHECKPOINT_HPP_
