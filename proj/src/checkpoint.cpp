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
#include "datapipe/checkpoint.hpp"

#include <fstream>

#include "datapipe/codec.hpp"
#include "datapipe/errors.hpp"
#include "datapipe/serialize.hpp"

namespace datapipe {

namespace {
constexpr char kMagic[4] = {'D', 'P', 'C', '1'};
constexpr uint16_t kVersion = 1;
}  // namespace

CheckpointBlob Save(const PipelineIterator& it) {
  ByteWriter w;
  w.Raw(std::string_view(kMagic, 4));
  w.U16(kVersion);
  Fingerprint fp = GraphFingerprint(it.graph());
  w.Raw(std::string_view(reinterpret_cast<const char*>(fp.digest.data()),
                         fp.digest.size()));
  w.U64(it.base_seed());
  w.U8(it.options().deterministic ? 1 : 0);
  w.U64(static_cast<uint64_t>(it.root_delivered()));

  auto progress = it.NodeProgress();
  w.U32(static_cast<uint32_t>(progress.size()));
  for (const auto& [path, delivered] : progress) {
    w.Str(path);
    w.U64(static_cast<uint64_t>(delivered));
  }
  return CheckpointBlob{w.Take()};
}

std::unique_ptr<PipelineIterator> Restore(const DatasetGraph& graph,
                                          const UdfRegistry& registry,
                                          const CheckpointBlob& blob) {
  if (blob.bytes.size() < 6 ||
      std::string_view(blob.bytes).substr(0, 4) != std::string_view(kMagic, 4)) {
    throw PipelineError(ErrorCode::kCorruptBlob, "bad checkpoint magic");
  }
  ByteReader r(blob.bytes);
  r.U32();  // magic
  uint16_t version = r.U16();
  if (version != kVersion) {
    throw PipelineError(ErrorCode::kVersionMismatch,
                        "unsupported checkpoint version " +
                            std::to_string(version));
  }

  Fingerprint saved;
  try {
    for (auto& b : saved.digest) b = r.U8();
    uint64_t base_seed = r.U64();
    bool deterministic = r.U8() != 0;
    uint64_t root_delivered = r.U64();
    uint32_t entries = r.U32();
    for (uint32_t i = 0; i < entries; ++i) {
      r.Str();
      r.U64();
    }
    r.ExpectEnd();

    if (GraphFingerprint(graph) != saved) {
      throw PipelineError(ErrorCode::kFingerprintMismatch,
                          "checkpoint was taken from a different pipeline");
    }

    IteratorOptions options;
    options.deterministic = deterministic;
    options.seed_override = base_seed;
    auto it = MakeIterator(graph, registry, options);

    // Replay: re-derive all internal state by advancing the fresh pipeline
    // to the saved position. Work that sat in buffers at save time is
    // recomputed here rather than having been persisted.
    for (uint64_t i = 0; i < root_delivered; ++i) {
      if (!it->GetNext()) {
        throw PipelineError(
            ErrorCode::kCorruptBlob,
            "checkpoint claims " + std::to_string(root_delivered) +
                " delivered elements but the pipeline ended after " +
                std::to_string(i));
      }
    }
    return it;
  } catch (const MalformedInputError& e) {
    throw PipelineError(ErrorCode::kCorruptBlob, e.what());
  }
}

void WriteCheckpointFile(const std::string& path, const CheckpointBlob& blob) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw PipelineError(ErrorCode::kMissingFile, "cannot write: " + path);
  }
  out.write(blob.bytes.data(), static_cast<std::streamsize>(blob.bytes.size()));
}

CheckpointBlob ReadCheckpointFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw PipelineError(ErrorCode::kMissingFile, "cannot read: " + path);
  }
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return CheckpointBlob{std::move(bytes)};
}

}  // namespace datapipe
