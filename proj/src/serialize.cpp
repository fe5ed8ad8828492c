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
#include "datapipe/serialize.hpp"

#include "datapipe/codec.hpp"
#include "datapipe/errors.hpp"
#include "datapipe/udf.hpp"

namespace datapipe {
namespace {

constexpr char kMagic[4] = {'D', 'P', 'G', '1'};
constexpr uint16_t kVersion = 1;

enum AttrTag : uint8_t {
  kTagInt64 = 0,
  kTagUint64 = 1,
  kTagFloat64 = 2,
  kTagBool = 3,
  kTagString = 4,
  kTagStringList = 5,
  kTagElementList = 6,
};

uint32_t CountNodes(const DatasetNode& node) {
  uint32_t n = 1;
  for (const auto& input : node.inputs()) n += CountNodes(*input);
  return n;
}

void EncodeAttrValue(const AttrValue& value, ByteWriter& w) {
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, int64_t>) {
          w.U8(kTagInt64);
          w.I64(v);
        } else if constexpr (std::is_same_v<T, uint64_t>) {
          w.U8(kTagUint64);
          w.U64(v);
        } else if constexpr (std::is_same_v<T, double>) {
          w.U8(kTagFloat64);
          w.F64(v);
        } else if constexpr (std::is_same_v<T, bool>) {
          w.U8(kTagBool);
          w.U8(v ? 1 : 0);
        } else if constexpr (std::is_same_v<T, std::string>) {
          w.U8(kTagString);
          w.Str(v);
        } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
          w.U8(kTagStringList);
          w.U32(static_cast<uint32_t>(v.size()));
          for (const auto& s : v) w.Str(s);
        } else if constexpr (std::is_same_v<T, std::vector<Element>>) {
          w.U8(kTagElementList);
          w.U32(static_cast<uint32_t>(v.size()));
          for (const auto& e : v) EncodeElement(e, w);
        }
      },
      value);
}

AttrValue DecodeAttrValue(ByteReader& r) {
  size_t pos = r.position();
  uint8_t tag = r.U8();
  switch (tag) {
    case kTagInt64:
      return AttrValue(r.I64());
    case kTagUint64:
      return AttrValue(r.U64());
    case kTagFloat64:
      return AttrValue(r.F64());
    case kTagBool:
      return AttrValue(r.U8() != 0);
    case kTagString:
      return AttrValue(r.Str());
    case kTagStringList: {
      uint32_t n = r.U32();
      std::vector<std::string> items;
      items.reserve(n);
      for (uint32_t i = 0; i < n; ++i) items.push_back(r.Str());
      return AttrValue(std::move(items));
    }
    case kTagElementList: {
      uint32_t n = r.U32();
      std::vector<Element> items;
      items.reserve(n);
      for (uint32_t i = 0; i < n; ++i) items.push_back(DecodeElement(r));
      return AttrValue(std::move(items));
    }
    default:
      throw MalformedInputError(pos, "unknown attr tag " + std::to_string(tag));
  }
}

// Preorder: node header, attrs sorted by key (std::map order), then inputs.
void EncodeNode(const DatasetNode& node, ByteWriter& w) {
  w.U8(static_cast<uint8_t>(node.kind()));
  w.U8(static_cast<uint8_t>(node.inputs().size()));
  w.U8(static_cast<uint8_t>(node.attrs().size()));
  for (const auto& [key, value] : node.attrs()) {
    w.Str(key);
    EncodeAttrValue(value, w);
  }
  for (const auto& input : node.inputs()) EncodeNode(*input, w);
}

NodePtr DecodeNode(ByteReader& r, const UdfRegistry& registry,
                   uint32_t& nodes_seen) {
  size_t pos = r.position();
  uint8_t kind_raw = r.U8();
  if (kind_raw > static_cast<uint8_t>(NodeKind::kMapAndBatch)) {
    throw MalformedInputError(pos, "unknown node kind " +
                                       std::to_string(kind_raw));
  }
  NodeKind kind = static_cast<NodeKind>(kind_raw);
  uint8_t num_inputs = r.U8();
  uint8_t num_attrs = r.U8();
  Attrs attrs;
  for (uint8_t i = 0; i < num_attrs; ++i) {
    std::string key = r.Str();
    attrs.emplace(std::move(key), DecodeAttrValue(r));
  }
  std::vector<NodePtr> inputs;
  inputs.reserve(num_inputs);
  for (uint8_t i = 0; i < num_inputs; ++i) {
    inputs.push_back(DecodeNode(r, registry, nodes_seen));
  }
  ++nodes_seen;
  try {
    return Build(kind, std::move(inputs), std::move(attrs), registry);
  } catch (const PipelineError& e) {
    if (e.code() == ErrorCode::kUnknownUdf) throw;
    throw PipelineError(ErrorCode::kValidationFailed,
                        std::string("decoded graph failed validation: ") +
                            e.what());
  }
}

// Rebuilds the tree with every "seed" attr set to zero. Nodes are already
// validated, so they are reconstructed directly.
NodePtr ZeroSeeds(const NodePtr& node) {
  std::vector<NodePtr> inputs;
  inputs.reserve(node->inputs().size());
  bool changed = false;
  for (const auto& input : node->inputs()) {
    NodePtr rebuilt = ZeroSeeds(input);
    changed |= (rebuilt != input);
    inputs.push_back(std::move(rebuilt));
  }
  Attrs attrs = node->attrs();
  auto it = attrs.find("seed");
  if (it != attrs.end()) {
    it->second = uint64_t{0};
    changed = true;
  }
  if (!changed) return node;
  return std::make_shared<const DatasetNode>(
      node->kind(), std::move(inputs), std::move(attrs), node->output_spec());
}

}  // namespace

std::string Serialize(const DatasetGraph& graph) {
  if (!graph.root()) {
    throw PipelineError(ErrorCode::kValidationFailed, "empty graph");
  }
  ByteWriter w;
  w.Raw(std::string_view(kMagic, 4));
  w.U16(kVersion);
  w.U32(CountNodes(*graph.root()));
  EncodeNode(*graph.root(), w);
  return w.Take();
}

DatasetGraph Deserialize(std::string_view bytes, const UdfRegistry& registry) {
  ByteReader r(bytes);
  if (bytes.size() < 4 || bytes.substr(0, 4) != std::string_view(kMagic, 4)) {
    throw MalformedInputError(0, "bad magic");
  }
  r.U32();  // magic
  uint16_t version = r.U16();
  if (version != kVersion) {
    throw PipelineError(ErrorCode::kVersionMismatch,
                        "unsupported graph format version " +
                            std::to_string(version));
  }
  uint32_t declared_nodes = r.U32();
  uint32_t nodes_seen = 0;
  NodePtr root = DecodeNode(r, registry, nodes_seen);
  if (nodes_seen != declared_nodes) {
    throw MalformedInputError(
        r.position(), "node count mismatch: header says " +
                          std::to_string(declared_nodes) + ", decoded " +
                          std::to_string(nodes_seen));
  }
  r.ExpectEnd();
  return DatasetGraph(std::move(root));
}

Fingerprint GraphFingerprint(const DatasetGraph& graph) {
  DatasetGraph canonical(ZeroSeeds(graph.root()));
  return Sha256(Serialize(canonical));
}

}  // namespace datapipe
