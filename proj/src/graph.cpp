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
#include "datapipe/graph.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "datapipe/errors.hpp"
#include "datapipe/udf.hpp"

namespace datapipe {

namespace {

struct KindInfo {
  const char* name;
  int min_inputs;
  int max_inputs;  // -1 = unbounded
};

const KindInfo& InfoFor(NodeKind kind) {
  static const std::map<NodeKind, KindInfo> kInfo = {
      {NodeKind::kFromMemory, {"from_memory", 0, 0}},
      {NodeKind::kFromFile, {"from_file", 0, 0}},
      {NodeKind::kMap, {"map", 1, 1}},
      {NodeKind::kFilter, {"filter", 1, 1}},
      {NodeKind::kFlatMap, {"flat_map", 1, 1}},
      {NodeKind::kInterleave, {"interleave", 1, 1}},
      {NodeKind::kBatch, {"batch", 1, 1}},
      {NodeKind::kUnbatch, {"unbatch", 1, 1}},
      {NodeKind::kPrefetch, {"prefetch", 1, 1}},
      {NodeKind::kRepeat, {"repeat", 1, 1}},
      {NodeKind::kShuffle, {"shuffle", 1, 1}},
      {NodeKind::kShard, {"shard", 1, 1}},
      {NodeKind::kZip, {"zip", 2, -1}},
      {NodeKind::kConcatenate, {"concatenate", 2, -1}},
      {NodeKind::kCache, {"cache", 1, 1}},
      {NodeKind::kReduce, {"reduce", 1, 1}},
      {NodeKind::kMapAndBatch, {"map_and_batch", 1, 1}},
  };
  return kInfo.at(kind);
}

[[noreturn]] void BadAttr(NodeKind kind, const std::string& msg) {
  throw PipelineError(ErrorCode::kInvalidAttr,
                      std::string(NodeKindName(kind)) + ": " + msg);
}

void CheckAttrKeys(NodeKind kind, const Attrs& attrs,
                   const std::set<std::string>& required,
                   const std::set<std::string>& optional) {
  for (const auto& key : required) {
    if (!attrs.count(key)) BadAttr(kind, "missing attr '" + key + "'");
  }
  for (const auto& [key, _] : attrs) {
    if (!required.count(key) && !optional.count(key)) {
      BadAttr(kind, "unknown attr '" + key + "'");
    }
  }
}

int64_t RequireInt(NodeKind kind, const Attrs& attrs, const std::string& key) {
  auto it = attrs.find(key);
  if (it == attrs.end() || !std::holds_alternative<int64_t>(it->second)) {
    BadAttr(kind, "attr '" + key + "' must be an integer");
  }
  return std::get<int64_t>(it->second);
}

const std::string& RequireString(NodeKind kind, const Attrs& attrs,
                                 const std::string& key) {
  auto it = attrs.find(key);
  if (it == attrs.end() || !std::holds_alternative<std::string>(it->second)) {
    BadAttr(kind, "attr '" + key + "' must be a string");
  }
  return std::get<std::string>(it->second);
}

// Parallelism/buffer attrs: >= 1 or the AUTOTUNE sentinel.
int64_t CheckTunable(NodeKind kind, const Attrs& attrs, const std::string& key) {
  int64_t v = RequireInt(kind, attrs, key);
  if (v != kAutotune && v < 1) {
    BadAttr(kind, "attr '" + key + "' must be >= 1 or AUTOTUNE");
  }
  return v;
}

void CheckWorkAttrs(NodeKind kind, const Attrs& attrs) {
  if (attrs.count("work_ns")) {
    if (RequireInt(kind, attrs, "work_ns") < 0) {
      BadAttr(kind, "work_ns must be >= 0");
    }
  }
  if (attrs.count("work_busy") &&
      !std::holds_alternative<bool>(attrs.at("work_busy"))) {
    BadAttr(kind, "work_busy must be a bool");
  }
}

// Unifies specs that differ only in known list lengths by dropping the
// conflicting lengths. Throws TypeMismatch when shapes differ.
TypeSpec UnifyTypeSpecs(const TypeSpec& a, const TypeSpec& b,
                        int component_index) {
  if (a.kind() != b.kind()) {
    throw TypeMismatchError(component_index, "cannot unify " + a.ToString() +
                                                 " with " + b.ToString());
  }
  switch (a.kind()) {
    case Value::Kind::kList: {
      TypeSpec inner = UnifyTypeSpecs(a.inner(), b.inner(), component_index);
      std::optional<uint64_t> len =
          (a.length() == b.length()) ? a.length() : std::nullopt;
      return TypeSpec::List(std::move(inner), len);
    }
    case Value::Kind::kTuple: {
      if (a.members().size() != b.members().size()) {
        throw TypeMismatchError(component_index,
                                "tuple arity mismatch: " + a.ToString() +
                                    " vs " + b.ToString());
      }
      std::vector<TypeSpec> members;
      for (size_t i = 0; i < a.members().size(); ++i) {
        members.push_back(
            UnifyTypeSpecs(a.members()[i], b.members()[i], component_index));
      }
      return TypeSpec::Tuple(std::move(members));
    }
    default:
      return a;
  }
}

ElementSpec UnifyElementSpecs(const ElementSpec& a, const ElementSpec& b) {
  if (a.arity() != b.arity()) {
    throw TypeMismatchError(
        0, "arity mismatch: " + a.ToString() + " vs " + b.ToString());
  }
  std::vector<TypeSpec> out;
  for (size_t i = 0; i < a.arity(); ++i) {
    out.push_back(UnifyTypeSpecs(a.components()[i], b.components()[i],
                                 static_cast<int>(i)));
  }
  return ElementSpec(std::move(out));
}

ElementSpec BatchWrapSpec(const ElementSpec& in, int64_t batch_size,
                          bool drop_remainder) {
  // The final partial batch may be shorter than batch_size, so the length is
  // only statically known when remainders are dropped.
  std::optional<uint64_t> len =
      drop_remainder ? std::optional<uint64_t>(batch_size) : std::nullopt;
  std::vector<TypeSpec> out;
  for (const auto& c : in.components()) {
    out.push_back(TypeSpec::List(c, len));
  }
  return ElementSpec(std::move(out));
}

ElementSpec DeriveOutputSpec(NodeKind kind, const std::vector<NodePtr>& inputs,
                             const Attrs& attrs, const UdfRegistry& registry) {
  switch (kind) {
    case NodeKind::kFromMemory: {
      const auto& elements = std::get<std::vector<Element>>(attrs.at("elements"));
      ElementSpec spec = SpecOf(elements[0]);
      for (size_t i = 1; i < elements.size(); ++i) {
        spec = UnifyElementSpecs(spec, SpecOf(elements[i]));
      }
      return spec;
    }
    case NodeKind::kFromFile:
      return ElementSpec({TypeSpec::Bytes()});
    case NodeKind::kMap:
      return registry.MapOutputSpec(std::get<std::string>(attrs.at("udf")),
                                    inputs[0]->output_spec());
    case NodeKind::kFilter:
    case NodeKind::kPrefetch:
    case NodeKind::kRepeat:
    case NodeKind::kShuffle:
    case NodeKind::kShard:
    case NodeKind::kCache:
    case NodeKind::kReduce:
      return inputs[0]->output_spec();
    case NodeKind::kFlatMap:
    case NodeKind::kInterleave: {
      const std::string& udf = std::get<std::string>(attrs.at("udf"));
      const auto& entry = registry.Get(udf);  // UnknownUdf if missing
      if (!entry.dataset_spec) {
        BadAttr(kind, "UDF '" + udf + "' has no produced-dataset spec");
      }
      return *entry.dataset_spec;
    }
    case NodeKind::kBatch:
      return BatchWrapSpec(inputs[0]->output_spec(),
                           std::get<int64_t>(attrs.at("batch_size")),
                           inputs[0] != nullptr &&
                               attrs.count("drop_remainder") &&
                               std::get<bool>(attrs.at("drop_remainder")));
    case NodeKind::kUnbatch: {
      const auto& in = inputs[0]->output_spec();
      std::vector<TypeSpec> out;
      for (size_t i = 0; i < in.arity(); ++i) {
        const auto& c = in.components()[i];
        if (c.kind() != Value::Kind::kList) {
          throw TypeMismatchError(static_cast<int>(i),
                                  "unbatch requires list components, got " +
                                      c.ToString());
        }
        out.push_back(c.inner());
      }
      return ElementSpec(std::move(out));
    }
    case NodeKind::kZip: {
      std::vector<TypeSpec> out;
      for (const auto& input : inputs) {
        for (const auto& c : input->output_spec().components()) {
          out.push_back(c);
        }
      }
      return ElementSpec(std::move(out));
    }
    case NodeKind::kConcatenate: {
      ElementSpec spec = inputs[0]->output_spec();
      for (size_t i = 1; i < inputs.size(); ++i) {
        spec = UnifyElementSpecs(spec, inputs[i]->output_spec());
      }
      return spec;
    }
    case NodeKind::kMapAndBatch: {
      ElementSpec mapped =
          registry.MapOutputSpec(std::get<std::string>(attrs.at("udf")),
                                 inputs[0]->output_spec());
      return BatchWrapSpec(mapped, std::get<int64_t>(attrs.at("batch_size")),
                           attrs.count("drop_remainder") &&
                               std::get<bool>(attrs.at("drop_remainder")));
    }
  }
  throw PipelineError(ErrorCode::kInternal, "unhandled node kind");
}

void ValidateAttrs(NodeKind kind, const Attrs& attrs,
                   const UdfRegistry& registry) {
  switch (kind) {
    case NodeKind::kFromMemory: {
      CheckAttrKeys(kind, attrs, {"elements"}, {"work_ns", "work_busy"});
      if (!std::holds_alternative<std::vector<Element>>(attrs.at("elements"))) {
        BadAttr(kind, "'elements' must be an element list");
      }
      if (std::get<std::vector<Element>>(attrs.at("elements")).empty()) {
        BadAttr(kind, "'elements' must be non-empty");
      }
      CheckWorkAttrs(kind, attrs);
      break;
    }
    case NodeKind::kFromFile: {
      CheckAttrKeys(kind, attrs, {"paths"}, {});
      if (!std::holds_alternative<std::vector<std::string>>(attrs.at("paths")) ||
          std::get<std::vector<std::string>>(attrs.at("paths")).empty()) {
        BadAttr(kind, "'paths' must be a non-empty string list");
      }
      break;
    }
    case NodeKind::kMap: {
      CheckAttrKeys(kind, attrs, {"udf", "num_parallel_calls"},
                    {"fused_filter_udf"});
      RequireString(kind, attrs, "udf");
      CheckTunable(kind, attrs, "num_parallel_calls");
      if (attrs.count("fused_filter_udf")) {
        RequireString(kind, attrs, "fused_filter_udf");
      }
      break;
    }
    case NodeKind::kFilter: {
      CheckAttrKeys(kind, attrs, {"udf"}, {});
      RequireString(kind, attrs, "udf");
      break;
    }
    case NodeKind::kFlatMap: {
      CheckAttrKeys(kind, attrs, {"udf"}, {});
      RequireString(kind, attrs, "udf");
      break;
    }
    case NodeKind::kInterleave: {
      CheckAttrKeys(kind, attrs, {"udf", "cycle_length", "num_parallel_calls"},
                    {});
      RequireString(kind, attrs, "udf");
      int64_t cycle = RequireInt(kind, attrs, "cycle_length");
      if (cycle < 1) BadAttr(kind, "cycle_length must be >= 1");
      int64_t p = CheckTunable(kind, attrs, "num_parallel_calls");
      if (p != kAutotune && p > cycle) {
        BadAttr(kind, "num_parallel_calls must be in [1, cycle_length]");
      }
      break;
    }
    case NodeKind::kBatch: {
      CheckAttrKeys(kind, attrs, {"batch_size"},
                    {"drop_remainder", "work_ns", "work_busy"});
      if (RequireInt(kind, attrs, "batch_size") < 1) {
        BadAttr(kind, "batch_size must be >= 1");
      }
      CheckWorkAttrs(kind, attrs);
      break;
    }
    case NodeKind::kUnbatch:
    case NodeKind::kCache:
      CheckAttrKeys(kind, attrs, {}, {});
      break;
    case NodeKind::kPrefetch:
      CheckAttrKeys(kind, attrs, {"buffer_size"}, {});
      CheckTunable(kind, attrs, "buffer_size");
      break;
    case NodeKind::kRepeat: {
      CheckAttrKeys(kind, attrs, {"count"}, {});
      int64_t count = RequireInt(kind, attrs, "count");
      if (count != kInfiniteRepeat && count < 1) {
        BadAttr(kind, "count must be >= 1 or INFINITE");
      }
      break;
    }
    case NodeKind::kShuffle: {
      CheckAttrKeys(kind, attrs, {"buffer_size"}, {"seed", "fused_with_repeat"});
      if (RequireInt(kind, attrs, "buffer_size") < 1) {
        BadAttr(kind, "buffer_size must be >= 1");
      }
      if (attrs.count("seed") &&
          !std::holds_alternative<uint64_t>(attrs.at("seed"))) {
        BadAttr(kind, "seed must be an unsigned integer");
      }
      if (attrs.count("fused_with_repeat") &&
          !std::holds_alternative<bool>(attrs.at("fused_with_repeat"))) {
        BadAttr(kind, "fused_with_repeat must be a bool");
      }
      break;
    }
    case NodeKind::kShard: {
      CheckAttrKeys(kind, attrs, {"num_shards", "index"}, {});
      int64_t k = RequireInt(kind, attrs, "num_shards");
      int64_t i = RequireInt(kind, attrs, "index");
      if (k < 1) BadAttr(kind, "num_shards must be >= 1");
      if (i < 0 || i >= k) {
        BadAttr(kind, "index must be in [0, num_shards)");
      }
      break;
    }
    case NodeKind::kZip:
    case NodeKind::kConcatenate:
      CheckAttrKeys(kind, attrs, {}, {});
      break;
    case NodeKind::kReduce: {
      CheckAttrKeys(kind, attrs, {"udf"}, {});
      RequireString(kind, attrs, "udf");
      break;
    }
    case NodeKind::kMapAndBatch: {
      CheckAttrKeys(kind, attrs, {"udf", "batch_size", "num_parallel_calls"},
                    {"drop_remainder", "work_ns", "work_busy"});
      RequireString(kind, attrs, "udf");
      if (RequireInt(kind, attrs, "batch_size") < 1) {
        BadAttr(kind, "batch_size must be >= 1");
      }
      CheckTunable(kind, attrs, "num_parallel_calls");
      CheckWorkAttrs(kind, attrs);
      break;
    }
  }
}

void AppendNodeString(const DatasetNode& node, int depth, std::ostream& os) {
  for (int i = 0; i < depth; ++i) os << "  ";
  os << NodeKindName(node.kind());
  for (const auto& [key, value] : node.attrs()) {
    if (key == "elements") {
      os << " elements=<" << std::get<std::vector<Element>>(value).size()
         << ">";
      continue;
    }
    os << " " << key << "=";
    std::visit(
        [&](const auto& v) {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, std::string>) {
            os << v;
          } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
            os << "[" << v.size() << " paths]";
          } else if constexpr (std::is_same_v<T, std::vector<Element>>) {
            os << "<elements>";
          } else if constexpr (std::is_same_v<T, bool>) {
            os << (v ? "true" : "false");
          } else {
            os << v;
          }
        },
        value);
  }
  os << " :: " << node.output_spec().ToString() << "\n";
  for (const auto& input : node.inputs()) {
    AppendNodeString(*input, depth + 1, os);
  }
}

}  // namespace

const char* NodeKindName(NodeKind kind) { return InfoFor(kind).name; }

std::optional<NodeKind> NodeKindFromName(const std::string& name) {
  for (int k = 0; k <= static_cast<int>(NodeKind::kMapAndBatch); ++k) {
    NodeKind kind = static_cast<NodeKind>(k);
    if (name == NodeKindName(kind)) return kind;
  }
  return std::nullopt;
}

int64_t DatasetNode::GetInt(const std::string& key) const {
  return std::get<int64_t>(attrs_.at(key));
}

int64_t DatasetNode::GetIntOr(const std::string& key, int64_t fallback) const {
  auto it = attrs_.find(key);
  if (it == attrs_.end()) return fallback;
  return std::get<int64_t>(it->second);
}

uint64_t DatasetNode::GetUint(const std::string& key) const {
  return std::get<uint64_t>(attrs_.at(key));
}

bool DatasetNode::GetBoolOr(const std::string& key, bool fallback) const {
  auto it = attrs_.find(key);
  if (it == attrs_.end()) return fallback;
  return std::get<bool>(it->second);
}

const std::string& DatasetNode::GetString(const std::string& key) const {
  return std::get<std::string>(attrs_.at(key));
}

const std::vector<std::string>& DatasetNode::GetStrings(
    const std::string& key) const {
  return std::get<std::vector<std::string>>(attrs_.at(key));
}

const std::vector<Element>& DatasetNode::GetElements(
    const std::string& key) const {
  return std::get<std::vector<Element>>(attrs_.at(key));
}

bool NodesStructurallyEqual(const DatasetNode& a, const DatasetNode& b) {
  if (a.kind() != b.kind()) return false;
  if (a.attrs() != b.attrs()) return false;
  if (a.output_spec() != b.output_spec()) return false;
  if (a.inputs().size() != b.inputs().size()) return false;
  for (size_t i = 0; i < a.inputs().size(); ++i) {
    if (!NodesStructurallyEqual(*a.inputs()[i], *b.inputs()[i])) return false;
  }
  return true;
}

bool DatasetGraph::StructurallyEquals(const DatasetGraph& other) const {
  if (!root_ || !other.root_) return root_ == other.root_;
  return NodesStructurallyEqual(*root_, *other.root_);
}

std::string DatasetGraph::ToString() const {
  std::ostringstream os;
  if (root_) AppendNodeString(*root_, 0, os);
  return os.str();
}

NodePtr Build(NodeKind kind, std::vector<NodePtr> inputs, Attrs attrs,
              const UdfRegistry& registry) {
  const KindInfo& info = InfoFor(kind);
  int n = static_cast<int>(inputs.size());
  if (n < info.min_inputs || (info.max_inputs >= 0 && n > info.max_inputs)) {
    throw PipelineError(
        ErrorCode::kInvalidArity,
        std::string(info.name) + ": expected " +
            std::to_string(info.min_inputs) +
            (info.max_inputs < 0
                 ? "+"
                 : (info.max_inputs != info.min_inputs
                        ? ".." + std::to_string(info.max_inputs)
                        : "")) +
            " inputs, got " + std::to_string(n));
  }
  for (const auto& input : inputs) {
    if (!input) {
      throw PipelineError(ErrorCode::kInvalidArity, "null input node");
    }
  }
  ValidateAttrs(kind, attrs, registry);
  ElementSpec spec = DeriveOutputSpec(kind, inputs, attrs, registry);
  return std::make_shared<const DatasetNode>(kind, std::move(inputs),
                                             std::move(attrs), std::move(spec));
}

namespace ops {

DatasetGraph FromMemory(std::vector<Element> elements, const UdfRegistry& reg) {
  return DatasetGraph(Build(NodeKind::kFromMemory, {},
                            {{"elements", std::move(elements)}}, reg));
}

DatasetGraph FromFile(std::vector<std::string> paths, const UdfRegistry& reg) {
  return DatasetGraph(
      Build(NodeKind::kFromFile, {}, {{"paths", std::move(paths)}}, reg));
}

DatasetGraph Map(const DatasetGraph& in, const std::string& udf,
                 int64_t num_parallel_calls, const UdfRegistry& reg) {
  return DatasetGraph(Build(
      NodeKind::kMap, {in.root()},
      {{"udf", udf}, {"num_parallel_calls", num_parallel_calls}}, reg));
}

DatasetGraph Filter(const DatasetGraph& in, const std::string& udf,
                    const UdfRegistry& reg) {
  return DatasetGraph(Build(NodeKind::kFilter, {in.root()}, {{"udf", udf}}, reg));
}

DatasetGraph FlatMap(const DatasetGraph& in, const std::string& udf,
                     const UdfRegistry& reg) {
  return DatasetGraph(
      Build(NodeKind::kFlatMap, {in.root()}, {{"udf", udf}}, reg));
}

DatasetGraph Interleave(const DatasetGraph& in, const std::string& udf,
                        int64_t cycle_length, int64_t num_parallel_calls,
                        const UdfRegistry& reg) {
  return DatasetGraph(Build(NodeKind::kInterleave, {in.root()},
                            {{"udf", udf},
                             {"cycle_length", cycle_length},
                             {"num_parallel_calls", num_parallel_calls}},
                            reg));
}

DatasetGraph Batch(const DatasetGraph& in, int64_t batch_size,
                   bool drop_remainder, const UdfRegistry& reg) {
  Attrs attrs = {{"batch_size", batch_size}};
  if (drop_remainder) attrs["drop_remainder"] = true;
  return DatasetGraph(
      Build(NodeKind::kBatch, {in.root()}, std::move(attrs), reg));
}

DatasetGraph Unbatch(const DatasetGraph& in, const UdfRegistry& reg) {
  return DatasetGraph(Build(NodeKind::kUnbatch, {in.root()}, {}, reg));
}

DatasetGraph Prefetch(const DatasetGraph& in, int64_t buffer_size,
                      const UdfRegistry& reg) {
  return DatasetGraph(Build(NodeKind::kPrefetch, {in.root()},
                            {{"buffer_size", buffer_size}}, reg));
}

DatasetGraph Repeat(const DatasetGraph& in, int64_t count,
                    const UdfRegistry& reg) {
  return DatasetGraph(
      Build(NodeKind::kRepeat, {in.root()}, {{"count", count}}, reg));
}

DatasetGraph Shuffle(const DatasetGraph& in, int64_t buffer_size,
                     std::optional<uint64_t> seed, const UdfRegistry& reg) {
  Attrs attrs = {{"buffer_size", buffer_size}};
  if (seed) attrs["seed"] = *seed;
  return DatasetGraph(
      Build(NodeKind::kShuffle, {in.root()}, std::move(attrs), reg));
}

DatasetGraph Shard(const DatasetGraph& in, int64_t num_shards, int64_t index,
                   const UdfRegistry& reg) {
  return DatasetGraph(Build(NodeKind::kShard, {in.root()},
                            {{"num_shards", num_shards}, {"index", index}},
                            reg));
}

DatasetGraph Zip(const std::vector<DatasetGraph>& ins, const UdfRegistry& reg) {
  std::vector<NodePtr> inputs;
  for (const auto& g : ins) inputs.push_back(g.root());
  return DatasetGraph(Build(NodeKind::kZip, std::move(inputs), {}, reg));
}

DatasetGraph Concatenate(const std::vector<DatasetGraph>& ins,
                         const UdfRegistry& reg) {
  std::vector<NodePtr> inputs;
  for (const auto& g : ins) inputs.push_back(g.root());
  return DatasetGraph(Build(NodeKind::kConcatenate, std::move(inputs), {}, reg));
}

DatasetGraph Cache(const DatasetGraph& in, const UdfRegistry& reg) {
  return DatasetGraph(Build(NodeKind::kCache, {in.root()}, {}, reg));
}

DatasetGraph Reduce(const DatasetGraph& in, const std::string& udf,
                    const UdfRegistry& reg) {
  return DatasetGraph(Build(NodeKind::kReduce, {in.root()}, {{"udf", udf}}, reg));
}

}  // namespace ops

}  // namespace datapipe
