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
#ifndef DATAPIPE_GRAPH_HPP_
#define DATAPIPE_GRAPH_HPP_

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "datapipe/element.hpp"

namespace datapipe {

class UdfRegistry;

// Sentinel for num_parallel_calls / buffer_size attrs that delegates the knob
// to the autotuner.
constexpr int64_t kAutotune = -1;
// Sentinel for repeat.count.
constexpr int64_t kInfiniteRepeat = -1;

enum class NodeKind : uint8_t {
  kFromMemory = 0,
  kFromFile = 1,
  kMap = 2,
  kFilter = 3,
  kFlatMap = 4,
  kInterleave = 5,
  kBatch = 6,
  kUnbatch = 7,
  kPrefetch = 8,
  kRepeat = 9,
  kShuffle = 10,
  kShard = 11,
  kZip = 12,
  kConcatenate = 13,
  kCache = 14,
  kReduce = 15,
  kMapAndBatch = 16,  // produced by fusion only
};

const char* NodeKindName(NodeKind kind);
std::optional<NodeKind> NodeKindFromName(const std::string& name);

using AttrValue = std::variant<int64_t, uint64_t, double, bool, std::string,
                               std::vector<std::string>, std::vector<Element>>;

// Ordered map so that serialization is canonical.
using Attrs = std::map<std::string, AttrValue>;

// One node of the stateless pipeline expression tree. Immutable after Build.
class DatasetNode {
 public:
  DatasetNode(NodeKind kind,
              std::vector<std::shared_ptr<const DatasetNode>> inputs,
              Attrs attrs, ElementSpec output_spec)
      : kind_(kind),
        inputs_(std::move(inputs)),
        attrs_(std::move(attrs)),
        output_spec_(std::move(output_spec)) {}

  NodeKind kind() const { return kind_; }
  const std::vector<std::shared_ptr<const DatasetNode>>& inputs() const {
    return inputs_;
  }
  const Attrs& attrs() const { return attrs_; }
  const ElementSpec& output_spec() const { return output_spec_; }

  bool HasAttr(const std::string& key) const { return attrs_.count(key) > 0; }
  int64_t GetInt(const std::string& key) const;
  int64_t GetIntOr(const std::string& key, int64_t fallback) const;
  uint64_t GetUint(const std::string& key) const;
  bool GetBoolOr(const std::string& key, bool fallback) const;
  const std::string& GetString(const std::string& key) const;
  const std::vector<std::string>& GetStrings(const std::string& key) const;
  const std::vector<Element>& GetElements(const std::string& key) const;

 private:
  NodeKind kind_;
  std::vector<std::shared_ptr<const DatasetNode>> inputs_;
  Attrs attrs_;
  ElementSpec output_spec_;
};

using NodePtr = std::shared_ptr<const DatasetNode>;

// A validated pipeline definition. Structurally a tree: nodes are immutable
// and addressed by position, so any internal sharing is unobservable.
class DatasetGraph {
 public:
  DatasetGraph() = default;
  explicit DatasetGraph(NodePtr root) : root_(std::move(root)) {}

  const NodePtr& root() const { return root_; }
  const ElementSpec& element_spec() const { return root_->output_spec(); }

  // Structural equality (kinds, attrs, inputs, specs).
  bool StructurallyEquals(const DatasetGraph& other) const;

  std::string ToString() const;

 private:
  NodePtr root_;
};

bool NodesStructurallyEqual(const DatasetNode& a, const DatasetNode& b);

// Validates arity and attrs for `kind`, derives the output spec, and returns
// the node. Throws InvalidArity / InvalidAttr / TypeMismatch.
//
// UDF output specs are resolved through `registry`: map-like UDFs default to
// an identity spec when unregistered; flat_map/interleave UDFs must be
// registered with a produced-dataset spec before the node can be built.
NodePtr Build(NodeKind kind, std::vector<NodePtr> inputs, Attrs attrs,
              const UdfRegistry& registry);

// Convenience constructors used by tests, the optimizer, and the CLI parser.
namespace ops {

DatasetGraph FromMemory(std::vector<Element> elements, const UdfRegistry& reg);
DatasetGraph FromFile(std::vector<std::string> paths, const UdfRegistry& reg);
DatasetGraph Map(const DatasetGraph& in, const std::string& udf,
                 int64_t num_parallel_calls, const UdfRegistry& reg);
DatasetGraph Filter(const DatasetGraph& in, const std::string& udf,
                    const UdfRegistry& reg);
DatasetGraph FlatMap(const DatasetGraph& in, const std::string& udf,
                     const UdfRegistry& reg);
DatasetGraph Interleave(const DatasetGraph& in, const std::string& udf,
                        int64_t cycle_length, int64_t num_parallel_calls,
                        const UdfRegistry& reg);
DatasetGraph Batch(const DatasetGraph& in, int64_t batch_size,
                   bool drop_remainder, const UdfRegistry& reg);
DatasetGraph Unbatch(const DatasetGraph& in, const UdfRegistry& reg);
DatasetGraph Prefetch(const DatasetGraph& in, int64_t buffer_size,
                      const UdfRegistry& reg);
DatasetGraph Repeat(const DatasetGraph& in, int64_t count,
                    const UdfRegistry& reg);
DatasetGraph Shuffle(const DatasetGraph& in, int64_t buffer_size,
                     std::optional<uint64_t> seed, const UdfRegistry& reg);
DatasetGraph Shard(const DatasetGraph& in, int64_t num_shards, int64_t index,
                   const UdfRegistry& reg);
DatasetGraph Zip(const std::vector<DatasetGraph>& ins, const UdfRegistry& reg);
DatasetGraph Concatenate(const std::vector<DatasetGraph>& ins,
                         const UdfRegistry& reg);
DatasetGraph Cache(const DatasetGraph& in, const UdfRegistry& reg);
DatasetGraph Reduce(const DatasetGraph& in, const std::string& udf,
                    const UdfRegistry& reg);

}  // namespace ops

}  // namespace datapipe

#endif  // DATAPIPE_GRAPH_HPP_
