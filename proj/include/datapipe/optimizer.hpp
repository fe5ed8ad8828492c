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
#ifndef DATAPIPE_OPTIMIZER_HPP_
#define DATAPIPE_OPTIMIZER_HPP_

#include <string>
#include <utility>
#include <vector>

#include "datapipe/graph.hpp"
#include "datapipe/udf.hpp"

namespace datapipe {

// Built-in rewrite rule names, in default application priority.
inline constexpr const char* kMapMapFusion = "map_map_fusion";
inline constexpr const char* kFilterFilterFusion = "filter_filter_fusion";
inline constexpr const char* kMapFilterFusion = "map_filter_fusion";
inline constexpr const char* kMapVectorization = "map_vectorization";
inline constexpr const char* kMapBatchFusion = "map_batch_fusion";
inline constexpr const char* kShuffleRepeatFusion = "shuffle_repeat_fusion";

// Enabled rules in application priority order.
class RuleSet {
 public:
  // All built-in rules in default order.
  static RuleSet Default();
  // No rules; optimize becomes the identity.
  static RuleSet None();

  void Disable(const std::string& name);
  bool IsEnabled(const std::string& name) const;
  // Reorders application priority; unknown names are rejected.
  void SetOrder(std::vector<std::string> names);

  const std::vector<std::string>& order() const { return order_; }
  static const std::vector<std::string>& AllRuleNames();

 private:
  std::vector<std::string> order_;
};

struct RewriteRecord {
  std::string rule;
  std::string node_path;
};

struct RewriteReport {
  std::vector<RewriteRecord> applied;
  int iterations = 0;

  std::string ToString() const;
};

// Applies the enabled rewrite rules bottom-up until a fixed point (cap 100
// passes). Synthesized UDFs (compositions, conjunctions, vectorized
// wrappers) are registered in `registry` under derived names; re-optimizing
// reuses existing entries. The rewritten graph is fully re-validated.
// Throws RewriteDiverged at the pass cap and RuleProducedInvalidGraph when a
// rule's replacement fails validation.
std::pair<DatasetGraph, RewriteReport> Optimize(const DatasetGraph& graph,
                                                const RuleSet& rules,
                                                UdfRegistry& registry);

}  // namespace datapipe

#endif  // DATAPIPE_OPTIMIZER_HPP_
