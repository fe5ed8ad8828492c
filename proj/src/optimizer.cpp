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
#include "datapipe/optimizer.hpp"

#include <algorithm>
#include <sstream>

#include "datapipe/errors.hpp"

namespace datapipe {

namespace {

constexpr int kMaxPasses = 100;

// AUTOTUNE is absorbing when merging parallelism attrs; otherwise the
// downstream transformation's setting wins.
int64_t MergeParallelism(int64_t upstream, int64_t downstream) {
  if (upstream == kAutotune || downstream == kAutotune) return kAutotune;
  return downstream;
}

std::string ComposedName(const std::string& f, const std::string& g) {
  return "(" + f + ")>>(" + g + ")";
}

std::string ConjunctionName(const std::string& p, const std::string& q) {
  return "(" + p + ")&&(" + q + ")";
}

std::string VectorizedName(const std::string& f) { return "vec(" + f + ")"; }

void EnsureComposedMap(UdfRegistry& registry, const std::string& f,
                       const std::string& g, const std::string& name) {
  if (registry.Contains(name)) return;
  const auto& ef = registry.Get(f);
  const auto& eg = registry.Get(g);
  UdfRegistry::Entry entry;
  MapFn ff = ef.map_fn;
  MapFn gf = eg.map_fn;
  entry.map_fn = [ff, gf](const Element& e) { return gf(ff(e)); };
  if (ef.cost_hint_ns && eg.cost_hint_ns) {
    entry.cost_hint_ns = *ef.cost_hint_ns + *eg.cost_hint_ns;
  }
  if (ef.vectorized && eg.vectorized) {
    MapFn vf = ef.vectorized;
    MapFn vg = eg.vectorized;
    entry.vectorized = [vf, vg](const Element& e) { return vg(vf(e)); };
  }
  SpecFn sf = ef.output_spec;
  SpecFn sg = eg.output_spec;
  entry.output_spec = [sf, sg](const ElementSpec& in) {
    ElementSpec mid = sf ? sf(in) : in;
    return sg ? sg(mid) : mid;
  };
  registry.Register(name, std::move(entry));
}

void EnsureConjunction(UdfRegistry& registry, const std::string& p,
                       const std::string& q, const std::string& name) {
  if (registry.Contains(name)) return;
  PredicateFn pf = registry.Get(p).predicate;
  PredicateFn qf = registry.Get(q).predicate;
  UdfRegistry::Entry entry;
  entry.predicate = [pf, qf](const Element& e) { return pf(e) && qf(e); };
  registry.Register(name, std::move(entry));
}

void EnsureVectorized(UdfRegistry& registry, const std::string& f,
                      const std::string& name) {
  if (registry.Contains(name)) return;
  const auto& ef = registry.Get(f);
  UdfRegistry::Entry entry;
  entry.map_fn = ef.vectorized;
  entry.cost_hint_ns = ef.cost_hint_ns;
  SpecFn scalar_spec = ef.output_spec;
  // Input is the batch-wrapped spec; the output re-wraps the scalar UDF's
  // output spec with the same (possibly unknown) batch length.
  entry.output_spec = [scalar_spec](const ElementSpec& batched) {
    std::optional<uint64_t> length;
    if (!batched.components().empty() &&
        batched.components()[0].kind() == Value::Kind::kList) {
      length = batched.components()[0].length();
    }
    std::vector<TypeSpec> inner;
    for (const auto& c : batched.components()) {
      inner.push_back(c.kind() == Value::Kind::kList ? c.inner() : c);
    }
    ElementSpec scalar_out = scalar_spec ? scalar_spec(ElementSpec(inner))
                                         : ElementSpec(inner);
    std::vector<TypeSpec> out;
    for (const auto& c : scalar_out.components()) {
      out.push_back(TypeSpec::List(c, length));
    }
    return ElementSpec(out);
  };
  registry.Register(name, std::move(entry));
}

Attrs CopyWorkAttrs(const DatasetNode& from, Attrs attrs) {
  if (from.HasAttr("work_ns")) attrs["work_ns"] = from.GetInt("work_ns");
  if (from.HasAttr("work_busy")) {
    attrs["work_busy"] = from.GetBoolOr("work_busy", false);
  }
  return attrs;
}

struct RewriteEngine {
  const RuleSet& rules;
  UdfRegistry& registry;
  RewriteReport* report;
  bool changed = false;

  NodePtr Apply(const std::string& rule, const std::string& path,
                const std::function<NodePtr()>& build) {
    NodePtr replacement = [&] {
      try {
        return build();
      } catch (const PipelineError& e) {
        throw PipelineError(ErrorCode::kRuleProducedInvalidGraph,
                            rule + ": " + e.what());
      }
    }();
    report->applied.push_back({rule, path});
    changed = true;
    return replacement;
  }

  // Tries each enabled rule at `node` in priority order; returns the
  // replacement or nullptr if nothing matched.
  NodePtr TryRules(const NodePtr& node, const std::string& path) {
    for (const auto& rule : rules.order()) {
      if (rule == kMapMapFusion) {
        if (auto r = TryMapMap(node, path)) return r;
      } else if (rule == kFilterFilterFusion) {
        if (auto r = TryFilterFilter(node, path)) return r;
      } else if (rule == kMapFilterFusion) {
        if (auto r = TryMapFilter(node, path)) return r;
      } else if (rule == kMapVectorization) {
        if (auto r = TryVectorize(node, path)) return r;
      } else if (rule == kMapBatchFusion) {
        if (auto r = TryMapBatch(node, path)) return r;
      } else if (rule == kShuffleRepeatFusion) {
        if (auto r = TryShuffleRepeat(node, path)) return r;
      }
    }
    return nullptr;
  }

  // d.map(f).map(g) -> d.map(g o f); parallelism of the downstream map wins,
  // AUTOTUNE is absorbing. Skipped when the inner map drops elements via a
  // fused predicate (the composition would change what g sees).
  NodePtr TryMapMap(const NodePtr& node, const std::string& path) {
    if (node->kind() != NodeKind::kMap) return nullptr;
    const auto& inner = node->inputs()[0];
    if (inner->kind() != NodeKind::kMap) return nullptr;
    if (inner->HasAttr("fused_filter_udf")) return nullptr;
    const std::string& f = inner->GetString("udf");
    const std::string& g = node->GetString("udf");
    if (!registry.Contains(f) || !registry.Contains(g)) return nullptr;
    if (!registry.Get(f).map_fn || !registry.Get(g).map_fn) return nullptr;

    return Apply(kMapMapFusion, path, [&] {
      std::string name = ComposedName(f, g);
      EnsureComposedMap(registry, f, g, name);
      Attrs attrs = {{"udf", name},
                     {"num_parallel_calls",
                      MergeParallelism(inner->GetInt("num_parallel_calls"),
                                       node->GetInt("num_parallel_calls"))}};
      if (node->HasAttr("fused_filter_udf")) {
        attrs["fused_filter_udf"] = node->GetString("fused_filter_udf");
      }
      return Build(NodeKind::kMap, {inner->inputs()[0]}, std::move(attrs),
                   registry);
    });
  }

  // d.filter(p).filter(q) -> d.filter(p && q).
  NodePtr TryFilterFilter(const NodePtr& node, const std::string& path) {
    if (node->kind() != NodeKind::kFilter) return nullptr;
    const auto& inner = node->inputs()[0];
    if (inner->kind() != NodeKind::kFilter) return nullptr;
    const std::string& p = inner->GetString("udf");
    const std::string& q = node->GetString("udf");
    if (!registry.Contains(p) || !registry.Contains(q)) return nullptr;
    if (!registry.Get(p).predicate || !registry.Get(q).predicate) {
      return nullptr;
    }

    return Apply(kFilterFilterFusion, path, [&] {
      std::string name = ConjunctionName(p, q);
      EnsureConjunction(registry, p, q, name);
      return Build(NodeKind::kFilter, {inner->inputs()[0]}, {{"udf", name}},
                   registry);
    });
  }

  // d.map(f).filter(p) -> d.map(f with fused predicate p): f is applied and
  // tested in one invocation site.
  NodePtr TryMapFilter(const NodePtr& node, const std::string& path) {
    if (node->kind() != NodeKind::kFilter) return nullptr;
    const auto& inner = node->inputs()[0];
    if (inner->kind() != NodeKind::kMap) return nullptr;
    const std::string& p = node->GetString("udf");
    if (!registry.Contains(p) || !registry.Get(p).predicate) return nullptr;

    return Apply(kMapFilterFusion, path, [&] {
      Attrs attrs = inner->attrs();
      if (inner->HasAttr("fused_filter_udf")) {
        std::string existing = inner->GetString("fused_filter_udf");
        std::string name = ConjunctionName(existing, p);
        EnsureConjunction(registry, existing, p, name);
        attrs["fused_filter_udf"] = name;
      } else {
        attrs["fused_filter_udf"] = p;
      }
      return Build(NodeKind::kMap, {inner->inputs()[0]}, std::move(attrs),
                   registry);
    });
  }

  // d.map(f).batch(b) -> d.batch(b).map(vec_f), only when f registered a
  // vectorized variant.
  NodePtr TryVectorize(const NodePtr& node, const std::string& path) {
    if (node->kind() != NodeKind::kBatch) return nullptr;
    const auto& inner = node->inputs()[0];
    if (inner->kind() != NodeKind::kMap) return nullptr;
    if (inner->HasAttr("fused_filter_udf")) return nullptr;
    const std::string& f = inner->GetString("udf");
    if (!registry.Contains(f) || !registry.Get(f).vectorized) return nullptr;

    return Apply(kMapVectorization, path, [&] {
      std::string name = VectorizedName(f);
      EnsureVectorized(registry, f, name);
      Attrs batch_attrs = node->attrs();
      NodePtr batched = Build(NodeKind::kBatch, {inner->inputs()[0]},
                              std::move(batch_attrs), registry);
      Attrs map_attrs = {
          {"udf", name},
          {"num_parallel_calls", inner->GetInt("num_parallel_calls")}};
      return Build(NodeKind::kMap, {batched}, std::move(map_attrs), registry);
    });
  }

  // d.map(f).batch(b) -> d.map_and_batch(f, b).
  NodePtr TryMapBatch(const NodePtr& node, const std::string& path) {
    if (node->kind() != NodeKind::kBatch) return nullptr;
    const auto& inner = node->inputs()[0];
    if (inner->kind() != NodeKind::kMap) return nullptr;
    // A fused predicate changes cardinality between map and batch, which
    // blocks fusion.
    if (inner->HasAttr("fused_filter_udf")) return nullptr;
    const std::string& f = inner->GetString("udf");
    if (!registry.Contains(f) || !registry.Get(f).map_fn) return nullptr;

    return Apply(kMapBatchFusion, path, [&] {
      Attrs attrs = {{"udf", f},
                     {"batch_size", node->GetInt("batch_size")},
                     {"num_parallel_calls",
                      inner->GetInt("num_parallel_calls")}};
      if (node->GetBoolOr("drop_remainder", false)) {
        attrs["drop_remainder"] = true;
      }
      attrs = CopyWorkAttrs(*node, std::move(attrs));
      return Build(NodeKind::kMapAndBatch, {inner->inputs()[0]},
                   std::move(attrs), registry);
    });
  }

  // d.shuffle(n).repeat(c): the fused shuffle iterator survives across
  // epochs and derives a fresh per-epoch seed, exactly matching what repeat
  // re-instantiation would produce, without rebuilding the buffer.
  NodePtr TryShuffleRepeat(const NodePtr& node, const std::string& path) {
    if (node->kind() != NodeKind::kRepeat) return nullptr;
    const auto& inner = node->inputs()[0];
    if (inner->kind() != NodeKind::kShuffle) return nullptr;
    if (inner->GetBoolOr("fused_with_repeat", false)) return nullptr;

    return Apply(kShuffleRepeatFusion, path, [&] {
      Attrs shuffle_attrs = inner->attrs();
      shuffle_attrs["fused_with_repeat"] = true;
      NodePtr fused = Build(NodeKind::kShuffle, {inner->inputs()[0]},
                            std::move(shuffle_attrs), registry);
      return Build(NodeKind::kRepeat, {fused}, node->attrs(), registry);
    });
  }

  NodePtr RewriteSubtree(const NodePtr& node, const std::string& path) {
    std::vector<NodePtr> inputs;
    inputs.reserve(node->inputs().size());
    bool inputs_changed = false;
    for (size_t i = 0; i < node->inputs().size(); ++i) {
      const auto& input = node->inputs()[i];
      std::string child_path =
          path + "/" + NodeKindName(input->kind()) + "@" + std::to_string(i);
      NodePtr rewritten = RewriteSubtree(input, child_path);
      inputs_changed |= (rewritten != input);
      inputs.push_back(std::move(rewritten));
    }
    NodePtr current =
        inputs_changed
            ? Build(node->kind(), std::move(inputs), node->attrs(), registry)
            : node;
    for (;;) {
      NodePtr replaced = TryRules(current, path);
      if (!replaced) break;
      current = std::move(replaced);
    }
    return current;
  }
};

}  // namespace

RuleSet RuleSet::Default() {
  RuleSet rs;
  rs.order_ = AllRuleNames();
  return rs;
}

RuleSet RuleSet::None() { return RuleSet(); }

const std::vector<std::string>& RuleSet::AllRuleNames() {
  static const std::vector<std::string> kAll = {
      kMapMapFusion,     kFilterFilterFusion, kMapFilterFusion,
      kMapVectorization, kMapBatchFusion,     kShuffleRepeatFusion};
  return kAll;
}

void RuleSet::Disable(const std::string& name) {
  if (std::find(AllRuleNames().begin(), AllRuleNames().end(), name) ==
      AllRuleNames().end()) {
    throw PipelineError(ErrorCode::kInvalidAttr, "unknown rule: " + name);
  }
  order_.erase(std::remove(order_.begin(), order_.end(), name), order_.end());
}

bool RuleSet::IsEnabled(const std::string& name) const {
  return std::find(order_.begin(), order_.end(), name) != order_.end();
}

void RuleSet::SetOrder(std::vector<std::string> names) {
  for (const auto& name : names) {
    if (std::find(AllRuleNames().begin(), AllRuleNames().end(), name) ==
        AllRuleNames().end()) {
      throw PipelineError(ErrorCode::kInvalidAttr, "unknown rule: " + name);
    }
  }
  order_ = std::move(names);
}

std::string RewriteReport::ToString() const {
  std::ostringstream os;
  os << "passes: " << iterations << "\n";
  if (applied.empty()) {
    os << "no rewrites applied\n";
    return os.str();
  }
  for (const auto& record : applied) {
    os << record.rule << " at " << record.node_path << "\n";
  }
  return os.str();
}

std::pair<DatasetGraph, RewriteReport> Optimize(const DatasetGraph& graph,
                                                const RuleSet& rules,
                                                UdfRegistry& registry) {
  if (!graph.root()) {
    throw PipelineError(ErrorCode::kValidationFailed, "empty graph");
  }
  RewriteReport report;
  NodePtr root = graph.root();
  for (int pass = 1;; ++pass) {
    if (pass > kMaxPasses) {
      throw PipelineError(ErrorCode::kRewriteDiverged,
                          "rewrite did not reach a fixed point in " +
                              std::to_string(kMaxPasses) + " passes");
    }
    RewriteEngine engine{rules, registry, &report};
    std::string root_path =
        "/" + std::string(NodeKindName(root->kind())) + "@0";
    NodePtr rewritten = engine.RewriteSubtree(root, root_path);
    report.iterations = pass;
    if (!engine.changed) break;
    root = std::move(rewritten);
  }
  return {DatasetGraph(root), report};
}

}  // namespace datapipe
