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
#include "datapipe/bench.hpp"

#include <algorithm>
#include <chrono>
#include <map>
#include <thread>
#include <sstream>

#include "datapipe/errors.hpp"
#include "json.hpp"

namespace datapipe::bench {

namespace {

using Clock = std::chrono::steady_clock;
using nlohmann::json;

// Hybrid sleep matching the runtime's synthetic-work accuracy.
void ThinkFor(double ms) {
  if (ms <= 0) return;
  int64_t ns = static_cast<int64_t>(ms * 1e6);
  auto until = Clock::now() + std::chrono::nanoseconds(ns);
  if (ns > 1'000'000) {
    std::this_thread::sleep_for(std::chrono::nanoseconds(ns - 1'000'000));
  }
  while (Clock::now() < until) {
  }
}

double MsSince(Clock::time_point start) {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() -
                                                              start)
             .count() /
         1e6;
}

bool IsTunableParallelKind(NodeKind kind) {
  return kind == NodeKind::kMap || kind == NodeKind::kInterleave ||
         kind == NodeKind::kMapAndBatch;
}

// Rebuilds the tree with mode-specific knob settings. Sequential mode also
// strips prefetch nodes entirely.
NodePtr BuildVariant(const NodePtr& node, RunMode mode,
                     const UdfRegistry& registry) {
  std::vector<NodePtr> inputs;
  for (const auto& input : node->inputs()) {
    inputs.push_back(BuildVariant(input, mode, registry));
  }
  if (mode == RunMode::kSequential && node->kind() == NodeKind::kPrefetch) {
    return inputs[0];
  }
  Attrs attrs = node->attrs();
  if (IsTunableParallelKind(node->kind())) {
    int64_t p = std::get<int64_t>(attrs.at("num_parallel_calls"));
    switch (mode) {
      case RunMode::kSequential:
        attrs["num_parallel_calls"] = int64_t{1};
        break;
      case RunMode::kHandTuned:
        if (p == kAutotune) attrs["num_parallel_calls"] = int64_t{1};
        break;
      case RunMode::kTuned:
      case RunMode::kAllFeatures:
        attrs["num_parallel_calls"] = kAutotune;
        break;
    }
  }
  if (node->kind() == NodeKind::kPrefetch) {
    int64_t b = std::get<int64_t>(attrs.at("buffer_size"));
    switch (mode) {
      case RunMode::kSequential:
        break;  // unreachable; stripped above
      case RunMode::kHandTuned:
        if (b == kAutotune) attrs["buffer_size"] = int64_t{1};
        break;
      case RunMode::kTuned:
      case RunMode::kAllFeatures:
        attrs["buffer_size"] = kAutotune;
        break;
    }
  }
  return Build(node->kind(), std::move(inputs), std::move(attrs), registry);
}

double Percentile(std::vector<double>& xs, double p) {
  if (xs.empty()) return 0;
  std::sort(xs.begin(), xs.end());
  size_t idx = static_cast<size_t>(p * (xs.size() - 1) + 0.5);
  return xs[std::min(idx, xs.size() - 1)];
}

autotune::Budget ResolveBudget(const ParsedPipeline& pipeline,
                               const RunConfig& config) {
  autotune::Budget budget = autotune::Budget::Defaults();
  if (pipeline.cpu_budget) budget.cpu_parallelism = *pipeline.cpu_budget;
  if (config.cpu_budget) budget.cpu_parallelism = *config.cpu_budget;
  if (pipeline.ram_budget_mb) {
    budget.ram_bytes = *pipeline.ram_budget_mb * 1024.0 * 1024.0;
  }
  if (config.ram_budget_mb) {
    budget.ram_bytes = *config.ram_budget_mb * 1024.0 * 1024.0;
  }
  return budget;
}

void ApplyCarriedParams(PipelineIterator& it,
                        const std::map<std::string, int64_t>& carried) {
  for (auto& [path, param] : it.model()->TunableParameters()) {
    auto found = carried.find(path + "#" + param->name());
    if (found != carried.end()) param->Publish(found->second);
  }
}

void CollectCarriedParams(PipelineIterator& it,
                          std::map<std::string, int64_t>& carried) {
  for (auto& [path, param] : it.model()->TunableParameters()) {
    carried[path + "#" + param->name()] = param->published();
  }
}

}  // namespace

const char* RunModeName(RunMode mode) {
  switch (mode) {
    case RunMode::kSequential:
      return "sequential";
    case RunMode::kHandTuned:
      return "hand-tuned";
    case RunMode::kTuned:
      return "tuned";
    case RunMode::kAllFeatures:
      return "all-features";
  }
  return "?";
}

std::optional<RunMode> RunModeFromName(const std::string& name) {
  for (RunMode mode : {RunMode::kSequential, RunMode::kHandTuned,
                       RunMode::kTuned, RunMode::kAllFeatures}) {
    if (name == RunModeName(mode)) return mode;
  }
  return std::nullopt;
}

RunReport Run(const ParsedPipeline& pipeline, const RunConfig& config,
              UdfRegistry& registry) {
  RunReport report;
  report.mode = config.mode;

  DatasetGraph variant(
      BuildVariant(pipeline.graph.root(), config.mode, registry));

  RuleSet rules = RuleSet::Default();
  for (const auto& rule : pipeline.disabled_rules) rules.Disable(rule);
  for (const auto& rule : config.disabled_rules) rules.Disable(rule);
  if (config.mode == RunMode::kAllFeatures) {
    auto [optimized, rewrites] = Optimize(variant, rules, registry);
    variant = std::move(optimized);
    report.rewrites = std::move(rewrites);
  }

  IteratorOptions options = pipeline.options;
  if (config.mode == RunMode::kAllFeatures) options.deterministic = false;
  if (config.deterministic) options.deterministic = *config.deterministic;
  if (config.seed) options.seed_override = *config.seed;

  bool tuned = config.mode == RunMode::kTuned ||
               config.mode == RunMode::kAllFeatures;
  autotune::Budget budget = ResolveBudget(pipeline, config);

  int epochs = config.epochs.value_or(pipeline.epochs);
  report.epochs = epochs;
  std::map<std::string, int64_t> carried;
  std::vector<double> batch_ms;

  for (int epoch = 0; epoch <= epochs; ++epoch) {
    bool measured = epoch > 0;
    auto it = MakeIterator(variant, registry, options);
    ApplyCarriedParams(*it, carried);

    std::optional<autotune::Tuner> tuner;
    if (tuned) {
      tuner.emplace(it->model(), budget);
      tuner->Start();
    }

    int64_t count = 0;
    auto epoch_start = Clock::now();
    for (;;) {
      auto pull_start = Clock::now();
      auto element = it->GetNext();
      if (!element) break;
      if (measured) batch_ms.push_back(MsSince(pull_start));
      count++;
      ThinkFor(pipeline.consumer_think_ms);
    }
    double wall = MsSince(epoch_start);

    if (tuner) {
      tuner->Stop();
      if (config.tuner_dump && epoch == epochs) {
        report.tuner_dump = tuner->DebugString();
      }
      report.final_params = tuner->last_result().published;
    }
    CollectCarriedParams(*it, carried);

    if (report.elements_per_epoch == 0) {
      report.elements_per_epoch = count;
    } else if (count != report.elements_per_epoch) {
      throw PipelineError(
          ErrorCode::kInternal,
          "epoch produced " + std::to_string(count) + " elements, expected " +
              std::to_string(report.elements_per_epoch));
    }
    if (measured) report.epoch_wall_ms.push_back(wall);

    if (epoch == epochs) {
      for (const auto& row : it->Metrics()) {
        report.node_stats.push_back({row.path, row.label,
                                     row.self_time_ns / 1e6,
                                     row.elements_produced});
      }
    }
  }

  std::vector<double> walls = report.epoch_wall_ms;
  report.median_epoch_ms = Percentile(walls, 0.5);
  report.p50_batch_ms = Percentile(batch_ms, 0.5);
  report.p90_batch_ms = Percentile(batch_ms, 0.9);
  report.p99_batch_ms = Percentile(batch_ms, 0.99);
  return report;
}

CompareReport Compare(const ParsedPipeline& pipeline, const RunConfig& config,
                      UdfRegistry& registry) {
  CompareReport report;
  RunConfig c = config;
  c.mode = RunMode::kSequential;
  report.sequential = Run(pipeline, c, registry);
  c.mode = RunMode::kHandTuned;
  report.hand_tuned = Run(pipeline, c, registry);
  c.mode = RunMode::kTuned;
  report.tuned = Run(pipeline, c, registry);

  auto safe_ratio = [](double a, double b) { return b > 0 ? a / b : 0.0; };
  report.speedup_hand_vs_sequential = safe_ratio(
      report.sequential.median_epoch_ms, report.hand_tuned.median_epoch_ms);
  report.speedup_tuned_vs_sequential = safe_ratio(
      report.sequential.median_epoch_ms, report.tuned.median_epoch_ms);
  report.tuned_vs_hand = safe_ratio(report.tuned.median_epoch_ms,
                                    report.hand_tuned.median_epoch_ms);
  return report;
}

GridSearchResult GridSearch(const ParsedPipeline& pipeline,
                            const std::vector<GridAxis>& grid,
                            const RunConfig& config, UdfRegistry& registry) {
  if (grid.empty()) {
    throw PipelineError(ErrorCode::kInvalidAttr, "empty grid");
  }
  size_t points = 1;
  for (const auto& axis : grid) {
    if (axis.values.empty()) {
      throw PipelineError(ErrorCode::kInvalidAttr,
                          "empty grid axis: " + axis.tunable_name);
    }
    points *= axis.values.size();
    if (points > 4096) {
      throw PipelineError(ErrorCode::kGridTooLarge,
                          "grid exceeds 4096 points");
    }
  }

  // Resolve axis names against the pipeline's tunables; grids assign values
  // along the (linear) op chain built by the parser.
  std::vector<int> stanza_for_axis;
  for (const auto& axis : grid) {
    const ParsedPipeline::TunableRef* found = nullptr;
    for (const auto& t : pipeline.tunables) {
      if (t.name == axis.tunable_name) found = &t;
    }
    if (!found) {
      throw PipelineError(ErrorCode::kInvalidAttr,
                          "unknown tunable: " + axis.tunable_name +
                              " (spec has " +
                              std::to_string(pipeline.tunables.size()) +
                              " tunables)");
    }
    stanza_for_axis.push_back(found->stanza_index);
  }

  // Chain of op nodes from the root down to (excluding) the source.
  std::vector<const DatasetNode*> chain;
  for (const DatasetNode* n = pipeline.graph.root().get();
       !n->inputs().empty(); n = n->inputs()[0].get()) {
    chain.push_back(n);
  }
  int num_ops = static_cast<int>(chain.size());

  GridSearchResult result;
  std::vector<size_t> idx(grid.size(), 0);
  double best_ms = std::numeric_limits<double>::infinity();
  for (;;) {
    // Rebuild the graph bottom-up with this assignment (hand-tuned
    // semantics elsewhere).
    std::map<int, int64_t> assignment;  // stanza index -> value
    for (size_t a = 0; a < grid.size(); ++a) {
      assignment[stanza_for_axis[a]] = grid[a].values[idx[a]];
    }
    struct Rebuild {
      const std::map<int, int64_t>& assignment;
      int num_ops;
      const UdfRegistry& registry;
      NodePtr operator()(const DatasetNode& node, int depth) const {
        if (node.inputs().empty()) {
          return std::make_shared<const DatasetNode>(node);
        }
        NodePtr input = (*this)(*node.inputs()[0], depth + 1);
        Attrs attrs = node.attrs();
        int stanza = num_ops - 1 - depth;
        auto it = assignment.find(stanza);
        if (it != assignment.end()) {
          if (node.kind() == NodeKind::kPrefetch) {
            attrs["buffer_size"] = it->second;
          } else {
            attrs["num_parallel_calls"] = it->second;
          }
        } else {
          // Unpinned tunables run at their hand-tuned resolution.
          for (const char* key : {"num_parallel_calls", "buffer_size"}) {
            auto attr = attrs.find(key);
            if (attr != attrs.end() &&
                std::get<int64_t>(attr->second) == kAutotune) {
              attr->second = int64_t{1};
            }
          }
        }
        return Build(node.kind(), {input}, std::move(attrs), registry);
      }
    } rebuild{assignment, num_ops, registry};

    ParsedPipeline variant = pipeline;
    variant.graph = DatasetGraph(rebuild(*pipeline.graph.root(), 0));

    RunConfig point_config = config;
    point_config.mode = RunMode::kHandTuned;
    RunReport run = Run(variant, point_config, registry);

    GridPoint point;
    for (size_t a = 0; a < grid.size(); ++a) {
      point.assignment.emplace_back(grid[a].tunable_name,
                                    grid[a].values[idx[a]]);
    }
    point.median_epoch_ms = run.median_epoch_ms;
    if (point.median_epoch_ms < best_ms) {
      best_ms = point.median_epoch_ms;
      result.best = point;
    }
    result.points.push_back(std::move(point));

    size_t a = 0;
    for (; a < grid.size(); ++a) {
      if (++idx[a] < grid[a].values.size()) break;
      idx[a] = 0;
    }
    if (a == grid.size()) break;
  }
  return result;
}

std::string RunReport::ToText() const {
  std::ostringstream os;
  os << "mode: " << RunModeName(mode) << "\n";
  os << "epochs measured: " << epochs << " (1 warm-up discarded)\n";
  os << "elements per epoch: " << elements_per_epoch << "\n";
  os << "median epoch: " << median_epoch_ms << " ms\n";
  os << "per-element latency: p50 " << p50_batch_ms << " ms, p90 "
     << p90_batch_ms << " ms, p99 " << p99_batch_ms << " ms\n";
  if (!rewrites.applied.empty()) {
    os << "rewrites:\n" << rewrites.ToString();
  }
  if (!final_params.empty()) {
    os << "tuned parameters:\n";
    for (const auto& p : final_params) {
      os << "  " << p.path << " " << p.name << " = " << p.value << "\n";
    }
  }
  os << "per-node self time:\n";
  for (const auto& s : node_stats) {
    os << "  " << s.path << " self=" << s.self_time_ms << " ms elements="
       << s.elements << "\n";
  }
  if (!tuner_dump.empty()) {
    os << "tuner state:\n" << tuner_dump;
  }
  return os.str();
}

namespace {

json ReportJson(const RunReport& r) {
  json j;
  j["mode"] = RunModeName(r.mode);
  j["epochs"] = r.epochs;
  j["elements_per_epoch"] = r.elements_per_epoch;
  j["epoch_wall_ms"] = r.epoch_wall_ms;
  j["median_epoch_ms"] = r.median_epoch_ms;
  j["batch_latency_ms"] = {
      {"p50", r.p50_batch_ms}, {"p90", r.p90_batch_ms}, {"p99", r.p99_batch_ms}};
  json nodes = json::array();
  for (const auto& s : r.node_stats) {
    nodes.push_back({{"path", s.path},
                     {"label", s.label},
                     {"self_time_ms", s.self_time_ms},
                     {"elements", s.elements}});
  }
  j["nodes"] = nodes;
  json rewrites = json::array();
  for (const auto& rec : r.rewrites.applied) {
    rewrites.push_back({{"rule", rec.rule}, {"path", rec.node_path}});
  }
  j["rewrites"] = rewrites;
  json params = json::array();
  for (const auto& p : r.final_params) {
    params.push_back({{"path", p.path}, {"name", p.name}, {"value", p.value}});
  }
  j["tuned_parameters"] = params;
  return j;
}

}  // namespace

std::string RunReport::ToJson() const { return ReportJson(*this).dump(2); }

std::string CompareReport::ToText() const {
  std::ostringstream os;
  os << "mode          epoch(ms)  speedup-vs-sequential\n";
  os << "sequential    " << sequential.median_epoch_ms << "  1.00\n";
  os << "hand-tuned    " << hand_tuned.median_epoch_ms << "  "
     << speedup_hand_vs_sequential << "\n";
  os << "tuned         " << tuned.median_epoch_ms << "  "
     << speedup_tuned_vs_sequential << "\n";
  os << "tuned/hand-tuned ratio: " << tuned_vs_hand << "\n";
  return os.str();
}

std::string CompareReport::ToJson() const {
  json j;
  j["sequential"] = ReportJson(sequential);
  j["hand_tuned"] = ReportJson(hand_tuned);
  j["tuned"] = ReportJson(tuned);
  j["speedup_hand_vs_sequential"] = speedup_hand_vs_sequential;
  j["speedup_tuned_vs_sequential"] = speedup_tuned_vs_sequential;
  j["tuned_vs_hand"] = tuned_vs_hand;
  return j.dump(2);
}

std::string GridSearchResult::ToText() const {
  std::ostringstream os;
  os << "grid points: " << points.size() << "\n";
  for (const auto& p : points) {
    for (const auto& [name, value] : p.assignment) {
      os << name << "=" << value << " ";
    }
    os << "-> " << p.median_epoch_ms << " ms\n";
  }
  os << "best:";
  for (const auto& [name, value] : best.assignment) {
    os << " " << name << "=" << value;
  }
  os << " (" << best.median_epoch_ms << " ms)\n";
  return os.str();
}

std::string GridSearchResult::ToJson() const {
  json j;
  json pts = json::array();
  for (const auto& p : points) {
    json assignment;
    for (const auto& [name, value] : p.assignment) assignment[name] = value;
    pts.push_back(
        {{"assignment", assignment}, {"median_epoch_ms", p.median_epoch_ms}});
  }
  j["points"] = pts;
  json best_assignment;
  for (const auto& [name, value] : best.assignment) {
    best_assignment[name] = value;
  }
  j["best"] = {{"assignment", best_assignment},
               {"median_epoch_ms", best.median_epoch_ms}};
  return j.dump(2);
}

}  // namespace datapipe::bench
