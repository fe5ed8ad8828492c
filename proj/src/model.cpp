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
#include "datapipe/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "datapipe/errors.hpp"

namespace datapipe::autotune {

namespace {
constexpr double kEwmaHalfLifeNs = 1e9;  // one second of wall time
}

double PEmpty(double n, double x, double y) {
  if (!(n >= 1.0) || !(x > 0.0) || !(y > 0.0)) {
    throw PipelineError(ErrorCode::kDomainError,
                        "PEmpty requires n >= 1 and positive rates");
  }
  double r = x / y;
  if (std::abs(r - 1.0) < 1e-9) {
    return 1.0 / (n + 1.0);
  }
  double denom = 1.0 - std::pow(r, n + 1.0);
  double p = (1.0 - r) / denom;
  // Guard against floating-point underflow at extreme rate ratios.
  return std::clamp(p, 0.0, 1.0);
}

ModelNode::ModelNode(std::string path, std::string label, NodeClass cls)
    : path_(std::move(path)), label_(std::move(label)), cls_(cls) {}

void ModelNode::RecordSelfTime(int64_t nanos) {
  total_self_ns_.fetch_add(nanos, std::memory_order_relaxed);
  auto now = std::chrono::steady_clock::now();
  std::lock_guard lock(ewma_mu_);
  if (!has_sample_) {
    ewma_ns_ = static_cast<double>(nanos);
    has_sample_ = true;
  } else {
    double dt_ns = static_cast<double>(
        std::chrono::duration_cast<std::chrono::nanoseconds>(now - last_sample_)
            .count());
    double w = std::exp2(-std::max(dt_ns, 0.0) / kEwmaHalfLifeNs);
    // Keep a floor on responsiveness for very high-rate nodes.
    w = std::min(w, 0.95);
    ewma_ns_ = w * ewma_ns_ + (1.0 - w) * static_cast<double>(nanos);
  }
  last_sample_ = now;
}

void ModelNode::RecordProduced(int64_t count) {
  produced_.fetch_add(count, std::memory_order_relaxed);
}

void ModelNode::RecordBufferedElementBytes(size_t bytes) {
  buffered_bytes_sum_.fetch_add(static_cast<int64_t>(bytes),
                                std::memory_order_relaxed);
  buffered_count_.fetch_add(1, std::memory_order_relaxed);
}

double ModelNode::SelfTimeNs() const {
  std::lock_guard lock(ewma_mu_);
  if (!has_sample_) return cold_cost_ns_;
  return ewma_ns_;
}

double ModelNode::BytesPerElement() const {
  int64_t count = buffered_count_.load(std::memory_order_relaxed);
  if (count == 0) return 1024.0;  // cold default 1 KiB
  return static_cast<double>(
             buffered_bytes_sum_.load(std::memory_order_relaxed)) /
         static_cast<double>(count);
}

Model::Model() { recent_calls_.reserve(kRateWindow); }

std::shared_ptr<ModelNode> Model::Attach(const std::string& path,
                                         const std::string& parent_path,
                                         const std::string& label,
                                         NodeClass cls) {
  std::lock_guard lock(mu_);
  auto it = nodes_.find(path);
  std::shared_ptr<ModelNode> node;
  if (it != nodes_.end()) {
    node = it->second;
  } else {
    node = std::make_shared<ModelNode>(path, label, cls);
    nodes_[path] = node;
    auto parent_it = nodes_.find(parent_path);
    if (parent_it != nodes_.end()) {
      node->parent_ = parent_it->second.get();
      parent_it->second->children_.push_back(node);
    } else {
      root_ = node;
    }
    structure_version_.fetch_add(1, std::memory_order_relaxed);
  }
  if (node->live_refs_ == 0) {
    structure_version_.fetch_add(1, std::memory_order_relaxed);
  }
  node->live_refs_++;
  return node;
}

void Model::Detach(const std::shared_ptr<ModelNode>& node) {
  if (!node) return;
  std::lock_guard lock(mu_);
  node->live_refs_ = std::max(0, node->live_refs_ - 1);
  if (node->live_refs_ == 0) {
    structure_version_.fetch_add(1, std::memory_order_relaxed);
  }
}

std::shared_ptr<ModelNode> Model::Find(const std::string& path) const {
  std::lock_guard lock(mu_);
  auto it = nodes_.find(path);
  return it == nodes_.end() ? nullptr : it->second;
}

void Model::RecordRootGetNext(std::chrono::steady_clock::time_point t) {
  std::lock_guard lock(rate_mu_);
  if (recent_calls_.size() < kRateWindow) {
    recent_calls_.push_back(t);
  } else {
    recent_calls_[rate_pos_] = t;
    rate_pos_ = (rate_pos_ + 1) % kRateWindow;
  }
}

double Model::RootConsumerRatePerSec(double fallback) const {
  std::lock_guard lock(rate_mu_);
  if (recent_calls_.size() < 2) return fallback;
  auto [min_it, max_it] =
      std::minmax_element(recent_calls_.begin(), recent_calls_.end());
  double span_ns = static_cast<double>(
      std::chrono::duration_cast<std::chrono::nanoseconds>(*max_it - *min_it)
          .count());
  if (span_ns <= 0) return fallback;
  return (static_cast<double>(recent_calls_.size()) - 1.0) * 1e9 / span_ns;
}

SnapshotNode Model::SnapshotRec(const ModelNode& node) const {
  SnapshotNode out;
  out.path = node.path_;
  out.label = node.label_;
  out.cls = node.cls_;
  out.self_ns = node.SelfTimeNs();
  out.bytes_per_element = node.BytesPerElement();
  out.cycle_length = node.cycle_length_;
  out.batch_size = node.batch_size_;
  if (node.parallelism_) {
    out.parallelism = static_cast<double>(node.parallelism_->published());
    out.parallelism_tunable = node.parallelism_->tunable();
    out.parallelism_min = node.parallelism_->min();
    out.parallelism_max = node.parallelism_->max();
  }
  if (node.buffer_) {
    out.buffer = static_cast<double>(node.buffer_->published());
    out.buffer_tunable = node.buffer_->tunable();
    out.buffer_min = node.buffer_->min();
    out.buffer_max = node.buffer_->max();
  }
  // Observed production ratio relative to the parent; fall back to the
  // static ratio until elements flow.
  if (node.parent_ != nullptr) {
    int64_t mine = node.produced_.load(std::memory_order_relaxed);
    int64_t parents = node.parent_->produced_.load(std::memory_order_relaxed);
    if (mine > 0 && parents > 0) {
      out.ratio = static_cast<double>(mine) / static_cast<double>(parents);
    } else {
      out.ratio = node.static_ratio_;
    }
  }
  // Interleave sub-iterators mount under ".../sub"; any other child of an
  // interleave node is its element-defining input.
  out.is_interleave_input =
      node.parent_ != nullptr &&
      node.parent_->cls_ == NodeClass::kAsyncInterleave &&
      !(node.path_.size() >= 4 &&
        node.path_.compare(node.path_.size() - 4, 4, "/sub") == 0);
  for (const auto& child : node.children_) {
    if (child->live_refs_ > 0) out.children.push_back(SnapshotRec(*child));
  }
  return out;
}

std::optional<SnapshotNode> Model::Snapshot() const {
  std::lock_guard lock(mu_);
  if (!root_) return std::nullopt;
  return SnapshotRec(*root_);
}

std::vector<std::pair<std::string, std::shared_ptr<Parameter>>>
Model::TunableParameters() const {
  std::lock_guard lock(mu_);
  std::vector<std::pair<std::string, std::shared_ptr<Parameter>>> out;
  for (const auto& [path, node] : nodes_) {
    if (node->live_refs_ == 0) continue;
    if (node->parallelism_ && node->parallelism_->tunable()) {
      out.emplace_back(path, node->parallelism_);
    }
    // Parallel transforms alias their buffer to the parallelism knob; count
    // the parameter once.
    if (node->buffer_ && node->buffer_ != node->parallelism_ &&
        node->buffer_->tunable()) {
      out.emplace_back(path, node->buffer_);
    }
  }
  return out;
}

namespace {

struct EstimateContext {
  std::map<std::string, double>* per_node;
};

double EstimateRec(const SnapshotNode& node, double consumer_rate,
                   EstimateContext& ctx) {
  double self = node.self_ns;
  double latency = 0;

  switch (node.cls) {
    case NodeClass::kSource:
      latency = self;
      break;
    case NodeClass::kSync: {
      latency = self;
      for (const auto& child : node.children) {
        double child_rate = consumer_rate * std::max(child.ratio, 1e-9);
        latency += child.ratio * EstimateRec(child, child_rate, ctx);
      }
      break;
    }
    case NodeClass::kAsyncQueue: {
      double parallelism = std::max(node.parallelism, 1.0);
      double producer_ns = self / parallelism;
      for (const auto& child : node.children) {
        double child_rate = consumer_rate * std::max(child.ratio, 1e-9);
        producer_ns += child.ratio * EstimateRec(child, child_rate, ctx);
      }
      if (producer_ns <= 0) producer_ns = 1.0;
      double x = 1e9 / producer_ns;
      double n = std::max(node.buffer, 1.0);
      // Fused map+batch buffers whole batches; its queue depth follows from
      // the parallelism spread across one batch.
      if (node.batch_size > 1 && node.buffer <= 1.0) {
        n = std::max(1.0, parallelism / static_cast<double>(node.batch_size)) +
            1.0;
      }
      latency = producer_ns * PEmpty(n, x, consumer_rate);
      break;
    }
    case NodeClass::kAsyncInterleave: {
      // Producer fetches one element from one open sub-iterator at a time;
      // producer latency charges the mean sub latency plus own time divided
      // by parallelism. Sub-iterators see the consumer rate split across the
      // cycle.
      double parallelism = std::max(node.parallelism, 1.0);
      double producer_ns = self / parallelism;
      double sub_sum = 0;
      int sub_count = 0;
      double cycle = static_cast<double>(std::max<int64_t>(node.cycle_length, 1));
      for (const auto& child : node.children) {
        if (child.is_interleave_input) {
          double child_rate = consumer_rate * std::max(child.ratio, 1e-9);
          producer_ns += child.ratio * EstimateRec(child, child_rate, ctx);
        } else {
          sub_sum += EstimateRec(child, consumer_rate / cycle, ctx);
          sub_count++;
        }
      }
      if (sub_count > 0) producer_ns += sub_sum / sub_count;
      if (producer_ns <= 0) producer_ns = 1.0;
      double x = 1e9 / producer_ns;
      double n = std::max(node.buffer, parallelism);
      latency = producer_ns * PEmpty(n, x, consumer_rate);
      break;
    }
  }

  if (ctx.per_node) (*ctx.per_node)[node.path] = latency;
  return latency;
}

}  // namespace

LatencyEstimate EstimateOutputLatency(const SnapshotNode& root,
                                      double root_consumer_rate_per_sec) {
  LatencyEstimate out;
  EstimateContext ctx{&out.per_node_ns};
  out.root_latency_ns = EstimateRec(root, root_consumer_rate_per_sec, ctx);
  return out;
}

std::string Model::DebugString() const {
  auto snap = Snapshot();
  if (!snap) return "(empty model)\n";
  std::ostringstream os;
  double rate = RootConsumerRatePerSec();
  LatencyEstimate est = EstimateOutputLatency(*snap, rate);
  os << "root consumer rate: " << rate << " calls/s\n";
  struct Walk {
    std::ostringstream& os;
    const LatencyEstimate& est;
    void operator()(const SnapshotNode& n, int depth) {
      for (int i = 0; i < depth; ++i) os << "  ";
      os << n.label << " self=" << n.self_ns / 1e6 << "ms";
      if (n.parallelism_tunable || n.parallelism > 1) {
        os << " parallelism=" << n.parallelism;
      }
      if (n.buffer_tunable || n.buffer > 1) os << " buffer=" << n.buffer;
      auto it = est.per_node_ns.find(n.path);
      if (it != est.per_node_ns.end()) {
        os << " latency=" << it->second / 1e6 << "ms";
      }
      os << "\n";
      for (const auto& c : n.children) (*this)(c, depth + 1);
    }
  } walk{os, est};
  walk(*snap, 0);
  return os.str();
}

}  // namespace datapipe::autotune
