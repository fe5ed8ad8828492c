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
#ifndef DATAPIPE_MODEL_HPP_
#define DATAPIPE_MODEL_HPP_

#include <atomic>
#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace datapipe::autotune {

// Probability that an async transformation's buffer is empty when the
// consumer arrives, modeled as an M/M/1/k queue. `n` is the buffer size
// (continuous relaxation allowed), `x` the producer rate and `y` the consumer
// rate, both in elements per second. Throws DomainError unless n >= 1 and
// x, y > 0.
double PEmpty(double n, double x, double y);

enum class NodeClass : uint8_t {
  kSource = 0,          // leaf; output latency = self time
  kSync = 1,            // linear in children latencies and self time
  kAsyncQueue = 2,      // prefetch / parallel map / map_and_batch
  kAsyncInterleave = 3  // parallel interleave: cycle of open sub-iterators
};

// A knob mirrored from the iterator tree. `published` is the integer value
// the runtime reads between elements; the continuous `value` exists only
// inside optimization snapshots.
class Parameter {
 public:
  Parameter(std::string name, int64_t initial, double min, double max,
            bool tunable)
      : name_(std::move(name)),
        min_(min),
        max_(max),
        tunable_(tunable),
        published_(initial) {}

  const std::string& name() const { return name_; }
  double min() const { return min_; }
  double max() const { return max_; }
  bool tunable() const { return tunable_; }

  int64_t published() const { return published_.load(std::memory_order_relaxed); }
  void Publish(int64_t v) { published_.store(v, std::memory_order_relaxed); }

 private:
  std::string name_;
  double min_;
  double max_;
  bool tunable_;
  std::atomic<int64_t> published_;
};

// Mirror of one iterator (keyed by node path; reused when transformations
// like repeat re-create iterators for the same node).
class ModelNode {
 public:
  ModelNode(std::string path, std::string label, NodeClass cls);

  const std::string& path() const { return path_; }
  const std::string& label() const { return label_; }
  NodeClass node_class() const { return cls_; }

  // Instrumentation (called from runtime threads).
  void RecordSelfTime(int64_t nanos);
  void RecordProduced(int64_t count = 1);
  void RecordBufferedElementBytes(size_t bytes);

  // Exponentially-weighted processing time per element with a one-second
  // wall-time half-life; the first sample initializes the estimate.
  double SelfTimeNs() const;
  void SetColdCostNs(double ns) { cold_cost_ns_ = ns; }
  double cold_cost_ns() const { return cold_cost_ns_; }

  int64_t TotalSelfTimeNs() const {
    return total_self_ns_.load(std::memory_order_relaxed);
  }
  int64_t ElementsProduced() const {
    return produced_.load(std::memory_order_relaxed);
  }
  double BytesPerElement() const;

  // High-water mark of buffered results (async nodes).
  void RecordBufferPeak(int64_t occupancy) {
    int64_t prev = peak_buffered_.load(std::memory_order_relaxed);
    while (occupancy > prev &&
           !peak_buffered_.compare_exchange_weak(prev, occupancy)) {
    }
  }
  int64_t PeakBuffered() const {
    return peak_buffered_.load(std::memory_order_relaxed);
  }

  // Static production ratio relative to the parent (elements this node
  // produces per element its parent produces); observed counters take over
  // once elements flow.
  void set_static_ratio(double r) { static_ratio_ = r; }
  double static_ratio() const { return static_ratio_; }

  void set_parallelism(std::shared_ptr<Parameter> p) { parallelism_ = std::move(p); }
  void set_buffer(std::shared_ptr<Parameter> p) { buffer_ = std::move(p); }
  const std::shared_ptr<Parameter>& parallelism() const { return parallelism_; }
  const std::shared_ptr<Parameter>& buffer() const { return buffer_; }

  void set_cycle_length(int64_t c) { cycle_length_ = c; }
  int64_t cycle_length() const { return cycle_length_; }

  void set_batch_size(int64_t b) { batch_size_ = b; }
  int64_t batch_size() const { return batch_size_; }

 private:
  friend class Model;

  std::string path_;
  std::string label_;
  NodeClass cls_;

  mutable std::mutex ewma_mu_;
  double ewma_ns_ = 0;
  bool has_sample_ = false;
  std::chrono::steady_clock::time_point last_sample_{};
  double cold_cost_ns_ = 0;

  std::atomic<int64_t> total_self_ns_{0};
  std::atomic<int64_t> produced_{0};
  std::atomic<int64_t> buffered_bytes_sum_{0};
  std::atomic<int64_t> buffered_count_{0};
  std::atomic<int64_t> peak_buffered_{0};

  double static_ratio_ = 1.0;
  int64_t cycle_length_ = 1;
  int64_t batch_size_ = 1;

  std::shared_ptr<Parameter> parallelism_;
  std::shared_ptr<Parameter> buffer_;

  // Structure maintained by Model.
  ModelNode* parent_ = nullptr;
  std::vector<std::shared_ptr<ModelNode>> children_;
  int live_refs_ = 0;
};

// Plain-data copy of the mirror used for analytic estimation; optimization
// mutates parameter values here without touching the live pipeline.
struct SnapshotNode {
  std::string path;
  std::string label;
  NodeClass cls = NodeClass::kSource;
  double self_ns = 0;
  double ratio = 1.0;              // relative to parent
  double bytes_per_element = 1024; // cold default 1 KiB
  double parallelism = 1.0;
  bool parallelism_tunable = false;
  double parallelism_min = 1.0;
  double parallelism_max = 1.0;
  double buffer = 1.0;
  bool buffer_tunable = false;
  double buffer_min = 1.0;
  double buffer_max = 1.0;
  int64_t cycle_length = 1;
  int64_t batch_size = 1;
  // Interleave only: marks the child that supplies sub-dataset defining
  // elements rather than flowing elements.
  bool is_interleave_input = false;
  std::vector<SnapshotNode> children;
};

struct LatencyEstimate {
  double root_latency_ns = 0;
  std::map<std::string, double> per_node_ns;
};

// Single depth-first traversal per Fig-6 semantics: the downward pass
// propagates consumer rates (scaled by production ratios; split across an
// interleave's cycle), the upward pass computes output latencies. Sync nodes
// are linear in self time and children; async nodes multiply producer latency
// by PEmpty.
LatencyEstimate EstimateOutputLatency(const SnapshotNode& root,
                                      double root_consumer_rate_per_sec);

// The live analytical model of one executing pipeline.
class Model {
 public:
  Model();

  // Attaches (or revives) the mirror node for `path`. The same path may be
  // attached multiple times concurrently (interleave sub-iterators); nodes
  // detach when their iterator is destroyed but keep their measurements for
  // later instances.
  std::shared_ptr<ModelNode> Attach(const std::string& path,
                                    const std::string& parent_path,
                                    const std::string& label, NodeClass cls);
  void Detach(const std::shared_ptr<ModelNode>& node);

  std::shared_ptr<ModelNode> Find(const std::string& path) const;

  void RecordRootGetNext(std::chrono::steady_clock::time_point t);
  // Reciprocal of the mean inter-arrival time of recent root get_next calls;
  // `fallback` until two calls have been observed.
  double RootConsumerRatePerSec(double fallback = 100.0) const;

  uint64_t structure_version() const {
    return structure_version_.load(std::memory_order_relaxed);
  }

  // Deep copy of the live tree (attached nodes only).
  std::optional<SnapshotNode> Snapshot() const;

  // All tunable parameters in the live tree, keyed by node path.
  std::vector<std::pair<std::string, std::shared_ptr<Parameter>>>
  TunableParameters() const;

  std::string DebugString() const;

 private:
  SnapshotNode SnapshotRec(const ModelNode& node) const;

  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<ModelNode>> nodes_;
  std::shared_ptr<ModelNode> root_;
  std::atomic<uint64_t> structure_version_{0};

  static constexpr size_t kRateWindow = 64;
  mutable std::mutex rate_mu_;
  std::vector<std::chrono::steady_clock::time_point> recent_calls_;
  size_t rate_pos_ = 0;
};

}  // namespace datapipe::autotune

#endif  // DATAPIPE_MODEL_HPP_
