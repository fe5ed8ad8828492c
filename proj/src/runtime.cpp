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
#include "datapipe/runtime.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <random>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include "datapipe/codec.hpp"
#include "datapipe/errors.hpp"
#include "datapipe/random.hpp"

namespace datapipe {

namespace {

constexpr int64_t kMaxTunableParallelism = 64;
constexpr int64_t kMaxTunableBuffer = 512;
constexpr double kDefaultUdfCostNs = 1e6;  // cold estimate: 1 ms

using Clock = std::chrono::steady_clock;

int64_t ElapsedNs(Clock::time_point start) {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() -
                                                              start)
      .count();
}

// Synthetic per-element cost for benchmark pipelines. Sleeping models
// IO-bound stages; spinning models CPU-bound stages and actually occupies a
// core. The sleep path parks the thread for most of the interval and spins
// out the scheduler's wake-up slack so measured costs stay accurate.
void SimulateWork(int64_t ns, bool busy) {
  if (ns <= 0) return;
  auto until = Clock::now() + std::chrono::nanoseconds(ns);
  if (!busy) {
    constexpr int64_t kWakeSlackNs = 1'000'000;
    if (ns > kWakeSlackNs) {
      std::this_thread::sleep_for(std::chrono::nanoseconds(ns - kWakeSlackNs));
    }
  }
  while (Clock::now() < until) {
  }
}

// Charges wall time to a model node on destruction.
class ScopedSelfTimer {
 public:
  explicit ScopedSelfTimer(autotune::ModelNode* node)
      : node_(node), start_(Clock::now()) {}
  ~ScopedSelfTimer() {
    if (node_) node_->RecordSelfTime(ElapsedNs(start_));
  }
  ScopedSelfTimer(const ScopedSelfTimer&) = delete;

 private:
  autotune::ModelNode* node_;
  Clock::time_point start_;
};

}  // namespace

class NodeIterator;

// Shared state of one iterator tree.
struct IteratorContext {
  const UdfRegistry* registry = nullptr;
  IteratorOptions options;
  uint64_t base_seed = 0;
  std::shared_ptr<autotune::Model> model;
  std::atomic<bool> cancelled{false};

  // In-memory cache stores, keyed by node path so that re-created iterators
  // (e.g. under repeat) replay the same materialization.
  struct CacheStore {
    enum class State { kEmpty, kFilling, kComplete };
    std::mutex mu;
    State state = State::kEmpty;
    std::vector<Element> elements;
  };
  std::mutex cache_mu;
  std::unordered_map<std::string, std::shared_ptr<CacheStore>> caches;

  std::shared_ptr<CacheStore> CacheFor(const std::string& path) {
    std::lock_guard lock(cache_mu);
    auto& store = caches[path];
    if (!store) store = std::make_shared<CacheStore>();
    return store;
  }

  // Live-node registry so teardown can wake every blocked worker before
  // joining threads.
  std::mutex live_mu;
  std::unordered_set<NodeIterator*> live_nodes;

  void Register(NodeIterator* node) {
    std::lock_guard lock(live_mu);
    live_nodes.insert(node);
  }
  void Unregister(NodeIterator* node) {
    std::lock_guard lock(live_mu);
    live_nodes.erase(node);
  }
  void CancelAll();
};

// Base of all node iterators: EOF stickiness, delivery counting, and spec
// conformance checking live here; subclasses implement Next().
class NodeIterator {
 public:
  NodeIterator(IteratorContext* ctx, const DatasetNode* node, std::string path,
               uint64_t salt, autotune::NodeClass cls,
               const std::string& parent_path)
      : ctx_(ctx), node_(node), path_(std::move(path)), salt_(salt) {
    model_node_ = ctx_->model->Attach(path_, parent_path,
                                      NodeKindName(node->kind()), cls);
    ctx_->Register(this);
  }

  virtual ~NodeIterator() {
    ctx_->Unregister(this);
    ctx_->model->Detach(model_node_);
  }

  NodeIterator(const NodeIterator&) = delete;

  std::optional<Element> GetNext() {
    if (ctx_->cancelled.load(std::memory_order_relaxed)) return std::nullopt;
    if (eof_.load(std::memory_order_acquire)) return std::nullopt;
    std::optional<Element> result = Next();
    if (!result) {
      if (!ctx_->cancelled.load(std::memory_order_relaxed)) {
        eof_.store(true, std::memory_order_release);
      }
      return std::nullopt;
    }
    if (!Conforms(*result, node_->output_spec())) {
      throw TypeMismatchError(
          0, std::string(NodeKindName(node_->kind())) +
                 " produced element " + result->ToString() +
                 " not conforming to " + node_->output_spec().ToString());
    }
    model_node_->RecordProduced();
    return result;
  }

  void model_ratio_init(double static_ratio);

  // Wakes any thread blocked inside this node; called with the tree-wide
  // cancel flag already set.
  virtual void OnCancel() {}

  const std::string& path() const { return path_; }
  const DatasetNode* node() const { return node_; }

 protected:
  virtual std::optional<Element> Next() = 0;

  bool Cancelled() const {
    return ctx_->cancelled.load(std::memory_order_relaxed);
  }

  IteratorContext* ctx_;
  const DatasetNode* node_;
  std::string path_;
  uint64_t salt_;
  std::shared_ptr<autotune::ModelNode> model_node_;
  std::atomic<bool> eof_{false};
};

void IteratorContext::CancelAll() {
  cancelled.store(true, std::memory_order_relaxed);
  std::lock_guard lock(live_mu);
  for (NodeIterator* node : live_nodes) node->OnCancel();
}

namespace {

std::unique_ptr<NodeIterator> MakeNodeIterator(IteratorContext* ctx,
                                               const DatasetNode* node,
                                               const std::string& path,
                                               uint64_t salt,
                                               const std::string& parent_path,
                                               double static_ratio);

std::string ChildPath(const std::string& parent, const DatasetNode& child,
                      size_t index) {
  return parent + "/" + NodeKindName(child.kind()) + "@" +
         std::to_string(index);
}

// Resizable pool of worker threads indexed 0..target-1. Workers observe
// retirement through ShouldExit and mark their slot free on return.
class WorkerPool {
 public:
  explicit WorkerPool(std::function<void(size_t)> body)
      : body_(std::move(body)) {}

  ~WorkerPool() { JoinAll(); }

  void Resize(size_t target) {
    std::lock_guard lock(mu_);
    target_ = target;
    for (size_t i = 0; i < target; ++i) {
      if (i < slots_.size()) {
        if (!slots_[i]->active.load()) {
          if (slots_[i]->thread.joinable()) slots_[i]->thread.join();
          Start(*slots_[i], i);
        }
      } else {
        slots_.push_back(std::make_unique<Slot>());
        Start(*slots_.back(), i);
      }
    }
  }

  bool ShouldExit(size_t index) const {
    return index >= target_.load(std::memory_order_relaxed);
  }

  void JoinAll() {
    std::lock_guard lock(mu_);
    target_.store(0);
    for (auto& slot : slots_) {
      if (slot->thread.joinable()) slot->thread.join();
      slot->active.store(false);
    }
  }

  size_t target() const { return target_.load(std::memory_order_relaxed); }

 private:
  struct Slot {
    std::thread thread;
    std::atomic<bool> active{false};
  };

  void Start(Slot& slot, size_t index) {
    slot.active.store(true);
    slot.thread = std::thread([this, &slot, index] {
      body_(index);
      slot.active.store(false);
    });
  }

  std::function<void(size_t)> body_;
  std::mutex mu_;
  std::vector<std::unique_ptr<Slot>> slots_;
  std::atomic<size_t> target_{0};
};

// One produced result traveling through a completion buffer.
struct SlotResult {
  std::optional<Element> elem;
  std::exception_ptr error;
  bool eof = false;
  bool skip = false;  // filtered out by a fused predicate
};

// Holds in-flight results tagged with input sequence numbers. Deterministic
// mode releases results strictly in sequence order; nondeterministic mode
// releases any completed result and synthesizes EOF once every claim has
// drained. Occupancy never exceeds the claim limit enforced by the owning
// node; the peak is instrumented for tests.
class CompletionBuffer {
 public:
  explicit CompletionBuffer(bool deterministic,
                            autotune::ModelNode* model = nullptr)
      : deterministic_(deterministic), model_(model) {}

  void AddClaim() {
    std::lock_guard lock(mu_);
    outstanding_++;
  }

  // Releases a claim that will never produce a result (input raced to EOF).
  void DropClaim() {
    std::lock_guard lock(mu_);
    outstanding_--;
    cv_.notify_all();
  }

  void Put(uint64_t seq, SlotResult result) {
    std::lock_guard lock(mu_);
    slots_.emplace(seq, std::move(result));
    peak_ = std::max(peak_, slots_.size());
    if (model_) model_->RecordBufferPeak(static_cast<int64_t>(slots_.size()));
    cv_.notify_all();
  }

  void MarkInputDone() {
    std::lock_guard lock(mu_);
    input_done_ = true;
    cv_.notify_all();
  }

  // Blocks until a result is available per mode. Skip markers (fused-filter
  // drops) are returned to the caller, which owns waking claim waiters after
  // every pop. Returns nullopt when cancelled; an eof result when the
  // sequence ends.
  std::optional<SlotResult> Pop(uint64_t& next_out_seq,
                                const std::atomic<bool>& cancelled) {
    std::unique_lock lock(mu_);
    for (;;) {
      if (cancelled.load(std::memory_order_relaxed)) return std::nullopt;
      if (deterministic_) {
        auto it = slots_.find(next_out_seq);
        if (it != slots_.end()) {
          SlotResult r = std::move(it->second);
          slots_.erase(it);
          next_out_seq++;
          outstanding_--;
          cv_.notify_all();
          return r;
        }
      } else {
        if (!slots_.empty()) {
          auto it = slots_.begin();
          SlotResult r = std::move(it->second);
          slots_.erase(it);
          outstanding_--;
          cv_.notify_all();
          if (r.eof) r.skip = true;  // nondet EOF is synthesized below
          return r;
        }
        if (input_done_ && outstanding_ == 0) {
          SlotResult r;
          r.eof = true;
          return r;
        }
      }
      cv_.wait_for(lock, std::chrono::milliseconds(50));
    }
  }

  int64_t outstanding() const {
    std::lock_guard lock(mu_);
    return outstanding_;
  }

  void Wake() {
    std::lock_guard lock(mu_);
    cv_.notify_all();
  }

  size_t peak() const {
    std::lock_guard lock(mu_);
    return peak_;
  }

 private:
  bool deterministic_;
  autotune::ModelNode* model_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::map<uint64_t, SlotResult> slots_;
  int64_t outstanding_ = 0;
  size_t peak_ = 0;
  bool input_done_ = false;
};

// ---------------------------------------------------------------------------
// Sources
// ---------------------------------------------------------------------------

class FromMemoryIterator : public NodeIterator {
 public:
  FromMemoryIterator(IteratorContext* ctx, const DatasetNode* node,
                     const std::string& path, uint64_t salt,
                     const std::string& parent)
      : NodeIterator(ctx, node, path, salt, autotune::NodeClass::kSource,
                     parent),
        elements_(&node->GetElements("elements")),
        work_ns_(node->GetIntOr("work_ns", 0)),
        work_busy_(node->GetBoolOr("work_busy", false)) {
    model_node_->SetColdCostNs(static_cast<double>(work_ns_));
  }

 protected:
  std::optional<Element> Next() override {
    std::lock_guard lock(mu_);
    if (index_ >= elements_->size()) return std::nullopt;
    ScopedSelfTimer timer(model_node_.get());
    SimulateWork(work_ns_, work_busy_);
    return (*elements_)[index_++];
  }

 private:
  std::mutex mu_;
  const std::vector<Element>* elements_;
  size_t index_ = 0;
  int64_t work_ns_;
  bool work_busy_;
};

class FromFileIterator : public NodeIterator {
 public:
  FromFileIterator(IteratorContext* ctx, const DatasetNode* node,
                   const std::string& path, uint64_t salt,
                   const std::string& parent)
      : NodeIterator(ctx, node, path, salt, autotune::NodeClass::kSource,
                     parent),
        paths_(&node->GetStrings("paths")) {
    for (const auto& p : *paths_) {
      if (!std::filesystem::exists(p)) {
        throw PipelineError(ErrorCode::kMissingFile, "no such file: " + p);
      }
    }
  }

 protected:
  std::optional<Element> Next() override {
    std::lock_guard lock(mu_);
    ScopedSelfTimer timer(model_node_.get());
    for (;;) {
      if (!stream_.is_open()) {
        if (file_index_ >= paths_->size()) return std::nullopt;
        stream_.open((*paths_)[file_index_], std::ios::binary);
        if (!stream_) {
          throw PipelineError(ErrorCode::kMissingFile,
                              "cannot open: " + (*paths_)[file_index_]);
        }
      }
      unsigned char len_bytes[4];
      stream_.read(reinterpret_cast<char*>(len_bytes), 4);
      if (stream_.gcount() == 0) {
        stream_.close();
        file_index_++;
        continue;
      }
      if (stream_.gcount() != 4) {
        throw MalformedInputError(
            static_cast<size_t>(stream_.tellg()),
            "truncated record length in " + (*paths_)[file_index_]);
      }
      uint32_t len = 0;
      for (int i = 0; i < 4; ++i) len |= uint32_t(len_bytes[i]) << (8 * i);
      std::string payload(len, '\0');
      stream_.read(payload.data(), len);
      if (static_cast<uint32_t>(stream_.gcount()) != len) {
        throw MalformedInputError(static_cast<size_t>(stream_.tellg()),
                                  "truncated record payload in " +
                                      (*paths_)[file_index_]);
      }
      return Element::Scalar(Value::Bytes(std::move(payload)));
    }
  }

 private:
  std::mutex mu_;
  const std::vector<std::string>* paths_;
  size_t file_index_ = 0;
  std::ifstream stream_;
};

// ---------------------------------------------------------------------------
// Sequential element transforms
// ---------------------------------------------------------------------------

class MapIterator : public NodeIterator {
 public:
  MapIterator(IteratorContext* ctx, const DatasetNode* node,
              const std::string& path, uint64_t salt,
              const std::string& parent)
      : NodeIterator(ctx, node, path, salt, autotune::NodeClass::kSync,
                     parent) {
    const auto& entry = ctx->registry->Get(node->GetString("udf"));
    fn_ = entry.map_fn;
    model_node_->SetColdCostNs(static_cast<double>(
        entry.cost_hint_ns.value_or(static_cast<int64_t>(kDefaultUdfCostNs))));
    if (node->HasAttr("fused_filter_udf")) {
      fused_pred_ = ctx->registry->Get(node->GetString("fused_filter_udf"))
                        .predicate;
    }
    child_ = MakeNodeIterator(ctx, node->inputs()[0].get(),
                              ChildPath(path, *node->inputs()[0], 0), salt,
                              path, 1.0);
  }

 protected:
  std::optional<Element> Next() override {
    std::lock_guard lock(mu_);
    for (;;) {
      auto in = child_->GetNext();
      if (!in) return std::nullopt;
      uint64_t index = consumed_++;
      ScopedSelfTimer timer(model_node_.get());
      Element out = [&] {
        try {
          return fn_(*in);
        } catch (const std::exception& e) {
          throw UdfError(index, e.what());
        }
      }();
      if (fused_pred_) {
        bool keep = [&] {
          try {
            return fused_pred_(out);
          } catch (const std::exception& e) {
            throw UdfError(index, e.what());
          }
        }();
        if (!keep) continue;
      }
      return out;
    }
  }

 private:
  std::mutex mu_;
  MapFn fn_;
  PredicateFn fused_pred_;
  std::unique_ptr<NodeIterator> child_;
  uint64_t consumed_ = 0;
};

class FilterIterator : public NodeIterator {
 public:
  FilterIterator(IteratorContext* ctx, const DatasetNode* node,
                 const std::string& path, uint64_t salt,
                 const std::string& parent)
      : NodeIterator(ctx, node, path, salt, autotune::NodeClass::kSync,
                     parent) {
    const auto& entry = ctx->registry->Get(node->GetString("udf"));
    pred_ = entry.predicate;
    model_node_->SetColdCostNs(static_cast<double>(
        entry.cost_hint_ns.value_or(0)));
    child_ = MakeNodeIterator(ctx, node->inputs()[0].get(),
                              ChildPath(path, *node->inputs()[0], 0), salt,
                              path, 1.0);
  }

 protected:
  std::optional<Element> Next() override {
    std::lock_guard lock(mu_);
    for (;;) {
      auto in = child_->GetNext();
      if (!in) return std::nullopt;
      uint64_t index = consumed_++;
      ScopedSelfTimer timer(model_node_.get());
      bool keep = [&] {
        try {
          return pred_(*in);
        } catch (const std::exception& e) {
          throw UdfError(index, e.what());
        }
      }();
      if (keep) return in;
    }
  }

 private:
  std::mutex mu_;
  PredicateFn pred_;
  std::unique_ptr<NodeIterator> child_;
  uint64_t consumed_ = 0;
};

class BatchIterator : public NodeIterator {
 public:
  BatchIterator(IteratorContext* ctx, const DatasetNode* node,
                const std::string& path, uint64_t salt,
                const std::string& parent)
      : NodeIterator(ctx, node, path, salt, autotune::NodeClass::kSync,
                     parent),
        batch_size_(node->GetInt("batch_size")),
        drop_remainder_(node->GetBoolOr("drop_remainder", false)),
        work_ns_(node->GetIntOr("work_ns", 0)),
        work_busy_(node->GetBoolOr("work_busy", false)) {
    model_node_->set_batch_size(batch_size_);
    model_node_->SetColdCostNs(static_cast<double>(work_ns_));
    child_ = MakeNodeIterator(ctx, node->inputs()[0].get(),
                              ChildPath(path, *node->inputs()[0], 0), salt,
                              path, static_cast<double>(batch_size_));
  }

 protected:
  std::optional<Element> Next() override {
    std::lock_guard lock(mu_);
    std::vector<Element> rows;
    rows.reserve(batch_size_);
    while (static_cast<int64_t>(rows.size()) < batch_size_) {
      auto in = child_->GetNext();
      if (!in) break;
      rows.push_back(std::move(*in));
    }
    if (rows.empty()) return std::nullopt;
    if (drop_remainder_ && static_cast<int64_t>(rows.size()) < batch_size_) {
      return std::nullopt;
    }
    ScopedSelfTimer timer(model_node_.get());
    SimulateWork(work_ns_, work_busy_);
    return AssembleBatch(rows);
  }

 public:
  static Element AssembleBatch(const std::vector<Element>& rows) {
    size_t arity = rows[0].arity();
    std::vector<Value> components;
    components.reserve(arity);
    for (size_t c = 0; c < arity; ++c) {
      std::vector<Value> column;
      column.reserve(rows.size());
      for (const auto& row : rows) column.push_back(row.component(c));
      components.push_back(Value::List(std::move(column)));
    }
    return Element(std::move(components));
  }

 private:
  std::mutex mu_;
  int64_t batch_size_;
  bool drop_remainder_;
  int64_t work_ns_;
  bool work_busy_;
  std::unique_ptr<NodeIterator> child_;
};

class UnbatchIterator : public NodeIterator {
 public:
  UnbatchIterator(IteratorContext* ctx, const DatasetNode* node,
                  const std::string& path, uint64_t salt,
                  const std::string& parent)
      : NodeIterator(ctx, node, path, salt, autotune::NodeClass::kSync,
                     parent) {
    child_ = MakeNodeIterator(ctx, node->inputs()[0].get(),
                              ChildPath(path, *node->inputs()[0], 0), salt,
                              path, 0.5);
  }

 protected:
  std::optional<Element> Next() override {
    std::lock_guard lock(mu_);
    for (;;) {
      if (!pending_.empty()) {
        Element out = std::move(pending_.front());
        pending_.pop_front();
        return out;
      }
      auto in = child_->GetNext();
      if (!in) return std::nullopt;
      ScopedSelfTimer timer(model_node_.get());
      size_t rows = in->component(0).items().size();
      for (size_t c = 0; c < in->arity(); ++c) {
        if (in->component(c).items().size() != rows) {
          throw PipelineError(ErrorCode::kValidationFailed,
                              "unbatch: component list lengths differ");
        }
      }
      for (size_t r = 0; r < rows; ++r) {
        std::vector<Value> components;
        components.reserve(in->arity());
        for (size_t c = 0; c < in->arity(); ++c) {
          components.push_back(in->component(c).items()[r]);
        }
        pending_.push_back(Element(std::move(components)));
      }
      // Zero-row batches are legal; pull again.
    }
  }

 private:
  std::mutex mu_;
  std::unique_ptr<NodeIterator> child_;
  std::deque<Element> pending_;
};

class ShuffleIterator : public NodeIterator {
 public:
  ShuffleIterator(IteratorContext* ctx, const DatasetNode* node,
                  const std::string& path, uint64_t salt,
                  const std::string& parent, bool fused_epochs)
      : NodeIterator(ctx, node, path, salt, autotune::NodeClass::kSync,
                     parent),
        buffer_size_(node->GetInt("buffer_size")),
        fused_epochs_(fused_epochs),
        rng_(0) {
    ReseedAndRebuildChild();
  }

  // With repeat fusion the iterator survives across epochs: the input is
  // re-created and the permutation derives a fresh seed from the epoch
  // counter, matching what re-instantiation would produce.
  void AdvanceEpoch() {
    std::lock_guard lock(mu_);
    epoch_++;
    primed_ = false;
    buffer_.clear();
    ReseedAndRebuildChild();
    eof_.store(false, std::memory_order_release);
  }

  static uint64_t DeriveSeed(uint64_t epoch_salt,
                             std::optional<uint64_t> attr_seed) {
    // Unseeded shuffles still derive deterministically from the pipeline
    // base seed.
    return MixSeeds(epoch_salt, attr_seed.value_or(0x9d2c5680u));
  }

 protected:
  std::optional<Element> Next() override {
    std::lock_guard lock(mu_);
    if (!primed_) {
      while (static_cast<int64_t>(buffer_.size()) < buffer_size_) {
        auto in = child_->GetNext();
        if (!in) break;
        buffer_.push_back(std::move(*in));
      }
      primed_ = true;
    }
    if (buffer_.empty()) return std::nullopt;
    size_t idx;
    Element out = [&] {
      ScopedSelfTimer timer(model_node_.get());
      idx = rng_.Bounded(static_cast<uint32_t>(buffer_.size()));
      return std::move(buffer_[idx]);
    }();

    auto refill = child_->GetNext();
    if (refill) {
      buffer_[idx] = std::move(*refill);
    } else {
      buffer_[idx] = std::move(buffer_.back());
      buffer_.pop_back();
    }
    return out;
  }

 private:
  void ReseedAndRebuildChild() {
    uint64_t epoch_salt = fused_epochs_ ? MixSeeds(salt_, epoch_) : salt_;
    std::optional<uint64_t> attr_seed;
    if (node_->HasAttr("seed")) attr_seed = node_->GetUint("seed");
    rng_ = Pcg32(DeriveSeed(epoch_salt, attr_seed));
    child_ = MakeNodeIterator(ctx_, node_->inputs()[0].get(),
                              ChildPath(path_, *node_->inputs()[0], 0),
                              epoch_salt, path_, 1.0);
  }

  std::mutex mu_;
  int64_t buffer_size_;
  bool fused_epochs_;
  uint64_t epoch_ = 0;
  bool primed_ = false;
  Pcg32 rng_;
  std::vector<Element> buffer_;
  std::unique_ptr<NodeIterator> child_;
};

class ShardIterator : public NodeIterator {
 public:
  ShardIterator(IteratorContext* ctx, const DatasetNode* node,
                const std::string& path, uint64_t salt,
                const std::string& parent)
      : NodeIterator(ctx, node, path, salt, autotune::NodeClass::kSync,
                     parent),
        num_shards_(node->GetInt("num_shards")),
        index_(node->GetInt("index")) {
    child_ = MakeNodeIterator(ctx, node->inputs()[0].get(),
                              ChildPath(path, *node->inputs()[0], 0), salt,
                              path, static_cast<double>(num_shards_));
  }

 protected:
  std::optional<Element> Next() override {
    std::lock_guard lock(mu_);
    for (;;) {
      auto in = child_->GetNext();
      if (!in) return std::nullopt;
      if (position_++ % num_shards_ == index_) return in;
    }
  }

 private:
  std::mutex mu_;
  int64_t num_shards_;
  int64_t index_;
  int64_t position_ = 0;
  std::unique_ptr<NodeIterator> child_;
};

class CacheIterator : public NodeIterator {
 public:
  CacheIterator(IteratorContext* ctx, const DatasetNode* node,
                const std::string& path, uint64_t salt,
                const std::string& parent)
      : NodeIterator(ctx, node, path, salt, autotune::NodeClass::kSync,
                     parent),
        store_(ctx->CacheFor(path)) {
    std::lock_guard lock(store_->mu);
    using State = IteratorContext::CacheStore::State;
    switch (store_->state) {
      case State::kComplete:
        replaying_ = true;
        break;
      case State::kEmpty:
        store_->state = State::kFilling;
        store_->elements.clear();
        filling_ = true;
        child_ = MakeNodeIterator(ctx, node->inputs()[0].get(),
                                  ChildPath(path, *node->inputs()[0], 0), salt,
                                  path, 1.0);
        break;
      case State::kFilling:
        throw PipelineError(ErrorCode::kConcurrentCacheFill,
                            "cache at " + path +
                                " is being filled by another iterator");
    }
  }

  ~CacheIterator() override {
    // An abandoned partial pass recomputes from scratch next time.
    std::lock_guard lock(store_->mu);
    using State = IteratorContext::CacheStore::State;
    if (filling_ && store_->state == State::kFilling) {
      store_->state = State::kEmpty;
      store_->elements.clear();
    }
  }

 protected:
  std::optional<Element> Next() override {
    std::lock_guard lock(mu_);
    using State = IteratorContext::CacheStore::State;
    if (replaying_) {
      std::lock_guard slock(store_->mu);
      if (replay_pos_ >= store_->elements.size()) return std::nullopt;
      return store_->elements[replay_pos_++];
    }
    auto in = child_->GetNext();
    if (!in) {
      std::lock_guard slock(store_->mu);
      if (store_->state == State::kFilling) store_->state = State::kComplete;
      filling_ = false;
      return std::nullopt;
    }
    {
      ScopedSelfTimer timer(model_node_.get());
      std::lock_guard slock(store_->mu);
      store_->elements.push_back(*in);
    }
    return in;
  }

 private:
  std::mutex mu_;
  std::shared_ptr<IteratorContext::CacheStore> store_;
  bool replaying_ = false;
  bool filling_ = false;
  size_t replay_pos_ = 0;
  std::unique_ptr<NodeIterator> child_;
};

class ZipIterator : public NodeIterator {
 public:
  ZipIterator(IteratorContext* ctx, const DatasetNode* node,
              const std::string& path, uint64_t salt,
              const std::string& parent)
      : NodeIterator(ctx, node, path, salt, autotune::NodeClass::kSync,
                     parent) {
    for (size_t i = 0; i < node->inputs().size(); ++i) {
      children_.push_back(MakeNodeIterator(
          ctx, node->inputs()[i].get(), ChildPath(path, *node->inputs()[i], i),
          salt, path, 1.0));
    }
  }

 protected:
  std::optional<Element> Next() override {
    std::lock_guard lock(mu_);
    std::vector<Value> components;
    for (auto& child : children_) {
      auto in = child->GetNext();
      if (!in) return std::nullopt;  // stop at the shortest input
      for (const auto& v : in->components()) components.push_back(v);
    }
    ScopedSelfTimer timer(model_node_.get());
    return Element(std::move(components));
  }

 private:
  std::mutex mu_;
  std::vector<std::unique_ptr<NodeIterator>> children_;
};

class ConcatenateIterator : public NodeIterator {
 public:
  ConcatenateIterator(IteratorContext* ctx, const DatasetNode* node,
                      const std::string& path, uint64_t salt,
                      const std::string& parent)
      : NodeIterator(ctx, node, path, salt, autotune::NodeClass::kSync,
                     parent) {
    for (size_t i = 0; i < node->inputs().size(); ++i) {
      children_.push_back(MakeNodeIterator(
          ctx, node->inputs()[i].get(), ChildPath(path, *node->inputs()[i], i),
          salt, path, 1.0));
    }
  }

 protected:
  std::optional<Element> Next() override {
    std::lock_guard lock(mu_);
    while (active_ < children_.size()) {
      auto in = children_[active_]->GetNext();
      if (in) return in;
      active_++;
    }
    return std::nullopt;
  }

 private:
  std::mutex mu_;
  std::vector<std::unique_ptr<NodeIterator>> children_;
  size_t active_ = 0;
};

class ReduceIterator : public NodeIterator {
 public:
  ReduceIterator(IteratorContext* ctx, const DatasetNode* node,
                 const std::string& path, uint64_t salt,
                 const std::string& parent)
      : NodeIterator(ctx, node, path, salt, autotune::NodeClass::kSync,
                     parent) {
    const auto& entry = ctx->registry->Get(node->GetString("udf"));
    fn_ = entry.binary_fn;
    model_node_->SetColdCostNs(static_cast<double>(
        entry.cost_hint_ns.value_or(static_cast<int64_t>(kDefaultUdfCostNs))));
    child_ = MakeNodeIterator(ctx, node->inputs()[0].get(),
                              ChildPath(path, *node->inputs()[0], 0), salt,
                              path, 1.0);
  }

 protected:
  std::optional<Element> Next() override {
    std::lock_guard lock(mu_);
    if (done_) return std::nullopt;
    done_ = true;
    auto acc = child_->GetNext();
    if (!acc) return std::nullopt;  // empty input reduces to an empty dataset
    uint64_t index = 1;
    for (;;) {
      auto in = child_->GetNext();
      if (!in) break;
      ScopedSelfTimer timer(model_node_.get());
      try {
        acc = fn_(*acc, *in);
      } catch (const std::exception& e) {
        throw UdfError(index, e.what());
      }
      index++;
    }
    return acc;
  }

 private:
  std::mutex mu_;
  BinaryFn fn_;
  std::unique_ptr<NodeIterator> child_;
  bool done_ = false;
};

// ---------------------------------------------------------------------------
// Dataset-valued transforms
// ---------------------------------------------------------------------------

class FlatMapIterator : public NodeIterator {
 public:
  FlatMapIterator(IteratorContext* ctx, const DatasetNode* node,
                  const std::string& path, uint64_t salt,
                  const std::string& parent)
      : NodeIterator(ctx, node, path, salt, autotune::NodeClass::kSync,
                     parent) {
    const auto& entry = ctx->registry->Get(node->GetString("udf"));
    fn_ = entry.dataset_fn;
    declared_spec_ = *entry.dataset_spec;
    input_ = MakeNodeIterator(ctx, node->inputs()[0].get(),
                              ChildPath(path, *node->inputs()[0], 0), salt,
                              path, 1.0 / 3.0);
  }

 protected:
  std::optional<Element> Next() override {
    std::lock_guard lock(mu_);
    for (;;) {
      if (current_) {
        auto out = current_->GetNext();
        if (out) return out;
        current_.reset();
      }
      auto in = input_->GetNext();
      if (!in) return std::nullopt;
      uint64_t ordinal = ordinal_++;
      DatasetGraph sub = [&] {
        try {
          return fn_(*in);
        } catch (const std::exception& e) {
          throw UdfError(ordinal, e.what());
        }
      }();
      if (sub.element_spec() != declared_spec_) {
        throw PipelineError(ErrorCode::kValidationFailed,
                            "flat_map UDF produced dataset with spec " +
                                sub.element_spec().ToString() +
                                ", declared " + declared_spec_.ToString());
      }
      current_ = MakeNodeIterator(ctx_, sub.root().get(), path_ + "/sub",
                                  MixSeeds(salt_, ordinal), path_, 1.0);
      current_graph_ = std::move(sub);  // keep nodes alive
    }
  }

 private:
  std::mutex mu_;
  DatasetFn fn_;
  ElementSpec declared_spec_;
  std::unique_ptr<NodeIterator> input_;
  std::unique_ptr<NodeIterator> current_;
  DatasetGraph current_graph_;
  uint64_t ordinal_ = 0;
};

// Deterministic round-robin over a cycle of open sub-datasets (sequential
// fetch path, num_parallel_calls == 1).
class InterleaveIterator : public NodeIterator {
 public:
  InterleaveIterator(IteratorContext* ctx, const DatasetNode* node,
                     const std::string& path, uint64_t salt,
                     const std::string& parent)
      : NodeIterator(ctx, node, path, salt, autotune::NodeClass::kSync,
                     parent),
        slots_(static_cast<size_t>(node->GetInt("cycle_length"))) {
    const auto& entry = ctx->registry->Get(node->GetString("udf"));
    fn_ = entry.dataset_fn;
    declared_spec_ = *entry.dataset_spec;
    input_ = MakeNodeIterator(ctx, node->inputs()[0].get(),
                              ChildPath(path, *node->inputs()[0], 0), salt,
                              path, 1.0 / 3.0);
  }

 protected:
  std::optional<Element> Next() override {
    std::lock_guard lock(mu_);
    size_t dead_streak = 0;
    while (dead_streak < slots_.size()) {
      Slot& slot = slots_[cursor_];
      if (!slot.iter && !slot.dead) {
        if (!OpenNext(slot)) slot.dead = true;
      }
      if (slot.dead) {
        cursor_ = (cursor_ + 1) % slots_.size();
        dead_streak++;
        continue;
      }
      auto out = slot.iter->GetNext();
      if (out) {
        cursor_ = (cursor_ + 1) % slots_.size();
        return out;
      }
      slot.iter.reset();
      slot.graph = DatasetGraph();
      // Exhausted: the same cycle position opens the next input's dataset.
    }
    return std::nullopt;
  }

 private:
  struct Slot {
    std::unique_ptr<NodeIterator> iter;
    DatasetGraph graph;
    bool dead = false;
  };

  bool OpenNext(Slot& slot) {
    if (inputs_done_) return false;
    auto in = input_->GetNext();
    if (!in) {
      inputs_done_ = true;
      return false;
    }
    uint64_t ordinal = ordinal_++;
    DatasetGraph sub = [&] {
      try {
        return fn_(*in);
      } catch (const std::exception& e) {
        throw UdfError(ordinal, e.what());
      }
    }();
    if (sub.element_spec() != declared_spec_) {
      throw PipelineError(ErrorCode::kValidationFailed,
                          "interleave UDF produced dataset with spec " +
                              sub.element_spec().ToString() + ", declared " +
                              declared_spec_.ToString());
    }
    slot.iter = MakeNodeIterator(ctx_, sub.root().get(), path_ + "/sub",
                                 MixSeeds(salt_, ordinal), path_, 1.0);
    slot.graph = std::move(sub);
    return true;
  }

  std::mutex mu_;
  DatasetFn fn_;
  ElementSpec declared_spec_;
  std::unique_ptr<NodeIterator> input_;
  std::vector<Slot> slots_;
  size_t cursor_ = 0;
  bool inputs_done_ = false;
  uint64_t ordinal_ = 0;
};

class RepeatIterator : public NodeIterator {
 public:
  RepeatIterator(IteratorContext* ctx, const DatasetNode* node,
                 const std::string& path, uint64_t salt,
                 const std::string& parent)
      : NodeIterator(ctx, node, path, salt, autotune::NodeClass::kSync,
                     parent),
        count_(node->GetInt("count")) {
    const DatasetNode& child = *node->inputs()[0];
    fused_shuffle_ = child.kind() == NodeKind::kShuffle &&
                     child.GetBoolOr("fused_with_repeat", false);
    MakeChild();
  }

 protected:
  std::optional<Element> Next() override {
    std::lock_guard lock(mu_);
    for (;;) {
      auto out = child_->GetNext();
      if (out) {
        produced_this_epoch_ = true;
        return out;
      }
      epoch_++;
      if (count_ != kInfiniteRepeat && epoch_ >= count_) return std::nullopt;
      // An empty epoch would repeat forever; end the stream instead.
      if (!produced_this_epoch_) return std::nullopt;
      produced_this_epoch_ = false;
      if (fused_shuffle_) {
        static_cast<ShuffleIterator*>(child_.get())->AdvanceEpoch();
      } else {
        MakeChild();
      }
    }
  }

 private:
  void MakeChild() {
    const DatasetNode* child_node = node_->inputs()[0].get();
    if (fused_shuffle_) {
      // The fused shuffle derives per-epoch salts itself from the raw salt.
      child_ = std::make_unique<ShuffleIterator>(
          ctx_, child_node, ChildPath(path_, *child_node, 0), salt_, path_,
          /*fused_epochs=*/true);
    } else {
      child_ = MakeNodeIterator(ctx_, child_node,
                                ChildPath(path_, *child_node, 0),
                                MixSeeds(salt_, epoch_), path_, 1.0);
    }
  }

  std::mutex mu_;
  int64_t count_;
  uint64_t epoch_ = 0;
  bool produced_this_epoch_ = false;
  bool fused_shuffle_ = false;
  std::unique_ptr<NodeIterator> child_;
};

// ---------------------------------------------------------------------------
// Asynchronous transforms
// ---------------------------------------------------------------------------

class PrefetchIterator : public NodeIterator {
 public:
  PrefetchIterator(IteratorContext* ctx, const DatasetNode* node,
                   const std::string& path, uint64_t salt,
                   const std::string& parent)
      : NodeIterator(ctx, node, path, salt, autotune::NodeClass::kAsyncQueue,
                     parent),
        buffer_(/*deterministic=*/true, model_node_.get()) {
    int64_t attr = node->GetInt("buffer_size");
    bool tunable = attr == kAutotune;
    buffer_param_ = std::make_shared<autotune::Parameter>(
        "buffer_size", tunable ? 1 : attr, 1.0,
        tunable ? kMaxTunableBuffer : attr, tunable);
    model_node_->set_buffer(buffer_param_);
    model_node_->SetColdCostNs(0);
    child_ = MakeNodeIterator(ctx, node->inputs()[0].get(),
                              ChildPath(path, *node->inputs()[0], 0), salt,
                              path, 1.0);
    producer_ = std::thread([this] { ProducerLoop(); });
  }

  ~PrefetchIterator() override {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
      slots_cv_.notify_all();
    }
    buffer_.Wake();
    if (producer_.joinable()) producer_.join();
  }

  void OnCancel() override {
    std::lock_guard lock(mu_);
    slots_cv_.notify_all();
    buffer_.Wake();
  }

  size_t buffer_peak() const { return buffer_.peak(); }

 protected:
  std::optional<Element> Next() override {
    std::lock_guard consumer_lock(consumer_mu_);
    if (consumer_done_) return std::nullopt;
    auto r = buffer_.Pop(next_out_, ctx_->cancelled);
    {
      std::lock_guard lock(mu_);
      slots_cv_.notify_all();  // a slot freed up
    }
    if (!r) return std::nullopt;  // cancelled
    if (r->error) std::rethrow_exception(r->error);
    if (r->eof) {
      consumer_done_ = true;
      return std::nullopt;
    }
    return std::move(r->elem);
  }

 private:
  void ProducerLoop() {
    uint64_t seq = 0;
    for (;;) {
      {
        std::unique_lock lock(mu_);
        slots_cv_.wait(lock, [&] {
          return stop_ || Cancelled() ||
                 buffer_.outstanding() < buffer_param_->published();
        });
        if (stop_ || Cancelled()) return;
      }
      buffer_.AddClaim();
      SlotResult r;
      try {
        auto in = child_->GetNext();
        if (in) {
          model_node_->RecordBufferedElementBytes(in->ByteSize());
          r.elem = std::move(in);
        } else {
          r.eof = true;
        }
      } catch (...) {
        r.error = std::current_exception();
      }
      bool was_eof = r.eof;
      buffer_.Put(seq++, std::move(r));
      if (was_eof) return;
    }
  }

  std::shared_ptr<autotune::Parameter> buffer_param_;
  std::unique_ptr<NodeIterator> child_;

  std::mutex mu_;
  std::condition_variable slots_cv_;
  bool stop_ = false;

  std::mutex consumer_mu_;
  uint64_t next_out_ = 0;
  bool consumer_done_ = false;

  CompletionBuffer buffer_;
  std::thread producer_;
};

class ParallelMapIterator : public NodeIterator {
 public:
  ParallelMapIterator(IteratorContext* ctx, const DatasetNode* node,
                      const std::string& path, uint64_t salt,
                      const std::string& parent)
      : NodeIterator(ctx, node, path, salt, autotune::NodeClass::kAsyncQueue,
                     parent),
        deterministic_(ctx->options.deterministic),
        buffer_(ctx->options.deterministic, model_node_.get()),
        pool_([this](size_t index) { WorkerLoop(index); }) {
    const auto& entry = ctx->registry->Get(node->GetString("udf"));
    fn_ = entry.map_fn;
    model_node_->SetColdCostNs(static_cast<double>(
        entry.cost_hint_ns.value_or(static_cast<int64_t>(kDefaultUdfCostNs))));
    if (node->HasAttr("fused_filter_udf")) {
      fused_pred_ = ctx->registry->Get(node->GetString("fused_filter_udf"))
                        .predicate;
    }
    int64_t attr = node->GetInt("num_parallel_calls");
    bool tunable = attr == kAutotune;
    parallelism_ = std::make_shared<autotune::Parameter>(
        "parallelism", tunable ? 1 : attr, 1.0,
        tunable ? kMaxTunableParallelism : attr, tunable);
    model_node_->set_parallelism(parallelism_);
    // In-flight results are bounded by the parallelism knob.
    model_node_->set_buffer(parallelism_);
    child_ = MakeNodeIterator(ctx, node->inputs()[0].get(),
                              ChildPath(path, *node->inputs()[0], 0), salt,
                              path, 1.0);
    pool_.Resize(static_cast<size_t>(parallelism_->published()));
  }

  ~ParallelMapIterator() override {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
      claim_cv_.notify_all();
    }
    buffer_.Wake();
    pool_.JoinAll();
  }

  void OnCancel() override {
    std::lock_guard lock(mu_);
    claim_cv_.notify_all();
    buffer_.Wake();
  }

  size_t buffer_peak() const { return buffer_.peak(); }

 protected:
  std::optional<Element> Next() override {
    pool_.Resize(static_cast<size_t>(parallelism_->published()));
    std::lock_guard consumer_lock(consumer_mu_);
    if (consumer_done_) return std::nullopt;
    for (;;) {
      auto r = buffer_.Pop(next_out_, ctx_->cancelled);
      {
        std::lock_guard lock(mu_);
        claim_cv_.notify_all();  // capacity freed
      }
      if (!r) return std::nullopt;
      if (r->skip) continue;
      if (r->error) std::rethrow_exception(r->error);
      if (r->eof) {
        consumer_done_ = true;
        return std::nullopt;
      }
      return std::move(r->elem);
    }
  }

 private:
  void WorkerLoop(size_t index) {
    for (;;) {
      {
        std::unique_lock lock(mu_);
        claim_cv_.wait(lock, [&] {
          return stop_ || Cancelled() || pool_.ShouldExit(index) ||
                 (!input_done_.load(std::memory_order_relaxed) &&
                  buffer_.outstanding() < parallelism_->published());
        });
        if (stop_ || Cancelled() || pool_.ShouldExit(index)) return;
        if (input_done_.load(std::memory_order_relaxed)) return;
        buffer_.AddClaim();  // reserve while holding mu_ so checks serialize
      }

      uint64_t seq = 0;
      std::optional<Element> in;
      std::exception_ptr input_error;
      bool raced_past_eof = false;
      {
        std::lock_guard input_lock(input_mu_);
        if (input_done_.load(std::memory_order_relaxed)) {
          raced_past_eof = true;
        } else {
          try {
            in = child_->GetNext();
          } catch (...) {
            input_error = std::current_exception();
          }
          seq = next_input_++;
          if (!in && !input_error) {
            input_done_.store(true, std::memory_order_relaxed);
          }
        }
      }
      if (raced_past_eof) {
        buffer_.DropClaim();
        std::lock_guard lock(mu_);
        claim_cv_.notify_all();
        continue;
      }

      SlotResult r;
      if (input_error) {
        r.error = input_error;
      } else if (!in) {
        if (deterministic_) {
          r.eof = true;
        } else {
          buffer_.DropClaim();
          buffer_.MarkInputDone();
          std::lock_guard lock(mu_);
          claim_cv_.notify_all();
          continue;
        }
      } else {
        try {
          ScopedSelfTimer timer(model_node_.get());
          Element out = fn_(*in);
          if (fused_pred_ && !fused_pred_(out)) {
            r.skip = true;
          } else {
            model_node_->RecordBufferedElementBytes(out.ByteSize());
            r.elem = std::move(out);
          }
        } catch (const std::exception& e) {
          r.error = std::make_exception_ptr(UdfError(seq, e.what()));
        }
      }
      buffer_.Put(seq, std::move(r));
      if (input_done_.load(std::memory_order_relaxed)) {
        std::lock_guard lock(mu_);
        claim_cv_.notify_all();
      }
    }
  }

  MapFn fn_;
  PredicateFn fused_pred_;
  bool deterministic_ = true;
  std::shared_ptr<autotune::Parameter> parallelism_;
  std::unique_ptr<NodeIterator> child_;

  std::mutex mu_;
  std::condition_variable claim_cv_;
  bool stop_ = false;

  std::mutex input_mu_;
  uint64_t next_input_ = 0;
  std::atomic<bool> input_done_{false};

  std::mutex consumer_mu_;
  uint64_t next_out_ = 0;
  bool consumer_done_ = false;

  CompletionBuffer buffer_;
  WorkerPool pool_;
};

// Fused map+batch: workers apply the UDF to input elements and write results
// directly into batch slots; whole batches are released in order.
class MapAndBatchIterator : public NodeIterator {
 public:
  MapAndBatchIterator(IteratorContext* ctx, const DatasetNode* node,
                      const std::string& path, uint64_t salt,
                      const std::string& parent)
      : NodeIterator(ctx, node, path, salt, autotune::NodeClass::kAsyncQueue,
                     parent),
        batch_size_(node->GetInt("batch_size")),
        drop_remainder_(node->GetBoolOr("drop_remainder", false)),
        work_ns_(node->GetIntOr("work_ns", 0)),
        work_busy_(node->GetBoolOr("work_busy", false)),
        pool_([this](size_t index) { WorkerLoop(index); }) {
    const auto& entry = ctx->registry->Get(node->GetString("udf"));
    fn_ = entry.map_fn;
    model_node_->set_batch_size(batch_size_);
    model_node_->SetColdCostNs(
        static_cast<double>(entry.cost_hint_ns.value_or(
            static_cast<int64_t>(kDefaultUdfCostNs))) *
            static_cast<double>(batch_size_) +
        static_cast<double>(work_ns_));
    int64_t attr = node->GetInt("num_parallel_calls");
    bool tunable = attr == kAutotune;
    parallelism_ = std::make_shared<autotune::Parameter>(
        "parallelism", tunable ? 1 : attr, 1.0,
        tunable ? kMaxTunableParallelism : attr, tunable);
    model_node_->set_parallelism(parallelism_);
    child_ = MakeNodeIterator(ctx, node->inputs()[0].get(),
                              ChildPath(path, *node->inputs()[0], 0), salt,
                              path, static_cast<double>(batch_size_));
    pool_.Resize(static_cast<size_t>(parallelism_->published()));
  }

  ~MapAndBatchIterator() override {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
      claim_cv_.notify_all();
      batch_cv_.notify_all();
    }
    pool_.JoinAll();
  }

  void OnCancel() override {
    std::lock_guard lock(mu_);
    claim_cv_.notify_all();
    batch_cv_.notify_all();
  }

 protected:
  std::optional<Element> Next() override {
    pool_.Resize(static_cast<size_t>(parallelism_->published()));
    std::unique_lock lock(mu_);
    for (;;) {
      if (consumer_done_) return std::nullopt;
      auto it = batches_.find(next_out_batch_);
      if (it != batches_.end() && it->second.Complete()) {
        BatchState state = std::move(it->second);
        batches_.erase(it);
        next_out_batch_++;
        claim_cv_.notify_all();
        if (state.error) {
          lock.unlock();
          std::rethrow_exception(state.error);
        }
        if (state.rows.empty() ||
            (drop_remainder_ &&
             static_cast<int64_t>(state.rows.size()) < batch_size_)) {
          consumer_done_ = true;
          return std::nullopt;
        }
        lock.unlock();
        auto assembly_start = Clock::now();
        std::vector<Element> rows;
        rows.reserve(state.rows.size());
        for (auto& r : state.rows) rows.push_back(std::move(*r));
        Element out = BatchIterator::AssembleBatch(rows);
        model_node_->RecordBufferedElementBytes(out.ByteSize());
        // Model self time is per produced batch: UDF time for all cells plus
        // assembly.
        model_node_->RecordSelfTime(state.udf_ns + ElapsedNs(assembly_start));
        return out;
      }
      if (ctx_->cancelled.load(std::memory_order_relaxed)) return std::nullopt;
      batch_cv_.wait_for(lock, std::chrono::milliseconds(50));
    }
  }

 private:
  struct BatchState {
    std::vector<std::optional<Element>> rows;  // filled cells
    int64_t expected = -1;                     // known once EOF localizes
    int64_t filled = 0;
    int64_t udf_ns = 0;
    std::exception_ptr error;

    bool Complete() const {
      return expected >= 0 && filled == expected;
    }
  };

  int64_t MaxOpenBatches() const {
    int64_t p = parallelism_->published();
    return std::max<int64_t>(1, (p + batch_size_ - 1) / batch_size_) + 1;
  }

  void WorkerLoop(size_t index) {
    for (;;) {
      {
        std::unique_lock lock(mu_);
        claim_cv_.wait(lock, [&] {
          return stop_ || Cancelled() || pool_.ShouldExit(index) ||
                 (!input_done_ && in_flight_ < parallelism_->published() &&
                  claimed_ <
                      (next_out_batch_ + MaxOpenBatches()) * batch_size_);
        });
        if (stop_ || Cancelled() || pool_.ShouldExit(index)) return;
        if (input_done_) return;
        in_flight_++;
        claimed_++;
      }

      uint64_t seq = 0;
      std::optional<Element> in;
      std::exception_ptr input_error;
      bool raced_past_eof = false;
      {
        std::lock_guard input_lock(input_mu_);
        {
          std::lock_guard lock(mu_);
          if (input_done_) raced_past_eof = true;
        }
        if (!raced_past_eof) {
          try {
            in = child_->GetNext();
          } catch (...) {
            input_error = std::current_exception();
          }
          seq = next_input_++;
          if (!in && !input_error) {
            std::lock_guard lock(mu_);
            input_done_ = true;
            final_input_count_ = static_cast<int64_t>(seq);
            FinalizeExpectations();
            batch_cv_.notify_all();
          }
        }
      }
      if (raced_past_eof) {
        std::lock_guard lock(mu_);
        in_flight_--;
        claim_cv_.notify_all();
        continue;
      }

      std::optional<Element> out;
      std::exception_ptr error = input_error;
      int64_t udf_ns = 0;
      if (in && !error) {
        auto start = Clock::now();
        try {
          out = fn_(*in);
          // The batching cost is spread across workers, one element's share
          // at a time (this is what fusing buys over a serial batch stage).
          SimulateWork(work_ns_ / batch_size_, work_busy_);
        } catch (const std::exception& e) {
          error = std::make_exception_ptr(UdfError(seq, e.what()));
        }
        udf_ns = ElapsedNs(start);
      }

      {
        std::lock_guard lock(mu_);
        if (in || error) {
          int64_t batch_idx = static_cast<int64_t>(seq) / batch_size_;
          BatchState& batch = batches_[batch_idx];
          if (batch.rows.empty() && batch.expected != 0) {
            batch.rows.resize(static_cast<size_t>(batch_size_));
          }
          if (batch.expected < 0 && !input_done_) {
            batch.expected = batch_size_;
          }
          if (input_done_) FinalizeExpectations();
          int64_t cell = static_cast<int64_t>(seq) % batch_size_;
          if (error) {
            if (!batch.error) batch.error = error;
          } else {
            batch.rows[static_cast<size_t>(cell)] = std::move(out);
          }
          batch.filled++;
          batch.udf_ns += udf_ns;
        }
        in_flight_--;
        int64_t complete = 0;
        for (const auto& [idx, b] : batches_) {
          if (b.Complete()) complete++;
        }
        model_node_->RecordBufferPeak(complete);
        batch_cv_.notify_all();
        claim_cv_.notify_all();
      }
    }
  }

  // Once the input length is known, trim expectations: the final batch is
  // partial and a later batch index is an empty end-marker.
  void FinalizeExpectations() {
    if (final_input_count_ < 0) return;
    int64_t full_batches = final_input_count_ / batch_size_;
    int64_t tail = final_input_count_ % batch_size_;
    for (auto& [idx, batch] : batches_) {
      if (idx < full_batches) {
        if (batch.expected < 0) batch.expected = batch_size_;
      } else if (idx == full_batches) {
        batch.expected = tail;
        batch.rows.resize(static_cast<size_t>(tail));
      } else {
        batch.expected = 0;
        batch.rows.clear();
        batch.filled = 0;
      }
    }
    int64_t eof_idx = tail > 0 ? full_batches + 1 : full_batches;
    BatchState& eof_batch = batches_[eof_idx];
    eof_batch.expected = 0;
    eof_batch.rows.clear();
    eof_batch.filled = 0;
  }

  MapFn fn_;
  int64_t batch_size_;
  bool drop_remainder_;
  int64_t work_ns_;
  bool work_busy_;
  std::shared_ptr<autotune::Parameter> parallelism_;
  std::unique_ptr<NodeIterator> child_;

  std::mutex mu_;
  std::condition_variable claim_cv_;
  std::condition_variable batch_cv_;
  std::map<int64_t, BatchState> batches_;
  int64_t next_out_batch_ = 0;
  int64_t in_flight_ = 0;
  int64_t claimed_ = 0;
  bool stop_ = false;
  bool consumer_done_ = false;
  int64_t final_input_count_ = -1;

  std::mutex input_mu_;
  uint64_t next_input_ = 0;
  bool input_done_ = false;

  WorkerPool pool_;
};

// Parallel interleave: a cycle of open sub-datasets with up to
// num_parallel_calls fetches in flight. Deterministic mode consumes slots in
// strict cycle order and serializes sub-dataset openings in that order;
// nondeterministic mode delivers whichever slot has a result.
class ParallelInterleaveIterator : public NodeIterator {
 public:
  ParallelInterleaveIterator(IteratorContext* ctx, const DatasetNode* node,
                             const std::string& path, uint64_t salt,
                             const std::string& parent)
      : NodeIterator(ctx, node, path, salt,
                     autotune::NodeClass::kAsyncInterleave, parent),
        cycle_(static_cast<size_t>(node->GetInt("cycle_length"))),
        deterministic_(ctx->options.deterministic),
        slots_(cycle_),
        pool_([this](size_t index) { WorkerLoop(index); }) {
    const auto& entry = ctx->registry->Get(node->GetString("udf"));
    fn_ = entry.dataset_fn;
    declared_spec_ = *entry.dataset_spec;
    model_node_->set_cycle_length(static_cast<int64_t>(cycle_));
    model_node_->SetColdCostNs(0);
    int64_t attr = node->GetInt("num_parallel_calls");
    bool tunable = attr == kAutotune;
    parallelism_ = std::make_shared<autotune::Parameter>(
        "parallelism", tunable ? 1 : attr, 1.0,
        tunable ? static_cast<double>(cycle_) : attr, tunable);
    model_node_->set_parallelism(parallelism_);
    model_node_->set_buffer(parallelism_);
    input_ = MakeNodeIterator(ctx, node->inputs()[0].get(),
                              ChildPath(path, *node->inputs()[0], 0), salt,
                              path, 1.0 / 3.0);
    for (size_t i = 0; i < cycle_; ++i) slots_[i].needs_open = true;
    pool_.Resize(static_cast<size_t>(parallelism_->published()));
  }

  ~ParallelInterleaveIterator() override {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
      work_cv_.notify_all();
      result_cv_.notify_all();
    }
    pool_.JoinAll();
  }

  void OnCancel() override {
    std::lock_guard lock(mu_);
    work_cv_.notify_all();
    result_cv_.notify_all();
  }

 protected:
  std::optional<Element> Next() override {
    pool_.Resize(static_cast<size_t>(parallelism_->published()));
    std::unique_lock lock(mu_);
    for (;;) {
      if (ctx_->cancelled.load(std::memory_order_relaxed)) return std::nullopt;
      size_t live = 0;
      for (const auto& s : slots_) {
        if (!s.dead) live++;
      }
      if (live == 0) return std::nullopt;

      if (deterministic_) {
        Slot& slot = slots_[cursor_];
        if (slot.dead) {
          cursor_ = (cursor_ + 1) % cycle_;
          continue;
        }
        if (slot.result) {
          auto taken = TakeFrom(slot);
          if (taken.has_value()) {
            cursor_ = (cursor_ + 1) % cycle_;
            lock.unlock();
            if (taken->error) std::rethrow_exception(taken->error);
            return std::move(taken->elem);
          }
          continue;  // slot died or needs reopen; revisit same position
        }
      } else {
        for (size_t i = 0; i < cycle_; ++i) {
          Slot& slot = slots_[(cursor_ + i) % cycle_];
          if (!slot.dead && slot.result) {
            auto taken = TakeFrom(slot);
            if (taken.has_value()) {
              cursor_ = (cursor_ + i + 1) % cycle_;
              lock.unlock();
              if (taken->error) std::rethrow_exception(taken->error);
              return std::move(taken->elem);
            }
          }
        }
      }
      result_cv_.wait_for(lock, std::chrono::milliseconds(50));
    }
  }

 private:
  struct FetchResult {
    std::optional<Element> elem;
    std::exception_ptr error;
    bool exhausted = false;  // sub-dataset ended; slot should reopen
    bool dead = false;       // inputs exhausted; slot is finished
  };

  struct Slot {
    std::unique_ptr<NodeIterator> sub;
    DatasetGraph graph;
    std::optional<FetchResult> result;
    bool fetching = false;
    bool needs_open = false;
    bool dead = false;
  };

  // Consumes a present result under mu_. Returns a deliverable result, or
  // nullopt when the slot transitioned (reopen/dead) and the caller should
  // re-evaluate.
  std::optional<FetchResult> TakeFrom(Slot& slot) {
    FetchResult r = std::move(*slot.result);
    slot.result.reset();
    if (r.dead) {
      slot.dead = true;
      work_cv_.notify_all();
      return std::nullopt;
    }
    if (r.exhausted) {
      slot.sub.reset();
      slot.graph = DatasetGraph();
      slot.needs_open = true;
      work_cv_.notify_all();
      return std::nullopt;
    }
    work_cv_.notify_all();  // slot now wants its next fetch
    return r;
  }

  int64_t Outstanding() const {
    int64_t n = 0;
    for (const auto& s : slots_) {
      if (s.fetching || s.result) n++;
    }
    return n;
  }

  // Picks work under mu_: prefer fetches from open subs (cycle order from
  // the cursor); openings are serialized in deterministic mode.
  std::optional<size_t> ClaimWork(bool& open_claimed) {
    if (Outstanding() >= parallelism_->published()) return std::nullopt;
    for (size_t i = 0; i < cycle_; ++i) {
      size_t idx = (cursor_ + i) % cycle_;
      Slot& slot = slots_[idx];
      if (slot.dead || slot.fetching || slot.result) continue;
      if (slot.sub) {
        open_claimed = false;
        slot.fetching = true;
        return idx;
      }
      if (slot.needs_open && !(deterministic_ && opening_in_progress_)) {
        open_claimed = true;
        opening_in_progress_ = true;
        slot.needs_open = false;
        slot.fetching = true;
        return idx;
      }
      if (deterministic_ && slot.needs_open) {
        // An opening is already running; in deterministic mode later slots
        // must not overtake it.
        return std::nullopt;
      }
    }
    return std::nullopt;
  }

  void WorkerLoop(size_t index) {
    for (;;) {
      size_t slot_idx;
      bool open_claimed = false;
      {
        std::unique_lock lock(mu_);
        std::optional<size_t> claimed;
        work_cv_.wait(lock, [&] {
          if (stop_ || Cancelled() || pool_.ShouldExit(index)) return true;
          claimed = ClaimWork(open_claimed);
          return claimed.has_value();
        });
        if (stop_ || Cancelled() || pool_.ShouldExit(index)) return;
        slot_idx = *claimed;
      }

      Slot& slot = slots_[slot_idx];
      FetchResult r;
      if (open_claimed) {
        r = OpenSlot(slot);
        {
          std::lock_guard lock(mu_);
          opening_in_progress_ = false;
          work_cv_.notify_all();
        }
        if (!r.dead && !r.error) {
          // Opened; fall through to fetch the first element.
          r = FetchFrom(slot);
        }
      } else {
        r = FetchFrom(slot);
      }

      {
        std::lock_guard lock(mu_);
        slot.result = std::move(r);
        slot.fetching = false;
        int64_t occupied = 0;
        for (const auto& s : slots_) {
          if (s.result) occupied++;
        }
        model_node_->RecordBufferPeak(occupied);
        result_cv_.notify_all();
        work_cv_.notify_all();
      }
    }
  }

  FetchResult OpenSlot(Slot& slot) {
    FetchResult r;
    std::optional<Element> in;
    uint64_t ordinal;
    {
      std::lock_guard input_lock(input_mu_);
      if (inputs_done_) {
        r.dead = true;
        return r;
      }
      try {
        in = input_->GetNext();
      } catch (...) {
        r.error = std::current_exception();
        return r;
      }
      if (!in) {
        inputs_done_ = true;
        r.dead = true;
        return r;
      }
      ordinal = ordinal_++;
    }
    try {
      DatasetGraph sub = fn_(*in);
      if (sub.element_spec() != declared_spec_) {
        throw PipelineError(ErrorCode::kValidationFailed,
                            "interleave UDF produced dataset with spec " +
                                sub.element_spec().ToString() +
                                ", declared " + declared_spec_.ToString());
      }
      slot.sub = MakeNodeIterator(ctx_, sub.root().get(), path_ + "/sub",
                                  MixSeeds(salt_, ordinal), path_, 1.0);
      slot.graph = std::move(sub);
    } catch (const PipelineError&) {
      r.error = std::current_exception();
    } catch (const std::exception& e) {
      r.error = std::make_exception_ptr(UdfError(ordinal, e.what()));
    }
    return r;
  }

  FetchResult FetchFrom(Slot& slot) {
    FetchResult r;
    try {
      auto out = slot.sub->GetNext();
      if (out) {
        model_node_->RecordBufferedElementBytes(out->ByteSize());
        r.elem = std::move(out);
      } else {
        r.exhausted = true;
      }
    } catch (...) {
      r.error = std::current_exception();
    }
    return r;
  }

  DatasetFn fn_;
  ElementSpec declared_spec_;
  size_t cycle_;
  bool deterministic_;
  std::shared_ptr<autotune::Parameter> parallelism_;
  std::unique_ptr<NodeIterator> input_;

  std::mutex mu_;
  std::condition_variable work_cv_;
  std::condition_variable result_cv_;
  std::vector<Slot> slots_;
  size_t cursor_ = 0;
  bool opening_in_progress_ = false;
  bool stop_ = false;

  std::mutex input_mu_;
  bool inputs_done_ = false;
  uint64_t ordinal_ = 0;

  WorkerPool pool_;
};

// ---------------------------------------------------------------------------
// Factory
// ---------------------------------------------------------------------------

std::unique_ptr<NodeIterator> MakeNodeIterator(IteratorContext* ctx,
                                               const DatasetNode* node,
                                               const std::string& path,
                                               uint64_t salt,
                                               const std::string& parent_path,
                                               double static_ratio) {
  std::unique_ptr<NodeIterator> it;
  switch (node->kind()) {
    case NodeKind::kFromMemory:
      it = std::make_unique<FromMemoryIterator>(ctx, node, path, salt,
                                                parent_path);
      break;
    case NodeKind::kFromFile:
      it = std::make_unique<FromFileIterator>(ctx, node, path, salt,
                                              parent_path);
      break;
    case NodeKind::kMap: {
      int64_t p = node->GetInt("num_parallel_calls");
      if (p == 1) {
        it = std::make_unique<MapIterator>(ctx, node, path, salt, parent_path);
      } else {
        it = std::make_unique<ParallelMapIterator>(ctx, node, path, salt,
                                                   parent_path);
      }
      break;
    }
    case NodeKind::kFilter:
      it = std::make_unique<FilterIterator>(ctx, node, path, salt, parent_path);
      break;
    case NodeKind::kFlatMap:
      it = std::make_unique<FlatMapIterator>(ctx, node, path, salt,
                                             parent_path);
      break;
    case NodeKind::kInterleave: {
      int64_t p = node->GetInt("num_parallel_calls");
      if (p == 1) {
        it = std::make_unique<InterleaveIterator>(ctx, node, path, salt,
                                                  parent_path);
      } else {
        it = std::make_unique<ParallelInterleaveIterator>(ctx, node, path,
                                                          salt, parent_path);
      }
      break;
    }
    case NodeKind::kBatch:
      it = std::make_unique<BatchIterator>(ctx, node, path, salt, parent_path);
      break;
    case NodeKind::kUnbatch:
      it = std::make_unique<UnbatchIterator>(ctx, node, path, salt,
                                             parent_path);
      break;
    case NodeKind::kPrefetch:
      it = std::make_unique<PrefetchIterator>(ctx, node, path, salt,
                                              parent_path);
      break;
    case NodeKind::kRepeat:
      it = std::make_unique<RepeatIterator>(ctx, node, path, salt, parent_path);
      break;
    case NodeKind::kShuffle:
      it = std::make_unique<ShuffleIterator>(ctx, node, path, salt,
                                             parent_path,
                                             /*fused_epochs=*/false);
      break;
    case NodeKind::kShard:
      it = std::make_unique<ShardIterator>(ctx, node, path, salt, parent_path);
      break;
    case NodeKind::kZip:
      it = std::make_unique<ZipIterator>(ctx, node, path, salt, parent_path);
      break;
    case NodeKind::kConcatenate:
      it = std::make_unique<ConcatenateIterator>(ctx, node, path, salt,
                                                 parent_path);
      break;
    case NodeKind::kCache:
      it = std::make_unique<CacheIterator>(ctx, node, path, salt, parent_path);
      break;
    case NodeKind::kReduce:
      it = std::make_unique<ReduceIterator>(ctx, node, path, salt, parent_path);
      break;
    case NodeKind::kMapAndBatch:
      it = std::make_unique<MapAndBatchIterator>(ctx, node, path, salt,
                                                 parent_path);
      break;
  }
  it->model_ratio_init(static_ratio);
  return it;
}

// Walks a graph checking UDF registrations against the shapes each kind
// needs. Sub-datasets produced at runtime are validated when they open.
void ValidateUdfs(const DatasetNode& node, const UdfRegistry& registry) {
  auto require = [&](const std::string& name, auto member,
                     const char* what) {
    if (!registry.Contains(name)) {
      throw PipelineError(ErrorCode::kUnknownUdf,
                          "UDF not registered: " + name);
    }
    if (!(registry.Get(name).*member)) {
      throw PipelineError(ErrorCode::kUnknownUdf,
                          "UDF '" + name + "' is not a " + what);
    }
  };
  switch (node.kind()) {
    case NodeKind::kMap:
    case NodeKind::kMapAndBatch:
      require(node.GetString("udf"), &UdfRegistry::Entry::map_fn,
              "map function");
      if (node.HasAttr("fused_filter_udf")) {
        require(node.GetString("fused_filter_udf"),
                &UdfRegistry::Entry::predicate, "predicate");
      }
      break;
    case NodeKind::kFilter:
      require(node.GetString("udf"), &UdfRegistry::Entry::predicate,
              "predicate");
      break;
    case NodeKind::kFlatMap:
    case NodeKind::kInterleave:
      require(node.GetString("udf"), &UdfRegistry::Entry::dataset_fn,
              "dataset function");
      break;
    case NodeKind::kReduce:
      require(node.GetString("udf"), &UdfRegistry::Entry::binary_fn,
              "binary function");
      break;
    default:
      break;
  }
  for (const auto& input : node.inputs()) ValidateUdfs(*input, registry);
}

}  // namespace

// Set the cold production-ratio estimate on the mirror node; declared on
// NodeIterator so the factory can reach the protected member.
void NodeIterator::model_ratio_init(double static_ratio) {
  model_node_->set_static_ratio(static_ratio);
}

PipelineIterator::PipelineIterator(DatasetGraph graph,
                                   const UdfRegistry& registry,
                                   IteratorOptions options)
    : graph_(std::move(graph)), options_(options) {
  if (!graph_.root()) {
    throw PipelineError(ErrorCode::kValidationFailed, "empty graph");
  }
  ValidateUdfs(*graph_.root(), registry);
  if (options_.seed_override) {
    base_seed_ = *options_.seed_override;
  } else {
    base_seed_ = std::random_device{}();
    base_seed_ = MixSeeds(base_seed_, std::random_device{}());
  }
  model_ = std::make_shared<autotune::Model>();
  ctx_ = std::make_shared<IteratorContext>();
  ctx_->registry = &registry;
  ctx_->options = options_;
  ctx_->base_seed = base_seed_;
  ctx_->model = model_;
  root_ = MakeNodeIterator(ctx_.get(), graph_.root().get(),
                           ChildPath("", *graph_.root(), 0), base_seed_, "",
                           1.0);
}

PipelineIterator::~PipelineIterator() {
  ctx_->CancelAll();
  root_.reset();
}

std::optional<Element> PipelineIterator::GetNext() {
  model_->RecordRootGetNext(Clock::now());
  return root_->GetNext();
}

std::vector<NodeMetricsRow> PipelineIterator::Metrics() const {
  std::vector<NodeMetricsRow> rows;
  auto snapshot = model_->Snapshot();
  if (!snapshot) return rows;
  struct Walk {
    const autotune::Model& model;
    std::vector<NodeMetricsRow>& rows;
    void operator()(const autotune::SnapshotNode& n) {
      auto node = model.Find(n.path);
      if (node) {
        rows.push_back({n.path, n.label, node->TotalSelfTimeNs(),
                        node->ElementsProduced()});
      }
      for (const auto& c : n.children) (*this)(c);
    }
  } walk{*model_, rows};
  walk(*snapshot);
  return rows;
}

int64_t PipelineIterator::root_delivered() const {
  auto root = model_->Find(root_->path());
  return root ? root->ElementsProduced() : 0;
}

std::map<std::string, int64_t> PipelineIterator::NodeProgress() const {
  std::map<std::string, int64_t> progress;
  auto snapshot = model_->Snapshot();
  if (!snapshot) return progress;
  struct Walk {
    const autotune::Model& model;
    std::map<std::string, int64_t>& progress;
    void operator()(const autotune::SnapshotNode& n) {
      auto node = model.Find(n.path);
      if (node) progress[n.path] = node->ElementsProduced();
      for (const auto& c : n.children) (*this)(c);
    }
  } walk{*model_, progress};
  walk(*snapshot);
  return progress;
}

std::unique_ptr<PipelineIterator> MakeIterator(const DatasetGraph& graph,
                                               const UdfRegistry& registry,
                                               IteratorOptions options) {
  return std::make_unique<PipelineIterator>(graph, registry, options);
}

void WriteRecordFile(const std::string& path,
                     const std::vector<std::string>& payloads) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw PipelineError(ErrorCode::kMissingFile, "cannot write: " + path);
  }
  for (const auto& payload : payloads) {
    uint32_t len = static_cast<uint32_t>(payload.size());
    char len_bytes[4];
    for (int i = 0; i < 4; ++i) {
      len_bytes[i] = static_cast<char>((len >> (8 * i)) & 0xff);
    }
    out.write(len_bytes, 4);
    out.write(payload.data(), payload.size());
  }
}

}  // namespace datapipe
