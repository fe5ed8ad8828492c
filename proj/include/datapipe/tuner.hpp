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
#ifndef DATAPIPE_TUNER_HPP_
#define DATAPIPE_TUNER_HPP_

#include <chrono>
#include <condition_variable>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "datapipe/model.hpp"

namespace datapipe::autotune {

// Resource ceilings the tuner must respect at every publish.
struct Budget {
  double cpu_parallelism = 0;  // total parallelism units
  double ram_bytes = 0;        // total buffered bytes

  // Machine core count and a quarter of physical RAM (1 GiB fallback).
  static Budget Defaults();
};

struct TunerConfig {
  // Stop when a descent step improves the modeled latency by less than this
  // fraction of the latency at descent start.
  double eps_fraction = 0.08;
  // Initial gradient step scale (latencies are in milliseconds); halved on
  // non-improving steps and multiplied by delta_growth after accepted ones.
  double initial_delta = 1.0;
  double delta_growth = 1.0;
  int max_steps = 100;
  // Greedy +/-1 refinement of the rounded assignment (budget-checked).
  bool integer_polish = false;
  std::chrono::milliseconds initial_period{100};
  std::chrono::milliseconds max_period{10000};
  // Re-optimize immediately when the latency estimate moves by more than
  // this fraction or the tree structure changes.
  double reset_threshold = 0.20;
};

struct ParamSetting {
  std::string path;
  std::string name;  // "parallelism" | "buffer_size"
  int64_t value = 1;
};

struct TuningResult {
  std::vector<ParamSetting> published;
  double initial_latency_ms = 0;
  double final_latency_ms = 0;
  int steps = 0;
  bool budget_infeasible = false;
  // Resource usage of the published assignment (tunable and fixed knobs).
  double cpu_used = 0;
  double ram_used_bytes = 0;
};

// Minimizes the modeled root output latency over the tunable parameters in
// `snapshot` by gradient descent (numeric central differences) subject to
// the budget, then rounds to integers and repairs any rounding-induced
// budget excess. Pure function of the snapshot: the live pipeline is not
// touched.
TuningResult OptimizeParameters(SnapshotNode& snapshot,
                                double root_consumer_rate_per_sec,
                                const Budget& budget,
                                const TunerConfig& config);

// Background optimization of a live pipeline's knobs. The loop snapshots the
// model, optimizes analytically, publishes the chosen values atomically, and
// sleeps; the period doubles while publishes are stable and resets when the
// pipeline's structure or latency shifts.
class Tuner {
 public:
  Tuner(std::shared_ptr<Model> model, Budget budget, TunerConfig config = {});
  ~Tuner();

  void Start();
  void Stop();

  // Introspection (tests and the CLI dump).
  int64_t optimization_count() const;
  TuningResult last_result() const;
  std::chrono::milliseconds current_period() const;
  std::string DebugString() const;

 private:
  void Loop();
  void RunOnce();

  std::shared_ptr<Model> model_;
  Budget budget_;
  TunerConfig config_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  bool stop_ = true;
  std::thread thread_;

  std::chrono::milliseconds period_;
  uint64_t last_structure_version_ = 0;
  double anchor_latency_ms_ = -1;
  std::map<std::string, int64_t> last_published_;
  int64_t optimization_count_ = 0;
  TuningResult last_result_;
};

}  // namespace datapipe::autotune

#endif  // DATAPIPE_TUNER_HPP_
