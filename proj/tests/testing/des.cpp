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
#include "testing/des.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "datapipe/random.hpp"

namespace datapipe::testing {

namespace {

using autotune::NodeClass;
using autotune::SnapshotNode;

class ExpSampler {
 public:
  explicit ExpSampler(uint64_t seed) : rng_(seed) {}

  double Sample(double mean) {
    if (mean <= 0) return 0;
    double u = rng_.NextDouble();
    if (u >= 1.0) u = 0.9999999;
    return -mean * std::log(1.0 - u);
  }

 private:
  Pcg32 rng_;
};

// Event simulation of one async stage: a producer with exponential
// production time feeds a finite blocking buffer; a closed-loop consumer
// with exponential think time drains it. Returns the consumer's mean wait.
double SimulateStage(double production_mean_ns, int capacity,
                     double consumer_rate_per_sec, int num_requests,
                     ExpSampler& rng) {
  double think_mean = 1e9 / consumer_rate_per_sec;

  std::deque<double> buffer;      // completion times of ready items
  std::deque<double> free_slots;  // times at which buffer slots opened
  for (int i = 0; i < std::max(capacity, 1); ++i) free_slots.push_back(0.0);
  double producer_free = 0;

  auto produce = [&] {
    while (!free_slots.empty()) {
      double start = std::max(producer_free, free_slots.front());
      free_slots.pop_front();
      double ready = start + rng.Sample(production_mean_ns);
      buffer.push_back(ready);
      producer_free = ready;
    }
  };

  double t = 0;
  double wait_sum = 0;
  int counted = 0;
  int warmup = num_requests / 5;
  for (int i = 0; i < num_requests; ++i) {
    produce();
    double ready = buffer.front();
    buffer.pop_front();
    double fulfilled = std::max(t, ready);
    free_slots.push_back(fulfilled);
    if (i >= warmup) {
      wait_sum += fulfilled - t;
      counted++;
    }
    t = fulfilled + rng.Sample(think_mean);
  }
  return counted > 0 ? wait_sum / counted : 0;
}

// Bottom-up stage composition mirroring the estimator's frame: a stage's
// production time is its inputs' simulated output latency (scaled by
// consumption ratios) plus its own service share, and each stage faces the
// demand rate propagated from the root.
double SimulateNode(const SnapshotNode& node, double demand_rate,
                    int num_requests, ExpSampler& rng) {
  switch (node.cls) {
    case NodeClass::kSource:
      return node.self_ns;
    case NodeClass::kSync: {
      double latency = node.self_ns;
      for (const auto& child : node.children) {
        double child_rate = demand_rate * std::max(child.ratio, 1e-9);
        latency +=
            child.ratio * SimulateNode(child, child_rate, num_requests, rng);
      }
      return latency;
    }
    case NodeClass::kAsyncQueue: {
      double parallelism = std::max(node.parallelism, 1.0);
      double production = node.self_ns / parallelism;
      for (const auto& child : node.children) {
        double child_rate = demand_rate * std::max(child.ratio, 1e-9);
        production +=
            child.ratio * SimulateNode(child, child_rate, num_requests, rng);
      }
      double n = std::max(node.buffer, 1.0);
      if (node.batch_size > 1 && node.buffer <= 1.0) {
        n = std::max(1.0, parallelism / static_cast<double>(node.batch_size)) +
            1.0;
      }
      return SimulateStage(production, static_cast<int>(std::lround(n)),
                           demand_rate, num_requests, rng);
    }
    case NodeClass::kAsyncInterleave: {
      double parallelism = std::max(node.parallelism, 1.0);
      double production = node.self_ns / parallelism;
      double cycle =
          static_cast<double>(std::max<int64_t>(node.cycle_length, 1));
      double sub_sum = 0;
      int sub_count = 0;
      for (const auto& child : node.children) {
        if (child.is_interleave_input) {
          double child_rate = demand_rate * std::max(child.ratio, 1e-9);
          production +=
              child.ratio * SimulateNode(child, child_rate, num_requests, rng);
        } else {
          sub_sum +=
              SimulateNode(child, demand_rate / cycle, num_requests, rng);
          sub_count++;
        }
      }
      if (sub_count > 0) production += sub_sum / sub_count;
      double n = std::max(node.buffer, parallelism);
      return SimulateStage(production, static_cast<int>(std::lround(n)),
                           demand_rate, num_requests, rng);
    }
  }
  return 0;
}

}  // namespace

DesResult SimulateTree(const SnapshotNode& root, double consumer_rate_per_sec,
                       int num_requests, uint64_t seed) {
  ExpSampler rng(seed);
  DesResult result;
  result.mean_wait_ns =
      SimulateNode(root, consumer_rate_per_sec, num_requests, rng);
  result.request_rate_per_sec = consumer_rate_per_sec;
  return result;
}

}  // namespace datapipe::testing
