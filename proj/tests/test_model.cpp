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

#include <cmath>
#include <thread>

#include "datapipe/errors.hpp"
#include "datapipe/random.hpp"
#include "doctest.h"
#include "testing/des.hpp"
#include "testing/model_trees.hpp"

using namespace datapipe;
using namespace datapipe::autotune;
using datapipe::testing::BuildLadderTree;
using datapipe::testing::RandomModelTree;
using datapipe::testing::SimulateTree;

TEST_CASE("buffer-empty probability: exact value at equal rates") {
  CHECK(PEmpty(2, 10.0, 10.0) == 1.0 / 3.0);
  CHECK(PEmpty(5, 123.4, 123.4) == 1.0 / 6.0);
}

TEST_CASE("buffer-empty probability matches the worked pipeline rows") {
  // Prefetch row: producer 27.4/s against consumer 100/s with two slots.
  double p1 = PEmpty(2, 27.4, 100.0);
  CHECK(p1 == doctest::Approx(0.7412).epsilon(0.01));
  CHECK(36.5 * p1 == doctest::Approx(27.0).epsilon(0.02));
  // Parallel-map row: producer 220/s against consumer 1000/s, five slots.
  double p2 = PEmpty(5, 220.0, 1000.0);
  CHECK(p2 == doctest::Approx(0.780).epsilon(0.01));
  CHECK(4.55 * p2 == doctest::Approx(3.55).epsilon(0.02));
}

TEST_CASE("buffer-empty probability is continuous at x == y") {
  for (double n : {1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0}) {
    double at_equal = 1.0 / (n + 1.0);
    for (double wobble : {1.0 - 1e-6, 1.0 + 1e-6}) {
      CHECK(std::abs(PEmpty(n, 100.0 * wobble, 100.0) - at_equal) < 1e-4);
    }
  }
}

TEST_CASE("buffer-empty probability is monotone") {
  // A fuller buffer is less likely to be empty: the probability falls with
  // the buffer size and the producer rate, and rises with the consumer rate
  // (a faster consumer drains the buffer).
  for (double x : {20.0, 50.0, 100.0, 200.0}) {
    for (double y : {25.0, 75.0, 150.0}) {
      for (double n = 1; n <= 16; n += 1) {
        double p = PEmpty(n, x, y);
        CHECK(p > 0.0);
        CHECK(p < 1.0);
        CHECK(PEmpty(n + 1, x, y) <= p + 1e-12);      // decreasing in n
        CHECK(PEmpty(n, x * 1.2, y) <= p + 1e-12);    // decreasing in x
        CHECK(PEmpty(n, x, y * 1.2) >= p - 1e-12);    // increasing in y
      }
    }
  }
}

TEST_CASE("buffer-empty probability rejects bad inputs") {
  CHECK_THROWS_AS(PEmpty(0.5, 1, 1), PipelineError);
  CHECK_THROWS_AS(PEmpty(1, 0, 1), PipelineError);
  CHECK_THROWS_AS(PEmpty(1, 1, -2), PipelineError);
}

TEST_CASE("latency ladder: the five-stage reference pipeline") {
  SnapshotNode root = BuildLadderTree();
  LatencyEstimate est = EstimateOutputLatency(root, 100.0);

  // Expected per-stage output latencies in ms, with a 3% band for the
  // rounding in the reference values.
  CHECK(est.per_node_ns.at("/interleave") / 1e6 ==
        doctest::Approx(4.15).epsilon(0.03));
  CHECK(est.per_node_ns.at("/map") / 1e6 ==
        doctest::Approx(3.55).epsilon(0.03));
  CHECK(est.per_node_ns.at("/batch") / 1e6 ==
        doctest::Approx(36.5).epsilon(0.03));
  CHECK(est.per_node_ns.at("/prefetch") / 1e6 ==
        doctest::Approx(27.0).epsilon(0.03));
  CHECK(est.root_latency_ns == est.per_node_ns.at("/prefetch"));
}

TEST_CASE("pure sync pipeline with zero self time passes latency through") {
  SnapshotNode source;
  source.cls = NodeClass::kSource;
  source.path = "/src";
  source.self_ns = 3e6;
  SnapshotNode mid;
  mid.cls = NodeClass::kSync;
  mid.path = "/mid";
  mid.self_ns = 0;
  source.ratio = 1;
  mid.children.push_back(source);
  SnapshotNode top;
  top.cls = NodeClass::kSync;
  top.path = "/top";
  top.self_ns = 0;
  mid.ratio = 1;
  top.children.push_back(mid);

  LatencyEstimate est = EstimateOutputLatency(top, 50.0);
  CHECK(est.root_latency_ns == doctest::Approx(3e6));
}

TEST_CASE("latency estimate is monotone in self times") {
  Pcg32 rng(2718);
  for (int i = 0; i < 60; ++i) {
    double period, rate;
    SnapshotNode tree = RandomModelTree(rng, period, rate);
    double base = EstimateOutputLatency(tree, rate).root_latency_ns;

    // Bump each node's self time in turn; root latency must not decrease.
    struct Bump {
      double rate;
      double base;
      void operator()(SnapshotNode& node) {
        double saved = node.self_ns;
        node.self_ns = saved * 1.5 + 1e5;
        for (auto& c : node.children) (*this)(c);
        node.self_ns = saved;
      }
    };
    struct Walk {
      double rate, base;
      SnapshotNode* root;
      void operator()(SnapshotNode& node) {
        double saved = node.self_ns;
        node.self_ns = saved * 1.5 + 1e5;
        CHECK(EstimateOutputLatency(*root, rate).root_latency_ns >=
              base - 1e-6);
        node.self_ns = saved;
        for (auto& c : node.children) (*this)(c);
      }
    } walk{rate, base, &tree};
    walk(tree);
  }
}

TEST_CASE("analytic latency tracks the event simulation on random trees") {
  Pcg32 rng(12345);
  for (int i = 0; i < 200; ++i) {
    double period, rate;
    SnapshotNode tree = RandomModelTree(rng, period, rate);
    auto des = SimulateTree(tree, rate, 60000, 777 + i);
    double analytic = EstimateOutputLatency(tree, rate).root_latency_ns;
    double err = std::abs(analytic - des.mean_wait_ns) /
                 std::max(des.mean_wait_ns, 1.0);
    CHECK_MESSAGE(err <= 0.15, "tree ", i, ": analytic ", analytic / 1e6,
                  "ms vs simulated ", des.mean_wait_ns / 1e6, "ms");
  }
}

TEST_CASE("processing-time estimate: first sample initializes, then smooths") {
  ModelNode node("/n", "map", NodeClass::kSync);
  node.SetColdCostNs(1e6);
  CHECK(node.SelfTimeNs() == 1e6);  // cold default before any sample

  // Constant reports converge immediately and stay put.
  for (int i = 0; i < 100; ++i) node.RecordSelfTime(2'000'000);
  CHECK(node.SelfTimeNs() == doctest::Approx(2e6).epsilon(0.05));

  // Alternating 1ms / 3ms settles near 2ms.
  ModelNode alt("/alt", "map", NodeClass::kSync);
  for (int i = 0; i < 400; ++i) {
    alt.RecordSelfTime(i % 2 == 0 ? 1'000'000 : 3'000'000);
  }
  CHECK(alt.SelfTimeNs() == doctest::Approx(2e6).epsilon(0.25));
}

TEST_CASE("model mirrors attach/detach and tracks the consumer rate") {
  Model model;
  auto root = model.Attach("/a", "", "prefetch", NodeClass::kAsyncQueue);
  uint64_t v1 = model.structure_version();
  auto child = model.Attach("/a/b", "/a", "source", NodeClass::kSource);
  CHECK(model.structure_version() > v1);

  auto snap = model.Snapshot();
  REQUIRE(snap.has_value());
  CHECK(snap->path == "/a");
  REQUIRE(snap->children.size() == 1);
  CHECK(snap->children[0].path == "/a/b");

  // Detaching the child prunes it from snapshots but keeps its counters.
  child->RecordProduced(5);
  model.Detach(child);
  auto snap2 = model.Snapshot();
  CHECK(snap2->children.empty());
  auto revived = model.Attach("/a/b", "/a", "source", NodeClass::kSource);
  CHECK(revived->ElementsProduced() == 5);

  using namespace std::chrono;
  auto t0 = steady_clock::now();
  for (int i = 0; i < 11; ++i) {
    model.RecordRootGetNext(t0 + milliseconds(10 * i));
  }
  CHECK(model.RootConsumerRatePerSec() == doctest::Approx(100.0).epsilon(0.05));
}
