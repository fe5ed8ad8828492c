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
#ifndef DATAPIPE_TESTS_TESTING_MODEL_TREES_HPP_
#define DATAPIPE_TESTS_TESTING_MODEL_TREES_HPP_

#include "datapipe/model.hpp"
#include "datapipe/random.hpp"

namespace datapipe::testing {

// The reference five-stage pipeline used for latency regression: a 5 ms
// source under a parallel interleave (cycle 2, parallelism 1, buffer 1), a
// parallel map (2 ms, parallelism 5, buffer 5), a batch of 10 costing 1 ms,
// and a prefetch with two slots, consumed at 100 calls/s.
autotune::SnapshotNode BuildLadderTree(bool autotune_knobs = false);

struct ModelTreeOptions {
  // Root think time exceeds the tree's production period by a margin in
  // this range (consumer-paced regime, where the queueing approximation is
  // meaningful).
  double margin_lo = 1.2;
  double margin_hi = 1.6;
  int max_middles = 4;
  int max_parallelism = 2;
  int max_buffer = 2;
  bool tunable_knobs = false;  // emit tunable parameters instead of fixed
  int max_tunable_knobs = 2;
};

// Random 3-6 node chains of source / sync / async stages. `period_ns`
// returns the per-root-element production estimate and `rate_per_sec` the
// chosen consumer rate. Configurations whose modeled latency vanishes below
// 50us are redrawn: there is nothing meaningful to compare against a
// simulation there.
autotune::SnapshotNode RandomModelTree(Pcg32& rng, double& period_ns,
                                       double& rate_per_sec,
                                       ModelTreeOptions options = {});

}  // namespace datapipe::testing

#endif  // DATAPIPE_TESTS_TESTING_MODEL_TREES_HPP_
