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
#ifndef DATAPIPE_TESTS_TESTING_RANDOM_GRAPH_HPP_
#define DATAPIPE_TESTS_TESTING_RANDOM_GRAPH_HPP_

#include <cstdint>

#include "datapipe/graph.hpp"
#include "datapipe/random.hpp"
#include "datapipe/udf.hpp"

namespace datapipe::testing {

// Registers the synthetic UDF set used by random pipelines ("inc", "times2",
// "pair_sum", "even", "positive", "expand3", "expand_var", "sum2", ...).
// Safe to call once per registry.
void RegisterTestUdfs(UdfRegistry& reg);

struct RandomGraphOptions {
  int max_ops = 6;           // transformations stacked on top of sources
  bool allow_parallel = true;  // emit num_parallel_calls > 1 / AUTOTUNE
  bool allow_prefetch = true;
  int max_source_elements = 8;
};

// Generates random valid pipelines over finite from_memory sources. All
// generated graphs type-check and have finite, deterministic sequences when
// evaluated with a fixed seed.
class RandomGraphGen {
 public:
  RandomGraphGen(UdfRegistry& reg, uint64_t seed,
                 RandomGraphOptions options = {});

  DatasetGraph Generate();

 private:
  enum class Shape { kInt, kIntPair, kBatchedInt };

  DatasetGraph GenSource();
  DatasetGraph ApplyRandomOp(DatasetGraph g, Shape& shape, int budget);

  UdfRegistry& reg_;
  Pcg32 rng_;
  RandomGraphOptions options_;
  double est_elems_ = 8;
};

}  // namespace datapipe::testing

#endif  // DATAPIPE_TESTS_TESTING_RANDOM_GRAPH_HPP_
