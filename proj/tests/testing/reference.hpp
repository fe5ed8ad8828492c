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
#ifndef DATAPIPE_TESTS_TESTING_REFERENCE_HPP_
#define DATAPIPE_TESTS_TESTING_REFERENCE_HPP_

#include <cstdint>
#include <vector>

#include "datapipe/element.hpp"
#include "datapipe/graph.hpp"
#include "datapipe/udf.hpp"

namespace datapipe::testing {

// Single-threaded reference interpreter: evaluates a finite pipeline to its
// full deterministic-mode element sequence. Written independently of the
// runtime (shared contract: element/graph types, registered UDFs, the pinned
// PRNG, and the documented seed-derivation scheme) so the two can check each
// other.
std::vector<Element> ReferenceEval(const DatasetGraph& graph,
                                   const UdfRegistry& registry,
                                   uint64_t base_seed);

}  // namespace datapipe::testing

#endif  // DATAPIPE_TESTS_TESTING_REFERENCE_HPP_
