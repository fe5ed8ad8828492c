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
#ifndef DATAPIPE_SERIALIZE_HPP_
#define DATAPIPE_SERIALIZE_HPP_

#include <string>

#include "datapipe/fingerprint.hpp"
#include "datapipe/graph.hpp"

namespace datapipe {

// Canonical, versioned binary encoding of a pipeline graph (see
// docs/formats.md). Deterministic: structurally equal graphs produce
// identical bytes, and Deserialize(Serialize(g)) is structurally equal to g.
std::string Serialize(const DatasetGraph& graph);

// Parses and re-validates a serialized graph. UDF output specs are resolved
// through `registry`, so the same UDF registrations must be in place as when
// the graph was built. Throws MalformedInput on framing errors and
// ValidationFailed when the decoded graph fails node validation.
DatasetGraph Deserialize(std::string_view bytes, const UdfRegistry& registry);

// SHA-256 over the canonical serialization with every shuffle seed attr
// zeroed: stable across runs, invariant to seed values, sensitive to kinds,
// attrs, UDF names, and input file lists.
Fingerprint GraphFingerprint(const DatasetGraph& graph);

}  // namespace datapipe

#endif  // DATAPIPE_SERIALIZE_HPP_
