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
#include "datapipe/checkpoint.hpp"

#include <filesystem>

#include "datapipe/random.hpp"
#include "doctest.h"
#include "testing/random_graph.hpp"

using namespace datapipe;
using datapipe::testing::RandomGraphGen;
using datapipe::testing::RegisterTestUdfs;

namespace {

Element Int(int64_t v) { return Element::Scalar(Value::Int64(v)); }

std::vector<Element> Ints(std::initializer_list<int64_t> xs) {
  std::vector<Element> out;
  for (int64_t x : xs) out.push_back(Int(x));
  return out;
}

std::vector<Element> Drain(PipelineIterator& it) {
  std::vector<Element> out;
  while (auto e = it.GetNext()) out.push_back(std::move(*e));
  return out;
}

std::vector<int64_t> AsInts(const std::vector<Element>& elems) {
  std::vector<int64_t> out;
  for (const auto& e : elems) out.push_back(e.component(0).int64());
  return out;
}

IteratorOptions Seeded(uint64_t seed) {
  IteratorOptions o;
  o.seed_override = seed;
  return o;
}

}  // namespace

TEST_CASE("save/restore resumes mid-sequence") {
  UdfRegistry reg;
  auto g = ops::FromMemory(Ints({1, 2, 3, 4, 5}), reg);
  auto it = MakeIterator(g, reg, Seeded(1));
  it->GetNext();
  it->GetNext();
  CheckpointBlob blob = Save(*it);
  auto restored = Restore(g, reg, blob);
  CHECK(AsInts(Drain(*restored)) == std::vector<int64_t>{3, 4, 5});
}

TEST_CASE("restore against a different graph is a fingerprint mismatch") {
  UdfRegistry reg;
  RegisterTestUdfs(reg);
  auto g = ops::FromMemory(Ints({1, 2, 3}), reg);
  auto other = ops::Map(g, "inc", 1, reg);
  auto it = MakeIterator(g, reg, Seeded(1));
  it->GetNext();
  CheckpointBlob blob = Save(*it);
  try {
    Restore(other, reg, blob);
    FAIL("expected FingerprintMismatch");
  } catch (const PipelineError& e) {
    CHECK(e.code() == ErrorCode::kFingerprintMismatch);
  }
}

TEST_CASE("save/restore across shuffle continues the exact permutation") {
  UdfRegistry reg;
  auto g = ops::Shuffle(ops::FromMemory(Ints({1, 2, 3, 4, 5, 6, 7, 8}), reg),
                        4, uint64_t{7}, reg);

  auto uninterrupted = Drain(*MakeIterator(g, reg, Seeded(5)));

  for (size_t cut : {size_t{0}, size_t{3}, size_t{7}, size_t{8}}) {
    auto it = MakeIterator(g, reg, Seeded(5));
    std::vector<Element> before;
    for (size_t i = 0; i < cut; ++i) before.push_back(*it->GetNext());
    CheckpointBlob blob = Save(*it);
    auto restored = Restore(g, reg, blob);
    auto after = Drain(*restored);
    std::vector<Element> joined = before;
    joined.insert(joined.end(), after.begin(), after.end());
    CHECK(joined == uninterrupted);
  }
}

TEST_CASE("corrupt and versioned blobs are rejected") {
  UdfRegistry reg;
  auto g = ops::FromMemory(Ints({1, 2, 3}), reg);
  auto it = MakeIterator(g, reg, Seeded(1));
  it->GetNext();
  CheckpointBlob blob = Save(*it);

  // Truncated payload.
  CheckpointBlob truncated{blob.bytes.substr(0, blob.bytes.size() / 2)};
  try {
    Restore(g, reg, truncated);
    FAIL("expected CorruptBlob");
  } catch (const PipelineError& e) {
    CHECK(e.code() == ErrorCode::kCorruptBlob);
  }

  // Future version.
  CheckpointBlob versioned = blob;
  versioned.bytes[4] = 9;
  try {
    Restore(g, reg, versioned);
    FAIL("expected VersionMismatch");
  } catch (const PipelineError& e) {
    CHECK(e.code() == ErrorCode::kVersionMismatch);
  }

  // Bad magic.
  CheckpointBlob garbled = blob;
  garbled.bytes[0] = 'X';
  try {
    Restore(g, reg, garbled);
    FAIL("expected CorruptBlob");
  } catch (const PipelineError& e) {
    CHECK(e.code() == ErrorCode::kCorruptBlob);
  }
}

TEST_CASE("save at EOF restores to an ended stream") {
  UdfRegistry reg;
  auto g = ops::FromMemory(Ints({1, 2}), reg);
  auto it = MakeIterator(g, reg, Seeded(1));
  Drain(*it);
  CheckpointBlob blob = Save(*it);
  auto restored = Restore(g, reg, blob);
  CHECK(!restored->GetNext().has_value());
}

TEST_CASE("random pipelines resume identically from random cut points") {
  UdfRegistry reg;
  RandomGraphGen gen(reg, 31337);
  Pcg32 rng(4242);
  int checked = 0;
  for (int i = 0; i < 40; ++i) {
    DatasetGraph g = gen.Generate();
    uint64_t seed = 9000 + i;
    auto full = Drain(*MakeIterator(g, reg, Seeded(seed)));
    if (full.empty()) continue;
    size_t cut = rng.Bounded(static_cast<uint32_t>(full.size() + 1));

    auto it = MakeIterator(g, reg, Seeded(seed));
    for (size_t k = 0; k < cut; ++k) REQUIRE(it->GetNext().has_value());
    CheckpointBlob blob = Save(*it);
    auto restored = Restore(g, reg, blob);
    auto rest = Drain(*restored);

    REQUIRE_MESSAGE(cut + rest.size() == full.size(), "graph:\n",
                    g.ToString());
    for (size_t k = 0; k < rest.size(); ++k) {
      REQUIRE_MESSAGE(rest[k] == full[cut + k], "graph:\n", g.ToString());
    }
    checked++;
  }
  CHECK(checked >= 30);
}

TEST_CASE("checkpoint files round-trip") {
  UdfRegistry reg;
  auto g = ops::FromMemory(Ints({1, 2, 3, 4}), reg);
  auto it = MakeIterator(g, reg, Seeded(1));
  it->GetNext();
  auto blob = Save(*it);
  auto path = (std::filesystem::temp_directory_path() / "dp_ckpt.bin").string();
  WriteCheckpointFile(path, blob);
  auto back = ReadCheckpointFile(path);
  CHECK(back.bytes == blob.bytes);
  auto restored = Restore(g, reg, back);
  CHECK(AsInts(Drain(*restored)) == std::vector<int64_t>{2, 3, 4});
}
