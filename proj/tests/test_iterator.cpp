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
#include <atomic>
#include <set>
#include <thread>
#include <filesystem>
#include <map>

#include "datapipe/runtime.hpp"
#include "doctest.h"
#include "testing/random_graph.hpp"
#include "testing/reference.hpp"

using namespace datapipe;
using datapipe::testing::RandomGraphGen;
using datapipe::testing::ReferenceEval;
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

TEST_CASE("from_memory yields elements then sticky EOF") {
  UdfRegistry reg;
  auto g = ops::FromMemory(Ints({1, 2, 3}), reg);
  auto it = MakeIterator(g, reg);
  CHECK(AsInts(Drain(*it)) == std::vector<int64_t>{1, 2, 3});
  for (int i = 0; i < 1000; ++i) CHECK(!it->GetNext().has_value());
}

TEST_CASE("unregistered UDF fails at iterator creation") {
  UdfRegistry reg;
  auto g = ops::Map(ops::FromMemory(Ints({1}), reg), "nope", 1, reg);
  try {
    MakeIterator(g, reg);
    FAIL("expected UnknownUdf");
  } catch (const PipelineError& e) {
    CHECK(e.code() == ErrorCode::kUnknownUdf);
  }
}

TEST_CASE("repeat produces the input dataset multiple times") {
  UdfRegistry reg;
  auto g = ops::Repeat(ops::FromMemory(Ints({1}), reg), 3, reg);
  auto it = MakeIterator(g, reg);
  CHECK(AsInts(Drain(*it)) == std::vector<int64_t>{1, 1, 1});
}

TEST_CASE("map and filter basics") {
  UdfRegistry reg;
  RegisterTestUdfs(reg);
  auto doubled = ops::Map(ops::FromMemory(Ints({1, 2}), reg), "times2", 1, reg);
  CHECK(AsInts(Drain(*MakeIterator(doubled, reg))) ==
        std::vector<int64_t>{2, 4});

  auto evens =
      ops::Filter(ops::FromMemory(Ints({1, 2, 3, 4}), reg), "even", reg);
  CHECK(AsInts(Drain(*MakeIterator(evens, reg))) == std::vector<int64_t>{2, 4});
}

TEST_CASE("deterministic interleave round-robins across sources") {
  UdfRegistry reg;
  // token t -> dataset [10t+1, 10t+2]
  reg.RegisterDataset(
      "two_of",
      [&reg](const Element& e) {
        int64_t t = e.component(0).int64();
        return ops::FromMemory(
            {Int(10 * t + 1), Int(10 * t + 2)}, reg);
      },
      ElementSpec({TypeSpec::Int64()}));
  auto g = ops::Interleave(ops::FromMemory(Ints({0, 1}), reg), "two_of", 2, 1,
                           reg);
  // Sources [1,2] and [11,12] -> a1,b1,a2,b2.
  CHECK(AsInts(Drain(*MakeIterator(g, reg))) ==
        std::vector<int64_t>{1, 11, 2, 12});
  // Must agree with the reference interleaver.
  CHECK(AsInts(ReferenceEval(g, reg, 0)) ==
        std::vector<int64_t>{1, 11, 2, 12});
}

TEST_CASE("interleave with cycle 1 equals flat_map order") {
  UdfRegistry reg;
  RegisterTestUdfs(reg);
  auto src = ops::FromMemory(Ints({1, 2, 3}), reg);
  auto il = ops::Interleave(src, "expand3", 1, 1, reg);
  auto fm = ops::FlatMap(src, "expand3", reg);
  CHECK(Drain(*MakeIterator(il, reg, Seeded(1))) ==
        Drain(*MakeIterator(fm, reg, Seeded(1))));
}

TEST_CASE("batch emits partial remainder and unbatch inverts") {
  UdfRegistry reg;
  auto src = ops::FromMemory(Ints({1, 2, 3, 4, 5}), reg);
  auto batched = ops::Batch(src, 2, false, reg);
  auto it = MakeIterator(batched, reg);
  auto batches = Drain(*it);
  REQUIRE(batches.size() == 3);
  CHECK(batches[0].component(0).items().size() == 2);
  CHECK(batches[1].component(0).items().size() == 2);
  CHECK(batches[2].component(0).items().size() == 1);
  CHECK(batches[2].component(0).items()[0].int64() == 5);

  auto dropped = ops::Batch(src, 2, true, reg);
  CHECK(Drain(*MakeIterator(dropped, reg)).size() == 2);

  auto src7 = ops::FromMemory(Ints({1, 2, 3, 4, 5, 6, 7}), reg);
  auto round = ops::Unbatch(ops::Batch(src7, 3, false, reg), reg);
  CHECK(AsInts(Drain(*MakeIterator(round, reg))) ==
        std::vector<int64_t>{1, 2, 3, 4, 5, 6, 7});
}

TEST_CASE("shuffle: identity at n=1, reproducible, full-buffer uniform") {
  UdfRegistry reg;
  auto src = ops::FromMemory(Ints({1, 2, 3, 4, 5}), reg);

  auto identity = ops::Shuffle(src, 1, uint64_t{42}, reg);
  CHECK(AsInts(Drain(*MakeIterator(identity, reg))) ==
        std::vector<int64_t>{1, 2, 3, 4, 5});

  auto shuffled = ops::Shuffle(src, 8, uint64_t{7}, reg);
  auto a = Drain(*MakeIterator(shuffled, reg, Seeded(1)));
  auto b = Drain(*MakeIterator(shuffled, reg, Seeded(1)));
  CHECK(a == b);
  auto c = Drain(*MakeIterator(shuffled, reg, Seeded(2)));
  CHECK(a != c);  // overwhelmingly likely for 5! permutations

  // Multiset preserved.
  auto sorted = AsInts(a);
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<int64_t>{1, 2, 3, 4, 5});

  // Chi-square uniformity over all 120 permutations of 5 elements, 10k
  // trials. Critical value for df=119 at alpha=0.01 is 157.8; staying below
  // it means the permutation distribution is consistent with uniform.
  std::map<std::vector<int64_t>, int> counts;
  const int kTrials = 10000;
  for (int t = 0; t < kTrials; ++t) {
    auto run = AsInts(Drain(*MakeIterator(shuffled, reg, Seeded(1000 + t))));
    counts[run]++;
  }
  CHECK(counts.size() == 120);
  double expected = kTrials / 120.0;
  double chi2 = 0;
  for (const auto& [perm, n] : counts) {
    chi2 += (n - expected) * (n - expected) / expected;
  }
  // Remaining mass for unseen permutations.
  chi2 += (120.0 - counts.size()) * expected;
  CHECK(chi2 < 157.8);
}

TEST_CASE("shard selects congruent positions and partitions the input") {
  UdfRegistry reg;
  auto src = ops::FromMemory(Ints({1, 2, 3, 4}), reg);
  CHECK(AsInts(Drain(*MakeIterator(ops::Shard(src, 2, 0, reg), reg))) ==
        std::vector<int64_t>{1, 3});
  CHECK(AsInts(Drain(*MakeIterator(ops::Shard(src, 1, 0, reg), reg))) ==
        std::vector<int64_t>{1, 2, 3, 4});

  // Union over all indexes reconstructs the input multiset.
  for (int64_t k = 1; k <= 4; ++k) {
    std::multiset<int64_t> got;
    for (int64_t i = 0; i < k; ++i) {
      for (int64_t v :
           AsInts(Drain(*MakeIterator(ops::Shard(src, k, i, reg), reg)))) {
        got.insert(v);
      }
    }
    CHECK(got == std::multiset<int64_t>{1, 2, 3, 4});
  }
}

TEST_CASE("cache materializes once and replays") {
  UdfRegistry reg;
  std::atomic<int> invocations{0};
  reg.RegisterMap("counter", [&invocations](const Element& e) {
    invocations++;
    return e;
  });
  auto src = ops::FromMemory(Ints({1, 2, 3}), reg);
  auto cached = ops::Cache(ops::Map(src, "counter", 1, reg), reg);
  auto g = ops::Repeat(cached, 2, reg);

  auto it = MakeIterator(g, reg);
  CHECK(AsInts(Drain(*it)) == std::vector<int64_t>{1, 2, 3, 1, 2, 3});
  CHECK(invocations.load() == 3);  // once per element, second pass replays

  // A partially consumed first pass recomputes next time.
  invocations = 0;
  {
    auto partial = MakeIterator(g, reg);
    partial->GetNext();
    partial->GetNext();
  }
  CHECK(invocations.load() == 2);
  auto it2 = MakeIterator(g, reg);
  CHECK(AsInts(Drain(*it2)) == std::vector<int64_t>{1, 2, 3, 1, 2, 3});
  CHECK(invocations.load() == 5);  // 2 discarded + 3 for the full pass
}

TEST_CASE("concurrent cache fill is rejected") {
  UdfRegistry reg;
  // Interleave opens two sub-datasets concurrently; both contain a cache at
  // the same tree position, so the second open must fail while the first is
  // mid-fill.
  reg.RegisterDataset(
      "cached_sub",
      [&reg](const Element& e) {
        return ops::Cache(ops::FromMemory({e, e}, reg), reg);
      },
      ElementSpec({TypeSpec::Int64()}));
  auto g = ops::Interleave(ops::FromMemory(Ints({1, 2}), reg), "cached_sub",
                           2, 1, reg);
  auto it = MakeIterator(g, reg);
  try {
    Drain(*it);
    FAIL("expected ConcurrentCacheFill");
  } catch (const PipelineError& e) {
    CHECK(e.code() == ErrorCode::kConcurrentCacheFill);
  }
}

TEST_CASE("zip truncates and concatenate appends") {
  UdfRegistry reg;
  reg.RegisterDataset("unused", [&reg](const Element& e) {
    return ops::FromMemory({e}, reg);
  }, ElementSpec({TypeSpec::Int64()}));
  auto a = ops::FromMemory(Ints({1, 2, 3}), reg);
  auto b = ops::FromMemory({Element::Scalar(Value::Bytes("a")),
                            Element::Scalar(Value::Bytes("b"))},
                           reg);
  auto z = ops::Zip({a, b}, reg);
  auto zs = Drain(*MakeIterator(z, reg));
  REQUIRE(zs.size() == 2);
  CHECK(zs[0].component(0).int64() == 1);
  CHECK(zs[0].component(1).bytes() == "a");
  CHECK(zs[1].component(0).int64() == 2);

  auto c = ops::Concatenate({ops::FromMemory(Ints({1}), reg),
                             ops::FromMemory(Ints({2}), reg)},
                            reg);
  CHECK(AsInts(Drain(*MakeIterator(c, reg))) == std::vector<int64_t>{1, 2});
}

TEST_CASE("reduce folds to a single element") {
  UdfRegistry reg;
  RegisterTestUdfs(reg);
  auto g = ops::Reduce(ops::FromMemory(Ints({1, 2, 3, 4}), reg), "sum2", reg);
  auto it = MakeIterator(g, reg);
  auto out = Drain(*it);
  REQUIRE(out.size() == 1);
  CHECK(out[0].component(0).int64() == 10);
}

TEST_CASE("from_file streams length-prefixed records; missing file fails fast") {
  UdfRegistry reg;
  auto dir = std::filesystem::temp_directory_path() / "datapipe_test_records";
  std::filesystem::create_directories(dir);
  auto path = (dir / "a.rec").string();
  WriteRecordFile(path, {"alpha", "", "gamma"});

  auto g = ops::FromFile({path}, reg);
  auto out = Drain(*MakeIterator(g, reg));
  REQUIRE(out.size() == 3);
  CHECK(out[0].component(0).bytes() == "alpha");
  CHECK(out[1].component(0).bytes() == "");
  CHECK(out[2].component(0).bytes() == "gamma");

  auto missing = ops::FromFile({(dir / "nope.rec").string()}, reg);
  try {
    MakeIterator(missing, reg);
    FAIL("expected MissingFile");
  } catch (const PipelineError& e) {
    CHECK(e.code() == ErrorCode::kMissingFile);
  }
}

TEST_CASE("UdfError carries the element index and the stream continues") {
  UdfRegistry reg;
  reg.RegisterMap("explode_on_3", [](const Element& e) {
    if (e.component(0).int64() == 3) throw std::runtime_error("boom");
    return e;
  });
  auto g = ops::Map(ops::FromMemory(Ints({1, 2, 3, 4}), reg), "explode_on_3",
                    1, reg);
  auto it = MakeIterator(g, reg);
  CHECK(it->GetNext()->component(0).int64() == 1);
  CHECK(it->GetNext()->component(0).int64() == 2);
  try {
    it->GetNext();
    FAIL("expected UdfError");
  } catch (const UdfError& e) {
    CHECK(e.element_index() == 2);  // zero-based input position
  }
  CHECK(it->GetNext()->component(0).int64() == 4);
  CHECK(!it->GetNext().has_value());
}

TEST_CASE("every element conforms to the graph's element spec") {
  UdfRegistry reg;
  RandomGraphGen gen(reg, 99);
  for (int i = 0; i < 50; ++i) {
    DatasetGraph g = gen.Generate();
    auto it = MakeIterator(g, reg, Seeded(7));
    while (auto e = it->GetNext()) {
      CHECK(Conforms(*e, g.element_spec()));
    }
  }
}

TEST_CASE("runtime matches the reference interpreter on random pipelines") {
  UdfRegistry reg;
  RandomGraphGen gen(reg, 2024);
  for (int i = 0; i < 120; ++i) {
    DatasetGraph g = gen.Generate();
    uint64_t seed = 555 + i;
    auto expected = ReferenceEval(g, reg, seed);
    auto got = Drain(*MakeIterator(g, reg, Seeded(seed)));
    REQUIRE_MESSAGE(got.size() == expected.size(), "graph:\n", g.ToString());
    for (size_t j = 0; j < got.size(); ++j) {
      REQUIRE_MESSAGE(got[j] == expected[j], "mismatch at ", j, " in graph\n",
                      g.ToString());
    }
  }
}

TEST_CASE("sequential self-time metrics account for the epoch wall time") {
  UdfRegistry reg;
  reg.RegisterMap("sleep1ms", [](const Element& e) {
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
    return e;
  });
  Attrs attrs = {{"elements", Ints({0, 1, 2, 3, 4, 5, 6, 7, 8, 9})},
                 {"work_ns", int64_t{2'000'000}}};
  auto src = DatasetGraph(Build(NodeKind::kFromMemory, {}, attrs, reg));
  auto g = ops::Map(src, "sleep1ms", 1, reg);

  auto start = std::chrono::steady_clock::now();
  auto it = MakeIterator(g, reg);
  Drain(*it);
  auto wall = std::chrono::duration_cast<std::chrono::nanoseconds>(
                  std::chrono::steady_clock::now() - start)
                  .count();

  int64_t total_self = 0;
  for (const auto& row : it->Metrics()) total_self += row.self_time_ns;
  CHECK(total_self > wall * 0.9);
  CHECK(total_self < wall * 1.1);
}
