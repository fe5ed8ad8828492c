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
#include <chrono>
#include <set>
#include <thread>

#include "datapipe/runtime.hpp"
#include "doctest.h"
#include "testing/random_graph.hpp"
#include "testing/reference.hpp"

using namespace datapipe;
using namespace std::chrono;
using datapipe::testing::RandomGraphGen;
using datapipe::testing::ReferenceEval;

namespace {

Element Int(int64_t v) { return Element::Scalar(Value::Int64(v)); }

std::vector<Element> IntRange(int64_t n) {
  std::vector<Element> out;
  for (int64_t i = 0; i < n; ++i) out.push_back(Int(i));
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

IteratorOptions Opts(bool deterministic, uint64_t seed) {
  IteratorOptions o;
  o.deterministic = deterministic;
  o.seed_override = seed;
  return o;
}

double WallMs(const std::function<void()>& f) {
  auto start = steady_clock::now();
  f();
  return duration_cast<microseconds>(steady_clock::now() - start).count() /
         1000.0;
}

}  // namespace

TEST_CASE("parallel map overlaps UDF applications") {
  UdfRegistry reg;
  reg.RegisterMap("sleep2ms", [](const Element& e) {
    std::this_thread::sleep_for(milliseconds(2));
    return e;
  });
  auto src = ops::FromMemory(IntRange(10), reg);

  auto sequential = ops::Map(src, "sleep2ms", 1, reg);
  double seq_ms = WallMs([&] {
    auto it = MakeIterator(sequential, reg);
    Drain(*it);
  });
  CHECK(seq_ms >= 18.0);  // 10 x 2ms, sequential

  auto parallel = ops::Map(src, "sleep2ms", 10, reg);
  double par_ms = WallMs([&] {
    auto it = MakeIterator(parallel, reg);
    Drain(*it);
  });
  // All ten applications run concurrently: close to one element's cost.
  CHECK(par_ms < 12.0);
}

TEST_CASE("deterministic parallel map preserves order under stragglers") {
  UdfRegistry reg;
  reg.RegisterMap("straggle_first", [](const Element& e) {
    if (e.component(0).int64() == 0) {
      std::this_thread::sleep_for(milliseconds(40));
    } else {
      std::this_thread::sleep_for(milliseconds(1));
    }
    return e;
  });
  auto g = ops::Map(ops::FromMemory(IntRange(8), reg), "straggle_first", 4,
                    reg);
  auto it = MakeIterator(g, reg, Opts(true, 1));
  CHECK(AsInts(Drain(*it)) ==
        std::vector<int64_t>{0, 1, 2, 3, 4, 5, 6, 7});
}

TEST_CASE("nondeterministic parallel map reorders stragglers, same multiset") {
  UdfRegistry reg;
  reg.RegisterMap("straggle_first_nd", [](const Element& e) {
    if (e.component(0).int64() == 0) {
      std::this_thread::sleep_for(milliseconds(50));
    }
    return e;
  });
  auto g = ops::Map(ops::FromMemory(IntRange(8), reg), "straggle_first_nd", 4,
                    reg);
  auto it = MakeIterator(g, reg, Opts(false, 1));
  auto got = AsInts(Drain(*it));
  REQUIRE(got.size() == 8);
  // The straggler (0) must not be first: later elements finish well before
  // its 50ms sleep does.
  CHECK(got.front() != 0);
  std::multiset<int64_t> ms(got.begin(), got.end());
  std::multiset<int64_t> want;
  for (int64_t i = 0; i < 8; ++i) want.insert(i);
  CHECK(ms == want);
}

TEST_CASE("parallel interleave overlaps source reads") {
  UdfRegistry reg;
  // Each source produces 10 elements at 5ms apiece (sleep = IO-like).
  reg.RegisterDataset(
      "slow_source",
      [&reg](const Element& e) {
        int64_t t = e.component(0).int64();
        std::vector<Element> elems;
        for (int64_t i = 0; i < 10; ++i) elems.push_back(Int(100 * t + i));
        Attrs attrs = {{"elements", std::move(elems)},
                       {"work_ns", int64_t{5'000'000}}};
        return DatasetGraph(Build(NodeKind::kFromMemory, {}, attrs, reg));
      },
      ElementSpec({TypeSpec::Int64()}));

  auto tokens = ops::FromMemory(IntRange(2), reg);

  auto seq = ops::Interleave(tokens, "slow_source", 2, 1, reg);
  double seq_ms = WallMs([&] {
    auto it = MakeIterator(seq, reg, Opts(true, 1));
    CHECK(Drain(*it).size() == 20);
  });
  CHECK(seq_ms >= 90.0);  // 20 x 5ms produced one at a time

  auto par = ops::Interleave(tokens, "slow_source", 2, 2, reg);
  double par_ms = WallMs([&] {
    auto it = MakeIterator(par, reg, Opts(true, 1));
    auto out = Drain(*it);
    CHECK(out.size() == 20);
  });
  // Two concurrent readers: aggregate period halves.
  CHECK(par_ms < 75.0);

  // Parallel fetching must not change the deterministic sequence.
  auto a = Drain(*MakeIterator(seq, reg, Opts(true, 3)));
  auto b = Drain(*MakeIterator(par, reg, Opts(true, 3)));
  CHECK(a == b);
}

TEST_CASE("prefetch hides producer latency from a slower consumer") {
  UdfRegistry reg;
  // Producer period 7ms, consumer period 10ms, buffer 1.
  Attrs attrs = {{"elements", IntRange(15)}, {"work_ns", int64_t{7'000'000}}};
  auto src = DatasetGraph(Build(NodeKind::kFromMemory, {}, attrs, reg));
  auto g = ops::Prefetch(src, 1, reg);
  auto it = MakeIterator(g, reg);

  // Warm up: first element pays the full production cost.
  it->GetNext();
  std::vector<double> waits;
  for (int i = 0; i < 10; ++i) {
    std::this_thread::sleep_for(milliseconds(10));
    waits.push_back(WallMs([&] { it->GetNext(); }));
  }
  double avg = 0;
  for (double w : waits) avg += w;
  avg /= waits.size();
  // Steady state: the buffer refills during the consumer's 10ms gap.
  CHECK(avg < 2.0);
}

TEST_CASE("prefetch burst after idle drains the full buffer immediately") {
  UdfRegistry reg;
  Attrs attrs = {{"elements", IntRange(16)}, {"work_ns", int64_t{5'000'000}}};
  auto src = DatasetGraph(Build(NodeKind::kFromMemory, {}, attrs, reg));
  auto g = ops::Prefetch(src, 4, reg);
  auto it = MakeIterator(g, reg);

  it->GetNext();
  std::this_thread::sleep_for(milliseconds(40));  // buffer fills to 4
  for (int i = 0; i < 4; ++i) {
    double ms = WallMs([&] { CHECK(it->GetNext().has_value()); });
    CHECK(ms < 2.0);
  }
  // The fifth pull has to wait for production again.
  double ms = WallMs([&] { CHECK(it->GetNext().has_value()); });
  CHECK(ms > 2.0);
}

TEST_CASE("async buffers never exceed their capacity") {
  UdfRegistry reg;
  reg.RegisterMap("tiny_sleep", [](const Element& e) {
    std::this_thread::sleep_for(microseconds(300));
    return e;
  });
  auto src = ops::FromMemory(IntRange(60), reg);
  auto g = ops::Prefetch(
      ops::Map(ops::Prefetch(src, 3, reg), "tiny_sleep", 4, reg), 2, reg);
  auto it = MakeIterator(g, reg, Opts(true, 1));
  // Slow consumer lets buffers saturate.
  while (auto e = it->GetNext()) {
    std::this_thread::sleep_for(microseconds(500));
  }
  auto model = it->model();
  auto snapshot = model->Snapshot();
  REQUIRE(snapshot.has_value());
  struct Walk {
    const autotune::Model& model;
    void operator()(const autotune::SnapshotNode& n) {
      auto node = model.Find(n.path);
      REQUIRE(node != nullptr);
      if (n.cls == autotune::NodeClass::kAsyncQueue) {
        CHECK(node->PeakBuffered() <= static_cast<int64_t>(n.buffer));
      }
      for (const auto& c : n.children) (*this)(c);
    }
  } walk{*model};
  walk(*snapshot);
}

TEST_CASE("UdfError in deterministic parallel map lands on its slot") {
  UdfRegistry reg;
  reg.RegisterMap("explode_on_2", [](const Element& e) {
    if (e.component(0).int64() == 2) throw std::runtime_error("kaboom");
    return e;
  });
  auto g = ops::Map(ops::FromMemory(IntRange(6), reg), "explode_on_2", 3, reg);
  auto it = MakeIterator(g, reg, Opts(true, 1));
  CHECK(it->GetNext()->component(0).int64() == 0);
  CHECK(it->GetNext()->component(0).int64() == 1);
  try {
    it->GetNext();
    FAIL("expected UdfError");
  } catch (const UdfError& e) {
    CHECK(e.element_index() == 2);
  }
  CHECK(it->GetNext()->component(0).int64() == 3);
  CHECK(it->GetNext()->component(0).int64() == 4);
  CHECK(it->GetNext()->component(0).int64() == 5);
  CHECK(!it->GetNext().has_value());
}

namespace {

// Nondeterministic mode reorders elements before grouping ops regroup them,
// so the invariant compares leaf-value multisets.
void FlattenValue(const Value& v, std::multiset<std::string>& out) {
  if (v.kind() == Value::Kind::kList || v.kind() == Value::Kind::kTuple) {
    for (const auto& item : v.items()) FlattenValue(item, out);
  } else {
    out.insert(v.ToString());
  }
}

std::multiset<std::string> FlattenedMultiset(const std::vector<Element>& es) {
  std::multiset<std::string> out;
  for (const auto& e : es) {
    for (const auto& v : e.components()) FlattenValue(v, out);
  }
  return out;
}

}  // namespace

TEST_CASE("nondeterministic random pipelines preserve the multiset") {
  UdfRegistry reg;
  RandomGraphGen gen(reg, 777);
  for (int i = 0; i < 40; ++i) {
    DatasetGraph g = gen.Generate();
    uint64_t seed = 40 + i;
    auto expected = ReferenceEval(g, reg, seed);
    auto got = Drain(*MakeIterator(g, reg, Opts(false, seed)));
    REQUIRE_MESSAGE(FlattenedMultiset(expected) == FlattenedMultiset(got),
                    "graph:\n", g.ToString());
  }
}

TEST_CASE("deterministic parallel settings do not change the sequence") {
  UdfRegistry reg;
  datapipe::testing::RegisterTestUdfs(reg);
  auto src = ops::FromMemory(IntRange(12), reg);
  auto base = ops::Batch(
      ops::Map(ops::Filter(ops::Map(src, "inc", 1, reg), "even", reg),
               "times2", 1, reg),
      3, false, reg);
  auto wide = ops::Batch(
      ops::Map(ops::Filter(ops::Map(src, "inc", 7, reg), "even", reg),
               "times2", 5, reg),
      3, false, reg);
  auto a = Drain(*MakeIterator(base, reg, Opts(true, 9)));
  auto b = Drain(*MakeIterator(wide, reg, Opts(true, 9)));
  CHECK(a == b);
}
