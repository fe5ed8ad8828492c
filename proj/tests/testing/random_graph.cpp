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
#include "testing/random_graph.hpp"

namespace datapipe::testing {

namespace {

Element Int(int64_t v) { return Element::Scalar(Value::Int64(v)); }

int64_t First(const Element& e) { return e.component(0).int64(); }

}  // namespace

// Lifts a scalar int64 transform to whole batches (components are lists).
MapFn VectorizeScalar(std::function<int64_t(int64_t)> fn) {
  return [fn](const Element& e) {
    std::vector<Value> components;
    for (const auto& column : e.components()) {
      std::vector<Value> out;
      out.reserve(column.items().size());
      for (const auto& v : column.items()) {
        out.push_back(Value::Int64(fn(v.int64())));
      }
      components.push_back(Value::List(std::move(out)));
    }
    return Element(std::move(components));
  };
}

void RegisterTestUdfs(UdfRegistry& reg) {
  if (reg.Contains("inc")) return;
  ElementSpec int_spec({TypeSpec::Int64()});

  reg.RegisterMap(
      "inc", [](const Element& e) { return Int(First(e) + 1); }, std::nullopt,
      VectorizeScalar([](int64_t x) { return x + 1; }));
  reg.RegisterMap(
      "times2", [](const Element& e) { return Int(First(e) * 2); },
      std::nullopt, VectorizeScalar([](int64_t x) { return x * 2; }));
  reg.RegisterMap("square",
                  [](const Element& e) { return Int(First(e) * First(e)); });
  reg.RegisterMap(
      "pair_sum",
      [](const Element& e) {
        return Int(e.component(0).int64() + e.component(1).int64());
      },
      std::nullopt, nullptr,
      [int_spec](const ElementSpec&) { return int_spec; });

  reg.RegisterPredicate("even",
                        [](const Element& e) { return First(e) % 2 == 0; });
  reg.RegisterPredicate("positive",
                        [](const Element& e) { return First(e) > 0; });
  reg.RegisterPredicate("gt2", [](const Element& e) { return First(e) > 2; });
  reg.RegisterPredicate("always",
                        [](const Element&) { return true; });

  // element x -> dataset [10x, 10x+1, 10x+2]
  reg.RegisterDataset(
      "expand3",
      [&reg](const Element& e) {
        int64_t x = First(e);
        return ops::FromMemory({Int(10 * x), Int(10 * x + 1), Int(10 * x + 2)},
                               reg);
      },
      int_spec);
  // element x -> dataset of (|x| mod 3 + 1) values
  reg.RegisterDataset(
      "expand_var",
      [&reg](const Element& e) {
        int64_t x = First(e);
        int64_t n = (x < 0 ? -x : x) % 3 + 1;
        std::vector<Element> out;
        for (int64_t i = 0; i < n; ++i) out.push_back(Int(100 * x + i));
        return ops::FromMemory(out, reg);
      },
      int_spec);

  reg.RegisterBinary("sum2", [](const Element& a, const Element& b) {
    return Int(First(a) + First(b));
  });
}

RandomGraphGen::RandomGraphGen(UdfRegistry& reg, uint64_t seed,
                               RandomGraphOptions options)
    : reg_(reg), rng_(seed), options_(options) {
  RegisterTestUdfs(reg_);
}

DatasetGraph RandomGraphGen::GenSource() {
  int n = 1 + static_cast<int>(
                  rng_.Bounded(static_cast<uint32_t>(
                      options_.max_source_elements)));
  std::vector<Element> elems;
  for (int i = 0; i < n; ++i) {
    elems.push_back(Int(static_cast<int64_t>(rng_.Bounded(20)) - 5));
  }
  return ops::FromMemory(std::move(elems), reg_);
}

DatasetGraph RandomGraphGen::Generate() {
  Shape shape = Shape::kInt;
  est_elems_ = static_cast<double>(options_.max_source_elements);
  DatasetGraph g = GenSource();
  int ops_count =
      static_cast<int>(rng_.Bounded(static_cast<uint32_t>(options_.max_ops + 1)));
  for (int i = 0; i < ops_count; ++i) {
    g = ApplyRandomOp(std::move(g), shape, options_.max_ops - i);
  }
  return g;
}

DatasetGraph RandomGraphGen::ApplyRandomOp(DatasetGraph g, Shape& shape,
                                           int budget) {
  // Expanding transformations are gated on an estimated cardinality so
  // random pipelines stay desk-sized.
  bool may_expand = est_elems_ < 600.0;
  auto parallelism = [&]() -> int64_t {
    if (!options_.allow_parallel) return 1;
    switch (rng_.Bounded(4)) {
      case 0:
        return 1;
      case 1:
        return 2;
      case 2:
        return 4;
      default:
        return kAutotune;
    }
  };

  if (shape == Shape::kBatchedInt) {
    switch (rng_.Bounded(5)) {
      case 0: {
        shape = Shape::kInt;
        return ops::Unbatch(g, reg_);
      }
      case 1:
        if (options_.allow_prefetch) return ops::Prefetch(g, 2, reg_);
        return ops::Cache(g, reg_);
      case 2:
        return ops::Repeat(g, 2, reg_);
      case 3:
        return ops::Shuffle(g, 4, rng_.Next(), reg_);
      default:
        return ops::Cache(g, reg_);
    }
  }

  if (shape == Shape::kIntPair) {
    shape = Shape::kInt;
    return ops::Map(g, "pair_sum", parallelism(), reg_);
  }

  switch (rng_.Bounded(19)) {
    case 0:
      return ops::Map(g, rng_.Bounded(2) ? "inc" : "times2", parallelism(),
                      reg_);
    case 1:
      return ops::Filter(g, rng_.Bounded(2) ? "even" : "positive", reg_);
    case 2:
      if (!may_expand) return ops::Map(g, "inc", parallelism(), reg_);
      est_elems_ *= 3;
      return ops::FlatMap(g, "expand3", reg_);
    case 3: {
      if (!may_expand) return ops::Filter(g, "positive", reg_);
      est_elems_ *= 2;
      int64_t cycle = 1 + rng_.Bounded(3);
      int64_t p = options_.allow_parallel
                      ? 1 + rng_.Bounded(static_cast<uint32_t>(cycle))
                      : 1;
      return ops::Interleave(g, "expand_var", cycle, p, reg_);
    }
    case 4: {
      shape = Shape::kBatchedInt;
      return ops::Batch(g, 2 + rng_.Bounded(2), rng_.Bounded(2) == 0, reg_);
    }
    case 5:
      if (options_.allow_prefetch) {
        return ops::Prefetch(g, 1 + rng_.Bounded(4), reg_);
      }
      return ops::Cache(g, reg_);
    case 6: {
      if (!may_expand) return ops::Cache(g, reg_);
      int64_t count = 1 + rng_.Bounded(3);
      est_elems_ *= static_cast<double>(count);
      return ops::Repeat(g, count, reg_);
    }
    case 7:
      return ops::Shuffle(g, 1 + rng_.Bounded(8), rng_.Next(), reg_);
    case 8: {
      int64_t k = 1 + rng_.Bounded(3);
      return ops::Shard(g, k, rng_.Bounded(static_cast<uint32_t>(k)), reg_);
    }
    case 9: {
      shape = Shape::kIntPair;
      return ops::Zip({g, GenSource()}, reg_);
    }
    case 10:
      est_elems_ += options_.max_source_elements;
      return ops::Concatenate({g, GenSource()}, reg_);
    case 11:
      return ops::Cache(g, reg_);
    case 12:
      if (budget >= 2) return ops::Reduce(g, "sum2", reg_);
      return ops::Map(g, "inc", parallelism(), reg_);
    case 13:
      return ops::Map(g, "square", 1, reg_);
    // Adjacent pairs that the rewrite rules target.
    case 14:
      return ops::Map(ops::Map(g, "inc", parallelism(), reg_),
                      rng_.Bounded(2) ? "times2" : "square", parallelism(),
                      reg_);
    case 15: {
      shape = Shape::kBatchedInt;
      return ops::Batch(ops::Map(g, rng_.Bounded(2) ? "times2" : "square",
                                 parallelism(), reg_),
                        2 + rng_.Bounded(2), rng_.Bounded(2) == 0, reg_);
    }
    case 16:
      return ops::Filter(ops::Filter(g, "positive", reg_), "even", reg_);
    case 17:
      return ops::Filter(ops::Map(g, "inc", parallelism(), reg_), "even",
                         reg_);
    default: {
      if (!may_expand) return ops::Shuffle(g, 4, rng_.Next(), reg_);
      int64_t count = 1 + rng_.Bounded(2);
      est_elems_ *= static_cast<double>(count);
      return ops::Repeat(ops::Shuffle(g, 4, rng_.Next(), reg_), count, reg_);
    }
  }
}

}  // namespace datapipe::testing
