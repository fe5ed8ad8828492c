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
#ifndef DATAPIPE_UDF_HPP_
#define DATAPIPE_UDF_HPP_

#include <functional>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "datapipe/element.hpp"
#include "datapipe/graph.hpp"

namespace datapipe {

using MapFn = std::function<Element(const Element&)>;
using PredicateFn = std::function<bool(const Element&)>;
using DatasetFn = std::function<DatasetGraph(const Element&)>;
using BinaryFn = std::function<Element(const Element&, const Element&)>;
using SpecFn = std::function<ElementSpec(const ElementSpec&)>;

// Registry of named user-defined functions referenced by graph nodes.
// Functions must never mutate their inputs. Registration normally happens at
// startup; the static optimizer may add synthesized (composed) entries before
// iterators are created.
class UdfRegistry {
 public:
  struct Entry {
    MapFn map_fn;            // map / map_and_batch
    PredicateFn predicate;   // filter
    DatasetFn dataset_fn;    // flat_map / interleave
    BinaryFn binary_fn;      // reduce
    std::optional<int64_t> cost_hint_ns;
    MapFn vectorized;        // variant operating on a whole batch
    SpecFn output_spec;      // identity when absent
    std::optional<ElementSpec> dataset_spec;  // spec of produced datasets
  };

  UdfRegistry() = default;
  UdfRegistry(const UdfRegistry&) = delete;
  UdfRegistry& operator=(const UdfRegistry&) = delete;

  // Throws DuplicateName if `name` is already present.
  void Register(const std::string& name, Entry entry);

  void RegisterMap(const std::string& name, MapFn fn,
                   std::optional<int64_t> cost_hint_ns = std::nullopt,
                   MapFn vectorized = nullptr, SpecFn output_spec = nullptr);
  void RegisterPredicate(const std::string& name, PredicateFn fn,
                         std::optional<int64_t> cost_hint_ns = std::nullopt);
  void RegisterDataset(const std::string& name, DatasetFn fn,
                       ElementSpec produced_spec);
  void RegisterBinary(const std::string& name, BinaryFn fn,
                      std::optional<int64_t> cost_hint_ns = std::nullopt);

  bool Contains(const std::string& name) const;
  // Throws UnknownUdf.
  const Entry& Get(const std::string& name) const;

  std::optional<int64_t> CostHintNs(const std::string& name) const;

  // Output spec of a map-like UDF for the given input spec. Unregistered
  // names fall back to the identity spec.
  ElementSpec MapOutputSpec(const std::string& name,
                            const ElementSpec& input) const;

  std::vector<std::string> Names() const;

 private:
  mutable std::shared_mutex mu_;
  std::unordered_map<std::string, std::unique_ptr<Entry>> entries_;
};

}  // namespace datapipe

#endif  // DATAPIPE_UDF_HPP_
