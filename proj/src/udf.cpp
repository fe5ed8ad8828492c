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
#include "datapipe/udf.hpp"

#include <mutex>

#include "datapipe/errors.hpp"

namespace datapipe {

void UdfRegistry::Register(const std::string& name, Entry entry) {
  std::unique_lock lock(mu_);
  auto [it, inserted] =
      entries_.emplace(name, std::make_unique<Entry>(std::move(entry)));
  if (!inserted) {
    throw PipelineError(ErrorCode::kDuplicateName,
                        "UDF already registered: " + name);
  }
}

void UdfRegistry::RegisterMap(const std::string& name, MapFn fn,
                              std::optional<int64_t> cost_hint_ns,
                              MapFn vectorized, SpecFn output_spec) {
  Entry e;
  e.map_fn = std::move(fn);
  e.cost_hint_ns = cost_hint_ns;
  e.vectorized = std::move(vectorized);
  e.output_spec = std::move(output_spec);
  Register(name, std::move(e));
}

void UdfRegistry::RegisterPredicate(const std::string& name, PredicateFn fn,
                                    std::optional<int64_t> cost_hint_ns) {
  Entry e;
  e.predicate = std::move(fn);
  e.cost_hint_ns = cost_hint_ns;
  Register(name, std::move(e));
}

void UdfRegistry::RegisterDataset(const std::string& name, DatasetFn fn,
                                  ElementSpec produced_spec) {
  Entry e;
  e.dataset_fn = std::move(fn);
  e.dataset_spec = std::move(produced_spec);
  Register(name, std::move(e));
}

void UdfRegistry::RegisterBinary(const std::string& name, BinaryFn fn,
                                 std::optional<int64_t> cost_hint_ns) {
  Entry e;
  e.binary_fn = std::move(fn);
  e.cost_hint_ns = cost_hint_ns;
  Register(name, std::move(e));
}

bool UdfRegistry::Contains(const std::string& name) const {
  std::shared_lock lock(mu_);
  return entries_.count(name) > 0;
}

const UdfRegistry::Entry& UdfRegistry::Get(const std::string& name) const {
  std::shared_lock lock(mu_);
  auto it = entries_.find(name);
  if (it == entries_.end()) {
    throw PipelineError(ErrorCode::kUnknownUdf, "UDF not registered: " + name);
  }
  return *it->second;
}

std::optional<int64_t> UdfRegistry::CostHintNs(const std::string& name) const {
  std::shared_lock lock(mu_);
  auto it = entries_.find(name);
  if (it == entries_.end()) return std::nullopt;
  return it->second->cost_hint_ns;
}

ElementSpec UdfRegistry::MapOutputSpec(const std::string& name,
                                       const ElementSpec& input) const {
  std::shared_lock lock(mu_);
  auto it = entries_.find(name);
  if (it == entries_.end() || !it->second->output_spec) return input;
  return it->second->output_spec(input);
}

std::vector<std::string> UdfRegistry::Names() const {
  std::shared_lock lock(mu_);
  std::vector<std::string> names;
  names.reserve(entries_.size());
  for (const auto& [name, _] : entries_) names.push_back(name);
  return names;
}

}  // namespace datapipe
