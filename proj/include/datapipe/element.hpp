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
#ifndef DATAPIPE_ELEMENT_HPP_
#define DATAPIPE_ELEMENT_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "datapipe/errors.hpp"

namespace datapipe {

// A single value inside an element. Tensors are represented as nested
// homogeneous lists; composite values as tuples.
class Value {
 public:
  enum class Kind : uint8_t {
    kInt64 = 0,
    kFloat64 = 1,
    kBytes = 2,
    kBool = 3,
    kList = 4,
    kTuple = 5,
  };

  static Value Int64(int64_t v) { return Value(v); }
  static Value Float64(double v) { return Value(v); }
  static Value Bytes(std::string v) { return Value(BytesBox{std::move(v)}); }
  static Value Bool(bool v) { return Value(BoolBox{v}); }
  // Throws ValidationFailed if items are not homogeneous (same kind
  // structure, list lengths ignored).
  static Value List(std::vector<Value> items);
  static Value Tuple(std::vector<Value> items) {
    return Value(TupleBox{std::move(items)});
  }

  Kind kind() const { return static_cast<Kind>(v_.index()); }

  int64_t int64() const { return std::get<int64_t>(v_); }
  double float64() const { return std::get<double>(v_); }
  const std::string& bytes() const { return std::get<BytesBox>(v_).data; }
  bool boolean() const { return std::get<BoolBox>(v_).data; }
  const std::vector<Value>& items() const;

  bool operator==(const Value& other) const;
  bool operator!=(const Value& other) const { return !(*this == other); }

  std::string ToString() const;

  // Approximate in-memory footprint, used for RAM budgeting.
  size_t ByteSize() const;

 private:
  struct BytesBox {
    std::string data;
    bool operator==(const BytesBox&) const = default;
  };
  struct BoolBox {
    bool data;
    bool operator==(const BoolBox&) const = default;
  };
  struct ListBox {
    std::vector<Value> items;
    bool operator==(const ListBox&) const = default;
  };
  struct TupleBox {
    std::vector<Value> items;
    bool operator==(const TupleBox&) const = default;
  };

  using Storage =
      std::variant<int64_t, double, BytesBox, BoolBox, ListBox, TupleBox>;

  explicit Value(Storage v) : v_(std::move(v)) {}

  Storage v_;
};

// Static type of a single value. Lists carry an optional known length.
class TypeSpec {
 public:
  static TypeSpec Int64() { return TypeSpec(Value::Kind::kInt64); }
  static TypeSpec Float64() { return TypeSpec(Value::Kind::kFloat64); }
  static TypeSpec Bytes() { return TypeSpec(Value::Kind::kBytes); }
  static TypeSpec Bool() { return TypeSpec(Value::Kind::kBool); }
  static TypeSpec List(TypeSpec inner,
                       std::optional<uint64_t> length = std::nullopt);
  static TypeSpec Tuple(std::vector<TypeSpec> members);

  Value::Kind kind() const { return kind_; }
  const TypeSpec& inner() const { return nested_[0]; }
  const std::vector<TypeSpec>& members() const { return nested_; }
  std::optional<uint64_t> length() const { return length_; }

  bool Matches(const Value& v) const;

  // Structural equality including known lengths.
  bool operator==(const TypeSpec& other) const;
  bool operator!=(const TypeSpec& other) const { return !(*this == other); }

  // Equality ignoring list lengths; used for homogeneity checks.
  bool SameShape(const TypeSpec& other) const;

  std::string ToString() const;

 private:
  explicit TypeSpec(Value::Kind kind) : kind_(kind) {}

  Value::Kind kind_;
  std::vector<TypeSpec> nested_;          // inner type (list) or members (tuple)
  std::optional<uint64_t> length_;        // lists only
};

// Infers the exact type of a value (list lengths become known lengths).
TypeSpec TypeOf(const Value& v);

// One record flowing through a pipeline: a non-empty ordered tuple of values.
class Element {
 public:
  explicit Element(std::vector<Value> components);

  static Element Scalar(Value v) {
    std::vector<Value> c;
    c.push_back(std::move(v));
    return Element(std::move(c));
  }

  const std::vector<Value>& components() const { return components_; }
  size_t arity() const { return components_.size(); }
  const Value& component(size_t i) const { return components_[i]; }

  bool operator==(const Element& other) const {
    return components_ == other.components_;
  }
  bool operator!=(const Element& other) const { return !(*this == other); }

  std::string ToString() const;
  size_t ByteSize() const;

 private:
  std::vector<Value> components_;
};

// The static type signature of dataset elements.
class ElementSpec {
 public:
  ElementSpec() = default;
  explicit ElementSpec(std::vector<TypeSpec> components)
      : components_(std::move(components)) {}

  const std::vector<TypeSpec>& components() const { return components_; }
  size_t arity() const { return components_.size(); }

  bool operator==(const ElementSpec& other) const {
    return components_ == other.components_;
  }
  bool operator!=(const ElementSpec& other) const { return !(*this == other); }

  std::string ToString() const;

 private:
  std::vector<TypeSpec> components_;
};

// True iff `elem` has the same arity as `spec` and each component matches its
// TypeSpec recursively. Total and side-effect free.
bool Conforms(const Element& elem, const ElementSpec& spec);

ElementSpec SpecOf(const Element& elem);

}  // namespace datapipe

#endif  // DATAPIPE_ELEMENT_HPP_
