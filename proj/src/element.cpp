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
#include "datapipe/element.hpp"

#include <sstream>

namespace datapipe {

Value Value::List(std::vector<Value> items) {
  if (!items.empty()) {
    TypeSpec first = TypeOf(items[0]);
    for (size_t i = 1; i < items.size(); ++i) {
      if (!TypeOf(items[i]).SameShape(first)) {
        throw PipelineError(ErrorCode::kValidationFailed,
                            "list items are not homogeneous: item " +
                                std::to_string(i) + " has type " +
                                TypeOf(items[i]).ToString() + ", expected " +
                                first.ToString());
      }
    }
  }
  return Value(ListBox{std::move(items)});
}

const std::vector<Value>& Value::items() const {
  if (kind() == Kind::kList) return std::get<ListBox>(v_).items;
  return std::get<TupleBox>(v_).items;
}

bool Value::operator==(const Value& other) const { return v_ == other.v_; }

std::string Value::ToString() const {
  std::ostringstream os;
  switch (kind()) {
    case Kind::kInt64:
      os << int64();
      break;
    case Kind::kFloat64:
      os << float64();
      break;
    case Kind::kBytes:
      os << '"' << bytes() << '"';
      break;
    case Kind::kBool:
      os << (boolean() ? "true" : "false");
      break;
    case Kind::kList:
    case Kind::kTuple: {
      os << (kind() == Kind::kList ? '[' : '(');
      const auto& xs = items();
      for (size_t i = 0; i < xs.size(); ++i) {
        if (i) os << ", ";
        os << xs[i].ToString();
      }
      os << (kind() == Kind::kList ? ']' : ')');
      break;
    }
  }
  return os.str();
}

size_t Value::ByteSize() const {
  switch (kind()) {
    case Kind::kInt64:
      return 8;
    case Kind::kFloat64:
      return 8;
    case Kind::kBool:
      return 1;
    case Kind::kBytes:
      return bytes().size() + 8;
    case Kind::kList:
    case Kind::kTuple: {
      size_t total = 8;
      for (const auto& v : items()) total += v.ByteSize();
      return total;
    }
  }
  return 0;
}

TypeSpec TypeSpec::List(TypeSpec inner, std::optional<uint64_t> length) {
  TypeSpec t(Value::Kind::kList);
  t.nested_.push_back(std::move(inner));
  t.length_ = length;
  return t;
}

TypeSpec TypeSpec::Tuple(std::vector<TypeSpec> members) {
  TypeSpec t(Value::Kind::kTuple);
  t.nested_ = std::move(members);
  return t;
}

bool TypeSpec::Matches(const Value& v) const {
  if (v.kind() != kind_) return false;
  switch (kind_) {
    case Value::Kind::kInt64:
    case Value::Kind::kFloat64:
    case Value::Kind::kBytes:
    case Value::Kind::kBool:
      return true;
    case Value::Kind::kList: {
      if (length_ && v.items().size() != *length_) return false;
      for (const auto& item : v.items()) {
        if (!inner().Matches(item)) return false;
      }
      return true;
    }
    case Value::Kind::kTuple: {
      if (v.items().size() != nested_.size()) return false;
      for (size_t i = 0; i < nested_.size(); ++i) {
        if (!nested_[i].Matches(v.items()[i])) return false;
      }
      return true;
    }
  }
  return false;
}

bool TypeSpec::operator==(const TypeSpec& other) const {
  return kind_ == other.kind_ && length_ == other.length_ &&
         nested_ == other.nested_;
}

bool TypeSpec::SameShape(const TypeSpec& other) const {
  if (kind_ != other.kind_) return false;
  if (nested_.size() != other.nested_.size()) return false;
  for (size_t i = 0; i < nested_.size(); ++i) {
    if (!nested_[i].SameShape(other.nested_[i])) return false;
  }
  return true;
}

std::string TypeSpec::ToString() const {
  switch (kind_) {
    case Value::Kind::kInt64:
      return "int64";
    case Value::Kind::kFloat64:
      return "float64";
    case Value::Kind::kBytes:
      return "bytes";
    case Value::Kind::kBool:
      return "bool";
    case Value::Kind::kList: {
      std::string s = "list[" + inner().ToString();
      if (length_) s += " len " + std::to_string(*length_);
      return s + "]";
    }
    case Value::Kind::kTuple: {
      std::string s = "tuple(";
      for (size_t i = 0; i < nested_.size(); ++i) {
        if (i) s += ", ";
        s += nested_[i].ToString();
      }
      return s + ")";
    }
  }
  return "?";
}

TypeSpec TypeOf(const Value& v) {
  switch (v.kind()) {
    case Value::Kind::kInt64:
      return TypeSpec::Int64();
    case Value::Kind::kFloat64:
      return TypeSpec::Float64();
    case Value::Kind::kBytes:
      return TypeSpec::Bytes();
    case Value::Kind::kBool:
      return TypeSpec::Bool();
    case Value::Kind::kList: {
      // Empty lists default to an int64 inner type.
      TypeSpec inner =
          v.items().empty() ? TypeSpec::Int64() : TypeOf(v.items()[0]);
      return TypeSpec::List(std::move(inner), v.items().size());
    }
    case Value::Kind::kTuple: {
      std::vector<TypeSpec> members;
      members.reserve(v.items().size());
      for (const auto& item : v.items()) members.push_back(TypeOf(item));
      return TypeSpec::Tuple(std::move(members));
    }
  }
  return TypeSpec::Int64();
}

Element::Element(std::vector<Value> components)
    : components_(std::move(components)) {
  if (components_.empty()) {
    throw PipelineError(ErrorCode::kValidationFailed,
                        "element must have at least one component");
  }
}

std::string Element::ToString() const {
  std::string s = "<";
  for (size_t i = 0; i < components_.size(); ++i) {
    if (i) s += ", ";
    s += components_[i].ToString();
  }
  return s + ">";
}

size_t Element::ByteSize() const {
  size_t total = 0;
  for (const auto& v : components_) total += v.ByteSize();
  return total;
}

std::string ElementSpec::ToString() const {
  std::string s = "<";
  for (size_t i = 0; i < components_.size(); ++i) {
    if (i) s += ", ";
    s += components_[i].ToString();
  }
  return s + ">";
}

bool Conforms(const Element& elem, const ElementSpec& spec) {
  if (elem.arity() != spec.arity()) return false;
  for (size_t i = 0; i < elem.arity(); ++i) {
    if (!spec.components()[i].Matches(elem.component(i))) return false;
  }
  return true;
}

ElementSpec SpecOf(const Element& elem) {
  std::vector<TypeSpec> specs;
  specs.reserve(elem.arity());
  for (const auto& v : elem.components()) specs.push_back(TypeOf(v));
  return ElementSpec(std::move(specs));
}

}  // namespace datapipe
