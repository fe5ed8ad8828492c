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
#include "datapipe/codec.hpp"

#include <cstring>

namespace datapipe {

void ByteWriter::F64(double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  U64(bits);
}

void ByteReader::Need(size_t n) {
  if (pos_ + n > data_.size()) {
    throw MalformedInputError(pos_, "unexpected end of input (need " +
                                        std::to_string(n) + " bytes)");
  }
}

uint8_t ByteReader::U8() {
  Need(1);
  return static_cast<uint8_t>(data_[pos_++]);
}

uint16_t ByteReader::U16() {
  Need(2);
  uint16_t v = 0;
  for (int i = 0; i < 2; ++i) v |= uint16_t(uint8_t(data_[pos_ + i])) << (8 * i);
  pos_ += 2;
  return v;
}

uint32_t ByteReader::U32() {
  Need(4);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(data_[pos_ + i])) << (8 * i);
  pos_ += 4;
  return v;
}

uint64_t ByteReader::U64() {
  Need(8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= uint64_t(uint8_t(data_[pos_ + i])) << (8 * i);
  pos_ += 8;
  return v;
}

double ByteReader::F64() {
  uint64_t bits = U64();
  double v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

std::string ByteReader::Str() {
  uint32_t n = U32();
  Need(n);
  std::string s(data_.substr(pos_, n));
  pos_ += n;
  return s;
}

void ByteReader::ExpectEnd() {
  if (!AtEnd()) {
    throw MalformedInputError(pos_, "trailing bytes after payload");
  }
}

void EncodeValue(const Value& v, ByteWriter& w) {
  w.U8(static_cast<uint8_t>(v.kind()));
  switch (v.kind()) {
    case Value::Kind::kInt64:
      w.I64(v.int64());
      break;
    case Value::Kind::kFloat64:
      w.F64(v.float64());
      break;
    case Value::Kind::kBytes:
      w.Str(v.bytes());
      break;
    case Value::Kind::kBool:
      w.U8(v.boolean() ? 1 : 0);
      break;
    case Value::Kind::kList:
    case Value::Kind::kTuple:
      w.U32(static_cast<uint32_t>(v.items().size()));
      for (const auto& item : v.items()) EncodeValue(item, w);
      break;
  }
}

Value DecodeValue(ByteReader& r) {
  size_t tag_pos = r.position();
  uint8_t tag = r.U8();
  switch (static_cast<Value::Kind>(tag)) {
    case Value::Kind::kInt64:
      return Value::Int64(r.I64());
    case Value::Kind::kFloat64:
      return Value::Float64(r.F64());
    case Value::Kind::kBytes:
      return Value::Bytes(r.Str());
    case Value::Kind::kBool:
      return Value::Bool(r.U8() != 0);
    case Value::Kind::kList:
    case Value::Kind::kTuple: {
      uint32_t n = r.U32();
      std::vector<Value> items;
      items.reserve(n);
      for (uint32_t i = 0; i < n; ++i) items.push_back(DecodeValue(r));
      if (static_cast<Value::Kind>(tag) == Value::Kind::kList) {
        return Value::List(std::move(items));
      }
      return Value::Tuple(std::move(items));
    }
  }
  throw MalformedInputError(tag_pos, "unknown value tag " + std::to_string(tag));
}

void EncodeElement(const Element& e, ByteWriter& w) {
  w.U8(static_cast<uint8_t>(e.arity()));
  for (const auto& v : e.components()) EncodeValue(v, w);
}

Element DecodeElement(ByteReader& r) {
  size_t pos = r.position();
  uint8_t arity = r.U8();
  if (arity == 0) {
    throw MalformedInputError(pos, "element with zero components");
  }
  std::vector<Value> components;
  components.reserve(arity);
  for (uint8_t i = 0; i < arity; ++i) components.push_back(DecodeValue(r));
  return Element(std::move(components));
}

}  // namespace datapipe
