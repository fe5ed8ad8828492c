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
#ifndef DATAPIPE_CODEC_HPP_
#define DATAPIPE_CODEC_HPP_

#include <cstdint>
#include <string>
#include <string_view>

#include "datapipe/element.hpp"
#include "datapipe/errors.hpp"

namespace datapipe {

// Little-endian append-only byte sink.
class ByteWriter {
 public:
  void U8(uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void U16(uint16_t v) {
    for (int i = 0; i < 2; ++i) U8(static_cast<uint8_t>(v >> (8 * i)));
  }
  void U32(uint32_t v) {
    for (int i = 0; i < 4; ++i) U8(static_cast<uint8_t>(v >> (8 * i)));
  }
  void U64(uint64_t v) {
    for (int i = 0; i < 8; ++i) U8(static_cast<uint8_t>(v >> (8 * i)));
  }
  void I64(int64_t v) { U64(static_cast<uint64_t>(v)); }
  void F64(double v);
  void Str(std::string_view s) {
    U32(static_cast<uint32_t>(s.size()));
    out_.append(s);
  }
  void Raw(std::string_view s) { out_.append(s); }

  const std::string& bytes() const { return out_; }
  std::string Take() { return std::move(out_); }

 private:
  std::string out_;
};

// Bounds-checked little-endian reader; throws MalformedInput on truncation.
class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  uint8_t U8();
  uint16_t U16();
  uint32_t U32();
  uint64_t U64();
  int64_t I64() { return static_cast<int64_t>(U64()); }
  double F64();
  std::string Str();

  size_t position() const { return pos_; }
  bool AtEnd() const { return pos_ == data_.size(); }
  void ExpectEnd();

 private:
  void Need(size_t n);

  std::string_view data_;
  size_t pos_ = 0;
};

// Element wire encoding shared by graph serialization and record files.
void EncodeValue(const Value& v, ByteWriter& w);
Value DecodeValue(ByteReader& r);
void EncodeElement(const Element& e, ByteWriter& w);
Element DecodeElement(ByteReader& r);

}  // namespace datapipe

#endif  // DATAPIPE_CODEC_HPP_
