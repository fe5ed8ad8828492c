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
#ifndef DATAPIPE_FINGERPRINT_HPP_
#define DATAPIPE_FINGERPRINT_HPP_

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace datapipe {

// 256-bit digest identifying a pipeline graph modulo random seeds.
struct Fingerprint {
  std::array<uint8_t, 32> digest{};

  bool operator==(const Fingerprint&) const = default;

  std::string ToHex() const;
  static Fingerprint FromHex(const std::string& hex);
};

// SHA-256 of `data` (FIPS 180-4).
Fingerprint Sha256(std::string_view data);

}  // namespace datapipe

#endif  // DATAPIPE_FINGERPRINT_HPP_
