// Copyright 2026 The Gridbox Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "gridbox/bytes.hpp"

namespace gridbox {

struct InvalidName : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// [a-z0-9-]{1,32}; ordered lexicographically.
class SiteId {
 public:
  SiteId() = default;
  explicit SiteId(std::string value);

  static bool valid(std::string_view s);

  const std::string& str() const { return value_; }
  bool empty() const { return value_.empty(); }

  auto operator<=>(const SiteId&) const = default;

 private:
  std::string value_;
};

// Absolute '/'-separated logical file name.
class Lfn {
 public:
  Lfn() = default;
  explicit Lfn(std::string value);

  static bool valid(std::string_view s);
  static constexpr std::size_t kMaxSegments = 16;
  static constexpr std::size_t kMaxSegmentLength = 64;

  const std::string& str() const { return value_; }
  std::string_view basename() const;

  auto operator<=>(const Lfn&) const = default;

 private:
  std::string value_;
};

// 16 bytes minted by the origin site, derived from the site and the file identity.
struct Guid {
  std::array<std::uint8_t, 16> bytes{};

  std::string hex() const { return to_hex(bytes); }
  static Guid from_hex(std::string_view hex);

  auto operator<=>(const Guid&) const = default;
};

}  // namespace gridbox

template <>
struct std::hash<gridbox::Guid> {
  std::size_t operator()(const gridbox::Guid& g) const noexcept {
    std::size_t h = 0;
    for (auto b : g.bytes) h = h * 131 + b;
    return h;
  }
};
