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

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gridbox {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

inline ByteView as_bytes(std::string_view s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

inline std::string to_string(ByteView b) {
  return {reinterpret_cast<const char*>(b.data()), b.size()};
}

std::string to_hex(ByteView b);

// Throws std::invalid_argument on odd length or non-hex characters.
Bytes from_hex(std::string_view hex);

void put_u16le(Bytes& out, std::uint16_t v);
void put_u32le(Bytes& out, std::uint32_t v);
void put_u64le(Bytes& out, std::uint64_t v);

std::uint16_t get_u16le(const std::uint8_t* p);
std::uint32_t get_u32le(const std::uint8_t* p);
std::uint64_t get_u64le(const std::uint8_t* p);

struct TruncatedInput : std::runtime_error {
  TruncatedInput() : std::runtime_error("truncated input") {}
};

// Bounds-checked cursor over a byte view.
class ByteReader {
 public:
  explicit ByteReader(ByteView data) : data_(data) {}

  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }
  bool done() const { return pos_ == data_.size(); }

  std::uint8_t u8();
  std::uint16_t u16le();
  std::uint32_t u32le();
  std::uint64_t u64le();
  ByteView take(std::size_t n);

 private:
  void need(std::size_t n) const {
    if (remaining() < n) throw TruncatedInput{};
  }

  ByteView data_;
  std::size_t pos_ = 0;
};

}  // namespace gridbox
