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

#include "gridbox/types.hpp"

#include <algorithm>

namespace gridbox {

namespace {
bool segment_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '.' ||
         c == '_' || c == '-';
}
}  // namespace

SiteId::SiteId(std::string value) : value_(std::move(value)) {
  if (!valid(value_)) throw InvalidName("invalid site id '" + value_ + "'");
}

bool SiteId::valid(std::string_view s) {
  if (s.empty() || s.size() > 32) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-';
  });
}

Lfn::Lfn(std::string value) : value_(std::move(value)) {
  if (!valid(value_)) throw InvalidName("invalid lfn '" + value_ + "'");
}

bool Lfn::valid(std::string_view s) {
  if (s.size() < 2 || s.front() != '/') return false;
  std::size_t segments = 0;
  std::size_t pos = 1;
  while (pos <= s.size()) {
    std::size_t end = s.find('/', pos);
    if (end == std::string_view::npos) end = s.size();
    auto seg = s.substr(pos, end - pos);
    if (seg.empty() || seg.size() > kMaxSegmentLength || seg == "." || seg == "..") return false;
    if (!std::all_of(seg.begin(), seg.end(), segment_char)) return false;
    if (++segments > kMaxSegments) return false;
    pos = end + 1;
  }
  return true;
}

std::string_view Lfn::basename() const {
  std::string_view v = value_;
  return v.substr(v.rfind('/') + 1);
}

Guid Guid::from_hex(std::string_view hex) {
  auto raw = gridbox::from_hex(hex);
  if (raw.size() != 16) throw std::invalid_argument("guid must be 16 bytes");
  Guid g;
  std::copy(raw.begin(), raw.end(), g.bytes.begin());
  return g;
}

}  // namespace gridbox
