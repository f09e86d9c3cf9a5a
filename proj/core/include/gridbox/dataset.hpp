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

#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "gridbox/bytes.hpp"
#include "gridbox/crypto.hpp"

// MGD: a closed, explicit-VR little-endian subset of the DICOM file format.
namespace gridbox::dataset {

struct Tag {
  std::uint16_t group = 0;
  std::uint16_t element = 0;

  auto operator<=>(const Tag&) const = default;
  std::string str() const;  // "(gggg,eeee)"
};

enum class Vr : std::uint8_t { UI, LO, PN, DA, AS, CS, SH, US, UL, DS, OB };

std::string_view vr_code(Vr vr);
std::optional<Vr> vr_from_code(char a, char b);
bool is_string_vr(Vr vr);

namespace tags {
inline constexpr Tag kSopInstanceUid{0x0008, 0x0018};
inline constexpr Tag kStudyDate{0x0008, 0x0020};
inline constexpr Tag kModality{0x0008, 0x0060};
inline constexpr Tag kInstitutionName{0x0008, 0x0080};
inline constexpr Tag kPatientName{0x0010, 0x0010};
inline constexpr Tag kPatientId{0x0010, 0x0020};
inline constexpr Tag kPatientBirthDate{0x0010, 0x0030};
inline constexpr Tag kPatientSex{0x0010, 0x0040};
inline constexpr Tag kPatientAge{0x0010, 0x1010};
inline constexpr Tag kStudyInstanceUid{0x0020, 0x000D};
inline constexpr Tag kSeriesInstanceUid{0x0020, 0x000E};
inline constexpr Tag kRows{0x0028, 0x0010};
inline constexpr Tag kColumns{0x0028, 0x0011};
inline constexpr Tag kBitsAllocated{0x0028, 0x0100};
inline constexpr Tag kBitsStored{0x0028, 0x0101};
inline constexpr Tag kPixelData{0x7FE0, 0x0010};
// Group 0x0009 carries derived metrics.
inline constexpr Tag kMeanBrightness{0x0009, 0x0001};
inline constexpr Tag kRmsContrast{0x0009, 0x0002};
inline constexpr Tag kBreastDensity{0x0009, 0x0003};
inline constexpr Tag kMicrocalcCount{0x0009, 0x0004};
}  // namespace tags

struct TagInfo {
  Tag tag;
  Vr vr;
  std::string_view name;
};

// The closed tag dictionary, sorted by tag.
std::span<const TagInfo> dictionary();
const TagInfo* lookup(Tag tag);

struct Element {
  Tag tag;
  Vr vr = Vr::OB;
  Bytes value;  // even length; 0x00 padded

  bool operator==(const Element&) const = default;
};

enum class Errc {
  InvariantViolation,
  BadMagic,
  UnknownTag,
  VrMismatch,
  Truncated,
  DuplicateTag,
  OutOfOrder,
  OddLength,
  MissingPatientId,
};

std::string_view errc_name(Errc code);

class DatasetError : public std::runtime_error {
 public:
  DatasetError(Errc code, std::string detail, std::optional<Tag> tag = std::nullopt);

  Errc code() const { return code_; }
  const std::optional<Tag>& tag() const { return tag_; }

 private:
  Errc code_;
  std::optional<Tag> tag_;
};

// Elements kept sorted strictly ascending by tag.
class Dataset {
 public:
  const std::vector<Element>& elements() const { return elements_; }
  bool empty() const { return elements_.empty(); }
  std::size_t size() const { return elements_.size(); }

  const Element* find(Tag tag) const;
  bool contains(Tag tag) const { return find(tag) != nullptr; }

  // Inserts or replaces. The VR comes from the dictionary; values are padded to even length.
  void set(Tag tag, Bytes value);
  void set_string(Tag tag, std::string_view text);
  void set_us(Tag tag, std::uint16_t v);
  void set_ul(Tag tag, std::uint32_t v);
  void set_ds(Tag tag, double v);
  bool erase(Tag tag);

  std::optional<std::string> get_string(Tag tag) const;  // trailing 0x00 stripped
  std::optional<std::uint16_t> get_us(Tag tag) const;
  std::optional<std::uint32_t> get_ul(Tag tag) const;
  std::optional<double> get_ds(Tag tag) const;

  // Throws DatasetError(InvariantViolation) naming the broken invariant.
  void validate() const;

  // Appends without sorting; used by the decoder after its own ordering checks.
  void push_back_unchecked(Element e) { elements_.push_back(std::move(e)); }

  bool operator==(const Dataset&) const = default;

 private:
  std::vector<Element> elements_;
};

inline constexpr std::size_t kPreambleSize = 128;
inline constexpr std::size_t kHeaderSize = kPreambleSize + 4;

Bytes encode(const Dataset& ds);
Dataset decode(ByteView bytes);

crypto::Digest checksum(ByteView bytes);

struct ReidPair {
  std::string pseudonym;
  std::string original_id;
};

struct Anonymized {
  Dataset dataset;
  ReidPair reid;
};

// 16 lowercase hex chars: first 8 bytes of HMAC-SHA-256(key, id).
std::string pseudonym_for(std::string_view patient_id, const crypto::Key256& key);

Anonymized anonymize(const Dataset& ds, const crypto::Key256& federation_key);

// Empty when the dataset is safe to leave its origin; otherwise the reason.
std::optional<std::string> anonymization_problem(const Dataset& ds);

bool is_pseudonym(std::string_view id);

}  // namespace gridbox::dataset
