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

#include "gridbox/dataset.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdio>

namespace gridbox::dataset {

namespace {

constexpr std::array<TagInfo, 20> kDictionary{{
    {tags::kSopInstanceUid, Vr::UI, "SOPInstanceUID"},
    {tags::kStudyDate, Vr::DA, "StudyDate"},
    {tags::kModality, Vr::CS, "Modality"},
    {tags::kInstitutionName, Vr::LO, "InstitutionName"},
    {tags::kMeanBrightness, Vr::DS, "MeanBrightness"},
    {tags::kRmsContrast, Vr::DS, "RmsContrast"},
    {tags::kBreastDensity, Vr::DS, "BreastDensity"},
    {tags::kMicrocalcCount, Vr::UL, "MicrocalcCount"},
    {tags::kPatientName, Vr::PN, "PatientName"},
    {tags::kPatientId, Vr::LO, "PatientID"},
    {tags::kPatientBirthDate, Vr::DA, "PatientBirthDate"},
    {tags::kPatientSex, Vr::CS, "PatientSex"},
    {tags::kPatientAge, Vr::AS, "PatientAge"},
    {tags::kStudyInstanceUid, Vr::UI, "StudyInstanceUID"},
    {tags::kSeriesInstanceUid, Vr::UI, "SeriesInstanceUID"},
    {tags::kRows, Vr::US, "Rows"},
    {tags::kColumns, Vr::US, "Columns"},
    {tags::kBitsAllocated, Vr::US, "BitsAllocated"},
    {tags::kBitsStored, Vr::US, "BitsStored"},
    {tags::kPixelData, Vr::OB, "PixelData"},
}};

constexpr std::array<std::string_view, 11> kVrCodes{"UI", "LO", "PN", "DA", "AS", "CS",
                                                    "SH", "US", "UL", "DS", "OB"};

constexpr char kMagic[4] = {'D', 'I', 'C', 'M'};

void pad_even(Bytes& b) {
  if (b.size() % 2 != 0) b.push_back(0x00);
}

std::string strip_padding(ByteView v) {
  std::size_t n = v.size();
  while (n > 0 && v[n - 1] == 0x00) --n;
  return to_string(v.first(n));
}

[[noreturn]] void violation(const std::string& what, std::optional<Tag> tag = std::nullopt) {
  throw DatasetError(Errc::InvariantViolation, what, tag);
}

}  // namespace

std::string Tag::str() const {
  char buf[16];
  std::snprintf(buf, sizeof buf, "(%04X,%04X)", group, element);
  return buf;
}

std::string_view vr_code(Vr vr) { return kVrCodes[static_cast<std::size_t>(vr)]; }

std::optional<Vr> vr_from_code(char a, char b) {
  for (std::size_t i = 0; i < kVrCodes.size(); ++i) {
    if (kVrCodes[i][0] == a && kVrCodes[i][1] == b) return static_cast<Vr>(i);
  }
  return std::nullopt;
}

bool is_string_vr(Vr vr) {
  switch (vr) {
    case Vr::US:
    case Vr::UL:
    case Vr::OB:
      return false;
    default:
      return true;
  }
}

std::span<const TagInfo> dictionary() { return kDictionary; }

const TagInfo* lookup(Tag tag) {
  auto it = std::lower_bound(kDictionary.begin(), kDictionary.end(), tag,
                             [](const TagInfo& info, Tag t) { return info.tag < t; });
  if (it == kDictionary.end() || it->tag != tag) return nullptr;
  return &*it;
}

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::InvariantViolation: return "InvariantViolation";
    case Errc::BadMagic: return "BadMagic";
    case Errc::UnknownTag: return "UnknownTag";
    case Errc::VrMismatch: return "VrMismatch";
    case Errc::Truncated: return "Truncated";
    case Errc::DuplicateTag: return "DuplicateTag";
    case Errc::OutOfOrder: return "OutOfOrder";
    case Errc::OddLength: return "OddLength";
    case Errc::MissingPatientId: return "MissingPatientID";
  }
  return "Unknown";
}

DatasetError::DatasetError(Errc code, std::string detail, std::optional<Tag> tag)
    : std::runtime_error(std::string(errc_name(code)) + (tag ? " " + tag->str() : "") +
                         (detail.empty() ? "" : ": " + detail)),
      code_(code),
      tag_(tag) {}

const Element* Dataset::find(Tag tag) const {
  auto it = std::lower_bound(elements_.begin(), elements_.end(), tag,
                             [](const Element& e, Tag t) { return e.tag < t; });
  if (it == elements_.end() || it->tag != tag) return nullptr;
  return &*it;
}

void Dataset::set(Tag tag, Bytes value) {
  const TagInfo* info = lookup(tag);
  if (!info) throw DatasetError(Errc::UnknownTag, "not in dictionary", tag);
  pad_even(value);
  auto it = std::lower_bound(elements_.begin(), elements_.end(), tag,
                             [](const Element& e, Tag t) { return e.tag < t; });
  if (it != elements_.end() && it->tag == tag) {
    it->value = std::move(value);
    return;
  }
  elements_.insert(it, Element{tag, info->vr, std::move(value)});
}

void Dataset::set_string(Tag tag, std::string_view text) {
  set(tag, Bytes(text.begin(), text.end()));
}

void Dataset::set_us(Tag tag, std::uint16_t v) {
  Bytes b;
  put_u16le(b, v);
  set(tag, std::move(b));
}

void Dataset::set_ul(Tag tag, std::uint32_t v) {
  Bytes b;
  put_u32le(b, v);
  set(tag, std::move(b));
}

void Dataset::set_ds(Tag tag, double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  set_string(tag, std::string_view(buf, static_cast<std::size_t>(res.ptr - buf)));
}

bool Dataset::erase(Tag tag) {
  auto it = std::find_if(elements_.begin(), elements_.end(),
                         [&](const Element& e) { return e.tag == tag; });
  if (it == elements_.end()) return false;
  elements_.erase(it);
  return true;
}

std::optional<std::string> Dataset::get_string(Tag tag) const {
  const Element* e = find(tag);
  if (!e) return std::nullopt;
  return strip_padding(e->value);
}

std::optional<std::uint16_t> Dataset::get_us(Tag tag) const {
  const Element* e = find(tag);
  if (!e || e->value.size() != 2) return std::nullopt;
  return get_u16le(e->value.data());
}

std::optional<std::uint32_t> Dataset::get_ul(Tag tag) const {
  const Element* e = find(tag);
  if (!e || e->value.size() != 4) return std::nullopt;
  return get_u32le(e->value.data());
}

std::optional<double> Dataset::get_ds(Tag tag) const {
  auto s = get_string(tag);
  if (!s) return std::nullopt;
  double v = 0;
  auto res = std::from_chars(s->data(), s->data() + s->size(), v);
  if (res.ec != std::errc{} || res.ptr != s->data() + s->size()) return std::nullopt;
  return v;
}

void Dataset::validate() const {
  for (std::size_t i = 0; i < elements_.size(); ++i) {
    const Element& e = elements_[i];
    if (i > 0 && !(elements_[i - 1].tag < e.tag)) violation("elements not strictly ascending", e.tag);
    const TagInfo* info = lookup(e.tag);
    if (!info) throw DatasetError(Errc::UnknownTag, "not in dictionary", e.tag);
    if (info->vr != e.vr) throw DatasetError(Errc::VrMismatch, "", e.tag);
    if (e.value.size() % 2 != 0) violation("odd value length", e.tag);
    if (e.vr == Vr::US && e.value.size() != 2) violation("US value must be 2 bytes", e.tag);
    if (e.vr == Vr::UL && e.value.size() != 4) violation("UL value must be 4 bytes", e.tag);
    if (is_string_vr(e.vr)) {
      for (auto c : e.value) {
        if (c >= 0x80) violation("non-ASCII byte in string value", e.tag);
      }
    }
  }
  if (auto bits = get_us(tags::kBitsAllocated); bits && *bits != 8 && *bits != 16) {
    violation("BitsAllocated must be 8 or 16", tags::kBitsAllocated);
  }
  if (const Element* px = find(tags::kPixelData)) {
    auto rows = get_us(tags::kRows);
    auto cols = get_us(tags::kColumns);
    auto bits = get_us(tags::kBitsAllocated);
    if (!rows || !cols || !bits) violation("PixelData requires Rows, Columns and BitsAllocated");
    std::size_t expected = std::size_t{*rows} * *cols * (*bits / 8);
    std::size_t padded = expected + (expected % 2);
    if (px->value.size() != padded) violation("PixelData length disagrees with geometry", px->tag);
  }
}

Bytes encode(const Dataset& ds) {
  ds.validate();
  Bytes out(kPreambleSize, 0x00);
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  for (const Element& e : ds.elements()) {
    put_u16le(out, e.tag.group);
    put_u16le(out, e.tag.element);
    auto code = vr_code(e.vr);
    out.push_back(static_cast<std::uint8_t>(code[0]));
    out.push_back(static_cast<std::uint8_t>(code[1]));
    put_u16le(out, 0);
    put_u32le(out, static_cast<std::uint32_t>(e.value.size()));
    out.insert(out.end(), e.value.begin(), e.value.end());
  }
  return out;
}

Dataset decode(ByteView bytes) {
  if (bytes.size() < kHeaderSize ||
      !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin() + kPreambleSize)) {
    throw DatasetError(Errc::BadMagic, "missing preamble or DICM marker");
  }
  ByteReader in(bytes.subspan(kHeaderSize));
  Dataset ds;
  std::optional<Tag> previous;
  try {
    while (!in.done()) {
      Tag tag{in.u16le(), 0};
      tag.element = in.u16le();
      char a = static_cast<char>(in.u8());
      char b = static_cast<char>(in.u8());
      std::uint16_t reserved = in.u16le();
      std::uint32_t length = in.u32le();
      const TagInfo* info = lookup(tag);
      if (!info) throw DatasetError(Errc::UnknownTag, "", tag);
      auto vr = vr_from_code(a, b);
      if (!vr || *vr != info->vr) throw DatasetError(Errc::VrMismatch, "", tag);
      if (reserved != 0) throw DatasetError(Errc::InvariantViolation, "reserved field non-zero", tag);
      if (previous) {
        if (*previous == tag) throw DatasetError(Errc::DuplicateTag, "", tag);
        if (tag < *previous) throw DatasetError(Errc::OutOfOrder, "", tag);
      }
      if (length % 2 != 0) throw DatasetError(Errc::OddLength, "", tag);
      auto value = in.take(length);
      ds.push_back_unchecked(Element{tag, *vr, Bytes(value.begin(), value.end())});
      previous = tag;
    }
  } catch (const TruncatedInput&) {
    throw DatasetError(Errc::Truncated, "element runs past end of input");
  }
  ds.validate();
  return ds;
}

crypto::Digest checksum(ByteView bytes) { return crypto::sha256(bytes); }

std::string pseudonym_for(std::string_view patient_id, const crypto::Key256& key) {
  auto mac = crypto::hmac_sha256(key, as_bytes(patient_id));
  return to_hex(ByteView(mac.data(), 8));
}

bool is_pseudonym(std::string_view id) {
  return id.size() == 16 && std::all_of(id.begin(), id.end(), [](char c) {
           return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
         });
}

Anonymized anonymize(const Dataset& ds, const crypto::Key256& federation_key) {
  auto original = ds.get_string(tags::kPatientId);
  if (!original) throw DatasetError(Errc::MissingPatientId, "dataset has no PatientID");
  Anonymized out{ds, {pseudonym_for(*original, federation_key), *original}};
  out.dataset.erase(tags::kPatientName);
  out.dataset.erase(tags::kPatientBirthDate);
  out.dataset.set_string(tags::kPatientId, out.reid.pseudonym);
  return out;
}

std::optional<std::string> anonymization_problem(const Dataset& ds) {
  if (ds.contains(tags::kPatientName) || ds.contains(tags::kPatientBirthDate)) {
    return "not anonymized";
  }
  auto id = ds.get_string(tags::kPatientId);
  if (!id) return "missing PatientID";
  if (!is_pseudonym(*id)) return "not anonymized";
  return std::nullopt;
}

}  // namespace gridbox::dataset
