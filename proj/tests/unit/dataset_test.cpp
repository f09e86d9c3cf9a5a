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

#include <gtest/gtest.h>

#include <random>
#include <set>

#include "gridbox/dataset.hpp"
#include "support/generators.hpp"

namespace gridbox::dataset {
namespace {

crypto::Key256 zero_key() { return {}; }

Dataset small_image() {
  Dataset ds;
  ds.set_string(tags::kSopInstanceUid, "1.2.3");
  ds.set_string(tags::kPatientName, "DOE^JANE");
  ds.set_string(tags::kPatientId, "P123");
  ds.set_string(tags::kPatientBirthDate, "19700101");
  ds.set_us(tags::kRows, 2);
  ds.set_us(tags::kColumns, 3);
  ds.set_us(tags::kBitsAllocated, 8);
  ds.set(tags::kPixelData, Bytes{1, 2, 3, 4, 5, 6});
  return ds;
}

TEST(Codec, EmptyDatasetIsHeaderOnly) {
  auto out = encode(Dataset{});
  ASSERT_EQ(out.size(), 132u);
  for (std::size_t i = 0; i < 128; ++i) ASSERT_EQ(out[i], 0);
  EXPECT_EQ(to_string(ByteView(out).subspan(128)), "DICM");
  EXPECT_TRUE(decode(out).empty());
}

TEST(Codec, RowsElementBytes) {
  Dataset ds;
  ds.set_us(tags::kRows, 4);
  auto out = encode(ds);
  ASSERT_EQ(out.size(), 132u + 14u);
  EXPECT_EQ(to_hex(ByteView(out).subspan(132)), "2800100055530000020000000400");
}

TEST(Codec, StringsArePaddedWithNul) {
  Dataset ds;
  ds.set_string(tags::kModality, "MGX");
  ASSERT_EQ(ds.find(tags::kModality)->value.size(), 4u);
  EXPECT_EQ(ds.find(tags::kModality)->value.back(), 0);
  EXPECT_EQ(*ds.get_string(tags::kModality), "MGX");
}

TEST(Codec, RandomRoundTrip) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 500; ++i) {
    auto ds = testing::random_dataset(rng);
    auto bytes = encode(ds);
    auto back = decode(bytes);
    ASSERT_EQ(back, ds);
    ASSERT_EQ(encode(back), bytes);
  }
}

TEST(Codec, EncodeIsInjective) {
  std::mt19937_64 rng(12);
  std::set<Bytes> seen;
  std::vector<Dataset> all;
  for (int i = 0; i < 300; ++i) {
    auto ds = testing::random_dataset(rng);
    auto bytes = encode(ds);
    bool fresh = seen.insert(bytes).second;
    bool distinct = std::find(all.begin(), all.end(), ds) == all.end();
    ASSERT_EQ(fresh, distinct);
    if (distinct) all.push_back(ds);
  }
}

TEST(Codec, ZerosAreBadMagic) {
  Bytes b(131, 0);
  try {
    decode(b);
    FAIL();
  } catch (const DatasetError& e) {
    EXPECT_EQ(e.code(), Errc::BadMagic);
  }
}

Errc decode_error(ByteView b) {
  try {
    decode(b);
  } catch (const DatasetError& e) {
    return e.code();
  }
  ADD_FAILURE() << "decode accepted the stream";
  return Errc::InvariantViolation;
}

TEST(Codec, FlippedVrByte) {
  Dataset ds;
  ds.set_us(tags::kRows, 4);
  auto b = encode(ds);
  b[132 + 4] = 'L';  // "US" -> "LS"
  EXPECT_EQ(decode_error(b), Errc::VrMismatch);
  b[132 + 4] = 'U';
  b[132 + 5] = 'L';  // "UL": a real VR, wrong for Rows
  EXPECT_EQ(decode_error(b), Errc::VrMismatch);
}

TEST(Codec, StrictDecodeErrors) {
  Dataset ds;
  ds.set_us(tags::kRows, 4);
  ds.set_us(tags::kColumns, 4);
  auto b = encode(ds);

  auto truncated = b;
  truncated.pop_back();
  EXPECT_EQ(decode_error(truncated), Errc::Truncated);

  auto trailing = b;
  trailing.push_back(0);
  EXPECT_EQ(decode_error(trailing), Errc::Truncated);

  auto unknown = b;
  unknown[132 + 2] = 0x99;
  EXPECT_EQ(decode_error(unknown), Errc::UnknownTag);

  // swap the two elements
  Bytes swapped(b.begin(), b.begin() + 132);
  swapped.insert(swapped.end(), b.begin() + 146, b.end());
  swapped.insert(swapped.end(), b.begin() + 132, b.begin() + 146);
  EXPECT_EQ(decode_error(swapped), Errc::OutOfOrder);

  Bytes dup(b.begin(), b.begin() + 146);
  dup.insert(dup.end(), b.begin() + 132, b.begin() + 146);
  EXPECT_EQ(decode_error(dup), Errc::DuplicateTag);

  Bytes odd(b.begin(), b.begin() + 132);
  Bytes el{0x08, 0x00, 0x60, 0x00, 'C', 'S', 0, 0, 3, 0, 0, 0, 'M', 'G', 'X'};
  odd.insert(odd.end(), el.begin(), el.end());
  EXPECT_EQ(decode_error(odd), Errc::OddLength);
}

TEST(Codec, DecodeValidatesInvariants) {
  Dataset ds;
  ds.set_us(tags::kRows, 4);
  auto b = encode(ds);
  // Rows with a 4-byte value
  b[132 + 8] = 4;
  b.insert(b.end(), {0, 0});
  EXPECT_EQ(decode_error(b), Errc::InvariantViolation);
}

TEST(Dataset, ValidateNamesInvariant) {
  Dataset ds;
  ds.set_us(tags::kRows, 2);
  ds.set_us(tags::kColumns, 2);
  ds.set_us(tags::kBitsAllocated, 12);
  try {
    ds.validate();
    FAIL();
  } catch (const DatasetError& e) {
    EXPECT_EQ(e.code(), Errc::InvariantViolation);
    EXPECT_NE(std::string(e.what()).find("BitsAllocated"), std::string::npos);
  }
  ds.set_us(tags::kBitsAllocated, 16);
  ds.set(tags::kPixelData, Bytes(6, 0));
  EXPECT_THROW(ds.validate(), DatasetError);
  ds.set(tags::kPixelData, Bytes(8, 0));
  EXPECT_NO_THROW(ds.validate());

  Dataset s;
  s.set(tags::kInstitutionName, Bytes{'a', 0x80});
  EXPECT_THROW(encode(s), DatasetError);
}

TEST(Dataset, OddPixelCountIsPadded) {
  Dataset ds;
  ds.set_us(tags::kRows, 3);
  ds.set_us(tags::kColumns, 3);
  ds.set_us(tags::kBitsAllocated, 8);
  ds.set(tags::kPixelData, Bytes(9, 1));
  EXPECT_EQ(ds.find(tags::kPixelData)->value.size(), 10u);
  EXPECT_EQ(decode(encode(ds)), ds);
}

TEST(Dataset, SetRejectsUnknownTag) {
  Dataset ds;
  EXPECT_THROW(ds.set_string(Tag{0x0011, 0x0001}, "x"), DatasetError);
}

TEST(Dataset, TypedAccessors) {
  Dataset ds;
  ds.set_ds(tags::kBreastDensity, 0.25);
  ds.set_ul(tags::kMicrocalcCount, 7);
  EXPECT_DOUBLE_EQ(*ds.get_ds(tags::kBreastDensity), 0.25);
  EXPECT_EQ(*ds.get_ul(tags::kMicrocalcCount), 7u);
  EXPECT_FALSE(ds.get_us(tags::kRows));
  EXPECT_TRUE(ds.erase(tags::kMicrocalcCount));
  EXPECT_FALSE(ds.erase(tags::kMicrocalcCount));
}

TEST(Checksum, Properties) {
  EXPECT_EQ(to_hex(checksum({})).substr(0, 16), "e3b0c44298fc1c14");
  auto ds = small_image();
  auto a = encode(ds);
  EXPECT_EQ(checksum(a), checksum(a));
  ds.set(tags::kPixelData, Bytes{1, 2, 3, 4, 5, 7});
  EXPECT_NE(checksum(a), checksum(encode(ds)));
}

TEST(Anonymize, GoldenPseudonym) {
  // HMAC-SHA-256(0^32, "P123"), computed with Python's hmac module
  EXPECT_EQ(pseudonym_for("P123", zero_key()), "c4fb3e23b9651d8d");
}

TEST(Anonymize, RemovesIdentity) {
  auto out = anonymize(small_image(), zero_key());
  EXPECT_FALSE(out.dataset.contains(tags::kPatientName));
  EXPECT_FALSE(out.dataset.contains(tags::kPatientBirthDate));
  EXPECT_EQ(*out.dataset.get_string(tags::kPatientId), "c4fb3e23b9651d8d");
  EXPECT_EQ(out.reid.pseudonym, "c4fb3e23b9651d8d");
  EXPECT_EQ(out.reid.original_id, "P123");
  EXPECT_EQ(out.dataset.find(tags::kPixelData)->value, small_image().find(tags::kPixelData)->value);
  EXPECT_EQ(out.dataset.size(), small_image().size() - 2);
  EXPECT_FALSE(anonymization_problem(out.dataset));
  EXPECT_TRUE(anonymization_problem(small_image()));
}

TEST(Anonymize, Deterministic) {
  auto a = anonymize(small_image(), zero_key());
  auto b = anonymize(small_image(), zero_key());
  EXPECT_EQ(a.dataset, b.dataset);
}

TEST(Anonymize, MissingPatientId) {
  Dataset ds;
  ds.set_string(tags::kPatientName, "X");
  try {
    anonymize(ds, zero_key());
    FAIL();
  } catch (const DatasetError& e) {
    EXPECT_EQ(e.code(), Errc::MissingPatientId);
  }
}

TEST(Anonymize, CompletenessOnRandomInput) {
  std::mt19937_64 rng(5);
  crypto::Key256 key{};
  key[3] = 9;
  for (int i = 0; i < 300; ++i) {
    auto ds = testing::random_dataset(rng);
    ds.set_string(tags::kPatientId, testing::random_ascii(rng, 20) + "x");
    auto out = anonymize(ds, key);
    ASSERT_FALSE(out.dataset.contains(tags::kPatientName));
    ASSERT_FALSE(out.dataset.contains(tags::kPatientBirthDate));
    ASSERT_TRUE(is_pseudonym(*out.dataset.get_string(tags::kPatientId)));
  }
}

TEST(Anonymize, KeySensitivity) {
  std::mt19937_64 rng(6);
  crypto::Key256 k1{}, k2{};
  k1[0] = 1;
  k2[0] = 2;
  int collisions = 0;
  std::set<std::string> all;
  for (int i = 0; i < 1000; ++i) {
    auto id = "PID-" + std::to_string(rng());
    auto p1 = pseudonym_for(id, k1);
    auto p2 = pseudonym_for(id, k2);
    if (p1 == p2) ++collisions;
    all.insert(p1);
  }
  EXPECT_EQ(collisions, 0);
  EXPECT_EQ(all.size(), 1000u);
}

TEST(Anonymize, PseudonymShape) {
  EXPECT_TRUE(is_pseudonym("0123456789abcdef"));
  EXPECT_FALSE(is_pseudonym("0123456789ABCDEF"));
  EXPECT_FALSE(is_pseudonym("0123"));
}

}  // namespace
}  // namespace gridbox::dataset
