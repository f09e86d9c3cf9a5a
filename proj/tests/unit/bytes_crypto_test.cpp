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

#include <set>

#include "gridbox/bytes.hpp"
#include "gridbox/crypto.hpp"
#include "gridbox/types.hpp"

namespace gridbox {
namespace {

TEST(Bytes, HexRoundTrip) {
  Bytes b{0x00, 0x7f, 0xff, 0x10};
  EXPECT_EQ(to_hex(b), "007fff10");
  EXPECT_EQ(from_hex("007fff10"), b);
  EXPECT_EQ(from_hex("007FFF10"), b);
  EXPECT_THROW(from_hex("abc"), std::invalid_argument);
  EXPECT_THROW(from_hex("zz"), std::invalid_argument);
}

TEST(Bytes, LittleEndian) {
  Bytes out;
  put_u16le(out, 0x1234);
  put_u32le(out, 0xA1B2C3D4);
  put_u64le(out, 0x0102030405060708ull);
  EXPECT_EQ(to_hex(out), "3412d4c3b2a10807060504030201");
  ByteReader r(out);
  EXPECT_EQ(r.u16le(), 0x1234);
  EXPECT_EQ(r.u32le(), 0xA1B2C3D4u);
  EXPECT_EQ(r.u64le(), 0x0102030405060708ull);
  EXPECT_TRUE(r.done());
  EXPECT_THROW(r.u8(), TruncatedInput);
}

TEST(Bytes, ReaderTakeIsBounded) {
  Bytes b(5, 1);
  ByteReader r(b);
  EXPECT_EQ(r.take(3).size(), 3u);
  EXPECT_THROW(r.take(3), TruncatedInput);
  EXPECT_EQ(r.remaining(), 2u);
}

TEST(Crypto, Sha256KnownVectors) {
  EXPECT_EQ(to_hex(crypto::sha256({})),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(to_hex(crypto::sha256(as_bytes("abc"))),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Crypto, HmacRfc4231Case2) {
  auto mac = crypto::hmac_sha256(as_bytes("Jefe"), as_bytes("what do ya want for nothing?"));
  EXPECT_EQ(to_hex(mac), "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843");
}

TEST(Crypto, AeadSealOpen) {
  crypto::Key256 key{};
  key[0] = 7;
  crypto::Nonce nonce{};
  Bytes aad{1, 2, 3};
  auto sealed = crypto::aead_seal(key, nonce, aad, as_bytes("hello"));
  ASSERT_EQ(sealed.size(), 5 + crypto::kGcmTagSize);
  auto opened = crypto::aead_open(key, nonce, aad, sealed);
  ASSERT_TRUE(opened);
  EXPECT_EQ(to_string(*opened), "hello");

  auto bad = sealed;
  bad[2] ^= 1;
  EXPECT_FALSE(crypto::aead_open(key, nonce, aad, bad));
  Bytes other_aad{1, 2, 4};
  EXPECT_FALSE(crypto::aead_open(key, nonce, other_aad, sealed));
  key[0] = 8;
  EXPECT_FALSE(crypto::aead_open(key, nonce, aad, sealed));
}

TEST(Crypto, Base64) {
  EXPECT_EQ(crypto::base64_encode(as_bytes("foobar")), "Zm9vYmFy");
  EXPECT_EQ(crypto::base64_encode(as_bytes("fo")), "Zm8=");
  auto d = crypto::base64_decode("Zm8=");
  ASSERT_TRUE(d);
  EXPECT_EQ(to_string(*d), "fo");
  EXPECT_FALSE(crypto::base64_decode("Zm8"));
  EXPECT_FALSE(crypto::base64_decode("Z!8="));
}

TEST(Crypto, RandomFillVaries) {
  std::set<std::string> seen;
  for (int i = 0; i < 16; ++i) {
    std::array<std::uint8_t, 16> b{};
    crypto::random_fill(b);
    seen.insert(to_hex(b));
  }
  EXPECT_EQ(seen.size(), 16u);
}

TEST(Types, SiteIdRules) {
  EXPECT_TRUE(SiteId::valid("site-a"));
  EXPECT_TRUE(SiteId::valid(std::string(32, 'x')));
  EXPECT_FALSE(SiteId::valid(std::string(33, 'x')));
  EXPECT_FALSE(SiteId::valid(""));
  EXPECT_FALSE(SiteId::valid("Site"));
  EXPECT_FALSE(SiteId::valid("a_b"));
  EXPECT_THROW(SiteId("A"), InvalidName);
  EXPECT_LT(SiteId("site-a"), SiteId("site-b"));
}

TEST(Types, LfnRules) {
  EXPECT_TRUE(Lfn::valid("/acq/site-a/x.mgd"));
  EXPECT_FALSE(Lfn::valid("acq/x"));
  EXPECT_FALSE(Lfn::valid("/a//b"));
  EXPECT_FALSE(Lfn::valid("/a/./b"));
  EXPECT_FALSE(Lfn::valid("/a/../b"));
  EXPECT_FALSE(Lfn::valid("/a/"));
  std::string deep;
  for (int i = 0; i < 17; ++i) deep += "/s";
  EXPECT_FALSE(Lfn::valid(deep));
  EXPECT_TRUE(Lfn::valid(deep.substr(2)));
  EXPECT_EQ(Lfn("/a/b/c.mgd").basename(), "c.mgd");
  EXPECT_THROW(Lfn("/a/../b"), InvalidName);
}

TEST(Types, GuidHex) {
  Guid g;
  for (int i = 0; i < 16; ++i) g.bytes[i] = static_cast<std::uint8_t>(i * 17);
  EXPECT_EQ(Guid::from_hex(g.hex()), g);
  EXPECT_THROW(Guid::from_hex("00"), std::invalid_argument);
  EXPECT_EQ(std::hash<Guid>{}(g), std::hash<Guid>{}(Guid::from_hex(g.hex())));
}

}  // namespace
}  // namespace gridbox
