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
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <stdexcept>

#include "gridbox/bytes.hpp"

// Thin wrappers over OpenSSL primitives used across the gridbox.
namespace gridbox::crypto {

using Digest = std::array<std::uint8_t, 32>;
using Key256 = std::array<std::uint8_t, 32>;
using Nonce = std::array<std::uint8_t, 12>;

inline constexpr std::size_t kGcmTagSize = 16;

Digest sha256(ByteView data);
Digest hmac_sha256(ByteView key, ByteView data);

// AES-256-GCM. Output is ciphertext followed by the 16-byte tag.
Bytes aead_seal(const Key256& key, const Nonce& nonce, ByteView aad, ByteView plaintext);

// Returns nullopt when the tag does not verify.
std::optional<Bytes> aead_open(const Key256& key, const Nonce& nonce, ByteView aad,
                               ByteView sealed);

std::string base64_encode(ByteView data);
// nullopt on malformed input.
std::optional<Bytes> base64_decode(std::string_view text);

// CSPRNG fill.
void random_fill(std::span<std::uint8_t> out);

struct CryptoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace gridbox::crypto
