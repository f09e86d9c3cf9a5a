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

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridbox/crypto.hpp"
#include "gridbox/types.hpp"

// Change records and the write-ahead change log file.
namespace gridbox::sync {

enum class Kind { AddFile, AddReplica, PutMeta, DefineAttr, JobEvent };
std::string_view kind_name(Kind k);
std::optional<Kind> parse_kind(std::string_view s);

struct ChangeRecord {
  SiteId origin;
  std::uint64_t seq = 0;
  Kind kind = Kind::AddFile;
  nlohmann::json payload;
  crypto::Digest digest{};

  // Canonical bytes: compact JSON of {kind, origin, payload, seq} with sorted keys.
  std::string body() const;
  void seal() { digest = crypto::sha256(as_bytes(body())); }
  bool verifies() const { return digest == crypto::sha256(as_bytes(body())); }

  bool operator==(const ChangeRecord& o) const {
    return origin == o.origin && seq == o.seq && kind == o.kind && payload == o.payload &&
           digest == o.digest;
  }
};

ChangeRecord make_record(const SiteId& origin, std::uint64_t seq, Kind kind, nlohmann::json payload);

nlohmann::json to_json(const ChangeRecord& r);
// Does not check the digest.
ChangeRecord record_from_json(const nlohmann::json& j);

// origin -> highest contiguously applied seq. Absent means 0.
using SeqVector = std::map<SiteId, std::uint64_t>;
nlohmann::json vector_to_json(const SeqVector& v);
SeqVector vector_from_json(const nlohmann::json& j);

enum class Errc { BadDigest, BadRecord, BufferOverflow, CorruptLog, StorageFailure };

class SyncError : public std::runtime_error {
 public:
  SyncError(Errc code, const std::string& detail, std::uint64_t offset = 0);
  Errc code() const { return code_; }
  std::uint64_t offset() const { return offset_; }

 private:
  Errc code_;
  std::uint64_t offset_;
};

// On disk: len(u32 LE) | body | sha256(body), one entry per record.
class ChangeLog {
 public:
  struct Loaded {
    std::vector<ChangeRecord> records;
    std::uint64_t valid_bytes = 0;
    std::uint64_t dropped_bytes = 0;  // tail removed under recover
  };

  // Throws SyncError(CorruptLog, offset) at the first damaged entry unless `recover`, in which
  // case the file is truncated to the last valid entry.
  static Loaded load(const std::filesystem::path& path, bool recover);

  explicit ChangeLog(std::filesystem::path path, bool durable = true);
  ~ChangeLog();
  ChangeLog(const ChangeLog&) = delete;
  ChangeLog& operator=(const ChangeLog&) = delete;

  // Appends and, when durable, fsyncs once for the whole batch.
  void append(const std::vector<ChangeRecord>& records);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  bool durable_;
  int fd_ = -1;
};

Bytes encode_log_entry(const ChangeRecord& r);

}  // namespace gridbox::sync
