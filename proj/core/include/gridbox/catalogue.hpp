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
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridbox/crypto.hpp"
#include "gridbox/types.hpp"

// The virtual file catalogue: logical names -> immutable content objects and replicas.
namespace gridbox::catalogue {

struct FileEntry {
  Lfn lfn;
  Guid guid;
  std::uint64_t size = 0;
  crypto::Digest checksum{};
  SiteId created_site;
  std::uint64_t created_seq = 0;

  bool operator==(const FileEntry&) const = default;
};

struct Replica {
  Guid guid;
  SiteId site;
  std::string pfn;

  bool operator==(const Replica&) const = default;
};

enum class Errc { LfnExists, GuidExists, UnknownGuid, ConflictingPfn, NotFound, InvalidEntry };

class CatalogueError : public std::runtime_error {
 public:
  CatalogueError(Errc code, const std::string& detail);
  Errc code() const { return code_; }

 private:
  Errc code_;
};

struct Resolved {
  FileEntry entry;
  std::vector<Replica> replicas;  // sorted by site
};

class Catalogue {
 public:
  // Registers the entry together with its initial replica at `origin_pfn`.
  const FileEntry& register_file(const FileEntry& entry, const std::string& origin_pfn);

  // Idempotent for identical (guid, site, pfn).
  Replica add_replica(const Guid& guid, const SiteId& site, const std::string& pfn);

  Resolved resolve(const Lfn& lfn) const;
  std::optional<Resolved> find(const Lfn& lfn) const;
  std::optional<Resolved> find(const Guid& guid) const;

  // Immediate children of `prefix`: directories first, then files, each sorted.
  std::vector<std::string> list(std::string_view prefix) const;

  // Replication path. Never throws for replays: identical re-registration is a no-op and
  // replicas for files not yet seen are parked until the file arrives. Entries that clash
  // on lfn or guid are all kept as candidates; the admitted set is the greedy pick in
  // (created_site, created_seq, guid) order, so the result does not depend on arrival order.
  enum class ApplyOutcome { Applied, Duplicate, Deferred, Rejected };
  ApplyOutcome apply_add_file(const FileEntry& entry, const std::string& origin_pfn);
  ApplyOutcome apply_add_replica(const Replica& replica);

  std::size_t file_count() const { return by_lfn_.size(); }
  std::size_t pending_replica_count() const;
  std::vector<FileEntry> entries() const;  // sorted by lfn
  std::vector<Replica> replicas_of(const Guid& guid) const;

  // Every replica references a registered guid.
  bool referentially_intact() const;

  nlohmann::json canonical() const;

 private:
  using CandKey = std::tuple<SiteId, std::uint64_t, Guid, Lfn>;
  static CandKey key_of(const FileEntry& e) { return {e.created_site, e.created_seq, e.guid, e.lfn}; }

  void admit(const FileEntry& entry);
  void rebuild();
  // Keeps the smaller pfn when two sites disagree; returns false if `pfn` lost.
  bool merge_replica(const Guid& guid, const SiteId& site, const std::string& pfn, bool* inserted);

  std::map<CandKey, FileEntry> candidates_;
  std::map<Lfn, std::size_t> cand_lfns_;
  std::map<Guid, std::size_t> cand_guids_;
  std::map<Lfn, FileEntry> by_lfn_;
  std::map<Guid, Lfn> lfn_of_;
  // every replica seen, admitted or not
  std::map<Guid, std::map<SiteId, std::string>> replicas_;
};

nlohmann::json to_json(const FileEntry& e);
FileEntry file_entry_from_json(const nlohmann::json& j);

std::string pfn_for(const Guid& guid);  // store/<g0g1>/<g2g3>/<guid-hex>.mgd

}  // namespace gridbox::catalogue
