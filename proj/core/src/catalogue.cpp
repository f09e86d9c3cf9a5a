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

#include "gridbox/catalogue.hpp"

#include <algorithm>

namespace gridbox::catalogue {

namespace {
const char* errc_name(Errc c) {
  switch (c) {
    case Errc::LfnExists: return "LfnExists";
    case Errc::GuidExists: return "GuidExists";
    case Errc::UnknownGuid: return "UnknownGuid";
    case Errc::ConflictingPfn: return "ConflictingPfn";
    case Errc::NotFound: return "NotFound";
    case Errc::InvalidEntry: return "InvalidEntry";
  }
  return "CatalogueError";
}
}  // namespace

CatalogueError::CatalogueError(Errc code, const std::string& detail)
    : std::runtime_error(std::string(errc_name(code)) + ": " + detail), code_(code) {}

const FileEntry& Catalogue::register_file(const FileEntry& entry, const std::string& origin_pfn) {
  if (entry.size == 0) throw CatalogueError(Errc::InvalidEntry, "size must be positive");
  if (cand_lfns_.contains(entry.lfn)) throw CatalogueError(Errc::LfnExists, entry.lfn.str());
  if (cand_guids_.contains(entry.guid)) throw CatalogueError(Errc::GuidExists, entry.guid.hex());
  candidates_.emplace(key_of(entry), entry);
  ++cand_lfns_[entry.lfn];
  ++cand_guids_[entry.guid];
  bool inserted = false;
  merge_replica(entry.guid, entry.created_site, origin_pfn, &inserted);
  admit(entry);
  return by_lfn_.at(entry.lfn);
}

Replica Catalogue::add_replica(const Guid& guid, const SiteId& site, const std::string& pfn) {
  if (!lfn_of_.contains(guid)) throw CatalogueError(Errc::UnknownGuid, guid.hex());
  auto& reps = replicas_[guid];
  if (auto it = reps.find(site); it != reps.end()) {
    if (it->second != pfn) {
      throw CatalogueError(Errc::ConflictingPfn, guid.hex() + "@" + site.str());
    }
    return Replica{guid, site, pfn};
  }
  reps.emplace(site, pfn);
  return Replica{guid, site, pfn};
}

void Catalogue::admit(const FileEntry& entry) {
  by_lfn_.emplace(entry.lfn, entry);
  lfn_of_.emplace(entry.guid, entry.lfn);
}

void Catalogue::rebuild() {
  by_lfn_.clear();
  lfn_of_.clear();
  for (const auto& [_, e] : candidates_) {
    if (!by_lfn_.contains(e.lfn) && !lfn_of_.contains(e.guid)) admit(e);
  }
}

bool Catalogue::merge_replica(const Guid& guid, const SiteId& site, const std::string& pfn,
                              bool* inserted) {
  auto& reps = replicas_[guid];
  auto [it, fresh] = reps.emplace(site, pfn);
  *inserted = fresh;
  if (fresh || it->second == pfn) return true;
  if (pfn < it->second) {
    it->second = pfn;
    *inserted = true;
    return true;
  }
  return false;
}

Resolved Catalogue::resolve(const Lfn& lfn) const {
  auto r = find(lfn);
  if (!r) throw CatalogueError(Errc::NotFound, lfn.str());
  return *r;
}

std::optional<Resolved> Catalogue::find(const Lfn& lfn) const {
  auto it = by_lfn_.find(lfn);
  if (it == by_lfn_.end()) return std::nullopt;
  return Resolved{it->second, replicas_of(it->second.guid)};
}

std::optional<Resolved> Catalogue::find(const Guid& guid) const {
  auto it = lfn_of_.find(guid);
  if (it == lfn_of_.end()) return std::nullopt;
  return find(it->second);
}

std::vector<Replica> Catalogue::replicas_of(const Guid& guid) const {
  std::vector<Replica> out;
  if (!lfn_of_.contains(guid)) return out;
  if (auto it = replicas_.find(guid); it != replicas_.end()) {
    for (const auto& [site, pfn] : it->second) out.push_back(Replica{guid, site, pfn});
  }
  return out;
}

std::vector<std::string> Catalogue::list(std::string_view prefix) const {
  std::string base(prefix);
  if (base.empty() || base.back() != '/') base.push_back('/');
  std::set<std::string> dirs;
  std::set<std::string> files;
  for (auto it = by_lfn_.lower_bound(Lfn{}); it != by_lfn_.end(); ++it) {
    const std::string& name = it->first.str();
    if (name.compare(0, base.size(), base) != 0) {
      if (name > base) break;
      continue;
    }
    std::string_view rest = std::string_view(name).substr(base.size());
    auto slash = rest.find('/');
    if (slash == std::string_view::npos) {
      files.emplace(rest);
    } else {
      dirs.emplace(rest.substr(0, slash));
    }
  }
  std::vector<std::string> out(dirs.begin(), dirs.end());
  out.insert(out.end(), files.begin(), files.end());
  return out;
}

Catalogue::ApplyOutcome Catalogue::apply_add_file(const FileEntry& entry,
                                                  const std::string& origin_pfn) {
  if (entry.size == 0) return ApplyOutcome::Rejected;
  bool fresh_replica = false;
  const bool pfn_kept = merge_replica(entry.guid, entry.created_site, origin_pfn, &fresh_replica);
  auto [it, fresh] = candidates_.emplace(key_of(entry), entry);
  if (!fresh) {
    if (!(it->second == entry)) return ApplyOutcome::Rejected;
    return fresh_replica ? ApplyOutcome::Applied : ApplyOutcome::Duplicate;
  }
  const bool lfn_clash = cand_lfns_[entry.lfn]++ > 0;
  const bool guid_clash = cand_guids_[entry.guid]++ > 0;
  if (!lfn_clash && !guid_clash) {
    admit(entry);
  } else {
    rebuild();
  }
  auto adm = by_lfn_.find(entry.lfn);
  if (adm == by_lfn_.end() || !(adm->second == entry) || !pfn_kept) return ApplyOutcome::Rejected;
  return ApplyOutcome::Applied;
}

Catalogue::ApplyOutcome Catalogue::apply_add_replica(const Replica& replica) {
  bool inserted = false;
  if (!merge_replica(replica.guid, replica.site, replica.pfn, &inserted)) return ApplyOutcome::Rejected;
  if (!lfn_of_.contains(replica.guid)) return ApplyOutcome::Deferred;
  return inserted ? ApplyOutcome::Applied : ApplyOutcome::Duplicate;
}

std::size_t Catalogue::pending_replica_count() const {
  std::size_t n = 0;
  for (const auto& [guid, m] : replicas_) {
    if (!lfn_of_.contains(guid)) n += m.size();
  }
  return n;
}

std::vector<FileEntry> Catalogue::entries() const {
  std::vector<FileEntry> out;
  out.reserve(by_lfn_.size());
  for (const auto& [_, e] : by_lfn_) out.push_back(e);
  return out;
}

bool Catalogue::referentially_intact() const {
  for (const auto& [lfn, e] : by_lfn_) {
    auto it = replicas_.find(e.guid);
    if (it == replicas_.end() || it->second.empty()) return false;
  }
  return true;
}

nlohmann::json to_json(const FileEntry& e) {
  return {{"lfn", e.lfn.str()},
          {"guid", e.guid.hex()},
          {"size", e.size},
          {"checksum", to_hex(e.checksum)},
          {"created_site", e.created_site.str()},
          {"created_seq", e.created_seq}};
}

FileEntry file_entry_from_json(const nlohmann::json& j) {
  FileEntry e;
  e.lfn = Lfn(j.at("lfn").get<std::string>());
  e.guid = Guid::from_hex(j.at("guid").get<std::string>());
  e.size = j.at("size").get<std::uint64_t>();
  auto sum = from_hex(j.at("checksum").get<std::string>());
  if (sum.size() != e.checksum.size()) throw std::invalid_argument("checksum must be 32 bytes");
  std::copy(sum.begin(), sum.end(), e.checksum.begin());
  e.created_site = SiteId(j.at("created_site").get<std::string>());
  e.created_seq = j.at("created_seq").get<std::uint64_t>();
  return e;
}

nlohmann::json Catalogue::canonical() const {
  auto files = nlohmann::json::array();
  for (const auto& [lfn, e] : by_lfn_) {
    auto doc = to_json(e);
    auto reps = nlohmann::json::array();
    for (const auto& r : replicas_of(e.guid)) reps.push_back({{"site", r.site.str()}, {"pfn", r.pfn}});
    doc["replicas"] = std::move(reps);
    files.push_back(std::move(doc));
  }
  return {{"files", std::move(files)}};
}

std::string pfn_for(const Guid& guid) {
  auto hex = guid.hex();
  return "store/" + hex.substr(0, 2) + "/" + hex.substr(2, 2) + "/" + hex + ".mgd";
}

}  // namespace gridbox::catalogue
