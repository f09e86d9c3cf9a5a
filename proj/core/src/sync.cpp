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

#include "gridbox/sync.hpp"

namespace gridbox::sync {

namespace {

catalogue::Replica replica_from_json(const nlohmann::json& j) {
  return catalogue::Replica{Guid::from_hex(j.at("guid").get<std::string>()),
                            SiteId(j.at("site").get<std::string>()), j.at("pfn").get<std::string>()};
}

Outcome from(catalogue::Catalogue::ApplyOutcome o) {
  using O = catalogue::Catalogue::ApplyOutcome;
  switch (o) {
    case O::Applied: return Outcome::Applied;
    case O::Duplicate: return Outcome::Duplicate;
    case O::Deferred: return Outcome::Deferred;
    case O::Rejected: return Outcome::Rejected;
  }
  return Outcome::Rejected;
}

Outcome from(metastore::MetaStore::ApplyOutcome o) {
  using O = metastore::MetaStore::ApplyOutcome;
  switch (o) {
    case O::Applied: return Outcome::Applied;
    case O::Superseded: return Outcome::Duplicate;
    case O::Deferred: return Outcome::Deferred;
    case O::Rejected: return Outcome::Rejected;
  }
  return Outcome::Rejected;
}

Outcome from(jobs::JobBook::ApplyOutcome o) {
  using O = jobs::JobBook::ApplyOutcome;
  switch (o) {
    case O::Applied: return Outcome::Applied;
    case O::Deferred: return Outcome::Deferred;
    case O::Rejected: return Outcome::Rejected;
  }
  return Outcome::Rejected;
}

}  // namespace

nlohmann::json add_file_payload(const catalogue::FileEntry& entry, const std::string& pfn) {
  return {{"entry", catalogue::to_json(entry)}, {"pfn", pfn}};
}

nlohmann::json add_replica_payload(const catalogue::Replica& r) {
  return {{"guid", r.guid.hex()}, {"site", r.site.str()}, {"pfn", r.pfn}};
}

nlohmann::json put_meta_payload(const metastore::MetaRecord& record) { return metastore::to_json(record); }

nlohmann::json define_attr_payload(const metastore::AttributeDescriptor& d) { return metastore::to_json(d); }

nlohmann::json job_event_payload(const jobs::JobEvent& e) { return jobs::to_json(e); }

void validate(const ChangeRecord& r) {
  auto emitter = [&](const SiteId& site) {
    if (site != r.origin) throw SyncError(Errc::BadRecord, "emitter does not match origin");
  };
  try {
    const auto& p = r.payload;
    switch (r.kind) {
      case Kind::AddFile: {
        auto e = catalogue::file_entry_from_json(p.at("entry"));
        (void)p.at("pfn").get<std::string>();
        emitter(e.created_site);
        break;
      }
      case Kind::AddReplica:
        emitter(replica_from_json(p).site);
        break;
      case Kind::PutMeta:
        emitter(metastore::record_from_json(p).origin);
        break;
      case Kind::DefineAttr:
        (void)metastore::descriptor_from_json(p);
        break;
      case Kind::JobEvent:
        emitter(jobs::event_from_json(p).site);
        break;
    }
  } catch (const SyncError&) {
    throw;
  } catch (const std::exception& e) {
    throw SyncError(Errc::BadRecord, std::string(kind_name(r.kind)) + ": " + e.what());
  }
}

Outcome ReplicatedState::apply(const ChangeRecord& r) {
  const auto& p = r.payload;
  switch (r.kind) {
    case Kind::AddFile:
      return from(catalogue.apply_add_file(catalogue::file_entry_from_json(p.at("entry")),
                                           p.at("pfn").get<std::string>()));
    case Kind::AddReplica:
      return from(catalogue.apply_add_replica(replica_from_json(p)));
    case Kind::PutMeta:
      return from(meta.apply_put(metastore::record_from_json(p)));
    case Kind::DefineAttr:
      return from(meta.apply_define(metastore::descriptor_from_json(p)));
    case Kind::JobEvent:
      return from(jobs.apply(jobs::event_from_json(p), r.origin, r.seq));
  }
  return Outcome::Rejected;
}

nlohmann::json ReplicatedState::canonical() const {
  return {{"catalogue", catalogue.canonical()}, {"meta", meta.canonical()}};
}

nlohmann::json ReplicatedState::canonical_with_jobs() const {
  auto j = canonical();
  j["jobs"] = jobs.canonical();
  return j;
}

SyncEngine::SyncEngine(SiteId self, ReplicatedState& state, ChangeLog* log)
    : self_(std::move(self)), state_(state), log_(log) {}

void SyncEngine::replay(const std::vector<ChangeRecord>& records) {
  Received res;
  commit(admit(records, res), false);
}

std::uint64_t SyncEngine::next_seq() const {
  std::uint64_t top = 0;
  if (auto it = vector_.find(self_); it != vector_.end()) top = it->second;
  if (auto g = gaps_.find(self_); g != gaps_.end() && !g->second.empty()) {
    top = std::max(top, g->second.rbegin()->first);
  }
  return top + 1;
}

ChangeRecord SyncEngine::append(Kind kind, nlohmann::json payload) {
  std::vector<std::pair<Kind, nlohmann::json>> one;
  one.emplace_back(kind, std::move(payload));
  return append_batch(std::move(one)).front();
}

std::vector<ChangeRecord> SyncEngine::append_batch(std::vector<std::pair<Kind, nlohmann::json>> items) {
  std::vector<ChangeRecord> run;
  std::uint64_t seq = next_seq();
  for (auto& [kind, payload] : items) {
    auto r = make_record(self_, seq++, kind, std::move(payload));
    validate(r);
    run.push_back(std::move(r));
  }
  if (gaps_.contains(self_) && !gaps_[self_].empty()) {
    // Own records re-learned past a gap; keep ordering by routing through the buffer.
    Received res;
    auto applicable = admit(run, res);
    commit(applicable, true);
    return run;
  }
  commit(run, true);
  return run;
}

std::vector<ChangeRecord> SyncEngine::admit(const std::vector<ChangeRecord>& batch, Received& res) {
  std::map<SiteId, std::size_t> added;
  for (const auto& r : batch) {
    const std::uint64_t have = vector_.contains(r.origin) ? vector_.at(r.origin) : 0;
    auto& gap = gaps_[r.origin];
    if (r.seq <= have || gap.contains(r.seq)) {
      ++res.duplicates;
      continue;
    }
    if (gap.size() >= kBufferCap) {
      throw SyncError(Errc::BufferOverflow, "gap buffer for " + r.origin.str() + " is full");
    }
    gap.emplace(r.seq, r);
    ++added[r.origin];
  }
  std::vector<ChangeRecord> run;
  for (auto& [origin, gap] : gaps_) {
    std::uint64_t next = (vector_.contains(origin) ? vector_.at(origin) : 0) + 1;
    for (auto it = gap.begin(); it != gap.end() && it->first == next; it = gap.erase(it), ++next) {
      run.push_back(std::move(it->second));
    }
  }
  for (auto it = gaps_.begin(); it != gaps_.end();) {
    it = it->second.empty() ? gaps_.erase(it) : std::next(it);
  }
  std::size_t total_added = 0;
  for (const auto& [_, n] : added) total_added += n;
  res.applied += run.size();
  res.buffered += total_added > run.size() ? total_added - run.size() : 0;
  return run;
}

void SyncEngine::commit(const std::vector<ChangeRecord>& run, bool write) {
  if (write && log_ != nullptr) log_->append(run);
  for (const auto& r : run) {
    if (state_.apply(r) == Outcome::Rejected) ++rejected_;
    auto& v = applied_[r.origin];
    v.push_back(r);
    vector_[r.origin] = r.seq;
  }
}

SyncEngine::Received SyncEngine::receive(const std::vector<ChangeRecord>& batch) {
  for (const auto& r : batch) {
    if (!r.verifies()) {
      throw SyncError(Errc::BadDigest, r.origin.str() + "#" + std::to_string(r.seq));
    }
    validate(r);
  }
  Received res;
  commit(admit(batch, res), true);
  return res;
}

std::vector<ChangeRecord> SyncEngine::pull_since(const SeqVector& after, std::size_t cap, bool* more) const {
  std::vector<ChangeRecord> out;
  if (more) *more = false;
  for (const auto& [origin, records] : applied_) {
    std::uint64_t from = 0;
    if (auto it = after.find(origin); it != after.end()) from = it->second;
    for (std::uint64_t i = from; i < records.size(); ++i) {
      if (out.size() == cap) {
        if (more) *more = true;
        return out;
      }
      out.push_back(records[i]);
    }
  }
  return out;
}

std::size_t SyncEngine::buffered() const {
  std::size_t n = 0;
  for (const auto& [_, g] : gaps_) n += g.size();
  return n;
}

std::size_t SyncEngine::record_count() const {
  std::size_t n = 0;
  for (const auto& [_, v] : applied_) n += v.size();
  return n;
}

}  // namespace gridbox::sync
