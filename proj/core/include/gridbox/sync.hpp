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
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridbox/catalogue.hpp"
#include "gridbox/change_log.hpp"
#include "gridbox/jobs.hpp"
#include "gridbox/metastore.hpp"

// Replicated state and the per-node sync engine: write-ahead append, gap-buffered apply,
// paged pull for anti-entropy.
namespace gridbox::sync {

nlohmann::json add_file_payload(const catalogue::FileEntry& entry, const std::string& pfn);
nlohmann::json add_replica_payload(const catalogue::Replica& replica);
nlohmann::json put_meta_payload(const metastore::MetaRecord& record);
nlohmann::json define_attr_payload(const metastore::AttributeDescriptor& d);
nlohmann::json job_event_payload(const jobs::JobEvent& e);

// Schema and emitter checks; throws SyncError(BadRecord).
void validate(const ChangeRecord& r);

enum class Outcome { Applied, Duplicate, Deferred, Rejected };

// Everything that change records fold into.
struct ReplicatedState {
  catalogue::Catalogue catalogue;
  metastore::MetaStore meta;
  jobs::JobBook jobs;

  Outcome apply(const ChangeRecord& r);
  // {catalogue, meta}: the converged view compared across sites.
  nlohmann::json canonical() const;
  nlohmann::json canonical_with_jobs() const;
};

class SyncEngine {
 public:
  static constexpr std::size_t kBufferCap = 10000;
  static constexpr std::size_t kPullCap = 1000;

  // `log` may be null for a purely in-memory engine.
  SyncEngine(SiteId self, ReplicatedState& state, ChangeLog* log);

  // Feeds records loaded from the local log; nothing is written.
  void replay(const std::vector<ChangeRecord>& records);

  // Write-ahead: logged and fsynced, then applied.
  ChangeRecord append(Kind kind, nlohmann::json payload);
  std::vector<ChangeRecord> append_batch(std::vector<std::pair<Kind, nlohmann::json>> items);
  std::uint64_t next_seq() const;

  struct Received {
    std::size_t applied = 0;
    std::size_t duplicates = 0;
    std::size_t buffered = 0;
  };
  // Validates the whole batch first (BadDigest / BadRecord reject it entirely), buffers gaps,
  // logs the newly applicable run with one fsync, then applies it.
  Received receive(const std::vector<ChangeRecord>& batch);

  // Records above `after`, in (origin, seq) order, at most `cap`.
  std::vector<ChangeRecord> pull_since(const SeqVector& after, std::size_t cap = kPullCap,
                                       bool* more = nullptr) const;

  const SeqVector& vector() const { return vector_; }
  const SiteId& self() const { return self_; }
  std::size_t buffered() const;
  std::size_t record_count() const;
  // Applies that the state rejected (schema-valid but conflicting).
  std::size_t rejected_count() const { return rejected_; }

 private:
  void commit(const std::vector<ChangeRecord>& run, bool write);
  std::vector<ChangeRecord> admit(const std::vector<ChangeRecord>& batch, Received& res);

  SiteId self_;
  ReplicatedState& state_;
  ChangeLog* log_;
  SeqVector vector_;
  std::map<SiteId, std::vector<ChangeRecord>> applied_;  // index = seq - 1
  std::map<SiteId, std::map<std::uint64_t, ChangeRecord>> gaps_;
  std::size_t rejected_ = 0;
};

}  // namespace gridbox::sync
