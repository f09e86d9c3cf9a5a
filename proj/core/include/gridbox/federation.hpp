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

#include <chrono>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridbox/catalogue.hpp"
#include "gridbox/metastore.hpp"
#include "gridbox/querylang.hpp"
#include "gridbox/types.hpp"

// Scatter/gather over the federation: one identical sub-query per site, merged at the
// coordinator.
namespace gridbox::federation {

struct QueryPlan {
  query::Query ast;  // typed
  std::vector<SiteId> targets;  // sorted, deduplicated, includes the coordinator
  std::chrono::milliseconds timeout{10000};
  SiteId coordinator;
};

QueryPlan plan(const query::Query& typed, const SiteId& self, const std::vector<SiteId>& peers,
               std::chrono::milliseconds timeout = std::chrono::milliseconds(10000));

struct SiteFailure {
  SiteId site;
  std::string reason;
  bool operator==(const SiteFailure&) const = default;
};

struct SiteAnswer {
  std::vector<query::ResultRow> rows;
  bool truncated = false;
};

struct FederatedResult {
  std::vector<query::ResultRow> rows;
  std::vector<SiteId> responded;
  std::vector<SiteFailure> failed;
  bool truncated = false;
};

// The document sent to every target.
nlohmann::json subquery_document(const query::Query& typed);

// Runs the sub-query at one site. Throws on failure; the message becomes the failure reason.
using Dispatch = std::function<SiteAnswer(const SiteId& site, const nlohmann::json& subquery)>;

// Concurrent dispatch waits at most plan.timeout; sequential dispatch relies on the
// dispatcher's own timeouts.
FederatedResult execute(const QueryPlan& plan, const Dispatch& dispatch, bool concurrent = true);

// Dedup by entity ids keeping the smallest site, global sort, global limit.
FederatedResult merge(const query::Query& typed, std::vector<std::pair<SiteId, SiteAnswer>> answers,
                      std::vector<SiteFailure> failed);

nlohmann::json to_json(const FederatedResult& r, const query::Query& typed);
FederatedResult result_from_json(const nlohmann::json& doc, const query::Query& typed);

// The rows a site answers for: images it holds a replica of, and studies/patients that own
// such an image. Entities without any image, or images whose file is not catalogued, are
// answered by every site.
query::PartitionFilter partition_filter(const metastore::MetaStore& meta, const catalogue::Catalogue& cat,
                                        const SiteId& site);

enum class TransferMode { ReplicateBack, RemoteAnalysis };
std::string_view mode_name(TransferMode m);

struct TransferDecision {
  TransferMode mode = TransferMode::ReplicateBack;
  std::uint64_t total_bytes = 0;
  std::uint64_t threshold_bytes = 0;
};

inline constexpr std::uint64_t kDefaultReplicateThreshold = 64ull << 20;

struct UnknownGuid : std::runtime_error {
  using std::runtime_error::runtime_error;
};

TransferDecision decide_transfer(const std::vector<Guid>& files, bool job_attached,
                                 const catalogue::Catalogue& cat,
                                 std::uint64_t threshold_bytes = kDefaultReplicateThreshold);

}  // namespace gridbox::federation
