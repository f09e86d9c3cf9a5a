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
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridbox/analysis.hpp"
#include "gridbox/catalogue.hpp"
#include "gridbox/metastore.hpp"
#include "gridbox/types.hpp"

// Data-locality job execution: a job is pinned at submission to the site holding most of
// its inputs and executed there by a pulling agent. Job state is a fold over JobEvents.
namespace gridbox::jobs {

using JobId = Guid;

enum class Algorithm { QcReport, DetectMicrocalcs, Standardize };
std::string_view algorithm_name(Algorithm a);
std::optional<Algorithm> parse_algorithm(std::string_view s);

enum class Status { Queued, Claimed, Running, Done, Failed };
std::string_view status_name(Status s);
std::optional<Status> parse_status(std::string_view s);

struct JobEvent {
  JobId job;
  Status transition = Status::Queued;
  SiteId site;  // emitting site
  std::int64_t at_ms = 0;
  // queued only
  Algorithm algorithm = Algorithm::QcReport;
  nlohmann::json params = nlohmann::json::object();
  std::vector<Lfn> inputs;
  SiteId target;
  SiteId submitter;
  // done only
  std::vector<Lfn> outputs;
  // failed only
  std::string reason;
};

nlohmann::json to_json(const JobEvent& e);
JobEvent event_from_json(const nlohmann::json& j);

struct Job {
  JobId id;
  Algorithm algorithm = Algorithm::QcReport;
  nlohmann::json params = nlohmann::json::object();
  std::vector<Lfn> inputs;
  SiteId target;
  SiteId submitter;
  Status status = Status::Queued;
  std::vector<Lfn> outputs;
  std::string reason;
  std::uint64_t queued_seq = 0;      // seq of the queued event at the submitter
  std::uint64_t claim_count = 0;
  std::int64_t last_event_ms = 0;
};

nlohmann::json to_json(const Job& job);

enum class Errc { UnknownLfn, UnknownAlgorithm, UnknownJob, NoInputs };

class JobError : public std::runtime_error {
 public:
  JobError(Errc code, const std::string& detail);
  Errc code() const { return code_; }

 private:
  Errc code_;
};

// Site holding the most input replicas; ties -> lexicographically smallest SiteId.
SiteId choose_target(const std::vector<Lfn>& inputs, const catalogue::Catalogue& cat);

// Job state folded from events in any delivery order.
class JobBook {
 public:
  enum class ApplyOutcome { Applied, Deferred, Rejected };
  ApplyOutcome apply(const JobEvent& e, const SiteId& origin, std::uint64_t seq);

  const Job* find(const JobId& id) const;
  Job status(const JobId& id) const;  // throws JobError(UnknownJob)

  // Queued jobs targeted at `site`, ordered by (submitter, queued seq).
  std::vector<Job> queued_for(const SiteId& site) const;
  // Claimed or running jobs at `site` without a terminal event.
  std::vector<Job> unfinished_at(const SiteId& site) const;

  std::vector<Job> all() const;
  nlohmann::json canonical() const;

 private:
  struct Tracked {
    std::optional<Job> job;
    // (origin, seq) -> event; emitters are checked against the queued event on refold
    std::map<std::pair<SiteId, std::uint64_t>, JobEvent> events;
  };
  void refold(Tracked& t);

  std::map<JobId, Tracked> jobs_;
};

// Result of running one algorithm on one input image.
struct AlgorithmOutput {
  std::vector<std::pair<std::string, metastore::Value>> image_attrs;  // attr -> value
  std::optional<dataset::Dataset> derived;  // new image to register under /derived
};

AlgorithmOutput run_algorithm(Algorithm algorithm, const nlohmann::json& params,
                              const dataset::Dataset& input);

analysis::McParams mc_params_from_json(const nlohmann::json& params);

}  // namespace gridbox::jobs
