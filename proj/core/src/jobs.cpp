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

#include "gridbox/jobs.hpp"

#include <algorithm>

namespace gridbox::jobs {

namespace {

const char* errc_name(Errc c) {
  switch (c) {
    case Errc::UnknownLfn: return "UnknownLfn";
    case Errc::UnknownAlgorithm: return "UnknownAlgorithm";
    case Errc::UnknownJob: return "UnknownJob";
    case Errc::NoInputs: return "NoInputs";
  }
  return "JobError";
}

nlohmann::json lfn_list(const std::vector<Lfn>& v) {
  auto out = nlohmann::json::array();
  for (const auto& l : v) out.push_back(l.str());
  return out;
}

std::vector<Lfn> lfns_from(const nlohmann::json& j) {
  std::vector<Lfn> out;
  for (const auto& s : j) out.emplace_back(s.get<std::string>());
  return out;
}

bool terminal(Status s) { return s == Status::Done || s == Status::Failed; }

}  // namespace

std::string_view algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::QcReport: return "qc_report";
    case Algorithm::DetectMicrocalcs: return "detect_microcalcs";
    case Algorithm::Standardize: return "standardize";
  }
  return "?";
}

std::optional<Algorithm> parse_algorithm(std::string_view s) {
  if (s == "qc_report") return Algorithm::QcReport;
  if (s == "detect_microcalcs") return Algorithm::DetectMicrocalcs;
  if (s == "standardize") return Algorithm::Standardize;
  return std::nullopt;
}

std::string_view status_name(Status s) {
  switch (s) {
    case Status::Queued: return "queued";
    case Status::Claimed: return "claimed";
    case Status::Running: return "running";
    case Status::Done: return "done";
    case Status::Failed: return "failed";
  }
  return "?";
}

std::optional<Status> parse_status(std::string_view s) {
  for (Status st : {Status::Queued, Status::Claimed, Status::Running, Status::Done, Status::Failed}) {
    if (status_name(st) == s) return st;
  }
  return std::nullopt;
}

JobError::JobError(Errc code, const std::string& detail)
    : std::runtime_error(std::string(errc_name(code)) + ": " + detail), code_(code) {}

nlohmann::json to_json(const JobEvent& e) {
  nlohmann::json j{{"job", e.job.hex()},
                   {"transition", status_name(e.transition)},
                   {"site", e.site.str()},
                   {"at_ms", e.at_ms}};
  switch (e.transition) {
    case Status::Queued:
      j["algorithm"] = algorithm_name(e.algorithm);
      j["params"] = e.params;
      j["inputs"] = lfn_list(e.inputs);
      j["target"] = e.target.str();
      j["submitter"] = e.submitter.str();
      break;
    case Status::Done:
      j["outputs"] = lfn_list(e.outputs);
      break;
    case Status::Failed:
      j["reason"] = e.reason;
      break;
    default:
      break;
  }
  return j;
}

JobEvent event_from_json(const nlohmann::json& j) {
  JobEvent e;
  e.job = Guid::from_hex(j.at("job").get<std::string>());
  auto st = parse_status(j.at("transition").get<std::string>());
  if (!st) throw std::invalid_argument("unknown job transition");
  e.transition = *st;
  e.site = SiteId(j.at("site").get<std::string>());
  e.at_ms = j.at("at_ms").get<std::int64_t>();
  switch (e.transition) {
    case Status::Queued: {
      auto alg = parse_algorithm(j.at("algorithm").get<std::string>());
      if (!alg) throw std::invalid_argument("unknown algorithm");
      e.algorithm = *alg;
      e.params = j.at("params");
      e.inputs = lfns_from(j.at("inputs"));
      e.target = SiteId(j.at("target").get<std::string>());
      e.submitter = SiteId(j.at("submitter").get<std::string>());
      break;
    }
    case Status::Done:
      e.outputs = lfns_from(j.at("outputs"));
      break;
    case Status::Failed:
      e.reason = j.at("reason").get<std::string>();
      break;
    default:
      break;
  }
  return e;
}

nlohmann::json to_json(const Job& job) {
  return {{"id", job.id.hex()},
          {"algorithm", algorithm_name(job.algorithm)},
          {"params", job.params},
          {"inputs", lfn_list(job.inputs)},
          {"target", job.target.str()},
          {"submitter", job.submitter.str()},
          {"status", status_name(job.status)},
          {"outputs", lfn_list(job.outputs)},
          {"reason", job.reason},
          {"claims", job.claim_count}};
}

SiteId choose_target(const std::vector<Lfn>& inputs, const catalogue::Catalogue& cat) {
  if (inputs.empty()) throw JobError(Errc::NoInputs, "job needs at least one input");
  std::map<SiteId, std::size_t> holding;
  for (const auto& lfn : inputs) {
    auto resolved = cat.find(lfn);
    if (!resolved) throw JobError(Errc::UnknownLfn, lfn.str());
    for (const auto& r : resolved->replicas) ++holding[r.site];
  }
  // std::map iterates in SiteId order, so strict > keeps the smallest on ties.
  const SiteId* best = nullptr;
  std::size_t best_count = 0;
  for (const auto& [site, count] : holding) {
    if (count > best_count) {
      best = &site;
      best_count = count;
    }
  }
  return *best;
}

JobBook::ApplyOutcome JobBook::apply(const JobEvent& e, const SiteId& origin, std::uint64_t seq) {
  if (e.site != origin) return ApplyOutcome::Rejected;
  auto& t = jobs_[e.job];
  t.events.emplace(std::make_pair(origin, seq), e);
  refold(t);
  if (!t.job) return ApplyOutcome::Deferred;
  if (e.transition == Status::Queued) return origin == e.submitter ? ApplyOutcome::Applied : ApplyOutcome::Rejected;
  return origin == t.job->target ? ApplyOutcome::Applied : ApplyOutcome::Rejected;
}

void JobBook::refold(Tracked& t) {
  t.job.reset();
  for (const auto& [key, e] : t.events) {
    if (e.transition == Status::Queued && key.first == e.submitter) {
      Job job;
      job.id = e.job;
      job.algorithm = e.algorithm;
      job.params = e.params;
      job.inputs = e.inputs;
      job.target = e.target;
      job.submitter = e.submitter;
      job.queued_seq = key.second;
      job.last_event_ms = e.at_ms;
      t.job = std::move(job);
      break;
    }
  }
  if (!t.job) return;
  Job& job = *t.job;
  for (const auto& [key, e] : t.events) {
    if (key.first != job.target || e.transition == Status::Queued) continue;
    job.last_event_ms = std::max(job.last_event_ms, e.at_ms);
    switch (e.transition) {
      case Status::Claimed:
        ++job.claim_count;
        if (job.status == Status::Queued) job.status = Status::Claimed;
        break;
      case Status::Running:
        if (!terminal(job.status)) job.status = Status::Running;
        break;
      case Status::Done:
        job.status = Status::Done;
        job.outputs = e.outputs;
        job.reason.clear();
        break;
      case Status::Failed:
        job.status = Status::Failed;
        job.outputs.clear();
        job.reason = e.reason;
        break;
      case Status::Queued:
        break;
    }
  }
}

const Job* JobBook::find(const JobId& id) const {
  auto it = jobs_.find(id);
  if (it == jobs_.end() || !it->second.job) return nullptr;
  return &*it->second.job;
}

Job JobBook::status(const JobId& id) const {
  const Job* job = find(id);
  if (!job) throw JobError(Errc::UnknownJob, id.hex());
  return *job;
}

std::vector<Job> JobBook::queued_for(const SiteId& site) const {
  std::vector<Job> out;
  for (const auto& [_, t] : jobs_) {
    if (t.job && t.job->target == site && t.job->status == Status::Queued) out.push_back(*t.job);
  }
  std::sort(out.begin(), out.end(), [](const Job& a, const Job& b) {
    return std::tie(a.submitter, a.queued_seq) < std::tie(b.submitter, b.queued_seq);
  });
  return out;
}

std::vector<Job> JobBook::unfinished_at(const SiteId& site) const {
  std::vector<Job> out;
  for (const auto& [_, t] : jobs_) {
    if (t.job && t.job->target == site &&
        (t.job->status == Status::Claimed || t.job->status == Status::Running)) {
      out.push_back(*t.job);
    }
  }
  return out;
}

std::vector<Job> JobBook::all() const {
  std::vector<Job> out;
  for (const auto& [_, t] : jobs_) {
    if (t.job) out.push_back(*t.job);
  }
  return out;
}

nlohmann::json JobBook::canonical() const {
  auto out = nlohmann::json::array();
  for (const auto& job : all()) out.push_back(to_json(job));
  return out;
}

analysis::McParams mc_params_from_json(const nlohmann::json& params) {
  analysis::McParams p;
  if (!params.is_object()) return p;
  p.radius = params.value("r", p.radius);
  p.k = params.value("k", p.k);
  p.area_min = params.value("area_min", p.area_min);
  p.area_max = params.value("area_max", p.area_max);
  return p;
}

AlgorithmOutput run_algorithm(Algorithm algorithm, const nlohmann::json& params,
                              const dataset::Dataset& input) {
  using analysis::AnalysisError;
  const analysis::Image img = analysis::image_from_dataset(input);
  const auto mc = mc_params_from_json(params);
  AlgorithmOutput out;
  switch (algorithm) {
    case Algorithm::QcReport: {
      auto report = analysis::qc_report(img, mc);
      out.image_attrs = {{"mean_brightness", report.mean_brightness},
                         {"rms_contrast", report.rms_contrast},
                         {"breast_density", report.breast_density},
                         {"microcalc_count", report.microcalc_count}};
      break;
    }
    case Algorithm::DetectMicrocalcs: {
      auto report = analysis::qc_report(img, mc);
      auto locs = nlohmann::json::array();
      for (const auto& c : report.microcalc_locations) locs.push_back({c.row, c.col});
      out.image_attrs = {{"microcalc_count", report.microcalc_count},
                         {"microcalc_locations", locs.dump()}};
      break;
    }
    case Algorithm::Standardize: {
      const auto mask = analysis::segment_breast(img);
      const auto standardized = analysis::standardize(img, mask);
      dataset::Dataset derived = input;
      analysis::store_in_dataset(standardized, derived);
      out.derived = std::move(derived);
      break;
    }
  }
  return out;
}

}  // namespace gridbox::jobs
