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

#include "gridbox/federation.hpp"

#include <algorithm>
#include <condition_variable>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <thread>

namespace gridbox::federation {

using metastore::Entity;

QueryPlan plan(const query::Query& typed, const SiteId& self, const std::vector<SiteId>& peers,
               std::chrono::milliseconds timeout) {
  std::set<SiteId> targets(peers.begin(), peers.end());
  targets.insert(self);
  return QueryPlan{typed, std::vector<SiteId>(targets.begin(), targets.end()), timeout, self};
}

nlohmann::json subquery_document(const query::Query& typed) {
  return {{"ast", query::to_json(typed)}, {"scope", "local"}};
}

namespace {

struct Pending {
  std::mutex mu;
  std::condition_variable cv;
  std::size_t outstanding = 0;
  std::map<SiteId, SiteAnswer> answers;
  std::map<SiteId, std::string> errors;
};

}  // namespace

FederatedResult execute(const QueryPlan& p, const Dispatch& dispatch, bool concurrent) {
  const nlohmann::json doc = subquery_document(p.ast);
  std::vector<std::pair<SiteId, SiteAnswer>> answers;
  std::vector<SiteFailure> failed;
  if (!concurrent) {
    for (const auto& site : p.targets) {
      try {
        answers.emplace_back(site, dispatch(site, doc));
      } catch (const std::exception& e) {
        failed.push_back({site, e.what()});
      }
    }
    return merge(p.ast, std::move(answers), std::move(failed));
  }
  auto state = std::make_shared<Pending>();
  state->outstanding = p.targets.size();
  for (const auto& site : p.targets) {
    std::thread([state, dispatch, site, doc] {
      std::optional<SiteAnswer> answer;
      std::string error;
      try {
        answer = dispatch(site, doc);
      } catch (const std::exception& e) {
        error = e.what();
      } catch (...) {
        error = "unknown error";
      }
      std::lock_guard lock(state->mu);
      if (answer) {
        state->answers.emplace(site, std::move(*answer));
      } else {
        state->errors.emplace(site, error);
      }
      --state->outstanding;
      state->cv.notify_all();
    }).detach();
  }
  std::unique_lock lock(state->mu);
  state->cv.wait_for(lock, p.timeout, [&] { return state->outstanding == 0; });
  for (const auto& site : p.targets) {
    if (auto a = state->answers.find(site); a != state->answers.end()) {
      answers.emplace_back(site, a->second);
    } else if (auto e = state->errors.find(site); e != state->errors.end()) {
      failed.push_back({site, e->second});
    } else {
      failed.push_back({site, "Timeout"});
    }
  }
  lock.unlock();
  return merge(p.ast, std::move(answers), std::move(failed));
}

FederatedResult merge(const query::Query& typed, std::vector<std::pair<SiteId, SiteAnswer>> answers,
                      std::vector<SiteFailure> failed) {
  FederatedResult out;
  std::sort(answers.begin(), answers.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::map<std::map<Entity, std::string>, query::ResultRow> unique;
  for (auto& [site, answer] : answers) {
    out.responded.push_back(site);
    out.truncated = out.truncated || answer.truncated;
    for (auto& row : answer.rows) {
      row.site = site;
      auto [it, inserted] = unique.emplace(row.ids, row);
      if (!inserted && row.site < it->second.site) it->second = std::move(row);
    }
  }
  for (auto& [_, row] : unique) out.rows.push_back(std::move(row));
  std::stable_sort(out.rows.begin(), out.rows.end(), query::row_before);
  if (typed.limit && out.rows.size() > *typed.limit) {
    out.rows.resize(*typed.limit);
    out.truncated = true;
  }
  std::sort(failed.begin(), failed.end(), [](const auto& a, const auto& b) { return a.site < b.site; });
  out.failed = std::move(failed);
  return out;
}

nlohmann::json to_json(const FederatedResult& r, const query::Query& typed) {
  auto rows = nlohmann::json::array();
  for (const auto& row : r.rows) rows.push_back(query::to_json(row, typed));
  auto responded = nlohmann::json::array();
  for (const auto& s : r.responded) responded.push_back(s.str());
  auto failed = nlohmann::json::array();
  for (const auto& f : r.failed) failed.push_back({{"site", f.site.str()}, {"reason", f.reason}});
  auto proj = nlohmann::json::array();
  for (const auto& f : typed.projections) {
    proj.push_back(std::string(metastore::entity_name(f.entity)) + "." + f.attr);
  }
  return {{"columns", std::move(proj)},
          {"rows", std::move(rows)},
          {"responded", std::move(responded)},
          {"failed", std::move(failed)},
          {"truncated", r.truncated}};
}

FederatedResult result_from_json(const nlohmann::json& doc, const query::Query& typed) {
  FederatedResult r;
  try {
    for (const auto& row : doc.at("rows")) r.rows.push_back(query::row_from_json(row, typed));
    for (const auto& s : doc.at("responded")) r.responded.emplace_back(s.get<std::string>());
    for (const auto& f : doc.at("failed")) {
      r.failed.push_back({SiteId(f.at("site").get<std::string>()), f.at("reason").get<std::string>()});
    }
    r.truncated = doc.value("truncated", false);
  } catch (const nlohmann::json::exception& e) {
    throw query::QueryError(query::Errc::BadDocument, std::string("malformed result: ") + e.what());
  }
  return r;
}

query::PartitionFilter partition_filter(const metastore::MetaStore& meta, const catalogue::Catalogue& cat,
                                        const SiteId& site) {
  auto string_of = [&](Entity e, const std::string& id, const char* attr) -> std::optional<std::string> {
    const auto* rec = meta.current_record(e, id, attr);
    if (!rec) return std::nullopt;
    if (const auto* s = std::get_if<std::string>(&rec->value)) return *s;
    return std::nullopt;
  };
  auto held = std::make_shared<std::set<std::pair<Entity, std::string>>>();
  auto owned = std::make_shared<std::set<std::pair<Entity, std::string>>>();  // has any image
  for (const auto& row : meta.scan(Entity::Image)) {
    bool here = true;
    if (auto lfn = string_of(Entity::Image, row.entity_id, "lfn"); lfn && Lfn::valid(*lfn)) {
      if (auto resolved = cat.find(Lfn(*lfn))) {
        here = std::any_of(resolved->replicas.begin(), resolved->replicas.end(),
                           [&](const catalogue::Replica& r) { return r.site == site; });
      }
    }
    std::optional<std::string> study = string_of(Entity::Image, row.entity_id, "study_id");
    std::optional<std::string> patient;
    if (study) patient = string_of(Entity::Study, *study, "patient_id");
    if (study) owned->emplace(Entity::Study, *study);
    if (patient) owned->emplace(Entity::Patient, *patient);
    if (!here) continue;
    held->emplace(Entity::Image, row.entity_id);
    if (study) held->emplace(Entity::Study, *study);
    if (patient) held->emplace(Entity::Patient, *patient);
  }
  return [held, owned](Entity e, const std::string& id) {
    if (held->contains({e, id})) return true;
    if (e == Entity::Image) return false;
    return !owned->contains({e, id});
  };
}

std::string_view mode_name(TransferMode m) {
  return m == TransferMode::ReplicateBack ? "replicate_back" : "remote_analysis";
}

TransferDecision decide_transfer(const std::vector<Guid>& files, bool job_attached,
                                 const catalogue::Catalogue& cat, std::uint64_t threshold_bytes) {
  TransferDecision d;
  d.threshold_bytes = threshold_bytes;
  for (const auto& g : files) {
    auto r = cat.find(g);
    if (!r) throw UnknownGuid("unknown guid " + g.hex());
    d.total_bytes += r->entry.size;
  }
  d.mode = job_attached && d.total_bytes > threshold_bytes ? TransferMode::RemoteAnalysis
                                                           : TransferMode::ReplicateBack;
  return d;
}

}  // namespace gridbox::federation
