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

#include "gridbox/scenario.hpp"

#include <chrono>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "gridbox/crypto.hpp"
#include "gridbox/dataset.hpp"
#include "gridbox/phantom.hpp"
#include "gridbox/simnet.hpp"

namespace gridbox::simnet {

namespace {

struct Ack {
  SiteId site;
  std::string lfn;
  std::string guid;
  std::string patient_id;
};

std::string read_all(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

class Runner {
 public:
  Runner(const nlohmann::json& scenario, const ScenarioOptions& options)
      : name_(scenario.value("name", "unnamed")), topo_(topology(scenario, options)), net_(topo_) {}

  nlohmann::json run(const nlohmann::json& steps) {
    if (!steps.is_array()) throw BadScenario("steps must be an array");
    auto report_steps = nlohmann::json::array();
    for (std::size_t i = 0; i < steps.size(); ++i) {
      const auto& step = steps[i];
      const std::string op = step.value("op", "");
      nlohmann::json entry{{"index", i}, {"op", op}};
      try {
        nlohmann::json detail = execute(op, step);
        entry["ok"] = !detail.contains("failure");
        entry["detail"] = std::move(detail);
      } catch (const BadScenario&) {
        throw;
      } catch (const std::exception& e) {
        entry["ok"] = false;
        entry["detail"] = {{"failure", e.what()}};
      }
      if (!entry["ok"].get<bool>()) passed_ = false;
      report_steps.push_back(std::move(entry));
    }
    std::string digest;
    for (const auto& s : net_.sites()) {
      if (auto* n = net_.node(s)) {
        digest = to_hex(crypto::sha256(as_bytes(n->canonical_with_jobs().dump())));
        break;
      }
    }
    auto acks = nlohmann::json::array();
    for (const auto& a : acks_) acks.push_back({{"site", a.site.str()}, {"lfn", a.lfn}, {"guid", a.guid}});
    return {{"name", name_},
            {"seed", topo_.seed},
            {"passed", passed_},
            {"steps", std::move(report_steps)},
            {"assertions", {{"passed", asserts_passed_}, {"failed", asserts_failed_}}},
            {"counters", net_.counters().to_json()},
            {"dimse", {{"frames", net_.capture()->count()}, {"bytes", net_.capture()->bytes()}}},
            {"acknowledged", acks.size()},
            {"virtual_ms", net_.now_ms()},
            {"state_digest", digest}};
  }

 private:
  static TopologySpec topology(const nlohmann::json& scenario, const ScenarioOptions& options) {
    TopologySpec t;
    try {
      t = topology_from_json(scenario.value("topology", nlohmann::json::object()));
    } catch (const std::exception& e) {
      throw BadScenario(std::string("topology: ") + e.what());
    }
    if (options.seed) t.seed = *options.seed;
    t.root = options.root;
    return t;
  }

  SiteId site_arg(const nlohmann::json& step, const char* key = "site") {
    if (!step.contains(key)) throw BadScenario(std::string("missing '") + key + "'");
    SiteId s(step.at(key).get<std::string>());
    (void)net_.config(s);  // UnknownSite
    return s;
  }

  nlohmann::json fail(const std::string& why) { return {{"failure", why}}; }

  nlohmann::json check(bool ok, const std::string& what) {
    if (ok) {
      ++asserts_passed_;
      return {{"assert", what}};
    }
    ++asserts_failed_;
    return fail(what);
  }

  nlohmann::json execute(const std::string& op, const nlohmann::json& step) {
    if (op == "ingest") return ingest(step);
    if (op == "partition") {
      std::vector<std::vector<SiteId>> groups;
      for (const auto& g : step.at("groups")) {
        groups.emplace_back();
        for (const auto& s : g) groups.back().emplace_back(s.get<std::string>());
      }
      net_.partition(groups);
      return nlohmann::json::object();
    }
    if (op == "isolate") {
      net_.isolate(site_arg(step));
      return nlohmann::json::object();
    }
    if (op == "heal") {
      net_.heal();
      return nlohmann::json::object();
    }
    if (op == "advance") {
      net_.advance(step.value("ms", std::int64_t{0}));
      return nlohmann::json::object();
    }
    if (op == "wait_converged") {
      auto c = net_.wait_converged(step.value("bound_ms", std::int64_t{60000}));
      nlohmann::json d{{"elapsed_ms", c.elapsed_ms}};
      if (!c.converged) return fail("ConvergenceTimeout after " + std::to_string(c.elapsed_ms) + " ms");
      if (!net_.states_identical()) return fail("seq vectors agree but canonical states differ");
      return d;
    }
    if (op == "query") {
      const SiteId s = site_arg(step);
      nlohmann::json body{{"text", step.at("text")}};
      if (step.contains("scope")) body["scope"] = step["scope"];
      auto rsp = net_.post_json(s, "/api/query", body);
      nlohmann::json doc = rsp.doc();
      if (step.contains("as")) named_[step["as"].get<std::string>()] = doc;
      if (rsp.status != 200) return fail("HTTP " + std::to_string(rsp.status) + ": " + rsp.body);
      return {{"rows", doc.at("rows").size()}, {"failed", doc.value("failed", nlohmann::json::array())}};
    }
    if (op == "submit_job") return submit_job(step);
    if (op == "wait_job") return wait_job(step);
    if (op == "kill") {
      net_.kill(site_arg(step));
      return nlohmann::json::object();
    }
    if (op == "restart") {
      net_.restart(site_arg(step), step.value("recover_log", false));
      return nlohmann::json::object();
    }
    if (op == "crash_at") {
      net_.crash_at(site_arg(step), step.at("point").get<std::string>());
      return nlohmann::json::object();
    }
    if (op == "flip_frames") {
      net_.flip_frames(site_arg(step), step.value("count", 1));
      return nlohmann::json::object();
    }
    if (op == "store") return store(step);
    if (op == "assert") return assertion(step);
    throw BadScenario("unknown op '" + op + "'");
  }

  PhantomSpec phantom_for(const nlohmann::json& overrides, std::uint64_t n) {
    PhantomSpec p;
    p.rows = 96;
    p.cols = 96;
    p.spots = static_cast<int>(n % 4);
    p.dense_fraction = 0.15 + 0.05 * static_cast<double>(n % 8);
    PhantomSpec o = spec_from_json(overrides);
    if (overrides.contains("rows")) p.rows = o.rows;
    if (overrides.contains("cols")) p.cols = o.cols;
    if (overrides.contains("bits")) p.bits = o.bits;
    if (overrides.contains("spots")) p.spots = o.spots;
    if (overrides.contains("dense_fraction")) p.dense_fraction = o.dense_fraction;
    if (overrides.contains("noise")) p.noise = o.noise;
    const std::uint64_t patient = n / 2;
    const std::string tag = std::to_string(topo_.seed) + "." + std::to_string(patient);
    p.seed = topo_.seed * 1000003 + n;
    p.patient_id = "PID-" + std::to_string(topo_.seed) + "-" + std::to_string(patient);
    p.patient_name = "DOE^JANE" + std::to_string(patient);
    p.study_uid = "1.2.826.0.1.3680043.10.9.2." + tag;
    p.sop_uid = "1.2.826.0.1.3680043.10.9.1." + std::to_string(topo_.seed) + "." + std::to_string(n);
    p.sex = patient % 5 == 0 ? "M" : "F";
    p.age = (patient % 50 + 35 < 100 ? "0" : "") + std::to_string(patient % 50 + 35) + "Y";
    p.study_date = "2025" + std::string(patient % 12 < 9 ? "0" : "") + std::to_string(patient % 12 + 1) + "1" +
                   std::to_string(patient % 9);
    return p;
  }

  nlohmann::json ingest(const nlohmann::json& step) {
    const int count = step.value("count", 1);
    const std::string where = step.value("site", "*");
    const std::int64_t interval = step.value("interval_ms", std::int64_t{0});
    const auto overrides = step.value("phantom", nlohmann::json::object());
    int acked = 0, refused = 0;
    for (int k = 0; k < count; ++k) {
      const std::uint64_t n = ingest_counter_++;
      const SiteId s = where == "*" ? net_.site(static_cast<int>(n % net_.sites().size())) : SiteId(where);
      const PhantomSpec spec = phantom_for(overrides, n);
      const Phantom ph = generate_phantom(spec);
      net_.register_secret(spec.patient_id);
      node::ApiRequest req{"POST", "/api/ingest", {}, {}, std::string(ph.mgd.begin(), ph.mgd.end())};
      if (step.contains("attrs")) {
        req.headers["X-Patient-Attrs"] = crypto::base64_encode(as_bytes(step.at("attrs").dump()));
      }
      auto rsp = net_.request(s, req);
      if (rsp.status == 201) {
        auto doc = rsp.doc();
        acks_.push_back({s, doc.at("lfn"), doc.at("guid"), spec.patient_id});
        ++acked;
      } else {
        ++refused;
      }
      if (interval > 0) net_.advance(interval);
    }
    return {{"acknowledged", acked}, {"refused", refused}};
  }

  nlohmann::json submit_job(const nlohmann::json& step) {
    const SiteId s = site_arg(step);
    auto inputs = nlohmann::json::array();
    if (step.contains("inputs")) {
      inputs = step.at("inputs");
    } else {
      const SiteId holder = site_arg(step, "inputs_at");
      const int want = step.value("count", 1);
      for (const auto& a : acks_) {
        if (a.site == holder && static_cast<int>(inputs.size()) < want) inputs.push_back(a.lfn);
      }
    }
    nlohmann::json body{{"algorithm", step.at("algorithm")},
                        {"params", step.value("params", nlohmann::json::object())},
                        {"inputs", inputs}};
    auto rsp = net_.post_json(s, "/api/jobs", body);
    if (rsp.status != 201) return fail("HTTP " + std::to_string(rsp.status) + ": " + rsp.body);
    auto job = rsp.doc();
    if (step.contains("as")) named_[step["as"].get<std::string>()] = job;
    return {{"job", job.at("id")}, {"target", job.at("target")}};
  }

  std::string job_id(const nlohmann::json& step) {
    const std::string key = step.at("job").get<std::string>();
    auto it = named_.find(key);
    if (it == named_.end()) throw BadScenario("unknown job '" + key + "'");
    return it->second.at("id").get<std::string>();
  }

  nlohmann::json wait_job(const nlohmann::json& step) {
    const std::string id = job_id(step);
    const std::int64_t bound = step.value("bound_ms", std::int64_t{120000});
    const std::int64_t start = net_.now_ms();
    while (true) {
      bool all = true;
      nlohmann::json statuses = nlohmann::json::object();
      for (const auto& s : net_.sites()) {
        if (!net_.alive(s)) continue;
        auto rsp = net_.get(s, "/api/jobs/" + id);
        const std::string st = rsp.status == 200 ? rsp.doc().value("status", "") : "unknown";
        statuses[s.str()] = st;
        if (st != "done" && st != "failed") all = false;
      }
      if (all) return {{"elapsed_ms", net_.now_ms() - start}, {"statuses", statuses}};
      if (net_.now_ms() - start >= bound) return fail("job not terminal everywhere: " + statuses.dump());
      net_.advance(1000);
    }
  }

  nlohmann::json store(const nlohmann::json& step) {
    const SiteId to = site_arg(step);
    const SiteId from = step.contains("from") ? site_arg(step, "from") : to;
    PhantomSpec spec = phantom_for(nlohmann::json::object(), 900000 + store_counter_++);
    Phantom ph = generate_phantom(spec);
    net_.register_secret(spec.patient_id);
    dataset::Anonymized anon = dataset::anonymize(ph.dataset, net_.config(from).federation_key);
    transfer::AssocParams params = net_.assoc_params(from, to);
    if (step.value("wrong_key", false)) params.key[0] ^= 0xFF;
    if (step.contains("key_id")) params.key_id = step["key_id"].get<std::uint8_t>();
    if (step.contains("flip")) net_.flip_frames(to, step["flip"].get<int>());
    const std::size_t before = net_.node(to)->file_count();
    std::string outcome = "stored";
    int reason = 0;
    try {
      auto assoc = transfer::Association::open(net_.dimse_link(to), params);
      assoc.c_store(dataset::encode(anon.dataset));
      assoc.release();
    } catch (const transfer::TransferError& e) {
      reason = e.reason();
      outcome = e.code() == transfer::Errc::Rejected ? "rejected" : e.code() == transfer::Errc::AssociationAborted ? "aborted" : "failed";
    }
    const std::size_t after = net_.node(to)->file_count();
    const std::string expect = step.value("expect", "stored");
    nlohmann::json d{{"outcome", outcome}, {"reason", reason}, {"registered", after - before}};
    if (outcome != expect) return fail("expected " + expect + ", got " + outcome + " " + d.dump());
    if (step.contains("expect_reason") && step["expect_reason"].get<int>() != reason) {
      return fail("expected reason " + step["expect_reason"].dump() + ", got " + std::to_string(reason));
    }
    if (outcome != "stored" && after != before) return fail("partial registration after " + outcome);
    return d;
  }

  nlohmann::json assertion(const nlohmann::json& step) {
    const std::string what = step.value("check", "");
    if (what == "converged") return check(net_.states_identical(), "canonical states identical");
    if (what == "ingests_resolvable") {
      std::size_t missing = 0;
      for (const auto& s : net_.sites()) {
        if (!net_.alive(s)) continue;
        for (const auto& a : acks_) {
          if (net_.get(s, "/api/catalogue/resolve", {{"lfn", a.lfn}}).status != 200) ++missing;
        }
      }
      return check(missing == 0, std::to_string(missing) + " unresolved acknowledged ingests");
    }
    if (what == "file_counts_equal") {
      std::optional<std::size_t> files;
      bool same = true;
      for (const auto& s : net_.sites()) {
        if (!net_.alive(s)) continue;
        const std::size_t f = net_.get(s, "/api/status").doc().at("files");
        if (files && *files != f) same = false;
        files = f;
      }
      return check(same, "equal file counts");
    }
    if (what == "no_secrets") {
      std::vector<std::string> secrets;
      for (const auto& a : acks_) secrets.push_back(a.patient_id);
      std::size_t hits = net_.counters().secret_hits;
      for (const auto& frame : net_.capture()->frames()) {
        const std::string text(frame.begin(), frame.end());
        for (const auto& s : secrets) hits += text.find(s) != std::string::npos;
      }
      for (const auto& s : net_.sites()) {
        const std::string log = read_all(net_.config(s).data_dir / "log" / "changes.log");
        for (const auto& sec : secrets) hits += log.find(sec) != std::string::npos;
      }
      return check(hits == 0, std::to_string(hits) + " patient identifier occurrences");
    }
    if (what == "rows") {
      const auto& q = named(step.at("query").get<std::string>());
      const std::size_t rows = q.at("rows").size();
      if (step.contains("count")) return check(rows == step["count"].get<std::size_t>(), "row count " + std::to_string(rows));
      if (step.contains("equals_acknowledged")) return check(rows == acks_.size(), "row count " + std::to_string(rows));
      return check(rows >= step.value("min", std::size_t{1}), "row count " + std::to_string(rows));
    }
    if (what == "partial") {
      const auto& q = named(step.at("query").get<std::string>());
      std::set<std::string> failed;
      for (const auto& f : q.at("failed")) failed.insert(f.at("site").get<std::string>());
      std::set<std::string> want;
      for (const auto& s : step.at("failed")) want.insert(s.get<std::string>());
      return check(failed == want, "failed sites " + q.at("failed").dump());
    }
    if (what == "job") {
      const std::string id = job_id(step);
      const std::string want = step.value("status", "done");
      bool ok = true;
      nlohmann::json seen = nlohmann::json::object();
      for (const auto& s : net_.sites()) {
        if (!net_.alive(s)) continue;
        auto doc = net_.get(s, "/api/jobs/" + id).doc();
        seen[s.str()] = doc;
        if (doc.value("status", "") != want) ok = false;
        if (step.contains("claim_count") && doc.value("claims", 0) != step["claim_count"].get<int>()) ok = false;
        if (step.contains("target") && doc.value("target", "") != step["target"].get<std::string>()) ok = false;
      }
      return check(ok, "job " + want + " everywhere");
    }
    throw BadScenario("unknown check '" + what + "'");
  }

  const nlohmann::json& named(const std::string& key) {
    auto it = named_.find(key);
    if (it == named_.end()) throw BadScenario("unknown name '" + key + "'");
    return it->second;
  }

  std::string name_;
  TopologySpec topo_;
  SimNetwork net_;
  std::vector<Ack> acks_;
  std::map<std::string, nlohmann::json> named_;
  std::uint64_t ingest_counter_ = 0;
  std::uint64_t store_counter_ = 0;
  bool passed_ = true;
  int asserts_passed_ = 0;
  int asserts_failed_ = 0;
};

}  // namespace

nlohmann::json run_scenario(const nlohmann::json& scenario, const ScenarioOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  Runner runner(scenario, options);
  nlohmann::json report = runner.run(scenario.value("steps", nlohmann::json::array()));
  report["wall_ms"] =
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace gridbox::simnet
