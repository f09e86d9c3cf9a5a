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
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridbox/node.hpp"
#include "gridbox/transfer.hpp"

// In-process federation on a virtual clock: N nodes, a per-link fault model and
// deterministic scheduling of pushes, anti-entropy ticks and agent steps.
namespace gridbox::simnet {

using node::ApiRequest;
using node::ApiResponse;

struct LinkModel {
  double latency_ms = 20;
  double drop = 0;  // probability per message
  bool partitioned = false;
};

struct TopologySpec {
  int sites = 4;  // named site-a, site-b, ...
  std::uint64_t seed = 1;
  LinkModel link;
  double sync_interval_s = 5;
  double agent_interval_s = 1;
  double query_timeout_s = 10;
  double job_stall_s = 300;
  std::uint64_t replicate_threshold_bytes = 64ull << 20;
  std::filesystem::path root;  // empty: a fresh temp dir removed on destruction
};

TopologySpec topology_from_json(const nlohmann::json& j);

struct Counters {
  std::uint64_t messages = 0;
  std::uint64_t bytes = 0;
  std::uint64_t dropped = 0;
  std::uint64_t secret_hits = 0;  // registered secrets seen in inter-site traffic

  nlohmann::json to_json() const;
};

// Thrown by crash points. Not a std::exception so node code cannot swallow it.
struct SimCrash {
  std::string point;
};

struct UnknownSite : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

class SimNetwork {
 public:
  explicit SimNetwork(TopologySpec spec);
  ~SimNetwork();
  SimNetwork(const SimNetwork&) = delete;
  SimNetwork& operator=(const SimNetwork&) = delete;

  const TopologySpec& spec() const { return spec_; }
  const std::vector<SiteId>& sites() const { return ids_; }
  SiteId site(int index) const;
  std::int64_t now_ms() const { return now_; }

  // Client request to a node's document API; 503 when the node is down.
  ApiResponse request(const SiteId& site, ApiRequest req);
  ApiResponse post_json(const SiteId& site, const std::string& path, const nlohmann::json& body);
  ApiResponse get(const SiteId& site, const std::string& path, std::map<std::string, std::string> params = {});

  // Runs scheduled work up to now + ms.
  void advance(std::int64_t ms);

  // Faults, applied between steps.
  void set_link(const SiteId& from, const SiteId& to, LinkModel model);
  void partition(const std::vector<std::vector<SiteId>>& groups);
  void isolate(const SiteId& site);
  void heal();
  void kill(const SiteId& site);
  void restart(const SiteId& site, bool recover_log = false);
  bool alive(const SiteId& site) const;
  // The node is killed the next time it reaches `point`.
  void crash_at(const SiteId& site, const std::string& point);
  // Flips a byte in the next n DATA frames sent to `site` over DIMSE.
  void flip_frames(const SiteId& site, int n);

  // An SCU link from `from` (or an outside workstation) into `to`'s SCP.
  std::unique_ptr<transfer::Link> dimse_link(const SiteId& to);
  transfer::AssocParams assoc_params(const SiteId& from, const SiteId& to) const;

  struct Convergence {
    bool converged = false;
    std::int64_t elapsed_ms = 0;
  };
  // Polls seq vectors once per sync interval until all live nodes agree for two polls.
  Convergence wait_converged(std::int64_t bound_ms = 60000);
  // True when every live node serializes the same catalogue and metadata.
  bool states_identical() const;

  void register_secret(const std::string& s);
  const Counters& counters() const { return counters_; }
  std::shared_ptr<transfer::WireCapture> capture() const { return capture_; }

  const node::NodeConfig& config(const SiteId& site) const;
  node::Node* node(const SiteId& site);
  std::filesystem::path root() const { return root_; }

 private:
  class Endpoint;
  struct Event {
    std::int64_t at;
    std::uint64_t seq;
    std::function<void()> fn;
    bool operator>(const Event& o) const { return at != o.at ? at > o.at : seq > o.seq; }
  };

  std::size_t index(const SiteId& site) const;
  void schedule(std::int64_t at, std::function<void()> fn);
  void start_node(std::size_t i, bool recover_log);
  bool link_passes(std::size_t from, std::size_t to);
  void account(const std::string& body);
  // Runs fn against node i, killing it on a crash point.
  template <typename F>
  void guarded(std::size_t i, F&& fn);

  TopologySpec spec_;
  std::filesystem::path root_;
  bool owns_root_ = false;
  std::vector<SiteId> ids_;
  std::vector<node::NodeConfig> configs_;
  std::vector<std::unique_ptr<Endpoint>> endpoints_;
  std::vector<std::unique_ptr<node::Node>> nodes_;
  std::vector<std::set<std::string>> crash_points_;
  std::vector<std::shared_ptr<transfer::LinkFaults>> faults_;
  std::map<std::pair<std::size_t, std::size_t>, LinkModel> links_;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> events_;
  std::uint64_t event_seq_ = 0;
  std::int64_t now_ = 0;
  std::mt19937_64 rng_;
  Counters counters_;
  std::vector<std::string> secrets_;
  std::shared_ptr<transfer::WireCapture> capture_;
};

}  // namespace gridbox::simnet
