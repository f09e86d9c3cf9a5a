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

#include "gridbox/simnet.hpp"

#include <cstdlib>

#include "gridbox/crypto.hpp"

namespace gridbox::simnet {

namespace fs = std::filesystem;

namespace {

constexpr std::int64_t kEpochMs = 1767225600000;  // 2026-01-01T00:00:00Z

double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::int64_t ms(double seconds) { return static_cast<std::int64_t>(seconds * 1000); }

LinkModel link_from_json(const nlohmann::json& j, LinkModel m) {
  m.latency_ms = j.value("latency_ms", m.latency_ms);
  m.drop = j.value("drop", m.drop);
  m.partitioned = j.value("partitioned", m.partitioned);
  return m;
}

}  // namespace

TopologySpec topology_from_json(const nlohmann::json& j) {
  TopologySpec t;
  t.sites = j.value("sites", t.sites);
  t.seed = j.value("seed", t.seed);
  if (j.contains("link")) t.link = link_from_json(j.at("link"), t.link);
  t.sync_interval_s = j.value("sync_interval_s", t.sync_interval_s);
  t.agent_interval_s = j.value("agent_interval_s", t.agent_interval_s);
  t.query_timeout_s = j.value("query_timeout_s", t.query_timeout_s);
  t.job_stall_s = j.value("job_stall_s", t.job_stall_s);
  t.replicate_threshold_bytes = j.value("replicate_threshold_bytes", t.replicate_threshold_bytes);
  if (t.sites < 2 || t.sites > 16) throw std::invalid_argument("sites must be in [2, 16]");
  if (t.link.drop < 0 || t.link.drop >= 1) throw std::invalid_argument("drop must be in [0, 1)");
  return t;
}

nlohmann::json Counters::to_json() const {
  return {{"messages", messages}, {"bytes", bytes}, {"dropped", dropped}, {"secret_hits", secret_hits}};
}

class SimNetwork::Endpoint : public node::PeerNetwork {
 public:
  Endpoint(SimNetwork& net, std::size_t self) : net_(net), self_(self) {}

  ApiResponse call(const SiteId& peer, const ApiRequest& req, std::chrono::milliseconds) override {
    const std::size_t to = net_.index(peer);
    net_.account(req.body);
    if (!net_.link_passes(self_, to)) throw node::PeerUnreachable(peer.str() + ": timeout");
    ApiResponse rsp;
    try {
      rsp = net_.nodes_[to]->handle(req);
    } catch (const SimCrash&) {
      net_.kill(peer);
      throw node::PeerUnreachable(peer.str() + ": connection reset");
    }
    net_.account(rsp.body);
    return rsp;
  }

  void post(const SiteId& peer, ApiRequest req) override {
    const std::size_t to = net_.index(peer);
    net_.account(req.body);
    if (!net_.link_passes(self_, to)) return;
    const auto latency = static_cast<std::int64_t>(net_.links_.contains({self_, to}) ? net_.links_[{self_, to}].latency_ms
                                                                                      : net_.spec_.link.latency_ms);
    net_.schedule(net_.now_ + latency, [this, to, req = std::move(req)] {
      if (net_.nodes_[to]) net_.guarded(to, [&] { net_.nodes_[to]->handle(req); });
    });
  }

  std::unique_ptr<transfer::Link> dimse_connect(const SiteId& peer) override {
    const std::size_t to = net_.index(peer);
    if (!net_.link_passes(self_, to)) throw node::PeerUnreachable(peer.str() + ": timeout");
    return net_.dimse_link(peer);
  }

  bool concurrent() const override { return false; }

 private:
  SimNetwork& net_;
  std::size_t self_;
};

SimNetwork::SimNetwork(TopologySpec spec)
    : spec_(std::move(spec)), rng_(spec_.seed), capture_(std::make_shared<transfer::WireCapture>()) {
  if (spec_.sites < 2 || spec_.sites > 16) throw std::invalid_argument("sites must be in [2, 16]");
  if (spec_.root.empty()) {
    std::string tmpl = (fs::temp_directory_path() / "gridbox-sim-XXXXXX").string();
    if (!::mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    root_ = tmpl;
    owns_root_ = true;
  } else {
    root_ = spec_.root;
    fs::create_directories(root_);
  }
  const auto key_digest = crypto::sha256(as_bytes("gridbox-sim-key-" + std::to_string(spec_.seed)));
  crypto::Key256 key;
  std::copy(key_digest.begin(), key_digest.end(), key.begin());

  const auto n = static_cast<std::size_t>(spec_.sites);
  for (std::size_t i = 0; i < n; ++i) ids_.emplace_back(std::string("site-") + static_cast<char>('a' + i));
  for (std::size_t i = 0; i < n; ++i) {
    node::NodeConfig c;
    c.site_id = ids_[i];
    c.ae_title = "GB-" + ids_[i].str().substr(5);
    c.data_dir = root_ / ids_[i].str();
    c.listen_dimse = {"127.0.0.1", static_cast<std::uint16_t>(20000 + i)};
    c.listen_http = {"127.0.0.1", static_cast<std::uint16_t>(21000 + i)};
    c.federation_key = key;
    c.sync_interval_s = spec_.sync_interval_s;
    c.query_timeout_s = spec_.query_timeout_s;
    c.job_stall_s = spec_.job_stall_s;
    c.replicate_threshold_bytes = spec_.replicate_threshold_bytes;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      c.peers.push_back({ids_[j], "GB-" + ids_[j].str().substr(5), {"127.0.0.1", static_cast<std::uint16_t>(20000 + j)},
                         {"127.0.0.1", static_cast<std::uint16_t>(21000 + j)}});
    }
    configs_.push_back(c);
  }
  nodes_.resize(n);
  crash_points_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    endpoints_.push_back(std::make_unique<Endpoint>(*this, i));
    faults_.push_back(std::make_shared<transfer::LinkFaults>());
    node::Node::init(configs_[i]);
    start_node(i, false);
  }
  // Ticks are staggered across the interval so nodes do not act in lockstep.
  for (std::size_t i = 0; i < n; ++i) {
    const std::int64_t sync = ms(spec_.sync_interval_s);
    const std::int64_t agent = ms(spec_.agent_interval_s);
    auto tick = std::make_shared<std::function<void()>>();
    *tick = [this, i, sync, tick] {
      if (nodes_[i]) guarded(i, [&] { nodes_[i]->anti_entropy_tick(); });
      schedule(now_ + sync, *tick);
    };
    schedule(sync * static_cast<std::int64_t>(i + 1) / static_cast<std::int64_t>(n + 1), *tick);
    auto step = std::make_shared<std::function<void()>>();
    *step = [this, i, agent, step] {
      for (int k = 0; k < 8 && nodes_[i]; ++k) {
        bool ran = false;
        guarded(i, [&] { ran = nodes_[i]->agent_step(); });
        if (!ran) break;
      }
      schedule(now_ + agent, *step);
    };
    schedule(agent * static_cast<std::int64_t>(i + 1) / static_cast<std::int64_t>(n + 1), *step);
  }
}

SimNetwork::~SimNetwork() {
  while (!events_.empty()) events_.pop();
  nodes_.clear();
  if (owns_root_) {
    std::error_code ec;
    fs::remove_all(root_, ec);
  }
}

SiteId SimNetwork::site(int index) const {
  if (index < 0 || static_cast<std::size_t>(index) >= ids_.size()) throw UnknownSite(std::to_string(index));
  return ids_[static_cast<std::size_t>(index)];
}

std::size_t SimNetwork::index(const SiteId& site) const {
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (ids_[i] == site) return i;
  }
  throw UnknownSite(site.str());
}

void SimNetwork::schedule(std::int64_t at, std::function<void()> fn) {
  events_.push(Event{at, event_seq_++, std::move(fn)});
}

void SimNetwork::start_node(std::size_t i, bool recover_log) {
  node::NodeOptions opts;
  opts.recover_log = recover_log;
  opts.durable = false;
  opts.now_ms = [this] { return kEpochMs + now_; };
  opts.crash_hook = [this, i](std::string_view point) {
    if (crash_points_[i].erase(std::string(point)) > 0) throw SimCrash{std::string(point)};
  };
  nodes_[i] = std::make_unique<node::Node>(configs_[i], endpoints_[i].get(), std::move(opts));
}

template <typename F>
void SimNetwork::guarded(std::size_t i, F&& fn) {
  try {
    fn();
  } catch (const SimCrash&) {
    nodes_[i].reset();
  } catch (const std::exception&) {
  }
}

bool SimNetwork::link_passes(std::size_t from, std::size_t to) {
  ++counters_.messages;
  auto it = links_.find({from, to});
  const LinkModel& m = it != links_.end() ? it->second : spec_.link;
  bool pass = !m.partitioned && nodes_[to] != nullptr;
  if (pass && m.drop > 0 && unit(rng_) < m.drop) pass = false;
  if (!pass) ++counters_.dropped;
  return pass;
}

void SimNetwork::account(const std::string& body) {
  counters_.bytes += body.size();
  for (const auto& s : secrets_) {
    for (auto pos = body.find(s); pos != std::string::npos; pos = body.find(s, pos + 1)) ++counters_.secret_hits;
  }
}

ApiResponse SimNetwork::request(const SiteId& site, ApiRequest req) {
  const std::size_t i = index(site);
  if (!nodes_[i]) return ApiResponse::json(503, {{"error", {{"code", "Unavailable"}, {"message", site.str() + " is down"}}}});
  try {
    return nodes_[i]->handle(req);
  } catch (const SimCrash& c) {
    nodes_[i].reset();
    return ApiResponse::json(503, {{"error", {{"code", "Crashed"}, {"message", c.point}}}});
  }
}

ApiResponse SimNetwork::post_json(const SiteId& site, const std::string& path, const nlohmann::json& body) {
  return request(site, ApiRequest{"POST", path, {}, {}, body.dump()});
}

ApiResponse SimNetwork::get(const SiteId& site, const std::string& path, std::map<std::string, std::string> params) {
  return request(site, ApiRequest{"GET", path, std::move(params), {}, {}});
}

void SimNetwork::advance(std::int64_t duration) {
  const std::int64_t target = now_ + duration;
  while (!events_.empty() && events_.top().at <= target) {
    Event e = events_.top();
    events_.pop();
    now_ = e.at;
    e.fn();
  }
  now_ = target;
}

void SimNetwork::set_link(const SiteId& from, const SiteId& to, LinkModel model) {
  links_[{index(from), index(to)}] = model;
}

void SimNetwork::partition(const std::vector<std::vector<SiteId>>& groups) {
  std::map<std::size_t, std::size_t> group_of;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (const auto& s : groups[g]) group_of[index(s)] = g;
  }
  for (std::size_t a = 0; a < ids_.size(); ++a) {
    for (std::size_t b = 0; b < ids_.size(); ++b) {
      if (a == b) continue;
      auto ga = group_of.find(a), gb = group_of.find(b);
      const bool split = ga == group_of.end() || gb == group_of.end() || ga->second != gb->second;
      LinkModel m = links_.contains({a, b}) ? links_[{a, b}] : spec_.link;
      m.partitioned = split;
      links_[{a, b}] = m;
    }
  }
}

void SimNetwork::isolate(const SiteId& site) {
  const std::size_t s = index(site);
  for (std::size_t o = 0; o < ids_.size(); ++o) {
    if (o == s) continue;
    for (auto key : {std::pair{s, o}, std::pair{o, s}}) {
      LinkModel m = links_.contains(key) ? links_[key] : spec_.link;
      m.partitioned = true;
      links_[key] = m;
    }
  }
}

void SimNetwork::heal() {
  for (auto& [key, m] : links_) m.partitioned = false;
}

void SimNetwork::kill(const SiteId& site) { nodes_[index(site)].reset(); }

void SimNetwork::restart(const SiteId& site, bool recover_log) {
  const std::size_t i = index(site);
  nodes_[i].reset();
  start_node(i, recover_log);
}

bool SimNetwork::alive(const SiteId& site) const { return nodes_[index(site)] != nullptr; }

void SimNetwork::crash_at(const SiteId& site, const std::string& point) { crash_points_[index(site)].insert(point); }

void SimNetwork::flip_frames(const SiteId& site, int n) { faults_[index(site)]->flip_next_data_frames += n; }

std::unique_ptr<transfer::Link> SimNetwork::dimse_link(const SiteId& to) {
  const std::size_t i = index(to);
  if (!nodes_[i]) throw node::PeerUnreachable(to.str() + " is down");
  return transfer::memory_link(nodes_[i]->scp_config(), nodes_[i]->scp_handlers(), capture_, faults_[i]);
}

transfer::AssocParams SimNetwork::assoc_params(const SiteId& from, const SiteId& to) const {
  const auto& src = configs_[index(from)];
  const auto& dst = configs_[index(to)];
  return transfer::AssocParams{src.ae_title, dst.ae_title, src.federation_key_id, src.federation_key};
}

SimNetwork::Convergence SimNetwork::wait_converged(std::int64_t bound_ms) {
  const std::int64_t start = now_;
  std::optional<nlohmann::json> previous;
  int stable = 0;
  while (true) {
    std::optional<nlohmann::json> vec;
    bool agree = true;
    for (const auto& s : ids_) {
      if (!alive(s)) continue;
      ApiResponse rsp = get(s, "/api/status");
      if (rsp.status != 200) {
        agree = false;
        break;
      }
      nlohmann::json v = rsp.doc().at("seq_vector");
      if (!vec) {
        vec = v;
      } else if (*vec != v) {
        agree = false;
      }
    }
    if (agree && vec) {
      stable = previous && *previous == *vec ? stable + 1 : 1;
      previous = vec;
    } else {
      stable = 0;
      previous.reset();
    }
    if (stable >= 2) return {true, now_ - start};
    if (now_ - start >= bound_ms) return {false, now_ - start};
    advance(std::min<std::int64_t>(ms(spec_.sync_interval_s), bound_ms - (now_ - start)));
  }
}

bool SimNetwork::states_identical() const {
  std::optional<std::string> first;
  for (const auto& n : nodes_) {
    if (!n) continue;
    std::string s = n->canonical_state().dump();
    if (!first) {
      first = std::move(s);
    } else if (*first != s) {
      return false;
    }
  }
  return true;
}

void SimNetwork::register_secret(const std::string& s) {
  if (!s.empty()) secrets_.push_back(s);
}

const node::NodeConfig& SimNetwork::config(const SiteId& site) const { return configs_[index(site)]; }

node::Node* SimNetwork::node(const SiteId& site) { return nodes_[index(site)].get(); }

}  // namespace gridbox::simnet
