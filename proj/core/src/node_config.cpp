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

#include "gridbox/node_config.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace gridbox::node {

Endpoint Endpoint::parse(const std::string& text) {
  auto colon = text.rfind(':');
  if (colon == std::string::npos || colon == 0) throw std::invalid_argument("expected host:port, got " + text);
  Endpoint e;
  e.host = text.substr(0, colon);
  const std::string port = text.substr(colon + 1);
  if (port.empty() || port.size() > 5 || !std::all_of(port.begin(), port.end(), ::isdigit)) {
    throw std::invalid_argument("bad port in " + text);
  }
  const unsigned long v = std::stoul(port);
  if (v > 65535) throw std::invalid_argument("bad port in " + text);
  e.port = static_cast<std::uint16_t>(v);
  return e;
}

std::vector<SiteId> NodeConfig::peer_ids() const {
  std::vector<SiteId> out;
  for (const auto& p : peers) out.push_back(p.site_id);
  return out;
}

const PeerConfig* NodeConfig::peer(const SiteId& id) const {
  for (const auto& p : peers) {
    if (p.site_id == id) return &p;
  }
  return nullptr;
}

void validate(const NodeConfig& c) {
  if (c.site_id.empty()) throw BadConfig("site_id", "missing");
  if (c.ae_title.empty() || c.ae_title.size() > 16) throw BadConfig("ae_title", "must be 1..16 characters");
  if (c.data_dir.empty()) throw BadConfig("data_dir", "missing");
  if (std::all_of(c.federation_key.begin(), c.federation_key.end(), [](auto b) { return b == 0; })) {
    throw BadConfig("federation_key", "must not be zero");
  }
  std::set<SiteId> seen{c.site_id};
  for (const auto& p : c.peers) {
    if (!seen.insert(p.site_id).second) throw BadConfig("peers", "duplicate site " + p.site_id.str());
    if (p.ae_title.size() > 16) throw BadConfig("peers", "AE title too long for " + p.site_id.str());
  }
  if (!(c.sync_interval_s > 0)) throw BadConfig("sync_interval_s", "must be positive");
  if (!(c.query_timeout_s > 0)) throw BadConfig("query_timeout_s", "must be positive");
  if (c.analysis_workers == 0) throw BadConfig("analysis_workers", "must be positive");
  if (!(c.job_stall_s > 0)) throw BadConfig("job_stall_s", "must be positive");
}

nlohmann::json to_json(const NodeConfig& c) {
  auto peers = nlohmann::json::array();
  for (const auto& p : c.peers) {
    peers.push_back({{"site_id", p.site_id.str()},
                     {"ae_title", p.ae_title},
                     {"dimse", p.dimse.str()},
                     {"http", p.http.str()}});
  }
  return {{"site_id", c.site_id.str()},
          {"ae_title", c.ae_title},
          {"data_dir", c.data_dir.string()},
          {"listen_dimse", c.listen_dimse.str()},
          {"listen_http", c.listen_http.str()},
          {"peers", std::move(peers)},
          {"federation_key_id", c.federation_key_id},
          {"federation_key", to_hex(c.federation_key)},
          {"sync_interval_s", c.sync_interval_s},
          {"query_timeout_s", c.query_timeout_s},
          {"replicate_threshold_bytes", c.replicate_threshold_bytes},
          {"analysis_workers", c.analysis_workers},
          {"job_stall_s", c.job_stall_s}};
}

NodeConfig config_from_json(const nlohmann::json& j) {
  NodeConfig c;
  auto field = [&](const char* name, auto&& fn) {
    try {
      fn();
    } catch (const BadConfig&) {
      throw;
    } catch (const std::exception& e) {
      throw BadConfig(name, e.what());
    }
  };
  field("site_id", [&] { c.site_id = SiteId(j.at("site_id").get<std::string>()); });
  field("ae_title", [&] { c.ae_title = j.value("ae_title", c.site_id.str()); });
  field("data_dir", [&] { c.data_dir = j.value("data_dir", std::string{}); });
  field("listen_dimse", [&] {
    if (j.contains("listen_dimse")) c.listen_dimse = Endpoint::parse(j.at("listen_dimse").get<std::string>());
  });
  field("listen_http", [&] {
    if (j.contains("listen_http")) c.listen_http = Endpoint::parse(j.at("listen_http").get<std::string>());
  });
  field("peers", [&] {
    for (const auto& p : j.value("peers", nlohmann::json::array())) {
      PeerConfig pc;
      pc.site_id = SiteId(p.at("site_id").get<std::string>());
      pc.ae_title = p.value("ae_title", pc.site_id.str());
      pc.dimse = Endpoint::parse(p.at("dimse").get<std::string>());
      pc.http = Endpoint::parse(p.at("http").get<std::string>());
      c.peers.push_back(std::move(pc));
    }
  });
  field("federation_key_id", [&] { c.federation_key_id = j.value("federation_key_id", std::uint8_t{1}); });
  field("federation_key", [&] {
    auto raw = from_hex(j.at("federation_key").get<std::string>());
    if (raw.size() != 32) throw std::invalid_argument("must be 64 hex characters");
    std::copy(raw.begin(), raw.end(), c.federation_key.begin());
  });
  field("sync_interval_s", [&] { c.sync_interval_s = j.value("sync_interval_s", c.sync_interval_s); });
  field("query_timeout_s", [&] { c.query_timeout_s = j.value("query_timeout_s", c.query_timeout_s); });
  field("replicate_threshold_bytes",
        [&] { c.replicate_threshold_bytes = j.value("replicate_threshold_bytes", c.replicate_threshold_bytes); });
  field("analysis_workers", [&] { c.analysis_workers = j.value("analysis_workers", c.analysis_workers); });
  field("job_stall_s", [&] { c.job_stall_s = j.value("job_stall_s", c.job_stall_s); });
  return c;
}

NodeConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw BadConfig("config", "cannot read " + file.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw BadConfig("config", e.what());
  }
  NodeConfig c = config_from_json(j);
  if (c.data_dir.empty()) c.data_dir = file.parent_path();
  return c;
}

void save_config(const NodeConfig& c, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw BadConfig("config", "cannot write " + file.string());
  out << to_json(c).dump(2) << '\n';
}

}  // namespace gridbox::node
