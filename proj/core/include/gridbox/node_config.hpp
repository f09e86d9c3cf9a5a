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
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridbox/crypto.hpp"
#include "gridbox/types.hpp"

namespace gridbox::node {

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  std::string str() const { return host + ":" + std::to_string(port); }
  static Endpoint parse(const std::string& text);  // host:port
  bool operator==(const Endpoint&) const = default;
};

struct PeerConfig {
  SiteId site_id;
  std::string ae_title;
  Endpoint dimse;
  Endpoint http;
};

struct NodeConfig {
  SiteId site_id;
  std::string ae_title;
  std::filesystem::path data_dir;
  Endpoint listen_dimse{"127.0.0.1", 11112};
  Endpoint listen_http{"127.0.0.1", 8080};
  std::vector<PeerConfig> peers;
  std::uint8_t federation_key_id = 1;
  crypto::Key256 federation_key{};
  double sync_interval_s = 5;
  double query_timeout_s = 10;
  std::uint64_t replicate_threshold_bytes = 64ull << 20;
  unsigned analysis_workers = 2;
  double job_stall_s = 300;

  std::vector<SiteId> peer_ids() const;
  const PeerConfig* peer(const SiteId& id) const;
};

struct BadConfig : std::runtime_error {
  BadConfig(const std::string& field, const std::string& why)
      : std::runtime_error("BadConfig(" + field + "): " + why), field(field) {}
  std::string field;
};

// Throws BadConfig naming the first offending field.
void validate(const NodeConfig& c);

nlohmann::json to_json(const NodeConfig& c);
NodeConfig config_from_json(const nlohmann::json& j);
NodeConfig load_config(const std::filesystem::path& file);
void save_config(const NodeConfig& c, const std::filesystem::path& file);

}  // namespace gridbox::node
