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
#include <memory>
#include <ostream>

#include "gridbox/node.hpp"

// Real sockets: the HTTP document API, the DIMSE listener and the background loops.
namespace gridbox::node {

// Reaches peers at the endpoints in the node configuration.
class HttpPeerNetwork : public PeerNetwork {
 public:
  explicit HttpPeerNetwork(NodeConfig config);
  ~HttpPeerNetwork() override;

  ApiResponse call(const SiteId& peer, const ApiRequest& req, std::chrono::milliseconds timeout) override;
  void post(const SiteId& peer, ApiRequest req) override;
  std::unique_ptr<transfer::Link> dimse_connect(const SiteId& peer) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct ServerOptions {
  NodeOptions node;
  std::ostream* log = nullptr;  // one line per request
  bool run_agent = true;
  bool run_sync = true;
};

class NodeServer {
 public:
  NodeServer(NodeConfig config, ServerOptions options = {});
  ~NodeServer();
  NodeServer(const NodeServer&) = delete;
  NodeServer& operator=(const NodeServer&) = delete;

  // Binds both listeners (port 0 picks a free one); throws transfer::TransferError(PortInUse).
  void start();
  void stop();
  // Blocks until stop() from another thread.
  void wait();

  std::uint16_t http_port() const;
  std::uint16_t dimse_port() const;
  Node& node();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace gridbox::node
