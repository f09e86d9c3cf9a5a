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

#include "gridbox/node_server.hpp"

#include <condition_variable>
#include <deque>
#include <mutex>
#include <thread>

#include "httplib.h"

namespace gridbox::node {

namespace {

constexpr std::size_t kPostQueueCap = 1024;
constexpr auto kPostTimeout = std::chrono::seconds(3);
constexpr auto kAgentIdle = std::chrono::milliseconds(500);

std::string query_string(const std::map<std::string, std::string>& params) {
  std::string out;
  for (const auto& [k, v] : params) {
    out += out.empty() ? "?" : "&";
    out += httplib::detail::encode_query_param(k) + "=" + httplib::detail::encode_query_param(v);
  }
  return out;
}

}  // namespace

struct HttpPeerNetwork::Impl {
  NodeConfig config;
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::pair<SiteId, ApiRequest>> queue;
  bool stopping = false;
  std::thread worker;

  ApiResponse call(const SiteId& peer, const ApiRequest& req, std::chrono::milliseconds timeout) {
    const PeerConfig* pc = config.peer(peer);
    if (!pc) throw PeerUnreachable("unknown peer " + peer.str());
    httplib::Client cli(pc->http.host, pc->http.port);
    cli.set_connection_timeout(timeout);
    cli.set_read_timeout(timeout);
    cli.set_write_timeout(timeout);
    httplib::Headers headers(req.headers.begin(), req.headers.end());
    const std::string target = req.path + query_string(req.params);
    httplib::Result res = req.method == "POST" ? cli.Post(target, headers, req.body, "application/json")
                                                : cli.Get(target, headers);
    if (!res) throw PeerUnreachable(peer.str() + ": " + httplib::to_string(res.error()));
    return ApiResponse{res->status, res->get_header_value("Content-Type"), res->body};
  }

  void run() {
    std::unique_lock lock(mu);
    while (true) {
      cv.wait(lock, [&] { return stopping || !queue.empty(); });
      if (stopping) return;
      auto item = std::move(queue.front());
      queue.pop_front();
      lock.unlock();
      try {
        call(item.first, item.second, kPostTimeout);
      } catch (const std::exception&) {
      }
      lock.lock();
    }
  }
};

HttpPeerNetwork::HttpPeerNetwork(NodeConfig config) : impl_(std::make_unique<Impl>()) {
  impl_->config = std::move(config);
  impl_->worker = std::thread([this] { impl_->run(); });
}

HttpPeerNetwork::~HttpPeerNetwork() {
  {
    std::lock_guard lock(impl_->mu);
    impl_->stopping = true;
  }
  impl_->cv.notify_all();
  impl_->worker.join();
}

ApiResponse HttpPeerNetwork::call(const SiteId& peer, const ApiRequest& req, std::chrono::milliseconds timeout) {
  return impl_->call(peer, req, timeout);
}

void HttpPeerNetwork::post(const SiteId& peer, ApiRequest req) {
  {
    std::lock_guard lock(impl_->mu);
    if (impl_->queue.size() >= kPostQueueCap) impl_->queue.pop_front();  // anti-entropy catches up
    impl_->queue.emplace_back(peer, std::move(req));
  }
  impl_->cv.notify_one();
}

std::unique_ptr<transfer::Link> HttpPeerNetwork::dimse_connect(const SiteId& peer) {
  const PeerConfig* pc = impl_->config.peer(peer);
  if (!pc) throw PeerUnreachable("unknown peer " + peer.str());
  const auto timeout = std::chrono::milliseconds(static_cast<std::int64_t>(impl_->config.query_timeout_s * 1000));
  return transfer::tcp_connect(pc->dimse.host, pc->dimse.port, timeout);
}

struct NodeServer::Impl {
  NodeConfig config;
  ServerOptions options;
  HttpPeerNetwork net;
  Node node;
  httplib::Server http;
  transfer::DimseServer dimse;
  std::uint16_t http_port = 0;

  std::mutex mu;
  std::condition_variable cv;
  bool running = false;
  std::thread http_thread;
  std::thread sync_thread;
  std::thread agent_thread;
  std::mutex log_mu;

  Impl(NodeConfig c, ServerOptions o)
      : config(c),
        options(std::move(o)),
        net(c),
        node(c, &net, options.node),
        dimse(node.scp_config(), node.scp_handlers()) {}

  void log_line(const httplib::Request& req, int status) {
    if (!options.log) return;
    std::lock_guard lock(log_mu);
    *options.log << node.site().str() << ' ' << req.method << ' ' << req.path << ' ' << status << '\n';
    options.log->flush();
  }

  void serve(const httplib::Request& req, httplib::Response& res) {
    ApiRequest api;
    api.method = req.method;
    api.path = req.path;
    for (const auto& [k, v] : req.params) api.params.emplace(k, v);
    if (req.has_header("X-Patient-Attrs")) api.headers["X-Patient-Attrs"] = req.get_header_value("X-Patient-Attrs");
    api.body = req.body;
    ApiResponse out = node.handle(api);
    res.status = out.status;
    res.set_content(out.body, out.content_type);
    log_line(req, out.status);
  }

  bool wait_running(std::chrono::milliseconds d) {
    std::unique_lock lock(mu);
    cv.wait_for(lock, d, [&] { return !running; });
    return running;
  }
};

NodeServer::NodeServer(NodeConfig config, ServerOptions options)
    : impl_(std::make_unique<Impl>(std::move(config), std::move(options))) {}

NodeServer::~NodeServer() { stop(); }

void NodeServer::start() {
  Impl& s = *impl_;
  s.http.set_payload_max_length(std::size_t{256} << 20);
  // httplib's default adds SO_REUSEPORT, which lets a second node share the port.
  s.http.set_socket_options([](auto sock) {
    int one = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  });
  auto handler = [&s](const httplib::Request& req, httplib::Response& res) { s.serve(req, res); };
  s.http.Get(R"(/api/.*)", handler);
  s.http.Post(R"(/api/.*)", handler);
  const auto& ep = s.config.listen_http;
  if (ep.port == 0) {
    const int port = s.http.bind_to_any_port(ep.host);
    if (port <= 0) throw transfer::TransferError(transfer::Errc::PortInUse, "http " + ep.str());
    s.http_port = static_cast<std::uint16_t>(port);
  } else {
    if (!s.http.bind_to_port(ep.host, ep.port)) throw transfer::TransferError(transfer::Errc::PortInUse, "http " + ep.str());
    s.http_port = ep.port;
  }
  try {
    s.dimse.start(s.config.listen_dimse.host, s.config.listen_dimse.port);
  } catch (...) {
    s.http.stop();
    throw;
  }
  {
    std::lock_guard lock(s.mu);
    s.running = true;
  }
  s.http_thread = std::thread([&s] { s.http.listen_after_bind(); });
  if (s.options.run_sync) {
    const auto interval = std::chrono::milliseconds(static_cast<std::int64_t>(s.config.sync_interval_s * 1000));
    s.sync_thread = std::thread([&s, interval] {
      while (s.wait_running(interval)) s.node.anti_entropy_tick();
    });
  }
  if (s.options.run_agent) {
    s.agent_thread = std::thread([&s] {
      bool busy = false;
      while (s.wait_running(busy ? std::chrono::milliseconds(0) : kAgentIdle)) {
        try {
          busy = s.node.agent_step();
        } catch (const std::exception&) {
          busy = false;
        }
      }
    });
  }
}

void NodeServer::stop() {
  Impl& s = *impl_;
  {
    std::lock_guard lock(s.mu);
    if (!s.running && !s.http_thread.joinable()) return;
    s.running = false;
  }
  s.cv.notify_all();
  s.http.stop();
  s.dimse.stop();
  for (auto* t : {&s.http_thread, &s.sync_thread, &s.agent_thread}) {
    if (t->joinable()) t->join();
  }
}

void NodeServer::wait() {
  std::unique_lock lock(impl_->mu);
  impl_->cv.wait(lock, [&] { return !impl_->running; });
}

std::uint16_t NodeServer::http_port() const { return impl_->http_port; }
std::uint16_t NodeServer::dimse_port() const { return impl_->dimse.port(); }
Node& NodeServer::node() { return impl_->node; }

}  // namespace gridbox::node
