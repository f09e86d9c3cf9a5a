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

#include <thread>

#include <gtest/gtest.h>

#include "gridbox/node_server.hpp"
#include "gridbox/phantom.hpp"
#include "gridbox/querylang.hpp"
#include "gridbox/transfer.hpp"
#include "httplib.h"
#include "support/temp_dir.hpp"

namespace gridbox::node {
namespace {

using testing::TempDir;

NodeConfig config_at(const std::filesystem::path& dir, const char* site) {
  NodeConfig c;
  c.site_id = SiteId(site);
  c.ae_title = site;
  c.data_dir = dir;
  c.federation_key.fill(0x33);
  c.listen_http = {"127.0.0.1", 0};
  c.listen_dimse = {"127.0.0.1", 0};
  c.sync_interval_s = 0.1;
  c.query_timeout_s = 2;
  return c;
}

ServerOptions quiet() {
  ServerOptions o;
  o.node.durable = false;
  return o;
}

Bytes anonymized(std::uint64_t seed, const crypto::Key256& key) {
  simnet::PhantomSpec s;
  s.seed = seed;
  s.rows = s.cols = 96;
  auto ph = simnet::generate_phantom(s);
  return dataset::encode(dataset::anonymize(ph.dataset, key).dataset);
}

template <class F>
bool eventually(F&& ok, int ms = 5000) {
  for (int i = 0; i < ms / 20; ++i) {
    if (ok()) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  return ok();
}

TEST(Server, StoreOverDimseQueryOverHttp) {
  TempDir t;
  auto c = config_at(t / "a", "site-a");
  Node::init(c);
  NodeServer server(c, quiet());
  server.start();
  ASSERT_NE(server.http_port(), 0);
  ASSERT_NE(server.dimse_port(), 0);

  transfer::AssocParams p{"WORKSTATION", "site-a", c.federation_key_id, c.federation_key};
  auto link = transfer::tcp_connect("127.0.0.1", server.dimse_port(), std::chrono::milliseconds(2000));
  auto assoc = transfer::Association::open(std::move(link), p);
  assoc.c_store(anonymized(1, c.federation_key));
  auto rows = assoc.c_find(query::to_json(query::parse("SELECT image.lfn WHERE image.breast_density >= 0")));
  EXPECT_EQ(rows.size(), 1u);
  assoc.release();

  httplib::Client http("127.0.0.1", server.http_port());
  auto rsp = http.Post("/api/query", R"({"text": "SELECT image.lfn WHERE image.breast_density >= 0"})", "application/json");
  ASSERT_TRUE(rsp);
  ASSERT_EQ(rsp->status, 200) << rsp->body;
  auto doc = nlohmann::json::parse(rsp->body);
  ASSERT_EQ(doc.at("rows").size(), 1u);
  auto status = http.Get("/api/status");
  ASSERT_TRUE(status);
  EXPECT_EQ(nlohmann::json::parse(status->body).at("site"), "site-a");
  auto missing = http.Get("/api/nowhere");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);
  server.stop();
}

TEST(Server, WrongKeyIdRejectedOverTcp) {
  TempDir t;
  auto c = config_at(t / "a", "site-a");
  Node::init(c);
  NodeServer server(c, quiet());
  server.start();
  transfer::AssocParams p{"WORKSTATION", "site-a", 200, c.federation_key};
  try {
    transfer::Association::open(transfer::tcp_connect("127.0.0.1", server.dimse_port(), std::chrono::milliseconds(2000)), p);
    FAIL();
  } catch (const transfer::TransferError& e) {
    EXPECT_EQ(e.code(), transfer::Errc::Rejected);
    EXPECT_EQ(e.reason(), 3);
  }
}

TEST(Server, PortInUse) {
  TempDir t;
  auto a = config_at(t / "a", "site-a");
  Node::init(a);
  NodeServer first(a, quiet());
  first.start();
  auto b = config_at(t / "b", "site-b");
  b.listen_http.port = first.http_port();
  Node::init(b);
  NodeServer second(b, quiet());
  try {
    second.start();
    FAIL();
  } catch (const transfer::TransferError& e) {
    EXPECT_EQ(e.code(), transfer::Errc::PortInUse);
  }
  auto d = config_at(t / "d", "site-d");
  d.listen_dimse.port = first.dimse_port();
  Node::init(d);
  NodeServer third(d, quiet());
  EXPECT_THROW(third.start(), transfer::TransferError);
  EXPECT_THROW(transfer::tcp_connect("127.0.0.1", 1, std::chrono::milliseconds(500)), transfer::TransferError);
}

TEST(Server, TwoNodesOverSockets) {
  TempDir t;
  auto a = config_at(t / "a", "site-a");
  Node::init(a);
  NodeServer sa(a, quiet());
  sa.start();
  a.listen_http.port = sa.http_port();
  a.listen_dimse.port = sa.dimse_port();

  auto b = config_at(t / "b", "site-b");
  b.peers.push_back(PeerConfig{a.site_id, a.ae_title, a.listen_dimse, a.listen_http});
  Node::init(b);
  NodeServer sb(b, quiet());
  sb.start();

  auto raw = anonymized(2, a.federation_key);
  ASSERT_TRUE(sa.node().store_anonymized(raw).ok);
  auto q = sb.node().query({{"text", "SELECT image.lfn WHERE image.breast_density >= 0"}});
  EXPECT_EQ(q.at("rows").size(), 1u) << q.dump();
  EXPECT_TRUE(q.at("failed").empty());
  ASSERT_TRUE(eventually([&] { return sb.node().file_count() == 1; }));

  // fetch over MG-DIMSE from the only replica
  auto lfn = Lfn(q.at("rows")[0].at("values")[0].get<std::string>());
  auto r = sb.node().resolve(lfn);
  ASSERT_TRUE(r);
  auto bytes = sb.node().fetch(r->entry.guid);
  EXPECT_EQ(crypto::sha256(bytes), crypto::sha256(*sa.node().read_local(r->entry.guid)));
  EXPECT_EQ(sb.node().resolve(lfn)->replicas.size(), 2u);

  sa.stop();
  auto partial = sb.node().query({{"text", "SELECT image.lfn WHERE image.breast_density >= 0"}});
  ASSERT_EQ(partial.at("failed").size(), 1u);
  EXPECT_EQ(partial.at("failed")[0].at("site"), "site-a");
}

}  // namespace
}  // namespace gridbox::node
