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

#include <fstream>

#include <gtest/gtest.h>

#include "gridbox/phantom.hpp"
#include "gridbox/scenario.hpp"
#include "gridbox/simnet.hpp"

namespace gridbox::simnet {
namespace {

ScenarioOptions seeded(std::uint64_t seed) {
  ScenarioOptions o;
  o.seed = seed;
  return o;
}

nlohmann::json load(const std::string& name) {
  std::ifstream in(std::string(GRIDBOX_SCENARIO_DIR) + "/" + name + ".json");
  return nlohmann::json::parse(in);
}

std::string failures(const nlohmann::json& report) {
  std::string out;
  for (const auto& s : report.at("steps"))
    if (!s.at("ok").get<bool>()) out += s.dump() + "\n";
  return out;
}

class Scenario : public ::testing::TestWithParam<std::string> {};

TEST_P(Scenario, Passes) {
  auto report = run_scenario(load(GetParam()));
  EXPECT_TRUE(report.at("passed").get<bool>()) << failures(report);
  EXPECT_EQ(report.at("assertions").at("failed"), 0);
}

INSTANTIATE_TEST_SUITE_P(Files, Scenario, ::testing::Values("smoke", "security", "partition", "jobs"));

TEST(ScenarioRun, DeterministicInSeed) {
  auto sc = load("smoke");
  sc["topology"]["link"] = {{"drop", 0.2}};
  auto a = run_scenario(sc, seeded(42));
  auto b = run_scenario(sc, seeded(42));
  a.erase("wall_ms");
  b.erase("wall_ms");
  EXPECT_EQ(a, b);
  auto c = run_scenario(sc, seeded(43));
  EXPECT_NE(c.at("state_digest"), a.at("state_digest"));
}

TEST(ScenarioRun, BadScenarios) {
  EXPECT_THROW(run_scenario({{"steps", {{{"op", "teleport"}}}}}), BadScenario);
  EXPECT_THROW(run_scenario({{"topology", {{"sites", 1}}}}), BadScenario);
  EXPECT_THROW(run_scenario({{"steps", {{{"op", "kill"}}}}}), BadScenario);
  auto r = run_scenario({{"topology", {{"sites", 2}}}, {"steps", {{{"op", "kill"}, {"site", "site-z"}}}}});
  EXPECT_FALSE(r.at("passed").get<bool>());
}

Bytes acquisition(std::uint64_t seed) {
  PhantomSpec s;
  s.seed = seed;
  s.rows = s.cols = 96;
  return generate_phantom(s).mgd;
}

std::string ingest(SimNetwork& net, const SiteId& s, std::uint64_t seed) {
  node::ApiRequest req{"POST", "/api/ingest", {}, {}, {}};
  auto raw = acquisition(seed);
  req.body.assign(raw.begin(), raw.end());
  auto rsp = net.request(s, req);
  EXPECT_EQ(rsp.status, 201) << rsp.body;
  return rsp.doc().value("lfn", "");
}

TEST(Net, PropagationAndFetchOnMiss) {
  TopologySpec t;
  t.sites = 2;
  SimNetwork net(t);
  const SiteId a = net.site(0), b = net.site(1);
  const auto lfn = ingest(net, a, 1);
  ASSERT_TRUE(net.wait_converged().converged);
  auto res = net.get(b, "/api/catalogue/resolve", {{"lfn", lfn}});
  ASSERT_EQ(res.status, 200);
  auto replicas = res.doc().at("replicas");
  ASSERT_EQ(replicas.size(), 1u);
  EXPECT_EQ(replicas[0].at("site"), a.str());

  const std::string guid = res.doc().at("entry").at("guid");
  auto png = net.get(b, "/api/preview/" + guid);
  EXPECT_EQ(png.status, 200);
  EXPECT_EQ(png.content_type, "image/png");
  auto after = net.get(b, "/api/catalogue/resolve", {{"guid", guid}});
  EXPECT_EQ(after.doc().at("replicas").size(), 2u);
  ASSERT_TRUE(net.wait_converged().converged);
  EXPECT_EQ(net.get(a, "/api/catalogue/resolve", {{"guid", guid}}).doc().at("replicas").size(), 2u);
  EXPECT_TRUE(net.states_identical());
}

TEST(Net, FederatedQueryAndPartialResult) {
  TopologySpec t;
  t.sites = 3;
  t.query_timeout_s = 1;
  SimNetwork net(t);
  for (int i = 0; i < 3; ++i) ingest(net, net.site(i), 10 + i);
  // queries fan out before any replication has happened
  auto full = net.post_json(net.site(0), "/api/query", {{"text", "SELECT image.lfn WHERE image.breast_density >= 0"}});
  ASSERT_EQ(full.status, 200);
  EXPECT_EQ(full.doc().at("rows").size(), 3u);
  EXPECT_EQ(full.doc().at("responded").size(), 3u);
  net.kill(net.site(2));
  auto part = net.post_json(net.site(0), "/api/query", {{"text", "SELECT image.lfn WHERE image.breast_density >= 0"}});
  ASSERT_EQ(part.status, 200);
  EXPECT_EQ(part.doc().at("rows").size(), 2u);
  ASSERT_EQ(part.doc().at("failed").size(), 1u);
  EXPECT_EQ(part.doc().at("failed")[0].at("site"), "site-c");
  net.restart(net.site(2));
  EXPECT_TRUE(net.alive(net.site(2)));
}

TEST(Net, VirtualClockAndCounters) {
  TopologySpec t;
  t.sites = 2;
  t.link.drop = 0.5;
  SimNetwork net(t);
  EXPECT_EQ(net.now_ms(), 0);
  ingest(net, net.site(0), 3);
  net.advance(30000);
  EXPECT_EQ(net.now_ms(), 30000);
  EXPECT_GT(net.counters().messages, 0u);
  EXPECT_GT(net.counters().dropped, 0u);
  EXPECT_THROW(net.node(SiteId("site-q")), UnknownSite);
}

TEST(Net, PartitionBlocksThenHeals) {
  TopologySpec t;
  t.sites = 2;
  SimNetwork net(t);
  net.partition({{net.site(0)}, {net.site(1)}});
  const auto lfn = ingest(net, net.site(0), 4);
  net.advance(20000);
  EXPECT_EQ(net.get(net.site(1), "/api/catalogue/resolve", {{"lfn", lfn}}).status, 404);
  net.heal();
  ASSERT_TRUE(net.wait_converged().converged);
  EXPECT_EQ(net.get(net.site(1), "/api/catalogue/resolve", {{"lfn", lfn}}).status, 200);
}

}  // namespace
}  // namespace gridbox::simnet
