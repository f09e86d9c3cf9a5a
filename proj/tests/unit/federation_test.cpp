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

#include <gtest/gtest.h>

#include <random>
#include <set>
#include <thread>

#include "gridbox/federation.hpp"
#include "support/query_gen.hpp"

namespace gridbox::federation {
namespace {

using metastore::Entity;
using std::chrono::milliseconds;

std::vector<SiteId> sites(std::initializer_list<const char*> names) {
  std::vector<SiteId> out;
  for (auto n : names) out.emplace_back(n);
  return out;
}

TEST(Plan, Targets) {
  query::Query q;
  auto p = plan(q, SiteId("site-a"), sites({"site-d", "site-b", "site-c"}));
  EXPECT_EQ(p.targets, sites({"site-a", "site-b", "site-c", "site-d"}));
  EXPECT_EQ(p.coordinator, SiteId("site-a"));
  EXPECT_EQ(p.timeout, milliseconds(10000));
  EXPECT_EQ(plan(q, SiteId("site-a"), sites({"site-b", "site-b", "site-a"})).targets, sites({"site-a", "site-b"}));
  EXPECT_EQ(plan(q, SiteId("site-a"), {}).targets, sites({"site-a"}));
}

TEST(Plan, SubqueryIsTheCanonicalDocument) {
  auto q = query::parse("SELECT image.lfn WHERE image.lfn = 'x'");
  auto doc = subquery_document(q);
  EXPECT_EQ(doc["ast"], query::to_json(q));
  EXPECT_EQ(doc["scope"], "local");
}

// Per-site stores answering through evaluate_local.
struct Fixture {
  std::map<SiteId, metastore::MetaStore> stores;
  std::set<SiteId> down;

  Dispatch dispatch() {
    return [this](const SiteId& site, const nlohmann::json& doc) {
      if (down.contains(site)) throw std::runtime_error("Timeout");
      auto& store = stores.at(site);
      auto typed = query::validate(query::from_json(doc.at("ast")), store);
      auto local = query::evaluate_local(typed, store, site);
      return SiteAnswer{local.rows, local.truncated};
    };
  }
};

std::vector<std::pair<std::map<Entity, std::string>, std::vector<std::optional<metastore::Value>>>> row_set(
    const std::vector<query::ResultRow>& rows) {
  std::vector<std::pair<std::map<Entity, std::string>, std::vector<std::optional<metastore::Value>>>> out;
  for (const auto& r : rows) out.emplace_back(r.ids, r.values);
  return out;
}

TEST(Execute, DisjointSitesUnionAndSort) {
  Fixture f;
  auto all = sites({"site-a", "site-b", "site-c", "site-d"});
  metastore::MetaStore merged;
  int n = 0;
  for (const auto& s : all) {
    auto& store = f.stores[s];
    for (int i = 0; i < 5; ++i, ++n) {
      metastore::MetaRecord r{Entity::Image, "I" + std::to_string(n), "microcalc_count",
                              std::int64_t{n % 7}, 1, s};
      store.put_meta(r);
      merged.put_meta(r);
    }
  }
  auto typed = query::validate(query::parse("SELECT image.microcalc_count WHERE image.microcalc_count >= 2 ORDER BY image.microcalc_count"), merged);
  for (bool concurrent : {true, false}) {
    auto res = execute(plan(typed, SiteId("site-a"), all), f.dispatch(), concurrent);
    EXPECT_EQ(res.responded, all);
    EXPECT_TRUE(res.failed.empty());
    EXPECT_FALSE(res.truncated);
    auto central = query::evaluate_local(typed, merged, SiteId("site-a"));
    EXPECT_EQ(row_set(res.rows), row_set(central.rows));
  }
}

TEST(Execute, UnreachableSiteIsReportedNotThrown) {
  Fixture f;
  auto all = sites({"site-a", "site-b", "site-c", "site-d"});
  for (const auto& s : all) {
    f.stores[s].put_meta({Entity::Image, "I-" + s.str(), "microcalc_count", std::int64_t{1}, 1, s});
  }
  f.down.insert(SiteId("site-c"));
  auto typed = query::validate(query::parse("SELECT image.microcalc_count WHERE image.microcalc_count = 1"),
                               f.stores.begin()->second);
  auto res = execute(plan(typed, SiteId("site-a"), all), f.dispatch());
  EXPECT_EQ(res.rows.size(), 3u);
  ASSERT_EQ(res.failed.size(), 1u);
  EXPECT_EQ(res.failed[0].site, SiteId("site-c"));
  EXPECT_EQ(res.failed[0].reason, "Timeout");
  EXPECT_FALSE(res.truncated);
}

TEST(Execute, SlowSiteTimesOut) {
  auto typed = query::parse("SELECT image.lfn WHERE image.lfn = 'x'");
  auto p = plan(typed, SiteId("site-a"), sites({"site-b"}), milliseconds(100));
  auto res = execute(p, [](const SiteId& site, const nlohmann::json&) {
    if (site == SiteId("site-b")) std::this_thread::sleep_for(milliseconds(600));
    return SiteAnswer{};
  });
  EXPECT_EQ(res.responded, sites({"site-a"}));
  ASSERT_EQ(res.failed.size(), 1u);
  EXPECT_EQ(res.failed[0].reason, "Timeout");
  std::this_thread::sleep_for(milliseconds(700));
}

TEST(Merge, ReplicatedRowKeepsSmallestSite) {
  query::ResultRow row;
  row.ids = {{Entity::Image, "I1"}};
  row.values = {metastore::Value{std::string("/x")}};
  auto q = query::parse("SELECT image.lfn WHERE image.lfn = '/x'");
  auto res = merge(q, {{SiteId("site-c"), SiteAnswer{{row}, false}}, {SiteId("site-b"), SiteAnswer{{row}, false}}}, {});
  ASSERT_EQ(res.rows.size(), 1u);
  EXPECT_EQ(res.rows[0].site, SiteId("site-b"));
}

TEST(Merge, GlobalLimitMarksTruncated) {
  auto q = query::parse("SELECT image.lfn WHERE image.lfn = 'x' LIMIT 2");
  std::vector<std::pair<SiteId, SiteAnswer>> answers;
  for (const char* s : {"site-a", "site-b"}) {
    SiteAnswer a;
    for (int i = 0; i < 2; ++i) {
      query::ResultRow r;
      r.ids = {{Entity::Image, std::string(s) + std::to_string(i)}};
      r.values = {std::nullopt};
      a.rows.push_back(r);
    }
    answers.emplace_back(SiteId(s), a);
  }
  auto res = merge(q, answers, {});
  EXPECT_EQ(res.rows.size(), 2u);
  EXPECT_TRUE(res.truncated);
  EXPECT_EQ(res.rows[0].ids.at(Entity::Image), "site-a0");
}

TEST(Merge, JsonRoundTrip) {
  auto q = query::parse("SELECT image.lfn WHERE image.lfn = 'x'");
  FederatedResult r;
  query::ResultRow row;
  row.ids = {{Entity::Image, "I"}};
  row.values = {metastore::Value{std::string("x")}};
  row.site = SiteId("site-b");
  r.rows = {row};
  r.responded = sites({"site-b"});
  r.failed = {{SiteId("site-c"), "Timeout"}};
  auto doc = to_json(r, q);
  EXPECT_EQ(doc["columns"], nlohmann::json::array({"image.lfn"}));
  auto back = result_from_json(doc, q);
  EXPECT_EQ(back.rows, r.rows);
  EXPECT_EQ(back.failed, r.failed);
  EXPECT_EQ(back.responded, r.responded);
}

// Random corpus split over four sites by image; studies and patients go wherever their
// images go, so every site may hold the same study record.
TEST(Execute, OracleEquivalenceAndDegradation) {
  std::mt19937_64 rng(77);
  auto all = sites({"site-a", "site-b", "site-c", "site-d"});
  auto corpus = testing::random_corpus(rng, 120);
  Fixture f;
  metastore::MetaStore merged;
  for (const auto& s : all) f.stores[s];
  for (const auto& r : corpus) {
    merged.put_meta(r);
    if (r.entity == Entity::Image) {
      f.stores[all[std::hash<std::string>{}(r.entity_id) % 4]].put_meta(r);
    } else {
      for (auto& [_, st] : f.stores) st.put_meta(r);
    }
  }
  for (int i = 0; i < 100; ++i) {
    auto text = testing::random_query_text(rng);
    auto typed = query::validate(query::parse(text), merged);
    if (typed.limit) typed.limit.reset();
    auto p = plan(typed, SiteId("site-a"), all);
    auto res = execute(p, f.dispatch(), false);
    auto central = query::evaluate_local(typed, merged, SiteId("site-a"));
    // study/patient-primary rows are answered by every site; image rows by one
    ASSERT_EQ(row_set(res.rows), row_set(central.rows)) << text;
    ASSERT_EQ(execute(p, f.dispatch(), false).rows, res.rows);

    f.down = {SiteId("site-b"), SiteId("site-d")};
    auto degraded = execute(p, f.dispatch(), false);
    f.down.clear();
    auto full = row_set(res.rows);
    for (const auto& r : row_set(degraded.rows)) {
      ASSERT_NE(std::find(full.begin(), full.end(), r), full.end()) << text;
    }
    ASSERT_EQ(degraded.failed.size(), 2u);
  }
}

TEST(PartitionFilter, AnswersOnlyHeldImages) {
  metastore::MetaStore meta;
  catalogue::Catalogue cat;
  SiteId a("site-a"), b("site-b");
  catalogue::FileEntry e;
  e.lfn = Lfn("/acq/site-b/x.mgd");
  e.guid.bytes[0] = 1;
  e.size = 10;
  e.created_site = b;
  e.created_seq = 1;
  cat.register_file(e, "pb");
  meta.put_meta({Entity::Image, "I1", "lfn", std::string("/acq/site-b/x.mgd"), 1, b});
  meta.put_meta({Entity::Image, "I1", "study_id", std::string("S1"), 1, b});
  meta.put_meta({Entity::Study, "S1", "patient_id", std::string("P1"), 1, b});
  meta.put_meta({Entity::Study, "S2", "patient_id", std::string("P2"), 1, b});
  auto at_a = partition_filter(meta, cat, a);
  auto at_b = partition_filter(meta, cat, b);
  EXPECT_FALSE(at_a(Entity::Image, "I1"));
  EXPECT_TRUE(at_b(Entity::Image, "I1"));
  EXPECT_FALSE(at_a(Entity::Study, "S1"));
  EXPECT_TRUE(at_b(Entity::Patient, "P1"));
  // no image anywhere: every site answers
  EXPECT_TRUE(at_a(Entity::Study, "S2"));
  EXPECT_TRUE(at_b(Entity::Study, "S2"));
}

TEST(DecideTransfer, Rule) {
  catalogue::Catalogue cat;
  auto add = [&](int n, std::uint64_t size) {
    catalogue::FileEntry e;
    e.lfn = Lfn("/f/" + std::to_string(n));
    e.guid.bytes[0] = static_cast<std::uint8_t>(n);
    e.size = size;
    e.created_site = SiteId("site-a");
    cat.register_file(e, "p");
    return e.guid;
  };
  auto small = add(1, 10ull << 20);
  auto big = add(2, 2ull << 30);
  auto exact = add(3, kDefaultReplicateThreshold);
  EXPECT_EQ(decide_transfer({small}, false, cat).mode, TransferMode::ReplicateBack);
  EXPECT_EQ(decide_transfer({big}, false, cat).mode, TransferMode::ReplicateBack);
  auto d = decide_transfer({big}, true, cat);
  EXPECT_EQ(d.mode, TransferMode::RemoteAnalysis);
  EXPECT_EQ(d.total_bytes, 2ull << 30);
  EXPECT_EQ(d.threshold_bytes, 67108864u);
  EXPECT_EQ(decide_transfer({exact}, true, cat).mode, TransferMode::ReplicateBack);
  EXPECT_EQ(decide_transfer({small}, true, cat, 1024).mode, TransferMode::RemoteAnalysis);
  Guid unknown;
  unknown.bytes[0] = 99;
  EXPECT_THROW(decide_transfer({unknown}, true, cat), UnknownGuid);
  EXPECT_EQ(mode_name(TransferMode::RemoteAnalysis), "remote_analysis");
}

}  // namespace
}  // namespace gridbox::federation
