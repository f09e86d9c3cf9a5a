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

#include <algorithm>
#include <fstream>
#include <random>

#include "gridbox/sync.hpp"
#include "support/records_gen.hpp"
#include "support/temp_dir.hpp"

namespace gridbox::sync {
namespace {

metastore::MetaRecord meta(const std::string& id, double v, std::uint64_t version, const std::string& origin) {
  return {metastore::Entity::Image, id, "breast_density", v, version, SiteId(origin)};
}

ChangeRecord put(const std::string& origin, std::uint64_t seq, const std::string& id, double v) {
  return make_record(SiteId(origin), seq, Kind::PutMeta, put_meta_payload(meta(id, v, seq, origin)));
}

nlohmann::json fold_canonical(std::vector<ChangeRecord> records) {
  std::sort(records.begin(), records.end(),
            [](const auto& a, const auto& b) { return std::tie(a.origin, a.seq) < std::tie(b.origin, b.seq); });
  ReplicatedState state;
  for (const auto& r : records) state.apply(r);
  return state.canonical_with_jobs();
}

TEST(Record, DigestCoversCanonicalBody) {
  auto r = put("site-a", 1, "I1", 0.5);
  EXPECT_TRUE(r.verifies());
  EXPECT_EQ(r.digest, crypto::sha256(as_bytes(r.body())));
  auto body = nlohmann::json::parse(r.body());
  EXPECT_EQ(body["origin"], "site-a");
  EXPECT_EQ(body["seq"], 1);
  EXPECT_EQ(body["kind"], "PutMeta");
  auto tampered = r;
  tampered.payload["value"] = 0.6;
  EXPECT_FALSE(tampered.verifies());
  EXPECT_EQ(record_from_json(to_json(r)), r);
  EXPECT_THROW(record_from_json(nlohmann::json{{"origin", "site-a"}, {"seq", 0}}), SyncError);
}

TEST(Record, VectorJson) {
  SeqVector v{{SiteId("site-a"), 3}, {SiteId("site-b"), 1}};
  EXPECT_EQ(vector_from_json(vector_to_json(v)), v);
  EXPECT_TRUE(vector_from_json(nlohmann::json(nullptr)).empty());
  EXPECT_THROW(vector_from_json(nlohmann::json::array()), SyncError);
  EXPECT_THROW(vector_from_json(nlohmann::json{{"BAD", 1}}), SyncError);
}

TEST(Validate, EmitterMustBeOrigin) {
  auto r = make_record(SiteId("site-b"), 1, Kind::PutMeta, put_meta_payload(meta("I1", 0.1, 1, "site-a")));
  try {
    validate(r);
    FAIL();
  } catch (const SyncError& e) {
    EXPECT_EQ(e.code(), Errc::BadRecord);
  }
  auto junk = make_record(SiteId("site-a"), 1, Kind::AddFile, nlohmann::json{{"entry", 1}});
  EXPECT_THROW(validate(junk), SyncError);
}

TEST(Engine, AppendNumbersFromOne) {
  ReplicatedState state;
  SyncEngine e(SiteId("site-a"), state, nullptr);
  EXPECT_EQ(e.append(Kind::PutMeta, put_meta_payload(meta("I1", 0.1, 1, "site-a"))).seq, 1u);
  EXPECT_EQ(e.append(Kind::PutMeta, put_meta_payload(meta("I1", 0.2, 2, "site-a"))).seq, 2u);
  EXPECT_EQ(e.vector().at(SiteId("site-a")), 2u);
  EXPECT_EQ(std::get<double>(*state.meta.get_current(metastore::Entity::Image, "I1", "breast_density")), 0.2);
}

TEST(Engine, IdempotentApply) {
  ReplicatedState state;
  SyncEngine e(SiteId("site-z"), state, nullptr);
  auto r = put("site-a", 1, "I1", 0.3);
  auto first = e.receive({r});
  EXPECT_EQ(first.applied, 1u);
  auto before = state.canonical();
  auto again = e.receive({r});
  EXPECT_EQ(again.duplicates, 1u);
  EXPECT_EQ(again.applied, 0u);
  EXPECT_EQ(state.canonical(), before);
}

TEST(Engine, GapBuffering) {
  ReplicatedState in_order_state;
  SyncEngine in_order(SiteId("site-z"), in_order_state, nullptr);
  auto r1 = put("site-a", 1, "I1", 0.1);
  auto r2 = put("site-a", 2, "I1", 0.2);
  in_order.receive({r1, r2});

  ReplicatedState state;
  SyncEngine e(SiteId("site-z"), state, nullptr);
  auto res = e.receive({r2});
  EXPECT_EQ(res.buffered, 1u);
  EXPECT_EQ(e.buffered(), 1u);
  EXPECT_FALSE(e.vector().contains(SiteId("site-a")));
  res = e.receive({r1});
  EXPECT_EQ(res.applied, 2u);
  EXPECT_EQ(e.buffered(), 0u);
  EXPECT_EQ(state.canonical(), in_order_state.canonical());
}

TEST(Engine, BadDigestRejectsWholeBatch) {
  ReplicatedState state;
  SyncEngine e(SiteId("site-z"), state, nullptr);
  auto good = put("site-a", 1, "I1", 0.1);
  auto bad = put("site-a", 2, "I1", 0.2);
  bad.digest[0] ^= 1;
  try {
    e.receive({good, bad});
    FAIL();
  } catch (const SyncError& err) {
    EXPECT_EQ(err.code(), Errc::BadDigest);
  }
  EXPECT_EQ(e.record_count(), 0u);
}

TEST(Engine, BufferOverflow) {
  ReplicatedState state;
  SyncEngine e(SiteId("site-z"), state, nullptr);
  std::vector<ChangeRecord> batch;
  for (std::uint64_t s = 2; s <= SyncEngine::kBufferCap + 2; ++s) batch.push_back(put("site-a", s, "I1", 0.1));
  try {
    e.receive(batch);
    FAIL();
  } catch (const SyncError& err) {
    EXPECT_EQ(err.code(), Errc::BufferOverflow);
  }
}

TEST(Engine, PullSincePaging) {
  ReplicatedState state;
  SyncEngine e(SiteId("site-a"), state, nullptr);
  std::vector<ChangeRecord> batch;
  for (std::uint64_t s = 1; s <= 1500; ++s) batch.push_back(put("site-b", s, "I" + std::to_string(s % 7), 0.1));
  for (std::uint64_t s = 1; s <= 10; ++s) batch.push_back(put("site-c", s, "J", 0.2));
  e.receive(batch);

  bool more = false;
  auto all = e.pull_since({}, SyncEngine::kPullCap, &more);
  EXPECT_EQ(all.size(), 1000u);
  EXPECT_TRUE(more);
  EXPECT_TRUE(std::is_sorted(all.begin(), all.end(), [](const auto& a, const auto& b) {
    return std::tie(a.origin, a.seq) < std::tie(b.origin, b.seq);
  }));

  // caller loops with its advancing vector
  SeqVector v;
  std::size_t got = 0;
  do {
    auto page = e.pull_since(v, SyncEngine::kPullCap, &more);
    for (const auto& r : page) v[r.origin] = r.seq;
    got += page.size();
  } while (more);
  EXPECT_EQ(got, 1510u);
  EXPECT_EQ(v, e.vector());
  EXPECT_TRUE(e.pull_since(e.vector()).empty());
}

TEST(Engine, OrderInsensitiveFold) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    auto records = testing::random_logs(rng, 3, 100 + static_cast<int>(rng() % 400));
    auto expected = fold_canonical(records);
    for (int perm = 0; perm < 5; ++perm) {
      std::shuffle(records.begin(), records.end(), rng);
      ReplicatedState state;
      SyncEngine e(SiteId("site-z"), state, nullptr);
      std::size_t i = 0;
      while (i < records.size()) {
        std::size_t n = 1 + rng() % 20;
        std::vector<ChangeRecord> batch(records.begin() + static_cast<std::ptrdiff_t>(i),
                                        records.begin() + static_cast<std::ptrdiff_t>(std::min(records.size(), i + n)));
        e.receive(batch);
        i += n;
      }
      ASSERT_EQ(state.canonical_with_jobs(), expected) << "trial " << trial;
      ASSERT_TRUE(state.catalogue.referentially_intact());
    }
  }
}

TEST(Engine, ReplayReproducesState) {
  std::mt19937_64 rng(8);
  auto records = testing::random_logs(rng, 3, 300);
  ReplicatedState a;
  SyncEngine ea(SiteId("site-z"), a, nullptr);
  ea.receive(records);
  ReplicatedState b;
  SyncEngine eb(SiteId("site-z"), b, nullptr);
  eb.replay(ea.pull_since({}, 100000));
  EXPECT_EQ(a.canonical_with_jobs(), b.canonical_with_jobs());
  EXPECT_EQ(ea.vector(), eb.vector());
}

TEST(ChangeLogFile, AppendLoadAndFormat) {
  testing::TempDir dir;
  auto path = dir / "changes.log";
  auto r1 = put("site-a", 1, "I1", 0.1);
  auto r2 = put("site-a", 2, "I2", 0.2);
  {
    ChangeLog log(path);
    log.append({r1});
    log.append({r2});
  }
  auto loaded = ChangeLog::load(path, false);
  ASSERT_EQ(loaded.records.size(), 2u);
  EXPECT_EQ(loaded.records[0], r1);
  EXPECT_EQ(loaded.records[1], r2);
  EXPECT_EQ(loaded.dropped_bytes, 0u);

  auto entry = encode_log_entry(r1);
  const auto body = r1.body();
  EXPECT_EQ(get_u32le(entry.data()), body.size());
  EXPECT_EQ(entry.size(), 4 + body.size() + 32);
  EXPECT_EQ(std::filesystem::file_size(path), entry.size() + encode_log_entry(r2).size());
}

TEST(ChangeLogFile, TruncatedTailNeedsRecovery) {
  testing::TempDir dir;
  auto path = dir / "changes.log";
  {
    ChangeLog log(path);
    log.append({put("site-a", 1, "I1", 0.1), put("site-a", 2, "I2", 0.2)});
  }
  const auto full = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, full - 10);
  const auto first_len = encode_log_entry(put("site-a", 1, "I1", 0.1)).size();
  try {
    ChangeLog::load(path, false);
    FAIL();
  } catch (const SyncError& e) {
    EXPECT_EQ(e.code(), Errc::CorruptLog);
    EXPECT_EQ(e.offset(), first_len);
  }
  auto loaded = ChangeLog::load(path, true);
  EXPECT_EQ(loaded.records.size(), 1u);
  EXPECT_EQ(loaded.valid_bytes, first_len);
  EXPECT_EQ(std::filesystem::file_size(path), first_len);
  EXPECT_EQ(ChangeLog::load(path, false).records.size(), 1u);
}

TEST(ChangeLogFile, FlippedByteIsCorrupt) {
  testing::TempDir dir;
  auto path = dir / "changes.log";
  {
    ChangeLog log(path);
    log.append({put("site-a", 1, "I1", 0.1)});
  }
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(10);
    f.put('#');
  }
  EXPECT_THROW(ChangeLog::load(path, false), SyncError);
  EXPECT_TRUE(ChangeLog::load(path, true).records.empty());
}

TEST(ChangeLogFile, EngineWritesAheadOfApply) {
  testing::TempDir dir;
  auto path = dir / "changes.log";
  nlohmann::json expected;
  {
    ChangeLog log(path);
    ReplicatedState state;
    SyncEngine e(SiteId("site-a"), state, &log);
    e.append(Kind::PutMeta, put_meta_payload(meta("I1", 0.1, 1, "site-a")));
    e.receive({put("site-b", 1, "I2", 0.2)});
    expected = state.canonical();
  }
  ReplicatedState restored;
  SyncEngine e(SiteId("site-a"), restored, nullptr);
  e.replay(ChangeLog::load(path, false).records);
  EXPECT_EQ(restored.canonical(), expected);
  EXPECT_EQ(e.next_seq(), 2u);
}

}  // namespace
}  // namespace gridbox::sync
