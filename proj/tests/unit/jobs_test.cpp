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

#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include "gridbox/catalogue.hpp"
#include "gridbox/jobs.hpp"
#include "gridbox/phantom.hpp"

namespace gridbox::jobs {
namespace {

SiteId S(const char* s) { return SiteId(s); }

Guid guid_n(int n) {
  Guid g{};
  g.bytes[15] = static_cast<std::uint8_t>(n);
  g.bytes[0] = 0x10;
  return g;
}

struct Cat {
  catalogue::Catalogue cat;
  int next = 1;
  Lfn add(const std::vector<const char*>& sites) {
    catalogue::FileEntry e;
    e.lfn = Lfn("/acq/x/f" + std::to_string(next) + ".mgd");
    e.guid = guid_n(next);
    e.size = 10;
    e.created_site = S(sites[0]);
    e.created_seq = static_cast<std::uint64_t>(next);
    ++next;
    cat.register_file(e, "p0");
    for (std::size_t i = 1; i < sites.size(); ++i) cat.add_replica(e.guid, S(sites[i]), "p" + std::to_string(i));
    return e.lfn;
  }
};

TEST(Target, LocalityRule) {
  Cat c;
  auto a = c.add({"site-b"}), b = c.add({"site-b"});
  EXPECT_EQ(choose_target({a, b}, c.cat), S("site-b"));
  auto x1 = c.add({"site-a"}), x2 = c.add({"site-a"}), y1 = c.add({"site-b"}), y2 = c.add({"site-b"});
  EXPECT_EQ(choose_target({y1, x1, y2, x2}, c.cat), S("site-a"));
  auto all = c.add({"site-d", "site-c", "site-b", "site-a"});
  EXPECT_EQ(choose_target({all}, c.cat), S("site-a"));
}

TEST(Target, Errors) {
  Cat c;
  try {
    choose_target({Lfn("/nope.mgd")}, c.cat);
    FAIL();
  } catch (const JobError& e) {
    EXPECT_EQ(e.code(), Errc::UnknownLfn);
  }
  EXPECT_THROW(choose_target({}, c.cat), JobError);
  EXPECT_FALSE(parse_algorithm("rm -rf"));
  EXPECT_EQ(parse_algorithm("standardize"), Algorithm::Standardize);
  EXPECT_EQ(algorithm_name(Algorithm::QcReport), "qc_report");
  EXPECT_EQ(parse_status("running"), Status::Running);
}

// Random target maps checked against a brute-force count.
TEST(Target, MatchesCountOracle) {
  std::mt19937_64 rng(4);
  const std::vector<const char*> names{"site-a", "site-b", "site-c", "site-d"};
  for (int t = 0; t < 100; ++t) {
    Cat c;
    std::vector<Lfn> inputs;
    std::map<std::string, int> count;
    for (int i = 0; i < 1 + static_cast<int>(rng() % 6); ++i) {
      std::vector<const char*> sites;
      for (auto n : names)
        if (rng() % 2) sites.push_back(n);
      if (sites.empty()) sites.push_back(names[rng() % 4]);
      std::shuffle(sites.begin(), sites.end(), rng);
      for (auto s : sites) ++count[s];
      inputs.push_back(c.add(sites));
    }
    std::string best;
    int best_n = -1;
    for (auto& [s, n] : count)
      if (n > best_n) best = s, best_n = n;
    EXPECT_EQ(choose_target(inputs, c.cat).str(), best);
  }
}

JobEvent queued(int id, const char* submitter, const char* target) {
  JobEvent e;
  e.job = guid_n(id);
  e.transition = Status::Queued;
  e.site = e.submitter = S(submitter);
  e.target = S(target);
  e.inputs = {Lfn("/acq/x/f1.mgd")};
  return e;
}

JobEvent step(int id, Status s, const char* site, std::int64_t at = 0) {
  JobEvent e;
  e.job = guid_n(id);
  e.transition = s;
  e.site = S(site);
  e.at_ms = at;
  if (s == Status::Done) e.outputs = {Lfn("/derived/x/out.mgd")};
  if (s == Status::Failed) e.reason = "checksum";
  return e;
}

TEST(Book, LifecycleAndErrors) {
  JobBook book;
  EXPECT_THROW(book.status(guid_n(1)), JobError);
  EXPECT_EQ(book.apply(queued(1, "site-a", "site-b"), S("site-a"), 1), JobBook::ApplyOutcome::Applied);
  EXPECT_EQ(book.status(guid_n(1)).status, Status::Queued);
  EXPECT_EQ(book.apply(step(1, Status::Claimed, "site-b"), S("site-b"), 1), JobBook::ApplyOutcome::Applied);
  EXPECT_EQ(book.apply(step(1, Status::Running, "site-b"), S("site-b"), 2), JobBook::ApplyOutcome::Applied);
  EXPECT_EQ(book.apply(step(1, Status::Done, "site-b"), S("site-b"), 3), JobBook::ApplyOutcome::Applied);
  auto j = book.status(guid_n(1));
  EXPECT_EQ(j.status, Status::Done);
  EXPECT_FALSE(j.outputs.empty());
  EXPECT_EQ(j.claim_count, 1u);
}

TEST(Book, OnlyTargetAndSubmitterCount) {
  JobBook book;
  book.apply(queued(1, "site-a", "site-b"), S("site-a"), 1);
  EXPECT_EQ(book.apply(step(1, Status::Claimed, "site-c"), S("site-c"), 1), JobBook::ApplyOutcome::Rejected);
  EXPECT_EQ(book.apply(step(1, Status::Claimed, "site-b"), S("site-a"), 2), JobBook::ApplyOutcome::Rejected);
  auto forged = queued(1, "site-a", "site-c");
  forged.site = S("site-d");
  EXPECT_EQ(book.apply(forged, S("site-d"), 1), JobBook::ApplyOutcome::Rejected);
  auto j = book.status(guid_n(1));
  EXPECT_EQ(j.status, Status::Queued);
  EXPECT_EQ(j.target, S("site-b"));
  EXPECT_EQ(j.claim_count, 0u);
}

TEST(Book, EarlyEventsDeferred) {
  JobBook book;
  EXPECT_EQ(book.apply(step(1, Status::Claimed, "site-b"), S("site-b"), 1), JobBook::ApplyOutcome::Deferred);
  EXPECT_EQ(book.find(guid_n(1)), nullptr);
  book.apply(queued(1, "site-a", "site-b"), S("site-a"), 1);
  EXPECT_EQ(book.status(guid_n(1)).status, Status::Claimed);
}

TEST(Book, FoldIsOrderInsensitive) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 50; ++t) {
    std::vector<std::tuple<JobEvent, SiteId, std::uint64_t>> evs;
    std::map<std::string, std::uint64_t> seq;
    auto push = [&](JobEvent e) {
      auto s = ++seq[e.site.str()];
      evs.emplace_back(e, e.site, s);
    };
    for (int j = 1; j <= 5; ++j) {
      push(queued(j, "site-a", j % 2 ? "site-b" : "site-c"));
      const char* tgt = j % 2 ? "site-b" : "site-c";
      int n = static_cast<int>(rng() % 4);
      if (n > 0) push(step(j, Status::Claimed, tgt));
      if (n > 1) push(step(j, Status::Running, tgt));
      if (n > 2) push(step(j, rng() % 2 ? Status::Done : Status::Failed, tgt));
      if (rng() % 3 == 0) push(step(j, Status::Claimed, "site-d"));
    }
    JobBook ref;
    for (auto& [e, o, s] : evs) ref.apply(e, o, s);
    for (int p = 0; p < 5; ++p) {
      std::shuffle(evs.begin(), evs.end(), rng);
      JobBook b;
      for (auto& [e, o, s] : evs) b.apply(e, o, s);
      for (auto& [e, o, s] : evs) b.apply(e, o, s);
      EXPECT_EQ(b.canonical(), ref.canonical());
    }
  }
}

TEST(Book, QueuedForOrdering) {
  JobBook book;
  EXPECT_TRUE(book.queued_for(S("site-a")).empty());
  book.apply(queued(1, "site-c", "site-a"), S("site-c"), 4);
  book.apply(queued(2, "site-b", "site-a"), S("site-b"), 9);
  book.apply(queued(3, "site-b", "site-a"), S("site-b"), 2);
  book.apply(queued(4, "site-b", "site-c"), S("site-b"), 3);
  book.apply(queued(5, "site-a", "site-d"), S("site-a"), 1);
  auto q = book.queued_for(S("site-a"));
  ASSERT_EQ(q.size(), 3u);
  EXPECT_EQ(q[0].id, guid_n(3));
  EXPECT_EQ(q[1].id, guid_n(2));
  EXPECT_EQ(q[2].id, guid_n(1));
  book.apply(step(3, Status::Claimed, "site-a"), S("site-a"), 2);
  EXPECT_EQ(book.queued_for(S("site-a")).size(), 2u);
  ASSERT_EQ(book.unfinished_at(S("site-a")).size(), 1u);
}

TEST(Events, JsonRoundTrip) {
  auto e = queued(7, "site-a", "site-b");
  e.params = {{"k", 3.5}};
  e.algorithm = Algorithm::DetectMicrocalcs;
  auto back = event_from_json(to_json(e));
  EXPECT_EQ(to_json(back), to_json(e));
  auto f = step(7, Status::Failed, "site-b", 99);
  EXPECT_EQ(to_json(event_from_json(to_json(f))), to_json(f));
}

TEST(Algorithms, Outputs) {
  simnet::PhantomSpec s;
  s.spots = 2;
  auto p = simnet::generate_phantom(s);
  auto qc = run_algorithm(Algorithm::QcReport, {}, p.dataset);
  EXPECT_EQ(qc.image_attrs.size(), 4u);
  EXPECT_FALSE(qc.derived);
  auto mc = run_algorithm(Algorithm::DetectMicrocalcs, {}, p.dataset);
  ASSERT_FALSE(mc.image_attrs.empty());
  EXPECT_EQ(mc.image_attrs[0].first, "microcalc_count");
  EXPECT_EQ(std::get<std::int64_t>(mc.image_attrs[0].second), 2);
  auto st = run_algorithm(Algorithm::Standardize, {}, p.dataset);
  ASSERT_TRUE(st.derived);
  auto img = analysis::image_from_dataset(*st.derived);
  EXPECT_EQ(img.rows, p.image.rows);
  EXPECT_NE(img, p.image);
  auto strict = mc_params_from_json({{"k", 100.0}});
  EXPECT_EQ(strict.k, 100.0);
  auto none = run_algorithm(Algorithm::DetectMicrocalcs, {{"k", 100.0}}, p.dataset);
  EXPECT_EQ(std::get<std::int64_t>(none.image_attrs[0].second), 0);
}

}  // namespace
}  // namespace gridbox::jobs
