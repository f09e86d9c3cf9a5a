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

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "gridbox/metastore.hpp"
#include "gridbox/querylang.hpp"

namespace gridbox::testing {

using metastore::Entity;
using metastore::Value;

// A small clinical corpus: patients -> studies -> images, with gaps so missing values occur.
inline std::vector<metastore::MetaRecord> random_corpus(std::mt19937_64& rng, int images,
                                                        const std::string& origin = "site-a") {
  std::vector<metastore::MetaRecord> out;
  SiteId site(origin);
  auto put = [&](Entity e, const std::string& id, const std::string& attr, Value v) {
    out.push_back({e, id, attr, std::move(v), 1, site});
  };
  std::uniform_real_distribution<double> unit(0, 1);
  int patients = std::max(1, images / 4);
  for (int p = 0; p < patients; ++p) {
    auto pid = "p" + std::to_string(p);
    if (rng() % 8) put(Entity::Patient, pid, "age", static_cast<std::int64_t>(30 + rng() % 50));
    if (rng() % 8) put(Entity::Patient, pid, "sex", std::string(rng() % 5 ? "F" : "M"));
  }
  int studies = std::max(1, images / 2);
  for (int s = 0; s < studies; ++s) {
    auto sid = "s" + std::to_string(s);
    put(Entity::Study, sid, "patient_id", "p" + std::to_string(rng() % patients));
    if (rng() % 8) {
      char date[16];
      std::snprintf(date, sizeof date, "20%02d-%02d-%02d", 20 + static_cast<int>(rng() % 7),
                    1 + static_cast<int>(rng() % 12), 1 + static_cast<int>(rng() % 28));
      put(Entity::Study, sid, "date", std::string(date));
    }
  }
  for (int i = 0; i < images; ++i) {
    auto iid = "i" + std::to_string(i);
    put(Entity::Image, iid, "lfn", "/acq/" + origin + "/" + iid + ".mgd");
    if (rng() % 10) put(Entity::Image, iid, "study_id", "s" + std::to_string(rng() % studies));
    if (rng() % 8) put(Entity::Image, iid, "breast_density", std::round(unit(rng) * 100) / 100);
    if (rng() % 8) put(Entity::Image, iid, "mean_brightness", std::round(unit(rng) * 2000) / 10);
    if (rng() % 8) put(Entity::Image, iid, "microcalc_count", static_cast<std::int64_t>(rng() % 6));
  }
  return out;
}

inline std::string random_leaf(std::mt19937_64& rng) {
  const char* ops[] = {"=", "!=", "<", "<=", ">", ">="};
  std::string op = ops[rng() % 6];
  switch (rng() % 7) {
    case 0: return "image.breast_density " + op + " 0." + std::to_string(rng() % 100);
    case 1: return "image.mean_brightness " + op + " " + std::to_string(rng() % 200);
    case 2: return "image.microcalc_count " + op + " " + std::to_string(rng() % 6);
    case 3: return "patient.age " + op + " " + std::to_string(30 + rng() % 50);
    case 4: return rng() % 2 ? "patient.sex = 'F'" : "patient.sex CONTAINS 'M'";
    case 5: return "study.date " + op + " '202" + std::to_string(rng() % 7) + "-06-15'";
    default: return "image.lfn CONTAINS 'i" + std::to_string(rng() % 10) + "'";
  }
}

inline std::string random_pred(std::mt19937_64& rng, int depth) {
  if (depth <= 0 || rng() % 3 == 0) return random_leaf(rng);
  switch (rng() % 3) {
    case 0: return "(" + random_pred(rng, depth - 1) + " AND " + random_pred(rng, depth - 1) + ")";
    case 1: return "(" + random_pred(rng, depth - 1) + " OR " + random_pred(rng, depth - 1) + ")";
    default: return "NOT " + random_pred(rng, depth - 1);
  }
}

inline std::string random_query_text(std::mt19937_64& rng) {
  const char* fields[] = {"image.lfn", "image.breast_density", "image.microcalc_count",
                          "patient.age", "study.date", "patient.sex"};
  std::string q = "SELECT " + std::string(fields[rng() % 6]);
  if (rng() % 2) q += ", " + std::string(fields[rng() % 6]);
  q += " WHERE " + random_pred(rng, 3);
  if (rng() % 2) q += " ORDER BY " + std::string(fields[rng() % 6]);
  if (rng() % 3 == 0) q += " LIMIT " + std::to_string(1 + rng() % 20);
  return q;
}

// ---- brute-force evaluation oracle over a flat record list ----

struct FlatStore {
  std::map<std::tuple<Entity, std::string, std::string>, metastore::MetaRecord> current;

  explicit FlatStore(const std::vector<metastore::MetaRecord>& records) {
    for (const auto& r : records) {
      auto key = std::tuple{r.entity, r.entity_id, r.attr};
      auto it = current.find(key);
      if (it == current.end() || std::tie(r.version, r.origin) > std::tie(it->second.version, it->second.origin)) {
        current.insert_or_assign(key, r);
      }
    }
  }

  std::optional<Value> get(Entity e, const std::optional<std::string>& id, const std::string& attr) const {
    if (!id) return std::nullopt;
    auto it = current.find(std::tuple{e, *id, attr});
    if (it == current.end()) return std::nullopt;
    return it->second.value;
  }
};

struct OracleRow {
  std::map<Entity, std::string> ids;
  std::vector<std::optional<Value>> values;
};

inline std::optional<double> as_number(const Value& v) {
  if (auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
  if (auto* d = std::get_if<double>(&v)) return *d;
  return std::nullopt;
}

inline bool oracle_cmp(const Value& stored, query::CmpOp op, const Value& lit) {
  using query::CmpOp;
  int c = 0;
  if (auto* s = std::get_if<std::string>(&stored)) {
    auto* l = std::get_if<std::string>(&lit);
    if (!l) return false;
    if (op == CmpOp::Contains) return s->find(*l) != std::string::npos;
    c = s->compare(*l);
  } else {
    if (op == CmpOp::Contains) return false;
    auto a = as_number(stored);
    auto b = as_number(lit);
    if (!a || !b) return false;
    c = *a < *b ? -1 : *a > *b ? 1 : 0;
  }
  switch (op) {
    case CmpOp::Eq: return c == 0;
    case CmpOp::Ne: return c != 0;
    case CmpOp::Lt: return c < 0;
    case CmpOp::Le: return c <= 0;
    case CmpOp::Gt: return c > 0;
    case CmpOp::Ge: return c >= 0;
    default: return false;
  }
}

inline bool oracle_pred(const query::Pred& p, const FlatStore& s, const std::map<Entity, std::string>& ids) {
  using K = query::Pred::Kind;
  if (p.kind == K::And) return oracle_pred(p.args[0], s, ids) && oracle_pred(p.args[1], s, ids);
  if (p.kind == K::Or) return oracle_pred(p.args[0], s, ids) || oracle_pred(p.args[1], s, ids);
  if (p.kind == K::Not) return !oracle_pred(p.args[0], s, ids);
  std::optional<std::string> id;
  if (auto it = ids.find(p.field.entity); it != ids.end()) id = it->second;
  auto v = s.get(p.field.entity, id, p.field.attr);
  return v && oracle_cmp(*v, p.op, p.literal.value);
}

// Rows in oracle order: order value ascending with missing last, then the id chain.
inline std::vector<OracleRow> oracle_evaluate(const query::Query& typed, const FlatStore& s) {
  int depth = 2;
  auto note = [&](Entity e) { depth = std::min(depth, e == Entity::Image ? 0 : e == Entity::Study ? 1 : 2); };
  for (const auto& f : typed.projections) note(f.entity);
  if (typed.order_by) note(typed.order_by->entity);
  std::vector<const query::Pred*> stack{&typed.predicate};
  while (!stack.empty()) {
    auto* p = stack.back();
    stack.pop_back();
    if (p->kind == query::Pred::Kind::Cmp) note(p->field.entity);
    for (const auto& a : p->args) stack.push_back(&a);
  }
  Entity primary = depth == 0 ? Entity::Image : depth == 1 ? Entity::Study : Entity::Patient;

  std::vector<std::string> ids;
  for (const auto& [key, _] : s.current) {
    if (std::get<0>(key) == primary &&
        (ids.empty() || ids.back() != std::get<1>(key))) {
      ids.push_back(std::get<1>(key));
    }
  }
  struct Keyed {
    OracleRow row;
    std::optional<Value> order;
    std::vector<std::string> chain;
  };
  std::vector<Keyed> rows;
  for (const auto& id : ids) {
    std::map<Entity, std::string> joined{{primary, id}};
    std::optional<std::string> study;
    if (primary == Entity::Image) {
      auto v = s.get(Entity::Image, id, "study_id");
      if (v && std::holds_alternative<std::string>(*v)) study = std::get<std::string>(*v);
    } else if (primary == Entity::Study) {
      study = id;
    }
    if (study) {
      joined[Entity::Study] = *study;
      auto pv = s.get(Entity::Study, study, "patient_id");
      if (pv && std::holds_alternative<std::string>(*pv)) joined[Entity::Patient] = std::get<std::string>(*pv);
    }
    if (!oracle_pred(typed.predicate, s, joined)) continue;
    Keyed k;
    k.row.ids = joined;
    for (const auto& f : typed.projections) {
      std::optional<std::string> fid;
      if (auto it = joined.find(f.entity); it != joined.end()) fid = it->second;
      k.row.values.push_back(s.get(f.entity, fid, f.attr));
    }
    if (typed.order_by) {
      std::optional<std::string> fid;
      if (auto it = joined.find(typed.order_by->entity); it != joined.end()) fid = it->second;
      k.order = s.get(typed.order_by->entity, fid, typed.order_by->attr);
    }
    for (Entity e : {Entity::Image, Entity::Study, Entity::Patient}) {
      if (auto it = joined.find(e); it != joined.end()) k.chain.push_back(it->second);
    }
    rows.push_back(std::move(k));
  }
  std::sort(rows.begin(), rows.end(), [](const Keyed& a, const Keyed& b) {
    if (a.order.has_value() != b.order.has_value()) return a.order.has_value();
    if (a.order && *a.order != *b.order) return *a.order < *b.order;
    return a.chain < b.chain;
  });
  if (typed.limit && rows.size() > *typed.limit) rows.resize(*typed.limit);
  std::vector<OracleRow> out;
  for (auto& k : rows) out.push_back(std::move(k.row));
  return out;
}

}  // namespace gridbox::testing
