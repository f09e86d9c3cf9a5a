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

#include "gridbox/querylang.hpp"

namespace gridbox::query {

namespace {

using metastore::MetaStore;

struct RowContext {
  std::map<Entity, std::string> ids;
};

const metastore::MetaRecord* lookup(const MetaStore& store, const RowContext& ctx, const Field& f) {
  auto it = ctx.ids.find(f.entity);
  if (it == ctx.ids.end()) return nullptr;
  return store.current_record(f.entity, it->second, f.attr);
}

template <typename T>
bool compare_as(const T& lhs, CmpOp op, const T& rhs) {
  switch (op) {
    case CmpOp::Eq: return lhs == rhs;
    case CmpOp::Ne: return lhs != rhs;
    case CmpOp::Lt: return lhs < rhs;
    case CmpOp::Le: return lhs <= rhs;
    case CmpOp::Gt: return lhs > rhs;
    case CmpOp::Ge: return lhs >= rhs;
    case CmpOp::Contains: return false;
  }
  return false;
}

bool compare(const Value& stored, CmpOp op, const Value& lit) {
  if (stored.index() != lit.index()) return false;
  if (const auto* s = std::get_if<std::string>(&stored)) {
    const auto& needle = std::get<std::string>(lit);
    if (op == CmpOp::Contains) return s->find(needle) != std::string::npos;
    return compare_as(*s, op, needle);
  }
  if (const auto* i = std::get_if<std::int64_t>(&stored)) {
    return compare_as(*i, op, std::get<std::int64_t>(lit));
  }
  return compare_as(std::get<double>(stored), op, std::get<double>(lit));
}

// A missing value makes the comparison false; NOT applies to that collapsed result.
bool eval(const Pred& p, const MetaStore& store, const RowContext& ctx) {
  switch (p.kind) {
    case Pred::Kind::And:
      return eval(p.args[0], store, ctx) && eval(p.args[1], store, ctx);
    case Pred::Kind::Or:
      return eval(p.args[0], store, ctx) || eval(p.args[1], store, ctx);
    case Pred::Kind::Not:
      return !eval(p.args[0], store, ctx);
    case Pred::Kind::Cmp: {
      const auto* rec = lookup(store, ctx, p.field);
      return rec && compare(rec->value, p.op, p.literal.value);
    }
  }
  return false;
}

std::optional<std::string> string_attr(const MetaStore& store, Entity e, const std::string& id,
                                       const std::string& attr) {
  const auto* rec = store.current_record(e, id, attr);
  if (!rec) return std::nullopt;
  if (const auto* s = std::get_if<std::string>(&rec->value)) return *s;
  return std::nullopt;
}

RowContext join(const MetaStore& store, Entity primary, const std::string& id) {
  RowContext ctx;
  ctx.ids[primary] = id;
  std::optional<std::string> study;
  if (primary == Entity::Image) {
    study = string_attr(store, Entity::Image, id, "study_id");
    if (study) ctx.ids[Entity::Study] = *study;
  } else if (primary == Entity::Study) {
    study = id;
  }
  if (study) {
    if (auto patient = string_attr(store, Entity::Study, *study, "patient_id")) {
      ctx.ids[Entity::Patient] = *patient;
    }
  }
  return ctx;
}

std::vector<std::string> id_chain(const std::map<Entity, std::string>& ids) {
  std::vector<std::string> out;
  for (Entity e : {Entity::Image, Entity::Study, Entity::Patient}) {
    if (auto it = ids.find(e); it != ids.end()) out.push_back(it->second);
  }
  return out;
}

metastore::Value json_to_value(const nlohmann::json& j) {
  if (j.is_number_integer()) return j.get<std::int64_t>();
  if (j.is_number_float()) return j.get<double>();
  if (j.is_string()) return j.get<std::string>();
  throw QueryError(Errc::BadDocument, "row value must be a number or string");
}

std::optional<Value> optional_value(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return json_to_value(j);
}

}  // namespace

bool row_before(const ResultRow& a, const ResultRow& b) {
  if (a.order_value != b.order_value) {
    if (!a.order_value) return false;
    if (!b.order_value) return true;
    if (*a.order_value < *b.order_value) return true;
    if (*b.order_value < *a.order_value) return false;
  }
  return id_chain(a.ids) < id_chain(b.ids);
}

LocalResult evaluate_local(const Query& typed, const MetaStore& store, const SiteId& site,
                           const PartitionFilter& holds) {
  LocalResult result;
  Entity primary = primary_entity(typed);
  for (const auto& row : store.scan(primary)) {
    if (holds && !holds(primary, row.entity_id)) continue;
    RowContext ctx = join(store, primary, row.entity_id);
    if (!eval(typed.predicate, store, ctx)) continue;
    ResultRow out;
    out.ids = ctx.ids;
    out.site = site;
    for (const auto& f : typed.projections) {
      const auto* rec = lookup(store, ctx, f);
      out.values.push_back(rec ? std::optional<Value>(rec->value) : std::nullopt);
    }
    if (typed.order_by) {
      if (const auto* rec = lookup(store, ctx, *typed.order_by)) out.order_value = rec->value;
    }
    result.rows.push_back(std::move(out));
  }
  std::stable_sort(result.rows.begin(), result.rows.end(), row_before);
  if (typed.limit && result.rows.size() > *typed.limit) {
    result.rows.resize(*typed.limit);
    result.truncated = true;
  }
  return result;
}

nlohmann::json to_json(const ResultRow& row, const Query& q) {
  (void)q;
  nlohmann::json ids = nlohmann::json::object();
  for (const auto& [e, id] : row.ids) ids[std::string(metastore::entity_name(e))] = id;
  auto values = nlohmann::json::array();
  for (const auto& v : row.values) {
    values.push_back(v ? metastore::value_to_json(*v) : nlohmann::json(nullptr));
  }
  return {{"ids", std::move(ids)},
          {"values", std::move(values)},
          {"order_value",
           row.order_value ? metastore::value_to_json(*row.order_value) : nlohmann::json(nullptr)},
          {"site", row.site.str()}};
}

ResultRow row_from_json(const nlohmann::json& doc, const Query& q) {
  try {
    ResultRow row;
    for (const auto& [name, id] : doc.at("ids").items()) {
      auto e = metastore::parse_entity(name);
      if (!e) throw QueryError(Errc::BadDocument, "bad entity in row ids");
      row.ids[*e] = id.get<std::string>();
    }
    const auto& values = doc.at("values");
    if (!values.is_array() || values.size() != q.projections.size()) {
      throw QueryError(Errc::BadDocument, "row value count does not match projections");
    }
    for (const auto& v : values) row.values.push_back(optional_value(v));
    if (auto it = doc.find("order_value"); it != doc.end()) row.order_value = optional_value(*it);
    row.site = SiteId(doc.at("site").get<std::string>());
    return row;
  } catch (const nlohmann::json::exception& e) {
    throw QueryError(Errc::BadDocument, std::string("malformed row: ") + e.what());
  } catch (const InvalidName& e) {
    throw QueryError(Errc::BadDocument, e.what());
  }
}

}  // namespace gridbox::query
