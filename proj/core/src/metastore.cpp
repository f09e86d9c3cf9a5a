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

#include "gridbox/metastore.hpp"

#include <algorithm>

namespace gridbox::metastore {

namespace {

const char* errc_name(Errc c) {
  switch (c) {
    case Errc::ConflictingDefinition: return "ConflictingDefinition";
    case Errc::UnknownAttribute: return "UnknownAttribute";
    case Errc::TypeMismatch: return "TypeMismatch";
    case Errc::BadName: return "BadName";
  }
  return "MetaError";
}

bool valid_attr_name(std::string_view s) {
  if (s.empty() || s.size() > 48) return false;
  return std::all_of(s.begin(), s.end(), [](char c) { return (c >= 'a' && c <= 'z') || c == '_'; });
}

Value json_to_value(const nlohmann::json& j) {
  if (j.is_number_integer()) return j.get<std::int64_t>();
  if (j.is_number_float()) return j.get<double>();
  if (j.is_string()) return j.get<std::string>();
  throw std::invalid_argument("metadata value must be a number or string");
}

}  // namespace

namespace {

bool is_builtin(const std::pair<Entity, std::string>& key) {
  const auto& all = builtin_descriptors();
  return std::any_of(all.begin(), all.end(),
                     [&](const AttributeDescriptor& d) { return d.entity == key.first && d.name == key.second; });
}

}  // namespace

std::string_view entity_name(Entity e) {
  switch (e) {
    case Entity::Patient: return "patient";
    case Entity::Study: return "study";
    case Entity::Image: return "image";
  }
  return "?";
}

std::optional<Entity> parse_entity(std::string_view s) {
  if (s == "patient") return Entity::Patient;
  if (s == "study") return Entity::Study;
  if (s == "image") return Entity::Image;
  return std::nullopt;
}

std::string_view vtype_name(VType t) {
  switch (t) {
    case VType::Int: return "int";
    case VType::Float: return "float";
    case VType::String: return "string";
    case VType::Date: return "date";
  }
  return "?";
}

std::optional<VType> parse_vtype(std::string_view s) {
  if (s == "int") return VType::Int;
  if (s == "float") return VType::Float;
  if (s == "string") return VType::String;
  if (s == "date") return VType::Date;
  return std::nullopt;
}

nlohmann::json value_to_json(const Value& v) {
  return std::visit([](const auto& x) { return nlohmann::json(x); }, v);
}

bool is_iso_date(std::string_view s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return false;
  for (std::size_t i : {0, 1, 2, 3, 5, 6, 8, 9}) {
    if (s[i] < '0' || s[i] > '9') return false;
  }
  int month = (s[5] - '0') * 10 + (s[6] - '0');
  int day = (s[8] - '0') * 10 + (s[9] - '0');
  return month >= 1 && month <= 12 && day >= 1 && day <= 31;
}

std::optional<Value> coerce(VType t, const nlohmann::json& raw) {
  switch (t) {
    case VType::Int:
      if (raw.is_number_integer()) return raw.get<std::int64_t>();
      return std::nullopt;
    case VType::Float:
      if (raw.is_number()) return raw.get<double>();
      return std::nullopt;
    case VType::String:
      if (raw.is_string()) return raw.get<std::string>();
      return std::nullopt;
    case VType::Date:
      if (raw.is_string() && is_iso_date(raw.get<std::string>())) return raw.get<std::string>();
      return std::nullopt;
  }
  return std::nullopt;
}

MetaError::MetaError(Errc code, const std::string& detail)
    : std::runtime_error(std::string(errc_name(code)) + ": " + detail), code_(code) {}

const std::vector<AttributeDescriptor>& builtin_descriptors() {
  static const std::vector<AttributeDescriptor> kBuiltins{
      {"mean_brightness", Entity::Image, VType::Float, "grey level"},
      {"rms_contrast", Entity::Image, VType::Float, "grey level"},
      {"breast_density", Entity::Image, VType::Float, "fraction"},
      {"microcalc_count", Entity::Image, VType::Int, "count"},
      {"microcalc_locations", Entity::Image, VType::String, "json [[row,col],...]"},
      {"standardized", Entity::Image, VType::Int, "flag"},
      {"source_lfn", Entity::Image, VType::String, ""},
      {"lfn", Entity::Image, VType::String, ""},
      {"study_id", Entity::Image, VType::String, ""},
      {"patient_id", Entity::Study, VType::String, ""},
      {"date", Entity::Study, VType::Date, ""},
      {"age", Entity::Patient, VType::Int, "years"},
      {"sex", Entity::Patient, VType::String, ""},
  };
  return kBuiltins;
}

MetaStore::MetaStore() {
  for (const auto& d : builtin_descriptors()) descriptors_.emplace(DescKey{d.entity, d.name}, d);
}

void MetaStore::define_attribute(const AttributeDescriptor& d) {
  if (!valid_attr_name(d.name)) throw MetaError(Errc::BadName, d.name);
  DescKey key{d.entity, d.name};
  if (auto it = descriptors_.find(key); it != descriptors_.end()) {
    if (it->second == d) return;
    throw MetaError(Errc::ConflictingDefinition,
                    std::string(entity_name(d.entity)) + "." + d.name);
  }
  apply_define(d);
}

void MetaStore::put_meta(const MetaRecord& r) {
  const AttributeDescriptor* d = descriptor(r.entity, r.attr);
  if (!d) throw MetaError(Errc::UnknownAttribute, std::string(entity_name(r.entity)) + "." + r.attr);
  if (!coerce(d->vtype, value_to_json(r.value))) {
    throw MetaError(Errc::TypeMismatch, r.attr + " expects " + std::string(vtype_name(d->vtype)));
  }
  apply_put(r);
}

std::optional<Value> MetaStore::get_current(Entity entity, const std::string& entity_id,
                                            const std::string& attr) const {
  if (!descriptor(entity, attr)) {
    throw MetaError(Errc::UnknownAttribute, std::string(entity_name(entity)) + "." + attr);
  }
  const MetaRecord* r = current_record(entity, entity_id, attr);
  if (!r) return std::nullopt;
  return r->value;
}

const MetaRecord* MetaStore::current_record(Entity entity, const std::string& entity_id,
                                            const std::string& attr) const {
  auto it = current_.find(RecKey{entity, entity_id, attr});
  return it == current_.end() ? nullptr : &it->second;
}

std::vector<Row> MetaStore::scan(Entity entity) const {
  std::vector<Row> out;
  auto it = rows_.find(entity);
  if (it == rows_.end()) return out;
  out.reserve(it->second.size());
  for (const auto& [id, attrs] : it->second) {
    Row row{id, {}};
    for (const auto& [name, rec] : attrs) row.attrs.emplace(name, rec->value);
    out.push_back(std::move(row));
  }
  return out;
}

const std::map<std::string, const MetaRecord*>* MetaStore::row(Entity entity,
                                                               const std::string& entity_id) const {
  auto it = rows_.find(entity);
  if (it == rows_.end()) return nullptr;
  auto r = it->second.find(entity_id);
  return r == it->second.end() ? nullptr : &r->second;
}

const AttributeDescriptor* MetaStore::descriptor(Entity entity, const std::string& name) const {
  auto it = descriptors_.find(DescKey{entity, name});
  return it == descriptors_.end() ? nullptr : &it->second;
}

std::vector<AttributeDescriptor> MetaStore::descriptors() const {
  std::vector<AttributeDescriptor> out;
  for (const auto& [_, d] : descriptors_) out.push_back(d);
  return out;
}

std::uint64_t MetaStore::next_version(Entity entity, const std::string& entity_id,
                                      const std::string& attr) const {
  const MetaRecord* r = current_record(entity, entity_id, attr);
  return r ? r->version + 1 : 1;
}

MetaStore::ApplyOutcome MetaStore::apply_define(const AttributeDescriptor& d) {
  if (!valid_attr_name(d.name)) return ApplyOutcome::Rejected;
  DescKey key{d.entity, d.name};
  auto it = descriptors_.find(key);
  if (it != descriptors_.end()) {
    if (it->second == d) return ApplyOutcome::Superseded;
    if (is_builtin(key) || !(to_json(d).dump() < to_json(it->second).dump())) return ApplyOutcome::Rejected;
    it->second = d;
  } else {
    descriptors_.emplace(key, d);
  }
  retype(key);
  return ApplyOutcome::Applied;
}

MetaStore::ApplyOutcome MetaStore::apply_put(const MetaRecord& r) {
  DescKey key{r.entity, r.attr};
  if (!is_builtin(key)) history_[key].push_back(r);
  const AttributeDescriptor* d = descriptor(r.entity, r.attr);
  if (!d) return ApplyOutcome::Deferred;
  auto typed = coerce(d->vtype, value_to_json(r.value));
  if (!typed) return ApplyOutcome::Rejected;
  MetaRecord copy = r;
  copy.value = *typed;
  return merge(copy);
}

void MetaStore::retype(const DescKey& key) {
  auto& by_id = rows_[key.first];
  for (auto it = current_.begin(); it != current_.end();) {
    if (std::get<0>(it->first) == key.first && std::get<2>(it->first) == key.second) {
      auto row = by_id.find(std::get<1>(it->first));
      row->second.erase(key.second);
      if (row->second.empty()) by_id.erase(row);
      it = current_.erase(it);
    } else {
      ++it;
    }
  }
  const auto& d = descriptors_.at(key);
  auto h = history_.find(key);
  if (h == history_.end()) return;
  for (const auto& r : h->second) {
    if (auto typed = coerce(d.vtype, value_to_json(r.value))) {
      MetaRecord copy = r;
      copy.value = *typed;
      merge(copy);
    }
  }
}

MetaStore::ApplyOutcome MetaStore::merge(const MetaRecord& r) {
  RecKey key{r.entity, r.entity_id, r.attr};
  auto it = current_.find(key);
  if (it != current_.end()) {
    // an exact (version, origin) tie only follows a reused sequence; the larger value wins
    bool wins = supersedes(r, it->second) ||
                (!supersedes(it->second, r) && it->second.value < r.value);
    if (!wins) return ApplyOutcome::Superseded;
    it->second = r;
  } else {
    it = current_.emplace(key, r).first;
  }
  rows_[r.entity][r.entity_id][r.attr] = &it->second;
  return ApplyOutcome::Applied;
}

std::size_t MetaStore::pending_count() const {
  std::size_t n = 0;
  for (const auto& [key, v] : history_) {
    if (!descriptors_.contains(key)) n += v.size();
  }
  return n;
}

nlohmann::json to_json(const AttributeDescriptor& d) {
  return {{"name", d.name},
          {"entity", entity_name(d.entity)},
          {"vtype", vtype_name(d.vtype)},
          {"unit", d.unit}};
}

AttributeDescriptor descriptor_from_json(const nlohmann::json& j) {
  AttributeDescriptor d;
  d.name = j.at("name").get<std::string>();
  auto e = parse_entity(j.at("entity").get<std::string>());
  auto t = parse_vtype(j.at("vtype").get<std::string>());
  if (!e || !t) throw std::invalid_argument("bad descriptor entity or vtype");
  d.entity = *e;
  d.vtype = *t;
  d.unit = j.value("unit", "");
  return d;
}

nlohmann::json to_json(const MetaRecord& r) {
  return {{"entity", entity_name(r.entity)}, {"entity_id", r.entity_id},
          {"attr", r.attr},                  {"value", value_to_json(r.value)},
          {"version", r.version},            {"origin", r.origin.str()}};
}

MetaRecord record_from_json(const nlohmann::json& j) {
  MetaRecord r;
  auto e = parse_entity(j.at("entity").get<std::string>());
  if (!e) throw std::invalid_argument("bad entity");
  r.entity = *e;
  r.entity_id = j.at("entity_id").get<std::string>();
  r.attr = j.at("attr").get<std::string>();
  r.value = json_to_value(j.at("value"));
  r.version = j.at("version").get<std::uint64_t>();
  r.origin = SiteId(j.at("origin").get<std::string>());
  return r;
}

nlohmann::json MetaStore::canonical() const {
  auto descs = nlohmann::json::array();
  for (const auto& [_, d] : descriptors_) descs.push_back(to_json(d));
  auto recs = nlohmann::json::array();
  for (const auto& [_, r] : current_) recs.push_back(to_json(r));
  return {{"descriptors", std::move(descs)}, {"records", std::move(recs)}};
}

}  // namespace gridbox::metastore
