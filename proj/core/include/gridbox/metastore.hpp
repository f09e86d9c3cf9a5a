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

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridbox/types.hpp"

// Description-driven metadata: attribute schemas are data, values are last-writer-wins.
namespace gridbox::metastore {

enum class Entity { Patient, Study, Image };
enum class VType { Int, Float, String, Date };

std::string_view entity_name(Entity e);
std::optional<Entity> parse_entity(std::string_view s);
std::string_view vtype_name(VType t);
std::optional<VType> parse_vtype(std::string_view s);

// Dates are held as "YYYY-MM-DD" strings and compare lexically.
using Value = std::variant<std::int64_t, double, std::string>;

nlohmann::json value_to_json(const Value& v);
bool is_iso_date(std::string_view s);

struct AttributeDescriptor {
  std::string name;
  Entity entity = Entity::Image;
  VType vtype = VType::String;
  std::string unit;

  bool operator==(const AttributeDescriptor&) const = default;
};

struct MetaRecord {
  Entity entity = Entity::Image;
  std::string entity_id;
  std::string attr;
  Value value;
  std::uint64_t version = 0;
  SiteId origin;

  bool operator==(const MetaRecord&) const = default;
};

// LWW order: larger version wins, ties broken by the larger SiteId.
inline bool supersedes(const MetaRecord& a, const MetaRecord& b) {
  return std::tie(a.version, a.origin) > std::tie(b.version, b.origin);
}

enum class Errc { ConflictingDefinition, UnknownAttribute, TypeMismatch, BadName };

class MetaError : public std::runtime_error {
 public:
  MetaError(Errc code, const std::string& detail);
  Errc code() const { return code_; }

 private:
  Errc code_;
};

// Checks a JSON value against a vtype; int literals are accepted for float attributes.
std::optional<Value> coerce(VType t, const nlohmann::json& raw);

const std::vector<AttributeDescriptor>& builtin_descriptors();

struct Row {
  std::string entity_id;
  std::map<std::string, Value> attrs;
};

class MetaStore {
 public:
  MetaStore();
  MetaStore(const MetaStore&) = delete;
  MetaStore& operator=(const MetaStore&) = delete;
  MetaStore(MetaStore&&) = default;
  MetaStore& operator=(MetaStore&&) = default;

  void define_attribute(const AttributeDescriptor& d);
  void put_meta(const MetaRecord& r);
  std::optional<Value> get_current(Entity entity, const std::string& entity_id,
                                   const std::string& attr) const;
  const MetaRecord* current_record(Entity entity, const std::string& entity_id,
                                   const std::string& attr) const;

  std::vector<Row> scan(Entity entity) const;  // ordered by entity_id
  const std::map<std::string, const MetaRecord*>* row(Entity entity,
                                                       const std::string& entity_id) const;

  const AttributeDescriptor* descriptor(Entity entity, const std::string& name) const;
  std::vector<AttributeDescriptor> descriptors() const;

  std::uint64_t next_version(Entity entity, const std::string& entity_id,
                             const std::string& attr) const;

  // Replication path: records for attributes not yet defined are parked, type mismatches
  // are dropped. Never throws. Two sites defining the same attribute differently settle on
  // the definition with the smaller serialization; values are re-typed against it.
  enum class ApplyOutcome { Applied, Superseded, Deferred, Rejected };
  ApplyOutcome apply_define(const AttributeDescriptor& d);
  ApplyOutcome apply_put(const MetaRecord& r);

  std::size_t pending_count() const;
  nlohmann::json canonical() const;

 private:
  using DescKey = std::pair<Entity, std::string>;
  using RecKey = std::tuple<Entity, std::string, std::string>;

  ApplyOutcome merge(const MetaRecord& r);
  void retype(const DescKey& key);

  std::map<DescKey, AttributeDescriptor> descriptors_;
  std::map<RecKey, MetaRecord> current_;
  // entity -> entity_id -> attr -> current record (points into current_)
  std::map<Entity, std::map<std::string, std::map<std::string, const MetaRecord*>>> rows_;
  // every record for a user-defined attribute, defined yet or not
  std::map<DescKey, std::vector<MetaRecord>> history_;
};

nlohmann::json to_json(const AttributeDescriptor& d);
AttributeDescriptor descriptor_from_json(const nlohmann::json& j);
nlohmann::json to_json(const MetaRecord& r);
// JSON int/float/string map onto the Value variant; apply_put re-types against the descriptor.
MetaRecord record_from_json(const nlohmann::json& j);

}  // namespace gridbox::metastore
