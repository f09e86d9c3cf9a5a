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
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridbox/metastore.hpp"
#include "gridbox/types.hpp"

// The clinical query language:
//
//   query := SELECT field (',' field)* WHERE pred (ORDER BY field)? (LIMIT uint)?
//   pred  := pred OR pred | pred AND pred | NOT pred | '(' pred ')' | field cmp literal
//   field := ('patient' | 'study' | 'image') '.' attr
//   cmp   := = | != | < | <= | > | >= | CONTAINS
//
// Keywords are case-insensitive, attribute names are not. NOT binds tighter than AND,
// which binds tighter than OR.
namespace gridbox::query {

using metastore::Entity;
using metastore::Value;
using metastore::VType;

struct Field {
  Entity entity = Entity::Image;
  std::string attr;

  std::string str() const;
  auto operator<=>(const Field&) const = default;
};

enum class CmpOp { Eq, Ne, Lt, Le, Gt, Ge, Contains };
std::string_view op_text(CmpOp op);

struct Literal {
  // Text covers both quoted strings and dates until validation resolves the field type.
  enum class Kind { Int, Float, Text };
  Kind kind = Kind::Int;
  Value value;
  std::optional<VType> typed;  // set by validate()

  bool operator==(const Literal&) const = default;
};

struct Pred {
  enum class Kind { And, Or, Not, Cmp };
  Kind kind = Kind::Cmp;
  std::vector<Pred> args;  // two for And/Or, one for Not
  Field field;
  CmpOp op = CmpOp::Eq;
  Literal literal;

  static Pred cmp(Field f, CmpOp op, Literal lit);
  static Pred conj(Pred a, Pred b);
  static Pred disj(Pred a, Pred b);
  static Pred negate(Pred a);

  bool operator==(const Pred&) const = default;
};

struct Query {
  std::vector<Field> projections;
  Pred predicate;
  std::optional<Field> order_by;
  std::optional<std::uint64_t> limit;

  bool operator==(const Query&) const = default;
};

enum class Errc { SyntaxError, UnknownField, TypeError, BadDocument };

class QueryError : public std::runtime_error {
 public:
  QueryError(Errc code, std::string message, int line = 0, int col = 0, std::string expected = {});

  Errc code() const { return code_; }
  int line() const { return line_; }
  int col() const { return col_; }
  const std::string& expected() const { return expected_; }

 private:
  Errc code_;
  int line_;
  int col_;
  std::string expected_;
};

Query parse(std::string_view text);

// Canonical text: fully parenthesized boolean structure, upper-case keywords.
std::string to_text(const Query& q);

// The sub-query wire form: {"proj", "pred", "order_by", "limit"}.
nlohmann::json to_json(const Query& q);
Query from_json(const nlohmann::json& doc);

// Resolves every field against the store's descriptors and coerces literals.
Query validate(const Query& q, const metastore::MetaStore& store);

// The lowest entity in image -> study -> patient referenced anywhere in the query.
Entity primary_entity(const Query& q);

struct ResultRow {
  // Primary entity and the ancestors reachable through image.study_id / study.patient_id.
  std::map<Entity, std::string> ids;
  std::vector<std::optional<Value>> values;  // one per projection
  std::optional<Value> order_value;          // ORDER BY field, when the query has one
  SiteId site;

  bool operator==(const ResultRow&) const = default;
};

struct LocalResult {
  std::vector<ResultRow> rows;
  bool truncated = false;
};

// Decides whether a primary entity belongs to this site's data partition.
using PartitionFilter = std::function<bool(Entity, const std::string&)>;

LocalResult evaluate_local(const Query& typed, const metastore::MetaStore& store,
                           const SiteId& site, const PartitionFilter& holds = {});

// Shared by local and federated ordering: order_by ascending (missing values last),
// then by the primary entity id chain.
bool row_before(const ResultRow& a, const ResultRow& b);

nlohmann::json to_json(const ResultRow& row, const Query& q);
ResultRow row_from_json(const nlohmann::json& doc, const Query& q);

}  // namespace gridbox::query
