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

#include "gridbox/querylang.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>

namespace gridbox::query {

namespace {

enum class Tok { Word, Int, Float, String, Dot, Comma, LParen, RParen, Op, End };

struct Token {
  Tok kind = Tok::End;
  std::string text;
  int line = 1;
  int col = 1;
};

bool word_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::toupper(static_cast<unsigned char>(x)) ==
                  std::toupper(static_cast<unsigned char>(y));
         });
}

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    for (;;) {
      skip_space();
      Token t;
      t.line = line_;
      t.col = col_;
      if (pos_ >= src_.size()) {
        t.kind = Tok::End;
        out.push_back(t);
        return out;
      }
      char c = src_[pos_];
      if (word_start(c)) {
        std::size_t start = pos_;
        while (pos_ < src_.size() && word_char(src_[pos_])) advance();
        t.kind = Tok::Word;
        t.text = std::string(src_.substr(start, pos_ - start));
      } else if (std::isdigit(static_cast<unsigned char>(c)) ||
                 (c == '-' && pos_ + 1 < src_.size() &&
                  std::isdigit(static_cast<unsigned char>(src_[pos_ + 1])))) {
        lex_number(t);
      } else if (c == '\'') {
        lex_string(t);
      } else if (c == '.') {
        advance();
        t.kind = Tok::Dot;
        t.text = ".";
      } else if (c == ',') {
        advance();
        t.kind = Tok::Comma;
        t.text = ",";
      } else if (c == '(') {
        advance();
        t.kind = Tok::LParen;
        t.text = "(";
      } else if (c == ')') {
        advance();
        t.kind = Tok::RParen;
        t.text = ")";
      } else if (c == '=' || c == '<' || c == '>' || c == '!') {
        std::string op(1, c);
        advance();
        if (pos_ < src_.size() && src_[pos_] == '=' && c != '=') {
          op.push_back('=');
          advance();
        }
        if (op == "!") throw QueryError(Errc::SyntaxError, "stray '!'", t.line, t.col, "!=");
        t.kind = Tok::Op;
        t.text = op;
      } else {
        throw QueryError(Errc::SyntaxError, std::string("unexpected character '") + c + "'",
                         t.line, t.col, "token");
      }
      out.push_back(std::move(t));
    }
  }

 private:
  void advance() {
    if (src_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  void skip_space() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) advance();
  }

  void lex_number(Token& t) {
    std::size_t start = pos_;
    bool is_float = false;
    if (src_[pos_] == '-') advance();
    auto digits = [&] {
      std::size_t n = 0;
      while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
        advance();
        ++n;
      }
      return n;
    };
    digits();
    if (pos_ < src_.size() && src_[pos_] == '.') {
      is_float = true;
      advance();
      if (digits() == 0) throw QueryError(Errc::SyntaxError, "malformed number", line_, col_, "digit");
    }
    if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
      is_float = true;
      advance();
      if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) advance();
      if (digits() == 0) throw QueryError(Errc::SyntaxError, "malformed exponent", line_, col_, "digit");
    }
    if (pos_ < src_.size() && word_char(src_[pos_])) {
      throw QueryError(Errc::SyntaxError, "malformed number", line_, col_, "delimiter");
    }
    t.kind = is_float ? Tok::Float : Tok::Int;
    t.text = std::string(src_.substr(start, pos_ - start));
  }

  void lex_string(Token& t) {
    advance();  // opening quote
    std::string value;
    for (;;) {
      if (pos_ >= src_.size()) {
        throw QueryError(Errc::SyntaxError, "unterminated string", t.line, t.col, "'");
      }
      char c = src_[pos_];
      advance();
      if (c == '\'') {
        if (pos_ < src_.size() && src_[pos_] == '\'') {
          value.push_back('\'');
          advance();
          continue;
        }
        break;
      }
      value.push_back(c);
    }
    t.kind = Tok::String;
    t.text = std::move(value);
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;
};

class Parser {
 public:
  explicit Parser(std::vector<Token> toks) : toks_(std::move(toks)) {}

  Query query() {
    expect_keyword("SELECT");
    Query q;
    q.projections.push_back(field());
    while (peek().kind == Tok::Comma) {
      ++pos_;
      q.projections.push_back(field());
    }
    expect_keyword("WHERE");
    q.predicate = disjunction();
    if (is_keyword("ORDER")) {
      ++pos_;
      expect_keyword("BY");
      q.order_by = field();
    }
    if (is_keyword("LIMIT")) {
      ++pos_;
      const Token& t = peek();
      if (t.kind != Tok::Int || t.text.front() == '-') fail("unsigned integer");
      std::uint64_t n = 0;
      auto res = std::from_chars(t.text.data(), t.text.data() + t.text.size(), n);
      if (res.ec != std::errc{}) fail("unsigned integer");
      q.limit = n;
      ++pos_;
    }
    if (peek().kind != Tok::End) fail("end of query");
    return q;
  }

 private:
  const Token& peek() const { return toks_[pos_]; }

  bool is_keyword(std::string_view kw) const {
    return peek().kind == Tok::Word && iequals(peek().text, kw);
  }

  [[noreturn]] void fail(const std::string& expected) const {
    const Token& t = peek();
    std::string found = t.kind == Tok::End ? "end of input" : "'" + t.text + "'";
    throw QueryError(Errc::SyntaxError, "expected " + expected + " but found " + found, t.line,
                     t.col, expected);
  }

  void expect_keyword(std::string_view kw) {
    if (!is_keyword(kw)) fail(std::string(kw));
    ++pos_;
  }

  Field field() {
    const Token& t = peek();
    if (t.kind != Tok::Word) fail("field");
    auto entity = metastore::parse_entity(t.text);
    if (!entity) fail("field");
    ++pos_;
    if (peek().kind != Tok::Dot) fail("'.'");
    ++pos_;
    if (peek().kind != Tok::Word) fail("attribute name");
    Field f{*entity, peek().text};
    ++pos_;
    return f;
  }

  Pred disjunction() {
    Pred left = conjunction();
    while (is_keyword("OR")) {
      ++pos_;
      left = Pred::disj(std::move(left), conjunction());
    }
    return left;
  }

  Pred conjunction() {
    Pred left = unary();
    while (is_keyword("AND")) {
      ++pos_;
      left = Pred::conj(std::move(left), unary());
    }
    return left;
  }

  Pred unary() {
    if (is_keyword("NOT")) {
      ++pos_;
      return Pred::negate(unary());
    }
    if (peek().kind == Tok::LParen) {
      ++pos_;
      Pred inner = disjunction();
      if (peek().kind != Tok::RParen) fail("')'");
      ++pos_;
      return inner;
    }
    Field f = field();
    CmpOp op = comparison();
    return Pred::cmp(std::move(f), op, literal());
  }

  CmpOp comparison() {
    const Token& t = peek();
    if (t.kind == Tok::Word && iequals(t.text, "CONTAINS")) {
      ++pos_;
      return CmpOp::Contains;
    }
    if (t.kind != Tok::Op) fail("comparison operator");
    CmpOp op;
    if (t.text == "=") op = CmpOp::Eq;
    else if (t.text == "!=") op = CmpOp::Ne;
    else if (t.text == "<") op = CmpOp::Lt;
    else if (t.text == "<=") op = CmpOp::Le;
    else if (t.text == ">") op = CmpOp::Gt;
    else op = CmpOp::Ge;
    ++pos_;
    return op;
  }

  Literal literal() {
    const Token& t = peek();
    Literal lit;
    switch (t.kind) {
      case Tok::Int: {
        std::int64_t v = 0;
        auto res = std::from_chars(t.text.data(), t.text.data() + t.text.size(), v);
        if (res.ec != std::errc{}) fail("integer in range");
        lit.kind = Literal::Kind::Int;
        lit.value = v;
        break;
      }
      case Tok::Float: {
        double v = 0;
        auto res = std::from_chars(t.text.data(), t.text.data() + t.text.size(), v);
        if (res.ec != std::errc{}) fail("finite number");
        lit.kind = Literal::Kind::Float;
        lit.value = v;
        break;
      }
      case Tok::String:
        lit.kind = Literal::Kind::Text;
        lit.value = t.text;
        break;
      default:
        fail("literal");
    }
    ++pos_;
    return lit;
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
};

std::string float_text(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, static_cast<std::size_t>(res.ptr - buf));
  if (s.find_first_of(".e") == std::string::npos) s += ".0";
  return s;
}

std::string literal_text(const Literal& lit) {
  switch (lit.kind) {
    case Literal::Kind::Int:
      return std::to_string(std::get<std::int64_t>(lit.value));
    case Literal::Kind::Float:
      return float_text(std::get<double>(lit.value));
    case Literal::Kind::Text: {
      std::string out = "'";
      for (char c : std::get<std::string>(lit.value)) {
        if (c == '\'') out.push_back('\'');
        out.push_back(c);
      }
      out.push_back('\'');
      return out;
    }
  }
  return {};
}

std::string pred_text(const Pred& p) {
  switch (p.kind) {
    case Pred::Kind::And:
      return "(" + pred_text(p.args[0]) + " AND " + pred_text(p.args[1]) + ")";
    case Pred::Kind::Or:
      return "(" + pred_text(p.args[0]) + " OR " + pred_text(p.args[1]) + ")";
    case Pred::Kind::Not:
      return "NOT " + pred_text(p.args[0]);
    case Pred::Kind::Cmp:
      return p.field.str() + " " + std::string(op_text(p.op)) + " " + literal_text(p.literal);
  }
  return {};
}

Field field_from_json(const nlohmann::json& j) {
  if (!j.is_string()) throw QueryError(Errc::BadDocument, "field must be a string");
  auto s = j.get<std::string>();
  auto dot = s.find('.');
  if (dot == std::string::npos) throw QueryError(Errc::BadDocument, "field needs entity.attr: " + s);
  auto entity = metastore::parse_entity(s.substr(0, dot));
  if (!entity || dot + 1 == s.size()) throw QueryError(Errc::BadDocument, "bad field " + s);
  return Field{*entity, s.substr(dot + 1)};
}

std::optional<CmpOp> parse_op(std::string_view s) {
  for (CmpOp op : {CmpOp::Eq, CmpOp::Ne, CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge,
                   CmpOp::Contains}) {
    if (op_text(op) == s) return op;
  }
  return std::nullopt;
}

nlohmann::json pred_to_json(const Pred& p) {
  switch (p.kind) {
    case Pred::Kind::And:
    case Pred::Kind::Or:
      return {{"tag", p.kind == Pred::Kind::And ? "and" : "or"},
              {"args", {pred_to_json(p.args[0]), pred_to_json(p.args[1])}}};
    case Pred::Kind::Not:
      return {{"tag", "not"}, {"args", {pred_to_json(p.args[0])}}};
    case Pred::Kind::Cmp: {
      const char* kind = p.literal.kind == Literal::Kind::Int     ? "int"
                         : p.literal.kind == Literal::Kind::Float ? "float"
                                                                  : "text";
      return {{"tag", "cmp"},
              {"field", p.field.str()},
              {"op", op_text(p.op)},
              {"literal", {{"kind", kind}, {"value", metastore::value_to_json(p.literal.value)}}}};
    }
  }
  return {};
}

Pred pred_from_json(const nlohmann::json& j, int depth) {
  if (depth > 256) throw QueryError(Errc::BadDocument, "predicate nested too deeply");
  if (!j.is_object()) throw QueryError(Errc::BadDocument, "predicate node must be an object");
  auto tag = j.at("tag").get<std::string>();
  if (tag == "and" || tag == "or") {
    const auto& args = j.at("args");
    if (!args.is_array() || args.size() != 2) throw QueryError(Errc::BadDocument, tag + " takes 2 args");
    auto a = pred_from_json(args[0], depth + 1);
    auto b = pred_from_json(args[1], depth + 1);
    return tag == "and" ? Pred::conj(std::move(a), std::move(b)) : Pred::disj(std::move(a), std::move(b));
  }
  if (tag == "not") {
    const auto& args = j.at("args");
    if (!args.is_array() || args.size() != 1) throw QueryError(Errc::BadDocument, "not takes 1 arg");
    return Pred::negate(pred_from_json(args[0], depth + 1));
  }
  if (tag != "cmp") throw QueryError(Errc::BadDocument, "unknown predicate tag " + tag);
  auto op = parse_op(j.at("op").get<std::string>());
  if (!op) throw QueryError(Errc::BadDocument, "unknown operator");
  const auto& lj = j.at("literal");
  auto kind = lj.at("kind").get<std::string>();
  const auto& v = lj.at("value");
  Literal lit;
  if (kind == "int" && v.is_number_integer()) {
    lit.kind = Literal::Kind::Int;
    lit.value = v.get<std::int64_t>();
  } else if (kind == "float" && v.is_number()) {
    lit.kind = Literal::Kind::Float;
    lit.value = v.get<double>();
  } else if (kind == "text" && v.is_string()) {
    lit.kind = Literal::Kind::Text;
    lit.value = v.get<std::string>();
  } else {
    throw QueryError(Errc::BadDocument, "bad literal");
  }
  return Pred::cmp(field_from_json(j.at("field")), *op, std::move(lit));
}

const metastore::AttributeDescriptor& require_field(const Field& f,
                                                    const metastore::MetaStore& store) {
  const auto* d = store.descriptor(f.entity, f.attr);
  if (!d) throw QueryError(Errc::UnknownField, "unknown field " + f.str());
  return *d;
}

void validate_pred(Pred& p, const metastore::MetaStore& store) {
  if (p.kind != Pred::Kind::Cmp) {
    for (auto& a : p.args) validate_pred(a, store);
    return;
  }
  const auto& d = require_field(p.field, store);
  auto type_error = [&] {
    return QueryError(Errc::TypeError, "type error: " + p.field.str() + " (" +
                                           std::string(metastore::vtype_name(d.vtype)) +
                                           ") vs literal " + literal_text(p.literal));
  };
  Literal& lit = p.literal;
  if (p.op == CmpOp::Contains &&
      (d.vtype != VType::String || lit.kind != Literal::Kind::Text)) {
    throw type_error();
  }
  switch (d.vtype) {
    case VType::Int:
      if (lit.kind != Literal::Kind::Int) throw type_error();
      break;
    case VType::Float:
      if (lit.kind == Literal::Kind::Int) {
        lit.kind = Literal::Kind::Float;
        lit.value = static_cast<double>(std::get<std::int64_t>(lit.value));
      } else if (lit.kind != Literal::Kind::Float) {
        throw type_error();
      }
      break;
    case VType::String:
      if (lit.kind != Literal::Kind::Text) throw type_error();
      break;
    case VType::Date:
      if (lit.kind != Literal::Kind::Text ||
          !metastore::is_iso_date(std::get<std::string>(lit.value))) {
        throw type_error();
      }
      break;
  }
  lit.typed = d.vtype;
}

int depth_of(Entity e) {
  switch (e) {
    case Entity::Image: return 0;
    case Entity::Study: return 1;
    case Entity::Patient: return 2;
  }
  return 0;
}

void collect_entities(const Pred& p, int& best) {
  if (p.kind == Pred::Kind::Cmp) {
    best = std::min(best, depth_of(p.field.entity));
    return;
  }
  for (const auto& a : p.args) collect_entities(a, best);
}

}  // namespace

std::string Field::str() const { return std::string(metastore::entity_name(entity)) + "." + attr; }

std::string_view op_text(CmpOp op) {
  switch (op) {
    case CmpOp::Eq: return "=";
    case CmpOp::Ne: return "!=";
    case CmpOp::Lt: return "<";
    case CmpOp::Le: return "<=";
    case CmpOp::Gt: return ">";
    case CmpOp::Ge: return ">=";
    case CmpOp::Contains: return "CONTAINS";
  }
  return "?";
}

Pred Pred::cmp(Field f, CmpOp op, Literal lit) {
  Pred p;
  p.kind = Kind::Cmp;
  p.field = std::move(f);
  p.op = op;
  p.literal = std::move(lit);
  return p;
}

Pred Pred::conj(Pred a, Pred b) {
  Pred p;
  p.kind = Kind::And;
  p.args.push_back(std::move(a));
  p.args.push_back(std::move(b));
  return p;
}

Pred Pred::disj(Pred a, Pred b) {
  Pred p;
  p.kind = Kind::Or;
  p.args.push_back(std::move(a));
  p.args.push_back(std::move(b));
  return p;
}

Pred Pred::negate(Pred a) {
  Pred p;
  p.kind = Kind::Not;
  p.args.push_back(std::move(a));
  return p;
}

QueryError::QueryError(Errc code, std::string message, int line, int col, std::string expected)
    : std::runtime_error(code == Errc::SyntaxError
                             ? "syntax error at " + std::to_string(line) + ":" +
                                   std::to_string(col) + ": " + message
                             : message),
      code_(code),
      line_(line),
      col_(col),
      expected_(std::move(expected)) {}

Query parse(std::string_view text) {
  Lexer lexer(text);
  Parser parser(lexer.run());
  return parser.query();
}

std::string to_text(const Query& q) {
  std::string out = "SELECT ";
  for (std::size_t i = 0; i < q.projections.size(); ++i) {
    if (i) out += ", ";
    out += q.projections[i].str();
  }
  out += " WHERE " + pred_text(q.predicate);
  if (q.order_by) out += " ORDER BY " + q.order_by->str();
  if (q.limit) out += " LIMIT " + std::to_string(*q.limit);
  return out;
}

nlohmann::json to_json(const Query& q) {
  auto proj = nlohmann::json::array();
  for (const auto& f : q.projections) proj.push_back(f.str());
  return {{"proj", std::move(proj)},
          {"pred", pred_to_json(q.predicate)},
          {"order_by", q.order_by ? nlohmann::json(q.order_by->str()) : nlohmann::json(nullptr)},
          {"limit", q.limit ? nlohmann::json(*q.limit) : nlohmann::json(nullptr)}};
}

Query from_json(const nlohmann::json& doc) {
  try {
    Query q;
    const auto& proj = doc.at("proj");
    if (!proj.is_array() || proj.empty()) throw QueryError(Errc::BadDocument, "proj must be a non-empty array");
    for (const auto& f : proj) q.projections.push_back(field_from_json(f));
    q.predicate = pred_from_json(doc.at("pred"), 0);
    if (auto it = doc.find("order_by"); it != doc.end() && !it->is_null()) {
      q.order_by = field_from_json(*it);
    }
    if (auto it = doc.find("limit"); it != doc.end() && !it->is_null()) {
      if (!it->is_number_unsigned()) throw QueryError(Errc::BadDocument, "limit must be unsigned");
      q.limit = it->get<std::uint64_t>();
    }
    return q;
  } catch (const nlohmann::json::exception& e) {
    throw QueryError(Errc::BadDocument, std::string("malformed query document: ") + e.what());
  }
}

Query validate(const Query& q, const metastore::MetaStore& store) {
  Query typed = q;
  for (const auto& f : typed.projections) require_field(f, store);
  if (typed.order_by) require_field(*typed.order_by, store);
  validate_pred(typed.predicate, store);
  return typed;
}

Entity primary_entity(const Query& q) {
  int best = 2;
  for (const auto& f : q.projections) best = std::min(best, depth_of(f.entity));
  if (q.order_by) best = std::min(best, depth_of(q.order_by->entity));
  collect_entities(q.predicate, best);
  return best == 0 ? Entity::Image : best == 1 ? Entity::Study : Entity::Patient;
}

}  // namespace gridbox::query
