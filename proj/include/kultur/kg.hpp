#pragma once

#include <cmath>
#include <cstring>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>
#include <rapidjson/document.h>

#include "kultur/ids.hpp"
#include "kultur/line_reader.hpp"

namespace kultur {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Entity model

struct Text {
  std::string value;
  friend bool operator==(const Text&, const Text&) = default;
};

struct Quantity {
  std::string amount;  // decimal as written in the dump, e.g. "+73.5"
  std::optional<EntityId> unit;
  friend bool operator==(const Quantity&, const Quantity&) = default;
};

struct TimeValue {
  std::string iso;  // e.g. "+1632-00-00T00:00:00Z"
  int precision = 11;
  friend bool operator==(const TimeValue&, const TimeValue&) = default;
};

struct Coordinate {
  double lat = 0;
  double lon = 0;
  friend bool operator==(const Coordinate&, const Coordinate&) = default;
};

struct OtherValue {
  std::string raw;
  friend bool operator==(const OtherValue&, const OtherValue&) = default;
};

using ClaimValue = std::variant<EntityId, Text, Quantity, TimeValue, Coordinate, OtherValue>;

struct Entity {
  EntityId id;
  std::map<LanguageCode, std::string> labels;
  std::map<LanguageCode, std::string> descriptions;
  std::map<LanguageCode, std::vector<std::string>> aliases;
  std::map<PropertyId, std::vector<ClaimValue>> claims;
  std::map<std::string, std::string> sitelinks;

  friend bool operator==(const Entity&, const Entity&) = default;
};

struct ParseDiagnostic {
  std::size_t line = 0;
  std::string reason;
  bool truncated_tail = false;
};

using ParsedEntity = std::variant<Entity, ParseDiagnostic>;

// Restriction of `e.labels` to `langs`.
inline std::map<LanguageCode, std::string> entity_labels_in(const Entity& e, const std::set<LanguageCode>& langs) {
  std::map<LanguageCode, std::string> out;
  for (const auto& lang : langs) {
    auto it = e.labels.find(lang);
    if (it != e.labels.end()) out.emplace(it->first, it->second);
  }
  return out;
}

// Entity-ref values under `p`, in claim order.
inline std::vector<EntityId> claim_entity_refs(const Entity& e, const PropertyId& p) {
  std::vector<EntityId> out;
  auto it = e.claims.find(p);
  if (it == e.claims.end()) return out;
  for (const auto& v : it->second)
    if (const auto* id = std::get_if<EntityId>(&v)) out.push_back(*id);
  return out;
}

inline std::size_t outgoing_entity_refs(const Entity& e) {
  std::size_t n = 0;
  for (const auto& [p, values] : e.claims)
    for (const auto& v : values) n += std::holds_alternative<EntityId>(v) ? 1 : 0;
  return n;
}

// ---------------------------------------------------------------------------
// JSON <-> Entity (Wikidata dump layout)

struct EntityFormatError : Error {
  using Error::Error;
};

namespace detail {

inline const json& require(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw EntityFormatError(std::string("missing '") + key + "'");
  return *it;
}

inline std::string term_value(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_object()) {
    const json& s = require(v, "value");
    if (s.is_string()) return s.get<std::string>();
  }
  throw EntityFormatError("term is not a string or {value} object");
}

inline void check_language_key(const std::string& lang) {
  if (!valid_language_code(lang)) throw EntityFormatError("invalid language code '" + lang + "'");
}

inline std::optional<EntityId> unit_from_uri(const std::string& unit) {
  if (unit.empty() || unit == "1") return std::nullopt;
  auto slash = unit.find_last_of('/');
  std::string tail = slash == std::string::npos ? unit : unit.substr(slash + 1);
  if (!EntityId::valid(tail)) return std::nullopt;
  return EntityId(tail);
}

inline ClaimValue claim_value_from_json(const json& dv) {
  const std::string type = dv.value("type", "");
  const json& v = require(dv, "value");
  if (type == "wikibase-entityid") {
    if (!v.is_object()) throw EntityFormatError("entity-id value is not an object");
    if (v.value("entity-type", "item") != "item") return OtherValue{v.dump()};
    if (auto it = v.find("id"); it != v.end() && it->is_string()) {
      std::string id = it->get<std::string>();
      if (!EntityId::valid(id)) throw EntityFormatError("entity-ref '" + id + "' is not a QID");
      return EntityId(std::move(id));
    }
    if (auto it = v.find("numeric-id"); it != v.end() && it->is_number_integer())
      return EntityId("Q" + std::to_string(it->get<long long>()));
    throw EntityFormatError("entity-id value has no id");
  }
  if (type == "string") {
    if (!v.is_string()) throw EntityFormatError("string value is not a string");
    return Text{v.get<std::string>()};
  }
  if (type == "monolingualtext") return Text{require(v, "text").get<std::string>()};
  if (type == "quantity") {
    Quantity q;
    q.amount = require(v, "amount").get<std::string>();
    if (auto it = v.find("unit"); it != v.end() && it->is_string()) q.unit = unit_from_uri(it->get<std::string>());
    return q;
  }
  if (type == "time") {
    TimeValue t;
    t.iso = require(v, "time").get<std::string>();
    t.precision = v.value("precision", 11);
    return t;
  }
  if (type == "globecoordinate") {
    Coordinate c{require(v, "latitude").get<double>(), require(v, "longitude").get<double>()};
    if (!(c.lat >= -90 && c.lat <= 90) || !(c.lon >= -180 && c.lon <= 180))
      throw EntityFormatError("coordinate out of range");
    return c;
  }
  return OtherValue{v.dump()};
}

}  // namespace detail

// Converts one dump entity object. Deprecated-rank statements and snaks
// without a value are dropped; qualifiers and references are ignored.
inline Entity entity_from_json(const json& j) {
  if (!j.is_object()) throw EntityFormatError("entity is not a JSON object");
  Entity e;
  const json& id = detail::require(j, "id");
  if (!id.is_string() || !EntityId::valid(id.get_ref<const std::string&>()))
    throw EntityFormatError("id is not a QID: " + id.dump());
  e.id = EntityId(id.get<std::string>());

  if (auto it = j.find("labels"); it != j.end() && it->is_object())
    for (const auto& [lang, v] : it->items()) {
      detail::check_language_key(lang);
      e.labels.emplace(lang, detail::term_value(v));
    }
  if (auto it = j.find("descriptions"); it != j.end() && it->is_object())
    for (const auto& [lang, v] : it->items()) {
      detail::check_language_key(lang);
      e.descriptions.emplace(lang, detail::term_value(v));
    }
  if (auto it = j.find("aliases"); it != j.end() && it->is_object())
    for (const auto& [lang, list] : it->items()) {
      detail::check_language_key(lang);
      if (!list.is_array()) throw EntityFormatError("aliases of '" + lang + "' is not a list");
      std::vector<std::string> names;
      for (const auto& a : list) names.push_back(detail::term_value(a));
      if (!names.empty()) e.aliases.emplace(lang, std::move(names));
    }
  if (auto it = j.find("claims"); it != j.end() && it->is_object())
    for (const auto& [pid, statements] : it->items()) {
      if (!PropertyId::valid(pid)) throw EntityFormatError("invalid property id '" + pid + "'");
      if (!statements.is_array()) throw EntityFormatError("claims of " + pid + " is not a list");
      std::vector<ClaimValue> values;
      for (const auto& st : statements) {
        if (st.value("rank", "normal") == "deprecated") continue;
        auto ms = st.find("mainsnak");
        if (ms == st.end() || !ms->is_object()) continue;
        if (ms->value("snaktype", "value") != "value") continue;
        auto dv = ms->find("datavalue");
        if (dv == ms->end() || !dv->is_object()) continue;
        values.push_back(detail::claim_value_from_json(*dv));
      }
      if (!values.empty()) e.claims.emplace(PropertyId(pid), std::move(values));
    }
  if (auto it = j.find("sitelinks"); it != j.end() && it->is_object())
    for (const auto& [site, v] : it->items()) {
      if (site.empty()) throw EntityFormatError("empty sitelink key");
      std::string title = v.is_object() ? detail::require(v, "title").get<std::string>() : v.get<std::string>();
      e.sitelinks.emplace(site, std::move(title));
    }
  return e;
}

// The same conversion over a RapidJSON DOM. Dump ingestion spends most of its
// time here, and RapidJSON parses dump lines about twice as fast as nlohmann.
// entity_from_json stays the reference; tests check that the two agree.
namespace detail::rj {

using Value = rapidjson::Value;

inline std::string_view view(const Value& v) { return {v.GetString(), v.GetStringLength()}; }

[[noreturn]] inline void mismatch(std::string_view what) {
  throw EntityFormatError("unexpected value type: " + std::string(what));
}

// nlohmann keeps the last of duplicated keys, so search from the back.
inline const Value* find(const Value& obj, std::string_view key) {
  if (!obj.IsObject()) return nullptr;
  for (auto m = obj.MemberEnd(); m != obj.MemberBegin();) {
    --m;
    if (view(m->name) == key) return &m->value;
  }
  return nullptr;
}

inline const Value& require(const Value& obj, const char* key) {
  const Value* v = find(obj, key);
  if (!v) throw EntityFormatError(std::string("missing '") + key + "'");
  return *v;
}

inline std::string string_of(const Value& v, std::string_view what) {
  if (!v.IsString()) mismatch(what);
  return std::string(view(v));
}

// Mirrors json::value(key, "fallback").
inline std::string_view string_or(const Value& obj, std::string_view key, std::string_view fallback) {
  if (!obj.IsObject()) mismatch(key);
  const Value* v = find(obj, key);
  if (!v) return fallback;
  if (!v->IsString()) mismatch(key);
  return view(*v);
}

// Unlike int_of, booleans are rejected here, as json::get<double> does.
inline double double_of(const Value& v, std::string_view what) {
  if (!v.IsNumber()) mismatch(what);
  return v.GetDouble();
}

inline int int_of(const Value& v, std::string_view what) {
  if (v.IsBool()) return v.GetBool() ? 1 : 0;
  if (v.IsInt64()) return static_cast<int>(v.GetInt64());
  if (v.IsUint64()) return static_cast<int>(v.GetUint64());
  if (v.IsDouble()) return static_cast<int>(v.GetDouble());
  mismatch(what);
}

inline json to_nlohmann(const Value& v) {
  switch (v.GetType()) {
    case rapidjson::kNullType:
      return nullptr;
    case rapidjson::kFalseType:
      return false;
    case rapidjson::kTrueType:
      return true;
    case rapidjson::kStringType:
      return std::string(view(v));
    case rapidjson::kNumberType:
      if (v.IsUint64()) return v.GetUint64();
      if (v.IsInt64()) return v.GetInt64();
      return v.GetDouble();
    case rapidjson::kArrayType: {
      json a = json::array();
      for (const auto& x : v.GetArray()) a.push_back(to_nlohmann(x));
      return a;
    }
    case rapidjson::kObjectType: {
      json o = json::object();
      for (const auto& m : v.GetObject()) o[std::string(view(m.name))] = to_nlohmann(m.value);
      return o;
    }
  }
  return nullptr;
}

inline std::string term_value(const Value& v) {
  if (v.IsString()) return std::string(view(v));
  if (v.IsObject()) {
    const Value& s = require(v, "value");
    if (s.IsString()) return std::string(view(s));
  }
  throw EntityFormatError("term is not a string or {value} object");
}

inline ClaimValue claim_value(const Value& dv) {
  const std::string_view type = string_or(dv, "type", "");
  const Value& v = require(dv, "value");
  if (type == "wikibase-entityid") {
    if (!v.IsObject()) throw EntityFormatError("entity-id value is not an object");
    if (string_or(v, "entity-type", "item") != "item") return OtherValue{to_nlohmann(v).dump()};
    if (const Value* id = find(v, "id"); id && id->IsString()) {
      std::string s(view(*id));
      if (!EntityId::valid(s)) throw EntityFormatError("entity-ref '" + s + "' is not a QID");
      return EntityId(std::move(s));
    }
    if (const Value* n = find(v, "numeric-id"); n && (n->IsInt64() || n->IsUint64()))
      return EntityId("Q" + std::to_string(n->IsInt64() ? n->GetInt64() : static_cast<long long>(n->GetUint64())));
    throw EntityFormatError("entity-id value has no id");
  }
  if (type == "string") {
    if (!v.IsString()) throw EntityFormatError("string value is not a string");
    return Text{std::string(view(v))};
  }
  if (type == "monolingualtext") return Text{string_of(require(v, "text"), "text")};
  if (type == "quantity") {
    Quantity q;
    q.amount = string_of(require(v, "amount"), "amount");
    if (const Value* unit = find(v, "unit"); unit && unit->IsString()) q.unit = unit_from_uri(std::string(view(*unit)));
    return q;
  }
  if (type == "time") {
    TimeValue t;
    t.iso = string_of(require(v, "time"), "time");
    if (const Value* p = find(v, "precision")) t.precision = int_of(*p, "precision");
    return t;
  }
  if (type == "globecoordinate") {
    Coordinate c;
    c.lat = double_of(require(v, "latitude"), "latitude");
    c.lon = double_of(require(v, "longitude"), "longitude");
    if (!(c.lat >= -90 && c.lat <= 90) || !(c.lon >= -180 && c.lon <= 180))
      throw EntityFormatError("coordinate out of range");
    return c;
  }
  return OtherValue{to_nlohmann(v).dump()};
}

// Members are walked back to front and the first value seen for a key is
// kept, which is the last one in the document.
inline Entity entity(const Value& j) {
  if (!j.IsObject()) throw EntityFormatError("entity is not a JSON object");
  Entity e;
  const Value& id = require(j, "id");
  if (!id.IsString() || !EntityId::valid(std::string(view(id))))
    throw EntityFormatError("id is not a QID: " + to_nlohmann(id).dump());
  e.id = EntityId(std::string(view(id)));

  auto members_backwards = [](const Value* obj, auto&& fn) {
    if (!obj || !obj->IsObject()) return;
    for (auto m = obj->MemberEnd(); m != obj->MemberBegin();) {
      --m;
      fn(std::string(view(m->name)), m->value);
    }
  };
  members_backwards(find(j, "labels"), [&](std::string lang, const Value& v) {
    if (e.labels.count(lang)) return;
    check_language_key(lang);
    e.labels.emplace(std::move(lang), term_value(v));
  });
  members_backwards(find(j, "descriptions"), [&](std::string lang, const Value& v) {
    if (e.descriptions.count(lang)) return;
    check_language_key(lang);
    e.descriptions.emplace(std::move(lang), term_value(v));
  });
  members_backwards(find(j, "aliases"), [&](std::string lang, const Value& list) {
    if (e.aliases.count(lang)) return;
    check_language_key(lang);
    if (!list.IsArray()) throw EntityFormatError("aliases of '" + lang + "' is not a list");
    std::vector<std::string> names;
    for (const auto& a : list.GetArray()) names.push_back(term_value(a));
    e.aliases.emplace(std::move(lang), std::move(names));
  });
  std::erase_if(e.aliases, [](const auto& kv) { return kv.second.empty(); });

  members_backwards(find(j, "claims"), [&](std::string pid, const Value& statements) {
    if (!PropertyId::valid(pid)) throw EntityFormatError("invalid property id '" + pid + "'");
    PropertyId key(pid);
    if (e.claims.count(key)) return;
    if (!statements.IsArray()) throw EntityFormatError("claims of " + pid + " is not a list");
    std::vector<ClaimValue> values;
    for (const auto& st : statements.GetArray()) {
      if (string_or(st, "rank", "normal") == "deprecated") continue;
      const Value* ms = find(st, "mainsnak");
      if (!ms || !ms->IsObject()) continue;
      if (string_or(*ms, "snaktype", "value") != "value") continue;
      const Value* dv = find(*ms, "datavalue");
      if (!dv || !dv->IsObject()) continue;
      values.push_back(claim_value(*dv));
    }
    e.claims.emplace(std::move(key), std::move(values));
  });
  std::erase_if(e.claims, [](const auto& kv) { return kv.second.empty(); });

  members_backwards(find(j, "sitelinks"), [&](std::string site, const Value& v) {
    if (site.empty()) throw EntityFormatError("empty sitelink key");
    if (e.sitelinks.count(site)) return;
    std::string title = v.IsObject() ? string_of(require(v, "title"), "title") : string_of(v, "sitelink");
    e.sitelinks.emplace(std::move(site), std::move(title));
  });
  return e;
}

// RapidJSON 1.1 turns an unpaired low-surrogate escape into bytes instead of
// rejecting it. Lines containing one go through nlohmann.
inline bool has_unpaired_low_surrogate_escape(std::string_view s) {
  auto hex_in = [](char c, const char* set) { return std::strchr(set, c) != nullptr; };
  for (auto pos = s.find("\\u"); pos != std::string_view::npos; pos = s.find("\\u", pos + 2)) {
    if (pos + 3 >= s.size() || !hex_in(s[pos + 2], "dD") || !hex_in(s[pos + 3], "cdefCDEF")) continue;
    bool after_high = pos >= 6 && s.substr(pos - 6, 2) == "\\u" && hex_in(s[pos - 4], "dD") && hex_in(s[pos - 3], "89abAB");
    if (!after_high) return true;
  }
  return false;
}

}  // namespace detail::rj

inline json claim_value_to_json(const ClaimValue& v) {
  struct Visitor {
    json operator()(const EntityId& id) const {
      return {{"type", "wikibase-entityid"},
              {"value", {{"entity-type", "item"}, {"id", id.str()}, {"numeric-id", std::stoll(id.str().substr(1))}}}};
    }
    json operator()(const Text& t) const { return {{"type", "string"}, {"value", t.value}}; }
    json operator()(const Quantity& q) const {
      std::string unit = q.unit ? "http://www.wikidata.org/entity/" + q.unit->str() : "1";
      return {{"type", "quantity"}, {"value", {{"amount", q.amount}, {"unit", unit}}}};
    }
    json operator()(const TimeValue& t) const {
      return {{"type", "time"}, {"value", {{"time", t.iso}, {"precision", t.precision}}}};
    }
    json operator()(const Coordinate& c) const {
      return {{"type", "globecoordinate"}, {"value", {{"latitude", c.lat}, {"longitude", c.lon}}}};
    }
    json operator()(const OtherValue& o) const {
      json raw = json::parse(o.raw, nullptr, false);
      if (raw.is_discarded()) raw = o.raw;
      return {{"type", "other"}, {"value", raw}};
    }
  };
  return std::visit(Visitor{}, v);
}

// Inverse of entity_from_json, emitting the dump layout.
inline json entity_to_json(const Entity& e) {
  json j;
  j["type"] = "item";
  j["id"] = e.id.str();
  json labels = json::object(), descriptions = json::object(), aliases = json::object();
  for (const auto& [lang, v] : e.labels) labels[lang] = {{"language", lang}, {"value", v}};
  for (const auto& [lang, v] : e.descriptions) descriptions[lang] = {{"language", lang}, {"value", v}};
  for (const auto& [lang, list] : e.aliases) {
    json arr = json::array();
    for (const auto& a : list) arr.push_back({{"language", lang}, {"value", a}});
    aliases[lang] = std::move(arr);
  }
  j["labels"] = std::move(labels);
  j["descriptions"] = std::move(descriptions);
  j["aliases"] = std::move(aliases);
  json claims = json::object();
  for (const auto& [pid, values] : e.claims) {
    json arr = json::array();
    for (const auto& v : values)
      arr.push_back({{"mainsnak", {{"snaktype", "value"}, {"property", pid.str()}, {"datavalue", claim_value_to_json(v)}}},
                     {"type", "statement"},
                     {"rank", "normal"}});
    claims[pid.str()] = std::move(arr);
  }
  j["claims"] = std::move(claims);
  json sitelinks = json::object();
  for (const auto& [site, title] : e.sitelinks) sitelinks[site] = {{"site", site}, {"title", title}};
  j["sitelinks"] = std::move(sitelinks);
  return j;
}

// ---------------------------------------------------------------------------
// Streaming dump parser

struct DumpOptions {
  bool tolerate_array_wrapper = true;
  std::size_t max_line_bytes = LineReader::kDefaultMaxLine;
  std::size_t chunk_bytes = LineReader::kDefaultChunk;
};

// Yields entities in stream order. Malformed lines become diagnostics and
// never stop the stream; only I/O failure throws.
class DumpParser {
 public:
  explicit DumpParser(std::istream& in, DumpOptions options = {})
      : options_(options), reader_(in, options.max_line_bytes, options.chunk_bytes) {}

  std::optional<ParsedEntity> next() {
    Line line;
    while (reader_.next(line)) {
      if (line.overflow)
        return ParseDiagnostic{line.number, "line exceeds " + std::to_string(options_.max_line_bytes) + " bytes", false};
      std::string_view body = strip(line.text);
      if (body.empty()) continue;
      if (body == "[" || body == "]") {
        if (options_.tolerate_array_wrapper) continue;
        return ParseDiagnostic{line.number, "array wrapper line while wrapper tolerance is off", false};
      }
      if (body.back() == ',') {
        if (!options_.tolerate_array_wrapper)
          return ParseDiagnostic{line.number, "trailing comma while wrapper tolerance is off", false};
        body.remove_suffix(1);
      }
      return convert(body, line);
    }
    return std::nullopt;
  }

  std::size_t peak_buffer_bytes() const { return reader_.peak_buffer_bytes(); }
  std::size_t bytes_read() const { return reader_.bytes_read(); }

 private:
  static constexpr unsigned kParseFlags =
      rapidjson::kParseValidateEncodingFlag | rapidjson::kParseIterativeFlag | rapidjson::kParseFullPrecisionFlag;

  ParsedEntity convert(std::string_view body, const Line& line) {
    pool_.Clear();
    rapidjson::Document doc(&pool_);
    doc.Parse<kParseFlags>(body.data(), body.size());
    // Anything RapidJSON rejects gets a second opinion, since nlohmann also
    // accepts a byte-order mark and out-of-range floats.
    if (doc.HasParseError() || detail::rj::has_unpaired_low_surrogate_escape(body)) return convert_slow(body, line);
    try {
      return detail::rj::entity(doc);
    } catch (const EntityFormatError& err) {
      return ParseDiagnostic{line.number, err.what(), false};
    } catch (const InvalidId& err) {
      return ParseDiagnostic{line.number, err.what(), false};
    }
  }

  static ParsedEntity convert_slow(std::string_view body, const Line& line) {
    json j = json::parse(body, nullptr, false);
    if (j.is_discarded()) return ParseDiagnostic{line.number, "malformed JSON", !line.terminated};
    try {
      return entity_from_json(j);
    } catch (const EntityFormatError& err) {
      return ParseDiagnostic{line.number, err.what(), false};
    } catch (const InvalidId& err) {
      return ParseDiagnostic{line.number, err.what(), false};
    } catch (const json::exception& err) {
      return ParseDiagnostic{line.number, std::string("unexpected value type: ") + err.what(), false};
    }
  }

  static std::string_view strip(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
  }

  DumpOptions options_;
  LineReader reader_;
  rapidjson::MemoryPoolAllocator<> pool_;
};

// Convenience: parses everything, splitting entities from diagnostics.
inline std::vector<Entity> parse_dump(std::istream& in, std::vector<ParseDiagnostic>* diagnostics = nullptr,
                                      DumpOptions options = {}) {
  DumpParser parser(in, options);
  std::vector<Entity> out;
  while (auto item = parser.next()) {
    if (auto* e = std::get_if<Entity>(&*item))
      out.push_back(std::move(*e));
    else if (diagnostics)
      diagnostics->push_back(std::get<ParseDiagnostic>(*item));
  }
  return out;
}

}  // namespace kultur
