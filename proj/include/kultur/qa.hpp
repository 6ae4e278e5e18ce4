#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "kultur/images.hpp"
#include "kultur/kg.hpp"
#include "kultur/select.hpp"
#include "kultur/text.hpp"

namespace kultur {

struct QaError : Error {
  enum class Code { missing_template, missing_label, render_failure, invalid_template };
  QaError(Code c, const std::string& what) : Error(what), code(c) {}
  Code code;
};

// ---------------------------------------------------------------------------
// Templates

struct QaTemplate {
  std::optional<PropertyId> property;  // nullopt: entity-level (identity) template
  LanguageCode language;
  std::string question_template;
  std::string answer_template;

  bool identity() const { return !property.has_value(); }

  void validate() const {
    auto fail = [&](const std::string& why) {
      throw QaError(QaError::Code::invalid_template,
                    "template (" + (property ? property->str() : std::string("identity")) + ", " + language + "): " + why);
    };
    if (!valid_language_code(language)) fail("invalid language code");
    if (question_template.empty() || answer_template.empty()) fail("empty template");
    try {
      (void)substitute(question_template, {});
    } catch (const MissingField& m) {
      fail("question template must not contain placeholders, found {" + m.field + "}");
    }
    if (!contains_placeholder(answer_template, "entity_name")) fail("answer template lacks {entity_name}");
    if (identity()) {
      if (!contains_placeholder(answer_template, "entity_description")) fail("answer template lacks {entity_description}");
    } else if (!contains_placeholder(answer_template, "property_value")) {
      fail("answer template lacks {property_value}");
    }
  }
};

class TemplateStore {
 public:
  void add(QaTemplate t) {
    t.validate();
    templates_[key(t.property, t.language)] = std::move(t);
  }

  const QaTemplate* find(const std::optional<PropertyId>& property, const LanguageCode& lang) const {
    auto it = templates_.find(key(property, lang));
    return it == templates_.end() ? nullptr : &it->second;
  }

  std::size_t size() const { return templates_.size(); }

  // One record per line: {"scope": "identity" | "P19", "language": "en",
  //                       "question_template": ..., "answer_template": ...}
  static TemplateStore load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open template file " + path.string());
    TemplateStore store;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (trim(line).empty()) continue;
      auto where = path.string() + ":" + std::to_string(n) + ": ";
      auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded()) throw Error(where + "malformed JSON");
      try {
        QaTemplate t;
        std::string scope = j.at("scope").get<std::string>();
        if (scope != "identity") t.property = PropertyId(scope);
        t.language = j.at("language").get<std::string>();
        t.question_template = j.at("question_template").get<std::string>();
        t.answer_template = j.at("answer_template").get<std::string>();
        store.add(std::move(t));
      } catch (const nlohmann::json::exception& e) {
        throw Error(where + e.what());
      } catch (const Error& e) {
        throw Error(where + e.what());
      }
    }
    return store;
  }

 private:
  static std::pair<std::string, std::string> key(const std::optional<PropertyId>& p, const LanguageCode& lang) {
    return {p ? p->str() : std::string("identity"), lang};
  }
  std::map<std::pair<std::string, std::string>, QaTemplate> templates_;
};

// ---------------------------------------------------------------------------
// Labels of entities referenced by claim values

class LabelIndex {
 public:
  void add(const EntityId& id, std::map<LanguageCode, std::string> labels) {
    if (!labels.empty()) labels_[id] = std::move(labels);
  }
  void add(const Entity& e) { add(e.id, e.labels); }

  const std::map<LanguageCode, std::string>* find(const EntityId& id) const {
    auto it = labels_.find(id);
    return it == labels_.end() ? nullptr : &it->second;
  }

  // Label in `lang`, else English, else the label with the smallest
  // language code. `fell_back` reports whether `lang` itself was missing.
  std::optional<std::string> resolve(const EntityId& id, const LanguageCode& lang, bool* fell_back = nullptr) const {
    const auto* labels = find(id);
    if (!labels) return std::nullopt;
    if (fell_back) *fell_back = false;
    if (auto it = labels->find(lang); it != labels->end()) return it->second;
    if (fell_back) *fell_back = true;
    if (auto it = labels->find("en"); it != labels->end()) return it->second;
    return labels->begin()->second;
  }

  std::size_t size() const { return labels_.size(); }
  const std::map<EntityId, std::map<LanguageCode, std::string>>& all() const { return labels_; }

 private:
  std::map<EntityId, std::map<LanguageCode, std::string>> labels_;
};

// ---------------------------------------------------------------------------
// Value rendering

struct RenderNotes {
  std::size_t label_fallbacks = 0;
  std::size_t unit_dropped = 0;
};

namespace detail {

inline std::string render_time(const TimeValue& t) {
  std::string_view s = t.iso;
  bool negative = false;
  if (!s.empty() && (s[0] == '+' || s[0] == '-')) {
    negative = s[0] == '-';
    s.remove_prefix(1);
  }
  auto dash = s.find('-');
  std::string_view year = s.substr(0, dash);
  while (year.size() > 1 && year[0] == '0') year.remove_prefix(1);
  if (year.empty()) throw QaError(QaError::Code::render_failure, "unparseable time value '" + t.iso + "'");
  std::string out(year);
  if (negative) return out + " BCE";
  if (t.precision < 10 || dash == std::string_view::npos) return out;
  std::string_view rest = s.substr(dash + 1);
  std::string_view month = rest.substr(0, 2), day = rest.size() >= 5 ? rest.substr(3, 2) : std::string_view{};
  if (month.size() != 2 || month == "00") return out;
  out += "-" + std::string(month);
  if (t.precision < 11 || day.size() != 2 || day == "00") return out;
  return out + "-" + std::string(day);
}

inline std::string render_degrees(double v, char pos, char neg) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.4f\xC2\xB0%c", v < 0 ? -v : v, v < 0 ? neg : pos);
  return buf;
}

}  // namespace detail

// Never returns an empty string; unrenderable values throw render_failure.
inline std::string render_value(const ClaimValue& v, const LanguageCode& lang, const LabelIndex& labels,
                                RenderNotes* notes = nullptr) {
  struct Visitor {
    const LanguageCode& lang;
    const LabelIndex& labels;
    RenderNotes* notes;

    std::string operator()(const EntityId& id) const {
      bool fell_back = false;
      auto label = labels.resolve(id, lang, &fell_back);
      if (!label || label->empty()) throw QaError(QaError::Code::render_failure, "no label for " + id.str());
      if (fell_back && notes) ++notes->label_fallbacks;
      return *label;
    }
    std::string operator()(const Text& t) const {
      if (t.value.empty()) throw QaError(QaError::Code::render_failure, "empty text value");
      return t.value;
    }
    std::string operator()(const Quantity& q) const {
      std::string amount = q.amount;
      if (!amount.empty() && amount[0] == '+') amount.erase(0, 1);
      if (amount.empty()) throw QaError(QaError::Code::render_failure, "empty quantity");
      if (!q.unit) return amount;
      bool fell_back = false;
      auto unit = labels.resolve(*q.unit, lang, &fell_back);
      if (!unit) {
        if (notes) ++notes->unit_dropped;
        return amount;
      }
      if (fell_back && notes) ++notes->label_fallbacks;
      return amount + " " + *unit;
    }
    std::string operator()(const TimeValue& t) const { return detail::render_time(t); }
    std::string operator()(const Coordinate& c) const {
      return detail::render_degrees(c.lat, 'N', 'S') + ", " + detail::render_degrees(c.lon, 'E', 'W');
    }
    std::string operator()(const OtherValue& o) const {
      if (o.raw.empty()) throw QaError(QaError::Code::render_failure, "empty raw value");
      return o.raw;
    }
  };
  return std::visit(Visitor{lang, labels, notes}, v);
}

// ---------------------------------------------------------------------------
// Instantiation

struct TemplatedQa {
  EntityId entity_id;
  EntityId region;
  std::optional<PropertyId> property;  // nullopt: identity QA
  LanguageCode language;
  std::string question;
  std::string answer;

  friend bool operator==(const TemplatedQa&, const TemplatedQa&) = default;
};

inline const std::string& label_in(const SelectedEntity& s, const LanguageCode& lang) {
  auto it = s.entity.labels.find(lang);
  if (it == s.entity.labels.end() || it->second.empty())
    throw QaError(QaError::Code::missing_label, s.entity.id.str() + " has no '" + lang + "' label");
  return it->second;
}

inline TemplatedQa instantiate_property_qa(const SelectedEntity& s, const PropertyId& p, const ClaimValue& v,
                                           const LanguageCode& lang, const TemplateStore& templates,
                                           const LabelIndex& labels, RenderNotes* notes = nullptr) {
  const QaTemplate* t = templates.find(p, lang);
  if (!t) throw QaError(QaError::Code::missing_template, "no template for (" + p.str() + ", " + lang + ")");
  const std::string& name = label_in(s, lang);
  std::string value = render_value(v, lang, labels, notes);
  return {s.entity.id, s.assigned_region, p, lang, substitute(t->question_template, {}),
          substitute(t->answer_template, {{"entity_name", name}, {"property_value", value}})};
}

namespace detail {

// Removes {entity_description} together with the separator in front of it,
// so "{entity_name}, {entity_description}." becomes "{entity_name}.".
inline std::string drop_description(std::string tmpl) {
  static const std::string ph = "{entity_description}";
  auto pos = tmpl.find(ph);
  if (pos == std::string::npos) return tmpl;
  static const std::string_view wide_seps[] = {"\xEF\xBC\x8C", "\xE3\x80\x81", "\xEF\xBC\x9A"};  // ， 、 ：
  std::size_t start = pos;
  for (bool moved = true; moved && start > 0;) {
    moved = false;
    char c = tmpl[start - 1];
    if (c == ' ' || c == ',' || c == ':' || c == ';' || c == '-' || c == '\t') {
      --start;
      moved = true;
      continue;
    }
    for (auto sep : wide_seps)
      if (start >= sep.size() && std::string_view(tmpl).substr(start - sep.size(), sep.size()) == sep) {
        start -= sep.size();
        moved = true;
        break;
      }
  }
  std::size_t end = pos + ph.size();
  if (start == 0) {
    // Description leads the template: drop the separator that follows it.
    for (bool moved = true; moved && end < tmpl.size();) {
      moved = false;
      char c = tmpl[end];
      if (c == ' ' || c == ',' || c == ':' || c == ';' || c == '-' || c == '\t') {
        ++end;
        moved = true;
        continue;
      }
      for (auto sep : wide_seps)
        if (std::string_view(tmpl).substr(end, sep.size()) == sep) {
          end += sep.size();
          moved = true;
          break;
        }
    }
  }
  tmpl.erase(start, end - start);
  return tmpl;
}

}  // namespace detail

// Answer carries name and description; without a description in `lang`
// the answer is the name-only form of the same template.
inline TemplatedQa instantiate_entity_qa(const SelectedEntity& s, const LanguageCode& lang, const TemplateStore& templates) {
  const QaTemplate* t = templates.find(std::nullopt, lang);
  if (!t) throw QaError(QaError::Code::missing_template, "no identity template for " + lang);
  const std::string& name = label_in(s, lang);
  auto desc = s.entity.descriptions.find(lang);
  std::string answer;
  if (desc == s.entity.descriptions.end() || trim(desc->second).empty())
    answer = substitute(detail::drop_description(t->answer_template), {{"entity_name", name}});
  else
    answer = substitute(t->answer_template, {{"entity_name", name}, {"entity_description", desc->second}});
  return {s.entity.id, s.assigned_region, std::nullopt, lang, substitute(t->question_template, {}), answer};
}

struct GenerationCounts {
  std::size_t emitted = 0;
  std::size_t missing_template = 0;
  std::size_t missing_label = 0;
  std::size_t render_failure = 0;
  RenderNotes notes;
};

// All QA pairs of one entity: per labelled language, one identity pair and
// one property pair per (eligible property, value). Failing combinations are
// counted and skipped.
inline std::vector<TemplatedQa> generate_entity_qas(const SelectedEntity& s, const TemplateStore& templates,
                                                    const LabelIndex& labels, GenerationCounts* counts = nullptr) {
  GenerationCounts local;
  GenerationCounts& c = counts ? *counts : local;
  std::vector<TemplatedQa> out;
  auto attempt = [&](auto&& make) {
    try {
      out.push_back(make());
      ++c.emitted;
    } catch (const QaError& e) {
      switch (e.code) {
        case QaError::Code::missing_template: ++c.missing_template; break;
        case QaError::Code::missing_label: ++c.missing_label; break;
        default: ++c.render_failure; break;
      }
    }
  };
  for (const auto& lang : s.covered_languages) {
    if (!s.entity.labels.count(lang)) continue;
    attempt([&] { return instantiate_entity_qa(s, lang, templates); });
    for (const auto& p : s.eligible_properties) {
      auto it = s.entity.claims.find(p);
      if (it == s.entity.claims.end()) continue;
      for (const auto& v : it->second)
        attempt([&] { return instantiate_property_qa(s, p, v, lang, templates, labels, &c.notes); });
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Image pairing

enum class Stage { templated, refined, filtered };

inline const char* to_string(Stage s) {
  switch (s) {
    case Stage::templated: return "templated";
    case Stage::refined: return "refined";
    case Stage::filtered: return "filtered";
  }
  return "?";
}

inline Stage stage_from_string(std::string_view s) {
  if (s == "templated") return Stage::templated;
  if (s == "refined") return Stage::refined;
  if (s == "filtered") return Stage::filtered;
  throw Error("unknown stage '" + std::string(s) + "'");
}

struct VqaTriplet {
  ImageRef image;
  TemplatedQa qa;
  Stage stage = Stage::templated;

  // Stages only move forward.
  void advance(Stage next) {
    if (static_cast<int>(next) <= static_cast<int>(stage))
      throw Error(std::string("stage cannot move from ") + to_string(stage) + " to " + to_string(next));
    stage = next;
  }
};

// Cross product of each entity's images with its QA pairs, QA-major.
inline std::vector<VqaTriplet> pair_images_with_qa(const ImageManifest& manifest, std::span<const TemplatedQa> qas) {
  std::vector<VqaTriplet> out;
  for (const auto& qa : qas) {
    auto it = manifest.entries.find(qa.entity_id);
    if (it == manifest.entries.end()) continue;
    for (const auto& img : it->second) out.push_back({img, qa, Stage::templated});
  }
  return out;
}

}  // namespace kultur
