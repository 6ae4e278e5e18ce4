#pragma once

#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "kultur/kg.hpp"
#include "kultur/records.hpp"

namespace kultur {

struct RegionRow {
  std::size_t entities = 0;
  std::size_t images = 0;
  std::size_t templated = 0;
  std::size_t open_ended = 0;
  std::size_t mcq = 0;
  std::size_t open_ended_filtered = 0;
  std::size_t mcq_filtered = 0;

  RegionRow& operator+=(const RegionRow& o) {
    entities += o.entities;
    images += o.images;
    templated += o.templated;
    open_ended += o.open_ended;
    mcq += o.mcq;
    open_ended_filtered += o.open_ended_filtered;
    mcq_filtered += o.mcq_filtered;
    return *this;
  }
  friend bool operator==(const RegionRow&, const RegionRow&) = default;
};

struct LanguageRow {
  std::size_t open_ended = 0;
  std::size_t mcq = 0;
  std::size_t open_ended_filtered = 0;
  std::size_t mcq_filtered = 0;

  LanguageRow& operator+=(const LanguageRow& o) {
    open_ended += o.open_ended;
    mcq += o.mcq;
    open_ended_filtered += o.open_ended_filtered;
    mcq_filtered += o.mcq_filtered;
    return *this;
  }
  friend bool operator==(const LanguageRow&, const LanguageRow&) = default;
};

struct StatsReport {
  std::map<std::string, RegionRow> per_region;
  RegionRow region_total;
  std::map<std::string, LanguageRow> per_language;
  LanguageRow language_total;
  std::map<std::size_t, std::size_t> connectivity;  // outgoing entity refs -> number of entities
  std::optional<std::map<std::size_t, std::size_t>> incoming;  // needs a full dump pass; see incoming_link_histogram
  std::size_t entity_count = 0;
  std::size_t entities_with_sitelinks = 0;
  double wikipedia_presence = 0;
};

inline bool check_additivity(const StatsReport& s) {
  RegionRow r;
  for (const auto& [k, row] : s.per_region) r += row;
  LanguageRow l;
  for (const auto& [k, row] : s.per_language) l += row;
  std::size_t hist = 0;
  for (const auto& [links, n] : s.connectivity) hist += n;
  std::size_t in_hist = s.entity_count;
  if (s.incoming) {
    in_hist = 0;
    for (const auto& [links, n] : *s.incoming) in_hist += n;
  }
  return r == s.region_total && l == s.language_total && hist == s.entity_count && in_hist == s.entity_count;
}

// Histogram of incoming entity-ref claim values for `targets`, gathered by
// streaming the whole dump. Every referencing claim value counts once; an
// entity's references to itself are ignored. Malformed dump lines are skipped.
inline std::map<std::size_t, std::size_t> incoming_link_histogram(std::istream& dump, const std::set<EntityId>& targets) {
  std::map<EntityId, std::size_t> incoming;
  for (const auto& t : targets) incoming[t] = 0;
  DumpParser parser(dump);
  while (auto item = parser.next()) {
    const Entity* e = std::get_if<Entity>(&*item);
    if (!e) continue;
    for (const auto& [pid, values] : e->claims)
      for (const auto& v : values)
        if (const auto* ref = std::get_if<EntityId>(&v); ref && *ref != e->id)
          if (auto it = incoming.find(*ref); it != incoming.end()) ++it->second;
  }
  std::map<std::size_t, std::size_t> hist;
  for (const auto& [id, n] : incoming) ++hist[n];
  return hist;
}

// Records from every stage file of a run. Templated rows count stage
// templated; Open-Ended/MCQ count the LLM stage (refined), *_F the filtered
// stage. MCQ includes true/false items.
inline StatsReport compute_stats(std::span<const DatasetRecord> records, std::span<const Entity> entities) {
  StatsReport s;
  std::map<std::string, std::set<std::string>> region_entities, region_images;
  for (const auto& r : records) {
    const std::string region = r.region.str();
    RegionRow& row = s.per_region[region];
    LanguageRow& lang = s.per_language[r.language];
    region_entities[region].insert(r.entity_id.str());
    if (r.image) region_images[region].insert(r.image->commons_title);
    const bool open = is_open_ended(r.kind);
    switch (r.stage) {
      case Stage::templated:
        ++row.templated;
        break;
      case Stage::refined:
        ++(open ? row.open_ended : row.mcq);
        ++(open ? lang.open_ended : lang.mcq);
        break;
      case Stage::filtered:
        ++(open ? row.open_ended_filtered : row.mcq_filtered);
        ++(open ? lang.open_ended_filtered : lang.mcq_filtered);
        break;
    }
  }
  for (auto& [region, row] : s.per_region) {
    row.entities = region_entities[region].size();
    row.images = region_images[region].size();
    s.region_total += row;
  }
  for (const auto& [lang, row] : s.per_language) s.language_total += row;

  for (const auto& e : entities) {
    ++s.entity_count;
    ++s.connectivity[outgoing_entity_refs(e)];
    if (!e.sitelinks.empty()) ++s.entities_with_sitelinks;
  }
  s.wikipedia_presence = s.entity_count ? static_cast<double>(s.entities_with_sitelinks) / static_cast<double>(s.entity_count) : 0.0;
  if (!check_additivity(s)) throw Error("stats totals do not equal the sum of their rows");
  return s;
}

inline nlohmann::json stats_to_json(const StatsReport& s) {
  auto region_row = [](const RegionRow& r) {
    return nlohmann::json{{"Entities", r.entities},      {"Images", r.images},
                          {"Template QA", r.templated},  {"Open-Ended", r.open_ended},
                          {"MCQ", r.mcq},                {"Open-Ended_F", r.open_ended_filtered},
                          {"MCQ_F", r.mcq_filtered}};
  };
  auto lang_row = [](const LanguageRow& r) {
    return nlohmann::json{{"Open-Ended", r.open_ended}, {"MCQ", r.mcq}, {"Open-Ended_F", r.open_ended_filtered},
                          {"MCQ_F", r.mcq_filtered}};
  };
  nlohmann::json regions = nlohmann::json::object(), langs = nlohmann::json::object(), conn = nlohmann::json::object();
  for (const auto& [k, r] : s.per_region) regions[k] = region_row(r);
  for (const auto& [k, r] : s.per_language) langs[k] = lang_row(r);
  for (const auto& [links, n] : s.connectivity) conn[std::to_string(links)] = n;
  nlohmann::json out{{"per_region", regions},
          {"region_total", region_row(s.region_total)},
          {"per_language", langs},
          {"language_total", lang_row(s.language_total)},
          {"connectivity_outgoing", conn},
          {"entities", s.entity_count},
          {"entities_with_sitelinks", s.entities_with_sitelinks},
          {"wikipedia_presence", s.wikipedia_presence}};
  if (s.incoming) {
    nlohmann::json in = nlohmann::json::object();
    for (const auto& [links, n] : *s.incoming) in[std::to_string(links)] = n;
    out["connectivity_incoming"] = std::move(in);
  }
  return out;
}

// Plain-text tables. `region_names` maps region QIDs to display names.
inline std::string stats_to_table(const StatsReport& s, const std::map<std::string, std::string>& region_names = {}) {
  std::ostringstream out;
  char buf[256];
  auto region_line = [&](const std::string& name, const RegionRow& r) {
    std::snprintf(buf, sizeof buf, "%-24s %10zu %10zu %12zu %12zu %10zu %14zu %10zu\n", name.c_str(), r.entities, r.images,
                  r.templated, r.open_ended, r.mcq, r.open_ended_filtered, r.mcq_filtered);
    out << buf;
  };
  std::snprintf(buf, sizeof buf, "%-24s %10s %10s %12s %12s %10s %14s %10s\n", "Region", "Entities", "Images", "Template QA",
                "Open-Ended", "MCQ", "Open-Ended_F", "MCQ_F");
  out << buf;
  for (const auto& [k, r] : s.per_region) {
    auto it = region_names.find(k);
    region_line(it == region_names.end() ? k : it->second + " (" + k + ")", r);
  }
  region_line("Total", s.region_total);
  out << '\n';
  std::snprintf(buf, sizeof buf, "%-24s %12s %10s %14s %10s\n", "Language", "Open-Ended", "MCQ", "Open-Ended_F", "MCQ_F");
  out << buf;
  auto lang_line = [&](const std::string& name, const LanguageRow& r) {
    std::snprintf(buf, sizeof buf, "%-24s %12zu %10zu %14zu %10zu\n", name.c_str(), r.open_ended, r.mcq, r.open_ended_filtered,
                  r.mcq_filtered);
    out << buf;
  };
  for (const auto& [k, r] : s.per_language) lang_line(k, r);
  lang_line("Total", s.language_total);
  out << '\n';
  std::snprintf(buf, sizeof buf, "Entities: %zu, with sitelinks: %zu (%.4f)\n", s.entity_count, s.entities_with_sitelinks,
                s.wikipedia_presence);
  out << buf << "Outgoing entity links -> entities:";
  for (const auto& [links, n] : s.connectivity) out << ' ' << links << ':' << n;
  out << '\n';
  if (s.incoming) {
    out << "Incoming entity links -> entities:";
    for (const auto& [links, n] : *s.incoming) out << ' ' << links << ':' << n;
    out << '\n';
  }
  return out.str();
}

}  // namespace kultur
