#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "kultur/kg.hpp"

namespace kultur {

struct ConfigError : Error {
  using Error::Error;
};

struct RegionSpec {
  std::string display_name;
  EntityId qid;
};

struct CapMode {
  enum class Kind { country_median, fixed, none };
  Kind kind = Kind::country_median;
  int fixed_cap = 0;

  static CapMode median() { return {}; }
  static CapMode fixed(int cap) { return {Kind::fixed, cap}; }
  static CapMode none() { return {Kind::none, 0}; }
};

struct SelectionConfig {
  std::vector<RegionSpec> regions;
  std::set<LanguageCode> languages;
  std::vector<PropertyId> properties;  // priority order, also used for capping
  CapMode cap;

  void validate() const {
    if (regions.empty()) throw ConfigError("selection: no regions");
    if (languages.empty()) throw ConfigError("selection: no languages");
    if (properties.empty()) throw ConfigError("selection: no properties");
    for (const auto& r : regions)
      if (r.display_name.empty()) throw ConfigError("selection: region " + r.qid.str() + " has no display name");
    for (const auto& l : languages)
      if (!valid_language_code(l)) throw ConfigError("selection: invalid language code '" + l + "'");
    if (cap.kind == CapMode::Kind::fixed && cap.fixed_cap < 1) throw ConfigError("selection: fixed cap must be >= 1");
  }

  const RegionSpec* region(const EntityId& qid) const {
    for (const auto& r : regions)
      if (r.qid == qid) return &r;
    return nullptr;
  }
};

// {"regions": [{"qid": "Q668", "name": "India"}, ...], "languages": [...],
//  "properties": ["P17", ...], "cap": "country-median" | "none" | 5}
inline SelectionConfig selection_config_from_json(const nlohmann::json& j) {
  SelectionConfig cfg;
  try {
    for (const auto& r : j.at("regions")) cfg.regions.push_back({r.at("name").get<std::string>(), EntityId(r.at("qid").get<std::string>())});
    for (const auto& l : j.at("languages")) cfg.languages.insert(l.get<std::string>());
    for (const auto& p : j.at("properties")) cfg.properties.emplace_back(p.get<std::string>());
    if (auto it = j.find("cap"); it != j.end()) {
      if (it->is_number_integer())
        cfg.cap = CapMode::fixed(it->get<int>());
      else if (*it == "country-median")
        cfg.cap = CapMode::median();
      else if (*it == "none")
        cfg.cap = CapMode::none();
      else
        throw ConfigError("selection: unknown cap mode " + it->dump());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("selection config: ") + e.what());
  } catch (const InvalidId& e) {
    throw ConfigError(std::string("selection config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

struct SelectedEntity {
  Entity entity;
  std::vector<std::pair<PropertyId, EntityId>> region_matches;
  std::set<LanguageCode> covered_languages;
  std::vector<PropertyId> eligible_properties;  // config order
  EntityId assigned_region;                     // first matched region in config order
};

// Membership test for the culturally selected subset: some configured
// property points directly at a configured region, and the entity has a label
// or description in a configured language.
class EntitySelector {
 public:
  explicit EntitySelector(SelectionConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    for (std::size_t i = 0; i < cfg_.regions.size(); ++i) region_rank_.emplace(cfg_.regions[i].qid, i);
  }

  const SelectionConfig& config() const { return cfg_; }

  std::optional<SelectedEntity> operator()(const Entity& e) const {
    SelectedEntity s;
    std::size_t best_rank = cfg_.regions.size();
    for (const auto& p : cfg_.properties) {
      auto it = e.claims.find(p);
      if (it == e.claims.end()) continue;
      s.eligible_properties.push_back(p);
      for (const auto& v : it->second) {
        const auto* ref = std::get_if<EntityId>(&v);
        if (!ref) continue;
        auto r = region_rank_.find(*ref);
        if (r == region_rank_.end()) continue;
        s.region_matches.emplace_back(p, *ref);
        if (r->second < best_rank) best_rank = r->second;
      }
    }
    if (s.region_matches.empty()) return std::nullopt;
    for (const auto& lang : cfg_.languages)
      if (e.labels.count(lang) || e.descriptions.count(lang)) s.covered_languages.insert(lang);
    if (s.covered_languages.empty()) return std::nullopt;
    s.assigned_region = cfg_.regions[best_rank].qid;
    s.entity = e;
    return s;
  }

 private:
  SelectionConfig cfg_;
  std::unordered_map<EntityId, std::size_t> region_rank_;
};

inline std::vector<SelectedEntity> select_cultural_entities(std::span<const Entity> entities, const SelectionConfig& cfg) {
  EntitySelector select(cfg);
  std::vector<SelectedEntity> out;
  for (const auto& e : entities)
    if (auto s = select(e)) out.push_back(std::move(*s));
  return out;
}

struct EmptyRegion : Error {
  using Error::Error;
};

// Lower median of |eligible_properties| over the entities assigned to `region`.
inline int country_property_median(std::span<const SelectedEntity> selected, const EntityId& region) {
  std::vector<int> counts;
  for (const auto& s : selected)
    if (s.assigned_region == region) counts.push_back(static_cast<int>(s.eligible_properties.size()));
  if (counts.empty()) throw EmptyRegion("no selected entity assigned to region " + region.str());
  auto mid = counts.begin() + static_cast<std::ptrdiff_t>((counts.size() - 1) / 2);
  std::nth_element(counts.begin(), mid, counts.end());
  return *mid;
}

inline SelectedEntity cap_entity_properties(SelectedEntity s, int cap) {
  if (cap < 1) throw Error("property cap must be >= 1");
  if (s.eligible_properties.size() > static_cast<std::size_t>(cap)) s.eligible_properties.resize(static_cast<std::size_t>(cap));
  return s;
}

// Applies the configured cap mode in place. Median mode needs the complete
// per-region population.
inline void apply_property_caps(std::vector<SelectedEntity>& selected, const CapMode& mode) {
  switch (mode.kind) {
    case CapMode::Kind::none:
      return;
    case CapMode::Kind::fixed:
      for (auto& s : selected) s = cap_entity_properties(std::move(s), mode.fixed_cap);
      return;
    case CapMode::Kind::country_median: {
      std::map<EntityId, int> medians;
      for (const auto& s : selected)
        if (!medians.count(s.assigned_region)) medians[s.assigned_region] = country_property_median(selected, s.assigned_region);
      for (auto& s : selected) s = cap_entity_properties(std::move(s), std::max(1, medians[s.assigned_region]));
      return;
    }
  }
}

}  // namespace kultur
