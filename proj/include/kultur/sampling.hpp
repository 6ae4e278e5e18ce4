#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "kultur/random.hpp"
#include "kultur/records.hpp"

namespace kultur {

template <class Key>
using BucketCounts = std::map<Key, std::size_t>;

// p_i = n_i^(1/T) / sum_j n_j^(1/T). Evaluated relative to the largest count
// in log space so huge T and huge counts stay accurate. Zero counts get 0.
template <class Key>
std::map<Key, double> temperature_weights(const BucketCounts<Key>& counts, double temperature) {
  if (!(temperature > 0)) throw Error("temperature must be positive");
  std::size_t max_n = 0;
  for (const auto& [k, n] : counts) max_n = std::max(max_n, n);
  if (max_n == 0) throw Error("temperature_weights: all counts are zero");
  const double log_max = std::log(static_cast<double>(max_n));
  std::map<Key, double> w;
  double total = 0;
  for (const auto& [k, n] : counts) {
    double x = n == 0 ? 0.0 : std::exp((std::log(static_cast<double>(n)) - log_max) / temperature);
    w[k] = x;
    total += x;
  }
  for (auto& [k, x] : w) x /= total;
  return w;
}

namespace detail {

// Largest-remainder split of `amount` over `keys` by `weights`. Ties in the
// fractional part go to the smaller key.
template <class Key>
std::map<Key, std::size_t> apportion(std::size_t amount, const std::vector<Key>& keys, const std::map<Key, double>& weights) {
  std::map<Key, std::size_t> out;
  if (keys.empty()) return out;
  double total = 0;
  for (const auto& k : keys) {
    auto it = weights.find(k);
    total += it == weights.end() ? 0.0 : std::max(0.0, it->second);
  }
  struct Share {
    Key key;
    double frac;
  };
  std::vector<Share> shares;
  std::size_t assigned = 0;
  for (const auto& k : keys) {
    double w;
    if (total > 0) {
      auto it = weights.find(k);
      w = (it == weights.end() ? 0.0 : std::max(0.0, it->second)) / total;
    } else {
      w = 1.0 / static_cast<double>(keys.size());
    }
    double exact = static_cast<double>(amount) * w;
    // 59.999999999 from 90 * (2/3) counts as 60.
    auto base = static_cast<std::size_t>(std::max(0.0, std::floor(exact + 1e-9)));
    out[k] = base;
    assigned += base;
    shares.push_back({k, exact - static_cast<double>(base)});
  }
  if (assigned > amount) {
    // Epsilon rounding overshot; take back from the smallest remainders.
    std::sort(shares.begin(), shares.end(), [](const Share& a, const Share& b) {
      if (std::abs(a.frac - b.frac) > 1e-9) return a.frac < b.frac;
      return b.key < a.key;
    });
    for (std::size_t i = 0; assigned > amount; i = (i + 1) % shares.size())
      if (out[shares[i].key] > 0) --out[shares[i].key], --assigned;
    return out;
  }
  std::sort(shares.begin(), shares.end(), [](const Share& a, const Share& b) {
    if (std::abs(a.frac - b.frac) > 1e-9) return a.frac > b.frac;
    return a.key < b.key;
  });
  for (std::size_t i = 0; assigned < amount; i = (i + 1) % shares.size()) ++out[shares[i].key], ++assigned;
  return out;
}

}  // namespace detail

// Integer quotas: largest-remainder apportionment of the budget, then any
// bucket whose share exceeds its availability is clamped and the rest of the
// budget is re-apportioned over the remaining buckets. The quotas sum to
// min(budget, total available) and never exceed availability.
template <class Key>
std::map<Key, std::size_t> allocate_quotas(const std::map<Key, double>& weights, std::size_t budget,
                                           const BucketCounts<Key>& available) {
  std::map<Key, std::size_t> quota;
  std::size_t total_available = 0;
  std::vector<Key> active;
  for (const auto& [k, n] : available) {
    quota[k] = 0;
    total_available += n;
    if (n > 0) active.push_back(k);
  }
  for (const auto& [k, w] : weights) quota.emplace(k, 0);
  std::size_t target = std::min(budget, total_available);
  std::size_t fixed = 0;
  while (!active.empty()) {
    auto shares = detail::apportion(target - fixed, active, weights);
    std::vector<Key> still_active;
    bool clamped = false;
    for (const auto& k : active) {
      std::size_t avail = available.at(k);
      if (shares[k] >= avail) {
        quota[k] = avail;
        fixed += avail;
        clamped = true;
      } else {
        still_active.push_back(k);
      }
    }
    if (!clamped) {
      for (const auto& k : active) quota[k] = shares[k];
      break;
    }
    active = std::move(still_active);
  }
  return quota;
}

// ---------------------------------------------------------------------------
// Two-stage sampling over records

using RegionKey = std::string;
using RegionLanguageKey = std::pair<std::string, std::string>;

struct SamplingPlan {
  double t_region = 4.0;
  double t_lang = 1.5;
  std::uint64_t seed = 0;
  std::size_t budget = 0;
  BucketCounts<RegionKey> region_available;
  std::map<RegionKey, std::size_t> region_quota;
  BucketCounts<RegionLanguageKey> language_available;
  std::map<RegionLanguageKey, std::size_t> language_quota;
};

struct SampleResult {
  SamplingPlan plan;
  std::vector<DatasetRecord> selected;  // input order
};

// Regions first at `t_region`, then languages within each region at `t_lang`;
// inside a (region, language) bucket records are drawn uniformly without
// replacement. Deterministic in (record order, seed, temperatures, budget).
inline SampleResult hybrid_sample(std::span<const DatasetRecord> records, double t_region, double t_lang,
                                  std::size_t budget, std::uint64_t seed) {
  if (!(t_region > 0) || !(t_lang > 0)) throw Error("sampling temperatures must be positive");
  SampleResult result;
  SamplingPlan& plan = result.plan;
  plan.t_region = t_region;
  plan.t_lang = t_lang;
  plan.seed = seed;
  plan.budget = budget;

  std::map<RegionLanguageKey, std::vector<std::size_t>> buckets;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    ++plan.region_available[r.region.str()];
    ++plan.language_available[{r.region.str(), r.language}];
    buckets[{r.region.str(), r.language}].push_back(i);
  }
  if (records.empty()) return result;

  plan.region_quota = allocate_quotas(temperature_weights(plan.region_available, t_region), budget, plan.region_available);
  for (const auto& [region, quota] : plan.region_quota) {
    BucketCounts<std::string> langs;
    for (const auto& [key, n] : plan.language_available)
      if (key.first == region) langs[key.second] = n;
    auto lang_quota = allocate_quotas(temperature_weights(langs, t_lang), quota, langs);
    for (const auto& [lang, q] : lang_quota) plan.language_quota[{region, lang}] = q;
  }

  SeededRng rng(seed);
  std::vector<char> keep(records.size(), 0);
  for (auto& [key, indices] : buckets) {
    std::size_t q = plan.language_quota[key];
    for (std::size_t i = 0; i < q; ++i) {
      std::size_t j = i + static_cast<std::size_t>(rng.below(indices.size() - i));
      std::swap(indices[i], indices[j]);
      keep[indices[i]] = 1;
    }
  }
  for (std::size_t i = 0; i < records.size(); ++i)
    if (keep[i]) result.selected.push_back(records[i]);
  return result;
}

inline nlohmann::json plan_to_json(const SamplingPlan& plan, const std::vector<DatasetRecord>& selected) {
  std::map<RegionLanguageKey, std::size_t> chosen;
  for (const auto& r : selected) ++chosen[{r.region.str(), r.language}];
  nlohmann::json regions = nlohmann::json::array();
  for (const auto& [region, avail] : plan.region_available) {
    nlohmann::json langs = nlohmann::json::array();
    std::size_t region_selected = 0;
    for (const auto& [key, n] : plan.language_available) {
      if (key.first != region) continue;
      std::size_t s = chosen[key];
      region_selected += s;
      langs.push_back({{"language", key.second}, {"available", n}, {"quota", plan.language_quota.at(key)}, {"selected", s}});
    }
    regions.push_back({{"region", region},
                       {"available", avail},
                       {"quota", plan.region_quota.at(region)},
                       {"selected", region_selected},
                       {"languages", std::move(langs)}});
  }
  return {{"t_region", plan.t_region}, {"t_lang", plan.t_lang}, {"seed", plan.seed},
          {"budget", plan.budget},     {"selected", selected.size()}, {"regions", std::move(regions)}};
}

// Drops records whose (entity, kind, property, language, image, normalized
// question) was already seen. First occurrence wins.
inline std::vector<DatasetRecord> dedup_records(std::span<const DatasetRecord> records) {
  std::unordered_set<std::string> seen;
  std::vector<DatasetRecord> out;
  for (const auto& r : records) {
    StableHasher h;
    h.add(r.entity_id.str()).add(to_string(r.kind)).add(r.property ? r.property->str() : "").add(r.language);
    h.add(r.image ? r.image->commons_title : "").add(stable_hash_hex(normalize_text(r.question)));
    if (seen.insert(h.hex()).second) out.push_back(r);
  }
  return out;
}

}  // namespace kultur
