#pragma once

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "kultur/kg.hpp"
#include "kultur/select.hpp"
#include "kultur/text.hpp"

namespace kultur {

enum class ImageSource { p18, commons_category };

inline const char* to_string(ImageSource s) { return s == ImageSource::p18 ? "p18" : "commons-category"; }

inline ImageSource image_source_from_string(std::string_view s) {
  if (s == "p18") return ImageSource::p18;
  if (s == "commons-category") return ImageSource::commons_category;
  throw Error("unknown image source '" + std::string(s) + "'");
}

struct ImageRef {
  std::string commons_title;  // "File:Name.jpg"
  ImageSource source = ImageSource::p18;
  std::optional<std::string> resolved_url;

  friend bool operator==(const ImageRef&, const ImageRef&) = default;
};

// "taj_Mahal.jpg", "Image:Taj Mahal.jpg", " File:Taj  Mahal.jpg" -> "File:Taj Mahal.jpg".
// Returns "" when nothing is left of the name.
inline std::string normalize_commons_title(std::string_view raw) {
  std::string_view s = trim(raw);
  if (starts_with_icase(s, "file:"))
    s.remove_prefix(5);
  else if (starts_with_icase(s, "image:"))
    s.remove_prefix(6);
  std::string name;
  bool space = false;
  for (char c : s) {
    if (c == '_' || c == ' ' || c == '\t') {
      space = !name.empty();
      continue;
    }
    if (space) name += ' ';
    space = false;
    name += c;
  }
  if (name.empty()) return {};
  if (name[0] >= 'a' && name[0] <= 'z') name[0] = static_cast<char>(name[0] - 'a' + 'A');
  return "File:" + name;
}

inline std::string commons_file_url(std::string_view normalized_title) {
  std::string_view name = normalized_title;
  if (name.substr(0, 5) == "File:") name.remove_prefix(5);
  std::string out = "https://commons.wikimedia.org/wiki/Special:FilePath/";
  static constexpr char hex[] = "0123456789ABCDEF";
  for (unsigned char c : name) {
    if (c == ' ') {
      out += '_';
    } else if ((c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-' || c == '_' ||
               c == '.' || c == '~' || c == '(' || c == ')') {
      out += static_cast<char>(c);
    } else {
      out += '%';
      out += hex[c >> 4];
      out += hex[c & 0xF];
    }
  }
  return out;
}

inline std::optional<ImageRef> make_image_ref(std::string_view title, ImageSource source) {
  std::string t = normalize_commons_title(title);
  if (t.empty()) return std::nullopt;
  ImageRef ref{t, source, commons_file_url(t)};
  return ref;
}

inline nlohmann::json image_ref_to_json(const ImageRef& r) {
  nlohmann::json j{{"title", r.commons_title}, {"source", to_string(r.source)}};
  if (r.resolved_url) j["url"] = *r.resolved_url;
  return j;
}

inline ImageRef image_ref_from_json(const nlohmann::json& j) {
  ImageRef r;
  r.commons_title = j.at("title").get<std::string>();
  if (r.commons_title.rfind("File:", 0) != 0) throw Error("image title must start with 'File:': " + r.commons_title);
  r.source = image_source_from_string(j.at("source").get<std::string>());
  if (auto it = j.find("url"); it != j.end() && it->is_string()) r.resolved_url = it->get<std::string>();
  return r;
}

// ---------------------------------------------------------------------------
// Commons category listing

// Transport-level failure; the caller may retry.
struct FetchError : Error {
  using Error::Error;
};

class CommonsClient {
 public:
  virtual ~CommonsClient() = default;
  // File titles that are members of the category (no "Category:" prefix
  // required). A category that does not exist yields an empty list.
  virtual std::vector<std::string> list_category_files(const std::string& category_title) = 0;
};

inline std::string normalize_category_title(std::string_view raw) {
  std::string_view s = trim(raw);
  if (starts_with_icase(s, "category:")) s.remove_prefix(9);
  std::string out;
  bool space = false;
  for (char c : s) {
    if (c == '_' || c == ' ') {
      space = !out.empty();
      continue;
    }
    if (space) out += ' ';
    space = false;
    out += c;
  }
  return out;
}

// Replay store: one JSON object per line, {"category": ..., "files": [...]}.
// Later lines for the same category override earlier ones.
class ReplayCommonsClient : public CommonsClient {
 public:
  explicit ReplayCommonsClient(const std::filesystem::path& store) {
    std::ifstream in(store);
    if (!in) throw Error("cannot open commons replay store " + store.string());
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (trim(line).empty()) continue;
      auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.contains("category") || !j.contains("files"))
        throw Error(store.string() + ":" + std::to_string(n) + ": malformed commons replay record");
      entries_[normalize_category_title(j["category"].get<std::string>())] = j["files"].get<std::vector<std::string>>();
    }
  }

  ReplayCommonsClient(std::map<std::string, std::vector<std::string>> entries) {
    for (auto& [k, v] : entries) entries_[normalize_category_title(k)] = std::move(v);
  }

  std::vector<std::string> list_category_files(const std::string& category_title) override {
    auto it = entries_.find(normalize_category_title(category_title));
    if (it == entries_.end()) throw FetchError("commons replay miss for category '" + category_title + "'");
    return it->second;
  }

 private:
  std::unordered_map<std::string, std::vector<std::string>> entries_;
};

// Passes through to `inner` and appends each response to the replay store.
class RecordingCommonsClient : public CommonsClient {
 public:
  RecordingCommonsClient(CommonsClient& inner, const std::filesystem::path& store)
      : inner_(inner), out_(store, std::ios::app) {
    if (!out_) throw Error("cannot open commons replay store for append: " + store.string());
  }

  std::vector<std::string> list_category_files(const std::string& category_title) override {
    auto files = inner_.list_category_files(category_title);
    nlohmann::json rec{{"category", normalize_category_title(category_title)}, {"files", files}};
    std::lock_guard lock(mu_);
    out_ << rec.dump() << '\n';
    out_.flush();
    return files;
  }

 private:
  CommonsClient& inner_;
  std::mutex mu_;
  std::ofstream out_;
};

// ---------------------------------------------------------------------------

inline const PropertyId& p18() {
  static const PropertyId id("P18");
  return id;
}

inline const PropertyId& p373() {
  static const PropertyId id("P373");
  return id;
}

inline std::optional<ImageRef> primary_image_of(const Entity& e) {
  auto it = e.claims.find(p18());
  if (it == e.claims.end()) return std::nullopt;
  for (const auto& v : it->second)
    if (const auto* t = std::get_if<Text>(&v)) return make_image_ref(t->value, ImageSource::p18);
  return std::nullopt;
}

// P373 first, then a "Category:" commonswiki sitelink.
inline std::optional<std::string> commons_category_of(const Entity& e) {
  if (auto it = e.claims.find(p373()); it != e.claims.end())
    for (const auto& v : it->second)
      if (const auto* t = std::get_if<Text>(&v); t && !trim(t->value).empty()) return normalize_category_title(t->value);
  if (auto it = e.sitelinks.find("commonswiki"); it != e.sitelinks.end() && starts_with_icase(it->second, "category:"))
    return normalize_category_title(it->second);
  return std::nullopt;
}

// File-namespace members of the entity's Commons category, de-duplicated.
inline std::vector<ImageRef> commons_category_images(const Entity& e, CommonsClient& client) {
  std::vector<ImageRef> out;
  auto category = commons_category_of(e);
  if (!category) return out;
  std::set<std::string> seen;
  for (const auto& title : client.list_category_files(*category)) {
    std::string_view t = trim(title);
    if (!starts_with_icase(t, "file:") && !starts_with_icase(t, "image:")) continue;
    auto ref = make_image_ref(t, ImageSource::commons_category);
    if (ref && seen.insert(ref->commons_title).second) out.push_back(std::move(*ref));
  }
  return out;
}

struct ImageManifest {
  std::map<EntityId, std::vector<ImageRef>> entries;

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& [id, refs] : entries) n += refs.size();
    return n;
  }
  friend bool operator==(const ImageManifest&, const ImageManifest&) = default;
};

inline nlohmann::json manifest_to_json(const ImageManifest& m) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [id, refs] : m.entries) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : refs) arr.push_back(image_ref_to_json(r));
    j[id.str()] = std::move(arr);
  }
  return j;
}

inline ImageManifest manifest_from_json(const nlohmann::json& j) {
  ImageManifest m;
  for (const auto& [id, arr] : j.items()) {
    auto& refs = m.entries[EntityId(id)];
    for (const auto& r : arr) refs.push_back(image_ref_from_json(r));
  }
  return m;
}

struct ImageFetchFailure {
  EntityId entity;
  std::string reason;
};

struct ManifestBuild {
  ImageManifest manifest;
  std::vector<ImageFetchFailure> failures;
};

// P18 image first, then category images, de-duplicated and truncated to
// `max_per_entity`. At most `max_in_flight` category fetches run at once;
// the result does not depend on scheduling.
inline ManifestBuild build_image_manifest(std::span<const SelectedEntity> selected, CommonsClient& client,
                                          int max_per_entity, int max_in_flight = 4) {
  if (max_per_entity < 1) throw Error("max_per_entity must be >= 1");
  struct Slot {
    std::vector<ImageRef> refs;
    std::optional<std::string> error;
  };
  std::vector<Slot> slots(selected.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < selected.size();) {
      const Entity& e = selected[i].entity;
      Slot& slot = slots[i];
      std::set<std::string> seen;
      if (auto p = primary_image_of(e)) {
        seen.insert(p->commons_title);
        slot.refs.push_back(std::move(*p));
      }
      try {
        for (auto& ref : commons_category_images(e, client))
          if (seen.insert(ref.commons_title).second) slot.refs.push_back(std::move(ref));
      } catch (const FetchError& err) {
        slot.error = err.what();
      }
      if (slot.refs.size() > static_cast<std::size_t>(max_per_entity)) slot.refs.resize(static_cast<std::size_t>(max_per_entity));
    }
  };
  std::size_t n_workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, max_in_flight)), selected.size());
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < n_workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  ManifestBuild out;
  for (std::size_t i = 0; i < selected.size(); ++i) {
    const EntityId& id = selected[i].entity.id;
    if (slots[i].error) out.failures.push_back({id, *slots[i].error});
    if (!slots[i].refs.empty()) out.manifest.entries[id] = std::move(slots[i].refs);
  }
  return out;
}

}  // namespace kultur
