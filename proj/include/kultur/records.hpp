#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "kultur/images.hpp"
#include "kultur/line_reader.hpp"
#include "kultur/qa.hpp"
#include "kultur/random.hpp"
#include "kultur/responses.hpp"

namespace kultur {

enum class RecordKind { property, identity, mcq, truefalse };

inline const char* to_string(RecordKind k) {
  switch (k) {
    case RecordKind::property: return "property";
    case RecordKind::identity: return "identity";
    case RecordKind::mcq: return "mcq";
    case RecordKind::truefalse: return "truefalse";
  }
  return "?";
}

inline RecordKind record_kind_from_string(std::string_view s) {
  if (s == "property") return RecordKind::property;
  if (s == "identity") return RecordKind::identity;
  if (s == "mcq") return RecordKind::mcq;
  if (s == "truefalse") return RecordKind::truefalse;
  throw Error("unknown record kind '" + std::string(s) + "'");
}

inline bool is_open_ended(RecordKind k) { return k == RecordKind::property || k == RecordKind::identity; }

struct DatasetRecord {
  std::string id;
  EntityId entity_id;
  EntityId region;
  LanguageCode language;
  RecordKind kind = RecordKind::property;
  std::optional<PropertyId> property;
  std::optional<ImageRef> image;
  std::string question;
  std::string answer;
  std::optional<std::array<std::string, 4>> options;
  std::optional<int> correct_index;
  std::optional<std::string> explanation;
  Stage stage = Stage::templated;
  std::optional<FilterVerdict> verdict;

  friend bool operator==(const DatasetRecord&, const DatasetRecord&) = default;
};

struct RecordInvariantViolation : Error {
  RecordInvariantViolation(std::string record_id, const std::string& why)
      : Error("record " + record_id + ": " + why), id(std::move(record_id)) {}
  std::string id;
};

inline void validate_record(const DatasetRecord& r) {
  auto fail = [&](const std::string& why) { throw RecordInvariantViolation(r.id, why); };
  if (r.id.empty()) fail("empty id");
  if (r.entity_id.empty() || r.region.empty()) fail("missing entity or region");
  if (!valid_language_code(r.language)) fail("invalid language '" + r.language + "'");
  if (r.question.empty() || r.answer.empty()) fail("empty question or answer");
  if (r.kind == RecordKind::property && !r.property) fail("property record without property id");
  if (r.kind == RecordKind::mcq) {
    if (!r.options || !r.correct_index) fail("mcq record without options or correct index");
    if (*r.correct_index < 0 || *r.correct_index > 3) fail("correct index out of range");
  }
  if (is_open_ended(r.kind) && (r.options || r.correct_index)) fail("open-ended record carries options");
  if (r.stage == Stage::filtered && (!r.verdict || !r.verdict->match)) fail("filtered record without a matching verdict");
}

// Stable id of a templated QA/image pair; later stages keep it.
inline std::string record_id(const EntityId& entity, RecordKind kind, const std::optional<PropertyId>& property,
                             const LanguageCode& lang, const std::optional<ImageRef>& image, std::string_view question) {
  StableHasher h;
  h.add(entity.str()).add(to_string(kind)).add(property ? property->str() : "").add(lang);
  h.add(image ? image->commons_title : "").add(question);
  return h.hex();
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json verdict_to_json(const FilterVerdict& v) {
  nlohmann::json j{{"match", v.match}, {"issue", std::string(to_string(v.issue))}, {"explanation", v.explanation}};
  if (v.culturally_relevant) j["culturally_relevant"] = *v.culturally_relevant;
  if (!v.unknown_issue.empty()) j["unknown_issue"] = v.unknown_issue;
  return j;
}

inline FilterVerdict verdict_from_json(const nlohmann::json& j) {
  FilterVerdict v;
  v.match = j.at("match").get<bool>();
  std::string issue = j.at("issue").get<std::string>();
  v.issue = Issue::Other;
  for (const auto& [k, name] : kIssueNames)
    if (name == issue) v.issue = k;
  if (auto it = j.find("culturally_relevant"); it != j.end()) v.culturally_relevant = it->get<bool>();
  v.explanation = j.value("explanation", "");
  v.unknown_issue = j.value("unknown_issue", "");
  return v;
}

inline nlohmann::json record_to_json(const DatasetRecord& r) {
  nlohmann::json j;
  j["id"] = r.id;
  j["entity"] = r.entity_id.str();
  j["region"] = r.region.str();
  j["lang"] = r.language;
  j["kind"] = to_string(r.kind);
  if (r.property) j["property"] = r.property->str();
  if (r.image) j["image"] = image_ref_to_json(*r.image);
  j["question"] = r.question;
  j["answer"] = r.answer;
  if (r.options) j["options"] = *r.options;
  if (r.correct_index) j["correct"] = *r.correct_index;
  if (r.explanation) j["explanation"] = *r.explanation;
  j["stage"] = to_string(r.stage);
  if (r.verdict) j["verdict"] = verdict_to_json(*r.verdict);
  return j;
}

inline DatasetRecord record_from_json(const nlohmann::json& j) {
  DatasetRecord r;
  r.id = j.at("id").get<std::string>();
  r.entity_id = EntityId(j.at("entity").get<std::string>());
  r.region = EntityId(j.at("region").get<std::string>());
  r.language = j.at("lang").get<std::string>();
  r.kind = record_kind_from_string(j.at("kind").get<std::string>());
  if (auto it = j.find("property"); it != j.end()) r.property = PropertyId(it->get<std::string>());
  if (auto it = j.find("image"); it != j.end()) r.image = image_ref_from_json(*it);
  r.question = j.at("question").get<std::string>();
  r.answer = j.at("answer").get<std::string>();
  if (auto it = j.find("options"); it != j.end()) r.options = it->get<std::array<std::string, 4>>();
  if (auto it = j.find("correct"); it != j.end()) r.correct_index = it->get<int>();
  if (auto it = j.find("explanation"); it != j.end()) r.explanation = it->get<std::string>();
  r.stage = stage_from_string(j.at("stage").get<std::string>());
  if (auto it = j.find("verdict"); it != j.end()) r.verdict = verdict_from_json(*it);
  return r;
}

// ---------------------------------------------------------------------------
// Line-delimited files

// One compact JSON object per line. Every record is validated before it is
// written; a violation aborts with the offending record id.
template <class Range>
std::size_t write_records(const Range& records, std::ostream& out) {
  std::size_t n = 0;
  for (const DatasetRecord& r : records) {
    validate_record(r);
    out << record_to_json(r).dump() << '\n';
    if (!out) throw IoError("write failure after " + std::to_string(n) + " records");
    ++n;
  }
  out.flush();
  return n;
}

using ReadItem = std::variant<DatasetRecord, ParseDiagnostic>;

class RecordReader {
 public:
  explicit RecordReader(std::istream& in) : reader_(in) {}

  std::optional<ReadItem> next() {
    Line line;
    while (reader_.next(line)) {
      if (line.overflow) return ParseDiagnostic{line.number, "line too long", false};
      if (trim(line.text).empty()) continue;
      auto j = nlohmann::json::parse(line.text, nullptr, false);
      if (j.is_discarded()) {
        if (!line.terminated) return ParseDiagnostic{line.number, "truncated final line", true};
        return ParseDiagnostic{line.number, "malformed JSON", false};
      }
      try {
        DatasetRecord r = record_from_json(j);
        validate_record(r);
        return r;
      } catch (const std::exception& e) {
        return ParseDiagnostic{line.number, e.what(), !line.terminated};
      }
    }
    return std::nullopt;
  }

 private:
  LineReader reader_;
};

struct RecordFile {
  std::vector<DatasetRecord> records;
  std::vector<ParseDiagnostic> diagnostics;
};

inline RecordFile read_records(std::istream& in) {
  RecordFile out;
  RecordReader reader(in);
  while (auto item = reader.next()) {
    if (auto* r = std::get_if<DatasetRecord>(&*item))
      out.records.push_back(std::move(*r));
    else
      out.diagnostics.push_back(std::get<ParseDiagnostic>(*item));
  }
  return out;
}

inline RecordFile read_records_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_records(in);
}

inline std::size_t write_records_file(const std::filesystem::path& path, std::span<const DatasetRecord> records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  return write_records(records, out);
}

// ---------------------------------------------------------------------------
// MCQ option shuffling

// The k-th permutation of {0,1,2,3} in lexicographic order, k in [0, 24).
inline std::array<int, 4> nth_permutation(int k) {
  std::array<int, 4> pool{0, 1, 2, 3}, out{};
  static constexpr int fact[] = {6, 2, 1, 1};
  int n = 4;
  for (int i = 0; i < 4; ++i) {
    int idx = k / fact[i];
    k %= fact[i];
    out[static_cast<std::size_t>(i)] = pool[static_cast<std::size_t>(idx)];
    for (int j = idx; j < n - 1; ++j) pool[static_cast<std::size_t>(j)] = pool[static_cast<std::size_t>(j + 1)];
    --n;
  }
  return out;
}

// Draws one of the 24 orderings uniformly from `seed`; the correct index
// follows its option.
inline DatasetRecord shuffle_mcq_options(DatasetRecord r, std::uint64_t seed) {
  if (r.kind != RecordKind::mcq || !r.options || !r.correct_index)
    throw Error("shuffle_mcq_options: record " + r.id + " is not an MCQ");
  SeededRng rng(seed);
  auto perm = nth_permutation(static_cast<int>(rng.below(24)));
  std::array<std::string, 4> shuffled;
  int correct = 0;
  for (std::size_t k = 0; k < 4; ++k) {
    shuffled[k] = (*r.options)[static_cast<std::size_t>(perm[k])];
    if (perm[k] == *r.correct_index) correct = static_cast<int>(k);
  }
  r.options = std::move(shuffled);
  r.correct_index = correct;
  return r;
}

}  // namespace kultur
