#pragma once

#include <array>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "kultur/kg.hpp"
#include "kultur/text.hpp"

namespace kultur {

// A model response that does not follow its declared grammar.
struct MalformedResponse : Error {
  MalformedResponse(std::string reason_code, const std::string& detail)
      : Error("malformed response (" + reason_code + "): " + detail), reason(std::move(reason_code)) {}
  std::string reason;  // missing-section | wrong-correct-letter | duplicate-options | bad-answer-token | ...
};

struct RefinedQa {
  std::string question;
  std::string answer;
  bool repeated_question_marker = false;  // a second "Q:" followed the answer

  friend bool operator==(const RefinedQa&, const RefinedQa&) = default;
};

struct McqItem {
  std::string question;
  std::array<std::string, 4> options;
  int correct_index = 0;
  std::string explanation;

  friend bool operator==(const McqItem&, const McqItem&) = default;
};

struct TfItem {
  enum class Form { statement, question };
  std::string text;
  Form form = Form::statement;
  bool answer = true;
  std::string explanation;

  friend bool operator==(const TfItem&, const TfItem&) = default;
};

enum class Issue {
  None,
  ImageMismatch,
  MixedLanguage,
  FactualError,
  QAMismatch,
  Unclear,
  CulturalMismatch,
  IncorrectAnswer,
  PoorQuestion,
  Other
};

inline constexpr std::array<std::pair<Issue, std::string_view>, 10> kIssueNames{{
    {Issue::None, "None"},
    {Issue::ImageMismatch, "ImageMismatch"},
    {Issue::MixedLanguage, "MixedLanguage"},
    {Issue::FactualError, "FactualError"},
    {Issue::QAMismatch, "QAMismatch"},
    {Issue::Unclear, "Unclear"},
    {Issue::CulturalMismatch, "CulturalMismatch"},
    {Issue::IncorrectAnswer, "IncorrectAnswer"},
    {Issue::PoorQuestion, "PoorQuestion"},
    {Issue::Other, "Other"},
}};

inline std::string_view to_string(Issue i) {
  for (const auto& [k, name] : kIssueNames)
    if (k == i) return name;
  return "Other";
}

struct FilterVerdict {
  bool match = false;
  Issue issue = Issue::None;
  std::optional<bool> culturally_relevant;  // mcq-filter only
  std::string explanation;
  std::string unknown_issue;  // raw token when `issue` fell back to Other

  friend bool operator==(const FilterVerdict&, const FilterVerdict&) = default;
};

enum class FilterKind { vqa, mcq };

namespace detail {

struct Section {
  bool found = false;
  std::size_t offset = 0;  // byte offset of the marker line
  std::string body;
};

inline std::string_view ltrim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  return s;
}

// Line-oriented section splitter. A section starts at the first line whose
// left-trimmed text begins with its marker (ASCII case-insensitive) and runs
// until the next section start. Text before the first marker is ignored;
// repeated markers stay inside the current section and set `repeated`.
inline std::vector<Section> split_sections(std::string_view text, const std::vector<std::string_view>& markers,
                                           bool* repeated = nullptr) {
  std::vector<Section> out(markers.size());
  int current = -1;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    std::string_view lt = ltrim(line);
    int started = -1;
    for (std::size_t m = 0; m < markers.size(); ++m)
      if (starts_with_icase(lt, markers[m])) {
        if (out[m].found) {
          if (repeated) *repeated = true;
          break;
        }
        started = static_cast<int>(m);
        break;
      }
    if (started >= 0) {
      current = started;
      out[static_cast<std::size_t>(current)].found = true;
      out[static_cast<std::size_t>(current)].offset = pos;
      out[static_cast<std::size_t>(current)].body.assign(lt.substr(markers[static_cast<std::size_t>(current)].size()));
    } else if (current >= 0) {
      auto& body = out[static_cast<std::size_t>(current)].body;
      body += '\n';
      body += line;
    }
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  for (auto& s : out) s.body = std::string(trim(s.body));
  return out;
}

inline std::string_view strip_decoration(std::string_view s) {
  s = trim(s);
  while (!s.empty() && (s.front() == '[' || s.front() == '*' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ']' || s.back() == '*' || s.back() == '"' || s.back() == '.')) s.remove_suffix(1);
  return trim(s);
}

inline std::optional<bool> parse_bool_token(std::string_view s) {
  s = strip_decoration(s);
  if (s.size() == 4 && starts_with_icase(s, "true")) return true;
  if (s.size() == 5 && starts_with_icase(s, "false")) return false;
  return std::nullopt;
}

inline void require_section(const Section& s, std::string_view name) {
  if (!s.found) throw MalformedResponse("missing-section", std::string(name) + " not found");
  if (s.body.empty()) throw MalformedResponse("missing-section", std::string(name) + " is empty");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Refinement: "Q: ...\nA: ..."

inline RefinedQa parse_refine_response(std::string_view text) {
  bool repeated = false;
  auto s = detail::split_sections(text, {"Q:", "A:"}, &repeated);
  detail::require_section(s[0], "Q:");
  detail::require_section(s[1], "A:");
  return {s[0].body, s[1].body, repeated};
}

inline std::string render_refine_response(const RefinedQa& r) { return "Q: " + r.question + "\nA: " + r.answer; }

// ---------------------------------------------------------------------------
// Multiple choice: Q:, A)..D), Correct: A, Explanation:

inline McqItem parse_mcq_response(std::string_view text) {
  auto s = detail::split_sections(text, {"Q:", "A)", "B)", "C)", "D)", "Correct:", "Explanation:"});
  static constexpr std::string_view names[] = {"Q:", "A)", "B)", "C)", "D)", "Correct:", "Explanation:"};
  for (std::size_t i = 0; i < 6; ++i) detail::require_section(s[i], names[i]);
  std::string_view letter = detail::strip_decoration(s[5].body);
  letter = letter.substr(0, letter.find_first_of(" )."));
  if (letter != "A" && letter != "a") {
    if (letter.size() == 1 && std::string_view("BCDbcd").find(letter[0]) != std::string_view::npos)
      throw MalformedResponse("wrong-correct-letter", "correct option is '" + std::string(letter) + "', expected A");
    throw MalformedResponse("missing-section", "unreadable Correct: value '" + s[5].body + "'");
  }
  McqItem item;
  item.question = s[0].body;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < 4; ++i) {
    item.options[i] = s[i + 1].body;
    if (!seen.insert(normalize_text(item.options[i])).second)
      throw MalformedResponse("duplicate-options", "option " + std::string(1, static_cast<char>('A' + i)) + " repeats another option");
  }
  item.correct_index = 0;
  item.explanation = s[6].body;
  return item;
}

inline std::string render_mcq_response(const McqItem& m) {
  if (m.correct_index != 0) throw Error("canonical MCQ text requires the correct option in position A");
  std::string out = "Q: " + m.question;
  for (std::size_t i = 0; i < 4; ++i) out += "\n" + std::string(1, static_cast<char>('A' + i)) + ") " + m.options[i];
  out += "\nCorrect: A\nExplanation: " + m.explanation;
  return out;
}

// ---------------------------------------------------------------------------
// True/false: Statement:|Question:, Answer: True|False, Explanation:

inline TfItem parse_tf_response(std::string_view text) {
  auto s = detail::split_sections(text, {"Statement:", "Question:", "Answer:", "Explanation:"});
  TfItem item;
  // Whichever lead marker comes first wins when a model emits both.
  const detail::Section* lead = nullptr;
  if (s[0].found && (!s[1].found || s[0].offset < s[1].offset)) {
    lead = &s[0];
  } else if (s[1].found) {
    lead = &s[1];
    item.form = TfItem::Form::question;
  }
  if (!lead) throw MalformedResponse("missing-section", "neither Statement: nor Question: found");
  detail::require_section(*lead, item.form == TfItem::Form::statement ? "Statement:" : "Question:");
  item.text = lead->body;
  detail::require_section(s[2], "Answer:");
  auto answer = detail::parse_bool_token(s[2].body);
  if (!answer) throw MalformedResponse("bad-answer-token", "Answer: '" + s[2].body + "' is not True/False");
  item.answer = *answer;
  detail::require_section(s[3], "Explanation:");
  item.explanation = s[3].body;
  return item;
}

inline std::string render_tf_response(const TfItem& t) {
  return std::string(t.form == TfItem::Form::statement ? "Statement: " : "Question: ") + t.text +
         "\nAnswer: " + (t.answer ? "True" : "False") + "\nExplanation: " + t.explanation;
}

// ---------------------------------------------------------------------------
// Filter verdicts: MATCH:, [CULTURALLY_RELEVANT:], ISSUE:, EXPLANATION:

inline FilterVerdict parse_filter_verdict(std::string_view text, FilterKind kind) {
  auto s = detail::split_sections(text, {"MATCH:", "CULTURALLY_RELEVANT:", "ISSUE:", "EXPLANATION:"});
  if (!s[0].found) throw MalformedResponse("missing-match", "MATCH: not found");
  FilterVerdict v;
  auto match = detail::parse_bool_token(s[0].body);
  if (!match) throw MalformedResponse("bad-match-token", "MATCH: '" + s[0].body + "' is not True/False");
  v.match = *match;

  if (kind == FilterKind::mcq) {
    if (!s[1].found) throw MalformedResponse("missing-section", "CULTURALLY_RELEVANT: not found");
    auto cr = detail::parse_bool_token(s[1].body);
    if (!cr) throw MalformedResponse("bad-answer-token", "CULTURALLY_RELEVANT: '" + s[1].body + "' is not True/False");
    v.culturally_relevant = *cr;
  }

  if (s[2].found) {
    std::string_view token = s[2].body;
    token = detail::strip_decoration(token.substr(0, token.find('\n')));
    v.issue = Issue::Other;
    bool known = false;
    for (const auto& [issue, name] : kIssueNames)
      if (token.size() == name.size() && starts_with_icase(token, name)) {
        v.issue = issue;
        known = true;
        break;
      }
    if (!known) v.unknown_issue = std::string(token);
  } else {
    v.issue = v.match ? Issue::None : Issue::Other;
  }
  if (kind == FilterKind::vqa && v.issue == Issue::None && !v.match)
    throw MalformedResponse("inconsistent-verdict", "MATCH: False with ISSUE: None");
  v.explanation = s[3].body;
  return v;
}

inline std::string render_filter_verdict(const FilterVerdict& v) {
  std::string out = std::string("MATCH: ") + (v.match ? "True" : "False") + "\n";
  if (v.culturally_relevant) out += std::string("CULTURALLY_RELEVANT: ") + (*v.culturally_relevant ? "True" : "False") + "\n";
  out += "ISSUE: " + (v.unknown_issue.empty() ? std::string(to_string(v.issue)) : v.unknown_issue) + "\n";
  out += "EXPLANATION: " + v.explanation;
  return out;
}

// ---------------------------------------------------------------------------
// Leakage

// True when the normalized question contains the normalized label or any
// alias of `e` in `lang` or in English.
inline bool leakage_check(std::string_view question, const Entity& e, const LanguageCode& lang) {
  std::string q = normalize_text(question);
  auto hit = [&](const std::string& name) {
    std::string n = normalize_text(name);
    return !n.empty() && q.find(n) != std::string::npos;
  };
  for (const LanguageCode& code : {lang, LanguageCode("en")}) {
    if (auto it = e.labels.find(code); it != e.labels.end() && hit(it->second)) return true;
    if (auto it = e.aliases.find(code); it != e.aliases.end())
      for (const auto& a : it->second)
        if (hit(a)) return true;
  }
  return false;
}

}  // namespace kultur
