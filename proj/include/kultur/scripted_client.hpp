#pragma once

// Deterministic offline ModelClient. It reads the fields back out of a
// rendered prompt and answers in the expected response grammar, so whole
// pipeline runs can be recorded and replayed without a model. A fixed share
// of answers is deliberately bad (name leaks, malformed first attempts,
// negative verdicts) to exercise the reject paths.

#include <mutex>
#include <set>
#include <string>

#include "kultur/gateway.hpp"

namespace kultur {

struct ScriptedBehavior {
  unsigned leak_every = 10;       // refine: question names the entity
  unsigned malformed_every = 17;  // first attempt breaks the grammar
  unsigned reject_every = 8;      // filters: negative verdict
};

class ScriptedModelClient : public ModelClient {
 public:
  explicit ScriptedModelClient(ScriptedBehavior b = {}) : b_(b) {}

  std::string complete(const std::string& system_text, const std::string& user_text,
                       const std::optional<ImageRef>& image) override {
    const std::uint64_t h = StableHasher().add(system_text).add(user_text).add(image ? image->commons_title : "").value();
    bool first = false;
    {
      std::lock_guard lock(mu_);
      first = seen_.insert(h).second;
    }
    const bool broken = first && every(h >> 8, b_.malformed_every);
    if (system_text == prompts::kRefineSystem) return refine(user_text, h, broken);
    if (system_text == prompts::kMcqSystem) return mcq(user_text, h, broken);
    if (system_text == prompts::kTrueFalseSystem) return truefalse(user_text, h, broken);
    if (system_text == prompts::kVqaFilterSystem) return vqa_filter(h);
    if (system_text == prompts::kMcqFilterSystem) return mcq_filter(h);
    throw ModelRefusal("scripted client: unrecognised system prompt");
  }

 private:
  static bool every(std::uint64_t h, unsigned n) { return n > 0 && h % n == 0; }

  static std::string field(const std::string& text, std::string_view name) {
    std::string prefix = std::string(name) + ": ";
    std::size_t pos = 0;
    while (pos < text.size()) {
      auto end = text.find('\n', pos);
      if (end == std::string::npos) end = text.size();
      std::string_view line(text.data() + pos, end - pos);
      if (line.substr(0, prefix.size()) == prefix) return std::string(line.substr(prefix.size()));
      pos = end + 1;
    }
    return {};
  }

  std::string refine(const std::string& u, std::uint64_t h, bool broken) const {
    if (broken) return "A: " + field(u, "Original Answer");
    std::string q = field(u, "Original Question");
    if (every(h >> 16, b_.leak_every)) q = field(u, "Entity") + ": " + q;
    return "Q: " + q + "\nA: " + field(u, "Original Answer");
  }

  std::string mcq(const std::string& u, std::uint64_t h, bool broken) const {
    std::string answer = field(u, "Original Answer");
    std::string region = field(u, "Region/Country");
    return "Q: " + field(u, "Original Question") + "\nA) " + answer + "\nB) " + region + " (1)\nC) " + region + " (2)\nD) " +
           region + " (3)\nCorrect: " + (broken ? "C" : "A") + "\nExplanation: " + field(u, "Description") + " [" +
           std::to_string(h % 1000) + "]";
  }

  std::string truefalse(const std::string& u, std::uint64_t h, bool broken) const {
    std::string region = field(u, "Region/Country");
    std::string verdict = broken ? "Maybe" : ((h >> 4) % 2 ? "True" : "False");
    if ((h >> 12) % 2)
      return "Statement: This entity is associated with " + region + ".\nAnswer: " + verdict + "\nExplanation: " +
             field(u, "Description");
    return "Question: Is this entity associated with " + region + "?\nAnswer: " + verdict + "\nExplanation: " +
           field(u, "Description");
  }

  std::string vqa_filter(std::uint64_t h) const {
    if (every(h >> 20, b_.reject_every)) return "MATCH: False\nISSUE: ImageMismatch\nEXPLANATION: The image shows something else.";
    return "MATCH: True\nISSUE: None\nEXPLANATION: The image plausibly shows the entity.";
  }

  std::string mcq_filter(std::uint64_t h) const {
    if (every(h >> 20, b_.reject_every))
      return "MATCH: True\nCULTURALLY_RELEVANT: False\nISSUE: CulturalMismatch\nEXPLANATION: Not specific to the region.";
    return "MATCH: True\nCULTURALLY_RELEVANT: True\nISSUE: None\nEXPLANATION: Acceptable item.";
  }

  ScriptedBehavior b_;
  std::mutex mu_;
  std::set<std::uint64_t> seen_;
};

}  // namespace kultur
