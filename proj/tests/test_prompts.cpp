#include <gtest/gtest.h>

#include <set>

#include "kultur/prompts.hpp"

using namespace kultur;

namespace {

PromptContext einstein_ctx() {
  return {{"language_name", "English"},
          {"label", "Albert Einstein"},
          {"description", "German-born theoretical physicist"},
          {"region", "Germany"},
          {"question", "Where was Albert Einstein born?"},
          {"answer", "Albert Einstein was born in Ulm."},
          {"language", "English"},
          {"options_text", "A) Ulm\nB) Munich\nC) Bern\nD) Zurich"},
          {"correct_answer", "A) Ulm"},
          {"explanation", "He was born in Ulm in 1879."},
          {"question_type", "mcq"}};
}

const std::map<PromptKind, std::set<std::string>> kPlaceholders{
    {PromptKind::refine, {"language_name", "label", "description", "region", "question", "answer"}},
    {PromptKind::mcq, {"language_name", "label", "description", "region", "question", "answer"}},
    {PromptKind::truefalse, {"language_name", "label", "description", "region", "question", "answer"}},
    {PromptKind::vqa_filter, {"label", "description", "region", "language", "question", "answer"}},
    {PromptKind::mcq_filter,
     {"label", "description", "region", "language", "question_type", "question", "options_text", "correct_answer",
      "explanation"}},
};

// Transcribed independently of the library's template table.
const char* kEinsteinRefineUser =
    "Given this entity and context in English:\n"
    "Entity: Albert Einstein\n"
    "Description: German-born theoretical physicist\n"
    "Entity Region(Country): Germany\n"
    "Original Question: Where was Albert Einstein born?\n"
    "Original Answer: Albert Einstein was born in Ulm.\n"
    "\n"
    "Task: Create both a natural question and an answer for a visual question answering dataset focused on "
    "cultural recognition of entities in multilingual contexts.\n"
    "\n"
    "For the question:\n"
    "1. Maintain the precise property being asked about in the original question (like location, category, "
    "administrative territory, awards, etc.)\n"
    "2. Use natural, conversational phrasing in authentic English that a native speaker would use\n"
    "3. Do NOT reveal specific details about the entity in the question unless absolutely necessary\n"
    "4. Ensure cultural sensitivity and respect for local naming conventions and terminology\n"
    "5. Make the question grammatically correct, clear, and unambiguous\n"
    "6. Phrase it as if someone is looking at an image of this entity and asking about it\n"
    "7. Avoid awkward phrasing or other template artifacts\n"
    "\n"
    "For the answer:\n"
    "1. Ensure complete factual accuracy based on the provided information\n"
    "2. Use natural language appropriate for English with proper cultural context\n"
    "3. Include key factual details from the original answer and leave out any unnecessary information\n"
    "4. When appropriate, provide brief additional cultural context or significance of the entity\n"
    "5. Make sure to include the full entity name and keep the answer around the property being asked about\n"
    "6. Avoid vague phrases - be specific and informative. Ensure the answer is clear, concise, relevant, don't "
    "include unnecessary details.\n"
    "7. It is best to avoid adding new information unless it is a well-known fact about the entity that enhances "
    "understanding.\n"
    "8. We are grounding the model to cultural knowledge, so it is really important to be accurate and keep "
    "answers factually correct.\n"
    "9. The region/country of the entity Germany is provided to you for context, so please don't confuse the "
    "entity with other regions or countries.\n"
    "\n"
    "Format your response exactly as:\n"
    "Q: [your reformulated question]\n"
    "A: [your reformulated answer]";

const char* kVqaFilterTail =
    "Format your response exactly as (Notice and keep the line breaks):\n"
    "MATCH: [True/False]\n"
    "ISSUE: [None/ImageMismatch/MixedLanguage/FactualError/QAMismatch/Unclear]\n"
    "EXPLANATION: [Brief explanation of your assessment]";

const char* kMcqFilterTail =
    "MATCH: [True/False]\n"
    "CULTURALLY_RELEVANT: [True/False]\n"
    "ISSUE: [None/ImageMismatch/CulturalMismatch/IncorrectAnswer/MixedLanguage/PoorQuestion/FactualError/Other]\n"
    "EXPLANATION: [Brief explanation of your assessment]";

bool ends_with(const std::string& s, const std::string& tail) {
  return s.size() >= tail.size() && s.compare(s.size() - tail.size(), tail.size(), tail) == 0;
}

}  // namespace

TEST(RenderPrompt, RefineEinsteinIsByteExact) {
  auto req = render_prompt(PromptKind::refine, einstein_ctx());
  EXPECT_EQ(req.user_text, kEinsteinRefineUser);
  EXPECT_NE(req.user_text.find("Entity: Albert Einstein"), std::string::npos);
  EXPECT_NE(req.user_text.find("Do NOT reveal specific details about the entity"), std::string::npos);
  EXPECT_EQ(req.system_text.rfind("You are a cultural expert specializing in creating high-quality, culturally sensitive questions", 0), 0u);
}

TEST(RenderPrompt, SystemPromptOpenings) {
  auto ctx = einstein_ctx();
  EXPECT_NE(render_prompt(PromptKind::mcq, ctx).system_text.find("creates high-quality multiple-choice questions"), std::string::npos);
  EXPECT_NE(render_prompt(PromptKind::vqa_filter, ctx).system_text.find("evaluating whether images match with cultural entities"),
            std::string::npos);
  EXPECT_NE(render_prompt(PromptKind::truefalse, ctx).system_text.find("true/false statements/questions"), std::string::npos);
}

TEST(RenderPrompt, ResponseFormatBlocks) {
  auto ctx = einstein_ctx();
  EXPECT_TRUE(ends_with(render_prompt(PromptKind::vqa_filter, ctx).user_text, kVqaFilterTail));
  EXPECT_TRUE(ends_with(render_prompt(PromptKind::mcq_filter, ctx).user_text, kMcqFilterTail));
  const auto mcq = render_prompt(PromptKind::mcq, ctx).user_text;
  EXPECT_NE(mcq.find("1. Option A should ALWAYS be the correct answer"), std::string::npos);
  EXPECT_NE(mcq.find("Correct: A"), std::string::npos);
  const auto tf = render_prompt(PromptKind::truefalse, ctx).user_text;
  EXPECT_NE(tf.find("Answer: [True/False]"), std::string::npos);
}

TEST(RenderPrompt, EachKindUsesExactlyItsPlaceholders) {
  for (const auto& [kind, names] : kPlaceholders) {
    PromptContext ctx;
    for (const auto& n : names) ctx[n] = "<" + n + ">";
    auto req = render_prompt(kind, ctx);
    for (const auto& n : names) EXPECT_NE(req.user_text.find("<" + n + ">"), std::string::npos) << to_string(kind) << " " << n;
    // Every placeholder is required.
    for (const auto& n : names) {
      auto partial = ctx;
      partial.erase(n);
      try {
        render_prompt(kind, partial);
        ADD_FAILURE() << to_string(kind) << " rendered without " << n;
      } catch (const MissingField& e) {
        EXPECT_EQ(e.field, n);
      }
    }
  }
}

TEST(RenderPrompt, MissingRegionNamesTheField) {
  auto ctx = einstein_ctx();
  ctx.erase("region");
  try {
    render_prompt(PromptKind::refine, ctx);
    FAIL();
  } catch (const MissingField& e) {
    EXPECT_EQ(e.field, "region");
  }
}

TEST(RenderPrompt, NoPlaceholderSurvivesAndValuesAreNotReexpanded) {
  auto ctx = einstein_ctx();
  ctx["label"] = "{region}";
  for (const auto& [kind, names] : kPlaceholders) {
    auto req = render_prompt(kind, ctx);
    for (const auto& n : names) {
      if (n == "region") continue;
      EXPECT_EQ(req.user_text.find("{" + n + "}"), std::string::npos) << to_string(kind);
    }
    const bool kept = req.user_text.find("Label: {region}") != std::string::npos ||
                      req.user_text.find("Entity: {region}") != std::string::npos;
    EXPECT_TRUE(kept) << to_string(kind);
  }
}

TEST(RenderPrompt, DeterministicAndHashSensitive) {
  auto ctx = einstein_ctx();
  auto a = render_prompt(PromptKind::refine, ctx);
  auto b = render_prompt(PromptKind::refine, ctx);
  EXPECT_EQ(a.user_text, b.user_text);
  EXPECT_EQ(a.system_text, b.system_text);
  EXPECT_EQ(request_hash(a), request_hash(b));
  EXPECT_NE(request_hash(a), request_hash(a, 1));
  EXPECT_NE(request_hash(a, 1), request_hash(a, 2));

  // Metadata does not participate in the replay key.
  auto c = render_prompt(PromptKind::refine, ctx, std::nullopt, RequestMeta{"Q937", "en", "Q183", {"r1"}});
  EXPECT_EQ(request_hash(a), request_hash(c));

  auto img = make_image_ref("Einstein 1921.jpg", ImageSource::p18);
  auto f1 = render_prompt(PromptKind::vqa_filter, ctx);
  auto f2 = render_prompt(PromptKind::vqa_filter, ctx, img);
  EXPECT_NE(request_hash(f1), request_hash(f2));

  ctx["answer"] += " ";
  EXPECT_NE(request_hash(render_prompt(PromptKind::refine, ctx)), request_hash(a));
}

TEST(RenderPrompt, OnlyFilterKindsCarryImages) {
  auto img = make_image_ref("Einstein 1921.jpg", ImageSource::p18);
  auto ctx = einstein_ctx();
  EXPECT_THROW(render_prompt(PromptKind::refine, ctx, img), Error);
  EXPECT_THROW(render_prompt(PromptKind::mcq, ctx, img), Error);
  EXPECT_THROW(render_prompt(PromptKind::truefalse, ctx, img), Error);
  EXPECT_TRUE(render_prompt(PromptKind::mcq_filter, ctx, img).image.has_value());
}
