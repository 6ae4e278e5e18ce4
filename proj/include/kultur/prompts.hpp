#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kultur/images.hpp"
#include "kultur/text.hpp"

namespace kultur {

enum class PromptKind { refine, mcq, truefalse, vqa_filter, mcq_filter };

inline const char* to_string(PromptKind k) {
  switch (k) {
    case PromptKind::refine: return "refine";
    case PromptKind::mcq: return "mcq";
    case PromptKind::truefalse: return "truefalse";
    case PromptKind::vqa_filter: return "vqa-filter";
    case PromptKind::mcq_filter: return "mcq-filter";
  }
  return "?";
}

inline bool is_filter(PromptKind k) { return k == PromptKind::vqa_filter || k == PromptKind::mcq_filter; }

namespace prompts {

// Placeholders are substituted verbatim by render_prompt().

inline constexpr std::string_view kRefineSystem = R"prompt(You are a cultural expert specializing in creating high-quality, culturally sensitive questions and answers about diverse entities from around the world. Your goal is to create natural-sounding questions and factually accurate answers that respect cultural nuances while maintaining value about important properties of entities such as location, category, administrative territory, and other key attributes.)prompt";

inline constexpr std::string_view kRefineUser = R"prompt(Given this entity and context in {language_name}:
Entity: {label}
Description: {description}
Entity Region(Country): {region}
Original Question: {question}
Original Answer: {answer}

Task: Create both a natural question and an answer for a visual question answering dataset focused on cultural recognition of entities in multilingual contexts.

For the question:
1. Maintain the precise property being asked about in the original question (like location, category, administrative territory, awards, etc.)
2. Use natural, conversational phrasing in authentic {language_name} that a native speaker would use
3. Do NOT reveal specific details about the entity in the question unless absolutely necessary
4. Ensure cultural sensitivity and respect for local naming conventions and terminology
5. Make the question grammatically correct, clear, and unambiguous
6. Phrase it as if someone is looking at an image of this entity and asking about it
7. Avoid awkward phrasing or other template artifacts

For the answer:
1. Ensure complete factual accuracy based on the provided information
2. Use natural language appropriate for {language_name} with proper cultural context
3. Include key factual details from the original answer and leave out any unnecessary information
4. When appropriate, provide brief additional cultural context or significance of the entity
5. Make sure to include the full entity name and keep the answer around the property being asked about
6. Avoid vague phrases - be specific and informative. Ensure the answer is clear, concise, relevant, don't include unnecessary details.
7. It is best to avoid adding new information unless it is a well-known fact about the entity that enhances understanding.
8. We are grounding the model to cultural knowledge, so it is really important to be accurate and keep answers factually correct.
9. The region/country of the entity {region} is provided to you for context, so please don't confuse the entity with other regions or countries.

Format your response exactly as:
Q: [your reformulated question]
A: [your reformulated answer])prompt";

inline constexpr std::string_view kMcqSystem = R"prompt(You are a cultural expert who creates high-quality multiple-choice questions about entities while preserving cultural context, and authenticity.)prompt";

inline constexpr std::string_view kMcqUser = R"prompt(Given this entity and context in {language_name}:
Entity: {label}
Description: {description}
Original Question: {question}
Original Answer: {answer}
Region/Country: {region}

Task: Create a multiple-choice question with four options (A, B, C, D) based on the cultural entity.

For the multiple-choice question:
1. Maintain the original topic but use natural, engaging phrasing in {language_name}
2. NEVER reveal specific details about the entity in the question unless necessary
3. Respect cultural context and sensitivity
4. Make it grammatically correct, clear, and culturally relevant
5. Vary question formats beyond basic identification
6. Create questions with appropriate difficulty level
7. Aim for questions that test deeper cultural knowledge
8. Keep the entity as the grounding point

For the options:
1. Option A should ALWAYS be the correct answer
2. Create three plausible but incorrect options (B, C, D)
3. All options should be culturally accurate, sensible, and realistic
4. Ensure all options are similar in length and format
5. All incorrect options should be from the same general category
6. Options should represent meaningful distinctions but yet plausible and challenging within the cultural/regional context

For the explanation:
1. Briefly explain why option A is correct
2. Include relevant cultural or historical context
3. Keep explanation concise but informative (1-3 sentences)
4. Keep the entity as the grounding point

Example format will be provided based on language context.

Create a multiple-choice question for this entity in exactly this format:
Q: [your multiple-choice question]
A) [correct answer]
B) [plausible incorrect option]
C) [plausible incorrect option]
D) [plausible incorrect option]
Correct: A
Explanation: [brief explanation with cultural context])prompt";

inline constexpr std::string_view kTrueFalseSystem = R"prompt(You are a cultural expert who creates clear and culturally-sensitive true/false statements/questions about entities that test understanding while preserving authenticity.)prompt";

inline constexpr std::string_view kTrueFalseUser = R"prompt(Given this entity and context in {language_name}:
Entity: {label}
Description: {description}
Original Question: {question}
Original Answer: {answer}
Region/Country: {region}

Task: Create a true/false statement based on the cultural entity.

For the statement/question:
1. Create either a clear statement OR a yes/no question about the entity in {language_name}
2. Mix between statements and questions for variety
3. Make it unambiguous - clearly either true or false
4. Test meaningful cultural knowledge, not trivial details
5. Respect cultural sensitivity
6. Keep the entity as the central focus
7. Vary between true and false answers for diversity

For the explanation:
1. Briefly explain why the statement is true or false
2. Include relevant cultural or historical context
3. Keep it concise (1-2 sentences)

Example format will be provided based on language context.

Create a true/false item for this entity in exactly this format:
Statement: [your true/false statement]
Answer: [True/False]
Explanation: [brief explanation]

OR

Question: [your true/false question]
Answer: [True/False]
Explanation: [brief explanation])prompt";

inline constexpr std::string_view kVqaFilterSystem = R"prompt(You are an expert at evaluating whether images match with cultural entities and their descriptions. You assess alignment between visual content and textual information.)prompt";

inline constexpr std::string_view kVqaFilterUser = R"prompt(Evaluate this VQA sample for quality and alignment.

Entity Information:
Label: {label}
Description: {description}
Region/Country: {region}
Language: {language}
Question: {question}
Answer: {answer}

Your task is to determine:
1. Does the image show or reasonably represent the entity described?
2. Are there any quality issues with this sample?

Common issues to check for:
1. Image completely unrelated to the entity (e.g., entity is about a person, but image is of animal. Or entity is about park but image show city, or entity is about a person but image is of a building)
2. Mixed languages in question or answer
3. Obvious factual errors in the answer that you can confirm and very sure about
4. Question and answer mismatch
5. Corrupted or incomplete answer

If you are not sure about the answer:
1. Treat sample as match and no issue
2. We are mostly concerned with the image being completely irrelevant to the entity and we understand some models may not know some long-tail entities
3. So unless there is a clear mismatch or quality issue in rephrased question/answer, treat it as match

Other considerations:
1. If the question asks about education or birth place or other entity properties, treat it as a match if the image is related to the entity, even if it does not show the specific property
2. If the image is not provided, treat it as match unless the answer is clearly unrelated to the entity or has problematic issues mentioned above
3. I repeat, if you are not sure about your answer and can not confirm it which might happen alot with long-tail entities, treat it as match and no issue

Format your response exactly as (Notice and keep the line breaks):
MATCH: [True/False]
ISSUE: [None/ImageMismatch/MixedLanguage/FactualError/QAMismatch/Unclear]
EXPLANATION: [Brief explanation of your assessment])prompt";

inline constexpr std::string_view kMcqFilterSystem = R"prompt(You are an expert at evaluating MCQ quality and cultural alignment. You assess whether questions match with cultural entities and check for quality issues.)prompt";

inline constexpr std::string_view kMcqFilterUser = R"prompt(Evaluate this MCQ sample for quality and alignment.

Entity Information:
Label: {label}
Description: {description}
Region/Country: {region}
Language: {language}
Question Type: {question_type}
Question: {question}
Options: {options_text}
Correct Answer: {correct_answer}
Explanation: {explanation}

Your task is to determine:
1. Does the image (if present) reasonably represent the entity described?
2. Is the question culturally relevant to the specified region?
3. Are there any quality issues with this MCQ?

Common issues to check for:
1. Image completely unrelated to the entity or question
2. Question not relevant to the cultural context or region
3. Incorrect answer or poor explanation
4. Mixed languages in question, options, or explanation
5. Poorly formed question or confusing options
6. Factual errors you can confirm

Guidelines:
1. If you are not sure about cultural relevance or correctness, treat it as acceptable
2. Focus on obvious mismatches and clear quality issues
3. For questions without images, focus on cultural relevance and question quality
4. Consider regional context when evaluating cultural appropriateness

Format your response exactly as:
MATCH: [True/False]
CULTURALLY_RELEVANT: [True/False]
ISSUE: [None/ImageMismatch/CulturalMismatch/IncorrectAnswer/MixedLanguage/PoorQuestion/FactualError/Other]
EXPLANATION: [Brief explanation of your assessment])prompt";

}  // namespace prompts

struct PromptTemplate {
  std::string_view system;
  std::string_view user;
};

inline PromptTemplate prompt_template(PromptKind kind) {
  switch (kind) {
    case PromptKind::refine: return {prompts::kRefineSystem, prompts::kRefineUser};
    case PromptKind::mcq: return {prompts::kMcqSystem, prompts::kMcqUser};
    case PromptKind::truefalse: return {prompts::kTrueFalseSystem, prompts::kTrueFalseUser};
    case PromptKind::vqa_filter: return {prompts::kVqaFilterSystem, prompts::kVqaFilterUser};
    case PromptKind::mcq_filter: return {prompts::kMcqFilterSystem, prompts::kMcqFilterUser};
  }
  throw Error("unknown prompt kind");
}

struct RequestMeta {
  std::string entity_id;
  std::string language;
  std::string region;
  std::vector<std::string> record_ids;
};

struct PromptRequest {
  PromptKind kind = PromptKind::refine;
  std::string system_text;
  std::string user_text;
  std::optional<ImageRef> image;
  RequestMeta meta;
};

using PromptContext = std::map<std::string, std::string>;

// Throws MissingField naming the first placeholder absent from `ctx`.
inline PromptRequest render_prompt(PromptKind kind, const PromptContext& ctx, std::optional<ImageRef> image = std::nullopt,
                                   RequestMeta meta = {}) {
  if (image && !is_filter(kind)) throw Error(std::string(to_string(kind)) + " prompts carry no image");
  PromptTemplate t = prompt_template(kind);
  return {kind, substitute(t.system, ctx), substitute(t.user, ctx), std::move(image), std::move(meta)};
}

// Replay key over (kind, system, user, image title). Retries of a malformed
// response use attempt > 0 so each attempt has its own replay entry.
inline std::string request_hash(const PromptRequest& req, int attempt = 0) {
  StableHasher h;
  h.add(to_string(req.kind)).add(req.system_text).add(req.user_text).add(req.image ? req.image->commons_title : "");
  if (attempt > 0) h.add("attempt:" + std::to_string(attempt));
  return h.hex();
}

}  // namespace kultur
