#include "sgsd/prompts.hpp"

#include <cctype>
#include <stdexcept>

namespace sgsd::prompts {

namespace {

constexpr std::string_view kStudentText = R"(Problem: {problem}

Please reason step by step, and put your final answer within \boxed{}.)";

constexpr std::string_view kTeacherText =
    R"(You may use the following retrieved math-reasoning guidance as soft guidance.
Solve the current problem independently and do not quote it verbatim.

### General Principles
- **{skill.title}**: {skill.principle}
  _Apply when: {skill.when_to_apply}_

### Mistakes to Avoid
- **Don't**: {mistake.description}
  **Instead**: {mistake.how_to_avoid}

Problem: {problem}

Please reason step by step, and put your final answer within \boxed{}.)";

constexpr std::string_view kMemoryGenerationText = R"(You are a careful mathematical problem-solving agent.

Solve the following problem step by step. Keep the reasoning coherent and self-contained, and end with a single final answer enclosed in \boxed{}.

Problem:
{problem})";

constexpr std::string_view kSuccessSkillsText =
    R"(You are an expert at distilling mathematical reasoning behavior into concise, reusable skills for a reinforcement-learning agent.

You will be given ONE successful math problem-solving memory. The memory contains the original problem, a compact reasoning trajectory, and a summarized raw attempt.

Your task:
1. Derive 1-3 GENERAL skills that likely contributed to the success.
2. Each skill must be broadly reusable across algebra, geometry, number theory, combinatorics, and olympiad-style reasoning.
3. Phrase each skill as an actionable principle; avoid task-specific constants, entity names, or one-off details unless they express a general method.
4. Merge overlapping ideas inside this response; do not output near-duplicate skills.
5. Use only evidence grounded in the provided memory.

Successful memory:
{memory_json}

Return ONLY valid JSON with key general_skills.)";

constexpr std::string_view kFailureMistakesText =
    R"(You are an expert at analyzing failed mathematical reasoning and turning failures into concise, reusable cautionary skills for a reinforcement-learning agent.

You will be given ONE failed math problem-solving memory. The memory contains the original problem, summarized failure evidence, and the raw final attempt.

Your task:
1. Derive 1-3 COMMON mistakes that explain the failure.
2. Each item must describe a general failure mode, why it happens, and how to avoid it in future math reasoning.
3. Make every item broadly reusable across algebra, geometry, number theory, combinatorics, and olympiad-style reasoning.
4. Merge overlapping ideas inside this response; do not output near-duplicate mistakes.
5. Use only evidence grounded in the provided memory.

Failed memory:
{memory_json}

Return ONLY valid JSON with key common_mistakes.)";

constexpr std::string_view kMergeSkillsText =
    R"(You are an expert at consolidating independently-generated math skills into a compact, non-redundant skill bank.

You will be given up to 32 general skills extracted from different memories. Some are duplicates, some partially overlap, and some are unique.

Your task:
1. Merge semantically duplicate or strongly overlapping skills.
2. Preserve all unique insights.
3. Prefer the most general, transferable wording.
4. Treat recurrence as evidence that the pattern is systematic and synthesize one stronger skill.
5. Do not force a fixed final count.
6. Do not mention specific problems, source memories, or dataset names.

General skills to merge:
{items_json}

Return ONLY valid JSON with key general_skills.)";

constexpr std::string_view kMergeMistakesText =
    R"(You are an expert at consolidating independently-generated math failure lessons into a compact, non-redundant caution bank.

You will be given up to 32 common-mistake items extracted from different memories. Some are duplicates, some partially overlap, and some are unique.

Your task:
1. Merge semantically duplicate or strongly overlapping mistakes.
2. Preserve all unique insights.
3. Prefer the most general, transferable wording.
4. Treat recurrence as evidence that the failure pattern is systematic and synthesize one stronger mistake item.
5. Do not force a fixed final count.
6. Do not mention specific problems, source memories, or dataset names.

Common mistakes to merge:
{items_json}

Return ONLY valid JSON with key common_mistakes.)";

bool is_name_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_' || c == '.';
}

}  // namespace

std::string_view template_text(Template which) {
  switch (which) {
    case Template::kStudent: return kStudentText;
    case Template::kTeacher: return kTeacherText;
    case Template::kMemoryGeneration: return kMemoryGenerationText;
    case Template::kSuccessSkills: return kSuccessSkillsText;
    case Template::kFailureMistakes: return kFailureMistakesText;
    case Template::kMergeSkills: return kMergeSkillsText;
    case Template::kMergeMistakes: return kMergeMistakesText;
  }
  throw std::invalid_argument("unknown prompt template");
}

std::string render_text(std::string_view text, const Inputs& inputs) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '{') {
      std::size_t j = i + 1;
      while (j < text.size() && is_name_char(text[j])) ++j;
      if (j > i + 1 && j < text.size() && text[j] == '}') {
        const auto name = text.substr(i + 1, j - i - 1);
        const auto it = inputs.find(name);
        if (it == inputs.end()) {
          throw std::invalid_argument("missing value for placeholder {" + std::string(name) + "}");
        }
        out += it->second;
        i = j + 1;
        continue;
      }
    }
    out.push_back(text[i]);
    ++i;
  }
  return out;
}

std::string render(Template which, const Inputs& inputs) {
  return render_text(template_text(which), inputs);
}

}  // namespace sgsd::prompts
