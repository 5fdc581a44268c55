#pragma once

#include <map>
#include <string>
#include <string_view>

// Prompt templates for the student/teacher contexts and for the extraction
// backend. Placeholders are written `{name}`; `{}` on its own is literal text.

namespace sgsd::prompts {

enum class Template {
  kStudent,
  kTeacher,
  kMemoryGeneration,
  kSuccessSkills,
  kFailureMistakes,
  kMergeSkills,
  kMergeMistakes,
};

std::string_view template_text(Template which);

using Inputs = std::map<std::string, std::string, std::less<>>;

// Single-pass substitution: inserted values are never rescanned. Throws
// std::invalid_argument naming the first placeholder without a value.
std::string render(Template which, const Inputs& inputs);
std::string render_text(std::string_view text, const Inputs& inputs);

}  // namespace sgsd::prompts
