#include "scenarios.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace sgsd::testing {

std::vector<std::string> distinct_tags(const policy::PolicyShape& shape, const std::string& prefix, int count,
                                       std::vector<int>& taken) {
  std::vector<std::string> out;
  for (int i = 0; static_cast<int>(out.size()) < count; ++i) {
    const auto tag = prefix + "-" + std::to_string(i);
    const int bucket = policy::tag_bucket(shape, tag);
    if (std::find(taken.begin(), taken.end(), bucket) != taken.end()) continue;
    taken.push_back(bucket);
    out.push_back(tag);
  }
  return out;
}

skillbank::GeneralSkill make_skill(int index, const std::string& title, std::vector<std::string> tags) {
  skillbank::GeneralSkill s;
  s.skill_id = skillbank::format_id("gen", static_cast<std::size_t>(index));
  s.title = title;
  s.principle = "Principle for " + title + ".";
  s.when_to_apply = "When " + title + " applies.";
  s.tags = std::move(tags);
  return s;
}

skillbank::CommonMistake make_mistake(int index, const std::string& description, std::vector<std::string> tags) {
  skillbank::CommonMistake m;
  m.mistake_id = skillbank::format_id("err", static_cast<std::size_t>(index));
  m.description = description;
  m.why_it_happens = "Because of " + description + ".";
  m.how_to_avoid = "Avoid " + description + ".";
  m.tags = std::move(tags);
  return m;
}

SeededScenario seeded_polarity_scenario(const env::TaskInstance& task, const policy::PolicyShape& shape,
                                        double bias) {
  SeededScenario sc{policy::ToyPolicy(shape), {}, "", ""};
  auto& model = sc.policy;
  const int vocab = shape.vocab_size;
  const int end = shape.end_token();

  // Student: first token is a digit, then the end token.
  auto start = model.prev_row(vocab);
  for (int v = 0; v < vocab; ++v) start[v] = v <= 9 ? 2.0 : -2.0;
  for (int d = 0; d <= 9; ++d) model.prev_row(d)[end] = 10.0;

  std::vector<int> taken;
  const auto skill_tags = distinct_tags(shape, "seeded-skill", 2, taken);
  const auto mistake_tags = distinct_tags(shape, "seeded-mistake", 2, taken);

  std::vector<bool> truth(static_cast<std::size_t>(vocab), false);
  for (char c : task.answer) truth[static_cast<std::size_t>(c - '0')] = true;
  truth[static_cast<std::size_t>(end)] = true;

  auto helpful = model.bucket_row(policy::tag_bucket(shape, skill_tags[0]));
  auto misleading = model.bucket_row(policy::tag_bucket(shape, skill_tags[1]));
  for (int v = 0; v < vocab; ++v) {
    if (truth[static_cast<std::size_t>(v)]) {
      helpful[v] = bias;
    } else {
      misleading[v] = bias;
    }
  }

  sc.bank.general_skills.push_back(make_skill(1, "Confirm the reduced value", {skill_tags[0]}));
  sc.bank.general_skills.push_back(make_skill(2, "Trust the first guess", {skill_tags[1]}));
  sc.bank.common_mistakes.push_back(make_mistake(1, "Skipping the reduction", {mistake_tags[0]}));
  sc.bank.common_mistakes.push_back(make_mistake(2, "Dropping a carry", {mistake_tags[1]}));
  sc.helpful_skill = "gen_001";
  sc.misleading_skill = "gen_002";
  return sc;
}

skillbank::SkillBank misleading_rich_bank(policy::ToyPolicy& model, int count, policy::Token token, double bias) {
  const auto& shape = model.shape();
  std::vector<int> taken;
  const auto skill_tags = distinct_tags(shape, "misleading-skill", count, taken);
  const auto mistake_tags = distinct_tags(shape, "neutral-mistake", count, taken);
  skillbank::SkillBank bank;
  for (int i = 0; i < count; ++i) {
    auto row = model.bucket_row(policy::tag_bucket(shape, skill_tags[static_cast<std::size_t>(i)]));
    std::fill(row.begin(), row.end(), 0.0);
    row[token] = bias;
    auto mrow = model.bucket_row(policy::tag_bucket(shape, mistake_tags[static_cast<std::size_t>(i)]));
    std::fill(mrow.begin(), mrow.end(), 0.0);
    bank.general_skills.push_back(
        make_skill(i + 1, "Shortcut pattern " + std::to_string(i), {skill_tags[static_cast<std::size_t>(i)]}));
    bank.common_mistakes.push_back(
        make_mistake(i + 1, "Generic slip " + std::to_string(i), {mistake_tags[static_cast<std::size_t>(i)]}));
  }
  return bank;
}

trainer::RunConfig tiny_config() {
  trainer::RunConfig c;
  c.steps = 10;
  c.cold_start.problems = 16;
  c.env.task_count = 4;
  c.eval_samples = 4;
  c.evolution.frequency = 5;
  c.checkpoint_interval = 0;
  return c;
}

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("sgsd_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string example_bank_text() {
  return R"({
  "general_skills": [
    {
      "skill_id": "gen_001",
      "title": "Translate Constraints to Algebra",
      "principle": "Convert stated constraints into algebraic relations.",
      "when_to_apply": "When variables are governed by explicit conditions."
    }
  ],
  "common_mistakes": [
    {
      "mistake_id": "err_001",
      "description": "Skipping the constraint model.",
      "why_it_happens": "The solver starts computing before formalizing conditions.",
      "how_to_avoid": "Restate the configuration before deriving equations."
    }
  ],
  "metadata": {
    "source": "hierarchical merge from raw candidates",
    "merge_group_size": 32,
    "merge_stagnation_patience": 3
  }
}
)";
}

}  // namespace sgsd::testing
