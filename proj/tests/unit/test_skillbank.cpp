#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>

#include "scenarios.hpp"
#include "sgsd/error.hpp"
#include "sgsd/skillbank.hpp"

using namespace sgsd;
using namespace sgsd::skillbank;
using nlohmann::json;

namespace {

std::string random_text(std::mt19937_64& rng) {
  static const std::vector<std::string> pieces{"carry", "mod ", "Ω", "\"quoted\"", "line\nbreak", "tab\t", "é", "{x}",
                                               "reduce", "\\", "7"};
  std::uniform_int_distribution<std::size_t> pick(0, pieces.size() - 1);
  std::string s;
  for (int i = 0; i < 1 + static_cast<int>(rng() % 5); ++i) s += pieces[pick(rng)];
  return s;
}

SkillBank random_bank(std::mt19937_64& rng) {
  SkillBank bank;
  const auto skills = rng() % 6;
  const auto mistakes = rng() % 6;
  for (std::size_t i = 0; i < skills; ++i) {
    GeneralSkill s;
    s.skill_id = format_id("gen", i + 1 + rng() % 3 * 100);
    s.title = random_text(rng);
    s.principle = random_text(rng);
    s.when_to_apply = random_text(rng);
    s.origin = rng() % 2 ? Origin::kDynamic : Origin::kStatic;
    if (rng() % 2) s.tags = {random_text(rng), random_text(rng)};
    if (rng() % 3 == 0) s.extra["confidence"] = static_cast<double>(rng() % 100) / 100.0;
    bank.general_skills.push_back(std::move(s));
  }
  for (std::size_t i = 0; i < mistakes; ++i) {
    CommonMistake m;
    m.mistake_id = format_id("err", i + 1);
    m.description = random_text(rng);
    m.why_it_happens = random_text(rng);
    m.how_to_avoid = random_text(rng);
    m.origin = rng() % 2 ? Origin::kDynamic : Origin::kStatic;
    if (rng() % 3 == 0) m.extra["severity"] = json::array({1, "two"});
    bank.common_mistakes.push_back(std::move(m));
  }
  bank.metadata.merge_group_size = 1 + static_cast<int>(rng() % 64);
  bank.metadata.merge_stagnation_patience = 1 + static_cast<int>(rng() % 5);
  if (rng() % 2) bank.metadata.skill_layer_counts = {9, 5, 3};
  if (rng() % 2) bank.metadata.extra["note"] = random_text(rng);
  if (rng() % 4 == 0) bank.extra["version"] = 2;
  return bank;
}

json skill_item(const std::string& title) {
  return {{"title", title}, {"principle", "p " + title}, {"when_to_apply", "w " + title}};
}

json mistake_item(const std::string& description) {
  return {{"description", description}, {"why_it_happens", "w"}, {"how_to_avoid", "h"}};
}

// Returns one fresh, uniquely titled candidate per extraction call and passes
// merge groups through unchanged.
class CountingExtractor final : public extraction::Extractor {
 public:
  extraction::ExtractionResult extract(const extraction::ExtractionRequest& request) override {
    using extraction::RequestKind;
    extraction::ExtractionResult r;
    switch (request.kind) {
      case RequestKind::kSuccessSkills:
        r.items.push_back(skill_item("fresh skill " + std::to_string(++calls)));
        return r;
      case RequestKind::kFailureMistakes:
        r.items.push_back(mistake_item("fresh mistake " + std::to_string(++calls)));
        return r;
      default:
        return merge.extract(request);
    }
  }
  int calls = 0;
  extraction::MockExtractor merge{{extraction::MockMergeMode::kIdentity}};
};

class ThrowingExtractor final : public extraction::Extractor {
 public:
  extraction::ExtractionResult extract(const extraction::ExtractionRequest&) override {
    throw ExtractionError("backend down");
  }
};

class FixedEmbedder final : public Embedder {
 public:
  std::map<std::string, std::vector<double>, std::less<>> table;
  std::vector<double> embed(std::string_view text) const override {
    for (const auto& [key, v] : table) {
      if (text.find(key) != std::string_view::npos) return v;
    }
    return std::vector<double>(3, 0.0);
  }
};

std::vector<MemoryRecord> window_of(int successes, int failures) {
  std::vector<MemoryRecord> w;
  for (int i = 0; i < successes + failures; ++i) {
    MemoryRecord m;
    m.problem = "problem " + std::to_string(i);
    m.reward = i < successes ? 1 : -1;
    w.push_back(m);
  }
  return w;
}

SkillBank static_bank(int skills, int mistakes) {
  SkillBank b;
  for (int i = 1; i <= skills; ++i) b.general_skills.push_back(testing::make_skill(i, "static " + std::to_string(i), {}));
  for (int i = 1; i <= mistakes; ++i) {
    b.common_mistakes.push_back(testing::make_mistake(i, "static " + std::to_string(i), {}));
  }
  return b;
}

}  // namespace

TEST_CASE("example bank loads and round-trips") {
  const auto dir = testing::fresh_dir("bank_example");
  {
    std::ofstream(dir / "example.json") << testing::example_bank_text();
  }
  const auto bank = load_bank(dir / "example.json");
  REQUIRE(bank.general_skills.size() == 1);
  REQUIRE(bank.common_mistakes.size() == 1);
  CHECK(bank.general_skills[0].skill_id == "gen_001");
  CHECK(bank.general_skills[0].title == "Translate Constraints to Algebra");
  CHECK(bank.common_mistakes[0].how_to_avoid == "Restate the configuration before deriving equations.");
  CHECK(bank.general_skills[0].origin == Origin::kStatic);
  CHECK(bank.metadata.merge_group_size == 32);
  CHECK(bank.metadata.merge_stagnation_patience == 3);
  save_bank(bank, dir / "again.json");
  CHECK(load_bank(dir / "again.json") == bank);
  CHECK(json::parse(testing::read_file(dir / "again.json"))["general_skills"][0]["title"] ==
        "Translate Constraints to Algebra");
}

TEST_CASE("randomized persistence round trip") {
  const auto dir = testing::fresh_dir("bank_roundtrip");
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 100; ++i) {
    const auto bank = random_bank(rng);
    save_bank(bank, dir / "bank.json");
    CHECK(load_bank(dir / "bank.json") == bank);
    CHECK(bank_from_json(to_json(bank)) == bank);
  }
  CHECK_FALSE(std::filesystem::exists(dir / "bank.json.tmp"));
}

TEST_CASE("malformed bank documents name the field") {
  auto field_of = [](const std::string& text) {
    try {
      bank_from_json(json::parse(text));
    } catch (const ParseError& e) {
      return e.field();
    }
    return std::string("<none>");
  };
  CHECK(field_of(R"({"common_mistakes": []})") == "general_skills");
  CHECK(field_of(R"({"general_skills": {}, "common_mistakes": []})") == "general_skills");
  CHECK(field_of(R"({"general_skills": [{"skill_id": "gen_001", "principle": "p", "when_to_apply": "w"}],
                     "common_mistakes": []})") == "general_skills[0].title");
  CHECK(field_of(R"({"general_skills": [], "common_mistakes": [
                     {"mistake_id": "gen_001", "description": "d", "why_it_happens": "w", "how_to_avoid": "h"}]})") ==
        "common_mistakes[0].mistake_id");
  CHECK(field_of(R"({"general_skills": [
                     {"skill_id": "gen_001", "title": "t", "principle": "p", "when_to_apply": "w"},
                     {"skill_id": "gen_001", "title": "u", "principle": "p", "when_to_apply": "w"}],
                     "common_mistakes": []})") == "general_skills[1].skill_id");
  CHECK(field_of(R"({"general_skills": [
                     {"skill_id": "gen_001", "title": "t", "principle": "p", "when_to_apply": "w", "origin": "x"}],
                     "common_mistakes": []})") == "general_skills[0].origin");
  CHECK(field_of(R"({"general_skills": [], "common_mistakes": [], "metadata": {"merge_group_size": 0}})") ==
        "metadata.merge_group_size");
  CHECK_THROWS_AS(load_bank("/nonexistent/bank.json"), ParseError);
}

TEST_CASE("ids and tags") {
  CHECK(format_id("gen", 1) == "gen_001");
  CHECK(format_id("err", 14) == "err_014");
  CHECK(format_id("gen", 1234) == "gen_1234");
  auto bank = static_bank(2, 1);
  check_ids(bank);
  bank.general_skills[1].skill_id = "gen_001";
  CHECK_THROWS_AS(check_ids(bank), std::logic_error);

  const auto s = testing::make_skill(1, "Reduce Early", {});
  CHECK(effective_tags(s) == std::vector<std::string>{"skill:reduce early"});
  const auto tagged = testing::make_skill(1, "x", {"a", "b"});
  CHECK(effective_tags(tagged) == std::vector<std::string>{"a", "b"});
  CHECK(embedding_text(s).find("Reduce Early") != std::string::npos);
}

TEST_CASE("candidate extras are preserved") {
  auto item = skill_item("t");
  item["confidence"] = 0.7;
  item["origin"] = "dynamic";
  const auto s = skill_from_candidate(item, Origin::kStatic);
  CHECK(s.extra.at("confidence") == 0.7);
  CHECK(skill_to_json(s).at("confidence") == 0.7);
  CHECK_THROWS_AS(skill_from_candidate(json{{"title", "t"}}, Origin::kStatic), ParseError);
}

TEST_CASE("retrieval matches brute-force cosine ranking") {
  FixedEmbedder emb;
  emb.table = {{"alpha", {1.0, 0.0, 0.0}}, {"beta", {0.0, 1.0, 0.0}}, {"gamma", {0.0, 0.0, 1.0}},
               {"query", {0.6, 0.3, 0.74}}};
  SkillBank bank;
  bank.general_skills = {testing::make_skill(1, "alpha", {}), testing::make_skill(2, "beta", {}),
                         testing::make_skill(3, "gamma", {})};
  bank.common_mistakes = {testing::make_mistake(1, "gamma", {}), testing::make_mistake(2, "alpha", {})};
  const RetrievalIndex index(bank, emb);
  const auto hits = index.retrieve("query", 8);
  REQUIRE(hits.skills.size() == 3);
  REQUIRE(hits.mistakes.size() == 2);
  CHECK(hits.pair_count() == 2);

  const auto q = emb.embed("query");
  std::vector<std::pair<double, std::string>> brute;
  for (const auto& s : bank.general_skills) brute.emplace_back(-cosine_similarity(q, emb.embed(embedding_text(s))), s.skill_id);
  std::sort(brute.begin(), brute.end());
  for (std::size_t i = 0; i < brute.size(); ++i) {
    CHECK(hits.skills[i].id == brute[i].second);
    CHECK(hits.skills[i].score == doctest::Approx(-brute[i].first));
  }
  CHECK(hits.skills[0].id == "gen_003");
  CHECK(hits.mistakes[0].id == "err_001");
  CHECK(index.retrieve("query", 1).skills.size() == 1);
  CHECK_THROWS_AS(index.retrieve("query", 0), std::invalid_argument);

  // Equal scores fall back to ascending id.
  const auto ties = index.retrieve("nothing known", 3);
  CHECK(ties.skills[0].id == "gen_001");
  CHECK(ties.skills[2].id == "gen_003");
}

TEST_CASE("rank-wise pairing and contexts") {
  auto bank = static_bank(5, 3);
  const HashingEmbedder emb;
  const auto hits = retrieve(bank, "2 + 3 mod 10", 8, emb);
  const auto pairs = pair_rankwise(bank, hits);
  REQUIRE(pairs.size() == 3);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    CHECK(pairs[k].skill.skill_id == hits.skills[k].id);
    CHECK(pairs[k].mistake.mistake_id == hits.mistakes[k].id);
  }
  const env::TaskInstance task{{2, 3}, "+", 10, "5"};
  const policy::PolicyShape shape;
  const auto a = compose_context(pairs[0], task, shape);
  CHECK(a.text == compose_context(pairs[0], task, shape).text);
  CHECK(a.text != compose_context(pairs[1], task, shape).text);
  CHECK(a.text.find(pairs[0].skill.principle) != std::string::npos);
  CHECK(a.text.find(task.text()) != std::string::npos);
  CHECK_FALSE(a.features.is_student());
  const auto student = student_context(task, shape);
  CHECK(student.features.is_student());
  CHECK(student.features.problem == a.features.problem);
  CHECK(student.text.find(pairs[0].skill.principle) == std::string::npos);
  CHECK(student.text.find(pairs[0].skill.title) == std::string::npos);
}

TEST_CASE("hierarchical merge") {
  extraction::MockExtractor halve;
  SUBCASE("single candidate keeps its content with a fresh id") {
    auto item = skill_item("only");
    item["skill_id"] = "gen_042";
    const auto r = hierarchical_merge({item}, EntryKind::kSkill, halve);
    REQUIRE(r.items.size() == 1);
    CHECK(r.items[0].at("skill_id") == "gen_001");
    CHECK(r.items[0].at("title") == "only");
  }
  SUBCASE("halving terminates with nonincreasing counts") {
    std::vector<json> items;
    for (int i = 0; i < 64; ++i) items.push_back(skill_item("s" + std::to_string(i)));
    const auto r = hierarchical_merge(items, EntryKind::kSkill, halve, {8, 3});
    CHECK(r.layer_counts == std::vector<std::size_t>{32, 16, 8, 4});
    CHECK(r.items.size() == 4);
    CHECK(std::is_sorted(r.layer_counts.rbegin(), r.layer_counts.rend()));
    CHECK(r.items.back().at("skill_id") == "gen_004");
  }
  SUBCASE("a non-reducing backend stops after exactly the patience") {
    extraction::MockExtractor identity({extraction::MockMergeMode::kIdentity});
    std::vector<json> items;
    for (int i = 0; i < 40; ++i) items.push_back(mistake_item("m" + std::to_string(i)));
    const auto r = hierarchical_merge(items, EntryKind::kMistake, identity, {8, 3});
    CHECK(r.layer_counts == std::vector<std::size_t>{40, 40, 40});
    CHECK(r.items.size() == 40);
    CHECK(r.items[39].at("mistake_id") == "err_040");
  }
  SUBCASE("failing merges pass groups through") {
    extraction::MockExtractor failing({extraction::MockMergeMode::kHalve, true});
    std::vector<json> items;
    for (int i = 0; i < 10; ++i) items.push_back(skill_item("f" + std::to_string(i)));
    const auto r = hierarchical_merge(items, EntryKind::kSkill, failing, {4, 2});
    CHECK(r.items.size() == 10);
    CHECK(r.fallbacks == 6);
  }
  SUBCASE("exact duplicates collapse and ids restart at first_index") {
    std::vector<json> items{skill_item("d"), skill_item("d"), skill_item("e")};
    items[1]["skill_id"] = "gen_900";
    extraction::MockExtractor identity({extraction::MockMergeMode::kIdentity});
    const auto r = hierarchical_merge(items, EntryKind::kSkill, identity, {8, 1}, 7);
    REQUIRE(r.items.size() == 2);
    CHECK(r.items[0].at("skill_id") == "gen_007");
    CHECK(r.items[1].at("skill_id") == "gen_008");
  }
  CHECK_THROWS_AS(hierarchical_merge({}, EntryKind::kSkill, halve, {0, 3}), std::invalid_argument);
}

TEST_CASE("cold start") {
  const policy::PolicyShape shape;
  const auto tasks = env::generate_tasks(1, 24, 1);
  extraction::MockExtractor mock;
  SUBCASE("always-correct policy yields no mistakes") {
    // Digits are boosted by the task's answer bucket, then the end token.
    policy::ToyPolicy p(shape);
    for (int d = 0; d <= 9; ++d) p.prev_row(d)[shape.end_token()] = 400.0;
    for (int v = 10; v < shape.vocab_size; ++v) p.prev_row(shape.vocab_size)[v] = -60.0;
    const env::TaskInstance t{{2, 3}, "+", 10, "5"};
    const auto ctx = student_context(t, shape);
    for (int b : ctx.features.problem) p.bucket_row(b)[5] = 60.0;
    const std::vector<env::TaskInstance> seeds(6, t);
    const auto bank = cold_start(seeds, p, mock);
    CHECK(bank.common_mistakes.empty());
    CHECK_FALSE(bank.general_skills.empty());
  }
  SUBCASE("entries are static with valid ids") {
    const auto p = policy::ToyPolicy::random(shape, 3, 1.0);
    const auto bank = cold_start(tasks, p, mock, {5, {8, 2}, 3});
    check_ids(bank);
    for (const auto& s : bank.general_skills) CHECK(s.origin == Origin::kStatic);
    for (const auto& m : bank.common_mistakes) CHECK(m.origin == Origin::kStatic);
    CHECK(bank.metadata.merge_group_size == 8);
    CHECK(bank == cold_start(tasks, p, mock, {5, {8, 2}, 3}));
  }
  CHECK_THROWS_AS(cold_start({}, policy::ToyPolicy(shape), mock), std::invalid_argument);
  ThrowingExtractor down;
  CHECK_THROWS_AS(cold_start(tasks, policy::ToyPolicy(shape), down), ExtractionError);
}

TEST_CASE("online update schedule and gating") {
  CountingExtractor ex;
  EvolutionParams params;
  auto bank = static_bank(2, 2);
  const auto before = bank;
  CHECK(online_update(bank, window_of(1, 4), 37, params, ex).status == UpdateStatus::kNotScheduled);
  CHECK(online_update(bank, {}, 25, params, ex).status == UpdateStatus::kEmptyWindow);
  const auto high = online_update(bank, window_of(9, 1), 25, params, ex);
  CHECK(high.status == UpdateStatus::kSkippedHighSuccess);
  CHECK(high.success_rate == doctest::Approx(0.9));
  auto off = params;
  off.enabled = false;
  CHECK(online_update(bank, window_of(1, 4), 25, off, ex).status == UpdateStatus::kDisabled);
  CHECK(bank == before);
  CHECK(ex.calls == 0);

  ThrowingExtractor down;
  CHECK(online_update(bank, window_of(1, 4), 50, params, down).status == UpdateStatus::kExtractorFailed);
  CHECK(bank == before);
}

TEST_CASE("online update caps and static immutability") {
  CountingExtractor ex;
  EvolutionParams params;
  params.max_new = 5;
  params.capacity = 30;
  auto bank = static_bank(3, 2);
  const auto statics = bank;
  const auto dir = testing::fresh_dir("bank_updates");

  const auto first = online_update(bank, window_of(10, 10), 25, params, ex, dir);
  CHECK(first.status == UpdateStatus::kUpdated);
  CHECK(first.dynamic_skills == 5);
  CHECK(first.dynamic_mistakes == 5);
  CHECK(bank.general_skills.size() == 8);
  for (std::size_t i = 0; i < 3; ++i) CHECK(bank.general_skills[i] == statics.general_skills[i]);
  CHECK(bank.general_skills[3].skill_id == "gen_004");
  CHECK(bank.general_skills[3].origin == Origin::kDynamic);
  CHECK(bank.common_mistakes[2].mistake_id == "err_003");
  check_ids(bank);
  CHECK(std::filesystem::exists(dir / "bank_latest.json"));
  CHECK(load_bank(dir / snapshot_name(25)) == bank);

  for (long step = 50; step <= 200; step += 25) online_update(bank, window_of(10, 10), step, params, ex, dir);
  std::size_t dynamic = 0;
  for (const auto& s : bank.general_skills) dynamic += s.origin == Origin::kDynamic;
  CHECK(dynamic == 30);
  for (std::size_t i = 0; i < 3; ++i) CHECK(bank.general_skills[i] == statics.general_skills[i]);
  // Oldest dynamic entries were evicted first.
  const auto& oldest = bank.general_skills[3];
  CHECK(oldest.title != "fresh skill 1");
  check_ids(bank);

  const auto snaps = list_snapshots(dir);
  REQUIRE(snaps.size() == 8);
  CHECK(snaps.front().first == 25);
  CHECK(snaps.back().first == 200);
}
