#include <doctest.h>

#include <fstream>
#include <set>
#include <stdexcept>

#include "scenarios.hpp"
#include "sgsd/env.hpp"
#include "sgsd/error.hpp"

using namespace sgsd::env;
using sgsd::policy::Token;

TEST_CASE("chain evaluation") {
  CHECK(evaluate_chain(std::vector{3, 5, 2}, "+*", 7) == 2);
  CHECK(evaluate_chain(std::vector{2, 9}, "-", 10) == 3);
  CHECK(evaluate_chain(std::vector{17}, "", 10) == 7);
  CHECK(evaluate_chain(std::vector{20, 20, 20}, "**", 97) == 8000 % 97);
  CHECK_THROWS_AS(evaluate_chain(std::vector{1, 2}, "", 10), std::invalid_argument);
  CHECK_THROWS_AS(evaluate_chain(std::vector{1, 2}, "/", 10), std::invalid_argument);
  CHECK_THROWS_AS(evaluate_chain(std::vector{1, 2}, "+", 0), std::invalid_argument);
}

TEST_CASE("task text and features") {
  TaskInstance t{{3, 5, 2}, "+*", 7, "2"};
  CHECK(t.text() == "(3 + 5) * 2 mod 7");
  CHECK(TaskInstance{{4, 1}, "-", 10, "3"}.text() == "4 - 1 mod 10");
  const auto f = t.features();
  CHECK(f.front() == "problem:(3 + 5) * 2 mod 7");
  CHECK(std::find(f.begin(), f.end(), "mod:7") != f.end());
}

TEST_CASE("task generation") {
  CHECK(generate_tasks(5, 20, 2) == generate_tasks(5, 20, 2));
  CHECK(generate_tasks(5, 20, 2) != generate_tasks(6, 20, 2));
  for (int difficulty = 1; difficulty <= 3; ++difficulty) {
    for (const auto& t : generate_tasks(9, 200, difficulty)) {
      CHECK(t.answer == std::to_string(evaluate_chain(t.operands, t.ops, t.modulus)));
      if (difficulty == 1) {
        CHECK(t.operands.size() == 2);
        CHECK(t.modulus == 10);
        CHECK(t.answer.size() == 1);
        CHECK(t.ops.find('*') == std::string::npos);
      } else if (difficulty == 2) {
        CHECK(t.operands.size() == 3);
        CHECK((t.modulus >= 5 && t.modulus <= 10));
      } else {
        CHECK((t.modulus >= 11 && t.modulus <= 97));
      }
    }
  }
  CHECK_THROWS_AS(generate_tasks(1, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(generate_tasks(1, 3, 4), std::invalid_argument);
}

TEST_CASE("answer extraction and verification") {
  const TaskInstance t{{4, 3}, "+", 10, "7"};
  CHECK(verify(t, std::vector<Token>{7, 11}).r == 1);
  CHECK(verify(t, std::vector<Token>{1, 10, 7, 11}).r == 1);
  CHECK(verify(t, std::vector<Token>{7, 1, 11}).r == -1);
  CHECK(verify(t, std::vector<Token>{10, 11}).r == -1);
  CHECK_FALSE(verify(t, std::vector<Token>{}).extracted.has_value());
  CHECK(extract_answer(std::vector<Token>{1, 2, 10, 4, 5}) == std::optional<std::string>("45"));
  CHECK(render_tokens(std::vector<Token>{4, 10, 11}, 12) == "4<f0><end>");
}

TEST_CASE("task files") {
  const auto dir = sgsd::testing::fresh_dir("env_tasks");
  const auto tasks = generate_tasks(3, 12, 3);
  save_tasks(tasks, dir / "tasks.jsonl");
  CHECK(load_tasks(dir / "tasks.jsonl") == tasks);

  {
    std::ofstream(dir / "wrong.jsonl") << R"({"operands":[1,2],"ops":"+","modulus":10,"answer":"4"})" << "\n";
  }
  try {
    load_tasks(dir / "wrong.jsonl");
    FAIL("expected ParseError");
  } catch (const sgsd::ParseError& e) {
    CHECK(e.field() == "line 1.answer");
  }
  {
    std::ofstream(dir / "missing.jsonl") << "\n" << R"({"operands":[1,2],"modulus":10,"answer":"3"})" << "\n";
  }
  try {
    load_tasks(dir / "missing.jsonl");
    FAIL("expected ParseError");
  } catch (const sgsd::ParseError& e) {
    CHECK(e.field() == "line 2.ops");
  }
  CHECK_THROWS_AS(load_tasks(dir / "nope.jsonl"), sgsd::ParseError);
}
