#include "sgsd/env.hpp"

#include <fstream>
#include <random>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "sgsd/error.hpp"

namespace sgsd::env {

namespace {

int mod_floor(long long v, int m) {
  const long long r = v % m;
  return static_cast<int>(r < 0 ? r + m : r);
}

int uniform_int(std::mt19937_64& gen, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(gen);
}

}  // namespace

std::string TaskInstance::text() const {
  std::string out;
  for (std::size_t i = 0; i < operands.size(); ++i) {
    if (i == 0) {
      out = std::to_string(operands[0]);
      continue;
    }
    const std::string step = out + " " + ops[i - 1] + " " + std::to_string(operands[i]);
    out = i + 1 < operands.size() ? "(" + step + ")" : step;
  }
  return out + " mod " + std::to_string(modulus);
}

std::vector<std::string> TaskInstance::features() const {
  std::vector<std::string> f;
  f.push_back("problem:" + text());
  f.push_back("ops:" + ops);
  f.push_back("mod:" + std::to_string(modulus));
  return f;
}

int evaluate_chain(std::span<const int> operands, std::string_view ops, int modulus) {
  if (operands.empty() || ops.size() + 1 != operands.size()) {
    throw std::invalid_argument("operator chain does not match operand count");
  }
  if (modulus < 1) throw std::invalid_argument("modulus must be >= 1");
  long long acc = operands[0];
  for (std::size_t i = 0; i < ops.size(); ++i) {
    const long long b = operands[i + 1];
    switch (ops[i]) {
      case '+': acc = acc + b; break;
      case '-': acc = acc - b; break;
      case '*': acc = acc * b; break;
      default: throw std::invalid_argument(std::string("unknown operator '") + ops[i] + "'");
    }
    acc = mod_floor(acc, modulus);
  }
  return mod_floor(acc, modulus);
}

std::vector<TaskInstance> generate_tasks(std::uint64_t seed, int count, int difficulty) {
  if (count < 1) throw std::invalid_argument("generate_tasks: count must be >= 1");
  if (difficulty < 1 || difficulty > 3) throw std::invalid_argument("generate_tasks: difficulty in 1..3");
  std::mt19937_64 gen(seed);
  std::vector<TaskInstance> tasks;
  tasks.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    TaskInstance task;
    const int n = difficulty == 1 ? 2 : 3;
    const std::string alphabet = difficulty == 3 ? "+-*" : "+-";
    task.modulus = difficulty == 1 ? 10 : difficulty == 2 ? uniform_int(gen, 5, 10) : uniform_int(gen, 11, 97);
    for (int j = 0; j < n; ++j) task.operands.push_back(uniform_int(gen, 0, 20));
    for (int j = 0; j + 1 < n; ++j) {
      task.ops.push_back(alphabet[static_cast<std::size_t>(uniform_int(gen, 0, static_cast<int>(alphabet.size()) - 1))]);
    }
    task.answer = std::to_string(evaluate_chain(task.operands, task.ops, task.modulus));
    tasks.push_back(std::move(task));
  }
  return tasks;
}

bool is_digit_token(policy::Token token) noexcept { return token >= 0 && token <= 9; }

std::optional<std::string> extract_answer(std::span<const policy::Token> tokens) {
  std::string current;
  std::string last;
  for (auto token : tokens) {
    if (is_digit_token(token)) {
      current.push_back(static_cast<char>('0' + token));
      continue;
    }
    if (!current.empty()) last = std::move(current);
    current.clear();
  }
  if (!current.empty()) last = std::move(current);
  if (last.empty()) return std::nullopt;
  return last;
}

VerifierResult verify(const TaskInstance& task, std::span<const policy::Token> tokens) {
  VerifierResult result;
  result.extracted = extract_answer(tokens);
  result.r = result.extracted && *result.extracted == task.answer ? 1 : -1;
  return result;
}

std::string render_tokens(std::span<const policy::Token> tokens, int vocab_size) {
  std::string out;
  for (auto token : tokens) {
    if (is_digit_token(token)) {
      out.push_back(static_cast<char>('0' + token));
    } else if (token == vocab_size - 1) {
      out += "<end>";
    } else {
      out += "<f" + std::to_string(token - 10) + ">";
    }
  }
  return out;
}

void save_tasks(std::span<const TaskInstance> tasks, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write task file " + path.string());
  for (const auto& t : tasks) {
    nlohmann::json line = {{"problem", t.text()},
                           {"operands", t.operands},
                           {"ops", t.ops},
                           {"modulus", t.modulus},
                           {"answer", t.answer}};
    out << line.dump() << '\n';
  }
}

std::vector<TaskInstance> load_tasks(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("", "cannot open task file " + path.string());
  std::vector<TaskInstance> tasks;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      throw ParseError(where, "not a JSON record");
    }
    TaskInstance t;
    for (const char* key : {"operands", "ops", "modulus", "answer"}) {
      if (!j.contains(key)) throw ParseError(where + "." + key, "missing");
    }
    try {
      t.operands = j.at("operands").get<std::vector<int>>();
      t.ops = j.at("ops").get<std::string>();
      t.modulus = j.at("modulus").get<int>();
      t.answer = j.at("answer").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where, e.what());
    }
    int truth = 0;
    try {
      truth = evaluate_chain(t.operands, t.ops, t.modulus);
    } catch (const std::invalid_argument& e) {
      throw ParseError(where + ".ops", e.what());
    }
    if (std::to_string(truth) != t.answer) throw ParseError(where + ".answer", "disagrees with the chain");
    if (j.contains("problem") && j.at("problem") != t.text()) {
      throw ParseError(where + ".problem", "does not match operands");
    }
    tasks.push_back(std::move(t));
  }
  return tasks;
}

}  // namespace sgsd::env
