#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sgsd/policy.hpp"

// Synthetic verifiable tasks: left-to-right modular evaluation of a short
// operator chain, answered as a decimal digit string.
//
// Token ids 0..9 are the digits, ids 10..V-2 are non-digit filler tokens and
// V-1 is the end token.

namespace sgsd::env {

struct TaskInstance {
  std::vector<int> operands;  // a, b[, c]
  std::string ops;            // one of "+-*" per step, operands.size() - 1 long
  int modulus = 10;
  std::string answer;         // ground-truth digits

  // "(3 + 5) * 2 mod 7"
  std::string text() const;
  // Problem-side conditioning features fed to the policy encoder.
  std::vector<std::string> features() const;

  friend bool operator==(const TaskInstance&, const TaskInstance&) = default;
};

// Independent of TaskInstance::answer; recomputes the chain.
int evaluate_chain(std::span<const int> operands, std::string_view ops, int modulus);

// Difficulty 1: two operands, '+' or '-', modulus 10.
// Difficulty 2: three operands, '+' or '-', modulus in [5, 10].
// Difficulty 3: three operands, '+', '-' or '*', modulus in [11, 97].
std::vector<TaskInstance> generate_tasks(std::uint64_t seed, int count, int difficulty);

struct VerifierResult {
  int r = -1;
  std::optional<std::string> extracted;
};

// Last contiguous run of digit tokens; nullopt when there is none.
std::optional<std::string> extract_answer(std::span<const policy::Token> tokens);

// r = +1 iff the extracted answer equals the ground truth.
VerifierResult verify(const TaskInstance& task, std::span<const policy::Token> tokens);

bool is_digit_token(policy::Token token) noexcept;
std::string render_tokens(std::span<const policy::Token> tokens, int vocab_size);

// Line-delimited JSON: {"problem", "operands", "ops", "modulus", "answer"}.
void save_tasks(std::span<const TaskInstance> tasks, const std::filesystem::path& path);
// Throws ParseError naming the line and field; rejects records whose answer
// disagrees with the chain.
std::vector<TaskInstance> load_tasks(const std::filesystem::path& path);

}  // namespace sgsd::env
