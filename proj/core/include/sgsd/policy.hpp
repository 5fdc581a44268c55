#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

// A tiny context-conditioned autoregressive policy.
//
// Next-token logits are the sum of one row selected by the previous token
// (row V stands for the beginning of sequence) and one bias row per active
// context bucket. Context buckets come in two disjoint ranges: problem
// buckets, which both student and teacher see, and tag buckets, which only
// skill-conditioned teacher contexts activate.

namespace sgsd::policy {

using Token = int;

struct PolicyShape {
  int vocab_size = 12;       // last id is the end token
  int problem_buckets = 64;
  int tag_buckets = 64;
  int max_len = 4;

  void validate() const;
  int end_token() const noexcept { return vocab_size - 1; }
  int bucket_count() const noexcept { return problem_buckets + tag_buckets; }

  friend bool operator==(const PolicyShape&, const PolicyShape&) = default;
};

// Sorted, de-duplicated bucket indices. Tag indices are offset by
// problem_buckets.
struct ContextFeatures {
  std::vector<int> problem;
  std::vector<int> tags;

  bool is_student() const noexcept { return tags.empty(); }
  std::vector<int> all() const;

  friend bool operator==(const ContextFeatures&, const ContextFeatures&) = default;
};

int problem_bucket(const PolicyShape& shape, std::string_view feature);
int tag_bucket(const PolicyShape& shape, std::string_view tag);

ContextFeatures student_context(const PolicyShape& shape, std::span<const std::string> problem_features);
ContextFeatures teacher_context(const PolicyShape& shape, std::span<const std::string> problem_features,
                                std::span<const std::string> skill_tags,
                                std::span<const std::string> mistake_tags);

class ToyPolicy {
 public:
  explicit ToyPolicy(PolicyShape shape);  // all-zero (uniform) logits

  // Entries drawn from N(0, init_scale^2) with a seeded generator.
  static ToyPolicy random(PolicyShape shape, std::uint64_t seed, double init_scale);

  const PolicyShape& shape() const noexcept { return shape_; }
  std::size_t parameter_count() const noexcept { return theta_.size(); }

  std::span<const double> parameters() const noexcept { return theta_; }
  std::span<double> parameters() noexcept { return theta_; }

  // Row for the previous token; prev == vocab_size selects the start row.
  std::span<double> prev_row(int prev);
  std::span<const double> prev_row(int prev) const;
  std::span<double> bucket_row(int bucket);
  std::span<const double> bucket_row(int bucket) const;

  std::size_t prev_row_offset(int prev) const;
  std::size_t bucket_row_offset(int bucket) const;

  std::vector<double> logits(const ContextFeatures& context, int prev) const;
  std::vector<double> log_distribution(const ContextFeatures& context, int prev) const;
  std::vector<double> distribution(const ContextFeatures& context, int prev) const;

  friend bool operator==(const ToyPolicy&, const ToyPolicy&) = default;

 private:
  PolicyShape shape_;
  std::vector<double> theta_;
};

struct Rollout {
  std::vector<Token> tokens;
  std::vector<double> logprobs;
};

// Ancestral sampling until the end token or max_len. Deterministic in seed.
// Throws std::invalid_argument for a teacher (tag-bearing) context.
Rollout sample_rollout(const ToyPolicy& policy, const ContextFeatures& context, std::uint64_t seed);

// Exact full-vocabulary log-probabilities of `tokens` under `context`.
std::vector<double> score_sequence(const ToyPolicy& policy, const ContextFeatures& context,
                                   std::span<const Token> tokens);

// Per-position distributions along a fixed sequence.
std::vector<std::vector<double>> sequence_distributions(const ToyPolicy& policy,
                                                        const ContextFeatures& context,
                                                        std::span<const Token> tokens);

// Dense gradient of log p(tokens[t] | context, tokens[<t]) with respect to
// the parameters.
std::vector<double> logprob_grad(const ToyPolicy& policy, const ContextFeatures& context,
                                 std::span<const Token> tokens, std::size_t t);

// grad += coeff * d(logits at position t)/d(theta)^T * logit_grad. Used to
// push any logit-space gradient back onto the parameters.
void accumulate_logit_grad(const ToyPolicy& policy, const ContextFeatures& context, int prev,
                           std::span<const double> logit_grad, double coeff,
                           std::span<double> grad);

// theta <- theta - learning_rate * gradient.
ToyPolicy apply_update(const ToyPolicy& policy, std::span<const double> gradient,
                       double learning_rate);

enum class TeacherStrategy { kLive, kFrozen, kPeriodic, kEma };

std::string_view to_string(TeacherStrategy strategy);
TeacherStrategy teacher_strategy_from_string(std::string_view name);

struct TeacherSchedule {
  TeacherStrategy strategy = TeacherStrategy::kLive;
  long interval = 25;       // periodic
  double ema_decay = 0.99;  // ema, in (0, 1); 0 is accepted as a degenerate copy

  void validate() const;
};

// Stop-gradient teacher snapshot.
class TeacherHandle {
 public:
  TeacherHandle(TeacherSchedule schedule, const ToyPolicy& initial);

  const ToyPolicy& params() const noexcept { return snapshot_; }
  const TeacherSchedule& schedule() const noexcept { return schedule_; }

  // Applies the schedule after the student update of `step`.
  void sync(const ToyPolicy& current, long step);

 private:
  TeacherSchedule schedule_;
  ToyPolicy snapshot_;
};

inline constexpr int kCheckpointFormatVersion = 1;

void save_checkpoint(const ToyPolicy& policy, const std::filesystem::path& path);
ToyPolicy load_checkpoint(const std::filesystem::path& path);

}  // namespace sgsd::policy
