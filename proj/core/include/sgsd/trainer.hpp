#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sgsd/config.hpp"
#include "sgsd/distill.hpp"
#include "sgsd/embedder.hpp"
#include "sgsd/env.hpp"
#include "sgsd/extraction.hpp"
#include "sgsd/policy.hpp"
#include "sgsd/skillbank.hpp"

namespace sgsd::trainer {

// ---------------------------------------------------------------------------
// Single-problem objective. The teacher policy is a stop-gradient snapshot;
// weights and polarities are constants of the step.

struct TeacherTerm {
  policy::ContextFeatures context;
  double alpha = 0.0;
  int rho = 0;
};

struct ProblemTerms {
  policy::ContextFeatures student;
  std::vector<policy::Token> tokens;
  std::vector<std::uint8_t> mask;  // effective tokens
  std::vector<TeacherTerm> teachers;
};

struct ObjectiveSpec {
  Objective objective = Objective::kGated;
  std::size_t topk_support = 0;  // 0 or >= vocab: full vocabulary
  gate::GateParams gate;
  double epsilon = distill::kDefaultEpsilon;
};

struct TeacherEval {
  std::vector<double> gaps;
  std::vector<std::uint8_t> mask;  // terms.mask minus tokens outside a top-K support
  double loss = 0.0;               // per-teacher masked mean
  std::size_t out_of_support = 0;
};

std::vector<TeacherEval> evaluate_teachers(const policy::ToyPolicy& student, const policy::ToyPolicy& teacher,
                                           const ProblemTerms& terms, const ObjectiveSpec& spec);

// sum_k alpha_k rho_k loss_k
double objective_value(const policy::ToyPolicy& student, const policy::ToyPolicy& teacher,
                       const ProblemTerms& terms, const ObjectiveSpec& spec);

// Gradient of objective_value with respect to the student parameters. For the
// gated objective this is -sum_{k,t} W_t^k grad log p_S(y_t).
std::vector<double> objective_gradient(const policy::ToyPolicy& student, const policy::ToyPolicy& teacher,
                                       const ProblemTerms& terms, const ObjectiveSpec& spec);

// Every generated token except the end token; all ones when `include_end`.
std::vector<std::uint8_t> effective_mask(std::span<const policy::Token> tokens, const policy::PolicyShape& shape,
                                         bool include_end = false);

// Robust parameters after applying the clip/threshold ablations.
distill::RobustParams effective_robust(const distill::RobustParams& base, Ablation ablation);
bool masks_end_only(Ablation ablation);  // false when masking is ablated
std::size_t effective_k(std::size_t k, Ablation ablation);
int assign_polarity(distill::Outcome outcome, double support, double epsilon_a, Ablation ablation);

// ---------------------------------------------------------------------------
// Reports.

struct TeacherRecord {
  std::string skill_id;
  std::string mistake_id;
  double alpha = 0.0;
  double plain_support = 0.0;
  double support = 0.0;
  int rho = 0;
  double loss = 0.0;
};

struct ProblemRecord {
  std::size_t task_index = 0;
  int reward = -1;
  std::vector<policy::Token> tokens;
  std::vector<TeacherRecord> teachers;  // K_x entries
  double loss = 0.0;
  std::size_t out_of_support = 0;
};

struct StepRecord {
  long step = 0;
  std::vector<ProblemRecord> problems;
  double loss = 0.0;             // batch mean
  double grad_norm = 0.0;
  double rolling_success = 0.0;  // over the last rolling_window problems
  std::string bank_update;       // UpdateStatus name, empty off-schedule
};

struct TrainReport {
  std::string batch_reduction = "mean";
  RunConfig config;
  std::vector<StepRecord> steps;
  std::optional<double> initial_success;
  std::optional<double> final_success;
  std::size_t final_skills = 0;
  std::size_t final_mistakes = 0;
  std::vector<std::filesystem::path> written;
};

// Stable CSV column order.
const std::vector<std::string>& metrics_columns();
void write_metrics_csv(const TrainReport& report, std::ostream& out);
void write_metrics_csv(const TrainReport& report, const std::filesystem::path& path);
nlohmann::json summary_json(const TrainReport& report);

// ---------------------------------------------------------------------------
// Training loop.

// Mean verifier success over `samples` plain-prompt rollouts per task.
double evaluate(const policy::ToyPolicy& policy, std::span<const env::TaskInstance> suite, int samples,
                std::uint64_t seed);

std::vector<env::TaskInstance> make_suite(const RunConfig& config);

// Optional replacements for the pieces the trainer would otherwise build
// from the configuration.
struct TrainerInputs {
  std::optional<policy::ToyPolicy> policy;
  std::optional<skillbank::SkillBank> bank;
  std::optional<std::vector<env::TaskInstance>> suite;
  std::shared_ptr<extraction::Extractor> extractor;
  std::shared_ptr<const Embedder> embedder;
};

class Trainer {
 public:
  explicit Trainer(RunConfig config, TrainerInputs inputs = {});

  // Runs the next step; steps are numbered from 1.
  StepRecord step();
  // Runs the remaining steps and writes outputs under out_dir when set.
  TrainReport run();

  const RunConfig& config() const noexcept { return config_; }
  const policy::ToyPolicy& policy() const noexcept { return policy_; }
  const policy::TeacherHandle& teacher() const noexcept { return teacher_; }
  const skillbank::SkillBank& bank() const noexcept { return bank_; }
  std::span<const env::TaskInstance> suite() const noexcept { return suite_; }
  long current_step() const noexcept { return step_; }
  ObjectiveSpec objective_spec() const;

  // Builds the objective terms for one rollout without updating anything.
  struct Scored {
    ProblemTerms terms;
    ProblemRecord record;
  };
  Scored score_problem(const env::TaskInstance& task, std::size_t task_index, std::uint64_t rollout_seed) const;

 private:
  void rebuild_index();
  void write_checkpoint(const std::filesystem::path& path) const;

  RunConfig config_;
  policy::ToyPolicy policy_;
  policy::TeacherHandle teacher_;
  skillbank::SkillBank bank_;
  std::vector<env::TaskInstance> suite_;
  std::shared_ptr<extraction::Extractor> extractor_;
  std::shared_ptr<const Embedder> embedder_;
  std::unique_ptr<skillbank::RetrievalIndex> index_;
  std::vector<skillbank::MemoryRecord> window_;
  std::vector<int> recent_rewards_;
  long step_ = 0;
  mutable bool warned_empty_ = false;
};

TrainReport train(const RunConfig& config, TrainerInputs inputs = {});
TrainReport ablate(RunConfig config, Ablation variant, TrainerInputs inputs = {});

// Initial policy for a configuration: a checkpoint when init_checkpoint is
// set, otherwise a seeded random draw.
policy::ToyPolicy initial_policy(const RunConfig& config);

// Bank for a configuration: loaded from bank_path, or built by cold start.
skillbank::SkillBank initial_bank(const RunConfig& config, const policy::ToyPolicy& policy,
                                  extraction::Extractor& extractor);

}  // namespace sgsd::trainer
