#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sgsd/distill.hpp"
#include "sgsd/extraction.hpp"
#include "sgsd/gate.hpp"
#include "sgsd/policy.hpp"
#include "sgsd/skillbank.hpp"

// Run configuration. On disk it is a flat JSON object whose keys are the
// dotted names listed by config_keys(); every key is optional and missing
// keys take the defaults below.

namespace sgsd::trainer {

enum class Objective { kGated, kReverseKl, kForwardKl, kJsd };

std::string_view to_string(Objective objective);
Objective objective_from_string(std::string_view name);

enum class Ablation {
  kNone,
  kNoPolarity,
  kSingleTeacher,
  kNoMask,
  kNoClip,
  kNoThreshold,
  kNoAllThree,
};

std::string_view to_string(Ablation ablation);
Ablation ablation_from_string(std::string_view name);

struct EnvConfig {
  int difficulty = 1;
  int task_count = 8;
  std::uint64_t task_seed = 7;
  std::string tasks_path;  // JSONL suite; overrides generation when set
};

struct ColdStartConfig {
  int problems = 256;
};

struct RunConfig {
  std::uint64_t seed = 0;
  long steps = 500;
  int batch_size = 1;
  std::size_t teachers_k = 8;
  gate::GateParams gate;
  distill::RobustParams robust;
  double learning_rate = 0.5;
  policy::TeacherSchedule teacher;
  Objective objective = Objective::kGated;
  std::size_t topk_support = 0;  // 0: full vocabulary
  Ablation ablation = Ablation::kNone;

  std::string bank_path;  // empty: cold start
  skillbank::EvolutionParams evolution;
  ColdStartConfig cold_start;

  EnvConfig env;
  policy::PolicyShape shape;
  double init_scale = 0.5;
  // Added to the start row on digits and to each digit row on the end token.
  double format_prior = 3.0;
  std::string init_checkpoint;

  std::size_t embedder_dim = 512;
  std::size_t embedder_ngram = 3;
  extraction::ExtractorConfig extractor;

  int eval_samples = 12;
  std::size_t rolling_window = 25;
  std::string out_dir;
  long checkpoint_interval = 100;  // 0: final checkpoint only

  // Throws ConfigError naming the first offending key.
  void validate() const;
};

// Every recognized key, in document order.
const std::vector<std::string>& config_keys();

nlohmann::json to_json(const RunConfig& config);
// Starts from defaults; throws ConfigError for unknown keys, wrong types and
// out-of-range values.
RunConfig config_from_json(const nlohmann::json& doc);
RunConfig load_config(const std::filesystem::path& path);
void save_config(const RunConfig& config, const std::filesystem::path& path);

}  // namespace sgsd::trainer
