#pragma once

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sgsd/embedder.hpp"
#include "sgsd/env.hpp"
#include "sgsd/extraction.hpp"
#include "sgsd/policy.hpp"

// Persistent skill bank: general skills (positive guidance) and common
// mistakes (negative guidance), each either static (cold start) or dynamic
// (evolved online).

namespace sgsd::skillbank {

enum class Origin { kStatic, kDynamic };

std::string_view to_string(Origin origin);

struct GeneralSkill {
  std::string skill_id;
  std::string title;
  std::string principle;
  std::string when_to_apply;
  Origin origin = Origin::kStatic;
  std::vector<std::string> tags;
  nlohmann::json extra = nlohmann::json::object();  // unknown fields, preserved

  friend bool operator==(const GeneralSkill&, const GeneralSkill&) = default;
};

struct CommonMistake {
  std::string mistake_id;
  std::string description;
  std::string why_it_happens;
  std::string how_to_avoid;
  Origin origin = Origin::kStatic;
  std::vector<std::string> tags;
  nlohmann::json extra = nlohmann::json::object();

  friend bool operator==(const CommonMistake&, const CommonMistake&) = default;
};

struct BankMetadata {
  std::string source = "hierarchical merge from raw candidates";
  int merge_group_size = 32;
  int merge_stagnation_patience = 3;
  // Collection size after each merge layer; empty when unknown.
  std::vector<std::size_t> skill_layer_counts;
  std::vector<std::size_t> mistake_layer_counts;
  nlohmann::json extra = nlohmann::json::object();

  friend bool operator==(const BankMetadata&, const BankMetadata&) = default;
};

struct SkillBank {
  std::vector<GeneralSkill> general_skills;
  std::vector<CommonMistake> common_mistakes;
  BankMetadata metadata;
  nlohmann::json extra = nlohmann::json::object();

  friend bool operator==(const SkillBank&, const SkillBank&) = default;
};

// --- persistence ----------------------------------------------------------

nlohmann::json to_json(const SkillBank& bank);
// Throws ParseError naming the offending field, e.g. "general_skills[2].title".
SkillBank bank_from_json(const nlohmann::json& doc);

nlohmann::json skill_to_json(const GeneralSkill& skill);
nlohmann::json mistake_to_json(const CommonMistake& mistake);

// Builds an entry from an extraction candidate; the id may be absent.
GeneralSkill skill_from_candidate(const nlohmann::json& item, Origin origin);
CommonMistake mistake_from_candidate(const nlohmann::json& item, Origin origin);

SkillBank load_bank(const std::filesystem::path& path);
void save_bank(const SkillBank& bank, const std::filesystem::path& path);

// "gen_001", "err_014"; indices start at 1 and use at least three digits.
std::string format_id(std::string_view prefix, std::size_t index);

// Throws std::logic_error on duplicate ids or a wrong prefix.
void check_ids(const SkillBank& bank);

// Stored tags, or one content-derived tag when an entry carries none.
std::vector<std::string> effective_tags(const GeneralSkill& skill);
std::vector<std::string> effective_tags(const CommonMistake& mistake);

std::string embedding_text(const GeneralSkill& skill);
std::string embedding_text(const CommonMistake& mistake);

// --- retrieval ------------------------------------------------------------

struct RetrievalHit {
  std::size_t index = 0;  // position in the bank collection
  std::string id;
  double score = 0.0;
};

struct Retrieval {
  std::vector<RetrievalHit> skills;
  std::vector<RetrievalHit> mistakes;

  // Number of usable teacher pairs, min of the two hit lists.
  std::size_t pair_count() const noexcept { return std::min(skills.size(), mistakes.size()); }
};

// Embeds every bank entry once; valid until the bank changes.
class RetrievalIndex {
 public:
  RetrievalIndex(const SkillBank& bank, const Embedder& embedder);

  // Top-min(k, size) hits per collection by cosine similarity, descending,
  // ties broken by ascending id. Throws std::invalid_argument for k == 0.
  Retrieval retrieve(std::string_view query, std::size_t k) const;

 private:
  const Embedder* embedder_;
  std::vector<std::string> skill_ids_;
  std::vector<std::string> mistake_ids_;
  std::vector<std::vector<double>> skill_vecs_;
  std::vector<std::vector<double>> mistake_vecs_;
};

Retrieval retrieve(const SkillBank& bank, std::string_view query, std::size_t k, const Embedder& embedder);

struct TeacherPair {
  GeneralSkill skill;
  CommonMistake mistake;
  double skill_score = 0.0;
  double mistake_score = 0.0;
};

// k-th skill with k-th mistake; length min of the two lists.
std::vector<TeacherPair> pair_rankwise(const SkillBank& bank, const Retrieval& hits);

struct TeacherContext {
  std::string text;                 // rendered teacher prompt
  policy::ContextFeatures features; // toy-policy conditioning buckets
};

TeacherContext compose_context(const TeacherPair& pair, const env::TaskInstance& task,
                               const policy::PolicyShape& shape);

struct StudentContext {
  std::string text;
  policy::ContextFeatures features;
};

StudentContext student_context(const env::TaskInstance& task, const policy::PolicyShape& shape);

// --- merging --------------------------------------------------------------

enum class EntryKind { kSkill, kMistake };

struct MergeParams {
  std::size_t group_size = 32;
  std::size_t patience = 3;
};

struct MergeResult {
  std::vector<nlohmann::json> items;        // ids reassigned
  std::vector<std::size_t> layer_counts;    // size after each layer
  std::size_t fallbacks = 0;                // groups passed through unmerged
};

// Layered group-wise merging through the extractor. Stops after a layer that
// held a single group, or after `patience` consecutive layers without a size
// reduction. Exact duplicates are removed and ids are reassigned from
// `first_index`. A group whose merge fails passes through unchanged.
MergeResult hierarchical_merge(std::vector<nlohmann::json> candidates, EntryKind kind,
                               extraction::Extractor& extractor, const MergeParams& params = {},
                               std::size_t first_index = 1);

// --- construction and evolution ------------------------------------------

struct MemoryRecord {
  std::string problem;
  std::string completion;
  int reward = -1;
  std::string answer;
  std::string summary;
  std::string feedback;

  nlohmann::json to_json() const;
};

MemoryRecord make_memory(const env::TaskInstance& task, std::span<const policy::Token> tokens,
                         int vocab_size);

struct ColdStartOptions {
  std::uint64_t seed = 0;
  MergeParams merge;
  std::size_t max_candidates_per_memory = 3;
};

// Samples one plain-prompt completion per seed problem, verifies it, extracts
// skills from successes and mistakes from failures, and merges both into a
// static bank. Throws std::invalid_argument for an empty seed set and
// ExtractionError when the extractor is unavailable.
SkillBank cold_start(std::span<const env::TaskInstance> seeds, const policy::ToyPolicy& policy,
                     extraction::Extractor& extractor, const ColdStartOptions& options = {});

struct EvolutionParams {
  bool enabled = true;
  long frequency = 25;              // F
  double success_threshold = 0.8;   // gamma
  std::size_t max_new = 5;          // N
  std::size_t capacity = 30;        // C, per collection
  MergeParams merge;
};

enum class UpdateStatus {
  kDisabled,
  kNotScheduled,
  kEmptyWindow,
  kSkippedHighSuccess,
  kUpdated,
  kExtractorFailed,
};

std::string_view to_string(UpdateStatus status);

struct UpdateOutcome {
  UpdateStatus status = UpdateStatus::kNotScheduled;
  double success_rate = 0.0;
  std::size_t dynamic_skills = 0;
  std::size_t dynamic_mistakes = 0;
  std::vector<std::filesystem::path> written;
};

// One evolution step over a window of recent rollouts. Static entries are
// never modified. On success the bank is replaced and, when `snapshot_dir`
// is set, written as bank_latest.json and bank_step_{step}.json. On any
// extractor failure the bank is left unchanged.
UpdateOutcome online_update(SkillBank& bank, std::span<const MemoryRecord> window, long step,
                            const EvolutionParams& params, extraction::Extractor& extractor,
                            const std::optional<std::filesystem::path>& snapshot_dir = std::nullopt);

std::string snapshot_name(long step);
inline constexpr const char* kLatestBankName = "bank_latest.json";

// bank_step_*.json files in `dir`, sorted by step.
std::vector<std::pair<long, std::filesystem::path>> list_snapshots(const std::filesystem::path& dir);

}  // namespace sgsd::skillbank
