#include <algorithm>
#include <charconv>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "sgsd/error.hpp"
#include "sgsd/hash.hpp"
#include "sgsd/skillbank.hpp"

namespace sgsd::skillbank {

namespace {

using nlohmann::json;

constexpr std::size_t kCandidatesPerRecord = 3;

std::vector<json> extract_candidates(const MemoryRecord& record, EntryKind kind,
                                     extraction::Extractor& extractor, std::size_t limit) {
  const auto request_kind = kind == EntryKind::kSkill ? extraction::RequestKind::kSuccessSkills
                                                      : extraction::RequestKind::kFailureMistakes;
  const auto request = extraction::ExtractionRequest::make(request_kind, {{"memory_json", record.to_json().dump(2)}});
  auto result = extractor.extract(request);
  if (!result.ok()) {
    spdlog::warn("{} extraction fell back: {}", extraction::to_string(request_kind), result.diagnostic);
    return {};
  }
  if (result.items.size() > limit) result.items.resize(limit);
  return std::move(result.items);
}

std::size_t id_number(std::string_view id) {
  const auto pos = id.find('_');
  if (pos == std::string_view::npos) return 0;
  std::size_t n = 0;
  const auto* first = id.data() + pos + 1;
  const auto* last = id.data() + id.size();
  const auto [ptr, ec] = std::from_chars(first, last, n);
  return ec == std::errc{} && ptr == last ? n : 0;
}

template <typename Entry>
std::size_t max_static_index(const std::vector<Entry>& entries, std::string Entry::*id) {
  std::size_t best = 0;
  std::size_t count = 0;
  for (const auto& e : entries) {
    if (e.origin != Origin::kStatic) continue;
    ++count;
    best = std::max(best, id_number(e.*id));
  }
  return std::max(best, count);
}

// Merges fresh candidates into the existing dynamic subset and applies the
// net-new and capacity caps. Returned items carry no meaningful ids.
std::vector<json> evolve_collection(const std::vector<json>& existing, std::vector<json> fresh, EntryKind kind,
                                    extraction::Extractor& extractor, const EvolutionParams& params) {
  if (fresh.empty()) return existing;
  auto merged_new = hierarchical_merge(std::move(fresh), kind, extractor, params.merge).items;
  std::vector<json> combined = existing;
  combined.insert(combined.end(), merged_new.begin(), merged_new.end());
  auto items = hierarchical_merge(std::move(combined), kind, extractor, params.merge).items;
  const std::size_t limit = existing.size() + params.max_new;
  if (items.size() > limit) items.resize(limit);
  if (items.size() > params.capacity) {
    items.erase(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(items.size() - params.capacity));
  }
  return items;
}

}  // namespace

json MemoryRecord::to_json() const {
  return {{"problem", problem}, {"completion", completion}, {"reward", reward},
          {"answer", answer},   {"summary", summary},       {"feedback", feedback}};
}

MemoryRecord make_memory(const env::TaskInstance& task, std::span<const policy::Token> tokens, int vocab_size) {
  const auto verdict = env::verify(task, tokens);
  MemoryRecord m;
  m.problem = task.text();
  m.completion = env::render_tokens(tokens, vocab_size);
  m.reward = verdict.r;
  m.answer = task.answer;
  const std::string given = verdict.extracted ? *verdict.extracted : "no answer";
  m.summary = "Evaluated the chain " + task.ops + " modulo " + std::to_string(task.modulus) + " and answered " + given + ".";
  m.feedback = verdict.r > 0 ? "Correct: the final answer matches the reference."
                             : "Incorrect: expected " + task.answer + ", got " + given + ".";
  return m;
}

SkillBank cold_start(std::span<const env::TaskInstance> seeds, const policy::ToyPolicy& policy,
                     extraction::Extractor& extractor, const ColdStartOptions& options) {
  if (seeds.empty()) throw std::invalid_argument("cold_start: empty seed set");
  std::vector<json> skills;
  std::vector<json> mistakes;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    const auto ctx = student_context(seeds[i], policy.shape());
    const auto rollout = policy::sample_rollout(policy, ctx.features, mix_seed(options.seed, i));
    const auto memory = make_memory(seeds[i], rollout.tokens, policy.shape().vocab_size);
    const auto kind = memory.reward > 0 ? EntryKind::kSkill : EntryKind::kMistake;
    auto items = extract_candidates(memory, kind, extractor, options.max_candidates_per_memory);
    auto& sink = kind == EntryKind::kSkill ? skills : mistakes;
    sink.insert(sink.end(), items.begin(), items.end());
  }
  spdlog::info("cold start: {} skill and {} mistake candidates from {} seeds", skills.size(), mistakes.size(),
               seeds.size());

  auto merged_skills = hierarchical_merge(std::move(skills), EntryKind::kSkill, extractor, options.merge);
  auto merged_mistakes = hierarchical_merge(std::move(mistakes), EntryKind::kMistake, extractor, options.merge);

  SkillBank bank;
  for (const auto& item : merged_skills.items) bank.general_skills.push_back(skill_from_candidate(item, Origin::kStatic));
  for (const auto& item : merged_mistakes.items) {
    bank.common_mistakes.push_back(mistake_from_candidate(item, Origin::kStatic));
  }
  bank.metadata.merge_group_size = static_cast<int>(options.merge.group_size);
  bank.metadata.merge_stagnation_patience = static_cast<int>(options.merge.patience);
  bank.metadata.skill_layer_counts = merged_skills.layer_counts;
  bank.metadata.mistake_layer_counts = merged_mistakes.layer_counts;
  return bank;
}

std::string_view to_string(UpdateStatus status) {
  switch (status) {
    case UpdateStatus::kDisabled: return "disabled";
    case UpdateStatus::kNotScheduled: return "not_scheduled";
    case UpdateStatus::kEmptyWindow: return "empty_window";
    case UpdateStatus::kSkippedHighSuccess: return "skipped_high_success";
    case UpdateStatus::kUpdated: return "updated";
    case UpdateStatus::kExtractorFailed: return "extractor_failed";
  }
  return "unknown";
}

UpdateOutcome online_update(SkillBank& bank, std::span<const MemoryRecord> window, long step,
                            const EvolutionParams& params, extraction::Extractor& extractor,
                            const std::optional<std::filesystem::path>& snapshot_dir) {
  if (params.frequency < 1) throw std::invalid_argument("online_update: frequency must be >= 1");
  UpdateOutcome outcome;
  const auto count_dynamic = [&](const SkillBank& b) {
    outcome.dynamic_skills = static_cast<std::size_t>(std::count_if(
        b.general_skills.begin(), b.general_skills.end(), [](const auto& e) { return e.origin == Origin::kDynamic; }));
    outcome.dynamic_mistakes = static_cast<std::size_t>(std::count_if(
        b.common_mistakes.begin(), b.common_mistakes.end(), [](const auto& e) { return e.origin == Origin::kDynamic; }));
  };
  count_dynamic(bank);

  if (!params.enabled) {
    outcome.status = UpdateStatus::kDisabled;
    return outcome;
  }
  if (step % params.frequency != 0) {
    outcome.status = UpdateStatus::kNotScheduled;
    return outcome;
  }
  if (window.empty()) {
    outcome.status = UpdateStatus::kEmptyWindow;
    return outcome;
  }
  const auto successes = std::count_if(window.begin(), window.end(), [](const auto& r) { return r.reward > 0; });
  outcome.success_rate = static_cast<double>(successes) / static_cast<double>(window.size());
  if (outcome.success_rate >= params.success_threshold) {
    outcome.status = UpdateStatus::kSkippedHighSuccess;
    return outcome;
  }

  SkillBank next = bank;
  try {
    std::vector<json> fresh_skills;
    std::vector<json> fresh_mistakes;
    for (const auto& record : window) {
      const auto kind = record.reward > 0 ? EntryKind::kSkill : EntryKind::kMistake;
      auto items = extract_candidates(record, kind, extractor, kCandidatesPerRecord);
      auto& sink = kind == EntryKind::kSkill ? fresh_skills : fresh_mistakes;
      sink.insert(sink.end(), items.begin(), items.end());
    }

    std::vector<json> old_skills;
    std::vector<GeneralSkill> static_skills;
    for (const auto& s : bank.general_skills) {
      if (s.origin == Origin::kDynamic) {
        old_skills.push_back(skill_to_json(s));
      } else {
        static_skills.push_back(s);
      }
    }
    std::vector<json> old_mistakes;
    std::vector<CommonMistake> static_mistakes;
    for (const auto& m : bank.common_mistakes) {
      if (m.origin == Origin::kDynamic) {
        old_mistakes.push_back(mistake_to_json(m));
      } else {
        static_mistakes.push_back(m);
      }
    }

    const auto skills = evolve_collection(old_skills, std::move(fresh_skills), EntryKind::kSkill, extractor, params);
    const auto mistakes =
        evolve_collection(old_mistakes, std::move(fresh_mistakes), EntryKind::kMistake, extractor, params);

    next.general_skills = std::move(static_skills);
    std::size_t index = max_static_index(bank.general_skills, &GeneralSkill::skill_id);
    for (const auto& item : skills) {
      auto s = skill_from_candidate(item, Origin::kDynamic);
      s.skill_id = format_id("gen", ++index);
      next.general_skills.push_back(std::move(s));
    }
    next.common_mistakes = std::move(static_mistakes);
    index = max_static_index(bank.common_mistakes, &CommonMistake::mistake_id);
    for (const auto& item : mistakes) {
      auto m = mistake_from_candidate(item, Origin::kDynamic);
      m.mistake_id = format_id("err", ++index);
      next.common_mistakes.push_back(std::move(m));
    }
  } catch (const ExtractionError& e) {
    spdlog::warn("online update at step {} aborted, bank unchanged: {}", step, e.what());
    outcome.status = UpdateStatus::kExtractorFailed;
    return outcome;
  }

  check_ids(next);
  bank = std::move(next);
  count_dynamic(bank);
  outcome.status = UpdateStatus::kUpdated;
  if (snapshot_dir) {
    for (const auto& name : {std::string(kLatestBankName), snapshot_name(step)}) {
      const auto path = *snapshot_dir / name;
      save_bank(bank, path);
      outcome.written.push_back(path);
    }
  }
  spdlog::debug("online update at step {}: {} dynamic skills, {} dynamic mistakes", step, outcome.dynamic_skills,
                outcome.dynamic_mistakes);
  return outcome;
}

std::string snapshot_name(long step) { return "bank_step_" + std::to_string(step) + ".json"; }

std::vector<std::pair<long, std::filesystem::path>> list_snapshots(const std::filesystem::path& dir) {
  std::vector<std::pair<long, std::filesystem::path>> out;
  if (!std::filesystem::is_directory(dir)) return out;
  constexpr std::string_view prefix = "bank_step_";
  constexpr std::string_view suffix = ".json";
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto name = entry.path().filename().string();
    if (name.size() <= prefix.size() + suffix.size() || name.rfind(prefix, 0) != 0 ||
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0) {
      continue;
    }
    const std::string_view digits(name.data() + prefix.size(), name.size() - prefix.size() - suffix.size());
    long step = 0;
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), step);
    if (ec != std::errc{} || ptr != digits.data() + digits.size()) continue;
    out.emplace_back(step, entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace sgsd::skillbank
