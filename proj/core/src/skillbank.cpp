#include "sgsd/skillbank.hpp"

#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include "sgsd/error.hpp"
#include "sgsd/prompts.hpp"

namespace sgsd::skillbank {

namespace {

using nlohmann::json;

const std::set<std::string>& skill_keys() {
  static const std::set<std::string> k = {"skill_id", "title", "principle", "when_to_apply", "origin", "tags"};
  return k;
}

const std::set<std::string>& mistake_keys() {
  static const std::set<std::string> k = {"mistake_id", "description", "why_it_happens", "how_to_avoid",
                                          "origin", "tags"};
  return k;
}

std::string read_string(const json& obj, const std::string& key, const std::string& where) {
  if (!obj.contains(key)) throw ParseError(where + "." + key, "missing");
  if (!obj.at(key).is_string()) throw ParseError(where + "." + key, "must be a string");
  return obj.at(key).get<std::string>();
}

Origin read_origin(const json& obj, const std::string& where) {
  if (!obj.contains("origin")) return Origin::kStatic;
  const auto& v = obj.at("origin");
  if (v == "static") return Origin::kStatic;
  if (v == "dynamic") return Origin::kDynamic;
  throw ParseError(where + ".origin", "must be \"static\" or \"dynamic\"");
}

std::vector<std::string> read_tags(const json& obj, const std::string& where) {
  std::vector<std::string> tags;
  if (!obj.contains("tags")) return tags;
  const auto& v = obj.at("tags");
  if (!v.is_array()) throw ParseError(where + ".tags", "must be an array of strings");
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_string()) throw ParseError(where + ".tags[" + std::to_string(i) + "]", "must be a string");
    tags.push_back(v[i].get<std::string>());
  }
  return tags;
}

json collect_extra(const json& obj, const std::set<std::string>& known) {
  json extra = json::object();
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!known.contains(it.key())) extra[it.key()] = it.value();
  }
  return extra;
}

void merge_extra(json& out, const json& extra) {
  for (auto it = extra.begin(); it != extra.end(); ++it) {
    if (!out.contains(it.key())) out[it.key()] = it.value();
  }
}

GeneralSkill parse_skill(const json& obj, const std::string& where, bool need_id) {
  if (!obj.is_object()) throw ParseError(where, "must be an object");
  GeneralSkill s;
  if (need_id || obj.contains("skill_id")) s.skill_id = read_string(obj, "skill_id", where);
  s.title = read_string(obj, "title", where);
  s.principle = read_string(obj, "principle", where);
  s.when_to_apply = read_string(obj, "when_to_apply", where);
  s.origin = read_origin(obj, where);
  s.tags = read_tags(obj, where);
  s.extra = collect_extra(obj, skill_keys());
  return s;
}

CommonMistake parse_mistake(const json& obj, const std::string& where, bool need_id) {
  if (!obj.is_object()) throw ParseError(where, "must be an object");
  CommonMistake m;
  if (need_id || obj.contains("mistake_id")) m.mistake_id = read_string(obj, "mistake_id", where);
  m.description = read_string(obj, "description", where);
  m.why_it_happens = read_string(obj, "why_it_happens", where);
  m.how_to_avoid = read_string(obj, "how_to_avoid", where);
  m.origin = read_origin(obj, where);
  m.tags = read_tags(obj, where);
  m.extra = collect_extra(obj, mistake_keys());
  return m;
}

int read_positive(const json& obj, const std::string& key, const std::string& where, int fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 1) throw ParseError(where + "." + key, "must be a positive integer");
  return v.get<int>();
}

std::vector<std::size_t> read_counts(const json& obj, const std::string& key, const std::string& where) {
  std::vector<std::size_t> out;
  if (!obj.contains(key)) return out;
  const auto& v = obj.at(key);
  if (!v.is_array()) throw ParseError(where + "." + key, "must be an array");
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number_unsigned()) {
      throw ParseError(where + "." + key + "[" + std::to_string(i) + "]", "must be a non-negative integer");
    }
    out.push_back(v[i].get<std::size_t>());
  }
  return out;
}

BankMetadata parse_metadata(const json& obj) {
  const std::string where = "metadata";
  if (!obj.is_object()) throw ParseError(where, "must be an object");
  BankMetadata md;
  if (obj.contains("source")) md.source = read_string(obj, "source", where);
  md.merge_group_size = read_positive(obj, "merge_group_size", where, md.merge_group_size);
  md.merge_stagnation_patience = read_positive(obj, "merge_stagnation_patience", where, md.merge_stagnation_patience);
  if (obj.contains("layer_counts")) {
    const auto& lc = obj.at("layer_counts");
    if (!lc.is_object()) throw ParseError(where + ".layer_counts", "must be an object");
    md.skill_layer_counts = read_counts(lc, "general_skills", where + ".layer_counts");
    md.mistake_layer_counts = read_counts(lc, "common_mistakes", where + ".layer_counts");
  }
  md.extra = collect_extra(obj, {"source", "merge_group_size", "merge_stagnation_patience", "layer_counts"});
  return md;
}

json metadata_to_json(const BankMetadata& md) {
  json out = {{"source", md.source},
              {"merge_group_size", md.merge_group_size},
              {"merge_stagnation_patience", md.merge_stagnation_patience}};
  if (!md.skill_layer_counts.empty() || !md.mistake_layer_counts.empty()) {
    out["layer_counts"] = {{"general_skills", md.skill_layer_counts},
                           {"common_mistakes", md.mistake_layer_counts}};
  }
  merge_extra(out, md.extra);
  return out;
}

std::string lowered(std::string_view s) {
  std::string out(s);
  for (auto& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

const char* id_key(EntryKind kind) { return kind == EntryKind::kSkill ? "skill_id" : "mistake_id"; }
const char* id_prefix(EntryKind kind) { return kind == EntryKind::kSkill ? "gen" : "err"; }

json strip_id(const json& item, EntryKind kind) {
  json copy = item;
  if (copy.is_object()) copy.erase(id_key(kind));
  return copy;
}

extraction::RequestKind merge_request(EntryKind kind) {
  return kind == EntryKind::kSkill ? extraction::RequestKind::kMergeSkills
                                   : extraction::RequestKind::kMergeMistakes;
}

std::vector<RetrievalHit> rank(const std::vector<std::vector<double>>& vecs,
                               const std::vector<std::string>& ids, std::span<const double> query,
                               std::size_t k) {
  std::vector<RetrievalHit> hits;
  hits.reserve(vecs.size());
  for (std::size_t i = 0; i < vecs.size(); ++i) hits.push_back({i, ids[i], cosine_similarity(vecs[i], query)});
  std::sort(hits.begin(), hits.end(), [](const RetrievalHit& a, const RetrievalHit& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  if (hits.size() > k) hits.resize(k);
  return hits;
}

}  // namespace

std::string_view to_string(Origin origin) { return origin == Origin::kStatic ? "static" : "dynamic"; }

json skill_to_json(const GeneralSkill& skill) {
  json out = {{"skill_id", skill.skill_id},
              {"title", skill.title},
              {"principle", skill.principle},
              {"when_to_apply", skill.when_to_apply},
              {"origin", to_string(skill.origin)},
              {"tags", skill.tags}};
  merge_extra(out, skill.extra);
  return out;
}

json mistake_to_json(const CommonMistake& mistake) {
  json out = {{"mistake_id", mistake.mistake_id},
              {"description", mistake.description},
              {"why_it_happens", mistake.why_it_happens},
              {"how_to_avoid", mistake.how_to_avoid},
              {"origin", to_string(mistake.origin)},
              {"tags", mistake.tags}};
  merge_extra(out, mistake.extra);
  return out;
}

json to_json(const SkillBank& bank) {
  json skills = json::array();
  for (const auto& s : bank.general_skills) skills.push_back(skill_to_json(s));
  json mistakes = json::array();
  for (const auto& m : bank.common_mistakes) mistakes.push_back(mistake_to_json(m));
  json out = {{"general_skills", std::move(skills)},
              {"common_mistakes", std::move(mistakes)},
              {"metadata", metadata_to_json(bank.metadata)}};
  merge_extra(out, bank.extra);
  return out;
}

SkillBank bank_from_json(const json& doc) {
  if (!doc.is_object()) throw ParseError("", "bank document must be a JSON object");
  SkillBank bank;
  for (const char* key : {"general_skills", "common_mistakes"}) {
    if (!doc.contains(key)) throw ParseError(key, "missing");
    if (!doc.at(key).is_array()) throw ParseError(key, "must be an array");
  }
  std::set<std::string> seen;
  const auto& skills = doc.at("general_skills");
  for (std::size_t i = 0; i < skills.size(); ++i) {
    const std::string where = "general_skills[" + std::to_string(i) + "]";
    auto s = parse_skill(skills[i], where, true);
    if (s.skill_id.rfind("gen_", 0) != 0) throw ParseError(where + ".skill_id", "must start with gen_");
    if (!seen.insert(s.skill_id).second) throw ParseError(where + ".skill_id", "duplicate id " + s.skill_id);
    bank.general_skills.push_back(std::move(s));
  }
  const auto& mistakes = doc.at("common_mistakes");
  for (std::size_t i = 0; i < mistakes.size(); ++i) {
    const std::string where = "common_mistakes[" + std::to_string(i) + "]";
    auto m = parse_mistake(mistakes[i], where, true);
    if (m.mistake_id.rfind("err_", 0) != 0) throw ParseError(where + ".mistake_id", "must start with err_");
    if (!seen.insert(m.mistake_id).second) throw ParseError(where + ".mistake_id", "duplicate id " + m.mistake_id);
    bank.common_mistakes.push_back(std::move(m));
  }
  if (doc.contains("metadata")) bank.metadata = parse_metadata(doc.at("metadata"));
  bank.extra = collect_extra(doc, {"general_skills", "common_mistakes", "metadata"});
  return bank;
}

GeneralSkill skill_from_candidate(const json& item, Origin origin) {
  auto s = parse_skill(item, "candidate", false);
  s.origin = origin;
  return s;
}

CommonMistake mistake_from_candidate(const json& item, Origin origin) {
  auto m = parse_mistake(item, "candidate", false);
  m.origin = origin;
  return m;
}

SkillBank load_bank(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("", "cannot open bank file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("", std::string("bank file is not valid JSON: ") + e.what());
  }
  return bank_from_json(doc);
}

void save_bank(const SkillBank& bank, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write bank file " + path.string());
    out << to_json(bank).dump(2) << '\n';
    if (!out) throw std::runtime_error("failed writing bank file " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string format_id(std::string_view prefix, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%03zu", index);
  return std::string(prefix) + "_" + buf;
}

void check_ids(const SkillBank& bank) {
  std::set<std::string> seen;
  for (const auto& s : bank.general_skills) {
    if (s.skill_id.rfind("gen_", 0) != 0) throw std::logic_error("skill id without gen_ prefix: " + s.skill_id);
    if (!seen.insert(s.skill_id).second) throw std::logic_error("duplicate id " + s.skill_id);
  }
  for (const auto& m : bank.common_mistakes) {
    if (m.mistake_id.rfind("err_", 0) != 0) throw std::logic_error("mistake id without err_ prefix: " + m.mistake_id);
    if (!seen.insert(m.mistake_id).second) throw std::logic_error("duplicate id " + m.mistake_id);
  }
}

std::vector<std::string> effective_tags(const GeneralSkill& skill) {
  if (!skill.tags.empty()) return skill.tags;
  return {"skill:" + lowered(skill.title)};
}

std::vector<std::string> effective_tags(const CommonMistake& mistake) {
  if (!mistake.tags.empty()) return mistake.tags;
  return {"mistake:" + lowered(mistake.description)};
}

std::string embedding_text(const GeneralSkill& skill) {
  return skill.title + "\n" + skill.principle + "\n" + skill.when_to_apply;
}

std::string embedding_text(const CommonMistake& mistake) {
  return mistake.description + "\n" + mistake.why_it_happens + "\n" + mistake.how_to_avoid;
}

RetrievalIndex::RetrievalIndex(const SkillBank& bank, const Embedder& embedder) : embedder_(&embedder) {
  for (const auto& s : bank.general_skills) {
    skill_ids_.push_back(s.skill_id);
    skill_vecs_.push_back(embedder.embed(embedding_text(s)));
  }
  for (const auto& m : bank.common_mistakes) {
    mistake_ids_.push_back(m.mistake_id);
    mistake_vecs_.push_back(embedder.embed(embedding_text(m)));
  }
}

Retrieval RetrievalIndex::retrieve(std::string_view query, std::size_t k) const {
  if (k == 0) throw std::invalid_argument("retrieve: k must be >= 1");
  const auto q = embedder_->embed(query);
  return {rank(skill_vecs_, skill_ids_, q, k), rank(mistake_vecs_, mistake_ids_, q, k)};
}

Retrieval retrieve(const SkillBank& bank, std::string_view query, std::size_t k, const Embedder& embedder) {
  return RetrievalIndex(bank, embedder).retrieve(query, k);
}

std::vector<TeacherPair> pair_rankwise(const SkillBank& bank, const Retrieval& hits) {
  std::vector<TeacherPair> pairs;
  for (std::size_t k = 0; k < hits.pair_count(); ++k) {
    const auto& sh = hits.skills[k];
    const auto& mh = hits.mistakes[k];
    pairs.push_back({bank.general_skills.at(sh.index), bank.common_mistakes.at(mh.index), sh.score, mh.score});
  }
  return pairs;
}

TeacherContext compose_context(const TeacherPair& pair, const env::TaskInstance& task,
                               const policy::PolicyShape& shape) {
  const prompts::Inputs inputs = {{"skill.title", pair.skill.title},
                                  {"skill.principle", pair.skill.principle},
                                  {"skill.when_to_apply", pair.skill.when_to_apply},
                                  {"mistake.description", pair.mistake.description},
                                  {"mistake.how_to_avoid", pair.mistake.how_to_avoid},
                                  {"problem", task.text()}};
  const auto features = task.features();
  const auto skill_tags = effective_tags(pair.skill);
  const auto mistake_tags = effective_tags(pair.mistake);
  return {prompts::render(prompts::Template::kTeacher, inputs),
          policy::teacher_context(shape, features, skill_tags, mistake_tags)};
}

StudentContext student_context(const env::TaskInstance& task, const policy::PolicyShape& shape) {
  const auto features = task.features();
  return {prompts::render(prompts::Template::kStudent, {{"problem", task.text()}}),
          policy::student_context(shape, features)};
}

MergeResult hierarchical_merge(std::vector<json> candidates, EntryKind kind, extraction::Extractor& extractor,
                               const MergeParams& params, std::size_t first_index) {
  if (params.group_size < 1) throw std::invalid_argument("hierarchical_merge: group_size must be >= 1");
  if (params.patience < 1) throw std::invalid_argument("hierarchical_merge: patience must be >= 1");
  MergeResult result;
  const auto request_kind = merge_request(kind);
  const std::string key(extraction::expected_key(request_kind));

  std::size_t stagnant = 0;
  while (!candidates.empty()) {
    const std::size_t groups = (candidates.size() + params.group_size - 1) / params.group_size;
    std::vector<json> next;
    for (std::size_t g = 0; g < groups; ++g) {
      const auto begin = candidates.begin() + static_cast<std::ptrdiff_t>(g * params.group_size);
      const auto end = candidates.begin() +
                       static_cast<std::ptrdiff_t>(std::min(candidates.size(), (g + 1) * params.group_size));
      const std::vector<json> group(begin, end);
      if (group.size() == 1) {
        next.push_back(group.front());
        continue;
      }
      const json payload = {{key, group}};
      const auto request = extraction::ExtractionRequest::make(request_kind, {{"items_json", payload.dump(2)}});
      auto merged = extractor.extract(request);
      if (!merged.ok() || merged.items.empty() || merged.items.size() > group.size()) {
        ++result.fallbacks;
        next.insert(next.end(), group.begin(), group.end());
        continue;
      }
      next.insert(next.end(), merged.items.begin(), merged.items.end());
    }
    stagnant = next.size() < candidates.size() ? 0 : stagnant + 1;
    candidates = std::move(next);
    result.layer_counts.push_back(candidates.size());
    if (groups == 1 || stagnant >= params.patience) break;
  }

  std::vector<json> seen;
  for (auto& item : candidates) {
    auto body = strip_id(item, kind);
    if (std::find(seen.begin(), seen.end(), body) != seen.end()) continue;
    seen.push_back(body);
    body[id_key(kind)] = format_id(id_prefix(kind), first_index + result.items.size());
    result.items.push_back(std::move(body));
  }
  return result;
}

}  // namespace sgsd::skillbank
