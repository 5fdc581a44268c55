#include "sgsd/extraction.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>

#include "sgsd/error.hpp"
#include "sgsd/hash.hpp"

namespace sgsd::extraction {

namespace {

prompts::Template template_for(RequestKind kind) {
  switch (kind) {
    case RequestKind::kMemoryGeneration: return prompts::Template::kMemoryGeneration;
    case RequestKind::kSuccessSkills: return prompts::Template::kSuccessSkills;
    case RequestKind::kFailureMistakes: return prompts::Template::kFailureMistakes;
    case RequestKind::kMergeSkills: return prompts::Template::kMergeSkills;
    case RequestKind::kMergeMistakes: return prompts::Template::kMergeMistakes;
  }
  throw std::invalid_argument("unknown request kind");
}

bool is_skill_kind(RequestKind kind) {
  return kind == RequestKind::kSuccessSkills || kind == RequestKind::kMergeSkills;
}

std::string hex8(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%08llx", static_cast<unsigned long long>(v & 0xffffffffULL));
  return buf;
}

nlohmann::json mock_skill(std::uint64_t h) {
  const auto id = hex8(h);
  return {{"title", "Reusable pattern " + id},
          {"principle", "Reduce intermediate results early and track each step " + id + "."},
          {"when_to_apply", "When a chain of operations appears (pattern " + hex8(h >> 32) + ")."}};
}

nlohmann::json mock_mistake(std::uint64_t h) {
  const auto id = hex8(h);
  return {{"description", "Dropping a reduction step " + id + "."},
          {"why_it_happens", "The solver rushes past intermediate results (" + hex8(h >> 32) + ")."},
          {"how_to_avoid", "Recheck each intermediate value before answering " + id + "."}};
}

std::string identity_key(RequestKind kind, const nlohmann::json& item) {
  const char* field = is_skill_kind(kind) ? "title" : "description";
  return item.value(field, std::string{});
}

nlohmann::json union_tags(const nlohmann::json& a, const nlohmann::json& b) {
  nlohmann::json tags = nlohmann::json::array();
  for (const auto* src : {&a, &b}) {
    if (!src->contains("tags") || !src->at("tags").is_array()) continue;
    for (const auto& t : src->at("tags")) {
      if (std::find(tags.begin(), tags.end(), t) == tags.end()) tags.push_back(t);
    }
  }
  return tags;
}

ExtractionResult mock_merge(RequestKind kind, const ExtractionRequest& request, const MockOptions& options) {
  if (options.fail_merges) return ExtractionResult::fallback("mock merge failure");
  const auto span = longest_json_object(request.payload);
  if (!span) return ExtractionResult::fallback("no items in merge payload");
  nlohmann::json doc = nlohmann::json::parse(*span, nullptr, false);
  const auto key = std::string(expected_key(kind));
  if (doc.is_discarded() || !doc.contains(key) || !doc.at(key).is_array()) {
    return ExtractionResult::fallback("merge payload lacks " + key);
  }
  const auto& in = doc.at(key);
  ExtractionResult out;
  switch (options.merge_mode) {
    case MockMergeMode::kIdentity:
      for (const auto& item : in) out.items.push_back(item);
      break;
    case MockMergeMode::kDedupe:
      for (const auto& item : in) {
        bool seen = false;
        for (const auto& kept : out.items) seen = seen || identity_key(kind, kept) == identity_key(kind, item);
        if (!seen) out.items.push_back(item);
      }
      break;
    case MockMergeMode::kHalve:
      for (std::size_t i = 0; i < in.size(); i += 2) {
        nlohmann::json merged = in[i];
        if (i + 1 < in.size()) {
          const auto tags = union_tags(in[i], in[i + 1]);
          if (!tags.empty()) merged["tags"] = tags;
        }
        out.items.push_back(std::move(merged));
      }
      break;
  }
  return out;
}

}  // namespace

std::string_view to_string(RequestKind kind) {
  switch (kind) {
    case RequestKind::kMemoryGeneration: return "memory_generation";
    case RequestKind::kSuccessSkills: return "success_skills";
    case RequestKind::kFailureMistakes: return "failure_mistakes";
    case RequestKind::kMergeSkills: return "merge_skills";
    case RequestKind::kMergeMistakes: return "merge_mistakes";
  }
  return "unknown";
}

std::string_view expected_key(RequestKind kind) {
  if (kind == RequestKind::kMemoryGeneration) return "";
  return is_skill_kind(kind) ? "general_skills" : "common_mistakes";
}

const std::vector<std::string>& required_fields(RequestKind kind) {
  static const std::vector<std::string> kSkill = {"title", "principle", "when_to_apply"};
  static const std::vector<std::string> kMistake = {"description", "why_it_happens", "how_to_avoid"};
  static const std::vector<std::string> kNone;
  if (kind == RequestKind::kMemoryGeneration) return kNone;
  return is_skill_kind(kind) ? kSkill : kMistake;
}

ExtractionRequest ExtractionRequest::make(RequestKind kind, const prompts::Inputs& inputs) {
  return {kind, prompts::render(template_for(kind), inputs), std::string(extraction::expected_key(kind))};
}

ExtractionResult ExtractionResult::fallback(std::string why) {
  ExtractionResult r;
  r.status = ExtractionStatus::kFallback;
  r.diagnostic = std::move(why);
  return r;
}

std::optional<std::string_view> longest_json_object(std::string_view text) {
  std::optional<std::string_view> best;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] != '{') {
      ++i;
      continue;
    }
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    std::size_t j = i;
    for (; j < text.size(); ++j) {
      const char c = text[j];
      if (in_string) {
        if (escaped) {
          escaped = false;
        } else if (c == '\\') {
          escaped = true;
        } else if (c == '"') {
          in_string = false;
        }
        continue;
      }
      if (c == '"') {
        in_string = true;
      } else if (c == '{') {
        ++depth;
      } else if (c == '}') {
        if (--depth == 0) break;
      }
    }
    if (j >= text.size()) {
      ++i;  // unbalanced from here; try the next brace
      continue;
    }
    const auto candidate = text.substr(i, j - i + 1);
    if (!best || candidate.size() > best->size()) best = candidate;
    i = j + 1;
  }
  return best;
}

ExtractionResult parse_completion(RequestKind kind, std::string_view completion) {
  if (kind == RequestKind::kMemoryGeneration) {
    ExtractionResult r;
    r.text = std::string(completion);
    return r;
  }
  const auto span = longest_json_object(completion);
  if (!span) return ExtractionResult::fallback("no JSON object in completion");
  const auto doc = nlohmann::json::parse(*span, nullptr, false);
  if (doc.is_discarded()) return ExtractionResult::fallback("invalid JSON in completion");
  const auto key = std::string(expected_key(kind));
  if (!doc.contains(key)) return ExtractionResult::fallback("missing key " + key);
  if (!doc.at(key).is_array()) return ExtractionResult::fallback(key + " is not an array");

  ExtractionResult out;
  for (const auto& item : doc.at(key)) {
    if (!item.is_object()) return ExtractionResult::fallback(key + " holds a non-object item");
    for (const auto& field : required_fields(kind)) {
      if (!item.contains(field) || !item.at(field).is_string()) {
        return ExtractionResult::fallback("candidate lacks string field " + field);
      }
    }
    out.items.push_back(item);
  }
  return out;
}

ExtractionResult MockExtractor::extract(const ExtractionRequest& request) {
  const std::uint64_t h = fnv1a(request.payload);
  switch (request.kind) {
    case RequestKind::kMemoryGeneration: {
      ExtractionResult r;
      r.text = "mock completion " + hex8(h);
      return r;
    }
    case RequestKind::kSuccessSkills:
    case RequestKind::kFailureMistakes: {
      ExtractionResult r;
      const auto count = 1 + h % 3;
      for (std::uint64_t i = 0; i < count; ++i) {
        const auto hi = mix_seed(h, i);
        r.items.push_back(request.kind == RequestKind::kSuccessSkills ? mock_skill(hi) : mock_mistake(hi));
      }
      return r;
    }
    case RequestKind::kMergeSkills:
    case RequestKind::kMergeMistakes:
      return mock_merge(request.kind, request, options_);
  }
  return ExtractionResult::fallback("unknown request kind");
}

void ExtractorConfig::validate() const {
  if (backend == Backend::kMock) return;
  if (endpoint.empty()) throw ConfigError("extractor.endpoint", "required for the http backend");
  if (endpoint.rfind("http://", 0) != 0 && endpoint.rfind("https://", 0) != 0) {
    throw ConfigError("extractor.endpoint", "must start with http:// or https://");
  }
  if (model.empty()) throw ConfigError("extractor.model", "required for the http backend");
  if (!(timeout_seconds > 0.0)) throw ConfigError("extractor.timeout_seconds", "must be > 0");
  if (retries < 0) throw ConfigError("extractor.retries", "must be >= 0");
  if (backoff_initial_seconds < 0.0) throw ConfigError("extractor.backoff_initial_seconds", "must be >= 0");
}

std::unique_ptr<Extractor> make_extractor(const ExtractorConfig& config) {
  config.validate();
  if (config.backend == Backend::kMock) return std::make_unique<MockExtractor>();
  return std::make_unique<HttpExtractor>(config);
}

ExtractionResult extract(const ExtractionRequest& request, const ExtractorConfig& config) {
  return make_extractor(config)->extract(request);
}

}  // namespace sgsd::extraction
