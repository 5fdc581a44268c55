#pragma once

#include <chrono>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sgsd/prompts.hpp"

// Skill/mistake extraction and merge backends. A backend turns one rendered
// prompt into a list of candidate JSON objects; it never touches the bank.

namespace sgsd::extraction {

enum class RequestKind {
  kMemoryGeneration,
  kSuccessSkills,
  kFailureMistakes,
  kMergeSkills,
  kMergeMistakes,
};

std::string_view to_string(RequestKind kind);

// "general_skills", "common_mistakes", or empty for memory generation.
std::string_view expected_key(RequestKind kind);

// Field names every candidate of this kind must carry.
const std::vector<std::string>& required_fields(RequestKind kind);

struct ExtractionRequest {
  RequestKind kind = RequestKind::kSuccessSkills;
  std::string payload;
  std::string expected_key;

  // Renders the template for `kind` with `inputs`.
  static ExtractionRequest make(RequestKind kind, const prompts::Inputs& inputs);
};

enum class ExtractionStatus { kOk, kFallback };

struct ExtractionResult {
  ExtractionStatus status = ExtractionStatus::kOk;
  std::vector<nlohmann::json> items;  // candidate objects, extras preserved
  std::string text;                   // raw completion (memory generation)
  std::string diagnostic;

  bool ok() const noexcept { return status == ExtractionStatus::kOk; }
  static ExtractionResult fallback(std::string why);
};

// Longest balanced top-level {...} span in `text`, honoring JSON strings.
std::optional<std::string_view> longest_json_object(std::string_view text);

// Parses a model completion for `kind`. Returns a fallback result (never
// throws) when no JSON object is found, the expected key is missing, or a
// candidate lacks a required string field.
ExtractionResult parse_completion(RequestKind kind, std::string_view completion);

class Extractor {
 public:
  virtual ~Extractor() = default;
  // Throws ExtractionError when the backend is unreachable.
  virtual ExtractionResult extract(const ExtractionRequest& request) = 0;
};

enum class MockMergeMode {
  kHalve,     // adjacent pairs collapse into their first member
  kIdentity,  // groups come back unchanged
  kDedupe,    // only exact title/description duplicates collapse
};

struct MockOptions {
  MockMergeMode merge_mode = MockMergeMode::kHalve;
  bool fail_merges = false;  // merges return the fallback signal
};

// Deterministic backend: output is a pure function of the request payload.
class MockExtractor final : public Extractor {
 public:
  explicit MockExtractor(MockOptions options = {}) : options_(options) {}
  ExtractionResult extract(const ExtractionRequest& request) override;

 private:
  MockOptions options_;
};

enum class Backend { kMock, kHttp };

struct ExtractorConfig {
  Backend backend = Backend::kMock;
  std::string endpoint;  // full chat-completions URL
  std::string model;
  double timeout_seconds = 60.0;
  int retries = 3;
  double backoff_initial_seconds = 0.5;
  std::string api_key_env = "OPENAI_API_KEY";
  double temperature = 0.0;

  // Throws ConfigError naming the offending key.
  void validate() const;
};

// OpenAI-compatible chat-completions client.
class HttpExtractor final : public Extractor {
 public:
  explicit HttpExtractor(ExtractorConfig config);
  ExtractionResult extract(const ExtractionRequest& request) override;

  // Request body sent for a payload; exposed for tests.
  nlohmann::json request_body(const ExtractionRequest& request) const;

 private:
  ExtractorConfig config_;
};

std::unique_ptr<Extractor> make_extractor(const ExtractorConfig& config);

// One-shot convenience over make_extractor.
ExtractionResult extract(const ExtractionRequest& request, const ExtractorConfig& config);

}  // namespace sgsd::extraction
