#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "sgsd/error.hpp"
#include "sgsd/extraction.hpp"

namespace sgsd::extraction {

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  const auto path_start = url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

bool retryable(int status) { return status == 408 || status == 429 || status >= 500; }

}  // namespace

HttpExtractor::HttpExtractor(ExtractorConfig config) : config_(std::move(config)) {
  config_.validate();
  if (config_.backend != Backend::kHttp) throw ConfigError("extractor.backend", "HttpExtractor needs http");
}

nlohmann::json HttpExtractor::request_body(const ExtractionRequest& request) const {
  return {{"model", config_.model},
          {"messages", nlohmann::json::array({{{"role", "user"}, {"content", request.payload}}})},
          {"temperature", config_.temperature}};
}

ExtractionResult HttpExtractor::extract(const ExtractionRequest& request) {
  const auto url = split_url(config_.endpoint);
  httplib::Client client(url.origin);
  const auto secs = static_cast<time_t>(config_.timeout_seconds);
  const auto usecs = static_cast<time_t>((config_.timeout_seconds - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);

  httplib::Headers headers;
  if (!config_.api_key_env.empty()) {
    if (const char* key = std::getenv(config_.api_key_env.c_str()); key != nullptr && *key != '\0') {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
  }
  const std::string body = request_body(request).dump();

  std::string last_error;
  double backoff = config_.backoff_initial_seconds;
  for (int attempt = 0; attempt <= config_.retries; ++attempt) {
    if (attempt > 0) {
      spdlog::warn("extraction request retry {}/{} after: {}", attempt, config_.retries, last_error);
      std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
      backoff *= 2.0;
    }
    auto res = client.Post(url.path, headers, body, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_error = "HTTP status " + std::to_string(res->status);
      if (retryable(res->status)) continue;
      throw ExtractionError("extraction request failed: " + last_error);
    }
    const auto doc = nlohmann::json::parse(res->body, nullptr, false);
    if (doc.is_discarded()) return ExtractionResult::fallback("response body is not JSON");
    const auto choices = doc.find("choices");
    if (choices == doc.end() || !choices->is_array() || choices->empty()) {
      return ExtractionResult::fallback("response has no choices");
    }
    const auto& message = (*choices)[0].value("message", nlohmann::json::object());
    if (!message.contains("content") || !message.at("content").is_string()) {
      return ExtractionResult::fallback("response has no message content");
    }
    return parse_completion(request.kind, message.at("content").get<std::string>());
  }
  throw ExtractionError("extraction request failed after " + std::to_string(config_.retries) +
                        " retries: " + last_error);
}

}  // namespace sgsd::extraction
