#include "sgsd/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "sgsd/error.hpp"
#include "sgsd/hash.hpp"

namespace sgsd::policy {

namespace {

std::vector<int> sorted_unique(std::vector<int> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

void log_softmax_inplace(std::vector<double>& z) {
  const double top = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (double v : z) total += std::exp(v - top);
  const double lse = top + std::log(total);
  for (double& v : z) v -= lse;
}

void check_token(const PolicyShape& shape, Token token) {
  if (token < 0 || token >= shape.vocab_size) {
    throw std::out_of_range("token " + std::to_string(token) + " outside vocabulary");
  }
}

}  // namespace

void PolicyShape::validate() const {
  if (vocab_size < 2) throw std::invalid_argument("vocab_size must be >= 2");
  if (problem_buckets < 1 || tag_buckets < 1) throw std::invalid_argument("bucket counts must be >= 1");
  if (max_len < 1) throw std::invalid_argument("max_len must be >= 1");
}

std::vector<int> ContextFeatures::all() const {
  std::vector<int> out = problem;
  out.insert(out.end(), tags.begin(), tags.end());
  return out;
}

int problem_bucket(const PolicyShape& shape, std::string_view feature) {
  return static_cast<int>(fnv1a(feature) % static_cast<std::uint64_t>(shape.problem_buckets));
}

int tag_bucket(const PolicyShape& shape, std::string_view tag) {
  return shape.problem_buckets +
         static_cast<int>(fnv1a(tag) % static_cast<std::uint64_t>(shape.tag_buckets));
}

ContextFeatures student_context(const PolicyShape& shape,
                                std::span<const std::string> problem_features) {
  ContextFeatures ctx;
  for (const auto& f : problem_features) ctx.problem.push_back(problem_bucket(shape, f));
  ctx.problem = sorted_unique(std::move(ctx.problem));
  return ctx;
}

ContextFeatures teacher_context(const PolicyShape& shape, std::span<const std::string> problem_features,
                                std::span<const std::string> skill_tags,
                                std::span<const std::string> mistake_tags) {
  ContextFeatures ctx = student_context(shape, problem_features);
  for (const auto& t : skill_tags) ctx.tags.push_back(tag_bucket(shape, t));
  for (const auto& t : mistake_tags) ctx.tags.push_back(tag_bucket(shape, t));
  ctx.tags = sorted_unique(std::move(ctx.tags));
  return ctx;
}

ToyPolicy::ToyPolicy(PolicyShape shape) : shape_(shape) {
  shape_.validate();
  const auto v = static_cast<std::size_t>(shape_.vocab_size);
  theta_.assign((v + 1) * v + static_cast<std::size_t>(shape_.bucket_count()) * v, 0.0);
}

ToyPolicy ToyPolicy::random(PolicyShape shape, std::uint64_t seed, double init_scale) {
  ToyPolicy p(shape);
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& w : p.theta_) w = init_scale * normal(gen);
  return p;
}

std::size_t ToyPolicy::prev_row_offset(int prev) const {
  if (prev < 0 || prev > shape_.vocab_size) throw std::out_of_range("previous token out of range");
  return static_cast<std::size_t>(prev) * static_cast<std::size_t>(shape_.vocab_size);
}

std::size_t ToyPolicy::bucket_row_offset(int bucket) const {
  if (bucket < 0 || bucket >= shape_.bucket_count()) throw std::out_of_range("bucket out of range");
  const auto v = static_cast<std::size_t>(shape_.vocab_size);
  return (v + 1) * v + static_cast<std::size_t>(bucket) * v;
}

std::span<double> ToyPolicy::prev_row(int prev) {
  return std::span<double>(theta_).subspan(prev_row_offset(prev), shape_.vocab_size);
}
std::span<const double> ToyPolicy::prev_row(int prev) const {
  return std::span<const double>(theta_).subspan(prev_row_offset(prev), shape_.vocab_size);
}
std::span<double> ToyPolicy::bucket_row(int bucket) {
  return std::span<double>(theta_).subspan(bucket_row_offset(bucket), shape_.vocab_size);
}
std::span<const double> ToyPolicy::bucket_row(int bucket) const {
  return std::span<const double>(theta_).subspan(bucket_row_offset(bucket), shape_.vocab_size);
}

std::vector<double> ToyPolicy::logits(const ContextFeatures& context, int prev) const {
  const auto row = prev_row(prev);
  std::vector<double> z(row.begin(), row.end());
  auto add = [&](int bucket) {
    const auto b = bucket_row(bucket);
    for (std::size_t v = 0; v < z.size(); ++v) z[v] += b[v];
  };
  for (int b : context.problem) add(b);
  for (int b : context.tags) add(b);
  return z;
}

std::vector<double> ToyPolicy::log_distribution(const ContextFeatures& context, int prev) const {
  auto z = logits(context, prev);
  log_softmax_inplace(z);
  return z;
}

std::vector<double> ToyPolicy::distribution(const ContextFeatures& context, int prev) const {
  auto z = log_distribution(context, prev);
  for (double& v : z) v = std::exp(v);
  return z;
}

Rollout sample_rollout(const ToyPolicy& policy, const ContextFeatures& context, std::uint64_t seed) {
  if (!context.is_student()) throw std::invalid_argument("sample_rollout: student context required");
  const auto& shape = policy.shape();
  std::mt19937_64 gen(seed);
  Rollout out;
  int prev = shape.vocab_size;
  for (int t = 0; t < shape.max_len; ++t) {
    const auto logp = policy.log_distribution(context, prev);
    const double u = static_cast<double>(gen() >> 11) * 0x1.0p-53;
    double cumulative = 0.0;
    Token token = shape.vocab_size - 1;
    for (int v = 0; v < shape.vocab_size; ++v) {
      cumulative += std::exp(logp[v]);
      if (u < cumulative) {
        token = v;
        break;
      }
    }
    out.tokens.push_back(token);
    out.logprobs.push_back(logp[token]);
    if (token == shape.end_token()) break;
    prev = token;
  }
  return out;
}

std::vector<double> score_sequence(const ToyPolicy& policy, const ContextFeatures& context,
                                   std::span<const Token> tokens) {
  std::vector<double> out;
  out.reserve(tokens.size());
  int prev = policy.shape().vocab_size;
  for (Token token : tokens) {
    check_token(policy.shape(), token);
    out.push_back(policy.log_distribution(context, prev)[token]);
    prev = token;
  }
  return out;
}

std::vector<std::vector<double>> sequence_distributions(const ToyPolicy& policy,
                                                        const ContextFeatures& context,
                                                        std::span<const Token> tokens) {
  std::vector<std::vector<double>> out;
  out.reserve(tokens.size());
  int prev = policy.shape().vocab_size;
  for (Token token : tokens) {
    check_token(policy.shape(), token);
    out.push_back(policy.distribution(context, prev));
    prev = token;
  }
  return out;
}

void accumulate_logit_grad(const ToyPolicy& policy, const ContextFeatures& context, int prev,
                           std::span<const double> logit_grad, double coeff,
                           std::span<double> grad) {
  if (grad.size() != policy.parameter_count()) throw std::invalid_argument("gradient size mismatch");
  const auto v = static_cast<std::size_t>(policy.shape().vocab_size);
  if (logit_grad.size() != v) throw std::invalid_argument("logit gradient size mismatch");
  auto add_row = [&](std::size_t offset) {
    for (std::size_t j = 0; j < v; ++j) grad[offset + j] += coeff * logit_grad[j];
  };
  add_row(policy.prev_row_offset(prev));
  for (int b : context.problem) add_row(policy.bucket_row_offset(b));
  for (int b : context.tags) add_row(policy.bucket_row_offset(b));
}

std::vector<double> logprob_grad(const ToyPolicy& policy, const ContextFeatures& context,
                                 std::span<const Token> tokens, std::size_t t) {
  if (t >= tokens.size()) throw std::out_of_range("logprob_grad: position out of range");
  const auto& shape = policy.shape();
  for (std::size_t i = 0; i <= t; ++i) check_token(shape, tokens[i]);
  const int prev = t == 0 ? shape.vocab_size : tokens[t - 1];
  // d log softmax(z)_y / dz = onehot(y) - p
  auto dz = policy.distribution(context, prev);
  for (double& p : dz) p = -p;
  dz[static_cast<std::size_t>(tokens[t])] += 1.0;
  std::vector<double> grad(policy.parameter_count(), 0.0);
  accumulate_logit_grad(policy, context, prev, dz, 1.0, grad);
  return grad;
}

ToyPolicy apply_update(const ToyPolicy& policy, std::span<const double> gradient,
                       double learning_rate) {
  if (gradient.size() != policy.parameter_count()) {
    throw std::invalid_argument("apply_update: gradient dimension mismatch");
  }
  if (!std::isfinite(learning_rate) || learning_rate < 0.0) {
    throw std::invalid_argument("apply_update: learning rate must be finite and >= 0");
  }
  ToyPolicy next = policy;
  auto theta = next.parameters();
  for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= learning_rate * gradient[i];
  return next;
}

std::string_view to_string(TeacherStrategy strategy) {
  switch (strategy) {
    case TeacherStrategy::kLive: return "live";
    case TeacherStrategy::kFrozen: return "frozen";
    case TeacherStrategy::kPeriodic: return "periodic";
    case TeacherStrategy::kEma: return "ema";
  }
  return "live";
}

TeacherStrategy teacher_strategy_from_string(std::string_view name) {
  if (name == "live") return TeacherStrategy::kLive;
  if (name == "frozen") return TeacherStrategy::kFrozen;
  if (name == "periodic") return TeacherStrategy::kPeriodic;
  if (name == "ema") return TeacherStrategy::kEma;
  throw std::invalid_argument("unknown teacher strategy '" + std::string(name) + "'");
}

void TeacherSchedule::validate() const {
  if (strategy == TeacherStrategy::kPeriodic && interval < 1) {
    throw std::invalid_argument("periodic teacher interval must be >= 1");
  }
  if (strategy == TeacherStrategy::kEma && !(ema_decay >= 0.0 && ema_decay < 1.0)) {
    throw std::invalid_argument("ema decay must lie in [0, 1)");
  }
}

TeacherHandle::TeacherHandle(TeacherSchedule schedule, const ToyPolicy& initial)
    : schedule_(schedule), snapshot_(initial) {
  schedule_.validate();
}

void TeacherHandle::sync(const ToyPolicy& current, long step) {
  if (!(current.shape() == snapshot_.shape())) throw std::invalid_argument("teacher shape mismatch");
  switch (schedule_.strategy) {
    case TeacherStrategy::kLive:
      snapshot_ = current;
      break;
    case TeacherStrategy::kFrozen:
      break;
    case TeacherStrategy::kPeriodic:
      if (step % schedule_.interval == 0) snapshot_ = current;
      break;
    case TeacherStrategy::kEma: {
      const double beta = schedule_.ema_decay;
      auto bar = snapshot_.parameters();
      const auto theta = current.parameters();
      for (std::size_t i = 0; i < bar.size(); ++i) bar[i] = beta * bar[i] + (1.0 - beta) * theta[i];
      break;
    }
  }
}

void save_checkpoint(const ToyPolicy& policy, const std::filesystem::path& path) {
  const auto& s = policy.shape();
  const auto v = static_cast<std::size_t>(s.vocab_size);
  const auto params = policy.parameters();
  const std::size_t prev_size = (v + 1) * v;
  nlohmann::json doc;
  doc["format_version"] = kCheckpointFormatVersion;
  doc["shape"] = {{"vocab_size", s.vocab_size},
                  {"problem_buckets", s.problem_buckets},
                  {"tag_buckets", s.tag_buckets},
                  {"max_len", s.max_len}};
  doc["arrays"] = nlohmann::json::array({
      {{"name", "prev_token_logits"},
       {"dims", {v + 1, v}},
       {"data", std::vector<double>(params.begin(), params.begin() + static_cast<long>(prev_size))}},
      {{"name", "context_bias"},
       {"dims", {static_cast<std::size_t>(s.bucket_count()), v}},
       {"data", std::vector<double>(params.begin() + static_cast<long>(prev_size), params.end())}},
  });
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << doc.dump(1) << '\n';
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

ToyPolicy load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("", "cannot open checkpoint " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("", std::string("checkpoint is not JSON: ") + e.what());
  }
  auto require = [&](const nlohmann::json& obj, const char* key) -> const nlohmann::json& {
    if (!obj.is_object() || !obj.contains(key)) throw ParseError(key, "missing");
    return obj.at(key);
  };
  try {
    if (require(doc, "format_version").get<int>() != kCheckpointFormatVersion) {
      throw ParseError("format_version", "unsupported checkpoint version");
    }
    const auto& sj = require(doc, "shape");
    PolicyShape shape{require(sj, "vocab_size").get<int>(), require(sj, "problem_buckets").get<int>(),
                      require(sj, "tag_buckets").get<int>(), require(sj, "max_len").get<int>()};
    ToyPolicy policy(shape);
    const auto v = static_cast<std::size_t>(shape.vocab_size);
    const std::vector<std::pair<std::string, std::vector<std::size_t>>> expected = {
        {"prev_token_logits", {v + 1, v}},
        {"context_bias", {static_cast<std::size_t>(shape.bucket_count()), v}}};
    const auto& arrays = require(doc, "arrays");
    if (!arrays.is_array() || arrays.size() != expected.size()) throw ParseError("arrays", "expected 2 arrays");
    auto theta = policy.parameters();
    std::size_t offset = 0;
    for (std::size_t i = 0; i < expected.size(); ++i) {
      const auto& a = arrays[i];
      if (require(a, "name").get<std::string>() != expected[i].first) {
        throw ParseError("arrays[" + std::to_string(i) + "].name", "expected " + expected[i].first);
      }
      if (require(a, "dims").get<std::vector<std::size_t>>() != expected[i].second) {
        throw ParseError(expected[i].first + ".dims", "dimension mismatch");
      }
      const auto data = require(a, "data").get<std::vector<double>>();
      if (data.size() != expected[i].second[0] * expected[i].second[1]) {
        throw ParseError(expected[i].first + ".data", "length mismatch");
      }
      std::copy(data.begin(), data.end(), theta.begin() + static_cast<long>(offset));
      offset += data.size();
    }
    return policy;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("", std::string("malformed checkpoint: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ParseError("shape", e.what());
  }
}

}  // namespace sgsd::policy
