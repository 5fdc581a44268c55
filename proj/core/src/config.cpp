#include "sgsd/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>

#include "sgsd/error.hpp"

namespace sgsd::trainer {

namespace {

using nlohmann::json;

struct Field {
  std::string key;
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const json&, const std::string&)> set;
};

double as_double(const json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError(key, "expected a number");
  return v.get<double>();
}

long long as_integer(const json& v, const std::string& key) {
  if (!v.is_number_integer()) throw ConfigError(key, "expected an integer");
  return v.get<long long>();
}

std::uint64_t as_unsigned(const json& v, const std::string& key) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<long long>() >= 0) return static_cast<std::uint64_t>(v.get<long long>());
  throw ConfigError(key, "expected a non-negative integer");
}

std::string as_string(const json& v, const std::string& key) {
  if (!v.is_string()) throw ConfigError(key, "expected a string");
  return v.get<std::string>();
}

bool as_bool(const json& v, const std::string& key) {
  if (!v.is_boolean()) throw ConfigError(key, "expected true or false");
  return v.get<bool>();
}

json finite_or_string(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

double number_or_inf(const json& v, const std::string& key) {
  if (v.is_string() && v.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
  return as_double(v, key);
}

template <typename T>
Field integer_field(std::string key, T RunConfig::*member) {
  return {key, [member](const RunConfig& c) { return json(c.*member); },
          [member](RunConfig& c, const json& v, const std::string& k) { c.*member = static_cast<T>(as_integer(v, k)); }};
}

template <typename T>
Field unsigned_field(std::string key, T RunConfig::*member) {
  return {key, [member](const RunConfig& c) { return json(c.*member); },
          [member](RunConfig& c, const json& v, const std::string& k) { c.*member = static_cast<T>(as_unsigned(v, k)); }};
}

Field double_field(std::string key, double RunConfig::*member) {
  return {key, [member](const RunConfig& c) { return json(c.*member); },
          [member](RunConfig& c, const json& v, const std::string& k) { c.*member = as_double(v, k); }};
}

Field string_field(std::string key, std::string RunConfig::*member) {
  return {key, [member](const RunConfig& c) { return json(c.*member); },
          [member](RunConfig& c, const json& v, const std::string& k) { c.*member = as_string(v, k); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(unsigned_field("seed", &RunConfig::seed));
    f.push_back(integer_field("steps", &RunConfig::steps));
    f.push_back(integer_field("batch_size", &RunConfig::batch_size));
    f.push_back(unsigned_field("teachers_k", &RunConfig::teachers_k));
    f.push_back({"tau_g", [](const RunConfig& c) { return json(c.gate.tau_g); },
                 [](RunConfig& c, const json& v, const std::string& k) { c.gate.tau_g = as_double(v, k); }});
    f.push_back({"c_delta", [](const RunConfig& c) { return finite_or_string(c.robust.c_delta); },
                 [](RunConfig& c, const json& v, const std::string& k) { c.robust.c_delta = number_or_inf(v, k); }});
    f.push_back({"epsilon_a", [](const RunConfig& c) { return json(c.robust.epsilon_a); },
                 [](RunConfig& c, const json& v, const std::string& k) { c.robust.epsilon_a = as_double(v, k); }});
    f.push_back({"epsilon", [](const RunConfig& c) { return json(c.robust.epsilon); },
                 [](RunConfig& c, const json& v, const std::string& k) { c.robust.epsilon = as_double(v, k); }});
    f.push_back(double_field("learning_rate", &RunConfig::learning_rate));
    f.push_back({"objective", [](const RunConfig& c) { return json(std::string(to_string(c.objective))); },
                 [](RunConfig& c, const json& v, const std::string& k) {
                   try {
                     c.objective = objective_from_string(as_string(v, k));
                   } catch (const std::invalid_argument& e) {
                     throw ConfigError(k, e.what());
                   }
                 }});
    f.push_back(unsigned_field("topk_support", &RunConfig::topk_support));
    f.push_back({"ablation", [](const RunConfig& c) { return json(std::string(to_string(c.ablation))); },
                 [](RunConfig& c, const json& v, const std::string& k) {
                   try {
                     c.ablation = ablation_from_string(as_string(v, k));
                   } catch (const std::invalid_argument& e) {
                     throw ConfigError(k, e.what());
                   }
                 }});
    f.push_back({"teacher.strategy", [](const RunConfig& c) { return json(std::string(policy::to_string(c.teacher.strategy))); },
                 [](RunConfig& c, const json& v, const std::string& k) {
                   try {
                     c.teacher.strategy = policy::teacher_strategy_from_string(as_string(v, k));
                   } catch (const std::invalid_argument& e) {
                     throw ConfigError(k, e.what());
                   }
                 }});
    f.push_back({"teacher.interval", [](const RunConfig& c) { return json(c.teacher.interval); },
                 [](RunConfig& c, const json& v, const std::string& k) { c.teacher.interval = static_cast<long>(as_integer(v, k)); }});
    f.push_back({"teacher.ema_decay", [](const RunConfig& c) { return json(c.teacher.ema_decay); },
                 [](RunConfig& c, const json& v, const std::string& k) { c.teacher.ema_decay = as_double(v, k); }});
    f.push_back(string_field("bank.path", &RunConfig::bank_path));
    f.push_back({"bank.update_enabled", [](const RunConfig& c) { return json(c.evolution.enabled); },
                 [](RunConfig& c, const json& v, const std::string& k) { c.evolution.enabled = as_bool(v, k); }});
    f.push_back({"bank.update_frequency", [](const RunConfig& c) { return json(c.evolution.frequency); },
                 [](RunConfig& c, const json& v, const std::string& k) { c.evolution.frequency = static_cast<long>(as_integer(v, k)); }});
    f.push_back({"bank.success_threshold", [](const RunConfig& c) { return json(c.evolution.success_threshold); },
                 [](RunConfig& c, const json& v, const std::string& k) { c.evolution.success_threshold = as_double(v, k); }});
    f.push_back({"bank.max_new", [](const RunConfig& c) { return json(c.evolution.max_new); },
                 [](RunConfig& c, const json& v, const std::string& k) { c.evolution.max_new = as_unsigned(v, k); }});
    f.push_back({"bank.capacity", [](const RunConfig& c) { return json(c.evolution.capacity); },
                 [](RunConfig& c, const json& v, const std::string& k) { c.evolution.capacity = as_unsigned(v, k); }});
    f.push_back({"bank.merge_group_size", [](const RunConfig& c) { return json(c.evolution.merge.group_size); },
                 [](RunConfig& c, const json& v, const std::string& k) { c.evolution.merge.group_size = as_unsigned(v, k); }});
    f.push_back({"bank.merge_patience", [](const RunConfig& c) { return json(c.evolution.merge.patience); },
                 [](RunConfig& c, const json& v, const std::string& k) { c.evolution.merge.patience = as_unsigned(v, k); }});
    f.push_back({"coldstart.problems", [](const RunConfig& c) { return json(c.cold_start.problems); },
                 [](RunConfig& c, const json& v, const std::string& k) { c.cold_start.problems = static_cast<int>(as_integer(v, k)); }});
    f.push_back({"env.difficulty", [](const RunConfig& c) { return json(c.env.difficulty); },
                 [](RunConfig& c, const json& v, const std::string& k) { c.env.difficulty = static_cast<int>(as_integer(v, k)); }});
    f.push_back({"env.task_count", [](const RunConfig& c) { return json(c.env.task_count); },
                 [](RunConfig& c, const json& v, const std::string& k) { c.env.task_count = static_cast<int>(as_integer(v, k)); }});
    f.push_back({"env.task_seed", [](const RunConfig& c) { return json(c.env.task_seed); },
                 [](RunConfig& c, const json& v, const std::string& k) { c.env.task_seed = as_unsigned(v, k); }});
    f.push_back({"env.tasks_path", [](const RunConfig& c) { return json(c.env.tasks_path); },
                 [](RunConfig& c, const json& v, const std::string& k) { c.env.tasks_path = as_string(v, k); }});
    f.push_back({"policy.vocab_size", [](const RunConfig& c) { return json(c.shape.vocab_size); },
                 [](RunConfig& c, const json& v, const std::string& k) { c.shape.vocab_size = static_cast<int>(as_integer(v, k)); }});
    f.push_back({"policy.problem_buckets", [](const RunConfig& c) { return json(c.shape.problem_buckets); },
                 [](RunConfig& c, const json& v, const std::string& k) { c.shape.problem_buckets = static_cast<int>(as_integer(v, k)); }});
    f.push_back({"policy.tag_buckets", [](const RunConfig& c) { return json(c.shape.tag_buckets); },
                 [](RunConfig& c, const json& v, const std::string& k) { c.shape.tag_buckets = static_cast<int>(as_integer(v, k)); }});
    f.push_back({"policy.max_len", [](const RunConfig& c) { return json(c.shape.max_len); },
                 [](RunConfig& c, const json& v, const std::string& k) { c.shape.max_len = static_cast<int>(as_integer(v, k)); }});
    f.push_back(double_field("policy.init_scale", &RunConfig::init_scale));
    f.push_back(double_field("policy.format_prior", &RunConfig::format_prior));
    f.push_back(string_field("policy.init_checkpoint", &RunConfig::init_checkpoint));
    f.push_back(unsigned_field("embedder.dim", &RunConfig::embedder_dim));
    f.push_back(unsigned_field("embedder.ngram", &RunConfig::embedder_ngram));
    f.push_back({"extractor.backend",
                 [](const RunConfig& c) { return json(c.extractor.backend == extraction::Backend::kMock ? "mock" : "http"); },
                 [](RunConfig& c, const json& v, const std::string& k) {
                   const auto s = as_string(v, k);
                   if (s == "mock") {
                     c.extractor.backend = extraction::Backend::kMock;
                   } else if (s == "http") {
                     c.extractor.backend = extraction::Backend::kHttp;
                   } else {
                     throw ConfigError(k, "expected \"mock\" or \"http\"");
                   }
                 }});
    f.push_back({"extractor.endpoint", [](const RunConfig& c) { return json(c.extractor.endpoint); },
                 [](RunConfig& c, const json& v, const std::string& k) { c.extractor.endpoint = as_string(v, k); }});
    f.push_back({"extractor.model", [](const RunConfig& c) { return json(c.extractor.model); },
                 [](RunConfig& c, const json& v, const std::string& k) { c.extractor.model = as_string(v, k); }});
    f.push_back({"extractor.timeout_seconds", [](const RunConfig& c) { return json(c.extractor.timeout_seconds); },
                 [](RunConfig& c, const json& v, const std::string& k) { c.extractor.timeout_seconds = as_double(v, k); }});
    f.push_back({"extractor.retries", [](const RunConfig& c) { return json(c.extractor.retries); },
                 [](RunConfig& c, const json& v, const std::string& k) { c.extractor.retries = static_cast<int>(as_integer(v, k)); }});
    f.push_back({"extractor.backoff_initial_seconds", [](const RunConfig& c) { return json(c.extractor.backoff_initial_seconds); },
                 [](RunConfig& c, const json& v, const std::string& k) { c.extractor.backoff_initial_seconds = as_double(v, k); }});
    f.push_back({"extractor.api_key_env", [](const RunConfig& c) { return json(c.extractor.api_key_env); },
                 [](RunConfig& c, const json& v, const std::string& k) { c.extractor.api_key_env = as_string(v, k); }});
    f.push_back({"extractor.temperature", [](const RunConfig& c) { return json(c.extractor.temperature); },
                 [](RunConfig& c, const json& v, const std::string& k) { c.extractor.temperature = as_double(v, k); }});
    f.push_back(integer_field("eval.samples", &RunConfig::eval_samples));
    f.push_back(unsigned_field("metrics.rolling_window", &RunConfig::rolling_window));
    f.push_back(string_field("out_dir", &RunConfig::out_dir));
    f.push_back(integer_field("checkpoint_interval", &RunConfig::checkpoint_interval));
    return f;
  }();
  return table;
}

template <typename Fn>
void wrap(const char* key, Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(key, e.what());
  }
}

}  // namespace

std::string_view to_string(Objective objective) {
  switch (objective) {
    case Objective::kGated: return "gated";
    case Objective::kReverseKl: return "reverse_kl";
    case Objective::kForwardKl: return "forward_kl";
    case Objective::kJsd: return "jsd";
  }
  return "unknown";
}

Objective objective_from_string(std::string_view name) {
  for (auto o : {Objective::kGated, Objective::kReverseKl, Objective::kForwardKl, Objective::kJsd}) {
    if (to_string(o) == name) return o;
  }
  throw std::invalid_argument("unknown objective '" + std::string(name) + "'");
}

std::string_view to_string(Ablation ablation) {
  switch (ablation) {
    case Ablation::kNone: return "none";
    case Ablation::kNoPolarity: return "no_polarity";
    case Ablation::kSingleTeacher: return "single_teacher";
    case Ablation::kNoMask: return "no_mask";
    case Ablation::kNoClip: return "no_clip";
    case Ablation::kNoThreshold: return "no_threshold";
    case Ablation::kNoAllThree: return "no_all_three";
  }
  return "unknown";
}

Ablation ablation_from_string(std::string_view name) {
  for (auto a : {Ablation::kNone, Ablation::kNoPolarity, Ablation::kSingleTeacher, Ablation::kNoMask,
                 Ablation::kNoClip, Ablation::kNoThreshold, Ablation::kNoAllThree}) {
    if (to_string(a) == name) return a;
  }
  throw std::invalid_argument("unknown ablation variant '" + std::string(name) + "'");
}

void RunConfig::validate() const {
  if (steps < 0) throw ConfigError("steps", "must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
  if (teachers_k < 1) throw ConfigError("teachers_k", "must be >= 1");
  wrap("tau_g", [&] { gate.validate(); });
  if (!(robust.c_delta > 0.0)) throw ConfigError("c_delta", "must be > 0");
  if (!(robust.epsilon_a >= 0.0) || !std::isfinite(robust.epsilon_a)) throw ConfigError("epsilon_a", "must be finite and >= 0");
  if (!(robust.epsilon > 0.0) || !std::isfinite(robust.epsilon)) throw ConfigError("epsilon", "must be finite and > 0");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate", "must be finite and > 0");
  if (teacher.interval < 1) throw ConfigError("teacher.interval", "must be >= 1");
  if (!(teacher.ema_decay >= 0.0 && teacher.ema_decay < 1.0)) throw ConfigError("teacher.ema_decay", "must lie in [0, 1)");
  if (topk_support > static_cast<std::size_t>(shape.vocab_size)) {
    throw ConfigError("topk_support", "must not exceed policy.vocab_size");
  }
  if (evolution.frequency < 1) throw ConfigError("bank.update_frequency", "must be >= 1");
  if (!(evolution.success_threshold >= 0.0 && evolution.success_threshold <= 1.0)) {
    throw ConfigError("bank.success_threshold", "must lie in [0, 1]");
  }
  if (evolution.capacity < 1) throw ConfigError("bank.capacity", "must be >= 1");
  if (evolution.merge.group_size < 2) throw ConfigError("bank.merge_group_size", "must be >= 2");
  if (evolution.merge.patience < 1) throw ConfigError("bank.merge_patience", "must be >= 1");
  if (cold_start.problems < 1) throw ConfigError("coldstart.problems", "must be >= 1");
  if (env.difficulty < 1 || env.difficulty > 3) throw ConfigError("env.difficulty", "must lie in 1..3");
  if (env.task_count < 1) throw ConfigError("env.task_count", "must be >= 1");
  if (shape.vocab_size < 12) throw ConfigError("policy.vocab_size", "must be >= 12");
  if (shape.problem_buckets < 1) throw ConfigError("policy.problem_buckets", "must be >= 1");
  if (shape.tag_buckets < 1) throw ConfigError("policy.tag_buckets", "must be >= 1");
  if (shape.max_len < 1) throw ConfigError("policy.max_len", "must be >= 1");
  if (!(init_scale >= 0.0) || !std::isfinite(init_scale)) throw ConfigError("policy.init_scale", "must be finite and >= 0");
  if (!std::isfinite(format_prior)) throw ConfigError("policy.format_prior", "must be finite");
  if (embedder_dim < 1) throw ConfigError("embedder.dim", "must be >= 1");
  if (embedder_ngram < 1) throw ConfigError("embedder.ngram", "must be >= 1");
  extractor.validate();
  if (eval_samples < 0) throw ConfigError("eval.samples", "must be >= 0");
  if (rolling_window < 1) throw ConfigError("metrics.rolling_window", "must be >= 1");
  if (checkpoint_interval < 0) throw ConfigError("checkpoint_interval", "must be >= 0");
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

json to_json(const RunConfig& config) {
  json out = json::object();
  for (const auto& f : fields()) out[f.key] = f.get(config);
  return out;
}

RunConfig config_from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("", "config document must be a JSON object");
  RunConfig config;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const auto& table = fields();
    const auto field = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == it.key(); });
    if (field == table.end()) throw ConfigError(it.key(), "unknown key");
    field->set(config, it.value(), it.key());
  }
  config.validate();
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config", "cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("--config", std::string("not valid JSON: ") + e.what());
  }
  return config_from_json(doc);
}

void save_config(const RunConfig& config, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config " + path.string());
  nlohmann::ordered_json doc = nlohmann::ordered_json::object();
  for (const auto& f : fields()) doc[f.key] = nlohmann::ordered_json::parse(f.get(config).dump());
  out << doc.dump(2) << '\n';
}

}  // namespace sgsd::trainer
