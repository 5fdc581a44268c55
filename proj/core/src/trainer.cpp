#include "sgsd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "sgsd/error.hpp"
#include "sgsd/gate.hpp"
#include "sgsd/hash.hpp"

namespace sgsd::trainer {

namespace {

using policy::ContextFeatures;
using policy::Token;
using policy::ToyPolicy;

struct PositionDists {
  std::vector<double> log_p;
  std::vector<double> p;
};

std::vector<PositionDists> position_dists(const ToyPolicy& model, const ContextFeatures& context,
                                          std::span<const Token> tokens) {
  std::vector<PositionDists> out;
  out.reserve(tokens.size());
  int prev = model.shape().vocab_size;
  for (Token token : tokens) {
    PositionDists d;
    d.log_p = model.log_distribution(context, prev);
    d.p.resize(d.log_p.size());
    std::transform(d.log_p.begin(), d.log_p.end(), d.p.begin(), [](double l) { return std::exp(l); });
    out.push_back(std::move(d));
    prev = token;
  }
  return out;
}

int prev_token(std::span<const Token> tokens, std::size_t t, int vocab) {
  return t == 0 ? vocab : tokens[t - 1];
}

bool use_topk(const ObjectiveSpec& spec, std::size_t vocab) {
  return spec.topk_support > 0 && spec.topk_support < vocab;
}

double restricted_logsumexp(std::span<const double> log_p, std::span<const std::size_t> support) {
  double m = -std::numeric_limits<double>::infinity();
  for (auto v : support) m = std::max(m, log_p[v]);
  double s = 0.0;
  for (auto v : support) s += std::exp(log_p[v] - m);
  return m + std::log(s);
}

double divergence(Objective objective, std::span<const double> p_t, std::span<const double> p_s) {
  const distill::DivergenceOptions degraded{true};
  switch (objective) {
    case Objective::kReverseKl: return distill::reverse_kl(p_t, p_s, degraded);
    case Objective::kForwardKl: return distill::forward_kl(p_t, p_s, degraded);
    case Objective::kJsd: return distill::jsd(p_t, p_s, degraded);
    case Objective::kGated: break;
  }
  throw std::logic_error("divergence requested for the gated objective");
}

std::vector<double> divergence_logit_grad(Objective objective, std::span<const double> p_t,
                                          std::span<const double> p_s) {
  switch (objective) {
    case Objective::kReverseKl: return distill::reverse_kl_logit_grad(p_t, p_s);
    case Objective::kForwardKl: return distill::forward_kl_logit_grad(p_t, p_s);
    case Objective::kJsd: return distill::jsd_logit_grad(p_t, p_s);
    case Objective::kGated: break;
  }
  throw std::logic_error("divergence requested for the gated objective");
}

// Per-position quantities shared by the value and the gradient.
struct PositionTerm {
  bool effective = false;
  double gap = 0.0;
  double loss = 0.0;
  std::vector<double> logit_grad;  // d loss_t / d student logits
};

PositionTerm position_term(const PositionDists& student, const PositionDists& teacher, Token y, bool effective,
                           const ObjectiveSpec& spec, bool want_grad) {
  PositionTerm term;
  const auto vocab = student.p.size();
  const auto yi = static_cast<std::size_t>(y);

  std::vector<std::size_t> support;
  std::vector<double> p_t = teacher.p;
  std::vector<double> p_s = student.p;
  if (use_topk(spec, vocab)) {
    auto tk = distill::topk_renormalize(teacher.p, student.p, spec.topk_support);
    support = std::move(tk.support);
    p_t = std::move(tk.teacher);
    p_s = std::move(tk.student);
    if (std::find(support.begin(), support.end(), yi) == support.end()) return term;  // masked out
    const double norm_t = restricted_logsumexp(teacher.log_p, support);
    const double norm_s = restricted_logsumexp(student.log_p, support);
    term.gap = (teacher.log_p[yi] - norm_t) - (student.log_p[yi] - norm_s);
  } else {
    term.gap = teacher.log_p[yi] - student.log_p[yi];
  }
  term.effective = effective;
  if (!effective) return term;

  if (spec.objective == Objective::kGated) {
    term.loss = gate::gate_loss(term.gap, spec.gate);
    if (want_grad) {
      // d gate_loss / d log p_S(y) = -g(gap); d log p_S(y) / dz = onehot - p
      const double g = gate::gate_grad(term.gap, spec.gate);
      term.logit_grad.assign(vocab, 0.0);
      if (support.empty()) {
        for (std::size_t j = 0; j < vocab; ++j) term.logit_grad[j] = g * p_s[j];
      } else {
        for (std::size_t i = 0; i < support.size(); ++i) term.logit_grad[support[i]] = g * p_s[i];
      }
      term.logit_grad[yi] -= g;
    }
    return term;
  }

  term.loss = divergence(spec.objective, p_t, p_s);
  if (want_grad) {
    const auto grad = divergence_logit_grad(spec.objective, p_t, p_s);
    if (support.empty()) {
      term.logit_grad = grad;
    } else {
      term.logit_grad.assign(vocab, 0.0);
      for (std::size_t i = 0; i < support.size(); ++i) term.logit_grad[support[i]] = grad[i];
    }
  }
  return term;
}

struct TeacherPass {
  TeacherEval eval;
  std::vector<PositionTerm> positions;
};

std::vector<TeacherPass> teacher_passes(const ToyPolicy& student, const ToyPolicy& teacher,
                                        const ProblemTerms& terms, const ObjectiveSpec& spec, bool want_grad) {
  if (terms.mask.size() != terms.tokens.size()) throw std::invalid_argument("mask and token lengths differ");
  const auto student_dists = position_dists(student, terms.student, terms.tokens);
  std::vector<TeacherPass> passes;
  passes.reserve(terms.teachers.size());
  for (const auto& tt : terms.teachers) {
    const auto teacher_dists = position_dists(teacher, tt.context, terms.tokens);
    TeacherPass pass;
    double sum = 0.0;
    double z = 0.0;
    for (std::size_t t = 0; t < terms.tokens.size(); ++t) {
      auto pos = position_term(student_dists[t], teacher_dists[t], terms.tokens[t], terms.mask[t] != 0, spec,
                               want_grad && tt.rho != 0);
      const bool in_support = pos.effective || terms.mask[t] == 0;
      if (!in_support) ++pass.eval.out_of_support;
      pass.eval.gaps.push_back(pos.gap);
      pass.eval.mask.push_back(pos.effective ? 1 : 0);
      if (pos.effective) {
        sum += pos.loss;
        z += 1.0;
      }
      pass.positions.push_back(std::move(pos));
    }
    pass.eval.loss = sum / (z + spec.epsilon);
    passes.push_back(std::move(pass));
  }
  return passes;
}

std::uint64_t tag(std::string_view name) { return fnv1a(name); }

RunConfig validated(RunConfig config) {
  config.validate();
  return config;
}

}  // namespace

std::vector<TeacherEval> evaluate_teachers(const ToyPolicy& student, const ToyPolicy& teacher,
                                           const ProblemTerms& terms, const ObjectiveSpec& spec) {
  auto passes = teacher_passes(student, teacher, terms, spec, false);
  std::vector<TeacherEval> out;
  out.reserve(passes.size());
  for (auto& p : passes) out.push_back(std::move(p.eval));
  return out;
}

double objective_value(const ToyPolicy& student, const ToyPolicy& teacher, const ProblemTerms& terms,
                       const ObjectiveSpec& spec) {
  const auto evals = evaluate_teachers(student, teacher, terms, spec);
  std::vector<double> losses;
  std::vector<double> alphas;
  std::vector<int> rhos;
  for (std::size_t k = 0; k < evals.size(); ++k) {
    losses.push_back(evals[k].loss);
    alphas.push_back(terms.teachers[k].alpha);
    rhos.push_back(terms.teachers[k].rho);
  }
  return distill::sgsd_loss(losses, alphas, rhos);
}

std::vector<double> objective_gradient(const ToyPolicy& student, const ToyPolicy& teacher,
                                       const ProblemTerms& terms, const ObjectiveSpec& spec) {
  std::vector<double> grad(student.parameter_count(), 0.0);
  const auto passes = teacher_passes(student, teacher, terms, spec, true);
  const int vocab = student.shape().vocab_size;
  for (std::size_t k = 0; k < passes.size(); ++k) {
    const auto& tt = terms.teachers[k];
    if (tt.rho == 0 || tt.alpha == 0.0) continue;
    const auto& pass = passes[k];
    const double z = static_cast<double>(std::count(pass.eval.mask.begin(), pass.eval.mask.end(), 1)) + spec.epsilon;
    const double coeff = tt.alpha * static_cast<double>(tt.rho) / z;
    for (std::size_t t = 0; t < pass.positions.size(); ++t) {
      const auto& pos = pass.positions[t];
      if (!pos.effective) continue;
      policy::accumulate_logit_grad(student, terms.student, prev_token(terms.tokens, t, vocab), pos.logit_grad,
                                    coeff, grad);
    }
  }
  return grad;
}

std::vector<std::uint8_t> effective_mask(std::span<const Token> tokens, const policy::PolicyShape& shape,
                                         bool include_end) {
  std::vector<std::uint8_t> mask;
  mask.reserve(tokens.size());
  for (Token t : tokens) mask.push_back(include_end || t != shape.end_token() ? 1 : 0);
  return mask;
}

distill::RobustParams effective_robust(const distill::RobustParams& base, Ablation ablation) {
  auto p = base;
  if (ablation == Ablation::kNoClip || ablation == Ablation::kNoAllThree) {
    p.c_delta = std::numeric_limits<double>::infinity();
  }
  if (ablation == Ablation::kNoThreshold || ablation == Ablation::kNoAllThree) p.epsilon_a = 0.0;
  return p;
}

bool masks_end_only(Ablation ablation) {
  return ablation != Ablation::kNoMask && ablation != Ablation::kNoAllThree;
}

std::size_t effective_k(std::size_t k, Ablation ablation) {
  return ablation == Ablation::kSingleTeacher ? 1 : k;
}

int assign_polarity(distill::Outcome outcome, double support, double epsilon_a, Ablation ablation) {
  if (ablation == Ablation::kNoPolarity) return std::abs(support) > epsilon_a ? 1 : 0;
  return distill::polarity(outcome, support, epsilon_a);
}

double evaluate(const ToyPolicy& model, std::span<const env::TaskInstance> suite, int samples, std::uint64_t seed) {
  if (samples < 1) throw std::invalid_argument("evaluate: samples must be >= 1");
  if (suite.empty()) throw std::invalid_argument("evaluate: empty task suite");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < suite.size(); ++i) {
    const auto ctx = skillbank::student_context(suite[i], model.shape()).features;
    for (int j = 0; j < samples; ++j) {
      const auto rollout = policy::sample_rollout(model, ctx, mix_seed(mix_seed(seed, i), static_cast<std::uint64_t>(j)));
      if (env::verify(suite[i], rollout.tokens).r > 0) ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(suite.size() * static_cast<std::size_t>(samples));
}

std::vector<env::TaskInstance> make_suite(const RunConfig& config) {
  if (!config.env.tasks_path.empty()) {
    auto tasks = env::load_tasks(config.env.tasks_path);
    if (tasks.empty()) throw ConfigError("env.tasks_path", "task file holds no tasks");
    return tasks;
  }
  return env::generate_tasks(config.env.task_seed, config.env.task_count, config.env.difficulty);
}

ToyPolicy initial_policy(const RunConfig& config) {
  if (!config.init_checkpoint.empty()) {
    auto loaded = policy::load_checkpoint(config.init_checkpoint);
    if (!(loaded.shape() == config.shape)) {
      throw ConfigError("policy.init_checkpoint", "checkpoint shape differs from the configured policy shape");
    }
    return loaded;
  }
  auto model = ToyPolicy::random(config.shape, mix_seed(config.seed, tag("policy")), config.init_scale);
  const int end = config.shape.end_token();
  for (int d = 0; d <= 9; ++d) {
    model.prev_row(config.shape.vocab_size)[d] += config.format_prior;
    model.prev_row(d)[end] += config.format_prior;
  }
  return model;
}

skillbank::SkillBank initial_bank(const RunConfig& config, const ToyPolicy& model, extraction::Extractor& extractor) {
  if (!config.bank_path.empty()) return skillbank::load_bank(config.bank_path);
  const auto seeds = env::generate_tasks(mix_seed(config.env.task_seed, tag("coldstart")), config.cold_start.problems,
                                         config.env.difficulty);
  skillbank::ColdStartOptions options;
  options.seed = mix_seed(config.seed, tag("coldstart"));
  options.merge = config.evolution.merge;
  return skillbank::cold_start(seeds, model, extractor, options);
}

Trainer::Trainer(RunConfig config, TrainerInputs inputs)
    : config_(validated(std::move(config))),
      policy_(config_.shape),
      teacher_(config_.teacher, policy_) {
  extractor_ = inputs.extractor;
  if (!extractor_) extractor_ = extraction::make_extractor(config_.extractor);
  embedder_ = inputs.embedder;
  if (!embedder_) embedder_ = std::make_shared<HashingEmbedder>(config_.embedder_dim, config_.embedder_ngram);

  policy_ = inputs.policy ? std::move(*inputs.policy) : initial_policy(config_);
  if (!(policy_.shape() == config_.shape)) throw ConfigError("policy.vocab_size", "injected policy shape differs");
  teacher_ = policy::TeacherHandle(config_.teacher, policy_);
  suite_ = inputs.suite ? std::move(*inputs.suite) : make_suite(config_);
  if (suite_.empty()) throw ConfigError("env.task_count", "empty task suite");
  bank_ = inputs.bank ? std::move(*inputs.bank) : initial_bank(config_, policy_, *extractor_);
  skillbank::check_ids(bank_);
  rebuild_index();
}

void Trainer::rebuild_index() { index_ = std::make_unique<skillbank::RetrievalIndex>(bank_, *embedder_); }

ObjectiveSpec Trainer::objective_spec() const {
  ObjectiveSpec spec;
  spec.objective = config_.objective;
  spec.topk_support = config_.topk_support;
  spec.gate = config_.gate;
  spec.epsilon = config_.robust.epsilon;
  return spec;
}

Trainer::Scored Trainer::score_problem(const env::TaskInstance& task, std::size_t task_index,
                                       std::uint64_t rollout_seed) const {
  const auto& shape = policy_.shape();
  const auto student = skillbank::student_context(task, shape);
  if (!student.features.is_student()) throw std::logic_error("student context carries skill tags");

  Scored out;
  auto rollout = policy::sample_rollout(policy_, student.features, rollout_seed);
  const auto verdict = env::verify(task, rollout.tokens);
  out.record.task_index = task_index;
  out.record.reward = verdict.r;
  out.record.tokens = rollout.tokens;

  out.terms.student = student.features;
  out.terms.tokens = std::move(rollout.tokens);
  out.terms.mask = effective_mask(out.terms.tokens, shape, !masks_end_only(config_.ablation));

  const auto hits = index_->retrieve(task.text(), effective_k(config_.teachers_k, config_.ablation));
  const auto pairs = skillbank::pair_rankwise(bank_, hits);
  if (pairs.empty()) {
    if (!warned_empty_) spdlog::warn("no teacher pairs retrieved for '{}'; step proceeds with zero teachers", task.text());
    warned_empty_ = true;
    return out;
  }
  std::vector<double> skill_scores;
  std::vector<double> mistake_scores;
  for (const auto& p : pairs) {
    skill_scores.push_back(p.skill_score);
    mistake_scores.push_back(p.mistake_score);
  }
  const auto alphas = distill::teacher_weights(skill_scores, mistake_scores);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    out.terms.teachers.push_back({skillbank::compose_context(pairs[k], task, shape).features, alphas[k], 0});
  }

  const auto spec = objective_spec();
  const auto evals = evaluate_teachers(policy_, teacher_.params(), out.terms, spec);
  const auto robust = effective_robust(config_.robust, config_.ablation);
  const auto outcome = distill::outcome_from_int(verdict.r);
  for (std::size_t k = 0; k < evals.size(); ++k) {
    const distill::GapSeries series(evals[k].gaps, evals[k].mask);
    TeacherRecord rec;
    rec.skill_id = pairs[k].skill.skill_id;
    rec.mistake_id = pairs[k].mistake.mistake_id;
    rec.alpha = alphas[k];
    rec.plain_support = distill::plain_support(series);
    rec.support = distill::robust_support(series, robust);
    rec.rho = assign_polarity(outcome, rec.support, robust.epsilon_a, config_.ablation);
    rec.loss = evals[k].loss;
    out.terms.teachers[k].rho = rec.rho;
    out.record.loss += rec.alpha * rec.rho * rec.loss;
    out.record.out_of_support += evals[k].out_of_support;
    out.record.teachers.push_back(std::move(rec));
  }
  return out;
}

StepRecord Trainer::step() {
  ++step_;
  StepRecord record;
  record.step = step_;
  const auto batch = static_cast<std::size_t>(config_.batch_size);
  const auto spec = objective_spec();
  std::vector<double> grad(policy_.parameter_count(), 0.0);
  const std::uint64_t step_seed = mix_seed(mix_seed(config_.seed, tag("step")), static_cast<std::uint64_t>(step_));

  for (std::size_t b = 0; b < batch; ++b) {
    const auto h = mix_seed(step_seed, b);
    const auto index = static_cast<std::size_t>(h % suite_.size());
    auto scored = score_problem(suite_[index], index, mix_seed(h, 1));
    if (!scored.terms.teachers.empty()) {
      const auto g = objective_gradient(policy_, teacher_.params(), scored.terms, spec);
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i] / static_cast<double>(batch);
    }
    record.loss += scored.record.loss / static_cast<double>(batch);
    window_.push_back(skillbank::make_memory(suite_[index], scored.record.tokens, policy_.shape().vocab_size));
    recent_rewards_.push_back(scored.record.reward);
    record.problems.push_back(std::move(scored.record));
  }

  double norm = 0.0;
  for (double g : grad) norm += g * g;
  record.grad_norm = std::sqrt(norm);
  policy_ = policy::apply_update(policy_, grad, config_.learning_rate);
  teacher_.sync(policy_, step_);

  if (step_ % config_.evolution.frequency == 0) {
    std::optional<std::filesystem::path> dir;
    if (!config_.out_dir.empty()) dir = std::filesystem::path(config_.out_dir) / "bank";
    skillbank::UpdateOutcome outcome;
    try {
      outcome = skillbank::online_update(bank_, window_, step_, config_.evolution, *extractor_, dir);
    } catch (const std::exception& e) {
      if (!config_.out_dir.empty()) {
        const auto path = std::filesystem::path(config_.out_dir) / "checkpoints" /
                          ("resume_step_" + std::to_string(step_) + ".json");
        write_checkpoint(path);
        spdlog::error("bank persistence failed at step {}; resumable checkpoint at {}", step_, path.string());
      }
      throw;
    }
    record.bank_update = std::string(skillbank::to_string(outcome.status));
    if (outcome.status == skillbank::UpdateStatus::kUpdated) rebuild_index();
    window_.clear();
  }

  const std::size_t w = std::min(config_.rolling_window, recent_rewards_.size());
  const auto wins = std::count_if(recent_rewards_.end() - static_cast<std::ptrdiff_t>(w), recent_rewards_.end(),
                                  [](int r) { return r > 0; });
  record.rolling_success = w == 0 ? 0.0 : static_cast<double>(wins) / static_cast<double>(w);
  if (recent_rewards_.size() > config_.rolling_window) {
    recent_rewards_.erase(recent_rewards_.begin(),
                          recent_rewards_.end() - static_cast<std::ptrdiff_t>(config_.rolling_window));
  }

  if (!config_.out_dir.empty() && config_.checkpoint_interval > 0 && step_ % config_.checkpoint_interval == 0) {
    write_checkpoint(std::filesystem::path(config_.out_dir) / "checkpoints" /
                     ("step_" + std::to_string(step_) + ".json"));
  }
  return record;
}

void Trainer::write_checkpoint(const std::filesystem::path& path) const {
  std::filesystem::create_directories(path.parent_path());
  policy::save_checkpoint(policy_, path);
}

TrainReport Trainer::run() {
  TrainReport report;
  report.config = config_;
  const auto eval_seed = mix_seed(config_.seed, tag("eval"));
  const std::filesystem::path out(config_.out_dir);
  if (!config_.out_dir.empty()) {
    std::filesystem::create_directories(out);
    save_config(config_, out / "config.json");
    skillbank::save_bank(bank_, out / "bank" / "bank_initial.json");
  }
  if (config_.eval_samples > 0) report.initial_success = evaluate(policy_, suite_, config_.eval_samples, eval_seed);
  while (step_ < config_.steps) report.steps.push_back(step());
  if (config_.eval_samples > 0) report.final_success = evaluate(policy_, suite_, config_.eval_samples, eval_seed);
  report.final_skills = bank_.general_skills.size();
  report.final_mistakes = bank_.common_mistakes.size();

  if (!config_.out_dir.empty()) {
    const auto files = {out / "metrics.csv", out / "summary.json", out / "policy_final.json", out / "bank_final.json"};
    write_metrics_csv(report, out / "metrics.csv");
    write_checkpoint(out / "policy_final.json");
    skillbank::save_bank(bank_, out / "bank_final.json");
    report.written.assign(files.begin(), files.end());
    std::ofstream summary(out / "summary.json");
    if (!summary) throw std::runtime_error("cannot write " + (out / "summary.json").string());
    summary << summary_json(report).dump(2) << '\n';
  }
  return report;
}

TrainReport train(const RunConfig& config, TrainerInputs inputs) {
  Trainer trainer(config, std::move(inputs));
  return trainer.run();
}

TrainReport ablate(RunConfig config, Ablation variant, TrainerInputs inputs) {
  config.ablation = variant;
  return train(config, std::move(inputs));
}

}  // namespace sgsd::trainer
