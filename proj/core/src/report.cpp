#include <fstream>
#include <ostream>

#include <fmt/format.h>

#include "sgsd/trainer.hpp"

namespace sgsd::trainer {

namespace {

std::string num(double v) { return fmt::format("{:.17g}", v); }

template <typename T, typename Fn>
std::string joined(const std::vector<T>& items, Fn&& fn) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += ';';
    out += fn(items[i]);
  }
  return out;
}

}  // namespace

const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> columns = {
      "step",          "problem",        "task_index",   "reward",        "tokens",
      "k_x",           "skill_ids",      "mistake_ids",  "alphas",        "plain_supports",
      "supports",      "polarities",     "teacher_losses", "problem_loss", "out_of_support",
      "step_loss",     "grad_norm",      "rolling_success", "bank_update",
  };
  return columns;
}

void write_metrics_csv(const TrainReport& report, std::ostream& out) {
  const auto& columns = metrics_columns();
  for (std::size_t i = 0; i < columns.size(); ++i) out << (i > 0 ? "," : "") << columns[i];
  out << '\n';
  for (const auto& step : report.steps) {
    for (std::size_t b = 0; b < step.problems.size(); ++b) {
      const auto& p = step.problems[b];
      const auto& t = p.teachers;
      out << step.step << ',' << b << ',' << p.task_index << ',' << p.reward << ','
          << joined(p.tokens, [](int tok) { return std::to_string(tok); }) << ',' << t.size() << ','
          << joined(t, [](const TeacherRecord& r) { return r.skill_id; }) << ','
          << joined(t, [](const TeacherRecord& r) { return r.mistake_id; }) << ','
          << joined(t, [](const TeacherRecord& r) { return num(r.alpha); }) << ','
          << joined(t, [](const TeacherRecord& r) { return num(r.plain_support); }) << ','
          << joined(t, [](const TeacherRecord& r) { return num(r.support); }) << ','
          << joined(t, [](const TeacherRecord& r) { return std::to_string(r.rho); }) << ','
          << joined(t, [](const TeacherRecord& r) { return num(r.loss); }) << ',' << num(p.loss) << ','
          << p.out_of_support << ',' << num(step.loss) << ',' << num(step.grad_norm) << ','
          << num(step.rolling_success) << ',' << step.bank_update << '\n';
    }
  }
}

void write_metrics_csv(const TrainReport& report, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_metrics_csv(report, out);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

nlohmann::json summary_json(const TrainReport& report) {
  nlohmann::json s;
  s["batch_reduction"] = report.batch_reduction;
  s["objective"] = std::string(to_string(report.config.objective));
  s["ablation"] = std::string(to_string(report.config.ablation));
  s["teacher_strategy"] = std::string(policy::to_string(report.config.teacher.strategy));
  s["seed"] = report.config.seed;
  s["steps"] = report.steps.size();
  s["initial_success"] = report.initial_success ? nlohmann::json(*report.initial_success) : nlohmann::json();
  s["final_success"] = report.final_success ? nlohmann::json(*report.final_success) : nlohmann::json();
  s["final_general_skills"] = report.final_skills;
  s["final_common_mistakes"] = report.final_mistakes;
  std::size_t updates = 0;
  double loss = 0.0;
  for (const auto& step : report.steps) {
    if (step.bank_update == "updated") ++updates;
    loss += step.loss;
  }
  s["bank_updates"] = updates;
  s["mean_loss"] = report.steps.empty() ? 0.0 : loss / static_cast<double>(report.steps.size());
  s["final_rolling_success"] = report.steps.empty() ? 0.0 : report.steps.back().rolling_success;
  return s;
}

}  // namespace sgsd::trainer
