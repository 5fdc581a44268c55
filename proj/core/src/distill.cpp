#include "sgsd/distill.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace sgsd::distill {

namespace {

int sign_of(double v) { return (v > 0.0) - (v < 0.0); }

double masked_denominator(std::span<const std::uint8_t> mask, double epsilon) {
  double count = 0.0;
  for (auto m : mask) count += m;
  return count + epsilon;
}

void check_distribution(std::span<const double> p, const char* name, bool allow_degraded) {
  if (p.empty()) throw std::invalid_argument(std::string(name) + ": empty distribution");
  double total = 0.0;
  for (double v : p) {
    if (!std::isfinite(v) || v < 0.0 || (!allow_degraded && v == 0.0)) {
      throw std::invalid_argument(std::string(name) + ": entries must be finite and positive");
    }
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument(std::string(name) + ": does not sum to 1");
  }
}

void check_pair(std::span<const double> p, std::span<const double> q, bool allow_degraded) {
  check_distribution(p, "teacher", allow_degraded);
  check_distribution(q, "student", allow_degraded);
  if (p.size() != q.size()) throw std::invalid_argument("distributions differ in size");
}

constexpr double kLogFloor = 1e-300;

double safe_log(double v) { return std::log(std::max(v, kLogFloor)); }

// sum_v a_v log(a_v / b_v), with the 0 log 0 = 0 convention.
double kl(std::span<const double> a, std::span<const double> b) {
  double total = 0.0;
  for (std::size_t v = 0; v < a.size(); ++v) {
    if (a[v] == 0.0) continue;
    total += a[v] * (safe_log(a[v]) - safe_log(b[v]));
  }
  return total;
}

// Chain rule through softmax: dz_j = p_j (G_j - sum_v p_v G_v).
std::vector<double> through_softmax(std::span<const double> p, const std::vector<double>& g) {
  double mean = 0.0;
  for (std::size_t v = 0; v < p.size(); ++v) mean += p[v] * g[v];
  std::vector<double> out(p.size());
  for (std::size_t v = 0; v < p.size(); ++v) out[v] = p[v] * (g[v] - mean);
  return out;
}

}  // namespace

GapSeries::GapSeries(std::vector<double> deltas, std::vector<std::uint8_t> mask)
    : deltas_(std::move(deltas)), mask_(std::move(mask)) {
  if (deltas_.empty()) throw std::invalid_argument("GapSeries: empty series");
  if (deltas_.size() != mask_.size()) throw std::invalid_argument("GapSeries: mask length mismatch");
  for (double d : deltas_) {
    if (!std::isfinite(d)) throw std::invalid_argument("GapSeries: non-finite gap");
  }
  for (auto m : mask_) {
    if (m > 1) throw std::invalid_argument("GapSeries: mask entries must be 0 or 1");
  }
}

GapSeries GapSeries::unmasked(std::vector<double> deltas) {
  std::vector<std::uint8_t> mask(deltas.size(), 1);
  return GapSeries(std::move(deltas), std::move(mask));
}

std::size_t GapSeries::effective_count() const noexcept {
  return static_cast<std::size_t>(std::count(mask_.begin(), mask_.end(), std::uint8_t{1}));
}

void RobustParams::validate() const {
  if (std::isnan(c_delta) || c_delta <= 0.0) throw std::invalid_argument("c_delta must be > 0");
  if (!std::isfinite(epsilon_a) || epsilon_a < 0.0) {
    throw std::invalid_argument("epsilon_a must be >= 0");
  }
  if (!std::isfinite(epsilon) || epsilon <= 0.0) throw std::invalid_argument("epsilon must be > 0");
}

Outcome outcome_from_int(int r) {
  if (r == 1) return Outcome::kSuccess;
  if (r == -1) return Outcome::kFailure;
  throw std::invalid_argument("outcome must be -1 or +1, got " + std::to_string(r));
}

std::vector<double> token_gaps(std::span<const double> teacher_logprobs,
                               std::span<const double> student_logprobs) {
  if (teacher_logprobs.size() != student_logprobs.size()) {
    throw std::invalid_argument("token_gaps: length mismatch");
  }
  std::vector<double> out(teacher_logprobs.size());
  for (std::size_t t = 0; t < out.size(); ++t) {
    const double lt = teacher_logprobs[t];
    const double ls = student_logprobs[t];
    if (!std::isfinite(lt) || !std::isfinite(ls)) {
      throw std::invalid_argument("token_gaps: non-finite log-probability");
    }
    if (lt > 0.0 || ls > 0.0) throw std::invalid_argument("token_gaps: log-probability above 0");
    out[t] = lt - ls;
  }
  return out;
}

double plain_support(const GapSeries& gaps) {
  const auto d = gaps.deltas();
  return std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
}

double robust_support(const GapSeries& gaps, const RobustParams& params) {
  params.validate();
  const auto d = gaps.deltas();
  const auto m = gaps.mask();
  double numerator = 0.0;
  for (std::size_t t = 0; t < d.size(); ++t) {
    if (m[t] == 0) continue;
    numerator += std::clamp(d[t], -params.c_delta, params.c_delta);
  }
  return numerator / masked_denominator(m, params.epsilon);
}

int polarity(Outcome outcome, double support, double epsilon_a) {
  if (std::abs(support) <= epsilon_a) return 0;
  return static_cast<int>(outcome) * sign_of(support);
}

std::vector<double> teacher_weights(std::span<const double> skill_scores,
                                    std::span<const double> mistake_scores) {
  if (skill_scores.empty()) throw std::invalid_argument("teacher_weights: no teachers");
  if (skill_scores.size() != mistake_scores.size()) {
    throw std::invalid_argument("teacher_weights: score lists differ in length");
  }
  std::vector<double> s(skill_scores.size());
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (!std::isfinite(skill_scores[k]) || !std::isfinite(mistake_scores[k])) {
      throw std::invalid_argument("teacher_weights: non-finite score");
    }
    s[k] = 0.5 * (skill_scores[k] + mistake_scores[k]);
  }
  const double top = *std::max_element(s.begin(), s.end());
  double total = 0.0;
  for (double& v : s) {
    v = std::exp(v - top);
    total += v;
  }
  for (double& v : s) v /= total;
  return s;
}

double per_teacher_gated_loss(const GapSeries& gaps, const gate::GateParams& gate, double epsilon) {
  const auto d = gaps.deltas();
  const auto m = gaps.mask();
  double numerator = 0.0;
  for (std::size_t t = 0; t < d.size(); ++t) {
    if (m[t] == 0) continue;
    numerator += gate::gate_loss(d[t], gate);
  }
  return numerator / masked_denominator(m, epsilon);
}

double sgsd_loss(std::span<const double> per_teacher_losses, std::span<const double> weights,
                 std::span<const int> polarities) {
  if (per_teacher_losses.size() != weights.size() || weights.size() != polarities.size()) {
    throw std::invalid_argument("sgsd_loss: length mismatch");
  }
  double total = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    total += weights[k] * static_cast<double>(polarities[k]) * per_teacher_losses[k];
  }
  return total;
}

TokenCredit token_credits(std::span<const std::vector<double>> gaps_per_teacher,
                          std::span<const std::uint8_t> mask, std::span<const double> weights,
                          std::span<const int> polarities, const gate::GateParams& gate,
                          double epsilon) {
  const std::size_t teachers = gaps_per_teacher.size();
  if (weights.size() != teachers || polarities.size() != teachers) {
    throw std::invalid_argument("token_credits: teacher count mismatch");
  }
  const double z = masked_denominator(mask, epsilon);
  TokenCredit credits(teachers);
  for (std::size_t k = 0; k < teachers; ++k) {
    const auto& gaps = gaps_per_teacher[k];
    if (gaps.size() != mask.size()) throw std::invalid_argument("token_credits: length mismatch");
    auto& row = credits[k];
    row.assign(gaps.size(), 0.0);
    const double scale = weights[k] * static_cast<double>(polarities[k]);
    if (scale == 0.0) continue;
    for (std::size_t t = 0; t < gaps.size(); ++t) {
      if (mask[t] == 0) continue;
      row[t] = scale * (1.0 / z) * gate::gate_grad(gaps[t], gate);
    }
  }
  return credits;
}

double reverse_kl(std::span<const double> p_teacher, std::span<const double> p_student,
                  DivergenceOptions options) {
  check_pair(p_teacher, p_student, options.allow_degraded);
  return kl(p_teacher, p_student);
}

double forward_kl(std::span<const double> p_teacher, std::span<const double> p_student,
                  DivergenceOptions options) {
  check_pair(p_teacher, p_student, options.allow_degraded);
  return kl(p_student, p_teacher);
}

double jsd(std::span<const double> p_teacher, std::span<const double> p_student,
           DivergenceOptions options) {
  check_pair(p_teacher, p_student, options.allow_degraded);
  std::vector<double> mid(p_teacher.size());
  for (std::size_t v = 0; v < mid.size(); ++v) mid[v] = 0.5 * (p_teacher[v] + p_student[v]);
  return 0.5 * kl(p_teacher, mid) + 0.5 * kl(p_student, mid);
}

std::vector<double> reverse_kl_logit_grad(std::span<const double> p_teacher,
                                          std::span<const double> p_student) {
  check_pair(p_teacher, p_student, false);
  std::vector<double> out(p_student.size());
  for (std::size_t v = 0; v < out.size(); ++v) out[v] = p_student[v] - p_teacher[v];
  return out;
}

std::vector<double> forward_kl_logit_grad(std::span<const double> p_teacher,
                                          std::span<const double> p_student) {
  check_pair(p_teacher, p_student, false);
  std::vector<double> g(p_student.size());
  for (std::size_t v = 0; v < g.size(); ++v) g[v] = std::log(p_student[v]) - std::log(p_teacher[v]);
  return through_softmax(p_student, g);
}

std::vector<double> jsd_logit_grad(std::span<const double> p_teacher,
                                   std::span<const double> p_student) {
  check_pair(p_teacher, p_student, false);
  std::vector<double> g(p_student.size());
  for (std::size_t v = 0; v < g.size(); ++v) {
    const double mid = 0.5 * (p_teacher[v] + p_student[v]);
    g[v] = 0.5 * (std::log(p_student[v]) - std::log(mid));
  }
  return through_softmax(p_student, g);
}

TopKSupport topk_renormalize(std::span<const double> teacher_dist,
                             std::span<const double> student_dist, std::size_t k) {
  if (teacher_dist.size() != student_dist.size()) {
    throw std::invalid_argument("topk_renormalize: size mismatch");
  }
  if (k == 0 || k > teacher_dist.size()) throw std::out_of_range("topk_renormalize: k out of range");

  std::vector<std::size_t> order(teacher_dist.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return teacher_dist[a] > teacher_dist[b];
  });
  order.resize(k);
  std::sort(order.begin(), order.end());

  TopKSupport out;
  out.support = order;
  double teacher_mass = 0.0;
  double student_mass = 0.0;
  for (auto v : order) {
    teacher_mass += teacher_dist[v];
    student_mass += student_dist[v];
  }
  if (teacher_mass <= 0.0 || student_mass <= 0.0) {
    throw std::invalid_argument("topk_renormalize: zero mass on support");
  }
  for (auto v : order) {
    out.teacher.push_back(teacher_dist[v] / teacher_mass);
    out.student.push_back(student_dist[v] / student_mass);
  }
  return out;
}

}  // namespace sgsd::distill
