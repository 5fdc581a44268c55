#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "sgsd/gate.hpp"

// Token-level credit assignment for skill-conditioned multi-teacher
// self-distillation: gaps, (robust) support scores, outcome-validated
// polarity, retrieval weights, per-teacher gated losses and the dense
// policy-gradient coefficients they induce.

namespace sgsd::distill {

inline constexpr double kDefaultEpsilon = 1e-8;

// Per-token gaps log p_T(y_t) - log p_S(y_t) with an effective-token mask.
class GapSeries {
 public:
  // Throws std::invalid_argument if lengths differ, the series is empty or a
  // gap is non-finite. Mask entries must be 0 or 1.
  GapSeries(std::vector<double> deltas, std::vector<std::uint8_t> mask);

  // All positions effective.
  static GapSeries unmasked(std::vector<double> deltas);

  std::span<const double> deltas() const noexcept { return deltas_; }
  std::span<const std::uint8_t> mask() const noexcept { return mask_; }
  std::size_t size() const noexcept { return deltas_.size(); }

  // Sum of mask entries.
  std::size_t effective_count() const noexcept;

 private:
  std::vector<double> deltas_;
  std::vector<std::uint8_t> mask_;
};

struct RobustParams {
  double c_delta = 3.0;    // clip bound; +inf disables clipping
  double epsilon_a = 0.05; // neutral-zone half width
  double epsilon = kDefaultEpsilon;

  void validate() const;
};

enum class Outcome : int { kFailure = -1, kSuccess = 1 };

// Throws std::invalid_argument for anything but -1 / +1.
Outcome outcome_from_int(int r);

struct TeacherVerdict {
  double plain_support = 0.0;
  double robust_support = 0.0;
  int polarity = 0;
  double weight = 0.0;
};

// Elementwise teacher - student. Inputs are sampled-token log-probabilities.
std::vector<double> token_gaps(std::span<const double> teacher_logprobs,
                               std::span<const double> student_logprobs);

// Mean gap over all tokens; the mask is ignored.
double plain_support(const GapSeries& gaps);

// Masked mean of clipped gaps, guarded by epsilon.
double robust_support(const GapSeries& gaps, const RobustParams& params);

// 0 inside the neutral zone |support| <= epsilon_a (and at support == 0),
// otherwise sign(r) * sign(support).
int polarity(Outcome outcome, double support, double epsilon_a);

// softmax of the averaged skill/mistake retrieval scores.
std::vector<double> teacher_weights(std::span<const double> skill_scores,
                                    std::span<const double> mistake_scores);

// Masked mean of gate_loss over raw (unclipped) gaps.
double per_teacher_gated_loss(const GapSeries& gaps, const gate::GateParams& gate,
                              double epsilon = kDefaultEpsilon);

// sum_k alpha_k rho_k loss_k, reduced in index order.
double sgsd_loss(std::span<const double> per_teacher_losses, std::span<const double> weights,
                 std::span<const int> polarities);

// W[k][t] = alpha_k rho_k (m_t / Z) g(delta_t^k), Z = sum_t m_t + epsilon.
// sum_k W[k][t] is the negative gradient of sgsd_loss with respect to the
// student log-probability of token t.
using TokenCredit = std::vector<std::vector<double>>;

TokenCredit token_credits(std::span<const std::vector<double>> gaps_per_teacher,
                          std::span<const std::uint8_t> mask, std::span<const double> weights,
                          std::span<const int> polarities, const gate::GateParams& gate,
                          double epsilon = kDefaultEpsilon);

// ---------------------------------------------------------------------------
// Full-distribution divergences. Inputs must be strictly positive and sum to 1
// within 1e-9 unless `allow_degraded` is set, in which case zero entries are
// accepted and logarithms are clamped at 1e-300.

struct DivergenceOptions {
  bool allow_degraded = false;
};

double reverse_kl(std::span<const double> p_teacher, std::span<const double> p_student,
                  DivergenceOptions options = {});
double forward_kl(std::span<const double> p_teacher, std::span<const double> p_student,
                  DivergenceOptions options = {});
double jsd(std::span<const double> p_teacher, std::span<const double> p_student,
           DivergenceOptions options = {});

// Gradients of the divergences above with respect to the student logits,
// given p_student = softmax(logits). Used by the divergence objectives.
std::vector<double> reverse_kl_logit_grad(std::span<const double> p_teacher,
                                          std::span<const double> p_student);
std::vector<double> forward_kl_logit_grad(std::span<const double> p_teacher,
                                          std::span<const double> p_student);
std::vector<double> jsd_logit_grad(std::span<const double> p_teacher,
                                   std::span<const double> p_student);

struct TopKSupport {
  std::vector<double> teacher;
  std::vector<double> student;
  std::vector<std::size_t> support;  // ascending vocabulary index
};

// Restricts both distributions to the teacher's top-k entries (ties broken by
// lower index) and renormalizes; entries follow the order of `support`.
TopKSupport topk_renormalize(std::span<const double> teacher_dist,
                             std::span<const double> student_dist, std::size_t k);

}  // namespace sgsd::distill
