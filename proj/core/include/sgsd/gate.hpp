#pragma once

// Bounded gated loss on a teacher-student log-probability gap.
//
//   loss(d) = log 2 - log(1 + exp(-d^2 / (2 tau)))
//   grad(d) = d / (tau (1 + exp(d^2 / (2 tau))))
//
// The loss is zero at d = 0, even, and saturates at log 2. The gradient keeps
// the sign of d, is bounded by 1/sqrt(e tau), vanishes linearly near zero and
// decays like exp(-d^2 / (2 tau)) for large gaps.

namespace sgsd::gate {

struct GateParams {
  double tau_g = 1.0;

  // Throws std::invalid_argument unless tau_g is finite and positive.
  void validate() const;
};

// Throws std::domain_error for non-finite delta.
double gate_loss(double delta, const GateParams& params);
double gate_grad(double delta, const GateParams& params);

// 1/sqrt(e tau_g), a uniform bound on |gate_grad|.
double gate_grad_bound(const GateParams& params);

}  // namespace sgsd::gate
