#include "sgsd/gate.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace sgsd::gate {

namespace {

void check_delta(double delta) {
  if (!std::isfinite(delta)) throw std::domain_error("gate: non-finite gap");
}

}  // namespace

void GateParams::validate() const {
  if (!std::isfinite(tau_g) || tau_g <= 0.0) {
    throw std::invalid_argument("gate: tau_g must be finite and > 0");
  }
}

double gate_loss(double delta, const GateParams& params) {
  params.validate();
  check_delta(delta);
  // exp(-u) <= 1, so log1p never sees an overflowed argument.
  const double u = delta * delta / (2.0 * params.tau_g);
  return std::numbers::ln2 - std::log1p(std::exp(-u));
}

double gate_grad(double delta, const GateParams& params) {
  params.validate();
  check_delta(delta);
  // d/tau * sigmoid(-u), written with exp(-u) to avoid overflow at large |d|.
  const double u = delta * delta / (2.0 * params.tau_g);
  const double w = std::exp(-u);
  if (w == 0.0) return std::copysign(0.0, delta);
  return (delta / params.tau_g) * (w / (1.0 + w));
}

double gate_grad_bound(const GateParams& params) {
  params.validate();
  return 1.0 / std::sqrt(std::numbers::e * params.tau_g);
}

}  // namespace sgsd::gate
