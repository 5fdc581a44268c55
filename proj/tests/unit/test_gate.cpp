#include <doctest.h>

#include <cmath>
#include <limits>
#include <stdexcept>

#include "sgsd/gate.hpp"

using sgsd::gate::GateParams;
using sgsd::gate::gate_grad;
using sgsd::gate::gate_grad_bound;
using sgsd::gate::gate_loss;

TEST_CASE("gate loss reference values") {
  const GateParams p{1.0};
  CHECK(gate_loss(0.0, p) == 0.0);
  CHECK(gate_loss(1.0, p) == doctest::Approx(0.2190701963798386).epsilon(1e-12));
  CHECK(gate_loss(2.0, p) == doctest::Approx(0.5662191695169728).epsilon(1e-12));
  CHECK(std::abs(gate_loss(1e4, p) - std::log(2.0)) < 1e-12);
  CHECK(gate_loss(3.0, GateParams{0.25}) == doctest::Approx(0.6931471653299657).epsilon(1e-12));
}

TEST_CASE("gate gradient reference values") {
  const GateParams p{1.0};
  CHECK(gate_grad(0.0, p) == 0.0);
  CHECK(gate_grad(-2.0, p) < 0.0);
  CHECK(gate_grad(1.0, p) == doctest::Approx(0.3775406687981454).epsilon(1e-12));
  CHECK(gate_grad(2.0, p) == doctest::Approx(0.2384058440442351).epsilon(1e-12));
  CHECK(gate_grad(0.5, GateParams{4.0}) == doctest::Approx(0.0615235169650994).epsilon(1e-12));
  CHECK(gate_grad(-3.0, p) == doctest::Approx(-0.0329608278917795).epsilon(1e-12));
}

TEST_CASE("gradient bound") {
  CHECK(gate_grad_bound(GateParams{1.0}) == doctest::Approx(0.6065306597126334).epsilon(1e-12));
  CHECK(gate_grad_bound(GateParams{4.0}) == doctest::Approx(0.3032653298563167).epsilon(1e-12));
  double prev = gate_grad_bound(GateParams{0.1});
  for (double tau = 0.2; tau < 1e4; tau *= 1.7) {
    const double b = gate_grad_bound(GateParams{tau});
    CHECK(b < prev);
    prev = b;
  }
}

TEST_CASE("loss is even, bounded and monotone in |delta|") {
  for (double tau : {0.25, 1.0, 4.0}) {
    const GateParams p{tau};
    double prev = -1.0;
    for (double d = 0.0; d <= 40.0; d += 0.05) {
      const double l = gate_loss(d, p);
      CHECK(l == gate_loss(-d, p));
      CHECK(l >= prev);
      CHECK(l <= std::log(2.0) + 1e-15);
      CHECK(std::abs(gate_grad(d, p)) <= gate_grad_bound(p) * (1.0 + 1e-12));
      CHECK(gate_grad(-d, p) == -gate_grad(d, p));
      prev = l;
    }
  }
}

TEST_CASE("extreme gaps stay finite") {
  const GateParams p{1.0};
  CHECK(gate_grad(1e6, p) == 0.0);
  CHECK(std::isfinite(gate_loss(-1e300, p)));
  CHECK(gate_loss(1e-200, p) >= 0.0);
}

TEST_CASE("invalid inputs") {
  CHECK_THROWS_AS(gate_loss(0.0, GateParams{0.0}), std::invalid_argument);
  CHECK_THROWS_AS(gate_grad(1.0, GateParams{-1.0}), std::invalid_argument);
  CHECK_THROWS_AS(gate_grad_bound(GateParams{std::numeric_limits<double>::infinity()}), std::invalid_argument);
  CHECK_THROWS_AS(gate_loss(std::nan(""), GateParams{}), std::domain_error);
  CHECK_THROWS_AS(gate_grad(std::numeric_limits<double>::infinity(), GateParams{}), std::domain_error);
}
