#pragma once

#include <cmath>
#include <numbers>
#include <random>

#include "lacuna/coefficients.hpp"
#include "lacuna/quadrature.hpp"

namespace lacuna::testing {

/// Piecewise coefficients with a kink in p and jumps in q at random breakpoints.
inline OperatorCoefficients random_coefficients(std::mt19937& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double b = 0.3 + 0.4 * (u(rng) + 1.0) / 2.0;
  const double s = 0.8 * u(rng);
  // p = 1 + s·x on [0, b), linear back to 1 at x = 1.
  const double c1 = -b * s / (1.0 - b), c0 = 1.0 - c1;
  PiecewisePeriodicFn p({0.0, b}, {PolySeg{{1.0, s}}, PolySeg{{c0, c1}}});

  std::vector<double> qb{0.0, 0.25 + 0.2 * u(rng), 0.75 + 0.2 * u(rng)};
  std::vector<Segment> qs{ConstantSeg{5 * u(rng)}, PolySeg{{5 * u(rng), 3 * u(rng), 2 * u(rng)}},
                          TrigSeg{u(rng), {2 * u(rng)}, {2 * u(rng)}}};
  return OperatorCoefficients(p, PiecewisePeriodicFn(qb, qs));
}

inline cd random_lambda(std::mt19937& rng, double radius = 100.0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double r = radius * std::sqrt(u(rng));
  double a = 2 * std::numbers::pi * u(rng);
  return std::polar(r, a);
}

/// p ≡ 1 with q = a0 + a cos 2πx + b sin 2πx.
inline OperatorCoefficients trig_potential(double a0, double a, double b = 0.0) {
  return OperatorCoefficients(PiecewisePeriodicFn::constant(1.0),
                              PiecewisePeriodicFn({0.0}, {TrigSeg{a0, {a}, {b}}}));
}

}  // namespace lacuna::testing
