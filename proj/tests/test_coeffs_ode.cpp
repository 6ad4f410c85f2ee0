#include <catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "lacuna/coefficients.hpp"
#include "lacuna/ode.hpp"
#include "lacuna/quadrature.hpp"
#include "support.hpp"

using namespace lacuna;
using Catch::Matchers::WithinAbs;

namespace {

OperatorCoefficients step_potential() {
  return OperatorCoefficients(PiecewisePeriodicFn::constant(1.0),
                              PiecewisePeriodicFn({0.0, 0.5}, {ConstantSeg{10.0}, ConstantSeg{0.0}}));
}

/// Transfer matrix of −u″ + qu = λu over length h in (u, u′) coordinates.
Eigen::Matrix2cd transfer(double q, cd lambda, double h) {
  cd w = std::sqrt(lambda - q);
  Eigen::Matrix2cd m;
  m << std::cos(w * h), std::sin(w * h) / w, -w * std::sin(w * h), std::cos(w * h);
  return m;
}

}  // namespace

TEST_CASE("periodic function evaluation wraps and interpolates", "[coeffs]") {
  PiecewisePeriodicFn f({0.2, 0.6}, {ConstantSeg{1.0}, PolySeg{{0.0, 2.0}}});
  CHECK(f(0.3) == 1.0);
  CHECK(f(1.3) == 1.0);
  CHECK(f(0.7) == Catch::Approx(1.4));
  CHECK(f(-0.3) == Catch::Approx(1.4));   // -0.3 ≡ 0.7
  CHECK(f(0.1) == Catch::Approx(2.2));    // last segment continues past the seam
  CHECK(f.left_limit(0.6) == 1.0);
  CHECK(f.left_limit(1.2) == Catch::Approx(2.4));

  std::vector<double> ys(33);
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = std::sin(static_cast<double>(i) / 32.0);
  PiecewisePeriodicFn s({0.0}, {SampledSeg{ys}});
  CHECK_THAT(s(0.5), WithinAbs(std::sin(0.5), 1e-6));
  CHECK_THAT(s.derivative(0.5), WithinAbs(std::cos(0.5), 1e-3));
}

TEST_CASE("coefficient validation", "[coeffs]") {
  auto bad_norm = [] {
    OperatorCoefficients(PiecewisePeriodicFn::constant(2.0), PiecewisePeriodicFn::constant(0.0));
  };
  REQUIRE_THROWS_AS(bad_norm(), Error);
  try {
    bad_norm();
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidArgument);
  }
  try {
    OperatorCoefficients(PiecewisePeriodicFn({0.0, 0.5}, {ConstantSeg{1.0}, PolySeg{{1.0, -4.0, 4.0}}}),
                         PiecewisePeriodicFn::constant(0.0));
    FAIL("expected NonPositiveP");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonPositiveP);
  }
  CHECK_THROWS_AS(PiecewisePeriodicFn({0.5, 0.2}, {ConstantSeg{1.0}, ConstantSeg{1.0}}), Error);
  CHECK_THROWS_AS(PiecewisePeriodicFn({0.0, 1.2}, {ConstantSeg{1.0}, ConstantSeg{1.0}}), Error);
}

TEST_CASE("free operator at lambda = 0 has theta1 = 1, theta2 = x", "[ode]") {
  auto c = OperatorCoefficients::free();
  auto fp = integrate_fundamental(c, 0.0, -2.0, 2.0, 1e-10, 41);
  for (int i = 0; i < fp.size(); ++i) {
    CHECK(std::abs(fp.theta1[i] - 1.0) <= 1e-10);
    CHECK(std::abs(fp.theta2[i] - fp.grid[i]) <= 1e-10);
    CHECK(std::abs(fp.flux1[i]) <= 1e-10);
    CHECK(std::abs(fp.flux2[i] - 1.0) <= 1e-10);
  }
}

TEST_CASE("free operator monodromy at lambda = 4 matches cos/sin", "[ode]") {
  auto m = monodromy(OperatorCoefficients::free(), 4.0, 1e-12);
  CHECK(std::abs(m.theta1 - std::cos(2.0)) <= 1e-10);
  CHECK(std::abs(m.theta2 - std::sin(2.0) / 2.0) <= 1e-10);
  CHECK(std::abs(m.theta1p + 2.0 * std::sin(2.0)) <= 1e-10);
  CHECK(std::abs(m.theta2p - std::cos(2.0)) <= 1e-10);
  CHECK(std::abs(m.D - 2.0 * std::cos(2.0)) <= 1e-10);
  CHECK(std::abs(m.det() - 1.0) <= 1e-10);
}

TEST_CASE("free discriminant equals 2 cos sqrt(lambda)", "[ode]") {
  auto c = OperatorCoefficients::free();
  for (double l : {0.0, 1.0, 9.0, 37.5, 150.0, -3.0}) {
    cd expected = 2.0 * std::cos(std::sqrt(cd(l)));
    CHECK(std::abs(monodromy(c, l, 1e-12).D - expected) <= 1e-9);
  }
}

TEST_CASE("step potential discriminant matches the transfer-matrix product", "[ode]") {
  const cd lambda = 5.0;
  Eigen::Matrix2cd M = transfer(0.0, lambda, 0.5) * transfer(10.0, lambda, 0.5);
  auto m = monodromy(step_potential(), lambda, 1e-12);
  CHECK(std::abs(m.D - M.trace()) <= 1e-8);
  CHECK(std::abs(m.theta2 - M(0, 1)) <= 1e-8);
}

TEST_CASE("Wronskian identity on random piecewise coefficients", "[ode][property]") {
  std::mt19937 rng(11);
  for (int trial = 0; trial < 8; ++trial) {
    auto c = testing::random_coefficients(rng);
    for (int j = 0; j < 4; ++j) {
      cd lambda = testing::random_lambda(rng);
      auto fp = integrate_fundamental(c, lambda, -1.5, 2.5, 1e-10, 81);
      // The products cancelling in p·W carry a rounding floor of eps·scale.
      const double floor = 64 * std::numeric_limits<double>::epsilon() * fp.wronskian_scale();
      CHECK(fp.wronskian_residual() <= 1e-9 + floor);
      auto m = monodromy(c, lambda);
      const double mscale = std::abs(m.theta1 * m.theta2p) + std::abs(m.theta1p * m.theta2);
      CHECK(std::abs(m.det() - 1.0) <= 1e-9 + 64 * std::numeric_limits<double>::epsilon() * mscale);
    }
  }
}

TEST_CASE("theta is holomorphic in lambda: mean over a circle reproduces the centre", "[ode][property]") {
  std::mt19937 rng(5);
  auto c = testing::random_coefficients(rng);
  const cd centre(7.0, 2.0);
  const double radius = 0.5;
  const std::vector<double> xs{-0.7, 0.3, 1.9};
  auto at_centre = integrate_fundamental(c, centre, xs, 1e-12);
  const int N = 32;
  std::vector<cd> m1(xs.size()), m2(xs.size());
  for (int j = 0; j < N; ++j) {
    cd l = centre + std::polar(radius, 2 * std::numbers::pi * j / N);
    auto fp = integrate_fundamental(c, l, xs, 1e-12);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      m1[i] += fp.theta1[i] / double(N);
      m2[i] += fp.theta2[i] / double(N);
    }
  }
  for (std::size_t i = 0; i < xs.size(); ++i) {
    CHECK(std::abs(m1[i] - at_centre.theta1[i]) <= 1e-6);
    CHECK(std::abs(m2[i] - at_centre.theta2[i]) <= 1e-6);
  }
}

TEST_CASE("tightening tol reduces the closed-form error", "[ode][property]") {
  auto c = OperatorCoefficients::free();
  const cd lambda = 60.0;
  const cd w = std::sqrt(lambda);
  double prev = 1e300;
  for (double tol : {1e-4, 1e-6, 1e-8, 1e-10}) {
    auto fp = integrate_fundamental(c, lambda, -3.0, 3.0, tol, 61);
    double err = 0;
    for (int i = 0; i < fp.size(); ++i) err = std::max(err, std::abs(fp.theta1[i] - std::cos(w * fp.grid[i])));
    CHECK(err < prev);
    prev = err;
  }
}

TEST_CASE("cauchy operator", "[ode]") {
  auto c = OperatorCoefficients::free();
  QuadGrid g = QuadGrid::build(0.0, 1.0, 0.25, {});
  Eigen::VectorXcd zero = Eigen::VectorXcd::Zero(g.size());
  auto z = cauchy_apply(c, 0.0, 0.0, g, zero);
  CHECK(z.value.norm() == 0.0);

  Eigen::VectorXcd one = Eigen::VectorXcd::Ones(g.size());
  auto v = cauchy_apply(c, 0.0, 0.0, g, one);
  // −v″ = 1 with v(0) = v′(0) = 0.
  for (int i = 0; i < g.size(); ++i) {
    double x = g.nodes()[i];
    CHECK(std::abs(v.value(i) + x * x / 2) <= 1e-12);
  }
}

TEST_CASE("cauchy operator solves the inhomogeneous equation with zero data at alpha", "[ode]") {
  std::mt19937 rng(3);
  auto c = testing::random_coefficients(rng);
  const cd lambda(3.0, 1.0);
  const double alpha = 0.4;
  QuadGrid g = QuadGrid::build(-1.0, 2.0, 0.1, c.breakpoint_images(-1.0, 2.0));
  Eigen::VectorXcd f(g.size());
  for (int i = 0; i < g.size(); ++i) f(i) = std::exp(-g.nodes()[i]) * cd(1.0, 0.5 * g.nodes()[i]);
  auto v = cauchy_apply(c, lambda, alpha, g, f, 1e-12);
  CHECK(std::abs(g.interpolate(v.value, alpha)) <= 1e-10);
  CHECK(std::abs(g.interpolate(v.d1, alpha)) <= 1e-10);
  Eigen::VectorXcd flux(g.size());
  for (int i = 0; i < g.size(); ++i) flux(i) = c.p(g.nodes()[i]) * v.d1(i);
  Eigen::VectorXcd dflux = g.differentiate(flux);
  double res = 0;
  for (int i = 0; i < g.size(); ++i) {
    cd r = -dflux(i) + (c.q(g.nodes()[i]) - lambda) * v.value(i) - f(i);
    res = std::max(res, std::abs(r));
  }
  CHECK(res <= 1e-8);

  FundamentalPair other = integrate_fundamental(c, lambda, 0.0, 1.0, 1e-10, 11);
  CHECK_THROWS_AS(cauchy_apply(other, g, f, alpha), Error);
}
