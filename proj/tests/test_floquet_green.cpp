#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "lacuna/floquet_green.hpp"
#include "support.hpp"

using namespace lacuna;

namespace {

Eigen::VectorXcd smooth_f(const QuadGrid& g) {
  Eigen::VectorXcd f(g.size());
  for (int i = 0; i < g.size(); ++i) {
    double x = g.nodes()[i];
    f(i) = cd(std::cos(3 * x) + x * x, 0.5 * std::sin(x));
  }
  return f;
}

/// max |−(p u′)′ + (q − λ)u − f| with the flux differentiated spectrally.
double ode_residual(const OperatorCoefficients& c, const QuadGrid& g, cd lambda, const Eigen::VectorXcd& u,
                    const Eigen::VectorXcd& du, const Eigen::VectorXcd& f) {
  Eigen::VectorXcd flux(g.size());
  for (int i = 0; i < g.size(); ++i) flux(i) = c.p(g.nodes()[i]) * du(i);
  Eigen::VectorXcd dflux = g.differentiate(flux);
  double r = 0;
  for (int i = 0; i < g.size(); ++i)
    r = std::max(r, std::abs(-dflux(i) + (c.q(g.nodes()[i]) - lambda) * u(i) - f(i)));
  return r;
}

struct Fixture {
  OperatorCoefficients c = testing::trig_potential(1.0, 6.0, 4.0);
  BandScan scan = find_band_edges(c, 50.0);
  QuadGrid grid = QuadGrid::build(-1.0, 1.5, 0.125, c.breakpoint_images(-1.0, 1.5));
};

}  // namespace

TEST_CASE("free edge Green kernel is -|x-t|/2", "[green]") {
  auto c = OperatorCoefficients::free();
  auto scan = find_band_edges(c, 20.0);
  QuadGrid g = QuadGrid::build(-1.0, 1.0, 0.5, {});
  EdgeGreen0 G(c, scan.edges.front(), g);
  for (int i = 0; i < g.size(); i += 5)
    for (int j = 0; j < g.size(); j += 3)
      CHECK(std::abs(G.kernel(i, j) + 0.5 * std::abs(g.nodes()[i] - g.nodes()[j])) <= 1e-10);
  Eigen::VectorXcd zero = Eigen::VectorXcd::Zero(g.size());
  CHECK(G.apply(zero).value.norm() == 0.0);
}

TEST_CASE_METHOD(Fixture, "edge Green operator inverts the edge equation", "[green]") {
  for (const auto& e : scan.edges) {
    if (e.degenerate) continue;
    EdgeGreen0 G(c, e, grid);
    Eigen::VectorXcd f = smooth_f(grid);
    Channels u = G.apply(f);
    CHECK(ode_residual(c, grid, e.mu, u.value.col(0), u.d1.col(0), f) <= 1e-7);
    // The second-derivative channel agrees with differentiating the first.
    Eigen::VectorXcd dd = grid.differentiate(u.d1.col(0));
    CHECK((dd - u.d2.col(0)).cwiseAbs().maxCoeff() <= 1e-6 * (1 + u.d2.cwiseAbs().maxCoeff()));
    // Symmetric kernel.
    for (int i = 0; i < grid.size(); i += 7)
      for (int j = 0; j < grid.size(); j += 5) CHECK(std::abs(G.kernel(i, j) - G.kernel(j, i)) <= 1e-12);
  }
}

TEST_CASE_METHOD(Fixture, "edge Green window values match node values", "[green]") {
  const BandEdge& e = *scan.find(1, Side::Plus);
  EdgeGreen0 G(c, e, grid);
  Eigen::VectorXcd f = smooth_f(grid);
  Channels u = G.apply(f);
  std::vector<double> xs{grid.nodes()[3], grid.nodes()[40], grid.nodes()[100]};
  WindowSamples w = G.apply_window(f, xs);
  CHECK(std::abs(w.value(0) - u.value(3, 0)) <= 1e-10);
  CHECK(std::abs(w.value(1) - u.value(40, 0)) <= 1e-10);
  CHECK(std::abs(w.d1(2) - u.d1(100, 0)) <= 1e-10);
}

TEST_CASE_METHOD(Fixture, "kernel quadrature converges under grid refinement", "[green]") {
  const BandEdge& e = *scan.find(1, Side::Minus);
  auto f_of = [](double x) { return cd(std::exp(-x * x), 0.0); };
  auto run = [&](double cell, int m) {
    QuadGrid g = QuadGrid::build(-1.0, 1.5, cell, c.breakpoint_images(-1.0, 1.5), m);
    Eigen::VectorXcd f(g.size());
    for (int i = 0; i < g.size(); ++i) f(i) = f_of(g.nodes()[i]);
    std::vector<double> xs{-0.3, 0.2, 1.1};
    return EdgeGreen0(c, e, g).apply_window(f, xs).value;
  };
  Eigen::VectorXcd ref = run(0.05, 12);
  double e1 = (run(0.5, 3) - ref).norm(), e2 = (run(0.25, 3) - ref).norm();
  CHECK(e1 / e2 >= 4.0);
}

TEST_CASE_METHOD(Fixture, "Floquet solutions", "[green]") {
  std::vector<double> xs;
  for (int i = 0; i <= 30; ++i) xs.push_back(-1.0 + 0.1 * i);
  for (const auto& e : scan.edges) {
    if (e.degenerate) continue;
    auto [phi, dphi] = edge_eigenfunction(e).sample(c, xs);
    FloquetPair z = floquet_solutions(c, e, 0.0, xs);
    CHECK((z.values.y1 - phi.cast<cd>()).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK((z.values.y2 - phi.cast<cd>()).cwiseAbs().maxCoeff() <= 1e-8);
    for (cd k : {cd(0.05, 0.02), cd(0.1, 0.0)}) {
      FloquetPair fp = floquet_solutions(c, e, k, xs);
      CHECK(fp.wronskian_residual() <= 1e-8);
      // φ₁(x+1) = ρφ₁(x), φ₂(x+1) = φ₂(x)/ρ on the grid (step 0.1, ten points per period).
      for (int i = 0; i + 10 < static_cast<int>(xs.size()); ++i) {
        CHECK(std::abs(fp.values.y1(i + 10) - fp.rho * fp.values.y1(i)) <= 1e-8 * (1 + std::abs(fp.values.y1(i))));
        CHECK(std::abs(fp.values.y2(i + 10) - fp.values.y2(i) / fp.rho) <= 1e-8 * (1 + std::abs(fp.values.y2(i))));
      }
    }
  }
}

TEST_CASE("free Floquet solution is a pure exponential", "[green]") {
  auto c = OperatorCoefficients::free();
  auto scan = find_band_edges(c, 20.0);
  std::vector<double> xs{-2.0, -0.5, 0.0, 0.7, 3.0};
  FloquetPair fp = floquet_solutions(c, scan.edges.front(), 0.1, xs);
  const cd s = fp.values.y1(2);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    CHECK(std::abs(fp.values.y1(i) - s * std::exp(0.1 * xs[i])) <= 1e-10);
    CHECK(std::abs(fp.periodic_part1()(i) - s) <= 1e-10);
  }
}

TEST_CASE_METHOD(Fixture, "k-dependent Green operator", "[green]") {
  Eigen::VectorXcd f = smooth_f(grid);
  for (const auto& e : scan.edges) {
    if (e.degenerate) continue;
    const cd k(0.08, 0.03);
    EdgeGreenK G(c, e, k, grid);
    Channels u = G.apply(f);
    CHECK(ode_residual(c, grid, G.lambda(), u.value.col(0), u.d1.col(0), f) <= 1e-7);

    // Decaying tails: ratios over integer shifts right of Q equal 1/|ρ|.
    std::vector<double> xs{2.0, 3.0, 4.0, 5.0};
    WindowSamples w = G.apply_window(f, xs);
    const double slope = std::log(std::abs(w.value(3)) / std::abs(w.value(0))) / 3.0;
    CHECK(std::abs(slope + G.kappa().real()) <= 0.01 * G.kappa().real());
    for (int i = 0; i + 1 < 4; ++i) CHECK(std::abs(w.value(i + 1) - w.value(i) / G.rho()) <= 1e-8 * std::abs(w.value(i)));
  }
  CHECK_THROWS_AS(EdgeGreenK(c, scan.edges.front(), 0.0, grid), Error);
}

TEST_CASE_METHOD(Fixture, "regular part converges to the edge operator linearly in k", "[green][property]") {
  Eigen::VectorXcd f = smooth_f(grid);
  for (const auto& e : scan.edges) {
    if (e.degenerate) continue;
    Channels g0 = EdgeGreen0(c, e, grid).apply(f);
    std::vector<double> err;
    for (double h : {0.04, 0.02, 0.01}) {
      Channels r = EdgeGreenK(c, e, cd(h, 0.5 * h), grid).regular(f);
      err.push_back((r.value - g0.value).norm());
    }
    CHECK(err[0] / err[1] == Catch::Approx(2.0).margin(0.3));
    CHECK(err[1] / err[2] == Catch::Approx(2.0).margin(0.3));
  }
}

TEST_CASE_METHOD(Fixture, "singular part is a scaled projector", "[green][property]") {
  Eigen::VectorXcd f = smooth_f(grid);
  const BandEdge& e = *scan.find(1, Side::Plus);
  EdgeGreenK G(c, e, 0.05, grid);
  auto [phi, dphi] = edge_eigenfunction(e).sample(c, grid.nodes());
  const cd pp = grid.inner(phi.cast<cd>(), phi.cast<cd>());
  const cd scale = e.sign() * pp / (2 * std::sqrt(std::abs(e.ddot)));
  Channels once = G.singular(f);
  Channels twice = G.singular(once.value);
  CHECK((twice.value - scale * once.value).norm() <= 1e-10 * once.value.norm());
}

TEST_CASE("resolvent kernel", "[green]") {
  auto free = OperatorCoefficients::free();
  QuadGrid g = QuadGrid::build(-1.0, 1.0, 0.25, {});
  Resolvent R(free, -1.0, g);
  CHECK(std::abs(R.rho() - std::exp(1.0)) <= 1e-10);
  std::mt19937 rng(2);
  std::uniform_int_distribution<int> pick(0, g.size() - 1);
  for (int s = 0; s < 40; ++s) {
    int i = pick(rng), j = pick(rng);
    double d = std::abs(g.nodes()[i] - g.nodes()[j]);
    CHECK(std::abs(R.kernel(i, j) - 0.5 * std::exp(-d)) <= 1e-8);
  }
  Eigen::VectorXcd zero = Eigen::VectorXcd::Zero(g.size());
  CHECK(R.apply(zero).value.norm() == 0.0);
  CHECK_THROWS_AS(Resolvent(free, 4.0, g), Error);
}

TEST_CASE_METHOD(Fixture, "resolvent solves the equation and decays by 1/rho per period", "[green]") {
  Eigen::VectorXcd f = smooth_f(grid);
  for (cd lambda : {cd(-3.0, 0.0), cd(5.0, 2.0), cd(20.0, -1.0)}) {
    Resolvent R(c, lambda, grid);
    Channels v = R.apply(f);
    CHECK(ode_residual(c, grid, lambda, v.value.col(0), v.d1.col(0), f) <= 1e-7);
    std::vector<double> xs{-2.3, -1.3, 1.7, 2.7, 3.7, 4.7};
    WindowSamples w = R.apply_window(f, xs);
    for (int i = 2; i < 5; ++i) CHECK(std::abs(w.value(i + 1) - w.value(i) / R.rho()) <= 1e-7 * std::abs(w.value(i)));
    CHECK(std::abs(w.value(0) - w.value(1) / R.rho()) <= 1e-8 * std::abs(w.value(1)));
  }
}

TEST_CASE("resolvent refuses closed lacunas", "[green]") {
  auto free = OperatorCoefficients::free();
  auto scan = find_band_edges(free, 50.0);
  QuadGrid g = QuadGrid::build(-1.0, 1.0, 0.5, {});
  const BandEdge* e = scan.find(1, Side::Minus);
  try {
    Resolvent(free, cd(e->mu, 1e-7), g, 1e-12, &scan);
    FAIL("expected OnSpectrum");
  } catch (const Error& err) {
    CHECK(err.code() == ErrorCode::OnSpectrum);
  }
}

TEST_CASE("kernel dump", "[green]") {
  auto c = OperatorCoefficients::free();
  auto scan = find_band_edges(c, 5.0);
  QuadGrid g = QuadGrid::build(0.0, 1.0, 1.0, {}, 2);
  std::ostringstream os;
  EdgeGreen0(c, scan.edges.front(), g).write_kernel_csv(os);
  std::string s = os.str();
  CHECK(s.rfind("x,t,re,im\n", 0) == 0);
  CHECK(std::count(s.begin(), s.end(), '\n') == 5);
}
