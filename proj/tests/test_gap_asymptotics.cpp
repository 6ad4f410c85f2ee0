#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <sstream>

#include <boost/math/tools/roots.hpp>

#include "lacuna/bands.hpp"
#include "lacuna/gap_asymptotics.hpp"
#include "support.hpp"

using namespace lacuna;

namespace {

BandEdge free_edge() {
  static const BandScan scan = find_band_edges(OperatorCoefficients::free(), 5.0);
  return *scan.find(0, Side::Plus);
}

LocalizedPerturbation square_well() {
  return LocalizedPerturbation(SupportInterval::around(-1, 1), Differential{{}, {}, Profile::constant(1.0)});
}

/// Bound state of −u″ − ε𝟙_{[−1,1]}u = −k²u: k = ω tan ω with ω = √(ε − k²).
double square_well_k(double eps) {
  auto f = [eps](double k) {
    double w = std::sqrt(eps - k * k);
    return k - w * std::tan(w);
  };
  boost::uintmax_t it = 100;
  auto r = boost::math::tools::toms748_solve(f, 1e-14, std::sqrt(eps) - 1e-14,
                                             boost::math::tools::eps_tolerance<double>(50), it);
  return 0.5 * (r.first + r.second);
}

const BandScan& cos_scan() {
  static const BandScan scan = find_band_edges(testing::trig_potential(0.0, 10.0), 60.0);
  return scan;
}

}  // namespace

TEST_CASE("square-well k coefficients", "[gap]") {
  EdgeProblem ep(OperatorCoefficients::free(), free_edge(), square_well());
  auto kc = ep.k_coefficients(0.1);
  CHECK(std::abs(kc.k1 - 1.0) <= 1e-8);
  CHECK(std::abs(kc.k2 + 2.0 / 3.0) <= 1e-8);
  // k1 from its defining inner product (Lφ, φ) on an independent grid.
  QuadGrid g = QuadGrid::build(-1, 1, 0.05, {}, 20);
  auto [v, d] = edge_eigenfunction(free_edge()).sample(OperatorCoefficients::free(), g.nodes());
  Eigen::VectorXcd f = v.cwiseProduct(v).cast<cd>();
  cd k1 = g.integrate(f) / (2 * std::sqrt(std::abs(free_edge().ddot)));
  CHECK(std::abs(k1 - kc.k1) <= 1e-10);
}

TEST_CASE("rank-one k1 equals beta |(b, phi)|^2 / (2 sqrt|D'|)", "[gap]") {
  const auto& scan = cos_scan();
  auto c = testing::trig_potential(0.0, 10.0);
  const cd beta = std::polar(1.0, std::numbers::pi / 4);
  Profile b = Profile::bump(-1.0, 1.0);
  LocalizedPerturbation pert(SupportInterval::around(-1, 1), RankOneKernel{beta, b});
  for (const auto& e : scan.edges) {
    if (e.degenerate || e.n > 2) continue;
    auto kc = k_coefficients(c, e, pert, 0.05);
    QuadGrid g = QuadGrid::build(-1, 1, 0.05, {}, 20);
    auto [v, d] = edge_eigenfunction(e).sample(c, g.nodes());
    Eigen::VectorXcd bv(g.size());
    for (int i = 0; i < g.size(); ++i) bv(i) = b(g.nodes()[i]) * v(i);
    cd bphi = g.integrate(bv);
    cd expected = e.sign() * beta * std::norm(bphi) / (2 * std::sqrt(std::abs(e.ddot)));
    CHECK(std::abs(kc.k1 - expected) <= 1e-9);
  }
}

TEST_CASE("resolvent correction: identity at zero and first-order consistency", "[gap]") {
  const auto& scan = cos_scan();
  auto c = testing::trig_potential(0.0, 10.0);
  LocalizedPerturbation pert(SupportInterval::around(-1, 1),
                             Differential{{}, Profile::constant(cd(0, 0.3)), Profile::gaussian(0.1, 0.4)});
  EdgeProblem ep(c, *scan.find(1, Side::Plus), pert);
  Eigen::VectorXcd rhs(ep.grid().size());
  for (int i = 0; i < rhs.size(); ++i) rhs(i) = cd(std::cos(ep.grid().nodes()[i]), 0.2);
  CHECK((resolvent_correction(ep, 0.0, rhs) - rhs).norm() == 0.0);

  auto M = ep.green_operator(0.0);
  Eigen::VectorXcd first = M(rhs);
  double prev = 0;
  for (double eps : {0.08, 0.04, 0.02}) {
    auto sol = ep.solve_correction(eps, rhs);
    CHECK(sol.residual <= 1e-10);
    double err = (sol.g - rhs - eps * first).norm();
    if (prev > 0) CHECK(prev / err == Catch::Approx(4.0).epsilon(0.1));
    prev = err;
  }
}

TEST_CASE("dense fallback and singular detection", "[gap]") {
  auto c = OperatorCoefficients::free();
  LocalizedPerturbation pert(SupportInterval::around(-1, 1), Differential{{}, {}, Profile::constant(1.0)});
  EdgeProblem ep(c, free_edge(), pert);
  Eigen::VectorXcd rhs = ep.lphi();
  // Large ε: the series diverges and the dense solve takes over.
  auto sol = ep.solve_correction(3.0, rhs);
  CHECK(sol.dense);
  CHECK(sol.residual <= 1e-10);
}

TEST_CASE("functional rank-one matches the closed form", "[gap]") {
  const auto& scan = cos_scan();
  auto c = testing::trig_potential(0.0, 10.0);
  Profile b = Profile::gaussian(0.3, 0.4, cd(1.0, 0.5));
  Functional l{{PointTerm{0.25, 1.0, 0.5, 0.0}}, {}};
  LocalizedPerturbation pert(SupportInterval::around(-1, 1), FunctionalRankOne{b, l});
  for (Side side : {Side::Minus, Side::Plus}) {
    const BandEdge& e = *scan.find(1, side);
    EdgeProblem ep(c, e, pert);
    const double eps = 0.05;
    // l(𝒢₀b) through the pointwise window evaluation of 𝒢₀.
    Eigen::VectorXcd bv(ep.grid().size());
    for (int i = 0; i < bv.size(); ++i) bv(i) = b(ep.grid().nodes()[i]);
    std::vector<double> at{0.25};
    auto w = ep.green0().apply_window(bv, at);
    cd lgb = w.value(0) + 0.5 * w.d1(0);
    auto [pv, pd] = edge_eigenfunction(e).sample(c, at);
    cd lphi = pv(0) + 0.5 * pd(0);
    Eigen::VectorXcd closed = bv * lphi / (1.0 - eps * lgb);
    Eigen::VectorXcd generic = ep.a_lphi(eps);
    CHECK((generic - closed).cwiseAbs().maxCoeff() <= 1e-8 * std::max(1.0, closed.cwiseAbs().maxCoeff()));

    auto r = ep.report(eps);
    cd bphi = ep.bilinear(bv);
    cd num = bphi * lphi / (1.0 - eps * lgb);
    cd lam = e.mu - e.sign() * eps * eps * num * num / (4 * std::abs(e.ddot));
    CHECK(std::abs(r.lambda_from_criterion - lam) <= 1e-8 * std::abs(lam - e.mu));
  }
}

TEST_CASE("existence verdicts", "[gap]") {
  const auto& scan = cos_scan();
  auto c = testing::trig_potential(0.0, 10.0);
  SupportInterval q = SupportInterval::around(-0.6, 0.6);
  LocalizedPerturbation pos(q, Differential{{}, {}, Profile::bump(-0.6, 0.6)});
  LocalizedPerturbation neg(q, Differential{{}, {}, Profile::bump(-0.6, 0.6, -1.0)});
  LocalizedPerturbation zero(q, Differential{});
  for (const auto& e : scan.edges) {
    if (e.degenerate || e.n > 3) continue;
    Verdict expect = e.side == Side::Plus ? Verdict::Yes : Verdict::No;
    Verdict flipped = e.side == Side::Plus ? Verdict::No : Verdict::Yes;
    CHECK(existence_criterion(c, e, pos, 0.05).first == expect);
    CHECK(existence_criterion(c, e, neg, 0.05).first == flipped);
    auto [v, val] = existence_criterion(c, e, zero, 0.05);
    CHECK(v == Verdict::Indeterminate);
    CHECK(val == cd(0));
  }
  // Off-centre so that (b, φ) ≠ 0 for odd edge eigenfunctions too.
  LocalizedPerturbation r1(q, RankOneKernel{cd(0.5, 2.0), Profile::gaussian(0.25, 0.2)});
  LocalizedPerturbation r2(q, RankOneKernel{cd(-0.5, 2.0), Profile::gaussian(0.25, 0.2)});
  const BandEdge& right = *scan.find(1, Side::Plus);
  const BandEdge& left = *scan.find(1, Side::Minus);
  CHECK(existence_criterion(c, right, r1, 0.05).first == Verdict::Yes);
  CHECK(existence_criterion(c, left, r1, 0.05).first == Verdict::No);
  CHECK(existence_criterion(c, right, r2, 0.05).first == Verdict::No);
  CHECK(existence_criterion(c, left, r2, 0.05).first == Verdict::Yes);
}

TEST_CASE("square-well asymptotics and exact k", "[gap]") {
  EdgeProblem ep(OperatorCoefficients::free(), free_edge(), square_well());
  double prev_gap = 0, prev_rem = 0;
  for (double eps : {0.2, 0.1, 0.05}) {
    auto r = ep.report(eps);
    CHECK(r.exists == Verdict::Yes);
    CHECK(r.asymptotic_verdict == Verdict::Yes);
    const double pred = -eps * eps * std::pow(1 - 2 * eps / 3, 2);
    CHECK(std::abs(r.lambda_order2 - pred) <= 1e-9);
    REQUIRE(r.k_exact);
    const double k = square_well_k(eps);
    CHECK(std::abs(*r.k_exact - k) <= 1e-10);
    REQUIRE(r.lambda_exact);
    CHECK(r.lambda_exact->real() < 0.0);
    CHECK(std::abs(r.lambda_exact->imag()) <= 1e-12);
    // (μ − λ)/ε² → k1².
    CHECK(std::abs(-r.lambda_exact->real() / (eps * eps) - 1.0) <= 1.5 * eps);
    const double rem = std::abs(*r.k_exact - eps * r.k1 - eps * eps * r.k2) / std::pow(eps, 3);
    CHECK(rem <= 5.0);
    const double gap = std::abs(r.lambda_from_criterion - r.lambda_order2);
    if (prev_gap > 0) CHECK(prev_gap / gap >= 8.0);
    if (prev_rem > 0) CHECK(rem / prev_rem == Catch::Approx(1.0).epsilon(0.5));
    prev_gap = gap;
    prev_rem = rem;
  }
}

TEST_CASE("zero perturbation gives k = 0", "[gap]") {
  LocalizedPerturbation zero(SupportInterval::around(-1, 1), Differential{});
  EdgeProblem ep(OperatorCoefficients::free(), free_edge(), zero);
  auto r = ep.report(0.1);
  CHECK(r.exists == Verdict::Indeterminate);
  REQUIRE(r.k_exact);
  CHECK(*r.k_exact == cd(0));
  CHECK(!r.lambda_exact);
}

TEST_CASE("degenerate edges are refused", "[gap]") {
  auto scan = find_band_edges(OperatorCoefficients::free(), 50.0);
  for (const auto& e : scan.edges)
    if (e.degenerate) {
      CHECK_THROWS_AS(EdgeProblem(OperatorCoefficients::free(), e, square_well()), Error);
      break;
    }
}

TEST_CASE("criterion sign agrees with Re k_exact", "[gap][property]") {
  const auto& scan = cos_scan();
  auto c = testing::trig_potential(0.0, 10.0);
  SupportInterval q = SupportInterval::around(-0.8, 0.5);
  std::vector<LocalizedPerturbation> perts{
      LocalizedPerturbation(q, Differential{{}, {}, Profile::gaussian(-0.1, 0.3, cd(1.0, 0.4))}),
      LocalizedPerturbation(q, Differential{{}, {}, Profile::gaussian(-0.1, 0.3, cd(-1.0, 0.4))}),
      LocalizedPerturbation(q, RankOneKernel{cd(0.7, -1.0), Profile::bump(-0.8, 0.5)})};
  for (const auto& pert : perts)
    for (const auto& e : scan.edges) {
      if (e.degenerate || e.n > 2) continue;
      EdgeProblem ep(c, e, pert);
      auto [v, val] = ep.existence_criterion(0.05);
      cd k = ep.solve_k_equation(0.05).k;
      if (std::abs(k.real()) > 1e-10) CHECK((e.sign() * val.real() > 0) == (k.real() > 0));
    }
}

TEST_CASE("eigenfunction decay, profile and residual", "[gap]") {
  const auto& scan = cos_scan();
  auto c = testing::trig_potential(0.0, 10.0);
  SupportInterval q = SupportInterval::around(-0.6, 0.6);
  LocalizedPerturbation pert(q, Differential{{}, {}, Profile::bump(-0.6, 0.6, 3.0)});
  const BandEdge& e = *scan.find(1, Side::Plus);
  EdgeProblem ep(c, e, pert);

  const double eps = 0.1;
  cd k = ep.solve_k_equation(eps).k;
  REQUIRE(k.real() > 0);
  std::vector<double> xs;
  for (int j = 0; j < 8; ++j) xs.push_back(q.q_hi + 0.3 + j);
  auto w = ep.eigenfunction(eps, k, xs);
  double slope = (std::log(std::abs(w.value(7))) - std::log(std::abs(w.value(2)))) / 5.0;
  CHECK(std::abs(-slope - ep.decay_rate(k)) <= 0.02 * ep.decay_rate(k));

  // Window norm of ψ − φ − ε𝒢₀Lφ shrinks like ε².
  std::vector<double> win = linspace(-1.5, 1.5, 121);
  auto [pv, pd] = edge_eigenfunction(e).sample(c, win);
  auto g0 = ep.green0().apply_window(ep.lphi(), win);
  std::vector<double> norms;
  for (double ee : {0.04, 0.02, 0.01}) {
    cd kk = ep.solve_k_equation(ee).k;
    auto psi = ep.eigenfunction(ee, kk, win);
    norms.push_back((psi.value - pv.cast<cd>() - ee * g0.value).norm());
  }
  CHECK(norms[0] / norms[1] == Catch::Approx(4.0).epsilon(0.25));
  CHECK(norms[1] / norms[2] == Catch::Approx(4.0).epsilon(0.25));

  // −(pψ′)′ + qψ − εLψ − λψ on Q.
  Channels ch = ep.eigenfunction_on_q(eps, k);
  const auto& g = ep.grid();
  Eigen::VectorXcd flux = ch.d1.col(0);
  Eigen::VectorXcd dflux = g.differentiate(flux);
  Eigen::VectorXcd lpsi = ep.bound().apply(ch).col(0);
  const cd lambda = ep.lambda_of(k);
  double res = 0;
  for (int i = 0; i < g.size(); ++i) {
    cd r = -dflux(i) + (c.q(g.nodes()[i]) - lambda) * ch.value(i, 0) - eps * lpsi(i);
    res = std::max(res, std::abs(r));
  }
  CHECK(res <= 1e-6);
  CHECK_THROWS_AS(ep.eigenfunction(eps, -k, xs), Error);
}

TEST_CASE("report serialization", "[gap]") {
  EdgeProblem ep(OperatorCoefficients::free(), free_edge(), square_well());
  std::vector<double> win = linspace(-3, 3, 7);
  auto r = ep.report(0.1, win);
  std::ostringstream os, csv;
  write_report(os, r);
  CHECK(os.str().find("exists = yes") != std::string::npos);
  CHECK(os.str().find("edge = 0+") != std::string::npos);
  write_eigenfunction_csv(csv, r.eigenfunction);
  const std::string text = csv.str();
  CHECK(text.rfind("x,re_psi,im_psi\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 8);
}
