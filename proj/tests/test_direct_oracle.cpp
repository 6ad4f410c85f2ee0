#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <sstream>

#include "lacuna/oracle.hpp"
#include "support.hpp"

using namespace lacuna;

namespace {

LocalizedPerturbation none() { return LocalizedPerturbation(SupportInterval::around(-1, 1), Differential{}); }

LocalizedPerturbation square_well() {
  return LocalizedPerturbation(SupportInterval::around(-1, 1), Differential{{}, {}, Profile::constant(1.0)});
}

}  // namespace

TEST_CASE("free box eigenvalues", "[oracle]") {
  const double R = 2.0, h = 1.0 / 64;
  auto tp = assemble(OperatorCoefficients::free(), none(), 0.3, R, h);
  REQUIRE(tp.real_symmetric_tridiagonal);
  auto ev = gap_eigenvalues(tp, Window{0.0, 10.0});
  REQUIRE(ev.size() >= 4);
  for (int m = 1; m <= 4; ++m) {
    const double cont = std::pow(m * std::numbers::pi / (2 * R), 2);
    const double disc = 4 / (h * h) * std::pow(std::sin(m * std::numbers::pi * h / (4 * R)), 2);
    CHECK(std::abs(ev[m - 1].lambda.real() - disc) <= 1e-10 * cont);
    CHECK(std::abs(ev[m - 1].lambda.real() - cont) <= cont * cont * h * h / 12 * 1.01);
    CHECK(ev[m - 1].residual <= 1e-8);
  }
  CHECK(tp.count_below(10.0) == static_cast<int>(ev.size()));
}

TEST_CASE("real symmetric input gives a symmetric matrix", "[oracle]") {
  auto c = testing::trig_potential(0.3, 4.0, 1.0);
  auto tp = assemble(c, square_well(), 0.5, 3.0, 1.0 / 32);
  CHECK(tp.real_symmetric_tridiagonal);
  Eigen::MatrixXcd M = tp.dense();
  CHECK((M - M.transpose()).norm() == 0.0);
}

TEST_CASE("integral kernel block reproduces the integral", "[oracle]") {
  // L(x, y) = x + 2 and linear u: the hat-weight rule is exact.
  IntegralKernel k{[](double x, double) { return cd(x + 2); }, {}};
  LocalizedPerturbation pert(SupportInterval::around(-1, 1), k);
  const double eps = 0.7;
  auto tp = assemble(OperatorCoefficients::free(), pert, eps, 3.0, 1.0 / 32);
  auto t0 = assemble(OperatorCoefficients::free(), none(), eps, 3.0, 1.0 / 32);
  Eigen::VectorXcd u(tp.N);
  for (int i = 0; i < tp.N; ++i) u(i) = tp.x[i] + 1;
  Eigen::VectorXcd lu = (tp.apply(u) - t0.apply(u)) / (-eps);
  double worst = 0;
  for (int i = 0; i < tp.N; ++i) {
    const double xi = tp.x[i];
    double expect = 0;
    if (xi > -1 && xi < 1) expect = (xi + 2) * 2.0;  // ∫_{-1}^{1}(y + 1) dy = 2
    else if (std::abs(xi) == 1) expect = 0.5 * (xi + 2) * 2.0;
    worst = std::max(worst, std::abs(lu(i) - expect));
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("square well has one bound state below the spectrum", "[oracle]") {
  const double eps = 0.2, exact = -0.03179636046;
  const Window w{-eps, -1e-3};
  auto st = convergence_study(OperatorCoefficients::free(), square_well(), eps, w, 60.0, 1.0 / 16);
  CHECK(st.max_count == 1);
  CHECK(std::abs(st.value - exact) <= 1e-9);
  for (double p : st.order) CHECK((p >= std::log2(3.5) && p <= std::log2(4.5)));
  auto tp = assemble(OperatorCoefficients::free(), square_well(), eps, 60.0, 1.0 / 16);
  CHECK(tp.count_below(w.re_hi) - tp.count_below(w.re_lo) == 1);

  std::ostringstream os;
  write_study_csv(os, st);
  std::string first;
  std::getline(std::istringstream(os.str()) >> std::ws, first);
  CHECK(first == "R,h,re_lambda,im_lambda,residual");
}

TEST_CASE("shift-invert agrees with the dense solve for a rank-one perturbation", "[oracle]") {
  auto c = testing::trig_potential(0.0, 10.0);
  LocalizedPerturbation pert(SupportInterval::around(-1, 1),
                             RankOneKernel{std::polar(1.0, 0.25 * std::numbers::pi), Profile::bump(-1, 1)});
  auto tp = assemble(c, pert, 3.0, 6.0, 1.0 / 32);
  const Window w{-4.0, -1.4, -2.0, -0.3};
  OracleOptions dense;
  dense.dense_max = 100000;
  OracleOptions sparse;
  sparse.dense_max = 0;
  auto a = gap_eigenvalues(tp, w, nullptr, dense);
  auto b = gap_eigenvalues(tp, w, nullptr, sparse);
  REQUIRE(a.size() == b.size());
  REQUIRE(a.size() == 1);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(std::abs(a[i].lambda - b[i].lambda) <= 1e-9);
    CHECK(b[i].residual <= 1e-8);
  }
  // The contour count agrees with the dense spectrum, also in windows with no eigenvalue.
  auto cc = detail::count_in_window(tp, w);
  CHECK(cc.zeros == 1);
  CHECK(std::abs(cc.zero_sum - a[0].lambda) <= 1e-2);  // midpoint-rule moment, used only as a shift
  auto ritz = detail::ritz_in_window(tp, w, cc.zero_sum, 1, sparse);
  REQUIRE(ritz.size() == 1);
  CHECK(std::abs(ritz[0].lambda - a[0].lambda) <= 1e-9);
  auto root = detail::secular_root(tp, w, cc.zero_sum);
  REQUIRE(root);
  CHECK(std::abs(root->lambda - a[0].lambda) <= 1e-9);
  for (Window v : {Window{4.7, 14.4, -3.0, 3.0}, Window{-4.0, -1.3, -0.2, 0.2}}) {
    auto d = gap_eigenvalues(tp, v, nullptr, dense);
    CHECK(detail::count_in_window(tp, v).zeros == static_cast<int>(d.size()));
    CHECK(gap_eigenvalues(tp, v, nullptr, sparse).size() == d.size());
  }
}

TEST_CASE("embedded example keeps its eigenvalue inside the continuous spectrum", "[oracle]") {
  auto p = embedded_params(2.0, 0.3);
  auto pert = LocalizedPerturbation::embedded(2.0, 0.3);
  auto tp = assemble(OperatorCoefficients::free(), pert, p.epsilon, 8.0, 1.0 / 512);
  auto ev = gap_eigenvalues(tp, Window{p.lambda() - 2, p.lambda() + 2, -1, 1});
  REQUIRE(ev.size() == 1);
  CHECK(std::abs(ev[0].lambda - p.lambda()) <= 0.1);
  CHECK(ev[0].tail_mass <= 1e-4);
  CHECK(ev[0].residual <= 1e-8);
}

TEST_CASE("unperturbed truncation has no gap eigenvalue", "[oracle]") {
  auto c = testing::trig_potential(0.0, 10.0);
  auto scan = find_band_edges(c, 60.0);
  auto tp = assemble(c, none(), 0.0, 20.0, 1.0 / 128);
  for (const auto& l : scan.lacunas) {
    if (l.degenerate) continue;
    const double lo = l.semi_infinite ? l.right - 5.0 : l.left;
    const double gap = l.right - lo;
    Window w{lo + 0.1 * gap, l.right - 0.1 * gap};
    CHECK(gap_eigenvalues(tp, w, &scan).empty());
    CHECK(tp.count_below(w.re_hi) - tp.count_below(w.re_lo) == 0);
  }
  const auto& first = scan.lacunas.front();
  CHECK_THROWS_MATCHES(gap_eigenvalues(tp, Window{first.right - 1.0, first.right + 1.0}, &scan), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == ErrorCode::WindowTouchesBand;
                       }));
}

TEST_CASE("assembly rejects a coarse grid or short box", "[oracle]") {
  auto is = [](ErrorCode c) {
    return Catch::Matchers::Predicate<Error>([c](const Error& e) { return e.code() == c; });
  };
  CHECK_THROWS_MATCHES(assemble(OperatorCoefficients::free(), square_well(), 0.1, 10.0, 0.1), Error,
                       is(ErrorCode::GridTooCoarse));
  CHECK_THROWS_MATCHES(assemble(OperatorCoefficients::free(), square_well(), 0.1, 1.2, 1.0 / 64), Error,
                       is(ErrorCode::GridTooCoarse));
  auto pert = LocalizedPerturbation::embedded(2.0, 0.3);
  CHECK_THROWS_MATCHES(assemble(OperatorCoefficients::free(), pert, 0.3, 8.0, 1.0 / 32), Error,
                       is(ErrorCode::GridTooCoarse));
}
