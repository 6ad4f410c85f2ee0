#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "lacuna/coefficients.hpp"
#include "lacuna/error.hpp"
#include "lacuna/quadrature.hpp"

namespace lacuna {

/// θ₁, θ₂ and their fluxes p·θ′ sampled on a sorted grid.
struct FundamentalPair {
  cd lambda;
  std::vector<double> grid;
  std::vector<cd> theta1, theta2, flux1, flux2;
  std::vector<double> p;  // p at the grid points (right-continuous)

  int size() const { return static_cast<int>(grid.size()); }
  cd dtheta1(int i) const { return flux1[i] / p[i]; }
  cd dtheta2(int i) const { return flux2[i] / p[i]; }

  /// max_i |p·(θ₁θ₂′ − θ₁′θ₂) − 1|; in flux form this is θ₁·flux₂ − flux₁·θ₂ − 1.
  double wronskian_residual() const {
    double r = 0;
    for (int i = 0; i < size(); ++i)
      r = std::max(r, std::abs(theta1[i] * flux2[i] - flux1[i] * theta2[i] - 1.0));
    return r;
  }

  /// max_i |θ₁·flux₂| + |flux₁·θ₂|: the size of the products that cancel in the Wronskian,
  /// so eps times this is the floating-point floor of wronskian_residual().
  double wronskian_scale() const {
    double s = 0;
    for (int i = 0; i < size(); ++i)
      s = std::max(s, std::abs(theta1[i] * flux2[i]) + std::abs(flux1[i] * theta2[i]));
    return s;
  }

  /// Index of grid point x (exact match within 1e-13), or -1.
  int find(double x) const {
    auto it = std::lower_bound(grid.begin(), grid.end(), x - 1e-13);
    if (it == grid.end() || std::abs(*it - x) > 1e-13) return -1;
    return static_cast<int>(it - grid.begin());
  }
};

namespace detail {

using State = std::array<cd, 4>;  // θ₁, flux₁, θ₂, flux₂

struct Dopri5 {
  const OperatorCoefficients& c;
  cd lambda;
  double tol;

  State rhs(double x, const State& y, int pseg, double pshift, int qseg, double qshift) const {
    double pv = c.p.segment_value(pseg, x - pshift);
    cd qv = c.q.segment_value(qseg, x - qshift) - lambda;
    return {y[1] / pv, qv * y[0], y[3] / pv, qv * y[2]};
  }

  /// Advance y from x0 to x1 exactly, adaptively; h is the step-size memory.
  void advance(double x0, double x1, State& y, double& h) const {
    if (x1 == x0) return;
    const double dir = x1 > x0 ? 1.0 : -1.0;
    double mid = 0.5 * (x0 + x1);
    auto pl = c.p.locate(mid);
    auto ql = c.q.locate(mid);
    require(c.p.segment_value(pl.seg, mid - pl.shift) > 0.0, ErrorCode::NonPositiveP,
            "p <= 0 encountered during integration");
    double x = x0;
    h = std::abs(h);
    static constexpr double a21 = 1.0 / 5, a31 = 3.0 / 40, a32 = 9.0 / 40, a41 = 44.0 / 45,
                            a42 = -56.0 / 15, a43 = 32.0 / 9, a51 = 19372.0 / 6561,
                            a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729,
                            a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                            a64 = 49.0 / 176, a65 = -5103.0 / 18656, b1 = 35.0 / 384,
                            b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                            b6 = 11.0 / 84, e1 = 71.0 / 57600, e3 = -71.0 / 16695,
                            e4 = 71.0 / 1920, e5 = -17253.0 / 339200, e6 = 22.0 / 525,
                            e7 = -1.0 / 40;
    auto f = [&](double xx, const State& yy) { return rhs(xx, yy, pl.seg, pl.shift, ql.seg, ql.shift); };
    State k1 = f(x, y);
    while (dir * (x1 - x) > 0) {
      double remaining = std::abs(x1 - x);
      bool last = false;
      double step = h;
      if (step >= remaining) {
        step = remaining;
        last = true;
      }
      if (step < 1e-14) {
        if (remaining < 1e-14) {
          // Treat as coincident stop: carry the state over.
          x = x1;
          break;
        }
        fail(ErrorCode::StepUnderflow, "adaptive step fell below 1e-14");
      }
      double hs = dir * step;
      State tmp, k2, k3, k4, k5, k6, k7, y5;
      for (int i = 0; i < 4; ++i) tmp[i] = y[i] + hs * (a21 * k1[i]);
      k2 = f(x + hs / 5, tmp);
      for (int i = 0; i < 4; ++i) tmp[i] = y[i] + hs * (a31 * k1[i] + a32 * k2[i]);
      k3 = f(x + 3 * hs / 10, tmp);
      for (int i = 0; i < 4; ++i) tmp[i] = y[i] + hs * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
      k4 = f(x + 4 * hs / 5, tmp);
      for (int i = 0; i < 4; ++i)
        tmp[i] = y[i] + hs * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
      k5 = f(x + 8 * hs / 9, tmp);
      for (int i = 0; i < 4; ++i)
        tmp[i] = y[i] + hs * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] + a65 * k5[i]);
      double xe = last ? x1 : x + hs;
      k6 = f(xe, tmp);
      for (int i = 0; i < 4; ++i)
        y5[i] = y[i] + hs * (b1 * k1[i] + b3 * k3[i] + b4 * k4[i] + b5 * k5[i] + b6 * k6[i]);
      k7 = f(xe, y5);
      double err = 0;
      for (int i = 0; i < 4; ++i) {
        cd e = hs * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] + e7 * k7[i]);
        double sc = tol + tol * std::max(std::abs(y[i]), std::abs(y5[i]));
        err = std::max(err, std::abs(e) / sc);
      }
      if (!std::isfinite(err)) err = 1e10;
      if (err <= 1.0) {
        x = xe;
        y = y5;
        k1 = k7;
        double fac = err == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0);
        if (!last || fac < 1.0) h = step * fac;
      } else {
        h = step * std::clamp(0.9 * std::pow(err, -0.2), 0.1, 0.9);
      }
    }
  }
};

/// Integrate from 0 through the sorted stops (all on one side of 0), recording each stop.
inline void sweep(const Dopri5& dp, const std::vector<double>& stops, const std::vector<char>& record,
                  std::vector<std::pair<double, State>>& out) {
  State y{cd(1), cd(0), cd(0), cd(1)};
  double x = 0.0;
  double h = 0.05 / (1.0 + std::sqrt(std::abs(dp.lambda) + std::abs(dp.c.q_max)));
  for (std::size_t i = 0; i < stops.size(); ++i) {
    dp.advance(x, stops[i], y, h);
    x = stops[i];
    if (record[i]) out.emplace_back(x, y);
  }
}

}  // namespace detail

/// θ₁, θ₂ (θ₁(0)=1, pθ₁′(0)=0, θ₂(0)=0, pθ₂′(0)=1) on the given sorted grid, by an adaptive
/// Dormand–Prince 5(4) integration of the flux system (u, pu′) with stops at every breakpoint image.
inline FundamentalPair integrate_fundamental(const OperatorCoefficients& c, cd lambda,
                                             std::span<const double> grid, double tol = 1e-10) {
  require(tol > 0, ErrorCode::InvalidArgument, "integrate_fundamental: tol must be positive");
  require(!grid.empty(), ErrorCode::InvalidArgument, "integrate_fundamental: empty grid");
  for (std::size_t i = 1; i < grid.size(); ++i)
    require(grid[i] >= grid[i - 1], ErrorCode::InvalidArgument, "integrate_fundamental: grid must be sorted");
  detail::Dopri5 dp{c, lambda, tol};

  double lo = std::min(0.0, grid.front()), hi = std::max(0.0, grid.back());
  auto bps = c.breakpoint_images(lo, hi);

  auto build = [&](bool positive, std::vector<double>& stops, std::vector<char>& rec) {
    std::vector<std::pair<double, char>> s;
    for (double g : grid)
      if (positive ? g > 0 : g < 0) s.emplace_back(g, 1);
    for (double b : bps)
      if (positive ? b > 0 : b < 0) s.emplace_back(b, 0);
    std::sort(s.begin(), s.end(), [&](auto& a, auto& b) {
      return positive ? a.first < b.first : a.first > b.first;
    });
    for (auto& [x, r] : s) {
      stops.push_back(x);
      rec.push_back(r);
    }
  };

  std::vector<double> ps, ns;
  std::vector<char> pr, nr;
  build(true, ps, pr);
  build(false, ns, nr);
  std::vector<std::pair<double, detail::State>> pos, neg;
  detail::sweep(dp, ps, pr, pos);
  detail::sweep(dp, ns, nr, neg);

  FundamentalPair fp;
  fp.lambda = lambda;
  fp.grid.assign(grid.begin(), grid.end());
  const int n = static_cast<int>(grid.size());
  fp.theta1.resize(n);
  fp.theta2.resize(n);
  fp.flux1.resize(n);
  fp.flux2.resize(n);
  fp.p.resize(n);
  std::size_t ip = 0;
  // neg was recorded in decreasing x order; walk it backwards.
  std::size_t in = neg.size();
  for (int i = 0; i < n; ++i) {
    double g = grid[i];
    detail::State y;
    if (g < 0) {
      y = neg[--in].second;
    } else if (g > 0) {
      y = pos[ip++].second;
    } else {
      y = {cd(1), cd(0), cd(0), cd(1)};
    }
    fp.theta1[i] = y[0];
    fp.flux1[i] = y[1];
    fp.theta2[i] = y[2];
    fp.flux2[i] = y[3];
    fp.p[i] = c.p(g);
  }
  return fp;
}

/// Uniform grid of n points on [x_lo, x_hi] (0 added if inside).
inline FundamentalPair integrate_fundamental(const OperatorCoefficients& c, cd lambda, double x_lo,
                                             double x_hi, double tol = 1e-10, int n = 201) {
  require(x_hi >= x_lo && n >= 2, ErrorCode::InvalidArgument, "integrate_fundamental: bad interval");
  std::vector<double> g(n);
  for (int i = 0; i < n; ++i) g[i] = x_lo + (x_hi - x_lo) * i / (n - 1);
  return integrate_fundamental(c, lambda, g, tol);
}

/// θ₁(λ)=θ₁(1,λ), θ₂(λ), θ₁′(λ), θ₂′(λ) and D(λ)=θ₁(λ)+θ₂′(λ).
struct MonodromyData {
  cd lambda;
  cd theta1, theta2, theta1p, theta2p;
  cd D;
  cd det() const { return theta1 * theta2p - theta1p * theta2; }
};

inline MonodromyData monodromy(const OperatorCoefficients& c, cd lambda, double tol = 1e-10) {
  const double one[1] = {1.0};
  FundamentalPair fp = integrate_fundamental(c, lambda, std::span<const double>(one, 1), tol);
  MonodromyData m;
  m.lambda = lambda;
  m.theta1 = fp.theta1[0];
  m.theta2 = fp.theta2[0];
  // p(1) = p(0) = 1, so the flux equals the derivative at x = 1.
  m.theta1p = fp.flux1[0] / fp.p[0];
  m.theta2p = fp.flux2[0] / fp.p[0];
  m.D = m.theta1 + m.theta2p;
  return m;
}

/// Value and first-derivative channels on the nodes of a QuadGrid.
struct NodeSamples {
  Eigen::VectorXcd value, d1;
};

/// 𝒫(λ,α)f(x) = ∫_α^x (θ₁(x)θ₂(t) − θ₁(t)θ₂(x)) f(t) dt at the nodes of `grid`, where f is sampled
/// on those nodes and `fp` carries θ at (at least) the same nodes.
inline NodeSamples cauchy_apply(const FundamentalPair& fp, const QuadGrid& grid, const Eigen::VectorXcd& f,
                                double alpha) {
  const int n = grid.size();
  require(f.size() == n, ErrorCode::GridMismatch, "cauchy_apply: f does not match the grid");
  Eigen::VectorXcd t1(n), t2(n), d1(n), d2(n);
  for (int i = 0; i < n; ++i) {
    int j = fp.find(grid.nodes()[i]);
    require(j >= 0, ErrorCode::GridMismatch, "cauchy_apply: grid node missing from the fundamental pair");
    t1(i) = fp.theta1[j];
    t2(i) = fp.theta2[j];
    d1(i) = fp.dtheta1(j);
    d2(i) = fp.dtheta2(j);
  }
  Eigen::MatrixXcd g(n, 2);
  g.col(0) = t1.cwiseProduct(f);
  g.col(1) = t2.cwiseProduct(f);
  Eigen::MatrixXcd cum = grid.cumulative(g);
  cd a1 = grid.integrate_to(g.col(0), alpha), a2 = grid.integrate_to(g.col(1), alpha);
  Eigen::VectorXcd I1 = cum.col(0).array() - a1, I2 = cum.col(1).array() - a2;
  NodeSamples out;
  out.value = t1.cwiseProduct(I2) - t2.cwiseProduct(I1);
  out.d1 = d1.cwiseProduct(I2) - d2.cwiseProduct(I1);
  return out;
}

inline NodeSamples cauchy_apply(const OperatorCoefficients& c, cd lambda, double alpha, const QuadGrid& grid,
                                const Eigen::VectorXcd& f, double tol = 1e-12) {
  FundamentalPair fp = integrate_fundamental(c, lambda, grid.nodes(), tol);
  return cauchy_apply(fp, grid, f, alpha);
}

}  // namespace lacuna
