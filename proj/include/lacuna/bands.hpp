#pragma once

#include <cmath>
#include <complex>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include <boost/math/tools/minima.hpp>
#include <boost/math/tools/toms748_solve.hpp>

#include "lacuna/coefficients.hpp"
#include "lacuna/csv.hpp"
#include "lacuna/error.hpp"
#include "lacuna/ode.hpp"
#include "lacuna/quadrature.hpp"

namespace lacuna {

enum class Side { Minus, Plus };

/// A band edge μₙ^±: root of D(λ) = 2(−1)ⁿ.
struct BandEdge {
  int n = 0;
  Side side = Side::Plus;
  double mu = 0;
  double ddot = 0;
  bool degenerate = false;
  double theta1 = 0, theta2 = 0, theta1p = 0, theta2p = 0;  // monodromy entries at mu

  double sign() const { return side == Side::Plus ? 1.0 : -1.0; }
  double parity_sign() const { return n % 2 == 0 ? 1.0 : -1.0; }
  bool periodic() const { return n % 2 == 0; }
  /// τ = ±(−1)ⁿ.
  double tau() const { return sign() * parity_sign(); }
  double theta1p_edge() const { return theta1p; }
  double theta2_edge() const { return theta2; }
  std::string label() const { return std::to_string(n) + (side == Side::Plus ? "+" : "-"); }
};

struct Lacuna {
  int n = 0;
  double left = -std::numeric_limits<double>::infinity();
  double right = 0;
  bool degenerate = false;
  bool semi_infinite = false;
};

struct BandScan {
  std::vector<BandEdge> edges;
  std::vector<Lacuna> lacunas;
  double lambda_lo = 0;
  double lambda_max = 0;
  double step = 0;

  const BandEdge* find(int n, Side side) const {
    for (const auto& e : edges)
      if (e.n == n && e.side == side) return &e;
    return nullptr;
  }
};

struct ScanOptions {
  double step = 0.25;
  int max_halvings = 8;
  double tol = 1e-12;            // ODE tolerance for the scan samples
  double refine_tol = 1e-14;     // ODE tolerance for extrema, roots and edge data
  double extremum_tol = 1e-9;    // |D_ext| − 2 below this marks a closed lacuna
  int min_samples_per_band = 4;
};

inline cd discriminant(const OperatorCoefficients& c, cd lambda, double tol = 1e-12) {
  return monodromy(c, lambda, tol).D;
}

struct Multiplier {
  cd rho;
  cd kappa;
  cd diff;  // ρ − ρ⁻¹, kept separately to avoid cancellation near band edges
};

/// ρ = (D ± √(D²−4))/2 with |ρ| ≥ 1, κ = log ρ (principal branch, log 1 = 0).
inline Multiplier multiplier_from_D(cd D) {
  cd w = std::sqrt(D * D - 4.0);
  cd r1 = 0.5 * (D + w), r2 = 0.5 * (D - w);
  const bool first = std::abs(r1) >= std::abs(r2);
  return {first ? r1 : r2, std::log(first ? r1 : r2), first ? w : -w};
}

inline Multiplier multiplier(const OperatorCoefficients& c, cd lambda, double tol = 1e-12) {
  return multiplier_from_D(discriminant(c, lambda, tol));
}

namespace detail {

/// Root of D − level on [a, b] (sign change assumed).
inline double refine_root(const OperatorCoefficients& c, double level, double a, double b, double tol) {
  auto f = [&](double l) { return discriminant(c, l, tol).real() - level; };
  double fa = f(a), fb = f(b);
  if (fa == 0) return a;
  if (fb == 0) return b;
  require(fa * fb < 0, ErrorCode::ScanTooCoarse, "band-edge bracket without sign change");
  std::uintmax_t iters = 200;
  auto r = boost::math::tools::toms748_solve(f, a, b, fa, fb, boost::math::tools::eps_tolerance<double>(52),
                                             iters);
  double x1 = r.first, x2 = r.second;
  return std::abs(f(x1)) <= std::abs(f(x2)) ? x1 : x2;
}

inline void fill_edge(const OperatorCoefficients& c, BandEdge& e, double tol) {
  MonodromyData m = monodromy(c, e.mu, tol);
  e.theta1 = m.theta1.real();
  e.theta2 = m.theta2.real();
  e.theta1p = m.theta1p.real();
  e.theta2p = m.theta2p.real();
}

}  // namespace detail

/// Ḋ(λ) = ∫₀¹ θ₁′(1)θ₂² + (θ₁(1) − θ₂′(1))θ₁θ₂ − θ₂(1)θ₁² at any complex λ.
inline cd discriminant_derivative(const OperatorCoefficients& c, cd lambda, double tol = 1e-12) {
  QuadGrid g = QuadGrid::build(0.0, 1.0, 1.0 / 16, c.breakpoint_images(0.0, 1.0), 12);
  FundamentalPair fp = integrate_fundamental(c, lambda, g.nodes(), tol);
  MonodromyData m = monodromy(c, lambda, tol);
  Eigen::VectorXcd integrand(g.size());
  for (int i = 0; i < g.size(); ++i) {
    cd t1 = fp.theta1[i], t2 = fp.theta2[i];
    integrand(i) = m.theta1p * t2 * t2 + (m.theta1 - m.theta2p) * t1 * t2 - m.theta2 * t1 * t1;
  }
  return g.integrate(integrand);
}

/// D(λ) − D(μ) by Gauss–Legendre integration of Ḋ along the segment [μ, λ].
inline cd discriminant_increment(const OperatorCoefficients& c, cd mu, cd lambda, double tol = 1e-12) {
  static const GaussRule rule = gauss_legendre(6);
  const cd half = 0.5 * (lambda - mu);
  cd s = 0;
  for (std::size_t j = 0; j < rule.x.size(); ++j)
    s += rule.w[j] * discriminant_derivative(c, mu + half * (1.0 + rule.x[j]), tol);
  return half * s;
}

/// Ḋ(μ) from the quadrature formula over one period, using the θ₂ form when |θ₂| ≥ |θ₁′|
/// and the θ₁′ form otherwise.
inline double ddot_at_edge(const OperatorCoefficients& c, const BandEdge& e, double tol = 1e-12) {
  require(!(std::abs(e.theta2) < 1e-10 && std::abs(e.theta1p) < 1e-10), ErrorCode::DegenerateEdge,
          "both theta2 and theta1' vanish at a non-degenerate edge");
  QuadGrid g = QuadGrid::build(0.0, 1.0, 1.0 / 16, c.breakpoint_images(0.0, 1.0), 12);
  FundamentalPair fp = integrate_fundamental(c, e.mu, g.nodes(), tol);
  const double delta = e.theta1 - e.theta2p;
  Eigen::VectorXcd integrand(g.size());
  if (std::abs(e.theta2) >= std::abs(e.theta1p)) {
    for (int i = 0; i < g.size(); ++i) {
      double v = 2 * e.theta2 * fp.theta1[i].real() - delta * fp.theta2[i].real();
      integrand(i) = v * v;
    }
    return -g.integrate(integrand).real() / (4 * e.theta2);
  }
  for (int i = 0; i < g.size(); ++i) {
    double v = 2 * e.theta1p * fp.theta2[i].real() + delta * fp.theta1[i].real();
    integrand(i) = v * v;
  }
  return g.integrate(integrand).real() / (4 * e.theta1p);
}

/// Locate all band edges up to lambda_max by a uniform scan of D with step halving.
inline BandScan find_band_edges(const OperatorCoefficients& c, double lambda_max, ScanOptions opt = {}) {
  require(lambda_max > c.q_min, ErrorCode::InvalidArgument, "lambda_max must exceed inf q");
  double lo = c.q_min - 1.0;
  while (discriminant(c, lo, opt.tol).real() <= 2.0 + 1e-6) lo -= 1.0;
  const double hard_stop = lambda_max + 100.0 + std::abs(lambda_max);

  for (int attempt = 0; attempt <= opt.max_halvings; ++attempt) {
    const double step = opt.step / std::pow(2.0, attempt);
    std::vector<double> lam, D;
    for (int i = 0;; ++i) {
      double l = lo + i * step;
      double d = discriminant(c, l, opt.tol).real();
      lam.push_back(l);
      D.push_back(d);
      if (l > lambda_max && std::abs(d) < 2.0 && i > 2) break;
      require(l < hard_stop, ErrorCode::ScanTooCoarse, "band scan did not reach a band beyond lambda_max");
    }
    const int ns = static_cast<int>(lam.size());

    std::vector<int> ext;  // sample indices of local extrema
    for (int i = 1; i + 1 < ns; ++i) {
      double l = D[i] - D[i - 1], r = D[i + 1] - D[i];
      if (l * r < 0 || (l != 0 && r == 0)) ext.push_back(i);
    }

    bool ok = true;
    int prev = 0;
    for (std::size_t j = 0; j < ext.size() && ok; ++j) {
      bool want_min = (j % 2 == 0);
      bool is_min = D[ext[j]] < D[ext[j] - 1];
      if (is_min != want_min || ext[j] - prev < opt.min_samples_per_band) ok = false;
      prev = ext[j];
    }
    if (!ok) continue;

    struct Ext {
      double lam, D;
    };
    std::vector<Ext> refined;
    for (std::size_t j = 0; j < ext.size() && ok; ++j) {
      bool is_min = (j % 2 == 0);
      double a = lam[ext[j] - 1], b = lam[ext[j] + 1];
      auto f = [&](double l) {
        double d = discriminant(c, l, opt.refine_tol).real();
        return is_min ? d : -d;
      };
      auto r = boost::math::tools::brent_find_minima(f, a, b, 26);
      double dv = is_min ? r.second : -r.second;
      double excess = is_min ? (-2.0 - dv) : (dv - 2.0);
      if (excess < -opt.extremum_tol) ok = false;
      refined.push_back({r.first, dv});
    }
    if (!ok) continue;

    BandScan out;
    out.lambda_lo = lo;
    out.lambda_max = lambda_max;
    out.step = step;

    double first_end = refined.empty() ? lam.back() : refined.front().lam;
    BandEdge e0;
    e0.n = 0;
    e0.side = Side::Plus;
    e0.mu = detail::refine_root(c, 2.0, lo, first_end, opt.refine_tol);
    out.edges.push_back(e0);
    Lacuna semi;
    semi.n = 0;
    semi.right = e0.mu;
    semi.semi_infinite = true;
    out.lacunas.push_back(semi);

    for (std::size_t j = 0; j < refined.size(); ++j) {
      int n = static_cast<int>(j) + 1;
      double level = n % 2 == 0 ? 2.0 : -2.0;
      double excess = std::abs(refined[j].D) - 2.0;
      BandEdge em, ep;
      em.n = ep.n = n;
      em.side = Side::Minus;
      ep.side = Side::Plus;
      if (excess > 0) {
        double a = j == 0 ? e0.mu : refined[j - 1].lam;
        double b = j + 1 < refined.size() ? refined[j + 1].lam : lam.back();
        em.mu = detail::refine_root(c, level, a, refined[j].lam, opt.refine_tol);
        ep.mu = detail::refine_root(c, level, refined[j].lam, b, opt.refine_tol);
      } else {
        em.mu = ep.mu = refined[j].lam;
      }
      if (excess <= opt.extremum_tol || ep.mu - em.mu <= 1e-8 * std::max(1.0, std::abs(em.mu)))
        em.degenerate = ep.degenerate = true;
      if (em.mu > lambda_max) break;
      Lacuna lac;
      lac.n = n;
      lac.left = em.mu;
      lac.right = ep.mu;
      lac.degenerate = em.degenerate;
      out.lacunas.push_back(lac);
      out.edges.push_back(em);
      if (ep.mu <= lambda_max) out.edges.push_back(ep);
    }

    for (auto& e : out.edges) {
      detail::fill_edge(c, e, opt.refine_tol);
      if (!e.degenerate) {
        e.ddot = ddot_at_edge(c, e, opt.refine_tol);
        require(-e.sign() * e.parity_sign() * e.ddot > 0, ErrorCode::ScanTooCoarse,
                "edge " + e.label() + ": sign of Ddot inconsistent with its side");
      }
    }
    return out;
  }
  fail(ErrorCode::ScanTooCoarse, "band scan: interleaving pattern inconsistent after all step halvings");
}

/// Real (anti)periodic eigenfunction at a non-degenerate edge, φ = c1·θ₁ + c2·θ₂.
struct EdgeEigenfunction {
  BandEdge edge;
  double c1 = 0, c2 = 0;
  bool theta2_form = true;

  double phi0() const { return c1; }
  double dphi0() const { return c2; }  // p(0) = 1

  /// φ and φ′ at the given points.
  std::pair<Eigen::VectorXd, Eigen::VectorXd> sample(const OperatorCoefficients& c, std::span<const double> xs,
                                                     double tol = 1e-12) const {
    FundamentalPair fp = integrate_fundamental(c, edge.mu, xs, tol);
    Eigen::VectorXd v(fp.size()), d(fp.size());
    for (int i = 0; i < fp.size(); ++i) {
      v(i) = c1 * fp.theta1[i].real() + c2 * fp.theta2[i].real();
      d(i) = (c1 * fp.flux1[i].real() + c2 * fp.flux2[i].real()) / fp.p[i];
    }
    return {v, d};
  }
};

inline EdgeEigenfunction edge_eigenfunction(const BandEdge& e) {
  require(!e.degenerate, ErrorCode::DegenerateEdge, "edge " + e.label() + " belongs to a degenerate lacuna");
  require(!(std::abs(e.theta2) < 1e-10 && std::abs(e.theta1p) < 1e-10), ErrorCode::DegenerateEdge,
          "both theta2 and theta1' vanish at edge " + e.label());
  EdgeEigenfunction f;
  f.edge = e;
  const double rho = e.parity_sign();
  const double tau = e.tau();
  if (std::abs(e.theta2) >= std::abs(e.theta1p)) {
    double s = std::sqrt(std::max(0.0, tau * e.theta2));
    f.c1 = s;
    f.c2 = s * (rho - e.theta1) / e.theta2;
    f.theta2_form = true;
  } else {
    double s = std::sqrt(std::max(0.0, -tau * e.theta1p));
    f.c1 = s * (rho - e.theta2p) / e.theta1p;
    f.c2 = s;
    f.theta2_form = false;
  }
  return f;
}

inline EdgeEigenfunction edge_eigenfunction(const OperatorCoefficients&, const BandEdge& e) {
  return edge_eigenfunction(e);
}

/// ρₙ^±(k) with the holomorphic branch √(D²−4) ≈ 2√|Ḋ|k, and κₙ^±(k) with κₙ(0) = 0.
inline Multiplier edge_multiplier(const OperatorCoefficients& c, const BandEdge& e, cd k, double tol = 1e-12) {
  require(!e.degenerate, ErrorCode::DegenerateEdge, "edge " + e.label() + " belongs to a degenerate lacuna");
  const double sgn = e.parity_sign();
  if (k == cd(0)) return {cd(sgn), cd(0), cd(0)};
  cd lambda = e.mu - e.sign() * k * k;
  cd D, w;
  if (std::abs(lambda - e.mu) <= 0.25) {
    // D² − 4 = Δ(4s + Δ) with Δ = D(λ) − D(μ) integrated from Ḋ, which avoids the
    // cancellation in D² − 4 when k is small.
    cd delta = discriminant_increment(c, e.mu, lambda, tol);
    D = 2.0 * sgn + delta;
    w = std::sqrt(delta * (4.0 * sgn + delta));
  } else {
    D = discriminant(c, lambda, tol);
    w = std::sqrt(D * D - 4.0);
  }
  cd ref = 2.0 * std::sqrt(std::abs(e.ddot)) * k;
  if (std::abs(-w - ref) < std::abs(w - ref)) w = -w;
  require(std::abs(w - ref) <= 0.5 * std::abs(ref), ErrorCode::KTooLarge,
          "edge " + e.label() + ": k outside the range of the edge expansion");
  cd rho = 0.5 * (D + sgn * w);
  return {rho, std::log(sgn * rho), sgn * w};
}

/// Band diagram CSV: lambda, ReD, ImD, in_band.
inline void write_band_diagram_csv(std::ostream& os, const OperatorCoefficients& c, double lo, double hi, int n,
                                   double tol = 1e-12) {
  CsvWriter w(os, {"lambda", "ReD", "ImD", "in_band"});
  for (int i = 0; i < n; ++i) {
    double l = n == 1 ? lo : lo + (hi - lo) * i / (n - 1);
    cd D = discriminant(c, l, tol);
    w.cell(l).cell(D.real()).cell(D.imag()).cell(std::abs(D.real()) <= 2.0 ? 1 : 0);
    w.end_row();
  }
}

inline void write_edge_table_csv(std::ostream& os, const BandScan& scan) {
  CsvWriter w(os, {"n", "side", "mu", "ddot", "degenerate"});
  for (const auto& e : scan.edges) {
    w.cell(e.n).cell(e.side == Side::Plus ? "+" : "-").cell(e.mu).cell(e.ddot).cell(e.degenerate ? 1 : 0);
    w.end_row();
  }
}

}  // namespace lacuna
