#pragma once

#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lacuna/bands.hpp"
#include "lacuna/coefficients.hpp"
#include "lacuna/csv.hpp"
#include "lacuna/error.hpp"
#include "lacuna/floquet_green.hpp"
#include "lacuna/perturbation.hpp"
#include "lacuna/quadrature.hpp"

namespace lacuna {

enum class Verdict { Yes, No, Indeterminate };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::Yes: return "yes";
    case Verdict::No: return "no";
    case Verdict::Indeterminate: return "indeterminate";
  }
  return "indeterminate";
}

struct GapOptions {
  double tol = 1e-12;          // ODE and quadrature tolerance
  double max_cell = 0.125;     // longest Q-grid cell
  int order = 12;              // Gauss points per cell
  double neumann_tol = 1e-15;  // relative Neumann increment at which the series is cut
  int neumann_max = 400;
  int max_iter = 100;          // fixed-point iterations for k
  double k_tol = 1e-12;
  int dense_cap = 4096;
  double k_floor = 1e-9;       // below this |k| the regular part of 𝒢(k) is replaced by 𝒢₀

  double tau_exist() const { return 1e3 * tol; }
};

struct KCoefficients {
  cd k1, k2;
  BandEdge edge;
  double epsilon = 0;
};

/// Outcome of solving (I − εM)g = rhs.
struct CorrectionSolve {
  Eigen::VectorXcd g;
  int iterations = 0;  // Neumann terms used; 0 when the dense solve was needed
  bool dense = false;
  double residual = 0;  // ‖(I − εM)g − rhs‖ / max(1, ‖rhs‖)
};

struct GapEigenvalueReport {
  BandEdge edge;
  double epsilon = 0;
  Verdict exists = Verdict::Indeterminate;
  Verdict asymptotic_verdict = Verdict::Indeterminate;
  cd criterion_value;  // (φ, A(ε,0)Lφ)
  cd k1, k2;
  cd lambda_order1, lambda_order2, lambda_from_criterion;
  std::optional<cd> k_exact;
  std::optional<cd> lambda_exact;
  std::optional<double> decay_rate;  // Re κ(k_exact)
  int k_iterations = 0;
  WindowSamples eigenfunction;
};

/// Everything at one band edge that does not depend on ε: the Q grid, the bound
/// perturbation, 𝒢₀, φ with its derivatives and Lφ.
class EdgeProblem {
 public:
  EdgeProblem(const OperatorCoefficients& c, const BandEdge& e, const LocalizedPerturbation& pert,
              GapOptions opt = {})
      : c_(c), edge_(e), pert_(pert), opt_(opt) {
    require(!e.degenerate, ErrorCode::DegenerateEdge, "edge " + e.label() + " belongs to a degenerate lacuna");
    grid_ = pert.make_grid(c, opt.max_cell, opt.order);
    bound_ = pert.bind(grid_);
    g0_.emplace(c, e, grid_, opt.tol);
    auto [v, d] = edge_eigenfunction(e).sample(c, grid_.nodes(), opt.tol);
    auto nc = detail::node_coefficients(c, grid_.nodes());
    phi_.value = v.cast<cd>();
    phi_.d1 = d.cast<cd>();
    phi_.d2 = (((nc.q.array() - e.mu) * v.array() - nc.dp.array() * d.array()) / nc.p.array()).matrix().cast<cd>();
    lphi_ = bound_.apply(phi_).col(0);
    w_ = grid_.weight_vector();
    scale_ = 1.0 / (2.0 * std::sqrt(std::abs(e.ddot)));
  }

  const OperatorCoefficients& coefficients() const { return c_; }
  const BandEdge& edge() const { return edge_; }
  const LocalizedPerturbation& perturbation() const { return pert_; }
  const GapOptions& options() const { return opt_; }
  const QuadGrid& grid() const { return grid_; }
  const BoundPerturbation& bound() const { return bound_; }
  const EdgeGreen0& green0() const { return *g0_; }
  const Channels& phi() const { return phi_; }
  const Eigen::VectorXcd& lphi() const { return lphi_; }
  double sign() const { return edge_.sign(); }
  /// 1/(2√|Ḋ(μ)|).
  double scale() const { return scale_; }

  /// ∫_Q f·φ; equals (f, φ) since φ is real.
  cd bilinear(const Eigen::VectorXcd& f) const {
    cd s = 0;
    for (int i = 0; i < grid_.size(); ++i) s += w_(i) * f(i) * phi_.value(i, 0).real();
    return s;
  }

  /// (φ, f) = ∫ φ·conj(f).
  cd inner_phi(const Eigen::VectorXcd& f) const { return std::conj(bilinear(f)); }

  KCoefficients k_coefficients(double epsilon) const {
    KCoefficients kc;
    kc.edge = edge_;
    kc.epsilon = epsilon;
    kc.k1 = sign() * scale_ * bilinear(lphi_);
    Channels g = g0_->apply(lphi_);
    kc.k2 = sign() * scale_ * bilinear(bound_.apply(g).col(0));
    return kc;
  }

  /// M f = L𝒢f with 𝒢 = 𝒢₀ at k = 0 and the regular part of 𝒢(k) otherwise.
  std::function<Eigen::MatrixXcd(const Eigen::MatrixXcd&)> green_operator(cd k) const {
    if (std::abs(k) <= opt_.k_floor) return [this](const Eigen::MatrixXcd& F) { return bound_.apply(g0_->apply(F)); };
    auto gk = std::make_shared<EdgeGreenK>(c_, edge_, k, grid_, opt_.tol);
    return [this, gk](const Eigen::MatrixXcd& F) { return bound_.apply(gk->regular(F)); };
  }

  /// Solves (I − εL𝒢)g = rhs: Neumann series, then a dense LU solve if the series stalls.
  CorrectionSolve solve_correction(double epsilon, const Eigen::VectorXcd& rhs, cd k = 0) const {
    CorrectionSolve out;
    if (epsilon == 0.0) {
      out.g = rhs;
      return out;
    }
    auto M = green_operator(k);
    const double rnorm = std::max(1.0, rhs.norm());
    Eigen::VectorXcd g = rhs, term = rhs;
    double prev = term.norm();
    bool converged = false;
    for (int j = 1; j <= opt_.neumann_max; ++j) {
      term = epsilon * M(term);
      g += term;
      const double tn = term.norm();
      if (!std::isfinite(tn)) break;
      if (tn <= opt_.neumann_tol * std::max(g.norm(), rnorm)) {
        out.iterations = j;
        converged = true;
        break;
      }
      if (j > 8 && tn > 0.99 * prev) break;  // not contracting
      prev = tn;
    }
    if (!converged) {
      const int n = grid_.size();
      require(n <= opt_.dense_cap, ErrorCode::NotInvertible,
              "Q grid has " + std::to_string(n) + " nodes, above the dense solve cap");
      Eigen::MatrixXcd A = Eigen::MatrixXcd::Identity(n, n) - epsilon * M(Eigen::MatrixXcd::Identity(n, n));
      Eigen::PartialPivLU<Eigen::MatrixXcd> lu(A);
      const double rcond = lu.rcond();
      require(rcond > 1e-12, ErrorCode::NotInvertible,
              "I - eps L G is singular (rcond " + sci(rcond) + "); epsilon too large");
      g = lu.solve(rhs);
      out.dense = true;
      out.iterations = 0;
    }
    out.g = g;
    out.residual = (g - epsilon * M(g) - rhs).norm() / rnorm;
    return out;
  }

  /// A(ε,k)Lφ.
  Eigen::VectorXcd a_lphi(double epsilon, cd k = 0) const { return solve_correction(epsilon, lphi_, k).g; }

  /// (φ, A(ε,0)Lφ) with the verdict on ±Re of it.
  std::pair<Verdict, cd> existence_criterion(double epsilon) const {
    cd val = inner_phi(a_lphi(epsilon));
    const double s = sign() * val.real();
    const double tau = opt_.tau_exist();
    return {s > tau ? Verdict::Yes : s < -tau ? Verdict::No : Verdict::Indeterminate, val};
  }

  /// Verdict from Re(k1 + εk2) against the indeterminate band ε^{3/2}.
  static Verdict asymptotic_verdict(const KCoefficients& kc) {
    const double r = (kc.k1 + kc.epsilon * kc.k2).real();
    const double band = std::pow(kc.epsilon, 1.5);
    return r > band ? Verdict::Yes : r < -band ? Verdict::No : Verdict::Indeterminate;
  }

  /// Right-hand side of the k-equation: ±(ε/(2√|Ḋ|))·(A(ε,k)Lφ, φ).
  cd k_map(double epsilon, cd k) const { return sign() * epsilon * scale_ * bilinear(a_lphi(epsilon, k)); }

  struct KSolve {
    cd k;
    int iterations;
    double last_step;
  };

  /// Damped fixed point for k seeded at ε(k1 + εk2). Converged when |Δk| ≤ k_tol or, for
  /// small |k|, when |Δk| reaches the rounding floor 1e3·eps/|k| of the regular part of 𝒢(k),
  /// which is the difference of two kernels of size 1/|k|.
  KSolve solve_k_equation(double epsilon) const {
    KCoefficients kc = k_coefficients(epsilon);
    cd k = epsilon * (kc.k1 + epsilon * kc.k2);
    double damping = 1.0, prev = INFINITY;
    for (int it = 1; it <= opt_.max_iter; ++it) {
      cd next;
      try {
        next = k_map(epsilon, k);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::KTooLarge) throw;
        fail(ErrorCode::NoConvergence, "k-equation iterate left the edge neighbourhood at epsilon " + sci(epsilon) +
                                           " (" + e.what() + "); outside the perturbative regime");
      }
      require(std::isfinite(next.real()) && std::isfinite(next.imag()), ErrorCode::NoConvergence,
              "k-equation produced a non-finite iterate");
      const double step = std::abs(next - k);
      const double floor = std::abs(next) > opt_.k_floor
                               ? 1e3 * std::numeric_limits<double>::epsilon() / std::abs(next)
                               : 0.0;
      if (step <= std::max(opt_.k_tol, floor)) return {next, it, step};
      if (step > prev) damping = 0.5;
      k += damping * (next - k);
      prev = step;
    }
    fail(ErrorCode::NoConvergence, "k-equation did not converge in " + std::to_string(opt_.max_iter) +
                                       " iterations at epsilon " + sci(epsilon) + "; outside the perturbative regime");
  }

  cd lambda_of(cd k) const { return edge_.mu - sign() * k * k; }

  /// ψ = ε𝒢(k)A(ε,k)Lφ at arbitrary points.
  WindowSamples eigenfunction(double epsilon, cd k, std::span<const double> xs) const {
    require(k.real() > 0, ErrorCode::NonDecaying, "eigenfunction requested with Re k <= 0");
    EdgeGreenK gk(c_, edge_, k, grid_, opt_.tol);
    WindowSamples w = gk.apply_window(epsilon * a_lphi(epsilon, k), xs);
    return w;
  }

  /// ψ and its channels on the Q grid.
  Channels eigenfunction_on_q(double epsilon, cd k) const {
    require(k.real() > 0, ErrorCode::NonDecaying, "eigenfunction requested with Re k <= 0");
    EdgeGreenK gk(c_, edge_, k, grid_, opt_.tol);
    Channels ch = gk.apply(epsilon * a_lphi(epsilon, k));
    return ch;
  }

  /// Re κ(k), the exponential decay rate of ψ away from Q.
  double decay_rate(cd k) const { return edge_multiplier(c_, edge_, k, opt_.tol).kappa.real(); }

  /// Full report; `window` are the eigenfunction sample points (may be empty).
  GapEigenvalueReport report(double epsilon, std::span<const double> window = {}) const {
    GapEigenvalueReport r;
    r.edge = edge_;
    r.epsilon = epsilon;
    KCoefficients kc = k_coefficients(epsilon);
    r.k1 = kc.k1;
    r.k2 = kc.k2;
    auto [v, val] = existence_criterion(epsilon);
    r.exists = v;
    r.criterion_value = val;
    r.asymptotic_verdict = asymptotic_verdict(kc);
    const double e2 = epsilon * epsilon;
    r.lambda_order1 = edge_.mu - sign() * e2 * kc.k1 * kc.k1;
    r.lambda_order2 = edge_.mu - sign() * e2 * (kc.k1 + epsilon * kc.k2) * (kc.k1 + epsilon * kc.k2);
    cd pairing = bilinear(a_lphi(epsilon));
    r.lambda_from_criterion = edge_.mu - sign() * e2 * pairing * pairing * scale_ * scale_;
    KSolve ks = solve_k_equation(epsilon);
    r.k_exact = ks.k;
    r.k_iterations = ks.iterations;
    if (ks.k.real() > 0) {
      r.lambda_exact = lambda_of(ks.k);
      r.decay_rate = decay_rate(ks.k);
      if (!window.empty()) r.eigenfunction = eigenfunction(epsilon, ks.k, window);
    }
    return r;
  }

 private:
  OperatorCoefficients c_;
  BandEdge edge_;
  LocalizedPerturbation pert_;
  GapOptions opt_;
  QuadGrid grid_;
  BoundPerturbation bound_;
  std::optional<EdgeGreen0> g0_;
  Channels phi_;
  Eigen::VectorXcd lphi_;
  Eigen::VectorXd w_;
  double scale_ = 0;
};

inline KCoefficients k_coefficients(const OperatorCoefficients& c, const BandEdge& e, const LocalizedPerturbation& pert,
                                    double epsilon, GapOptions opt = {}) {
  return EdgeProblem(c, e, pert, opt).k_coefficients(epsilon);
}

inline Eigen::VectorXcd resolvent_correction(const EdgeProblem& ep, double epsilon, const Eigen::VectorXcd& rhs) {
  return ep.solve_correction(epsilon, rhs).g;
}

inline std::pair<Verdict, cd> existence_criterion(const OperatorCoefficients& c, const BandEdge& e,
                                                  const LocalizedPerturbation& pert, double epsilon,
                                                  GapOptions opt = {}) {
  return EdgeProblem(c, e, pert, opt).existence_criterion(epsilon);
}

inline cd solve_k_equation(const OperatorCoefficients& c, const BandEdge& e, const LocalizedPerturbation& pert,
                           double epsilon, GapOptions opt = {}) {
  return EdgeProblem(c, e, pert, opt).solve_k_equation(epsilon).k;
}

inline GapEigenvalueReport eigenvalue_asymptotics(const OperatorCoefficients& c, const BandEdge& e,
                                                  const LocalizedPerturbation& pert, double epsilon,
                                                  std::span<const double> window = {}, GapOptions opt = {}) {
  return EdgeProblem(c, e, pert, opt).report(epsilon, window);
}

/// Uniform sample points on [lo, hi].
inline std::vector<double> linspace(double lo, double hi, int n) {
  std::vector<double> x(n);
  for (int i = 0; i < n; ++i) x[i] = n == 1 ? lo : lo + (hi - lo) * i / (n - 1);
  return x;
}

/// key = value record; complex values as "re im".
inline void write_report(std::ostream& os, const GapEigenvalueReport& r) {
  auto z = [](cd v) { return sci(v.real()) + " " + sci(v.imag()); };
  os << "edge = " << r.edge.label() << '\n'
     << "n = " << r.edge.n << '\n'
     << "side = " << (r.edge.side == Side::Plus ? '+' : '-') << '\n'
     << "mu = " << sci(r.edge.mu) << '\n'
     << "ddot = " << sci(r.edge.ddot) << '\n'
     << "epsilon = " << sci(r.epsilon) << '\n'
     << "exists = " << to_string(r.exists) << '\n'
     << "asymptotic_verdict = " << to_string(r.asymptotic_verdict) << '\n'
     << "criterion_value = " << z(r.criterion_value) << '\n'
     << "k1 = " << z(r.k1) << '\n'
     << "k2 = " << z(r.k2) << '\n'
     << "lambda_order1 = " << z(r.lambda_order1) << '\n'
     << "lambda_order2 = " << z(r.lambda_order2) << '\n'
     << "lambda_from_criterion = " << z(r.lambda_from_criterion) << '\n'
     << "k_exact = " << (r.k_exact ? z(*r.k_exact) : "absent") << '\n'
     << "k_iterations = " << r.k_iterations << '\n'
     << "lambda_exact = " << (r.lambda_exact ? z(*r.lambda_exact) : "absent") << '\n'
     << "decay_rate = " << (r.decay_rate ? sci(*r.decay_rate) : "absent") << '\n';
}

/// x, Re ψ, Im ψ.
inline void write_eigenfunction_csv(std::ostream& os, const WindowSamples& w) {
  CsvWriter csv(os, {"x", "re_psi", "im_psi"});
  for (std::size_t i = 0; i < w.x.size(); ++i) {
    csv.cell(w.x[i]).cell(w.value(i).real()).cell(w.value(i).imag());
    csv.end_row();
  }
}

}  // namespace lacuna
