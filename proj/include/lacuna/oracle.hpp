#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "lacuna/bands.hpp"
#include "lacuna/coefficients.hpp"
#include "lacuna/csv.hpp"
#include "lacuna/error.hpp"
#include "lacuna/perturbation.hpp"
#include "lacuna/quadrature.hpp"

extern "C" {
void zgttrf_(const int* n, std::complex<double>* dl, std::complex<double>* d, std::complex<double>* du,
             std::complex<double>* du2, int* ipiv, int* info);
void zgttrs_(const char* trans, const int* n, const int* nrhs, const std::complex<double>* dl,
             const std::complex<double>* d, const std::complex<double>* du, const std::complex<double>* du2,
             const int* ipiv, std::complex<double>* b, const int* ldb, int* info, std::size_t trans_len);
}

namespace lacuna {

/// Finite-difference matrix of H₀ − εL on [−R, R] with Dirichlet ends:
/// M = A + U·V, A sparse (stencil, local perturbation terms, dense kernel block),
/// U (N×r) and V (r×N) the low-rank part of rank-one and functional perturbations.
struct TruncatedProblem {
  double R = 0, h = 0;
  int N = 0;
  std::vector<double> x;
  double q_lo = 0, q_hi = 0;
  Eigen::SparseMatrix<cd> A;
  Eigen::MatrixXcd U, V;
  bool real_symmetric_tridiagonal = false;  // M itself
  bool base_symmetric = false;              // A real symmetric tridiagonal, low-rank part aside
  bool tridiagonal = false;                 // A tridiagonal

  bool has_low_rank() const { return U.cols() > 0; }

  Eigen::MatrixXcd dense() const {
    Eigen::MatrixXcd M = Eigen::MatrixXcd(A);
    if (has_low_rank()) M += U * V;
    return M;
  }

  Eigen::MatrixXcd apply(const Eigen::MatrixXcd& v) const {
    Eigen::MatrixXcd out = A * v;
    if (has_low_rank()) out += U * (V * v);
    return out;
  }

  std::vector<double> diag, off;  // A when base_symmetric; off[i] couples i and i + 1

  /// Number of eigenvalues of M below a (Sturm count); needs a real symmetric tridiagonal M.
  int count_below(double a) const {
    require(real_symmetric_tridiagonal, ErrorCode::InvalidArgument,
            "Sturm count needs a real symmetric tridiagonal matrix");
    return count_below_base(a);
  }

  /// Number of eigenvalues of A below a.
  int count_below_base(double a) const {
    require(base_symmetric, ErrorCode::InvalidArgument, "Sturm count needs a real symmetric tridiagonal A");
    int neg = 0;
    double d = 1.0;
    for (int i = 0; i < N; ++i) {
      d = (diag[i] - a) - (i > 0 ? off[i - 1] * off[i - 1] / d : 0.0);
      if (d == 0.0) d = -1e-300;
      if (d < 0) ++neg;
    }
    return neg;
  }

  /// The m-th smallest eigenvalue (0-based) of A inside [lo, hi] by bisection on the Sturm count.
  double bisect(int m, double lo, double hi) const {
    while (hi - lo > 4 * std::numeric_limits<double>::epsilon() * std::max({1.0, std::abs(lo), std::abs(hi)})) {
      const double mid = 0.5 * (lo + hi);
      if (mid <= lo || mid >= hi) break;
      (count_below_base(mid) > m ? hi : lo) = mid;
    }
    return 0.5 * (lo + hi);
  }
};

struct OracleOptions {
  int dense_max = 300;    // dense eigensolve up to this size; complex Schur is O(N³)
  int block = 6;          // subspace size for shift-invert iteration
  int max_iter = 400;
  double residual_tol = 1e-9;
  unsigned seed = 12345;
};

namespace detail {

inline double gl_integral(const std::function<double(double)>& f, double a, double b, const std::vector<double>& cuts) {
  static const GaussRule rule = gauss_legendre(8);
  if (b <= a) return 0.0;
  std::vector<double> pts{a, b};
  for (double c : cuts)
    if (c > a && c < b) pts.push_back(c);
  std::sort(pts.begin(), pts.end());
  double s = 0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const double lo = pts[i], hh = 0.5 * (pts[i + 1] - pts[i]), mid = lo + hh;
    for (std::size_t k = 0; k < rule.x.size(); ++k) s += hh * rule.w[k] * f(mid + hh * rule.x[k]);
  }
  return s;
}

inline cd gl_integral_c(const std::function<cd(double)>& f, double a, double b, const std::vector<double>& cuts) {
  return {gl_integral([&](double t) { return f(t).real(); }, a, b, cuts),
          gl_integral([&](double t) { return f(t).imag(); }, a, b, cuts)};
}

/// Weights w such that Σ w_j u_j approximates c0·u(x0) + c1·u′(x0) + c2·u″(x0), by the
/// four-point Lagrange interpolant through the nearest nodes; returns (first index, weights).
inline std::pair<int, Eigen::Vector4cd> point_stencil(const std::vector<double>& x, double h, double x0, cd c0, cd c1,
                                                      cd c2) {
  const int n = static_cast<int>(x.size());
  int j = std::clamp(static_cast<int>(std::floor((x0 - x[0]) / h)) - 1, 0, n - 4);
  Eigen::Vector4cd w = Eigen::Vector4cd::Zero();
  for (int a = 0; a < 4; ++a) {
    // ℓ_a(t) = Π_{b≠a}(t − x_b)/(x_a − x_b); value, first and second derivative at x0.
    double den = 1, v = 1, d1 = 0, d2 = 0;
    std::vector<double> r;
    for (int b = 0; b < 4; ++b)
      if (b != a) {
        den *= x[j + a] - x[j + b];
        r.push_back(x0 - x[j + b]);
      }
    v = r[0] * r[1] * r[2];
    d1 = r[1] * r[2] + r[0] * r[2] + r[0] * r[1];
    d2 = 2 * (r[0] + r[1] + r[2]);
    w(a) = (c0 * v + c1 * d1 + c2 * d2) / den;
  }
  return {j, w};
}

}  // namespace detail

/// Assembles the truncated problem. R is rounded to a multiple of h so that x = 0 is a node.
inline TruncatedProblem assemble(const OperatorCoefficients& c, const LocalizedPerturbation& pert, double epsilon,
                                 double R, double h) {
  require(h > 0 && R > 0, ErrorCode::InvalidArgument, "assemble needs R > 0 and h > 0");
  const auto& sup = pert.support();
  require(R > std::max(std::abs(sup.x0), std::abs(sup.x1)), ErrorCode::GridTooCoarse,
          "truncation half-width must exceed the enclosing segment of Q");
  double scale = std::min(1.0, sup.length());
  if (const auto* e = std::get_if<EmbeddedExample>(&pert.variant()))
    scale = std::min(scale, 2 * std::numbers::pi / embedded_params(e->alpha, e->epsilon).nu);
  require(h <= scale / 16 + 1e-15, ErrorCode::GridTooCoarse,
          "grid step " + sci(h) + " resolves the shortest scale " + sci(scale) + " with fewer than 16 points");

  TruncatedProblem tp;
  tp.h = h;
  tp.R = h * std::round(R / h);
  tp.N = static_cast<int>(std::round(2 * tp.R / h)) - 1;
  tp.q_lo = sup.q_lo;
  tp.q_hi = sup.q_hi;
  const int N = tp.N;
  tp.x.resize(N);
  for (int i = 0; i < N; ++i) tp.x[i] = -tp.R + (i + 1) * h;
  const auto& x = tp.x;

  std::vector<double> qcuts = c.breakpoint_images(-tp.R, tp.R);
  std::vector<double> pfeat = pert.features();
  pfeat.push_back(sup.q_lo);
  pfeat.push_back(sup.q_hi);
  std::vector<double> allcuts = qcuts;
  allcuts.insert(allcuts.end(), pfeat.begin(), pfeat.end());

  // (1/h)∫ over the node's cell ∩ Q.
  auto cell_avg_q = [&](int i, const std::function<cd(double)>& f) {
    double a = std::max(x[i] - 0.5 * h, sup.q_lo), b = std::min(x[i] + 0.5 * h, sup.q_hi);
    return b > a ? detail::gl_integral_c(f, a, b, pfeat) / h : cd(0);
  };
  // ∫_Q hat_j·f.
  auto hat_int = [&](int j, const std::function<cd(double)>& f) {
    auto g = [&](double t) { return f(t) * std::max(0.0, 1.0 - std::abs(t - x[j]) / h); };
    double a = std::max(x[j] - h, sup.q_lo), b = std::min(x[j] + h, sup.q_hi);
    std::vector<double> cuts = pfeat;
    cuts.push_back(x[j]);
    return b > a ? detail::gl_integral_c(g, a, b, cuts) : cd(0);
  };
  auto in_q = [&](int i) { return x[i] + 0.5 * h > sup.q_lo && x[i] - 0.5 * h < sup.q_hi; };
  auto q_fraction = [&](int i) {
    double a = std::max(x[i] - 0.5 * h, sup.q_lo), b = std::min(x[i] + 0.5 * h, sup.q_hi);
    return std::max(0.0, b - a) / h;
  };

  std::vector<Eigen::Triplet<cd>> trip;
  trip.reserve(3 * N);
  const double ih2 = 1.0 / (h * h);
  for (int i = 0; i < N; ++i) {
    const double pl = c.p(x[i] - 0.5 * h), pr = c.p(x[i] + 0.5 * h);
    const double qi =
        detail::gl_integral([&](double t) { return c.q(t); }, x[i] - 0.5 * h, x[i] + 0.5 * h, qcuts) / h;
    trip.emplace_back(i, i, (pl + pr) * ih2 + qi);
    if (i > 0) trip.emplace_back(i, i - 1, -pl * ih2);
    if (i + 1 < N) trip.emplace_back(i, i + 1, -pr * ih2);
  }

  bool symmetric = true;
  std::vector<int> qnodes;
  for (int i = 0; i < N; ++i)
    if (in_q(i)) qnodes.push_back(i);

  auto low_rank = [&](const Eigen::VectorXcd& left, const Eigen::RowVectorXcd& right) {
    const int r = static_cast<int>(tp.U.cols());
    tp.U.conservativeResize(N, r + 1);
    tp.V.conservativeResize(r + 1, N);
    tp.U.col(r) = -epsilon * left;
    tp.V.row(r) = right;
  };
  auto functional_row = [&](const Functional& l) {
    Eigen::RowVectorXcd row = Eigen::RowVectorXcd::Zero(N);
    for (const auto& pt : l.points) {
      auto [j, w] = detail::point_stencil(x, h, pt.x, pt.c0, pt.c1, pt.c2);
      for (int a = 0; a < 4; ++a) row(j + a) += w(a);
    }
    if (!l.weight.is_zero())
      for (int j : qnodes) row(j) += hat_int(j, [&](double t) { return l.weight(t); });
    return row;
  };

  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Differential>) {
          for (int i : qnodes) {
            const double frac = q_fraction(i);
            if (!v.b0.is_zero()) {
              cd b0 = cell_avg_q(i, [&](double t) { return v.b0(t); });
              if (b0.imag() != 0.0) symmetric = false;
              trip.emplace_back(i, i, -epsilon * b0);
            }
            if (!v.b1.is_zero() && frac > 0) {
              cd b1 = frac * v.b1(std::clamp(x[i], sup.q_lo, sup.q_hi)) / (2 * h);
              if (i > 0) trip.emplace_back(i, i - 1, epsilon * b1);
              if (i + 1 < N) trip.emplace_back(i, i + 1, -epsilon * b1);
              symmetric = false;
            }
            if (!v.b2.is_zero() && frac > 0) {
              cd b2 = frac * v.b2(std::clamp(x[i], sup.q_lo, sup.q_hi)) * ih2;
              trip.emplace_back(i, i, 2.0 * epsilon * b2);
              if (i > 0) trip.emplace_back(i, i - 1, -epsilon * b2);
              if (i + 1 < N) trip.emplace_back(i, i + 1, -epsilon * b2);
              symmetric = false;
            }
          }
        } else if constexpr (std::is_same_v<T, IntegralKernel>) {
          std::vector<cd> w(qnodes.size());
          for (std::size_t j = 0; j < qnodes.size(); ++j) w[j] = hat_int(qnodes[j], [](double) { return cd(1); });
          for (int i : qnodes) {
            const double frac = q_fraction(i);
            const double xi = std::clamp(x[i], sup.q_lo, sup.q_hi);
            for (std::size_t j = 0; j < qnodes.size(); ++j)
              trip.emplace_back(i, qnodes[j], -epsilon * frac * v.kernel(xi, x[qnodes[j]]) * w[j]);
          }
          symmetric = false;
        } else if constexpr (std::is_same_v<T, RankOneKernel>) {
          Eigen::VectorXcd left = Eigen::VectorXcd::Zero(N);
          Eigen::RowVectorXcd right = Eigen::RowVectorXcd::Zero(N);
          for (int i : qnodes) {
            left(i) = v.beta * std::conj(cell_avg_q(i, [&](double t) { return v.b(t); }));
            right(i) = hat_int(i, [&](double t) { return v.b(t); });
          }
          low_rank(left, right);
        } else if constexpr (std::is_same_v<T, FunctionalRankOne>) {
          Eigen::VectorXcd left = Eigen::VectorXcd::Zero(N);
          for (int i : qnodes) left(i) = cell_avg_q(i, [&](double t) { return v.b(t); });
          low_rank(left, functional_row(v.l));
        } else {
          auto p = embedded_params(v.alpha, v.epsilon);
          Eigen::VectorXcd left = Eigen::VectorXcd::Zero(N);
          for (int i : qnodes) left(i) = 2.0 * cell_avg_q(i, [&](double t) { return cd(p.xi(t)); });
          Functional l{{PointTerm{p.s, 0.0, 1.0 / p.epsilon, 0.0}, PointTerm{0.0, 0.0, -1.0 / p.epsilon, 0.0}}, {}};
          low_rank(left, functional_row(l));
        }
      },
      pert.variant());

  tp.A.resize(N, N);
  tp.A.setFromTriplets(trip.begin(), trip.end());
  tp.A.makeCompressed();
  tp.tridiagonal = true;
  tp.base_symmetric = symmetric;
  for (int k = 0; k < tp.A.outerSize(); ++k)
    for (Eigen::SparseMatrix<cd>::InnerIterator it(tp.A, k); it; ++it) {
      if (std::abs(it.index() - k) > 1) tp.tridiagonal = false;
      if (it.value().imag() != 0.0) tp.base_symmetric = false;
    }
  tp.base_symmetric = tp.base_symmetric && tp.tridiagonal;
  tp.real_symmetric_tridiagonal = tp.base_symmetric && !tp.has_low_rank();
  if (tp.base_symmetric) {
    tp.diag.resize(N);
    tp.off.assign(std::max(N - 1, 0), 0.0);
    for (int i = 0; i < N; ++i) tp.diag[i] = tp.A.coeff(i, i).real();
    for (int i = 0; i + 1 < N; ++i) tp.off[i] = tp.A.coeff(i, i + 1).real();
  }
  return tp;
}

/// Complex rectangle.
struct Window {
  double re_lo, re_hi, im_lo = -1, im_hi = 1;

  bool contains(cd z) const { return z.real() >= re_lo && z.real() <= re_hi && z.imag() >= im_lo && z.imag() <= im_hi; }
  cd centre() const { return {0.5 * (re_lo + re_hi), 0.5 * (im_lo + im_hi)}; }
  double radius() const { return 0.5 * std::hypot(re_hi - re_lo, im_hi - im_lo); }
};

struct OracleEigen {
  cd lambda;
  double residual = 0;       // ‖(M − λ)v‖/(max(1, |λ|)‖v‖)
  double separation = 0;     // distance to the nearest other computed eigenvalue
  double tail_mass = 0;      // fraction of ‖v‖² outside Q
  double boundary_mass = 0;  // fraction of ‖v‖² in the outer tenth of [−R, R]
  Eigen::VectorXcd vector;
};

namespace detail {

inline OracleEigen describe(const TruncatedProblem& tp, cd lambda, const Eigen::VectorXcd& v) {
  OracleEigen e;
  e.lambda = lambda;
  e.vector = v / v.norm();
  e.residual = (tp.apply(e.vector) - lambda * e.vector).norm() / std::max(1.0, std::abs(lambda));
  double tail = 0, bnd = 0;
  for (int i = 0; i < tp.N; ++i) {
    const double m = std::norm(e.vector(i));
    if (tp.x[i] < tp.q_lo || tp.x[i] > tp.q_hi) tail += m;
    if (std::abs(tp.x[i]) > 0.9 * tp.R) bnd += m;
  }
  e.tail_mass = tail;
  e.boundary_mass = bnd;
  return e;
}

/// LAPACK LU with partial pivoting of a tridiagonal A − z.
class TridiagonalLU {
 public:
  TridiagonalLU(const TruncatedProblem& tp, cd z) : n_(tp.N), dl_(std::max(n_ - 1, 0)), d_(n_), du_(dl_.size()),
                                                     du2_(std::max(n_ - 2, 0)), ipiv_(n_) {
    for (int i = 0; i < n_; ++i) d_[i] = tp.A.coeff(i, i) - z;
    for (int i = 0; i + 1 < n_; ++i) {
      dl_[i] = tp.A.coeff(i + 1, i);
      du_[i] = tp.A.coeff(i, i + 1);
    }
    int info = 0;
    zgttrf_(&n_, dl_.data(), d_.data(), du_.data(), du2_.data(), ipiv_.data(), &info);
    require(info == 0, ErrorCode::NotInvertible, "tridiagonal factorization is singular");
  }

  Eigen::MatrixXcd solve(Eigen::MatrixXcd b) const {
    const int nrhs = static_cast<int>(b.cols()), ldb = std::max(n_, 1);
    int info = 0;
    zgttrs_("N", &n_, &nrhs, dl_.data(), d_.data(), du_.data(), du2_.data(), ipiv_.data(), b.data(), &ldb, &info, 1);
    return b;
  }

 private:
  int n_;
  std::vector<cd> dl_, d_, du_, du2_;
  std::vector<int> ipiv_;
};

/// Applies (M − σ)⁻¹ with M = A + UV via the Woodbury identity.
class ShiftInvert {
 public:
  ShiftInvert(const TruncatedProblem& tp, cd sigma) : tp_(tp) {
    if (tp.tridiagonal) {
      tri_.emplace(tp, sigma);
    } else {
      Eigen::SparseMatrix<cd> I(tp.N, tp.N);
      I.setIdentity();
      Eigen::SparseMatrix<cd> S = tp.A - sigma * I;
      lu_.analyzePattern(S);
      lu_.factorize(S);
      require(lu_.info() == Eigen::Success, ErrorCode::NotInvertible, "shift-invert factorization failed");
    }
    if (tp.has_low_rank()) {
      AiU_ = base_solve(tp.U);
      Eigen::MatrixXcd cap = Eigen::MatrixXcd::Identity(tp.U.cols(), tp.U.cols()) + tp.V * AiU_;
      cap_.compute(cap);
    }
  }

  Eigen::MatrixXcd solve(const Eigen::MatrixXcd& b) const {
    Eigen::MatrixXcd y = base_solve(b);
    if (tp_.has_low_rank()) y -= AiU_ * cap_.solve(tp_.V * y);
    return y;
  }

 private:
  Eigen::MatrixXcd base_solve(const Eigen::MatrixXcd& b) const { return tri_ ? tri_->solve(b) : Eigen::MatrixXcd(lu_.solve(b)); }

  const TruncatedProblem& tp_;
  std::optional<TridiagonalLU> tri_;
  Eigen::SparseLU<Eigen::SparseMatrix<cd>> lu_;
  Eigen::MatrixXcd AiU_;
  Eigen::PartialPivLU<Eigen::MatrixXcd> cap_;
};

struct ContourCount {
  int zeros = 0;     // eigenvalues of M inside the window
  int poles = 0;     // eigenvalues of A inside the window
  cd zero_sum = 0;   // sum of the eigenvalues of M inside the window, midpoint-rule accurate
  int evaluations = 0;
};

/// Argument principle for f(z) = det(I + V(A − z)⁻¹U) on the window boundary: zeros of
/// det(M − z) inside = winding of f + eigenvalues of A inside (Sturm count).
inline ContourCount count_in_window(const TruncatedProblem& tp, const Window& w) {
  require(tp.base_symmetric && tp.has_low_rank(), ErrorCode::InvalidArgument,
          "contour count needs a symmetric tridiagonal base with a low-rank term");
  const int r = static_cast<int>(tp.U.cols());
  ContourCount cc;
  auto f = [&](cd z) {
    TridiagonalLU lu(tp, z);
    ++cc.evaluations;
    Eigen::MatrixXcd F = Eigen::MatrixXcd::Identity(r, r) + tp.V * lu.solve(tp.U);
    return F.determinant();
  };
  double total = 0;
  cd moment = 0;
  const double floor = 1e-13 * std::max(1.0, w.radius());
  auto segment = [&](auto&& self, cd z1, cd f1, cd z2, cd f2) -> void {
    const cd ratio = f2 / f1;
    const double d = std::arg(ratio), m = std::log(std::abs(ratio));
    if ((std::abs(d) > std::numbers::pi / 8 || std::abs(m) > 0.5) && std::abs(z2 - z1) > floor) {
      const cd zm = 0.5 * (z1 + z2), fm = f(zm);
      self(self, z1, f1, zm, fm);
      self(self, zm, fm, z2, f2);
      return;
    }
    total += d;
    moment += 0.5 * (z1 + z2) * cd(m, d);
  };
  const cd corner[5] = {{w.re_lo, w.im_lo}, {w.re_hi, w.im_lo}, {w.re_hi, w.im_hi}, {w.re_lo, w.im_hi}, {w.re_lo, w.im_lo}};
  cd z = corner[0], fz = f(z);
  const cd f0 = fz;
  for (int side = 0; side < 4; ++side)
    for (int k = 1; k <= 16; ++k) {
      const cd zn = corner[side] + (corner[side + 1] - corner[side]) * (k / 16.0);
      const cd fn = (side == 3 && k == 16) ? f0 : f(zn);
      segment(segment, z, fz, zn, fn);
      z = zn;
      fz = fn;
    }
  const double winding = total / (2 * std::numbers::pi);
  const int n = static_cast<int>(std::lround(winding));
  require(std::abs(winding - n) < 0.05, ErrorCode::NoConvergence, "contour winding number is not an integer");
  cd pole_sum = 0;
  if (w.im_lo < 0 && w.im_hi > 0) {
    const int below = tp.count_below_base(w.re_lo);
    cc.poles = tp.count_below_base(w.re_hi) - below;
    for (int k = 0; k < cc.poles; ++k) pole_sum += tp.bisect(below + k, w.re_lo, w.re_hi);
  }
  cc.zeros = n + cc.poles;
  cc.zero_sum = moment / cd(0, 2 * std::numbers::pi) + pole_sum;
  return cc;
}

/// Single eigenvalue of M = A + UV as the root of det(I + V(A − z)⁻¹U), by secant steps from
/// `seed`; v = −(A − λ)⁻¹Uc with c spanning the kernel of I + V(A − λ)⁻¹U. The determinant has a
/// rounding floor near the edge, so the iterate with the smallest |det| is kept and the caller
/// judges it by its residual. Empty when the iteration leaves the window.
inline std::optional<OracleEigen> secular_root(const TruncatedProblem& tp, const Window& w, cd seed) {
  const int r = static_cast<int>(tp.U.cols());
  auto F = [&](cd z) {
    TridiagonalLU lu(tp, z);
    return Eigen::MatrixXcd(Eigen::MatrixXcd::Identity(r, r) + tp.V * lu.solve(tp.U));
  };
  cd z0 = seed, z1 = seed + 1e-6 * std::max(1.0, w.radius());
  cd f0 = F(z0).determinant(), f1 = F(z1).determinant();
  cd best = std::abs(f1) < std::abs(f0) ? z1 : z0;
  double best_f = std::min(std::abs(f0), std::abs(f1));
  for (int it = 0, stale = 0; it < 60 && stale < 4 && f1 != f0; ++it) {
    const cd z2 = z1 - f1 * (z1 - z0) / (f1 - f0);
    if (!std::isfinite(z2.real()) || !std::isfinite(z2.imag()) || !w.contains(z2)) return std::nullopt;
    z0 = z1;
    f0 = f1;
    z1 = z2;
    f1 = F(z1).determinant();
    if (std::abs(f1) < best_f) {
      best = z1;
      best_f = std::abs(f1);
      stale = 0;
    } else {
      ++stale;
    }
    if (std::abs(z1 - z0) <= 1e-14 * std::max(1.0, std::abs(z1))) break;
  }
  z1 = best;
  TridiagonalLU lu(tp, z1);
  const Eigen::MatrixXcd AiU = lu.solve(tp.U);
  const Eigen::MatrixXcd cap = Eigen::MatrixXcd::Identity(r, r) + tp.V * AiU;
  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(cap, Eigen::ComputeFullV);
  const Eigen::VectorXcd v = -AiU * svd.matrixV().col(r - 1);
  return describe(tp, z1, v);
}

/// Block shift-invert iteration with Rayleigh–Ritz about sigma. With expected ≥ 0 it stops once
/// that many converged Ritz values lie in the window; otherwise the nearest half of the block
/// must converge and reach beyond the window radius. The block doubles up to three times.
inline std::vector<OracleEigen> ritz_in_window(const TruncatedProblem& tp, const Window& w, cd sigma, int expected,
                                               const OracleOptions& opt) {
  ShiftInvert op(tp, sigma);
  std::mt19937 rng(opt.seed);
  std::normal_distribution<double> g;
  int p = std::max(opt.block, 2 * expected);
  for (int attempt = 0; attempt < 4; ++attempt, p *= 2) {
    p = std::min(p, tp.N);
    const int q = std::max(1, p / 2);
    Eigen::MatrixXcd W(tp.N, p);
    for (int j = 0; j < p; ++j)
      for (int i = 0; i < tp.N; ++i) W(i, j) = cd(g(rng), g(rng));
    Eigen::VectorXcd theta;
    Eigen::MatrixXcd Z;
    std::vector<int> order(p);
    std::vector<bool> conv(p);
    bool done = false;
    for (int it = 0; it < opt.max_iter && !done; ++it) {
      Eigen::HouseholderQR<Eigen::MatrixXcd> qr(op.solve(W));
      W = qr.householderQ() * Eigen::MatrixXcd::Identity(tp.N, p);
      Eigen::MatrixXcd MW = tp.apply(W);
      Eigen::ComplexEigenSolver<Eigen::MatrixXcd> es(W.adjoint() * MW);
      theta = es.eigenvalues();
      Z = W * es.eigenvectors();
      Eigen::MatrixXcd MZ = MW * es.eigenvectors();
      for (int j = 0; j < p; ++j)
        conv[j] = (MZ.col(j) - theta(j) * Z.col(j)).norm() / Z.col(j).norm() <=
                  opt.residual_tol * std::max(1.0, std::abs(theta(j)));
      for (int j = 0; j < p; ++j) order[j] = j;
      std::sort(order.begin(), order.end(),
                [&](int a, int b) { return std::abs(theta(a) - sigma) < std::abs(theta(b) - sigma); });
      if (expected >= 0) {
        int hits = 0;
        for (int j = 0; j < p; ++j)
          if (conv[j] && w.contains(theta(j))) ++hits;
        done = hits == expected;
      } else {
        done = true;
        for (int k = 0; k < p; ++k)
          if (!conv[order[k]] && (k < q || w.contains(theta(order[k])))) done = false;
        if (done && std::abs(theta(order[q - 1]) - sigma) <= w.radius() && p < tp.N) break;  // grow the block
      }
      W = Z;
    }
    if (!done) continue;
    std::vector<OracleEigen> found;
    for (int j = 0; j < p; ++j)
      if (w.contains(theta(j)) && (expected < 0 || conv[j])) {
        OracleEigen e = describe(tp, theta(j), Z.col(j));
        e.separation = INFINITY;
        for (int k = 0; k < p; ++k)
          if (k != j) e.separation = std::min(e.separation, std::abs(theta(k) - theta(j)));
        found.push_back(std::move(e));
      }
    return found;
  }
  fail(ErrorCode::NoConvergence, "shift-invert iteration did not resolve the window");
}

}  // namespace detail

/// Ten times the h²-error estimate of a discrete eigenvalue of size `far`.
inline double band_margin(double h, double far) { return 10 * h * h * std::max(1.0, far * far) / 12; }

/// Eigenvalues of the truncated matrix inside the window. With `scan`, the window must keep a
/// distance of 10·(h²-error estimate) from every band.
inline std::vector<OracleEigen> gap_eigenvalues(const TruncatedProblem& tp, const Window& w, const BandScan* scan = nullptr,
                                                OracleOptions opt = {}) {
  if (scan) {
    const double margin = band_margin(tp.h, std::max(std::abs(w.re_lo), std::abs(w.re_hi)));
    // Bands are the complement of the open lacunas on the real axis.
    bool inside = w.im_lo >= margin || w.im_hi <= -margin;
    for (const auto& l : scan->lacunas)
      if (!l.degenerate && w.re_lo >= l.left + margin && w.re_hi <= l.right - margin) inside = true;
    require(inside, ErrorCode::WindowTouchesBand, "eigenvalue window touches a spectral band");
  }

  std::vector<OracleEigen> found;
  if (tp.real_symmetric_tridiagonal && w.im_lo <= 0 && w.im_hi >= 0) {
    // Exact count, bisection, then inverse iteration for the vector.
    const int below = tp.count_below(w.re_lo), n = tp.count_below(w.re_hi) - below;
    const double spread = std::max(1.0, w.re_hi - w.re_lo);
    for (int k = 0; k < n; ++k) {
      const int m = below + k;
      const double lam = tp.bisect(m, w.re_lo, w.re_hi);
      const double shift = lam + 1e3 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(lam));
      const detail::TridiagonalLU lu(tp, shift);
      Eigen::VectorXcd v = Eigen::VectorXcd::Ones(tp.N);
      for (int it = 0; it < 3; ++it) {
        v = lu.solve(v);
        v /= v.norm();
      }
      OracleEigen e = detail::describe(tp, lam, v);
      const double lo_nb = m > 0 ? tp.bisect(m - 1, w.re_lo - spread, lam) : -INFINITY;
      const double hi_nb = m + 1 < tp.N ? tp.bisect(m + 1, lam, w.re_hi + spread) : INFINITY;
      e.separation = std::min(lam - lo_nb, hi_nb - lam);
      found.push_back(std::move(e));
    }
  } else if (tp.N <= opt.dense_max) {
    // Eigenvalues of the dense matrix, vectors by inverse iteration.
    const Eigen::MatrixXcd M = tp.dense();
    Eigen::ComplexEigenSolver<Eigen::MatrixXcd> es(M, false);
    const Eigen::VectorXcd& all = es.eigenvalues();
    for (int i = 0; i < tp.N; ++i) {
      const cd lam = all(i);
      if (!w.contains(lam)) continue;
      const cd shift = lam + 1e3 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(lam));
      Eigen::PartialPivLU<Eigen::MatrixXcd> lu(M - shift * Eigen::MatrixXcd::Identity(tp.N, tp.N));
      Eigen::VectorXcd v = Eigen::VectorXcd::Ones(tp.N);
      for (int it = 0; it < 3; ++it) {
        v = lu.solve(v);
        v /= v.norm();
      }
      OracleEigen e = detail::describe(tp, lam, v);
      e.separation = INFINITY;
      for (int k = 0; k < tp.N; ++k)
        if (k != i) e.separation = std::min(e.separation, std::abs(all(k) - lam));
      found.push_back(std::move(e));
    }
  } else if (tp.base_symmetric && tp.has_low_rank()) {
    const auto cc = detail::count_in_window(tp, w);
    std::optional<OracleEigen> root;
    if (cc.zeros == 1 && (root = detail::secular_root(tp, w, cc.zero_sum)) && root->residual <= opt.residual_tol) {
      root->separation = INFINITY;  // the only eigenvalue of M in the window
      found.push_back(std::move(*root));
    } else if (cc.zeros > 0) {
      found = detail::ritz_in_window(tp, w, cc.zeros == 1 ? cc.zero_sum : w.centre(), cc.zeros, opt);
    }
  } else {
    found = detail::ritz_in_window(tp, w, w.centre(), -1, opt);
  }
  std::sort(found.begin(), found.end(), [](const OracleEigen& a, const OracleEigen& b) {
    return a.lambda.real() < b.lambda.real() || (a.lambda.real() == b.lambda.real() && a.lambda.imag() < b.lambda.imag());
  });
  return found;
}

struct StudyRow {
  double R, h;
  cd lambda;
  double residual;
  double tail_mass;
  int count;  // eigenvalues found in the window
};

struct ConvergenceStudy {
  std::vector<StudyRow> rows;
  std::vector<cd> extrapolated;  // per R, Richardson over the three h
  std::vector<double> order;     // observed h-order per R
  cd value;                      // extrapolated value at the largest R
  double error_bar = 0;          // Richardson spread, change between the two largest R, rounding floor
  double rounding = 0;           // (85/45)·ε_mach·‖M‖∞ on the finest grid
  int max_count = 0;
};

/// Eigenvalue nearest `target` in the window over R ∈ {R₀, 1.5R₀, 2R₀} and h ∈ {h₀, h₀/2, h₀/4}.
inline ConvergenceStudy convergence_study(const OperatorCoefficients& c, const LocalizedPerturbation& pert,
                                          double epsilon, const Window& w, double R0, double h0,
                                          const BandScan* scan = nullptr, OracleOptions opt = {},
                                          std::vector<double> r_factors = {1.0, 1.5, 2.0}) {
  ConvergenceStudy st;
  const cd target = w.centre();
  for (double rf : r_factors) {
    std::vector<cd> lam;
    for (double hf : {1.0, 0.5, 0.25}) {
      TruncatedProblem tp = assemble(c, pert, epsilon, rf * R0, h0 * hf);
      auto ev = gap_eigenvalues(tp, w, scan, opt);
      require(!ev.empty(), ErrorCode::NoConvergence, "no oracle eigenvalue in the window");
      const OracleEigen* best = &ev.front();
      for (const auto& e : ev)
        if (std::abs(e.lambda - target) < std::abs(best->lambda - target)) best = &e;
      st.rows.push_back({tp.R, tp.h, best->lambda, best->residual, best->tail_mass, static_cast<int>(ev.size())});
      st.max_count = std::max(st.max_count, static_cast<int>(ev.size()));
      lam.push_back(best->lambda);
      // Stored entries carry relative rounding, so no solver resolves λ below ε·‖M‖.
      Eigen::VectorXd rows = tp.A.cwiseAbs() * Eigen::VectorXd::Ones(tp.N);
      double norm = rows.maxCoeff();
      if (tp.has_low_rank()) norm += tp.U.norm() * tp.V.norm();
      st.rounding = std::max(st.rounding, 85.0 / 45.0 * std::numeric_limits<double>::epsilon() * norm);
    }
    const cd r1 = (4.0 * lam[1] - lam[0]) / 3.0, r2 = (4.0 * lam[2] - lam[1]) / 3.0;
    st.extrapolated.push_back((16.0 * r2 - r1) / 15.0);
    st.order.push_back(std::log2(std::abs(lam[0] - lam[1]) / std::abs(lam[1] - lam[2])));
  }
  const std::size_t n = st.extrapolated.size();
  st.value = st.extrapolated.back();
  const auto& last = st.rows.back();
  const cd r2 = (4.0 * last.lambda - st.rows[st.rows.size() - 2].lambda) / 3.0;
  st.error_bar = std::abs(st.value - r2);
  if (n >= 2) st.error_bar += std::abs(st.extrapolated[n - 1] - st.extrapolated[n - 2]);
  st.error_bar += st.rounding;
  return st;
}

/// R, h, Re λ, Im λ, residual.
inline void write_study_csv(std::ostream& os, const ConvergenceStudy& st) {
  CsvWriter csv(os, {"R", "h", "re_lambda", "im_lambda", "residual"});
  for (const auto& r : st.rows) {
    csv.cell(r.R).cell(r.h).cell(r.lambda.real()).cell(r.lambda.imag()).cell(r.residual);
    csv.end_row();
  }
}

}  // namespace lacuna
