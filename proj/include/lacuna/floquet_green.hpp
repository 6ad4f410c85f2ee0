#pragma once

#include <cmath>
#include <complex>
#include <ostream>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "lacuna/bands.hpp"
#include "lacuna/coefficients.hpp"
#include "lacuna/csv.hpp"
#include "lacuna/error.hpp"
#include "lacuna/ode.hpp"
#include "lacuna/quadrature.hpp"

namespace lacuna {

/// Value and first derivative at arbitrary points.
struct WindowSamples {
  std::vector<double> x;
  Eigen::VectorXcd value, d1;
};

/// Two solutions y₁, y₂ and their derivatives sampled at a set of points.
struct Basis {
  Eigen::VectorXcd y1, dy1, y2, dy2;
};

inline Basis basis_from(const FundamentalPair& fp) {
  const int n = fp.size();
  Basis b{Eigen::VectorXcd(n), Eigen::VectorXcd(n), Eigen::VectorXcd(n), Eigen::VectorXcd(n)};
  for (int i = 0; i < n; ++i) {
    b.y1(i) = fp.theta1[i];
    b.dy1(i) = fp.dtheta1(i);
    b.y2(i) = fp.theta2[i];
    b.dy2(i) = fp.dtheta2(i);
  }
  return b;
}

namespace detail {

struct NodeCoefficients {
  Eigen::VectorXd q, p, dp;
};

inline NodeCoefficients node_coefficients(const OperatorCoefficients& c, const std::vector<double>& xs) {
  const int n = static_cast<int>(xs.size());
  NodeCoefficients nc{Eigen::VectorXd(n), Eigen::VectorXd(n), Eigen::VectorXd(n)};
  for (int i = 0; i < n; ++i) {
    nc.q(i) = c.q(xs[i]);
    nc.p(i) = c.p(xs[i]);
    nc.dp(i) = c.p.derivative(xs[i]);
  }
  return nc;
}

/// u(x) = Σᵢⱼ yᵢ(x)·[Lᵢⱼ ∫_{t<x} yⱼ f + Uᵢⱼ ∫_{t>x} yⱼ f], the common shape of every kernel
/// built from two solutions of the homogeneous equation.
class SeparableKernel {
 public:
  SeparableKernel() = default;
  SeparableKernel(const OperatorCoefficients& c, const QuadGrid& grid, cd lambda, Basis nodes, Eigen::Matrix2cd lower,
                  Eigen::Matrix2cd upper)
      : grid_(grid),
        lambda_(lambda),
        nc_(node_coefficients(c, grid.nodes())),
        b_(std::move(nodes)),
        lower_(lower),
        upper_(upper) {}

  const QuadGrid& grid() const { return grid_; }
  cd lambda() const { return lambda_; }
  const Basis& basis() const { return b_; }

  Channels apply(const Eigen::MatrixXcd& F) const {
    const int n = grid_.size();
    require(F.rows() == n, ErrorCode::GridMismatch, "kernel apply: input does not match the grid");
    const int m = static_cast<int>(F.cols());
    Eigen::MatrixXcd G(n, 2 * m);
    G.leftCols(m) = b_.y1.asDiagonal() * F;
    G.rightCols(m) = b_.y2.asDiagonal() * F;
    Eigen::MatrixXcd C = grid_.cumulative(G);
    Eigen::RowVectorXcd T = grid_.weight_vector().cast<cd>().transpose() * G;
    Eigen::MatrixXcd C1 = C.leftCols(m), C2 = C.rightCols(m);
    Eigen::MatrixXcd U1 = (-C1).rowwise() + T.leftCols(m);
    Eigen::MatrixXcd U2 = (-C2).rowwise() + T.rightCols(m);
    // Coefficient of y₁(x) and y₂(x).
    Eigen::MatrixXcd W1 = lower_(0, 0) * C1 + lower_(0, 1) * C2 + upper_(0, 0) * U1 + upper_(0, 1) * U2;
    Eigen::MatrixXcd W2 = lower_(1, 0) * C1 + lower_(1, 1) * C2 + upper_(1, 0) * U1 + upper_(1, 1) * U2;
    Channels out;
    out.value = b_.y1.asDiagonal() * W1 + b_.y2.asDiagonal() * W2;
    out.d1 = b_.dy1.asDiagonal() * W1 + b_.dy2.asDiagonal() * W2;
    out.d2.resize(n, m);
    for (int i = 0; i < n; ++i)
      out.d2.row(i) =
          ((nc_.q(i) - lambda_) * out.value.row(i) - F.row(i) - nc_.dp(i) * out.d1.row(i)) / nc_.p(i);
    return out;
  }

  /// Values at arbitrary points; `at` carries the basis sampled there.
  WindowSamples apply_window(const Eigen::VectorXcd& f, std::span<const double> xs, const Basis& at) const {
    require(f.size() == grid_.size(), ErrorCode::GridMismatch, "kernel window: input does not match the grid");
    Eigen::VectorXcd g1 = b_.y1.cwiseProduct(f), g2 = b_.y2.cwiseProduct(f);
    const cd t1 = grid_.integrate(g1), t2 = grid_.integrate(g2);
    WindowSamples out;
    out.x.assign(xs.begin(), xs.end());
    const int n = static_cast<int>(xs.size());
    out.value.resize(n);
    out.d1.resize(n);
    for (int i = 0; i < n; ++i) {
      cd c1 = grid_.integrate_to(g1, xs[i]), c2 = grid_.integrate_to(g2, xs[i]);
      cd w1 = lower_(0, 0) * c1 + lower_(0, 1) * c2 + upper_(0, 0) * (t1 - c1) + upper_(0, 1) * (t2 - c2);
      cd w2 = lower_(1, 0) * c1 + lower_(1, 1) * c2 + upper_(1, 0) * (t1 - c1) + upper_(1, 1) * (t2 - c2);
      out.value(i) = at.y1(i) * w1 + at.y2(i) * w2;
      out.d1(i) = at.dy1(i) * w1 + at.dy2(i) * w2;
    }
    return out;
  }

  /// Kernel value G(xᵢ, xⱼ) between two grid nodes.
  cd kernel(int i, int j) const {
    const Eigen::Matrix2cd& M = j < i ? lower_ : upper_;
    Eigen::Vector2cd yx(b_.y1(i), b_.y2(i)), yt(b_.y1(j), b_.y2(j));
    return yx.transpose() * M * yt;
  }

  /// Dense kernel matrix on the grid nodes (diagonal taken from the lower branch).
  Eigen::MatrixXcd kernel_matrix() const {
    const int n = grid_.size();
    Eigen::MatrixXcd K(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) K(i, j) = kernel(i, j);
    return K;
  }

  void write_csv(std::ostream& os) const {
    CsvWriter w(os, {"x", "t", "re", "im"});
    for (int i = 0; i < grid_.size(); ++i)
      for (int j = 0; j < grid_.size(); ++j) {
        cd v = kernel(i, j);
        w.cell(grid_.nodes()[i]).cell(grid_.nodes()[j]).cell(v.real()).cell(v.imag());
        w.end_row();
      }
  }

 private:
  QuadGrid grid_;
  cd lambda_;
  NodeCoefficients nc_;
  Basis b_;
  Eigen::Matrix2cd lower_, upper_;
};

}  // namespace detail

/// Floquet solutions φ₁ (multiplier ρ) and φ₂ (multiplier ρ⁻¹) at λ = μ ∓ k², normalized like
/// the edge eigenfunction so that both reduce to φ at k = 0.
struct FloquetPair {
  BandEdge edge;
  cd k, lambda, rho, kappa;
  cd rho_diff;  // ρ − ρ⁻¹
  cd a1, b1, a2, b2;  // φ₁ = a1·θ₁ + b1·θ₂, φ₂ = a2·θ₁ + b2·θ₂
  std::vector<double> x;
  std::vector<double> p;
  Basis values;  // y1 = φ₁, y2 = φ₂

  /// max |p·W[φ₁,φ₂] − τ(ρ⁻¹ − ρ)|.
  double wronskian_residual() const {
    const cd target = -edge.tau() * rho_diff;
    double r = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      int j = static_cast<int>(i);
      cd w = p[i] * (values.y1(j) * values.dy2(j) - values.dy1(j) * values.y2(j));
      r = std::max(r, std::abs(w - target));
    }
    return r;
  }

  /// (Anti)periodic factors e^{∓κx}φ₁,₂ with κ the edge quasi-momentum.
  Eigen::VectorXcd periodic_part1() const {
    Eigen::VectorXcd out(values.y1.size());
    for (int i = 0; i < out.size(); ++i) out(i) = std::exp(-kappa * x[i]) * values.y1(i);
    return out;
  }
  Eigen::VectorXcd periodic_part2() const {
    Eigen::VectorXcd out(values.y2.size());
    for (int i = 0; i < out.size(); ++i) out(i) = std::exp(kappa * x[i]) * values.y2(i);
    return out;
  }
};

namespace detail {

/// Coefficients of a Floquet solution with multiplier r at λ, in the form selected at the edge.
inline std::pair<cd, cd> floquet_coefficients(const BandEdge& e, const MonodromyData& m, cd r) {
  const double tau = e.tau();
  if (std::abs(e.theta2) >= std::abs(e.theta1p)) {
    cd s = std::sqrt(tau * m.theta2);
    return {s, s * (r - m.theta1) / m.theta2};
  }
  cd s = std::sqrt(-tau * m.theta1p);
  return {s * (r - m.theta2p) / m.theta1p, s};
}

}  // namespace detail

inline FloquetPair floquet_solutions(const OperatorCoefficients& c, const BandEdge& e, cd k, std::span<const double> xs,
                                     double tol = 1e-12) {
  require(!e.degenerate, ErrorCode::DegenerateEdge, "edge " + e.label() + " belongs to a degenerate lacuna");
  FloquetPair fp;
  fp.edge = e;
  fp.k = k;
  fp.lambda = e.mu - double(e.sign()) * k * k;
  Multiplier mu = edge_multiplier(c, e, k, tol);
  fp.rho = mu.rho;
  fp.kappa = mu.kappa;
  fp.rho_diff = mu.diff;
  MonodromyData m = k == cd(0) ? MonodromyData{fp.lambda, e.theta1, e.theta2, e.theta1p, e.theta2p,
                                               cd(e.theta1 + e.theta2p)}
                               : monodromy(c, fp.lambda, tol);
  std::tie(fp.a1, fp.b1) = detail::floquet_coefficients(e, m, fp.rho);
  std::tie(fp.a2, fp.b2) = detail::floquet_coefficients(e, m, 1.0 / fp.rho);
  FundamentalPair th = integrate_fundamental(c, fp.lambda, xs, tol);
  Basis t = basis_from(th);
  fp.x = th.grid;
  fp.p = th.p;
  fp.values.y1 = fp.a1 * t.y1 + fp.b1 * t.y2;
  fp.values.dy1 = fp.a1 * t.dy1 + fp.b1 * t.dy2;
  fp.values.y2 = fp.a2 * t.y1 + fp.b2 * t.y2;
  fp.values.dy2 = fp.a2 * t.dy1 + fp.b2 * t.dy2;
  return fp;
}

/// 𝒢₀ at a band edge: kernel ½·sgn(t−x)·(θ₁(t)θ₂(x) − θ₁(x)θ₂(t)) at λ = μ. It inverts
/// −(pu′)′ + (q−μ)u = f on the grid's interval.
class EdgeGreen0 {
 public:
  EdgeGreen0(const OperatorCoefficients& c, const BandEdge& e, const QuadGrid& grid, double tol = 1e-12)
      : c_(c), edge_(e), tol_(tol) {
    Eigen::Matrix2cd lower, upper;
    lower << 0.0, 0.5, -0.5, 0.0;
    upper = -lower;
    k_ = detail::SeparableKernel(c, grid, e.mu, basis_from(integrate_fundamental(c, e.mu, grid.nodes(), tol)), lower,
                                 upper);
  }

  const QuadGrid& grid() const { return k_.grid(); }
  const BandEdge& edge() const { return edge_; }
  Channels apply(const Eigen::MatrixXcd& F) const { return k_.apply(F); }

  WindowSamples apply_window(const Eigen::VectorXcd& f, std::span<const double> xs) const {
    return k_.apply_window(f, xs, basis_from(integrate_fundamental(c_, edge_.mu, xs, tol_)));
  }

  cd kernel(int i, int j) const { return k_.kernel(i, j); }
  Eigen::MatrixXcd kernel_matrix() const { return k_.kernel_matrix(); }
  void write_kernel_csv(std::ostream& os) const { k_.write_csv(os); }

 private:
  OperatorCoefficients c_;
  BandEdge edge_;
  double tol_;
  detail::SeparableKernel k_;
};

/// 𝒢(k): kernel τ/(ρ−ρ⁻¹)·φ₁(min(x,t))·φ₂(max(x,t)) at λ = μ ∓ k², with the splitting
/// 𝒢(k) = k⁻¹𝒢₋₁ + regular part, 𝒢₋₁f = ±(f,φ)φ/(2√|Ḋ|).
class EdgeGreenK {
 public:
  EdgeGreenK(const OperatorCoefficients& c, const BandEdge& e, cd k, const QuadGrid& grid, double tol = 1e-12)
      : c_(c), edge_(e), k_(k), tol_(tol) {
    require(k != cd(0), ErrorCode::KZero, "EdgeGreenK needs k != 0; use EdgeGreen0 at the edge");
    pair_ = floquet_solutions(c, e, k, grid.nodes(), tol);
    pref_ = e.tau() / pair_.rho_diff;
    Eigen::Matrix2cd lower = Eigen::Matrix2cd::Zero(), upper = Eigen::Matrix2cd::Zero();
    lower(1, 0) = pref_;  // x > t: φ₂(x)φ₁(t)
    upper(0, 1) = pref_;  // x < t: φ₁(x)φ₂(t)
    kern_ = detail::SeparableKernel(c, grid, pair_.lambda, pair_.values, lower, upper);

    EdgeEigenfunction ef = edge_eigenfunction(e);
    auto [v, d] = ef.sample(c, grid.nodes(), tol);
    auto nc = detail::node_coefficients(c, grid.nodes());
    phi_ = v;
    dphi_ = d;
    d2phi_ = ((nc.q.array() - e.mu) * v.array() - nc.dp.array() * d.array()) / nc.p.array();
    scale_ = e.sign() / (2.0 * std::sqrt(std::abs(e.ddot)));
  }

  cd k() const { return k_; }
  cd lambda() const { return pair_.lambda; }
  cd rho() const { return pair_.rho; }
  cd kappa() const { return pair_.kappa; }
  const FloquetPair& floquet() const { return pair_; }
  const QuadGrid& grid() const { return kern_.grid(); }

  Channels apply(const Eigen::MatrixXcd& F) const { return kern_.apply(F); }

  Channels singular(const Eigen::MatrixXcd& F) const {
    Eigen::RowVectorXcd coef =
        scale_ * (grid().weight_vector().cwiseProduct(phi_)).cast<cd>().transpose() * F;
    Channels out;
    out.value = phi_.cast<cd>() * coef;
    out.d1 = dphi_.cast<cd>() * coef;
    out.d2 = d2phi_.cast<cd>() * coef;
    return out;
  }

  Channels regular(const Eigen::MatrixXcd& F) const {
    Channels full = apply(F), s = singular(F);
    const cd ik = 1.0 / k_;
    full.value -= ik * s.value;
    full.d1 -= ik * s.d1;
    full.d2 -= ik * s.d2;
    return full;
  }

  WindowSamples apply_window(const Eigen::VectorXcd& f, std::span<const double> xs) const {
    FloquetPair at = floquet_solutions(c_, edge_, k_, xs, tol_);
    return kern_.apply_window(f, xs, at.values);
  }

 private:
  OperatorCoefficients c_;
  BandEdge edge_;
  cd k_;
  double tol_;
  FloquetPair pair_;
  cd pref_;
  detail::SeparableKernel kern_;
  Eigen::VectorXd phi_, dphi_, d2phi_;
  double scale_ = 0;
};

/// (H₀ − λ)⁻¹ for λ off the spectrum, kernel K(min(x,t), max(x,t)) with
/// K(a,b) = [θ₂(1)θ₁(a)θ₁(b) − (ρ−θ₂′(1))θ₁(a)θ₂(b) + (ρ−θ₁(1))θ₂(a)θ₁(b) − θ₁′(1)θ₂(a)θ₂(b)]/(ρ−ρ⁻¹).
class Resolvent {
 public:
  /// With `scan`, evaluation within 1e−6 of a closed lacuna is refused.
  Resolvent(const OperatorCoefficients& c, cd lambda, const QuadGrid& grid, double tol = 1e-12,
            const BandScan* scan = nullptr)
      : c_(c), lambda_(lambda), tol_(tol) {
    if (scan)
      for (const auto& e : scan->edges)
        require(!(e.degenerate && std::abs(lambda - e.mu) < 1e-6), ErrorCode::OnSpectrum,
                "resolvent requested at a closed lacuna " + e.label());
    MonodromyData m = monodromy(c, lambda, tol);
    rho_ = multiplier_from_D(m.D).rho;
    require(std::abs(rho_) - 1.0 > 1e-8, ErrorCode::OnSpectrum, "resolvent requested on the spectrum (|rho| = 1)");
    const cd den = rho_ - 1.0 / rho_;
    Eigen::Matrix2cd K;
    K << m.theta2, -(rho_ - m.theta2p), rho_ - m.theta1, -m.theta1p;
    K /= den;
    // t < x: K(t, x) = Σ Kᵢⱼ θᵢ(t)θⱼ(x); t > x: K(x, t).
    kern_ = detail::SeparableKernel(c, grid, lambda, basis_from(integrate_fundamental(c, lambda, grid.nodes(), tol)),
                                    K.transpose(), K);
  }

  cd lambda() const { return lambda_; }
  cd rho() const { return rho_; }
  const QuadGrid& grid() const { return kern_.grid(); }
  Channels apply(const Eigen::MatrixXcd& F) const { return kern_.apply(F); }
  cd kernel(int i, int j) const { return kern_.kernel(i, j); }

  WindowSamples apply_window(const Eigen::VectorXcd& f, std::span<const double> xs) const {
    return kern_.apply_window(f, xs, basis_from(integrate_fundamental(c_, lambda_, xs, tol_)));
  }

 private:
  OperatorCoefficients c_;
  cd lambda_;
  double tol_;
  cd rho_;
  detail::SeparableKernel kern_;
};

inline WindowSamples resolvent_apply(const OperatorCoefficients& c, cd lambda, const QuadGrid& grid,
                                     const Eigen::VectorXcd& f, std::span<const double> xs, double tol = 1e-12) {
  return Resolvent(c, lambda, grid, tol).apply_window(f, xs);
}

}  // namespace lacuna
