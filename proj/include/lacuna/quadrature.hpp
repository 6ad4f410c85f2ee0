#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/special_functions/legendre.hpp>

#include "lacuna/error.hpp"

namespace lacuna {

using cd = std::complex<double>;

/// Value, first and second derivative channels of functions sampled on grid nodes;
/// one column per function.
struct Channels {
  Eigen::MatrixXcd value, d1, d2;
};

/// Gauss–Legendre rule on [-1, 1], nodes ascending.
struct GaussRule {
  std::vector<double> x;
  std::vector<double> w;
};

inline GaussRule gauss_legendre(int m) {
  require(m >= 2 && m <= 40, ErrorCode::InvalidArgument, "gauss_legendre: order out of range");
  auto pos = boost::math::legendre_p_zeros<double>(m);
  GaussRule r;
  for (auto it = pos.rbegin(); it != pos.rend(); ++it)
    if (*it > 0.0) r.x.push_back(-*it);
  for (double z : pos) r.x.push_back(z);
  r.w.reserve(r.x.size());
  for (double z : r.x) {
    double dp = boost::math::legendre_p_prime(m, z);
    r.w.push_back(2.0 / ((1.0 - z * z) * dp * dp));
  }
  return r;
}

/// Composite Gauss–Legendre grid on [lo, hi] with cells split at given cut points.
/// Holds the per-cell spectral integration and interpolation data used by every
/// kernel operator in the library.
class QuadGrid {
 public:
  QuadGrid() = default;

  QuadGrid(std::vector<double> cuts, int m) : cuts_(std::move(cuts)), m_(m) {
    require(cuts_.size() >= 2, ErrorCode::InvalidArgument, "QuadGrid: need at least one cell");
    for (std::size_t i = 1; i < cuts_.size(); ++i)
      require(cuts_[i] > cuts_[i - 1], ErrorCode::InvalidArgument, "QuadGrid: cuts must increase");
    rule_ = gauss_legendre(m_);
    bary_.resize(m_);
    for (int j = 0; j < m_; ++j) {
      double prod = 1.0;
      for (int k = 0; k < m_; ++k)
        if (k != j) prod *= rule_.x[j] - rule_.x[k];
      bary_[j] = 1.0 / prod;
    }
    sref_ = Eigen::MatrixXd::Zero(m_, m_);
    for (int i = 0; i < m_; ++i) sref_.row(i) = ref_partial(rule_.x[i]).transpose();
    const int nc = cells();
    nodes_.reserve(nc * m_);
    weights_.reserve(nc * m_);
    for (int c = 0; c < nc; ++c) {
      double a = cuts_[c], b = cuts_[c + 1], hh = 0.5 * (b - a), mid = 0.5 * (a + b);
      for (int k = 0; k < m_; ++k) {
        nodes_.push_back(mid + hh * rule_.x[k]);
        weights_.push_back(hh * rule_.w[k]);
      }
    }
  }

  /// Cells no longer than max_cell, split at every feature point inside (lo, hi).
  static QuadGrid build(double lo, double hi, double max_cell, const std::vector<double>& features,
                        int m = 12) {
    require(hi > lo, ErrorCode::InvalidArgument, "QuadGrid::build: empty interval");
    require(max_cell > 0, ErrorCode::InvalidArgument, "QuadGrid::build: max_cell must be positive");
    std::vector<double> pts{lo, hi};
    const double tiny = 1e-12 * std::max(1.0, hi - lo);
    for (double f : features)
      if (f > lo + tiny && f < hi - tiny) pts.push_back(f);
    std::sort(pts.begin(), pts.end());
    std::vector<double> cuts{pts.front()};
    for (std::size_t i = 1; i < pts.size(); ++i) {
      if (pts[i] - cuts.back() <= tiny) continue;
      double a = cuts.back(), b = pts[i];
      int n = std::max(1, static_cast<int>(std::ceil((b - a) / max_cell - 1e-9)));
      for (int j = 1; j < n; ++j) cuts.push_back(a + (b - a) * j / n);
      cuts.push_back(b);
    }
    return QuadGrid(std::move(cuts), m);
  }

  double lo() const { return cuts_.front(); }
  double hi() const { return cuts_.back(); }
  int m() const { return m_; }
  int cells() const { return static_cast<int>(cuts_.size()) - 1; }
  int size() const { return static_cast<int>(nodes_.size()); }
  const std::vector<double>& cuts() const { return cuts_; }
  const std::vector<double>& nodes() const { return nodes_; }
  const std::vector<double>& weights() const { return weights_; }

  Eigen::VectorXd weight_vector() const {
    return Eigen::Map<const Eigen::VectorXd>(weights_.data(), size());
  }

  /// Cell containing x; a cut point belongs to the cell on its right, hi to the last cell.
  int cell_of(double x) const {
    if (x <= cuts_.front()) return 0;
    if (x >= cuts_.back()) return cells() - 1;
    auto it = std::upper_bound(cuts_.begin(), cuts_.end(), x);
    return static_cast<int>(it - cuts_.begin()) - 1;
  }

  template <class Derived>
  cd integrate(const Eigen::MatrixBase<Derived>& g) const {
    cd s = 0;
    for (int i = 0; i < size(); ++i) s += weights_[i] * cd(g(i));
    return s;
  }

  /// (f, g) = ∫ f conj(g).
  cd inner(const Eigen::VectorXcd& f, const Eigen::VectorXcd& g) const {
    cd s = 0;
    for (int i = 0; i < size(); ++i) s += weights_[i] * f(i) * std::conj(g(i));
    return s;
  }

  double norm(const Eigen::VectorXcd& f) const { return std::sqrt(std::abs(inner(f, f))); }

  /// Column-wise ∫_lo^{x_i} g at every node.
  Eigen::MatrixXcd cumulative(const Eigen::MatrixXcd& g) const {
    Eigen::MatrixXcd out(g.rows(), g.cols());
    Eigen::RowVectorXcd offset = Eigen::RowVectorXcd::Zero(g.cols());
    for (int c = 0; c < cells(); ++c) {
      double hh = 0.5 * (cuts_[c + 1] - cuts_[c]);
      auto blk = g.middleRows(c * m_, m_);
      out.middleRows(c * m_, m_) = (hh * sref_.cast<cd>() * blk).rowwise() + offset;
      for (int k = 0; k < m_; ++k) offset += hh * rule_.w[k] * blk.row(k);
    }
    return out;
  }

  /// Weights w (length m) such that ∫_{a_c}^{x} g ≈ Σ_k w_k g(node c·m+k).
  Eigen::VectorXd partial_weights_in_cell(int c, double x) const {
    double a = cuts_[c], b = cuts_[c + 1];
    double s = -1.0 + 2.0 * (x - a) / (b - a);
    return 0.5 * (b - a) * ref_partial(s);
  }

  /// ∫_lo^x g with x clamped to [lo, hi].
  cd integrate_to(const Eigen::VectorXcd& g, double x) const {
    x = std::clamp(x, lo(), hi());
    int c = cell_of(x);
    cd s = 0;
    for (int i = 0; i < c * m_; ++i) s += weights_[i] * g(i);
    Eigen::VectorXd pw = partial_weights_in_cell(c, x);
    for (int k = 0; k < m_; ++k) s += pw(k) * g(c * m_ + k);
    return s;
  }

  /// Lagrange basis values (length m) of cell c at x.
  Eigen::VectorXd basis_in_cell(int c, double x) const {
    double a = cuts_[c], b = cuts_[c + 1];
    return ref_basis(-1.0 + 2.0 * (x - a) / (b - a));
  }

  /// Full-length interpolation row: value at x of the piecewise interpolant.
  Eigen::VectorXd interpolation_row(double x) const {
    Eigen::VectorXd row = Eigen::VectorXd::Zero(size());
    int c = cell_of(x);
    row.segment(c * m_, m_) = basis_in_cell(c, x);
    return row;
  }

  cd interpolate(const Eigen::VectorXcd& g, double x) const {
    int c = cell_of(x);
    Eigen::VectorXd b = basis_in_cell(c, x);
    cd s = 0;
    for (int k = 0; k < m_; ++k) s += b(k) * g(c * m_ + k);
    return s;
  }

  /// Spectral derivative of the piecewise interpolant at the nodes.
  Eigen::VectorXcd differentiate(const Eigen::VectorXcd& g) const {
    Eigen::MatrixXd dref(m_, m_);
    for (int i = 0; i < m_; ++i) {
      double diag = 0;
      for (int j = 0; j < m_; ++j) {
        if (i == j) continue;
        dref(i, j) = (bary_[j] / bary_[i]) / (rule_.x[i] - rule_.x[j]);
        diag -= dref(i, j);
      }
      dref(i, i) = diag;
    }
    Eigen::VectorXcd out(size());
    for (int c = 0; c < cells(); ++c) {
      double scale = 2.0 / (cuts_[c + 1] - cuts_[c]);
      out.segment(c * m_, m_) = scale * dref.cast<cd>() * g.segment(c * m_, m_);
    }
    return out;
  }

 private:
  Eigen::VectorXd ref_basis(double s) const {
    Eigen::VectorXd l(m_);
    for (int j = 0; j < m_; ++j)
      if (s == rule_.x[j]) {
        l.setZero();
        l(j) = 1.0;
        return l;
      }
    double den = 0;
    for (int j = 0; j < m_; ++j) {
      l(j) = bary_[j] / (s - rule_.x[j]);
      den += l(j);
    }
    return l / den;
  }

  /// ∫_{-1}^{s} ℓ_j for each reference basis function.
  Eigen::VectorXd ref_partial(double s) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(m_);
    double hh = 0.5 * (s + 1.0);
    if (hh == 0.0) return out;
    for (int k = 0; k < m_; ++k) {
      double t = -1.0 + hh * (rule_.x[k] + 1.0);
      out += hh * rule_.w[k] * ref_basis(t);
    }
    return out;
  }

  std::vector<double> cuts_;
  int m_ = 0;
  GaussRule rule_;
  std::vector<double> bary_;
  Eigen::MatrixXd sref_;
  std::vector<double> nodes_, weights_;
};

}  // namespace lacuna
