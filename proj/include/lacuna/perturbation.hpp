#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "lacuna/coefficients.hpp"
#include "lacuna/error.hpp"
#include "lacuna/quadrature.hpp"

namespace lacuna {

/// The interval Q = (q_lo, q_hi) carrying the perturbation, enclosed in [x0, x1] with
/// x1 − x0 a positive integer.
struct SupportInterval {
  double q_lo = -1, q_hi = 1;
  double x0 = -1, x1 = 1;

  /// Smallest enclosing segment of integer length centred on Q.
  static SupportInterval around(double lo, double hi) {
    require(lo < hi, ErrorCode::InvalidArgument, "support interval needs q_lo < q_hi");
    const double len = std::ceil(hi - lo) + (std::ceil(hi - lo) == hi - lo ? 1.0 : 0.0);
    const double mid = 0.5 * (lo + hi);
    return {lo, hi, mid - 0.5 * len, mid + 0.5 * len};
  }

  void validate() const {
    require(std::isfinite(q_lo) && std::isfinite(q_hi) && q_lo < q_hi, ErrorCode::InvalidArgument,
            "support interval needs q_lo < q_hi");
    require(x0 < q_lo && x1 > q_hi, ErrorCode::InvalidArgument, "enclosing segment must contain Q strictly");
    const double len = x1 - x0;
    require(std::abs(len - std::round(len)) <= 1e-12 * std::max(1.0, len), ErrorCode::InvalidArgument,
            "enclosing segment length x1 - x0 must be an integer");
  }

  double length() const { return q_hi - q_lo; }
  bool contains(double x) const { return x >= q_lo && x <= q_hi; }
};

/// Complex function on Q together with the points where it is not smooth.
struct Profile {
  std::function<cd(double)> f;
  std::vector<double> features;

  cd operator()(double x) const { return f ? f(x) : cd(0); }
  bool is_zero() const { return !f; }

  static Profile zero() { return {}; }
  static Profile constant(cd c) {
    return {[c](double) { return c; }, {}};
  }
  /// c on [lo, hi], zero elsewhere.
  static Profile indicator(double lo, double hi, cd c = 1.0) {
    return {[=](double x) { return x >= lo && x <= hi ? c : cd(0); }, {lo, hi}};
  }
  /// c·cos²(π(x − m)/(hi − lo)) on [lo, hi], m the midpoint; vanishes with its derivative at the ends.
  static Profile bump(double lo, double hi, cd c = 1.0) {
    return {[=](double x) {
              if (x < lo || x > hi) return cd(0);
              double s = std::cos(std::numbers::pi * (x - 0.5 * (lo + hi)) / (hi - lo));
              return c * s * s;
            },
            {lo, hi}};
  }
  static Profile gaussian(double centre, double width, cd c = 1.0) {
    return {[=](double x) {
              double z = (x - centre) / width;
              return c * std::exp(-0.5 * z * z);
            },
            {}};
  }
  /// Piecewise-linear interpolation of (x, value) samples, zero outside their range.
  static Profile sampled(std::vector<double> xs, std::vector<cd> vs) {
    require(xs.size() == vs.size() && xs.size() >= 2, ErrorCode::InvalidArgument,
            "sampled profile needs at least two (x, value) pairs");
    for (std::size_t i = 1; i < xs.size(); ++i)
      require(xs[i] > xs[i - 1], ErrorCode::InvalidArgument, "sampled profile abscissae must increase");
    std::vector<double> feats{xs.front(), xs.back()};
    return {[xs = std::move(xs), vs = std::move(vs)](double x) {
              if (x < xs.front() || x > xs.back()) return cd(0);
              auto it = std::upper_bound(xs.begin(), xs.end(), x);
              std::size_t j = std::min<std::size_t>(std::max<std::ptrdiff_t>(it - xs.begin(), 1), xs.size() - 1);
              double t = (x - xs[j - 1]) / (xs[j] - xs[j - 1]);
              return (1 - t) * vs[j - 1] + t * vs[j];
            },
            std::move(feats)};
  }
};

/// Lu = b₂u″ + b₁u′ + b₀u.
struct Differential {
  Profile b2, b1, b0;
};

/// (Lu)(x) = ∫_Q L(x, y)u(y) dy.
struct IntegralKernel {
  std::function<cd(double, double)> kernel;
  std::vector<double> features;

  /// Bilinear interpolation of a tabulated kernel on a tensor grid, zero outside it.
  static IntegralKernel table(std::vector<double> xs, std::vector<double> ys, Eigen::MatrixXcd values) {
    require(xs.size() >= 2 && ys.size() >= 2 && values.rows() == static_cast<Eigen::Index>(xs.size()) &&
                values.cols() == static_cast<Eigen::Index>(ys.size()),
            ErrorCode::InvalidArgument, "kernel table must be a full tensor grid with at least 2x2 points");
    auto locate = [](const std::vector<double>& g, double v, std::size_t& j, double& t) {
      if (v < g.front() || v > g.back()) return false;
      auto it = std::upper_bound(g.begin(), g.end(), v);
      j = std::min<std::size_t>(std::max<std::ptrdiff_t>(it - g.begin(), 1), g.size() - 1);
      t = (v - g[j - 1]) / (g[j] - g[j - 1]);
      return true;
    };
    return {[=](double x, double y) {
              std::size_t i, j;
              double s, t;
              if (!locate(xs, x, i, s) || !locate(ys, y, j, t)) return cd(0);
              return (1 - s) * (1 - t) * values(i - 1, j - 1) + s * (1 - t) * values(i, j - 1) +
                     (1 - s) * t * values(i - 1, j) + s * t * values(i, j);
            },
            {}};
  }
};

/// Lu = β·conj(b(x))·∫_Q b u.
struct RankOneKernel {
  cd beta = 1.0;
  Profile b;
};

/// c0·u(x) + c1·u′(x) + c2·u″(x).
struct PointTerm {
  double x = 0;
  cd c0 = 0, c1 = 0, c2 = 0;
};

/// l(u) = Σ point terms + ∫_Q w u.
struct Functional {
  std::vector<PointTerm> points;
  Profile weight;

  int order() const {
    int o = 0;
    for (const auto& p : points) {
      if (p.c1 != cd(0)) o = std::max(o, 1);
      if (p.c2 != cd(0)) o = std::max(o, 2);
    }
    return o;
  }
};

/// Lu = b·l(u).
struct FunctionalRankOne {
  Profile b;
  Functional l;
};

/// The perturbation L_ε u = 2ξ_ε·ε⁻¹(u′(ε^α) − u′(0)) on Q = (−2π, 2π), whose operator
/// H₀ − εL_ε with p ≡ 1, q ≡ 0 has the eigenvalue ν_ε² inside the continuous spectrum.
struct EmbeddedExample {
  double alpha = 2, epsilon = 0.3;
};

/// Derived constants of EmbeddedExample.
struct EmbeddedParams {
  double alpha, epsilon;
  double s;      // ε^α
  double nu;     // π/(2ε^α)
  double nu_int; // ⌊ν⌋
  double A;      // 2π⌊ν⌋/ν, the half-width of supp ξ
  double c;      // (A − ε^α)⁻¹

  double xi(double x) const { return std::abs(x) < A ? c * std::sin(nu * std::abs(x)) : 0.0; }
  double lambda() const { return nu * nu; }
};

inline EmbeddedParams embedded_params(double alpha, double epsilon) {
  require(alpha >= 2, ErrorCode::InvalidArgument, "embedded example needs alpha >= 2");
  require(epsilon > 0 && epsilon < 1, ErrorCode::InvalidArgument, "embedded example needs 0 < epsilon < 1");
  EmbeddedParams p{alpha, epsilon, std::pow(epsilon, alpha), 0, 0, 0, 0};
  p.nu = std::numbers::pi / (2 * p.s);
  require(p.nu >= 2, ErrorCode::InvalidArgument, "embedded example needs nu_epsilon >= 2");
  p.nu_int = std::floor(p.nu);
  p.A = 2 * std::numbers::pi * p.nu_int / p.nu;
  p.c = 1.0 / (p.A - p.s);
  return p;
}

using PerturbationVariant = std::variant<Differential, IntegralKernel, RankOneKernel, FunctionalRankOne, EmbeddedExample>;

/// Sufficient condition under which no eigenvalue is embedded in the continuous spectrum.
enum class NoEmbeddedGuarantee {
  BoundedRelative,  // ‖Lu‖ bounded by the first-order norm with an ε-independent constant
  DivergenceForm,   // principal part (a_ε u′)′ with a_ε piecewise C¹ and supported in Q
  None,
};

inline const char* to_string(NoEmbeddedGuarantee g) {
  switch (g) {
    case NoEmbeddedGuarantee::BoundedRelative: return "bounded_relative";
    case NoEmbeddedGuarantee::DivergenceForm: return "divergence_form";
    case NoEmbeddedGuarantee::None: return "none";
  }
  return "none";
}

enum class EmbeddedVerdict { GuaranteedNone, NotGuaranteed };

inline const char* to_string(EmbeddedVerdict v) {
  return v == EmbeddedVerdict::GuaranteedNone ? "guaranteed_none" : "not_guaranteed";
}

/// L discretized on a QuadGrid over Q:
/// Lu = d0∘u + d1∘u′ + d2∘u″ + K·u + left·(r0·u + r1·u′ + r2·u″).
/// Empty members are absent terms.
struct BoundPerturbation {
  QuadGrid grid;
  Eigen::VectorXcd d0, d1, d2;
  Eigen::MatrixXcd K;
  Eigen::MatrixXcd left, r0, r1, r2;

  int size() const { return grid.size(); }
  bool needs_d1() const { return d1.size() > 0 || r1.size() > 0; }
  bool needs_d2() const { return d2.size() > 0 || r2.size() > 0; }

  Eigen::MatrixXcd apply(const Channels& u) const {
    const int n = size();
    require(u.value.rows() == n, ErrorCode::GridMismatch, "perturbation applied to samples on a different grid");
    require(!needs_d1() || u.d1.rows() == n, ErrorCode::MissingDerivativeChannel,
            "perturbation needs the first-derivative channel");
    require(!needs_d2() || u.d2.rows() == n, ErrorCode::MissingDerivativeChannel,
            "perturbation needs the second-derivative channel");
    Eigen::MatrixXcd out = Eigen::MatrixXcd::Zero(n, u.value.cols());
    if (d0.size()) out += d0.asDiagonal() * u.value;
    if (d1.size()) out += d1.asDiagonal() * u.d1;
    if (d2.size()) out += d2.asDiagonal() * u.d2;
    if (K.size()) out += K * u.value;
    if (left.size()) {
      Eigen::MatrixXcd coef = Eigen::MatrixXcd::Zero(left.cols(), u.value.cols());
      if (r0.size()) coef += r0 * u.value;
      if (r1.size()) coef += r1 * u.d1;
      if (r2.size()) coef += r2 * u.d2;
      out += left * coef;
    }
    return out;
  }
};

class LocalizedPerturbation {
 public:
  LocalizedPerturbation() = default;
  LocalizedPerturbation(SupportInterval s, PerturbationVariant v) : support_(s), variant_(std::move(v)) {
    support_.validate();
    if (const auto* e = std::get_if<EmbeddedExample>(&variant_)) {
      embedded_params(e->alpha, e->epsilon);
      require(support_.q_lo <= -2 * std::numbers::pi + 1e-12 && support_.q_hi >= 2 * std::numbers::pi - 1e-12,
              ErrorCode::InvalidArgument, "embedded example needs Q to contain (-2pi, 2pi)");
    }
  }

  /// The embedded example on its own Q = (−2π, 2π).
  static LocalizedPerturbation embedded(double alpha, double epsilon) {
    const double tp = 2 * std::numbers::pi;
    return LocalizedPerturbation({-tp, tp, -7.0, 7.0}, EmbeddedExample{alpha, epsilon});
  }

  const SupportInterval& support() const { return support_; }
  const PerturbationVariant& variant() const { return variant_; }

  std::string kind() const {
    switch (variant_.index()) {
      case 0: return "differential";
      case 1: return "integral_kernel";
      case 2: return "rank_one";
      case 3: return "functional_rank_one";
      default: return "embedded";
    }
  }

  /// Highest derivative of u the perturbation reads.
  int order() const {
    if (const auto* d = std::get_if<Differential>(&variant_)) return !d->b2.is_zero() ? 2 : !d->b1.is_zero() ? 1 : 0;
    if (const auto* f = std::get_if<FunctionalRankOne>(&variant_)) return f->l.order();
    if (std::holds_alternative<EmbeddedExample>(variant_)) return 1;
    return 0;
  }

  NoEmbeddedGuarantee no_embedded_guarantee() const {
    if (const auto* d = std::get_if<Differential>(&variant_))
      return d->b2.is_zero() ? NoEmbeddedGuarantee::BoundedRelative : NoEmbeddedGuarantee::DivergenceForm;
    if (std::holds_alternative<IntegralKernel>(variant_) || std::holds_alternative<RankOneKernel>(variant_))
      return NoEmbeddedGuarantee::BoundedRelative;
    if (const auto* f = std::get_if<FunctionalRankOne>(&variant_))
      return f->l.order() == 0 ? NoEmbeddedGuarantee::BoundedRelative : NoEmbeddedGuarantee::None;
    return NoEmbeddedGuarantee::None;
  }

  /// Points inside Q where the perturbation's data are not smooth.
  std::vector<double> features() const {
    std::vector<double> f;
    auto add = [&](const std::vector<double>& v) { f.insert(f.end(), v.begin(), v.end()); };
    std::visit(
        [&](const auto& v) {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, Differential>) {
            add(v.b2.features);
            add(v.b1.features);
            add(v.b0.features);
          } else if constexpr (std::is_same_v<T, IntegralKernel>) {
            add(v.features);
          } else if constexpr (std::is_same_v<T, RankOneKernel>) {
            add(v.b.features);
          } else if constexpr (std::is_same_v<T, FunctionalRankOne>) {
            add(v.b.features);
            add(v.l.weight.features);
            for (const auto& p : v.l.points) f.push_back(p.x);
          } else {
            auto p = embedded_params(v.alpha, v.epsilon);
            add({-p.A, 0.0, p.s, p.A});
          }
        },
        variant_);
    return f;
  }

  /// Longest cell the perturbation tolerates; EmbeddedExample resolves a quarter period of sin(ν x).
  double max_cell(double requested = 0.125) const {
    if (const auto* e = std::get_if<EmbeddedExample>(&variant_))
      return std::min(requested, std::numbers::pi / (4 * embedded_params(e->alpha, e->epsilon).nu));
    return requested;
  }

  /// The Q grid: split at the perturbation's features and at coefficient breakpoints.
  QuadGrid make_grid(const OperatorCoefficients& c, double max_cell_len = 0.125, int m = 12) const {
    std::vector<double> f = features();
    auto bp = c.breakpoint_images(support_.q_lo, support_.q_hi);
    f.insert(f.end(), bp.begin(), bp.end());
    return QuadGrid::build(support_.q_lo, support_.q_hi, max_cell(max_cell_len), f, m);
  }

  BoundPerturbation bind(const QuadGrid& g) const {
    require(std::abs(g.lo() - support_.q_lo) <= 1e-12 && std::abs(g.hi() - support_.q_hi) <= 1e-12,
            ErrorCode::GridMismatch, "perturbation bound to a grid that does not span Q");
    const int n = g.size();
    const auto& xs = g.nodes();
    const Eigen::VectorXd w = g.weight_vector();
    auto sample = [&](const Profile& p) {
      Eigen::VectorXcd v(n);
      for (int i = 0; i < n; ++i) v(i) = p(xs[i]);
      return v;
    };
    auto functional_rows = [&](const Functional& l, BoundPerturbation& bp) {
      Eigen::RowVectorXcd a = Eigen::RowVectorXcd::Zero(n), b = a, c2 = a;
      for (const auto& pt : l.points) {
        require(support_.contains(pt.x), ErrorCode::InvalidArgument, "functional point lies outside Q");
        Eigen::RowVectorXcd row = g.interpolation_row(pt.x).cast<cd>().transpose();
        a += pt.c0 * row;
        b += pt.c1 * row;
        c2 += pt.c2 * row;
      }
      if (!l.weight.is_zero()) a += sample(l.weight).cwiseProduct(w.cast<cd>()).transpose();
      bp.r0 = a;
      if (l.order() >= 1) bp.r1 = b;
      if (l.order() >= 2) bp.r2 = c2;
    };

    BoundPerturbation bp{g, {}, {}, {}, {}, {}, {}, {}, {}};
    std::visit(
        [&](const auto& v) {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, Differential>) {
            if (!v.b0.is_zero()) bp.d0 = sample(v.b0);
            if (!v.b1.is_zero()) bp.d1 = sample(v.b1);
            if (!v.b2.is_zero()) bp.d2 = sample(v.b2);
          } else if constexpr (std::is_same_v<T, IntegralKernel>) {
            bp.K.resize(n, n);
            for (int j = 0; j < n; ++j)
              for (int i = 0; i < n; ++i) bp.K(i, j) = v.kernel(xs[i], xs[j]) * w(j);
          } else if constexpr (std::is_same_v<T, RankOneKernel>) {
            Eigen::VectorXcd b = sample(v.b);
            bp.left = v.beta * b.conjugate();
            bp.r0 = b.cwiseProduct(w.cast<cd>()).transpose();
          } else if constexpr (std::is_same_v<T, FunctionalRankOne>) {
            bp.left = sample(v.b);
            functional_rows(v.l, bp);
          } else {
            auto p = embedded_params(v.alpha, v.epsilon);
            bp.left.resize(n, 1);
            for (int i = 0; i < n; ++i) bp.left(i, 0) = 2 * p.xi(xs[i]);
            Functional l{{PointTerm{p.s, 0.0, 1.0 / p.epsilon, 0.0}, PointTerm{0.0, 0.0, -1.0 / p.epsilon, 0.0}}, {}};
            functional_rows(l, bp);
          }
        },
        variant_);
    return bp;
  }

 private:
  SupportInterval support_;
  PerturbationVariant variant_ = Differential{};
};

/// Whether a theorem rules out embedded eigenvalues for H₀ − εL.
inline EmbeddedVerdict classify_no_embedded(const LocalizedPerturbation& pert) {
  return pert.no_embedded_guarantee() == NoEmbeddedGuarantee::None ? EmbeddedVerdict::NotGuaranteed
                                                                    : EmbeddedVerdict::GuaranteedNone;
}

/// ψ_ε on a uniform sample grid over Q together with the checks it must pass.
struct EmbeddedWitness {
  EmbeddedParams params;
  double lambda_e = 0;
  std::vector<double> x;
  Eigen::VectorXd psi, dpsi;
  double l_psi = 0;
  double res_dpsi0 = 0;      // |ψ′(0)|
  double res_dpsi_s = 0;     // |ψ′(ε^α) − ε|
  double res_l = 0;          // |l_εψ − 1|
  double res_outside = 0;    // max |ψ| sampled outside Q
  double res_equation = 0;   // max |−ψ″ − 2εξ·l_εψ − ν²ψ| away from the kinks of ξ

  double max_residual() const { return std::max({res_dpsi0, res_dpsi_s, res_l, res_outside, res_equation}); }
};

namespace detail {

/// ψ(x) = −(ε/ν)∫ sin(ν|x−t|)ξ(t)dt and ψ′(x) = −ε∫ cos(ν(x−t))sgn(x−t)ξ(t)dt by
/// composite Gauss–Legendre on pieces split at −A, 0, x, A.
inline std::pair<double, double> embedded_psi(const EmbeddedParams& p, double x, const GaussRule& rule) {
  std::vector<double> cuts{-p.A, 0.0, p.A};
  if (x > -p.A && x < p.A && x != 0.0) cuts.push_back(x);
  std::sort(cuts.begin(), cuts.end());
  const double max_len = std::numbers::pi / (2 * p.nu);
  double v = 0, d = 0;
  for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
    const double a = cuts[c], b = cuts[c + 1];
    const int pieces = std::max(1, static_cast<int>(std::ceil((b - a) / max_len)));
    const double len = (b - a) / pieces;
    for (int j = 0; j < pieces; ++j) {
      const double lo = a + j * len, hh = 0.5 * len, mid = lo + hh;
      for (std::size_t k = 0; k < rule.x.size(); ++k) {
        const double t = mid + hh * rule.x[k], wt = hh * rule.w[k];
        const double xi = p.c * std::sin(p.nu * std::abs(t));
        const double r = x - t;
        v += wt * std::sin(p.nu * std::abs(r)) * xi;
        d += wt * std::cos(p.nu * r) * (r > 0 ? 1.0 : r < 0 ? -1.0 : 0.0) * xi;
      }
    }
  }
  return {-p.epsilon / p.nu * v, -p.epsilon * d};
}

/// Four-point Lagrange interpolation on a uniform grid.
inline double uniform_interpolate(const std::vector<double>& x, const Eigen::VectorXd& f, double at) {
  const double h = x[1] - x[0];
  const int n = static_cast<int>(x.size());
  int j = std::clamp(static_cast<int>(std::floor((at - x[0]) / h)) - 1, 0, n - 4);
  double s = 0;
  for (int a = 0; a < 4; ++a) {
    double l = 1;
    for (int b = 0; b < 4; ++b)
      if (b != a) l *= (at - x[j + b]) / (x[j + a] - x[j + b]);
    s += l * f(j + a);
  }
  return s;
}

}  // namespace detail

/// Builds ψ_ε for the embedded example and evaluates its diagnostics on n uniform samples of Q.
inline EmbeddedWitness embedded_witness(double alpha, double epsilon, int samples = 20000) {
  EmbeddedWitness w;
  w.params = embedded_params(alpha, epsilon);
  const auto& p = w.params;
  w.lambda_e = p.lambda();
  const double tp = 2 * std::numbers::pi;
  const double per_period = samples / (2 * tp * p.nu / tp);
  require(per_period >= 16, ErrorCode::GridTooCoarse,
          "embedded witness needs at least 16 samples per period of sin(nu x); got " + std::to_string(per_period));
  const GaussRule rule = gauss_legendre(16);

  w.x.resize(samples);
  w.psi.resize(samples);
  w.dpsi.resize(samples);
  const double h = 2 * tp / (samples - 1);
  for (int i = 0; i < samples; ++i) {
    w.x[i] = -tp + i * h;
    std::tie(w.psi(i), w.dpsi(i)) = detail::embedded_psi(p, w.x[i], rule);
  }

  w.res_dpsi0 = std::abs(detail::embedded_psi(p, 0.0, rule).second);
  w.res_dpsi_s = std::abs(detail::embedded_psi(p, p.s, rule).second - epsilon);
  // l_εψ from the sampled derivative channel.
  w.l_psi = (detail::uniform_interpolate(w.x, w.dpsi, p.s) - detail::uniform_interpolate(w.x, w.dpsi, 0.0)) / epsilon;
  w.res_l = std::abs(w.l_psi - 1.0);

  for (int j = 0; j <= 200; ++j) {
    double off = tp + 2.0 * j / 200;
    w.res_outside = std::max({w.res_outside, std::abs(detail::embedded_psi(p, off, rule).first),
                              std::abs(detail::embedded_psi(p, -off, rule).first)});
  }

  // ψ″ by the fourth-order central difference of ψ′, skipping stencils that straddle a kink of ξ.
  for (int i = 2; i + 2 < samples; ++i) {
    const double lo = w.x[i - 2], hi = w.x[i + 2];
    bool straddles = false;
    for (double k : {-p.A, 0.0, p.A})
      if (k > lo - 1e-12 && k < hi + 1e-12) straddles = true;
    if (straddles) continue;
    const double d2 = (-w.dpsi(i + 2) + 8 * w.dpsi(i + 1) - 8 * w.dpsi(i - 1) + w.dpsi(i - 2)) / (12 * h);
    const double r = -d2 - 2 * epsilon * p.xi(w.x[i]) * w.l_psi - p.nu * p.nu * w.psi(i);
    w.res_equation = std::max(w.res_equation, std::abs(r));
  }
  return w;
}

}  // namespace lacuna
