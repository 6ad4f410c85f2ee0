#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>
#include <variant>
#include <vector>

#include <boost/math/interpolators/makima.hpp>

#include "lacuna/error.hpp"

namespace lacuna {

struct ConstantSeg {
  double c = 0;
};

/// Σ c_k x^k in the reduced coordinate x ∈ [0, 1).
struct PolySeg {
  std::vector<double> c;
};

/// a0 + Σ_k a_k cos(2πkx) + b_k sin(2πkx).
struct TrigSeg {
  double a0 = 0;
  std::vector<double> a, b;
};

/// Samples at uniformly spaced points spanning the segment, joined by a C¹ cubic (modified Akima).
struct SampledSeg {
  std::vector<double> y;
};

using Segment = std::variant<ConstantSeg, PolySeg, TrigSeg, SampledSeg>;

/// 1-periodic piecewise smooth real function.
class PiecewisePeriodicFn {
 public:
  PiecewisePeriodicFn() : PiecewisePeriodicFn({0.0}, {ConstantSeg{0.0}}) {}

  PiecewisePeriodicFn(std::vector<double> breakpoints, std::vector<Segment> segments)
      : bp_(std::move(breakpoints)), seg_(std::move(segments)) {
    require(!bp_.empty(), ErrorCode::InvalidArgument, "PiecewisePeriodicFn: no breakpoints");
    require(bp_.size() == seg_.size(), ErrorCode::InvalidArgument,
            "PiecewisePeriodicFn: need one segment per breakpoint");
    for (std::size_t i = 0; i < bp_.size(); ++i) {
      require(bp_[i] >= 0.0 && bp_[i] < 1.0, ErrorCode::InvalidArgument,
              "PiecewisePeriodicFn: breakpoints must lie in [0,1)");
      if (i > 0)
        require(bp_[i] > bp_[i - 1], ErrorCode::InvalidArgument,
                "PiecewisePeriodicFn: breakpoints must be strictly increasing");
    }
    splines_.resize(seg_.size());
    for (std::size_t i = 0; i < seg_.size(); ++i) {
      if (auto* s = std::get_if<SampledSeg>(&seg_[i])) {
        require(s->y.size() >= 4, ErrorCode::InvalidArgument,
                "PiecewisePeriodicFn: sampled segment needs at least 4 samples");
        double a = bp_[i], b = end_of(i);
        std::vector<double> xs(s->y.size());
        for (std::size_t k = 0; k < xs.size(); ++k)
          xs[k] = a + (b - a) * static_cast<double>(k) / static_cast<double>(xs.size() - 1);
        std::vector<double> ys = s->y;
        splines_[i] = std::make_shared<Spline>(std::move(xs), std::move(ys));
      }
    }
  }

  static PiecewisePeriodicFn constant(double c) { return PiecewisePeriodicFn({0.0}, {ConstantSeg{c}}); }

  const std::vector<double>& breakpoints() const { return bp_; }
  const std::vector<Segment>& segments() const { return seg_; }
  int num_segments() const { return static_cast<int>(seg_.size()); }

  /// Segment index and shift s such that x − s lies in that segment's range [b_i, b_{i+1}].
  struct Locus {
    int seg;
    double shift;
  };

  Locus locate(double x) const {
    double fl = std::floor(x);
    double r = x - fl;
    if (r < bp_.front()) return {num_segments() - 1, fl - 1.0};
    auto it = std::upper_bound(bp_.begin(), bp_.end(), r);
    return {static_cast<int>(it - bp_.begin()) - 1, fl};
  }

  /// Value of segment `seg` at reduced coordinate xr (smooth extension to the closed segment).
  double segment_value(int seg, double xr) const { return eval(seg, xr, false); }
  double segment_derivative(int seg, double xr) const { return eval(seg, xr, true); }

  double operator()(double x) const {
    Locus l = locate(x);
    return segment_value(l.seg, x - l.shift);
  }

  double derivative(double x) const {
    Locus l = locate(x);
    return segment_derivative(l.seg, x - l.shift);
  }

  /// Left limit at x.
  double left_limit(double x) const {
    Locus l = locate(x);
    double xr = x - l.shift;
    if (xr == start_of(l.seg)) {
      int prev = (l.seg + num_segments() - 1) % num_segments();
      double shift = l.shift - (l.seg == 0 ? 1.0 : 0.0);
      return segment_value(prev, x - shift);
    }
    return segment_value(l.seg, xr);
  }

  /// Breakpoint images b + m lying in [lo, hi].
  std::vector<double> breakpoint_images(double lo, double hi) const {
    std::vector<double> out;
    for (double m = std::floor(lo) - 1; m <= std::ceil(hi) + 1; m += 1.0)
      for (double b : bp_) {
        double x = b + m;
        if (x >= lo && x <= hi) out.push_back(x);
      }
    std::sort(out.begin(), out.end());
    return out;
  }

  /// Start of segment i in the reduced coordinate, and its end (wrapping past 1 for the last one).
  double start_of(int i) const { return bp_[i]; }
  double end_of(int i) const {
    return i + 1 < num_segments() ? bp_[i + 1] : bp_.front() + 1.0;
  }

  /// Dense sample of the function over one period (includes both sides of each breakpoint).
  std::vector<double> sample_period(int per_segment = 64) const {
    std::vector<double> v;
    for (int i = 0; i < num_segments(); ++i) {
      double a = start_of(i), b = end_of(i);
      for (int k = 0; k <= per_segment; ++k) v.push_back(segment_value(i, a + (b - a) * k / per_segment));
    }
    return v;
  }

 private:
  using Spline = boost::math::interpolators::makima<std::vector<double>>;

  double eval(int seg, double xr, bool deriv) const {
    const Segment& s = seg_[seg];
    if (auto* c = std::get_if<ConstantSeg>(&s)) return deriv ? 0.0 : c->c;
    if (auto* p = std::get_if<PolySeg>(&s)) {
      double v = 0;
      if (!deriv) {
        for (auto it = p->c.rbegin(); it != p->c.rend(); ++it) v = v * xr + *it;
      } else {
        for (std::size_t k = p->c.size(); k-- > 1;) v = v * xr + static_cast<double>(k) * p->c[k];
      }
      return v;
    }
    if (auto* t = std::get_if<TrigSeg>(&s)) {
      constexpr double tau = 2.0 * std::numbers::pi;
      double v = deriv ? 0.0 : t->a0;
      for (std::size_t k = 0; k < std::max(t->a.size(), t->b.size()); ++k) {
        double w = tau * static_cast<double>(k + 1);
        double ak = k < t->a.size() ? t->a[k] : 0.0;
        double bk = k < t->b.size() ? t->b[k] : 0.0;
        if (deriv)
          v += w * (-ak * std::sin(w * xr) + bk * std::cos(w * xr));
        else
          v += ak * std::cos(w * xr) + bk * std::sin(w * xr);
      }
      return v;
    }
    const Spline& sp = *splines_[seg];
    double a = start_of(seg), b = end_of(seg);
    double xc = std::clamp(xr, a, b);
    return deriv ? sp.prime(xc) : sp(xc);
  }

  std::vector<double> bp_;
  std::vector<Segment> seg_;
  std::vector<std::shared_ptr<Spline>> splines_;
};

/// The periodic pair (p, q) of −(p u′)′ + q u.
struct OperatorCoefficients {
  PiecewisePeriodicFn p;
  PiecewisePeriodicFn q;
  double p_floor = 1.0;
  double q_min = 0.0;
  double q_max = 0.0;

  OperatorCoefficients() : OperatorCoefficients(PiecewisePeriodicFn::constant(1.0), PiecewisePeriodicFn::constant(0.0)) {}

  OperatorCoefficients(PiecewisePeriodicFn p_in, PiecewisePeriodicFn q_in)
      : p(std::move(p_in)), q(std::move(q_in)) {
    auto ps = p.sample_period(256);
    p_floor = *std::min_element(ps.begin(), ps.end());
    for (double v : ps)
      require(std::isfinite(v), ErrorCode::InvalidArgument, "p must be finite");
    require(p_floor > 0.0, ErrorCode::NonPositiveP, "p must be positive on every segment");
    for (double b : p.breakpoints()) {
      double jump = std::abs(p(b) - p.left_limit(b));
      require(jump <= 1e-8 * std::max(1.0, std::abs(p(b))), ErrorCode::InvalidArgument,
              "p must be continuous across breakpoints");
    }
    require(std::abs(p(0.0) - 1.0) <= 1e-12, ErrorCode::InvalidArgument,
            "p(0) must equal 1 (normalization of the fundamental system)");
    auto qs = q.sample_period(256);
    for (double v : qs) require(std::isfinite(v), ErrorCode::InvalidArgument, "q must be bounded");
    q_min = *std::min_element(qs.begin(), qs.end());
    q_max = *std::max_element(qs.begin(), qs.end());
  }

  static OperatorCoefficients free() { return OperatorCoefficients(); }

  /// All breakpoint images of p and q inside [lo, hi].
  std::vector<double> breakpoint_images(double lo, double hi) const {
    auto a = p.breakpoint_images(lo, hi);
    auto b = q.breakpoint_images(lo, hi);
    a.insert(a.end(), b.begin(), b.end());
    std::sort(a.begin(), a.end());
    a.erase(std::unique(a.begin(), a.end(), [](double u, double v) { return std::abs(u - v) < 1e-14; }),
            a.end());
    return a;
  }
};

}  // namespace lacuna
