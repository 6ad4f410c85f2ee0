#pragma once

#include <cmath>
#include <optional>
#include <string>

#include "lacuna/bands.hpp"
#include "lacuna/gap_asymptotics.hpp"
#include "lacuna/oracle.hpp"
#include "lacuna/perturbation.hpp"

namespace lacuna {

/// The half of the lacuna adjacent to an edge, kept a band margin away from the edge. A
/// semi-infinite lacuna is cut at `depth` below the edge.
inline Window half_gap_window(const BandScan& scan, const BandEdge& e, double h, double depth) {
  const Lacuna* lac = nullptr;
  for (const auto& l : scan.lacunas)
    if (l.n == e.n) lac = &l;
  require(lac != nullptr && !lac->degenerate, ErrorCode::DegenerateEdge, "edge " + e.label() + " has no open lacuna");
  double lo, hi;
  if (e.side == Side::Plus) {
    hi = e.mu;
    lo = lac->semi_infinite ? e.mu - depth : 0.5 * (lac->left + lac->right);
  } else {
    lo = e.mu;
    hi = 0.5 * (lac->left + lac->right);
  }
  const double m = 1.01 * band_margin(h, std::max(std::abs(lo), std::abs(hi)));
  if (e.side == Side::Plus) {
    hi -= m;
  } else {
    lo += m;
  }
  require(lo < hi, ErrorCode::GridTooCoarse, "grid step leaves no room between the band margin and the half-gap");
  const double half = 0.5 * (hi - lo);
  return {lo, hi, -half, half};
}

struct VerifyOptions {
  double r_factor = 30.0;
  double R = 0.0;  // 0: r_factor/√|λ − μ|
  double h = 1.0 / 64;       // coarsest grid; halved until the band margin fits the edge distance
  long max_nodes = 4'000'000;  // finest grid of the study
  double asym_const = 5.0;
  std::optional<Window> window;
  GapOptions gap;
  OracleOptions oracle;
};

struct EdgeVerification {
  GapEigenvalueReport report;
  Window window{0, 0};
  double R = 0;
  double h = 0;
  int oracle_count = 0;
  std::optional<ConvergenceStudy> study;
  double asym_error = NAN;   // |λ_asym − λ_oracle|
  double exact_error = NAN;  // |λ_exact − λ_oracle|
  bool pass = false;
  std::string note;
};

/// Asymptotics and exact k against the finite-difference oracle in the adjacent half-gap.
inline EdgeVerification verify_edge(const OperatorCoefficients& c, const BandScan& scan, const BandEdge& e,
                                    const LocalizedPerturbation& pert, double epsilon, const VerifyOptions& opt = {}) {
  EdgeVerification v;
  EdgeProblem ep(c, e, pert, opt.gap);
  v.report = ep.report(epsilon);
  const cd ref = v.report.lambda_exact.value_or(v.report.lambda_order2);
  double depth = std::abs(ref - e.mu);
  if (!(depth > 0)) depth = epsilon * epsilon;
  const auto& sup = pert.support();
  v.R = opt.R > 0 ? opt.R : std::ceil(opt.r_factor / std::sqrt(depth));
  v.R = std::max(v.R, std::ceil(std::max(std::abs(sup.x0), std::abs(sup.x1))) + 1);
  // The window must reach within half the predicted edge distance, otherwise the band margin hides the
  // eigenvalue (or its absence).
  v.h = opt.h;
  const bool yes = v.report.exists == Verdict::Yes;
  const long per_unit = yes ? 16 : 2;  // nodes per unit of R·h⁻¹: study reaches 2R and h/4
  if (opt.window) {
    v.window = *opt.window;
  } else {
    const double lac_depth = std::max(1.0, 4 * depth);
    for (;;) {
      double gap_to_edge = INFINITY;
      try {
        v.window = half_gap_window(scan, e, v.h, lac_depth);
        gap_to_edge = e.side == Side::Plus ? e.mu - v.window.re_hi : v.window.re_lo - e.mu;
      } catch (const Error& err) {
        if (err.code() != ErrorCode::GridTooCoarse) throw;
      }
      if (gap_to_edge <= 0.5 * depth || (std::isfinite(gap_to_edge) && v.report.exists == Verdict::Indeterminate))
        break;
      v.h *= 0.5;
      require(per_unit * v.R / v.h <= static_cast<double>(opt.max_nodes), ErrorCode::GridTooCoarse,
              "edge " + e.label() + ": distance " + std::to_string(depth) +
                  " to the edge is below twice the band margin within the oracle node budget");
    }
  }

  if (yes) {
    v.study = convergence_study(c, pert, epsilon, v.window, v.R, v.h, &scan, opt.oracle);
    v.oracle_count = v.study->max_count;
    const cd oracle = v.study->value;
    v.asym_error = std::abs(v.report.lambda_order2 - oracle);
    if (v.report.lambda_exact) v.exact_error = std::abs(*v.report.lambda_exact - oracle);
    const double slack = 2 * v.study->error_bar + 1e-9 * std::max(1.0, std::abs(e.mu));
    const bool one = v.oracle_count == 1;
    const bool exact_ok = v.report.lambda_exact && v.exact_error <= slack;
    const bool asym_ok = v.asym_error <= opt.asym_const * std::pow(epsilon, 3);
    v.pass = one && exact_ok && asym_ok;
    if (!one) v.note = "oracle found " + std::to_string(v.oracle_count) + " eigenvalues in the half-gap";
    else if (!exact_ok) v.note = "exact-k eigenvalue outside the oracle error bar";
    else if (!asym_ok) v.note = "asymptotic eigenvalue off by more than asym_const*eps^3";
  } else if (v.report.exists == Verdict::No) {
    TruncatedProblem tp = assemble(c, pert, epsilon, v.R, v.h);
    v.oracle_count = static_cast<int>(gap_eigenvalues(tp, v.window, &scan, opt.oracle).size());
    v.pass = v.oracle_count == 0;
    if (!v.pass) v.note = "oracle found an eigenvalue where the criterion says none";
  } else {
    v.pass = true;
    v.note = "criterion indeterminate; no comparison";
  }
  return v;
}

struct EmbeddedCheck {
  EmbeddedWitness witness;
  ConvergenceStudy study;
  double oracle_error = NAN;  // |λ_oracle − ν²|
  double tail_mass = NAN;     // largest over the study
  bool witness_ok = false, in_spectrum = false, oracle_ok = false;

  bool pass() const { return witness_ok && in_spectrum && oracle_ok; }
};

/// Witness diagnostics at 1e-6 and an oracle eigenvalue within 1e-3 of ν² with tail mass ≤ 1e-4.
inline EmbeddedCheck check_embedded(double alpha, double epsilon, double h_max = 1.0 / 64, OracleOptions opt = {}) {
  EmbeddedCheck ck;
  ck.witness = embedded_witness(alpha, epsilon);
  ck.witness_ok = ck.witness.max_residual() <= 1e-6;
  ck.in_spectrum = ck.witness.lambda_e >= 0;  // spectrum of −d²/dx² is [0, ∞)
  const auto p = ck.witness.params;
  const double period = 2 * std::numbers::pi / p.nu;
  double h = 1.0 / 16;
  while (h > std::min(h_max, period / 64)) h *= 0.5;
  auto pert = LocalizedPerturbation::embedded(alpha, epsilon);
  const double R = std::ceil(pert.support().x1) + 1;
  ck.study = convergence_study(OperatorCoefficients::free(), pert, epsilon,
                               Window{p.lambda() - 2, p.lambda() + 2, -1, 1}, R, h, nullptr, opt, {1.0, 1.5});
  ck.oracle_error = std::abs(ck.study.value - p.lambda());
  ck.tail_mass = 0;
  for (const auto& r : ck.study.rows) ck.tail_mass = std::max(ck.tail_mass, r.tail_mass);
  ck.oracle_ok = ck.oracle_error <= 1e-3 && ck.tail_mass <= 1e-4;
  return ck;
}

}  // namespace lacuna
