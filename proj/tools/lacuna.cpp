// Command-line front end: band scans, gap-eigenvalue reports, oracle verification and the
// embedded-eigenvalue demo, all driven by an INI problem file.

#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "lacuna/lacuna.hpp"

namespace fs = std::filesystem;
using namespace lacuna;

namespace {

struct Options {
  std::string config;
  std::string out = ".";
  std::optional<double> lambda_max;
  int jobs = 1;
};

class ComparisonFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string one_line(std::string s) {
  for (char& ch : s)
    if (ch == '\n' || ch == '\r') ch = ' ';
  return s;
}

int print_error(const std::string& code, int exit, const std::string& message) {
  std::cerr << "error code=" << code << " exit=" << exit << " message=\"" << one_line(message) << "\"\n";
  return exit;
}

/// Runs job(i) for i < n on up to `jobs` threads; the first failure in index order is rethrown.
template <class F>
void run_jobs(int n, int jobs, F job) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next++; i < n; i = next++) {
      try {
        job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 1; t < std::min(jobs, n); ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::string edge_tag(const BandEdge& e) { return std::to_string(e.n) + (e.side == Side::Plus ? "p" : "m"); }

std::ofstream open_out(const fs::path& dir, const std::string& name) {
  std::ofstream os(dir / name);
  require(static_cast<bool>(os), ErrorCode::InvalidArgument, "cannot write " + (dir / name).string());
  return os;
}

std::string z(cd v) { return sci(v.real()) + " " + sci(v.imag()); }

struct Context {
  ProblemConfig cfg;
  fs::path out;
  int jobs;
};

Context load(const Options& o) {
  Context ctx{load_config(o.config), o.out, o.jobs};
  if (o.lambda_max) ctx.cfg.lambda_max = *o.lambda_max;
  require(ctx.jobs >= 1, ErrorCode::InvalidArgument, "--jobs must be at least 1");
  fs::create_directories(ctx.out);
  return ctx;
}

BandScan scan(const ProblemConfig& cfg) {
  BandScan s = find_band_edges(cfg.coeffs, cfg.lambda_max, ScanOptions{.tol = cfg.tol});
  for (const auto& [n, side] : cfg.edges)
    require(s.find(n, side) != nullptr, ErrorCode::InvalidArgument,
            "edge " + std::to_string(n) + (side == Side::Plus ? "+" : "-") + " lies above lambda_max");
  return s;
}

/// Non-degenerate selected edges; an explicitly requested degenerate edge is an error.
std::vector<BandEdge> selected_edges(const ProblemConfig& cfg, const BandScan& s) {
  std::vector<BandEdge> out;
  for (const auto& e : s.edges) {
    if (!cfg.selects(e)) continue;
    if (e.degenerate) {
      require(cfg.all_edges, ErrorCode::DegenerateEdge, "edge " + e.label() + " belongs to a degenerate lacuna");
      continue;
    }
    out.push_back(e);
  }
  return out;
}

struct Job {
  BandEdge edge;
  int eps_index;
  double epsilon;
};

std::vector<Job> jobs_for(const ProblemConfig& cfg, const std::vector<BandEdge>& edges) {
  std::vector<Job> out;
  for (const auto& e : edges)
    for (std::size_t k = 0; k < cfg.epsilons.size(); ++k) out.push_back({e, static_cast<int>(k), cfg.epsilons[k]});
  return out;
}

std::string job_name(const Job& j) { return edge_tag(j.edge) + "_" + std::to_string(j.eps_index); }

void cmd_bands(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  BandScan s = scan(cfg);
  const int n = cfg.band_samples;
  std::vector<cd> D(n);
  std::vector<double> lam(n);
  for (int i = 0; i < n; ++i) lam[i] = s.lambda_lo + (cfg.lambda_max - s.lambda_lo) * i / (n - 1.0);
  run_jobs(n, ctx.jobs, [&](int i) { D[i] = discriminant(cfg.coeffs, lam[i], cfg.tol); });
  {
    auto os = open_out(ctx.out, "bands.csv");
    CsvWriter csv(os, {"lambda", "re_D", "im_D", "in_band"});
    for (int i = 0; i < n; ++i) {
      csv.cell(lam[i]).cell(D[i].real()).cell(D[i].imag()).cell(std::abs(D[i].real()) <= 2.0 ? 1 : 0);
      csv.end_row();
    }
  }
  auto os = open_out(ctx.out, "edges.csv");
  CsvWriter csv(os, {"n", "side", "mu", "ddot", "degenerate"});
  int open = 0;
  for (const auto& e : s.edges) {
    csv.cell(e.n).cell(e.side == Side::Plus ? "+" : "-").cell(e.mu).cell(e.ddot).cell(e.degenerate ? 1 : 0);
    csv.end_row();
    if (!e.degenerate) ++open;
  }
  std::cout << "bands: " << s.edges.size() << " edges below lambda_max, " << open << " non-degenerate\n";
}

void cmd_gap_eig(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  BandScan s = scan(cfg);
  auto jobs = jobs_for(cfg, selected_edges(cfg, s));
  std::vector<GapEigenvalueReport> reports(jobs.size());
  GapOptions opt;
  opt.tol = cfg.tol;
  run_jobs(static_cast<int>(jobs.size()), ctx.jobs, [&](int i) {
    const auto& j = jobs[i];
    auto pert = cfg.perturbation(j.epsilon);
    auto [a, b] = cfg.window.value_or(std::pair{pert.support().x0 - 4, pert.support().x1 + 4});
    auto xs = linspace(a, b, cfg.window_samples);
    reports[i] = EdgeProblem(cfg.coeffs, j.edge, pert, opt).report(j.epsilon, xs);
  });

  auto sum = open_out(ctx.out, "summary.csv");
  CsvWriter csv(sum, {"edge", "epsilon", "exists", "asymptotic_verdict", "re_k1", "im_k1", "re_k2", "im_k2",
                      "re_lambda2", "im_lambda2", "re_lambda_exact", "im_lambda_exact", "decay_rate"});
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const auto& r = reports[i];
    {
      auto os = open_out(ctx.out, "gap_" + job_name(jobs[i]) + ".txt");
      write_report(os, r);
    }
    if (!r.eigenfunction.x.empty()) {
      auto os = open_out(ctx.out, "eigenfunction_" + job_name(jobs[i]) + ".csv");
      write_eigenfunction_csv(os, r.eigenfunction);
    }
    const cd le = r.lambda_exact.value_or(cd(NAN, NAN));
    csv.cell(r.edge.label()).cell(r.epsilon).cell(to_string(r.exists)).cell(to_string(r.asymptotic_verdict));
    csv.cell(r.k1.real()).cell(r.k1.imag()).cell(r.k2.real()).cell(r.k2.imag());
    csv.cell(r.lambda_order2.real()).cell(r.lambda_order2.imag()).cell(le.real()).cell(le.imag());
    csv.cell(r.decay_rate.value_or(NAN));
    csv.end_row();
    std::cout << "gap-eig " << r.edge.label() << " eps=" << sci(r.epsilon) << " exists=" << to_string(r.exists)
              << " lambda2=" << z(r.lambda_order2) << '\n';
  }
}

bool embedded_runs(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  require(cfg.coeffs.q_min == 0.0 && cfg.coeffs.q_max == 0.0 && cfg.coeffs.p_floor == 1.0 &&
              cfg.coeffs.p.sample_period(256) == std::vector<double>(cfg.coeffs.p.sample_period(256).size(), 1.0),
          ErrorCode::ConfigError, "the embedded example needs p = 1 and q = 0");
  std::vector<EmbeddedCheck> checks(cfg.epsilons.size());
  run_jobs(static_cast<int>(checks.size()), ctx.jobs,
           [&](int i) { checks[i] = check_embedded(cfg.alpha, cfg.epsilons[i], cfg.h); });
  bool all = true;
  for (std::size_t i = 0; i < checks.size(); ++i) {
    const auto& ck = checks[i];
    const auto& w = ck.witness;
    const std::string k = std::to_string(i);
    {
      auto os = open_out(ctx.out, "embedded_" + k + ".txt");
      os << "alpha = " << sci(w.params.alpha) << '\n'
         << "epsilon = " << sci(w.params.epsilon) << '\n'
         << "s = " << sci(w.params.s) << '\n'
         << "nu = " << sci(w.params.nu) << '\n'
         << "A = " << sci(w.params.A) << '\n'
         << "lambda = " << sci(w.lambda_e) << '\n'
         << "res_dpsi0 = " << sci(w.res_dpsi0) << '\n'
         << "res_dpsi_s = " << sci(w.res_dpsi_s) << '\n'
         << "res_l = " << sci(w.res_l) << '\n'
         << "res_outside = " << sci(w.res_outside) << '\n'
         << "res_equation = " << sci(w.res_equation) << '\n'
         << "lambda_oracle = " << z(ck.study.value) << '\n'
         << "oracle_error = " << sci(ck.oracle_error) << '\n'
         << "oracle_error_bar = " << sci(ck.study.error_bar) << '\n'
         << "tail_mass = " << sci(ck.tail_mass) << '\n'
         << "pass = " << (ck.pass() ? "yes" : "no") << '\n';
    }
    {
      auto os = open_out(ctx.out, "witness_" + k + ".csv");
      CsvWriter csv(os, {"x", "psi", "dpsi"});
      for (std::size_t j = 0; j < w.x.size(); ++j) {
        csv.cell(w.x[j]).cell(w.psi(j)).cell(w.dpsi(j));
        csv.end_row();
      }
    }
    {
      auto os = open_out(ctx.out, "study_embedded_" + k + ".csv");
      write_study_csv(os, ck.study);
    }
    std::cout << "embedded eps=" << sci(w.params.epsilon) << " nu^2=" << sci(w.lambda_e)
              << " witness=" << sci(w.max_residual()) << " oracle_error=" << sci(ck.oracle_error)
              << " tail=" << sci(ck.tail_mass) << (ck.pass() ? " PASS" : " FAIL") << '\n';
    all = all && ck.pass();
  }
  return all;
}

void cmd_verify(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  if (cfg.variant == "embedded") {
    if (!embedded_runs(ctx)) throw ComparisonFailure("embedded example diagnostics failed");
    return;
  }
  BandScan s = scan(cfg);
  auto jobs = jobs_for(cfg, selected_edges(cfg, s));
  VerifyOptions opt;
  opt.r_factor = cfg.r_factor;
  opt.R = cfg.R;
  opt.h = cfg.h;
  opt.asym_const = cfg.asym_const;
  opt.window = cfg.oracle_window;
  opt.gap.tol = cfg.tol;
  std::vector<EdgeVerification> res(jobs.size());
  run_jobs(static_cast<int>(jobs.size()), ctx.jobs, [&](int i) {
    res[i] = verify_edge(cfg.coeffs, s, jobs[i].edge, cfg.perturbation(jobs[i].epsilon), jobs[i].epsilon, opt);
  });

  auto sum = open_out(ctx.out, "verify.csv");
  CsvWriter csv(sum, {"edge", "epsilon", "exists", "oracle_count", "R", "h", "re_lambda_asym", "im_lambda_asym",
                      "re_lambda_exact", "im_lambda_exact", "re_lambda_oracle", "im_lambda_oracle", "error_bar",
                      "asym_error", "asym_error_over_eps3", "pass"});
  int failures = 0;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const auto& v = res[i];
    const auto& r = v.report;
    const cd le = r.lambda_exact.value_or(cd(NAN, NAN));
    const cd lo = v.study ? v.study->value : cd(NAN, NAN);
    const double bar = v.study ? v.study->error_bar : NAN;
    const double scaled = v.asym_error / std::pow(r.epsilon, 3);
    csv.cell(r.edge.label()).cell(r.epsilon).cell(to_string(r.exists)).cell(v.oracle_count).cell(v.R).cell(v.h);
    csv.cell(r.lambda_order2.real()).cell(r.lambda_order2.imag()).cell(le.real()).cell(le.imag());
    csv.cell(lo.real()).cell(lo.imag()).cell(bar).cell(v.asym_error).cell(scaled).cell(v.pass ? "yes" : "no");
    csv.end_row();
    if (v.study) {
      auto os = open_out(ctx.out, "study_" + job_name(jobs[i]) + ".csv");
      write_study_csv(os, *v.study);
    }
    std::cout << "verify " << r.edge.label() << " eps=" << sci(r.epsilon) << " exists=" << to_string(r.exists)
              << " oracle_count=" << v.oracle_count;
    if (v.study) std::cout << " |asym-oracle|/eps^3=" << sci(scaled);
    if (i > 0 && jobs[i - 1].edge.n == jobs[i].edge.n && jobs[i - 1].edge.side == jobs[i].edge.side &&
        res[i - 1].study && v.study)
      std::cout << " error_ratio=" << sci(res[i - 1].asym_error / v.asym_error);
    std::cout << (v.pass ? " PASS" : " FAIL") << (v.note.empty() ? "" : " (" + v.note + ")") << '\n';
    if (!v.pass) ++failures;
  }
  if (failures) throw ComparisonFailure(std::to_string(failures) + " verification case(s) failed");
}

void cmd_embedded_demo(const Context& ctx) {
  if (!embedded_runs(ctx)) throw ComparisonFailure("embedded example diagnostics failed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Floquet band edges and gap eigenvalues of localized perturbations"};
  app.require_subcommand(1);
  Options o;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "INI problem file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--lambda-max", o.lambda_max, "upper end of the band scan");
    sub->add_option("--jobs", o.jobs, "concurrent (edge, epsilon) jobs")->check(CLI::PositiveNumber);
  };
  auto* bands = app.add_subcommand("bands", "band diagram CSV and edge table");
  auto* gap = app.add_subcommand("gap-eig", "gap-eigenvalue reports per edge and epsilon");
  auto* verify = app.add_subcommand("verify", "asymptotics against the finite-difference oracle");
  auto* demo = app.add_subcommand("embedded-demo", "embedded eigenvalue example");
  for (auto* s : {bands, gap, verify, demo}) add_common(s);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return print_error("UsageError", 2, e.what());
  }

  try {
    Context ctx = load(o);
    if (bands->parsed()) cmd_bands(ctx);
    else if (gap->parsed()) cmd_gap_eig(ctx);
    else if (verify->parsed()) cmd_verify(ctx);
    else cmd_embedded_demo(ctx);
  } catch (const Error& e) {
    return print_error(to_string(e.code()), is_validation_error(e.code()) ? 2 : 3, e.what());
  } catch (const ComparisonFailure& e) {
    return print_error("ComparisonFailure", 4, e.what());
  } catch (const fs::filesystem_error& e) {
    return print_error("IoError", 2, e.what());
  } catch (const std::exception& e) {
    return print_error("InternalError", 3, e.what());
  }
  return 0;
}
