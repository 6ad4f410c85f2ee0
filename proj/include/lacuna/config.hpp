#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "lacuna/bands.hpp"
#include "lacuna/coefficients.hpp"
#include "lacuna/error.hpp"
#include "lacuna/oracle.hpp"
#include "lacuna/perturbation.hpp"

namespace lacuna {

/// A parsed problem file. Schema in README.md.
struct ProblemConfig {
  OperatorCoefficients coeffs;
  std::string variant = "none";
  std::optional<SupportInterval> support;
  PerturbationVariant fixed;  // every variant except embedded
  double alpha = 2.0;         // embedded only

  std::vector<double> epsilons{0.1};
  bool all_edges = true;
  std::vector<std::pair<int, Side>> edges;
  double lambda_max = 50.0;
  int band_samples = 2001;
  double tol = 1e-12;
  std::optional<std::pair<double, double>> window;
  int window_samples = 401;

  double r_factor = 30.0;
  double R = 0.0;  // 0: R = r_factor/√|λ − μ|
  double h = 1.0 / 64;
  std::optional<Window> oracle_window;
  double asym_const = 5.0;  // verify passes when |λ_asym − λ_oracle| ≤ asym_const·ε³

  bool has_perturbation() const { return variant != "none"; }

  /// The perturbation at a given ε; only the embedded example depends on ε.
  LocalizedPerturbation perturbation(double epsilon) const {
    if (variant == "embedded") return LocalizedPerturbation::embedded(alpha, epsilon);
    if (!has_perturbation()) return LocalizedPerturbation(support.value_or(SupportInterval::around(-1, 1)), Differential{});
    return LocalizedPerturbation(*support, fixed);
  }

  bool selects(const BandEdge& e) const {
    if (all_edges) return e.mu <= lambda_max;
    for (const auto& [n, s] : edges)
      if (e.n == n && e.side == s) return true;
    return false;
  }
};

namespace detail {

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  return out;
}

inline std::vector<std::string> words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

/// Field access with "line N: [section] key: ..." diagnostics.
class IniReader {
 public:
  IniReader(const std::string& text, std::filesystem::path base) : base_(std::move(base)) {
    std::istringstream in(text);
    std::ostringstream cleaned;
    std::string line, section;
    for (int n = 1; std::getline(in, line); ++n) {
      std::string t = line;
      t.erase(0, t.find_first_not_of(" \t"));
      if (!t.empty() && t[0] == '#') t[0] = ';';
      if (!t.empty() && t[0] == '[') section = t.substr(1, t.find(']') - 1);
      else if (!t.empty() && t[0] != ';' && t.find('=') != std::string::npos) {
        std::string key = t.substr(0, t.find('='));
        key.erase(key.find_last_not_of(" \t") + 1);
        lines_[section + "." + key] = n;
      }
      if (!t.empty() && t[0] == '[') section_lines_[section] = n;
      cleaned << t << '\n';
    }
    std::istringstream is(cleaned.str());
    try {
      boost::property_tree::ini_parser::read_ini(is, tree_);
    } catch (const boost::property_tree::ini_parser_error& e) {
      fail(ErrorCode::ConfigError, "line " + std::to_string(e.line()) + ": " + e.message());
    }
  }

  [[noreturn]] void error(const std::string& sec, const std::string& key, const std::string& why) const {
    auto it = lines_.find(sec + "." + key);
    std::string where = it != lines_.end() ? "line " + std::to_string(it->second) + ": " : "";
    fail(ErrorCode::ConfigError, where + "[" + sec + "] " + key + ": " + why);
  }

  bool has(const std::string& sec, const std::string& key) const { return tree_.get_child_optional(path(sec, key)).has_value(); }

  std::string text(const std::string& sec, const std::string& key) const {
    auto v = tree_.get_optional<std::string>(path(sec, key));
    if (!v) error(sec, key, "missing required field");
    return *v;
  }
  std::string text(const std::string& sec, const std::string& key, const std::string& def) const {
    return has(sec, key) ? text(sec, key) : def;
  }

  std::vector<double> numbers(const std::string& sec, const std::string& key, const std::string& s) const {
    std::vector<double> out;
    for (const auto& w : words(s)) out.push_back(to_double(sec, key, w));
    return out;
  }
  std::vector<double> numbers(const std::string& sec, const std::string& key) const { return numbers(sec, key, text(sec, key)); }

  double number(const std::string& sec, const std::string& key, double def) const {
    if (!has(sec, key)) return def;
    auto v = numbers(sec, key);
    if (v.size() != 1) error(sec, key, "expected one number");
    return v[0];
  }

  double to_double(const std::string& sec, const std::string& key, const std::string& w) const {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(w, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != w.size() || !std::isfinite(v)) error(sec, key, "'" + w + "' is not a finite number");
    return v;
  }

  /// Rejects sections and keys outside the schema.
  void check_keys(const std::map<std::string, std::set<std::string>>& schema) const {
    for (const auto& [sec, child] : tree_) {
      auto s = schema.find(sec);
      if (s == schema.end()) {
        auto it = section_lines_.find(sec);
        fail(ErrorCode::ConfigError,
             (it != section_lines_.end() ? "line " + std::to_string(it->second) + ": " : "") + "unknown section [" + sec + "]");
      }
      for (const auto& [key, v] : child)
        if (!s->second.count(key)) error(sec, key, "unknown field");
    }
  }

  const std::filesystem::path& base() const { return base_; }

 private:
  static boost::property_tree::ptree::path_type path(const std::string& sec, const std::string& key) {
    return boost::property_tree::ptree::path_type(sec + "/" + key, '/');
  }

  boost::property_tree::ptree tree_;
  std::map<std::string, int> lines_, section_lines_;
  std::filesystem::path base_;
};

inline PiecewisePeriodicFn parse_periodic(const IniReader& r, const std::string& name) {
  const std::string sec = "coefficients";
  std::vector<double> bp{0.0};
  if (r.has(sec, name + "_breakpoints")) bp = r.numbers(sec, name + "_breakpoints");
  const std::string key = name + "_segments";
  std::vector<Segment> segs;
  for (const auto& part : split(r.text(sec, key, name == "p" ? "constant 1" : "constant 0"), '|')) {
    auto w = words(part);
    if (w.empty()) r.error(sec, key, "empty segment descriptor");
    std::vector<double> v;
    for (std::size_t i = 1; i < w.size(); ++i) v.push_back(r.to_double(sec, key, w[i]));
    if (w[0] == "constant") {
      if (v.size() != 1) r.error(sec, key, "constant takes one value");
      segs.push_back(ConstantSeg{v[0]});
    } else if (w[0] == "poly") {
      if (v.empty()) r.error(sec, key, "poly needs coefficients c0 c1 ...");
      segs.push_back(PolySeg{v});
    } else if (w[0] == "trig") {
      if (v.empty() || v.size() % 2 != 1) r.error(sec, key, "trig takes a0 followed by pairs a_k b_k");
      TrigSeg t{v[0], {}, {}};
      for (std::size_t i = 1; i < v.size(); i += 2) {
        t.a.push_back(v[i]);
        t.b.push_back(v[i + 1]);
      }
      segs.push_back(t);
    } else if (w[0] == "sampled") {
      segs.push_back(SampledSeg{v});
    } else {
      r.error(sec, key, "unknown segment kind '" + w[0] + "'");
    }
  }
  if (segs.size() != bp.size()) r.error(sec, key, "needs one segment per breakpoint");
  try {
    return PiecewisePeriodicFn(bp, segs);
  } catch (const Error& e) {
    r.error(sec, key, e.what());
  }
}

inline Profile parse_profile(const IniReader& r, const std::string& sec, const std::string& key) {
  auto w = words(r.text(sec, key));
  if (w.empty()) r.error(sec, key, "empty profile");
  std::vector<double> v;
  for (std::size_t i = 1; i < w.size(); ++i) v.push_back(r.to_double(sec, key, w[i]));
  auto amplitude = [&](std::size_t from) {
    if (v.size() > from + 2) r.error(sec, key, "too many values");
    return cd(v.size() > from ? v[from] : 1.0, v.size() > from + 1 ? v[from + 1] : 0.0);
  };
  const std::string& kind = w[0];
  if (kind == "zero") return Profile::zero();
  if (kind == "constant") {
    if (v.empty()) r.error(sec, key, "constant needs a value");
    return Profile::constant(amplitude(0));
  }
  if (kind == "indicator" || kind == "bump" || kind == "gaussian") {
    if (v.size() < 2) r.error(sec, key, kind + " needs two parameters");
    if (kind == "indicator") return Profile::indicator(v[0], v[1], amplitude(2));
    if (kind == "bump") return Profile::bump(v[0], v[1], amplitude(2));
    return Profile::gaussian(v[0], v[1], amplitude(2));
  }
  if (kind == "sampled") {
    if (v.size() < 4 || v.size() % 2) r.error(sec, key, "sampled takes pairs x value");
    std::vector<double> xs;
    std::vector<cd> ys;
    for (std::size_t i = 0; i < v.size(); i += 2) {
      xs.push_back(v[i]);
      ys.push_back(v[i + 1]);
    }
    try {
      return Profile::sampled(xs, ys);
    } catch (const Error& e) {
      r.error(sec, key, e.what());
    }
  }
  r.error(sec, key, "unknown profile kind '" + kind + "'");
}

/// Kernel table from CSV rows x,y,Re,Im (header optional) on a full tensor grid.
inline IntegralKernel load_kernel_csv(const IniReader& r, const std::string& sec, const std::string& key,
                                      const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) r.error(sec, key, "cannot open kernel file " + file.string());
  std::vector<std::array<double, 4>> rows;
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    auto f = split(line, ',');
    std::array<double, 4> row{};
    bool ok = f.size() == 4;
    for (std::size_t i = 0; ok && i < 4; ++i) {
      try {
        std::size_t used = 0;
        row[i] = std::stod(f[i], &used);
      } catch (const std::exception&) {
        ok = false;
      }
    }
    if (!ok) {
      if (n == 1) continue;  // header
      r.error(sec, key, file.filename().string() + " row " + std::to_string(n) + " is not x,y,Re,Im");
    }
    rows.push_back(row);
  }
  std::set<double> xs, ys;
  for (const auto& row : rows) {
    xs.insert(row[0]);
    ys.insert(row[1]);
  }
  std::vector<double> xv(xs.begin(), xs.end()), yv(ys.begin(), ys.end());
  if (rows.size() != xv.size() * yv.size()) r.error(sec, key, "kernel rows do not form a full tensor grid");
  Eigen::MatrixXcd values(xv.size(), yv.size());
  for (const auto& row : rows) {
    auto i = std::lower_bound(xv.begin(), xv.end(), row[0]) - xv.begin();
    auto j = std::lower_bound(yv.begin(), yv.end(), row[1]) - yv.begin();
    values(i, j) = cd(row[2], row[3]);
  }
  try {
    return IntegralKernel::table(xv, yv, values);
  } catch (const Error& e) {
    r.error(sec, key, e.what());
  }
}

}  // namespace detail

/// Parses a problem file; every module-level invariant is checked here.
inline ProblemConfig parse_config(const std::string& text, const std::filesystem::path& base = ".") {
  detail::IniReader r(text, base);
  r.check_keys({
      {"coefficients", {"p_breakpoints", "p_segments", "q_breakpoints", "q_segments"}},
      {"perturbation",
       {"variant", "q_lo", "q_hi", "x0", "x1", "b0", "b1", "b2", "kernel", "beta", "b", "l_points", "l_weight", "alpha"}},
      {"run", {"epsilons", "edges", "lambda_max", "band_samples", "tol", "window", "window_samples"}},
      {"oracle", {"r_factor", "R", "h", "window", "asym_const"}},
  });

  ProblemConfig cfg;
  {
    auto p = detail::parse_periodic(r, "p");
    auto q = detail::parse_periodic(r, "q");
    try {
      cfg.coeffs = OperatorCoefficients(p, q);
    } catch (const Error& e) {
      r.error("coefficients", "p_segments", e.what());
    }
  }

  const std::string P = "perturbation";
  cfg.variant = r.text(P, "variant", "none");
  static const std::set<std::string> variants{"none",     "differential",        "integral_kernel",
                                              "rank_one", "functional_rank_one", "embedded"};
  if (!variants.count(cfg.variant)) r.error(P, "variant", "unknown variant '" + cfg.variant + "'");
  if (cfg.variant == "embedded") {
    cfg.alpha = r.number(P, "alpha", 2.0);
  } else if (cfg.has_perturbation()) {
    const double lo = r.number(P, "q_lo", NAN), hi = r.number(P, "q_hi", NAN);
    if (!r.has(P, "q_lo")) r.error(P, "q_lo", "missing required field");
    if (!r.has(P, "q_hi")) r.error(P, "q_hi", "missing required field");
    if (!(lo < hi)) r.error(P, "q_hi", "support interval needs q_lo < q_hi");
    SupportInterval s = SupportInterval::around(lo, hi);
    if (r.has(P, "x0") || r.has(P, "x1")) {
      s.x0 = r.number(P, "x0", s.x0);
      s.x1 = r.number(P, "x1", s.x1);
    }
    try {
      s.validate();
    } catch (const Error& e) {
      r.error(P, "x0", e.what());
    }
    cfg.support = s;

    auto profile_or_zero = [&](const std::string& key) {
      return r.has(P, key) ? detail::parse_profile(r, P, key) : Profile::zero();
    };
    if (cfg.variant == "differential") {
      cfg.fixed = Differential{profile_or_zero("b2"), profile_or_zero("b1"), profile_or_zero("b0")};
    } else if (cfg.variant == "integral_kernel") {
      auto w = detail::words(r.text(P, "kernel"));
      if (w.size() >= 2 && w[0] == "csv") {
        cfg.fixed = detail::load_kernel_csv(r, P, "kernel", r.base() / w[1]);
      } else if (w.size() >= 2 && w[0] == "exp") {
        std::vector<double> v;
        for (std::size_t i = 1; i < w.size(); ++i) v.push_back(r.to_double(P, "kernel", w[i]));
        if (v.size() > 3) r.error(P, "kernel", "exp takes RATE [re [im]]");
        const double a = v[0];
        const cd amp(v.size() > 1 ? v[1] : 1.0, v.size() > 2 ? v[2] : 0.0);
        cfg.fixed = IntegralKernel{[a, amp](double x, double y) { return amp * std::exp(-a * std::abs(x - y)); }, {}};
      } else {
        r.error(P, "kernel", "expected 'csv PATH' or 'exp RATE [re [im]]'");
      }
    } else if (cfg.variant == "rank_one") {
      auto beta = r.numbers(P, "beta");
      if (beta.empty() || beta.size() > 2) r.error(P, "beta", "expected 're [im]'");
      cfg.fixed = RankOneKernel{cd(beta[0], beta.size() > 1 ? beta[1] : 0.0), detail::parse_profile(r, P, "b")};
    } else if (cfg.variant == "functional_rank_one") {
      Functional l;
      if (r.has(P, "l_points"))
        for (const auto& part : detail::split(r.text(P, "l_points"), '|')) {
          auto v = r.numbers(P, "l_points", part);
          if (v.size() < 2 || v.size() > 4) r.error(P, "l_points", "each point is 'x c0 [c1 [c2]]'");
          if (!s.contains(v[0])) r.error(P, "l_points", "functional point lies outside Q");
          l.points.push_back(PointTerm{v[0], v[1], v.size() > 2 ? v[2] : 0.0, v.size() > 3 ? v[3] : 0.0});
        }
      l.weight = profile_or_zero("l_weight");
      cfg.fixed = FunctionalRankOne{detail::parse_profile(r, P, "b"), l};
    }
  }

  const std::string R = "run";
  if (r.has(R, "epsilons")) cfg.epsilons = r.numbers(R, "epsilons");
  if (cfg.epsilons.empty()) r.error(R, "epsilons", "needs at least one value");
  for (double e : cfg.epsilons)
    if (!(e > 0)) r.error(R, "epsilons", "every epsilon must be positive");
  if (cfg.variant == "embedded") {
    for (double e : cfg.epsilons) {
      try {
        embedded_params(cfg.alpha, e);
      } catch (const Error& err) {
        r.error(R, "epsilons", err.what());
      }
    }
  }
  const std::string edges = r.text(R, "edges", "all");
  if (edges != "all") {
    cfg.all_edges = false;
    for (const auto& w : detail::words(edges)) {
      const char s = w.back();
      int n = -1;
      try {
        std::size_t used = 0;
        n = std::stoi(w.substr(0, w.size() - 1), &used);
        if (used != w.size() - 1) n = -1;
      } catch (const std::exception&) {
      }
      if (n < 0 || (s != '+' && s != '-') || (n == 0 && s == '-'))
        r.error(R, "edges", "'" + w + "' is not an edge label like 0+, 1-, 1+");
      cfg.edges.emplace_back(n, s == '+' ? Side::Plus : Side::Minus);
    }
  }
  cfg.lambda_max = r.number(R, "lambda_max", cfg.lambda_max);
  cfg.band_samples = static_cast<int>(r.number(R, "band_samples", cfg.band_samples));
  if (cfg.band_samples < 2) r.error(R, "band_samples", "needs at least 2 samples");
  cfg.tol = r.number(R, "tol", cfg.tol);
  if (!(cfg.tol > 0 && cfg.tol < 1e-3)) r.error(R, "tol", "tolerance must lie in (0, 1e-3)");
  if (r.has(R, "window")) {
    auto v = r.numbers(R, "window");
    if (v.size() != 2 || !(v[0] < v[1])) r.error(R, "window", "expected 'a b' with a < b");
    cfg.window = std::pair{v[0], v[1]};
  }
  cfg.window_samples = static_cast<int>(r.number(R, "window_samples", cfg.window_samples));
  if (cfg.window_samples < 2) r.error(R, "window_samples", "needs at least 2 samples");

  const std::string O = "oracle";
  cfg.r_factor = r.number(O, "r_factor", cfg.r_factor);
  cfg.R = r.number(O, "R", cfg.R);
  cfg.h = r.number(O, "h", cfg.h);
  cfg.asym_const = r.number(O, "asym_const", cfg.asym_const);
  if (!(cfg.r_factor > 0)) r.error(O, "r_factor", "must be positive");
  if (cfg.R < 0) r.error(O, "R", "must be positive (or 0 for automatic)");
  if (!(cfg.h > 0 && cfg.h <= 1.0 / 16)) r.error(O, "h", "grid step must lie in (0, 1/16]");
  if (r.has(O, "window")) {
    auto v = r.numbers(O, "window");
    if (v.size() != 4 || !(v[0] < v[1]) || !(v[2] < v[3]))
      r.error(O, "window", "expected 're_lo re_hi im_lo im_hi' with lo < hi");
    cfg.oracle_window = Window{v[0], v[1], v[2], v[3]};
  }
  return cfg;
}

inline ProblemConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  require(static_cast<bool>(in), ErrorCode::ConfigError, "cannot open config file " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), file.parent_path());
}

}  // namespace lacuna
