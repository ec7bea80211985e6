#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "errors.hpp"
#include "geometry.hpp"
#include "groundstate.hpp"
#include "projection.hpp"
#include "solver.hpp"
#include "spike.hpp"

namespace spikelab::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

enum ExitCode : int { kOk = 0, kParameter = 2, kNumerical = 3, kClaim = 4, kUsage = 64 };

// One claim check. criterion 0 marks auxiliary checks outside the numbered list.
struct Check {
  std::string name;
  int criterion = 0;
  double value = 0;
  std::string tolerance;
  bool pass = false;
  std::string artifact;
};

inline json to_json(const Check& c) {
  return {{"name", c.name}, {"criterion", c.criterion}, {"value", c.value},
          {"tolerance", c.tolerance}, {"pass", c.pass}, {"artifact", c.artifact}};
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline std::string num(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  return buf;
}

inline void write_csv(const fs::path& path, const Table& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw NumericalFailure("cannot write " + path.string());
  const auto line = [&](const std::vector<std::string>& r) {
    for (std::size_t i = 0; i < r.size(); ++i) f << (i ? "," : "") << r[i];
    f << '\n';
  };
  line(t.header);
  for (const auto& r : t.rows) line(r);
}

// NaN and infinities are not representable in JSON
inline json jnum(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ull;
  return h;
}

inline std::string config_hash(const std::string& command, const json& params) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(json{{"command", command}, {"params", params}}.dump())));
  return buf;
}

struct Outcome {
  json results = json::object();
  std::vector<Check> checks;
  std::map<std::string, Table> tables;  // artifact suffix -> table
  bool numerical_failure = false;
  std::string failure;
};

struct Param {
  std::string name;
  json value;  // default; its type fixes how flags are parsed
  std::string help;
};

struct Command {
  std::string name;
  std::string help;
  std::vector<Param> params;
  std::function<Outcome(const json&, const std::string&)> run;  // (params, artifact stem)
};

namespace detail {

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& s, const std::string& what) {
  std::size_t used = 0;
  double v;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ParameterError(what + ": not a number: '" + s + "'");
  }
  if (used != s.size()) throw ParameterError(what + ": not a number: '" + s + "'");
  return v;
}

// flag text converted to the JSON type of the default
inline json parse_flag(const Param& p, const std::string& text) {
  const json& d = p.value;
  if (d.is_number_integer()) {
    const double v = parse_double(text, p.name);
    if (v != std::floor(v)) throw ParameterError(p.name + ": expected an integer");
    return static_cast<long long>(v);
  }
  if (d.is_number()) return parse_double(text, p.name);
  if (d.is_array()) {
    json a = json::array();
    for (const auto& t : split(text, ',')) a.push_back(parse_double(t, p.name));
    return a;
  }
  if (d.is_boolean()) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ParameterError(p.name + ": expected true or false");
  }
  return text;
}

inline void check_type(const Param& p, const json& v) {
  const json& d = p.value;
  const bool ok = d.is_number() ? v.is_number()
                  : d.is_array() ? v.is_array() && std::all_of(v.begin(), v.end(), [](const json& x) { return x.is_number(); })
                  : d.is_boolean() ? v.is_boolean()
                                   : v.is_string();
  if (!ok) throw ParameterError("config field '" + p.name + "' has the wrong type");
  if (d.is_number_integer() && v.get<double>() != std::floor(v.get<double>()))
    throw ParameterError("config field '" + p.name + "' must be an integer");
}

inline std::vector<double> dlist(const json& v) { return v.get<std::vector<double>>(); }

inline const GroundState& ground_state(int n, double p) {
  static std::map<std::pair<int, double>, GroundState> cache;
  auto it = cache.find({n, p});
  if (it == cache.end()) it = cache.emplace(std::pair{n, p}, solve_ground_state(n, p)).first;
  return it->second;
}

inline Check check_le(std::string name, int crit, double value, double bound, std::string artifact) {
  return {std::move(name), crit, value, "<= " + num(bound), value <= bound, std::move(artifact)};
}

inline Check check_ge(std::string name, int crit, double value, double bound, std::string artifact) {
  return {std::move(name), crit, value, ">= " + num(bound), value >= bound, std::move(artifact)};
}

inline Check check_gt(std::string name, int crit, double value, double bound, std::string artifact) {
  return {std::move(name), crit, value, "> " + num(bound), value > bound, std::move(artifact)};
}

inline Check check_in(std::string name, int crit, double value, double lo, double hi, std::string artifact) {
  return {std::move(name), crit, value, "in [" + num(lo) + ", " + num(hi) + "]", value >= lo && value <= hi,
          std::move(artifact)};
}

// energy-interaction rate claimed for each regime
inline double claimed_rate(double alpha) {
  return regime_of(alpha) == Regime::Acute ? -(1 + std::numbers::sqrt2 * std::sin(alpha)) : -2.0;
}

inline std::vector<Point> window_points(const WedgeDomain& dom, int count, unsigned seed, double margin) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(-dom.D() / 4, dom.D() / 4);
  std::vector<Point> pts;
  for (int tries = 0; static_cast<int>(pts.size()) < count; ++tries) {
    if (tries > 1000 * count) throw ParameterError("window too small for the requested points");
    const Point x{U(rng), U(rng)};
    if (in_window(dom, x, margin)) pts.push_back(x);
  }
  return pts;
}

} // namespace detail

// ---------------------------------------------------------------- subcommands

inline Outcome cmd_groundstate(const json& P, const std::string& stem) {
  const int n = P["n"];
  const double p = P["p"];
  if (n < 1 || n > 3) throw ParameterError("n must be 1, 2 or 3");
  const GroundState gs = solve_ground_state(n, p, P["tol"].get<double>());
  const MomentIntegrals m = moment_integrals(gs);
  Outcome o;
  o.results = {{"u0", gs.u0}, {"c_np", gs.c_np}, {"C0_tilde", m.C0_tilde}, {"C1_tilde", m.C1_tilde},
               {"bisection_steps", gs.bisection_steps}, {"ode_residual", ode_residual(gs)},
               {"log_slope_18", log_slope_at(gs, 18.0)}};
  Table t{{"r", "U", "dU"}, {}};
  for (std::size_t i = 0; i < gs.u.size(); i += 10) t.rows.push_back({num(i * gs.h), num(gs.u[i]), num(gs.du[i])});
  const std::string art = stem + ".csv";
  o.tables[""] = std::move(t);
  if (n == 1) {
    // U = A sech^{2/(p-1)}((p-1) r / 2), A = ((p+1)/2)^{1/(p-1)}
    const double A = std::pow((p + 1) / 2, 1 / (p - 1));
    double err = 0;
    for (std::size_t i = 0; i < gs.u.size(); ++i)
      err = std::max(err, std::abs(gs.u[i] - A * std::pow(1 / std::cosh((p - 1) * i * gs.h / 2), 2 / (p - 1))));
    o.results["closed_form_error"] = err;
    o.checks.push_back(detail::check_le("closed-form sup error", 1, err, 1e-6, art));
    o.checks.push_back(detail::check_le("|U'/U(18) + 1|", 1, std::abs(log_slope_at(gs, 18.0) + 1), 1e-2, art));
  } else {
    o.checks.push_back(detail::check_le("ODE residual", 0, ode_residual(gs), 1e-8, art));
  }
  return o;
}

inline Outcome cmd_geometry(const json& P, const std::string& stem) {
  const double alpha = P["alpha"];
  const WedgeDomain dom = build_domain(alpha, P["D"].get<double>());
  const int m = P["m"], count = P["points"];
  const unsigned seed = P["seed"].get<unsigned>();
  if (count < 1) throw ParameterError("points must be positive");
  Outcome o;
  const std::string art = stem + ".csv";
  Table t{{"x", "y", "limit", "oracle", "abs_diff"}, {}};
  double worst = 0;
  for (const Point& x : detail::window_points(dom, count, seed, 0.0)) {
    const double a = limit_profile(x, dom), b = boundary_infimum_oracle(x, dom, m);
    worst = std::max(worst, std::abs(a - b));
    t.rows.push_back({num(x.x), num(x.y), num(a), num(b), num(std::abs(a - b))});
  }
  o.tables[""] = std::move(t);
  o.checks.push_back(detail::check_le("closed form vs boundary oracle", 5, worst, 2.0 / m + 1e-6, art));

  std::vector<Point> off;
  for (const Point& x : detail::window_points(dom, count, seed + 1, 0.01))
    if (std::abs(x.y) >= 1e-2 && dist(x, dom.q0()) >= 1e-2) off.push_back(x);
  const EikonalReport e = eikonal_gradient_check(dom, off);
  o.checks.push_back(detail::check_le("| |grad phi| - 1 |", 6, e.max_deviation, 1e-4, art));
  o.results = {{"oracle_max_diff", worst}, {"eikonal_points", e.tested}, {"eikonal_max_deviation", e.max_deviation}};

  if (dom.regime() == Regime::Acute) {
    double stat = 0;
    for (Point x : detail::window_points(dom, count, seed + 2, 0.01)) {
      x.y = std::abs(x.y);
      stat = std::max(stat, std::abs(minimizer_point(x, alpha).stationarity));
    }
    o.results["minimizer_stationarity"] = stat;
    o.checks.push_back(detail::check_le("minimizer stationarity", 5, stat, 1e-8, art));
  }
  return o;
}

inline Outcome cmd_project(const json& P, const std::string& stem) {
  const double alpha = P["alpha"];
  const WedgeDomain dom = build_domain(alpha, P["D"].get<double>());
  const GroundState& gs = detail::ground_state(2, 3.0);
  const ConvergenceStudy s = convergence_study(dom, gs, detail::dlist(P["d"]));
  Outcome o;
  const std::string art = stem + ".csv";
  Table t{{"d", "h", "sup_error", "min_value", "Xi_log_norm", "gradient_bound_stat", "boundary_error", "lower_bound_ok"}, {}};
  double worst_margin = INFINITY;
  for (const auto& r : s.rows) {
    t.rows.push_back({num(r.d), num(r.h), num(r.sup_error), num(r.min_value), num(r.Xi_log_norm),
                      num(r.gradient_stat), num(r.boundary_error), r.lower_bound_ok ? "1" : "0"});
    worst_margin = std::min(worst_margin, r.min_value - (dom.phi_lower_bound() - r.h));
  }
  o.tables[""] = std::move(t);
  const int crit = dom.regime() == Regime::Reflex ? 3 : 2;
  double ratio = 0;
  for (std::size_t i = 1; i < s.rows.size(); ++i) ratio = std::max(ratio, s.rows[i].sup_error / s.rows[i - 1].sup_error);
  o.checks.push_back(detail::check_le("sup error step ratio", crit, ratio, 1.1, art));
  o.checks.push_back(detail::check_le("sup error at largest d", crit, s.rows.back().sup_error, 0.15, art));
  o.checks.push_back(detail::check_ge("min Phi - (lower bound - h)", 4, worst_margin, 0.0, art));
  o.results = {{"monotone", s.monotone}, {"final_ok", s.final_ok}, {"lower_bounds_ok", s.lower_bounds_ok},
               {"gradient_spread", s.gradient_spread}, {"lower_bound", dom.phi_lower_bound()}};
  return o;
}

inline Outcome cmd_xi_rates(const json& P, const std::string& stem) {
  const WedgeDomain dom = build_domain(P["alpha"].get<double>(), P["D"].get<double>());
  const GroundState& gs = detail::ground_state(2, 3.0);
  const XiRate r = xi_d_rate(dom, gs, P["d"].get<double>(), P["delta"].get<double>());
  Outcome o;
  const std::string art = stem + ".csv";
  o.tables[""] = Table{{"d", "delta", "Xi_log_norm", "dXi_rate"}, {{num(r.d), num(r.delta), num(r.xi_rate), num(r.rate)}}};
  o.results = {{"Xi_log_norm", r.xi_rate}, {"dXi_rate", r.rate}};
  o.checks.push_back(detail::check_le("|Xi log norm - 1|", 7, std::abs(r.xi_rate - 1), 0.1, art));
  o.checks.push_back(detail::check_ge("dXi/dd rate", 7, r.rate, 0.85, art));
  return o;
}

inline Outcome cmd_landscape(const json& P, const std::string& stem) {
  const double alpha = P["alpha"];
  const GroundState& gs = detail::ground_state(2, 3.0);
  CutoffSpec cut;
  cut.mu0 = P["mu0"];
  cut.D = P["cutoff_D"];
  std::vector<int> sides;
  for (double s : detail::dlist(P["sides"])) sides.push_back(static_cast<int>(s));
  const EnergyLandscape L =
      energy_landscape(alpha, P["eps"].get<double>(), detail::dlist(P["d"]), gs, cut, sides, P["C_omega"].get<double>());
  Outcome o;
  const std::string art = stem + ".csv";
  Table t{{"side", "d", "I", "dI", "dI_dd", "interaction", "floor", "peak", "fitted"}, {}};
  for (const auto& r : L.rows)
    t.rows.push_back({std::to_string(r.side), num(r.d), num(r.I), num(r.dI), num(r.dI_dd), num(r.interaction),
                      num(r.floor), num(r.peak), r.fitted ? "1" : "0"});
  o.tables[""] = std::move(t);
  const double expected = P["expected_rate"].is_number() && P["expected_rate"].get<double>() != 0
                              ? P["expected_rate"].get<double>()
                              : detail::claimed_rate(alpha);
  o.results = {{"fitted_rate", jnum(L.fitted_rate)}, {"fit_r2", jnum(L.fit_r2)}, {"fit_points", L.fit_points},
               {"expected_rate", expected}, {"I_inf", L.I_inf}, {"evenness", L.evenness}};
  if (L.fit_points < 2) {
    o.numerical_failure = true;
    o.failure = "fewer than 2 landscape points above the floor";
    return o;
  }
  o.checks.push_back(detail::check_le("|fitted rate / expected - 1|", 8, std::abs(L.fitted_rate / expected - 1), 0.1, art));
  o.checks.push_back(detail::check_ge("fit points", 8, L.fit_points, 5, art));
  if (sides.size() > 1) o.checks.push_back(detail::check_le("side evenness", 11, L.evenness, 1e-10, art));
  return o;
}

inline void solve_checks(Outcome& o, double min_interior, double trace, double energy, double init_energy,
                         double second_ratio, const std::string& art) {
  o.checks.push_back(detail::check_gt("min interior value", 11, min_interior, 0.0, art));
  o.checks.push_back(detail::check_le("max |u| on Dirichlet nodes", 11, trace, 0.0, art));
  o.checks.push_back(detail::check_le("energy - initializer energy", 11, energy - init_energy, 1e-10, art));
  o.checks.push_back(detail::check_le("second maximum ratio", 11, second_ratio, 0.5, art));
}

inline Outcome cmd_solve_mixed(const json& P, const std::string& stem) {
  const std::string domain = P["domain"];
  const double eps = P["eps"], p = P["p"];
  const GroundState& gs = detail::ground_state(2, p);
  Outcome o;
  const std::string art = stem + ".csv";
  ScalarField u;
  Table sum{{"eps", "h", "status", "max_u", "Qx", "Qy", "dist_to_interface", "dist_to_boundary", "residual",
             "iterations", "energy", "init_energy", "min_interior", "dirichlet_trace", "second_ratio"}, {}};
  if (domain == "keyhole") {
    PeakStudyOptions opt;
    opt.h_factor = P["h_factor"];
    opt.tol = P["tol"];
    PeakSolve s = solve_peak(Keyhole(P["alpha"].get<double>()), p, eps, gs, opt);
    const PeakRow& r = s.row;
    sum.rows.push_back({num(r.eps), num(r.h), r.status, num(r.max_u), num(r.q.x), num(r.q.y), num(r.dist_gamma),
                        num(r.dist_boundary), num(r.residual), std::to_string(r.iterations), num(r.energy),
                        num(r.init_energy), num(r.min_interior), num(r.dirichlet_trace), num(r.second_ratio)});
    o.results = {{"status", r.status}, {"dist_to_interface", r.dist_gamma}, {"scan_d", r.scan_d},
                 {"reduced_d", r.reduced_d}, {"max_u", r.max_u}, {"Qx", r.q.x}, {"Qy", r.q.y}};
    if (r.status != "converged") {
      o.numerical_failure = true;
      o.failure = "mixed solve: " + r.status;
    } else {
      solve_checks(o, r.min_interior, r.dirichlet_trace, r.energy, r.init_energy, r.second_ratio, art);
      o.checks.push_back(detail::check_ge("dist(Q, Gamma) / eps", 9, r.dist_gamma / eps, 1.0, art));
    }
    u = std::move(s.u);
  } else if (domain == "disc") {
    const double R = P["R"];
    if (!(R > 0)) throw ParameterError("R must be positive");
    if (!(eps > 0 && eps < 1)) throw ParameterError("eps must lie in (0, 1)");
    const DiscShape disc{{0, 0}, R};
    const GridPtr g = make_cut_grid(disc, P["h_factor"].get<double>() * eps, Point{R, 0});
    MixedSolve s = solve_mixed(g, eps, p, boundary_ansatz(g, {R, 0}, eps, gs), P["tol"].get<double>());
    o.results = {{"status", to_string(s.status)}};
    if (s.status != NewtonStatus::Converged) {
      o.numerical_failure = true;
      o.failure = "mixed solve: " + to_string(s.status);
    } else {
      const PeakLocation pk = locate_peak(s.u);
      const double db = disc.nearest_boundary(pk.q).distance;
      sum.rows.push_back({num(eps), num(g->h), to_string(s.status), num(pk.value), num(pk.q.x), num(pk.q.y), "nan",
                          num(db), num(s.residual), std::to_string(s.iterations), num(s.energy),
                          num(s.init_energy), num(s.min_interior), num(s.dirichlet_trace), num(pk.second_ratio)});
      o.results.update({{"max_u", pk.value}, {"Qx", pk.q.x}, {"Qy", pk.q.y}, {"dist_to_boundary", db}});
      solve_checks(o, s.min_interior, s.dirichlet_trace, s.energy, s.init_energy, pk.second_ratio, art);
    }
    u = std::move(s.u);
  } else {
    throw ParameterError("domain must be 'keyhole' or 'disc'");
  }
  o.tables[""] = std::move(sum);
  if (u.grid) {
    Table f{{"x", "y", "u"}, {}};
    const Grid2D& g = *u.grid;
    for (std::size_t k = 0; k < g.size(); ++k)
      if (g.active(k)) f.rows.push_back({num(g.point(k).x), num(g.point(k).y), num(u.v[k])});
    o.tables["_field"] = std::move(f);
  }
  return o;
}

inline Outcome cmd_peak_scaling(const json& P, const std::string& stem) {
  const double p = P["p"];
  const GroundState& gs = detail::ground_state(2, p);
  PeakStudyOptions opt;
  opt.h_factor = P["h_factor"];
  opt.tol = P["tol"];
  opt.scan_lo = P["scan_lo"];
  opt.scan_step = P["scan_step"];
  opt.scan_hi_factor = P["scan_hi_factor"];
  opt.crop_margin = P["crop_margin"];
  const std::vector<double> band = detail::dlist(P["band"]);
  if (band.size() != 2 || !(band[0] < band[1])) throw ParameterError("band must be two increasing numbers");
  const PeakTrace tr = peak_scaling_study(Keyhole(P["alpha"].get<double>()), p, detail::dlist(P["eps"]), gs, opt);
  Outcome o;
  const std::string art = stem + ".csv";
  Table t{{"eps", "max_u", "Qx", "Qy", "dist_to_interface", "dist_to_boundary", "status", "h", "residual",
           "iterations", "scan_d", "reduced_d", "second_ratio", "min_interior", "dirichlet_trace"}, {}};
  int failed = 0;
  for (const auto& r : tr.rows) {
    t.rows.push_back({num(r.eps), num(r.max_u), num(r.q.x), num(r.q.y), num(r.dist_gamma), num(r.dist_boundary),
                      r.status, num(r.h), num(r.residual), std::to_string(r.iterations), num(r.scan_d),
                      num(r.reduced_d), num(r.second_ratio), num(r.min_interior), num(r.dirichlet_trace)});
    if (!r.ok) {
      ++failed;
      continue;
    }
    o.checks.push_back(detail::check_gt("min interior value, eps = " + num(r.eps), 11, r.min_interior, 0.0, art));
    o.checks.push_back(detail::check_le("Dirichlet trace, eps = " + num(r.eps), 11, r.dirichlet_trace, 0.0, art));
    o.checks.push_back(detail::check_le("second maximum ratio, eps = " + num(r.eps), 11, r.second_ratio, 0.5, art));
  }
  o.tables[""] = std::move(t);
  o.results = {{"slope", jnum(tr.slope)}, {"slope_stderr", jnum(tr.slope_stderr)}, {"intercept", jnum(tr.intercept)},
               {"r2", jnum(tr.r2)}, {"fitted", tr.fitted}, {"monotone", tr.monotone}, {"failed", failed}};
  if (tr.fitted < 2) {
    o.numerical_failure = true;
    o.failure = "fewer than 2 converged peak solves";
    return o;
  }
  o.checks.push_back(detail::check_in("peak distance slope", 9, tr.slope, band[0], band[1], art));
  o.checks.push_back(detail::check_le("failed solves", 9, failed, 0, art));
  o.checks.push_back({"peak distance monotone in eps", 11, tr.monotone ? 1.0 : 0.0, "== 1", tr.monotone, art});
  return o;
}

inline Outcome cmd_curvature(const json& P, const std::string& stem) {
  const double p = P["p"];
  const CurvatureFit cf = neumann_curvature_fit(detail::dlist(P["R"]), detail::dlist(P["eps"]), p,
                                                detail::ground_state(2, p), P["h_factor"].get<double>());
  Outcome o;
  const std::string art = stem + ".csv";
  Table t{{"R", "eps", "energy"}, {}};
  for (const auto& r : cf.rows) t.rows.push_back({num(r.R), num(r.eps), num(r.energy)});
  o.tables[""] = std::move(t);
  o.results = {{"C0_fit", cf.C0_fit}, {"C1_fit", cf.C1_fit}, {"C0_tilde", cf.C0_tilde}, {"C1_tilde", cf.C1_tilde},
               {"flat_ratio", cf.flat_ratio}};
  o.checks.push_back(detail::check_le("|C0_fit / C0_tilde - 1|", 10, std::abs(cf.C0_fit / cf.C0_tilde - 1), 0.1, art));
  o.checks.push_back(detail::check_gt("C1_fit", 10, cf.C1_fit, 0.0, art));
  o.checks.push_back(detail::check_le("|flat row / C0_tilde - 1|", 10, std::abs(cf.flat_ratio - 1), 0.02, art));
  return o;
}

// ---------------------------------------------------------------- report

namespace detail {

// header plus rows of equal width, printable ASCII only
inline bool csv_readable(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return false;
  std::string line;
  std::size_t width = 0, rows = 0;
  while (std::getline(f, line)) {
    if (line.empty()) return false;
    for (unsigned char c : line)
      if (c < 0x20 || c > 0x7e) return false;
    const std::size_t w = std::count(line.begin(), line.end(), ',') + 1;
    if (rows == 0) width = w;
    else if (w != width) return false;
    ++rows;
  }
  return rows > 0;
}

} // namespace detail

struct ReportRow {
  std::string source, name, tolerance, status, artifact;
  int criterion = 0;
  double value = 0;
};

struct Report {
  std::vector<ReportRow> rows;
  std::vector<int> gaps;  // criteria 1..11 without any check
  int failed = 0, unreadable = 0;
};

inline Report build_report(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ParameterError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".json" && e.path().filename() != "report.json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  Report rep;
  for (const fs::path& f : files) {
    const std::string src = f.filename().string();
    json doc;
    try {
      std::ifstream in(f);
      doc = json::parse(in);
      if (!doc.contains("checks")) continue;  // not a run document
    } catch (const std::exception&) {
      rep.rows.push_back({src, "*", "", "UNREADABLE", "", 0, 0});
      ++rep.unreadable;
      continue;
    }
    for (const json& c : doc["checks"]) {
      ReportRow r;
      r.source = src;
      try {
        r.name = c.at("name");
        r.criterion = c.at("criterion");
        r.value = c.at("value").is_number() ? c.at("value").get<double>() : NAN;
        r.tolerance = c.at("tolerance");
        r.artifact = c.at("artifact");
        const bool readable = r.artifact.empty() || detail::csv_readable(dir / r.artifact);
        r.status = !readable ? "UNREADABLE" : c.at("pass").get<bool>() ? "PASS" : "FAIL";
      } catch (const std::exception&) {
        r.status = "UNREADABLE";
      }
      rep.failed += r.status == "FAIL";
      rep.unreadable += r.status == "UNREADABLE";
      rep.rows.push_back(std::move(r));
    }
  }
  for (int k = 1; k <= 11; ++k)
    if (std::none_of(rep.rows.begin(), rep.rows.end(), [&](const ReportRow& r) { return r.criterion == k; }))
      rep.gaps.push_back(k);
  return rep;
}

inline std::string report_table(const Report& rep) {
  std::ostringstream s;
  char buf[512];
  std::snprintf(buf, sizeof buf, "%-4s %-11s %-44s %-18s %-16s %s\n", "crit", "status", "check", "value", "tolerance",
                "source");
  s << buf;
  for (const auto& r : rep.rows) {
    std::snprintf(buf, sizeof buf, "%-4s %-11s %-44s %-18s %-16s %s\n",
                  r.criterion ? std::to_string(r.criterion).c_str() : "-", r.status.c_str(), r.name.c_str(),
                  num(r.value).c_str(), r.tolerance.c_str(), r.source.c_str());
    s << buf;
  }
  // one summary row per numbered criterion
  s << '\n';
  for (int k = 1; k <= 11; ++k) {
    int pass = 0, fail = 0, bad = 0;
    for (const auto& r : rep.rows)
      if (r.criterion == k) (r.status == "PASS" ? pass : r.status == "FAIL" ? fail : bad)++;
    const char* verdict = pass + fail + bad == 0 ? "MISSING" : fail ? "FAIL" : bad ? "UNREADABLE" : "PASS";
    std::snprintf(buf, sizeof buf, "criterion %2d: %-10s (%d pass, %d fail, %d unreadable)\n", k, verdict, pass, fail, bad);
    s << buf;
  }
  return s.str();
}

// ---------------------------------------------------------------- dispatch

inline std::vector<Command> commands() {
  const double pi = std::numbers::pi;
  const json pi4 = pi / 4;
  return {
      {"groundstate", "radial ground state and moment constants",
       {{"n", 2, "space dimension"}, {"p", 3.0, "exponent"}, {"tol", 1e-12, "bisection tolerance"}}, cmd_groundstate},
      {"geometry-check", "closed-form limit profile against the boundary oracle, eikonal check",
       {{"alpha", pi4, "opening angle"}, {"D", 8.0, "wedge radius"}, {"points", 200, "random window points"},
        {"m", 2000, "oracle samples"}, {"seed", 11, "sampling seed"}},
       cmd_geometry},
      {"project", "log-transformed projection and its viscosity limit",
       {{"alpha", pi4, "opening angle"}, {"D", 8.0, "wedge radius"}, {"d", json::array({10.0, 20.0, 40.0}), "scales"}},
       cmd_project},
      {"xi-rates", "decay of the projection and of its d-derivative",
       {{"alpha", 3 * pi / 4, "opening angle"}, {"D", 8.0, "wedge radius"}, {"d", 30.0, "scale"},
        {"delta", 0.1, "finite-difference step in d"}},
       cmd_xi_rates},
      {"energy-landscape", "energy of the approximate solution against d",
       {{"alpha", 3 * pi / 4, "opening angle"}, {"eps", 0.02, "eps"},
        {"d", json::array({4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 24.0}), "dilated distances"},
        {"sides", json::array({1.0}), "peak sides (+1, -1)"}, {"mu0", 1.0, "outer cutoff radius"},
        {"cutoff_D", 40.0, "landscape cutoff"}, {"C_omega", 2.0, "admissible window constant"},
        {"expected_rate", 0.0, "claimed rate (0 selects the regime default)"}},
       cmd_landscape},
      {"solve-mixed", "Newton solve of the mixed problem",
       {{"domain", "keyhole", "keyhole or disc"}, {"alpha", pi / 3, "keyhole opening angle"}, {"R", 1.0, "disc radius"},
        {"eps", 0.05, "eps"}, {"p", 3.0, "exponent"}, {"h_factor", 0.125, "h / eps"}, {"tol", 1e-8, "Newton tolerance"}},
       cmd_solve_mixed},
      {"peak-scaling", "peak distance to Gamma against eps log(1/eps)",
       {{"alpha", pi / 3, "keyhole opening angle"}, {"p", 3.0, "exponent"},
        {"eps", json::array({0.1, 0.05, 0.025, 0.0125}), "eps values"}, {"h_factor", 0.125, "h / eps"},
        {"scan_lo", 3.0, "reduced scan start"}, {"scan_step", 0.25, "reduced scan step"},
        {"scan_hi_factor", 3.0, "scan end over |log eps|"}, {"crop_margin", 16.0, "crop radius margin"},
        {"tol", 1e-8, "Newton tolerance"}, {"band", json::array({1.5, 2.5}), "accepted slope band"}},
       cmd_peak_scaling},
      {"curvature-fit", "boundary energy against mean curvature on Neumann discs",
       {{"R", json::array({1.0, 2.0, 4.0, 100.0}), "radii"}, {"eps", json::array({0.1, 0.05}), "eps values"},
        {"p", 3.0, "exponent"}, {"h_factor", 0.125, "h / eps"}},
       cmd_curvature},
  };
}

inline std::string usage() {
  std::ostringstream s;
  s << "usage: spikelab <subcommand> [options]\n\nsubcommands:\n";
  for (const auto& c : commands()) s << "  " << c.name << std::string(18 - c.name.size(), ' ') << c.help << '\n';
  s << "  report            aggregate the claim checks of a run directory\n";
  s << "\ncommon options: --config FILE --out DIR --name STEM --jobs N\n"
       "SPIKELAB_OUT overrides the default output directory; --out overrides it.\n";
  return s.str();
}

inline fs::path output_dir(const std::string& flag, const json& config) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("SPIKELAB_OUT"); env && *env) return env;
  if (config.contains("out")) return config["out"].get<std::string>();
  return "spikelab_out";
}

inline json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw ParameterError("cannot open config " + path);
  json c;
  try {
    c = json::parse(in);
  } catch (const json::exception& e) {
    throw ParameterError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!c.is_object()) throw ParameterError("config must be a JSON object");
  if (!c.contains("schema_version") || c["schema_version"] != kSchemaVersion)
    throw ParameterError("config schema_version must be " + std::to_string(kSchemaVersion));
  return c;
}

inline int run_report(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"aggregate claim checks", "spikelab report"};
  std::string dir, cfg_path, out_flag;
  int jobs = 0;
  app.add_option("--dir", dir, "run directory (defaults to the output directory)");
  app.add_option("--out", out_flag, "output directory");
  app.add_option("--config", cfg_path, "JSON config");
  app.add_option("--jobs", jobs, "unused");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << '\n';
    return kParameter;
  }
  try {
    const json cfg = load_config(cfg_path);
    const fs::path base = output_dir(out_flag, cfg);
    const fs::path run_dir = dir.empty() ? base : fs::path(dir);
    const Report rep = build_report(run_dir);
    json doc = {{"schema_version", kSchemaVersion}, {"command", "report"},
                {"config_hash", config_hash("report", {{"dir", run_dir.string()}})}};
    json rows = json::array();
    for (const auto& r : rep.rows)
      rows.push_back({{"source", r.source}, {"name", r.name}, {"criterion", r.criterion}, {"value", jnum(r.value)},
                      {"tolerance", r.tolerance}, {"status", r.status}, {"artifact", r.artifact}});
    doc["checks_total"] = rep.rows.size();
    doc["failed"] = rep.failed;
    doc["unreadable"] = rep.unreadable;
    doc["gaps"] = rep.gaps;
    doc["rows"] = rows;
    const std::string table = report_table(rep);
    std::ofstream(run_dir / "report.json") << doc.dump(2) << '\n';
    std::ofstream(run_dir / "report.txt") << table;
    out << table;
    return rep.failed ? kClaim : kOk;
  } catch (const ParameterError& e) {
    err << "parameter error: " << e.what() << '\n';
    return kParameter;
  }
}

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  if (argc < 2) {
    err << usage();
    return kUsage;
  }
  const std::string sub = argv[1];
  if (sub == "--help" || sub == "-h") {
    out << usage();
    return kOk;
  }
  if (sub == "report") return run_report(argc - 1, argv + 1, out, err);
  const auto cmds = commands();
  const auto it = std::find_if(cmds.begin(), cmds.end(), [&](const Command& c) { return c.name == sub; });
  if (it == cmds.end()) {
    err << "unknown subcommand '" << sub << "'\n\n" << usage();
    return kUsage;
  }
  const Command& cmd = *it;

  CLI::App app{cmd.help, "spikelab " + cmd.name};
  std::string cfg_path, out_flag, stem = cmd.name;
  int jobs = 0;
  app.add_option("--config", cfg_path, "JSON config with schema_version");
  app.add_option("--out", out_flag, "output directory");
  app.add_option("--name", stem, "artifact file stem");
  app.add_option("--jobs", jobs, "worker threads for sweeps");
  std::vector<std::string> text(cmd.params.size());
  std::vector<CLI::Option*> opts;
  for (std::size_t i = 0; i < cmd.params.size(); ++i)
    opts.push_back(app.add_option("--" + cmd.params[i].name, text[i], cmd.params[i].help + " (default " +
                                                                          cmd.params[i].value.dump() + ")"));
  try {
    app.parse(argc - 1, argv + 1);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << '\n';
    return kParameter;
  }

  try {
    const json cfg = load_config(cfg_path);
    json params = json::object();
    for (std::size_t i = 0; i < cmd.params.size(); ++i) {
      const Param& p = cmd.params[i];
      json v = p.value;
      if (cfg.contains(p.name)) {
        detail::check_type(p, cfg[p.name]);
        v = cfg[p.name];
      }
      if (opts[i]->count()) v = detail::parse_flag(p, text[i]);
      params[p.name] = v;
    }
    for (const auto& [k, v] : cfg.items()) {
      (void)v;
      const bool known = k == "schema_version" || k == "out" || k == "jobs" ||
                         std::any_of(cmd.params.begin(), cmd.params.end(), [&](const Param& p) { return p.name == k; });
      if (!known) throw ParameterError("unknown config field '" + k + "'");
    }
    // worker count never changes results, so it stays out of the hash
    const bool jobs_flag = app.get_option("--jobs")->count() > 0;
    if (!jobs_flag && cfg.contains("jobs")) jobs = cfg["jobs"].get<int>();
    if ((jobs_flag || cfg.contains("jobs")) && jobs < 1) throw ParameterError("jobs must be at least 1");
    if (jobs > 0) worker_count() = jobs;
    if (stem.empty() || stem.find('/') != std::string::npos) throw ParameterError("invalid artifact name");

    const fs::path dir = output_dir(out_flag, cfg);
    Outcome o;
    try {
      o = cmd.run(params, stem);
    } catch (const NumericalFailure& e) {
      o.numerical_failure = true;
      o.failure = e.what();
    }
    fs::create_directories(dir);
    json doc = {{"schema_version", kSchemaVersion}, {"command", cmd.name},
                {"config_hash", config_hash(cmd.name, params)}, {"params", params}};
    for (const auto& [suffix, t] : o.tables) write_csv(dir / (stem + suffix + ".csv"), t);
    json checks = json::array();
    bool claim_ok = true;
    for (const auto& c : o.checks) {
      checks.push_back(to_json(c));
      claim_ok = claim_ok && c.pass;
    }
    doc["results"] = o.results;
    doc["checks"] = checks;
    doc["status"] = o.numerical_failure ? "numerical-failure" : claim_ok ? "ok" : "claim-violation";
    if (o.numerical_failure) doc["failure"] = o.failure;
    std::ofstream(dir / (stem + ".json")) << doc.dump(2) << '\n';
    out << doc.dump(2) << '\n';
    if (o.numerical_failure) {
      err << "numerical failure: " << o.failure << '\n';
      return kNumerical;
    }
    return claim_ok ? kOk : kClaim;
  } catch (const ParameterError& e) {
    err << "parameter error: " << e.what() << '\n';
    return kParameter;
  } catch (const json::exception& e) {
    err << "parameter error: " << e.what() << '\n';
    return kParameter;
  }
}

} // namespace spikelab::cli
