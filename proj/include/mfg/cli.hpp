#pragma once

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "mfg/cases.hpp"
#include "mfg/config.hpp"
#include "mfg/equilibrium.hpp"
#include "mfg/errors.hpp"
#include "mfg/io.hpp"
#include "mfg/social.hpp"
#include "mfg/verify.hpp"

namespace mfg::cli {

enum ExitCode : int { ok = 0, usage = 1, not_converged = 2, verification_failed = 3 };

/// Flags shared by every subcommand; unset values leave the config file (or defaults) in charge.
struct CommonArgs {
  std::string case_name;
  std::string config;
  std::string algorithm;
  std::optional<double> tol;
  std::optional<int> max_iters;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  std::optional<double> kappa;
  std::string n;
  std::optional<double> init_mean;
};

inline void add_common(CLI::App* sub, CommonArgs& a, bool with_algorithm) {
  sub->add_option("--case", a.case_name, "Instance: ev, ev-stochastic, sine, routing, pigou, log");
  sub->add_option("--config", a.config, "INI config file")->check(CLI::ExistingFile);
  if (with_algorithm) sub->add_option("--algorithm", a.algorithm, "mann, fixed-point, primal-dual, admm");
  sub->add_option("--tol", a.tol, "Stopping tolerance")->check(CLI::PositiveNumber);
  sub->add_option("--max-iters", a.max_iters, "Iteration budget")->check(CLI::PositiveNumber);
  sub->add_option("--seed", a.seed, "Seed for instance generation and sampling");
  sub->add_option("--out-dir", a.out_dir, "Output directory");
  sub->add_option("--kappa", a.kappa, "Coupling strength of the sine case");
  sub->add_option("--n", a.n, "Population size (solve/compare/verify) or comma-separated N list (rates)");
  sub->add_option("--init-mean", a.init_mean, "Constant initial mean z0");
}

inline std::vector<std::size_t> parse_n_list(const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& cell : io::split(s, ',')) {
    const double v = io::parse_double(cell, "--n");
    if (v < 1 || v != std::floor(v)) throw UsageError("--n entries must be positive integers");
    out.push_back(std::size_t(v));
  }
  return out;
}

inline RunConfig resolve(const CommonArgs& a, bool n_is_scalar = true) {
  RunConfig rc = a.config.empty() ? RunConfig{} : load_config(a.config);
  if (!a.case_name.empty()) rc.case_name = a.case_name;
  if (a.seed) rc.seed = *a.seed;
  if (a.kappa) rc.kappa = *a.kappa;
  if (n_is_scalar && !a.n.empty()) {
    const auto ns = parse_n_list(a.n);
    if (ns.size() != 1) throw UsageError("--n takes a single value here");
    rc.n = ns.front();
  }
  if (a.tol) rc.solver.tol = *a.tol;
  if (a.max_iters) rc.solver.max_iters = *a.max_iters;
  if (!a.algorithm.empty()) rc.algorithm = parse_algorithm(a.algorithm);
  if (a.init_mean) rc.solver.initial_mean = Vector::Constant(1, *a.init_mean);
  rc.solver.seed = rc.seed;
  return rc;
}

/// Solver settings for a built case: case-specific ADMM penalty and broadcast initial mean.
inline SolverConfig solver_for(const RunConfig& rc, const Case& c) {
  SolverConfig s = rc.solver;
  if (!rc.admm_penalty_set && c.admm_penalty) s.admm_penalty = *c.admm_penalty;
  if (s.initial_mean && s.initial_mean->size() == 1 && c.game.dim() != 1)
    s.initial_mean = Vector::Constant(c.game.dim(), (*s.initial_mean)[0]);
  return s;
}

inline void print_warnings(const Case& c, std::ostream& err) {
  for (const auto& w : c.warnings) err << "warning: " << w << '\n';
}

inline io::Series history_series(const std::string& label, const std::vector<IterationRecord>& h,
                                 double IterationRecord::*field) {
  io::Series s{label, {}, {}};
  for (const auto& r : h) {
    s.x.push_back(double(r.iter));
    s.y.push_back(r.*field);
  }
  return s;
}

inline void write_solve_outputs(const std::filesystem::path& dir, const GameInstance& game, const EquilibriumResult& r) {
  io::ensure_dir(dir);
  io::write_text(dir / "residuals.csv", io::residuals_csv(r.history));
  io::write_text(dir / "norms.csv", io::norms_csv(r.history, r.tracked_agent));
  io::write_text(dir / "equilibrium.csv", io::equilibrium_csv(game, r));
  io::write_text(dir / "controls.csv", io::controls_csv(r.controls));
  const std::string agent = "agent " + std::to_string(r.tracked_agent);
  io::write_text(dir / "u_norm.svg",
                 io::line_plot_svg({history_series(agent, r.history, &IterationRecord::u_norm)},
                                   {"Control norm of " + agent + " (" + r.algorithm + ")", "iteration", "||u_i||"}));
  io::write_text(dir / "z_norm.svg",
                 io::line_plot_svg({history_series("z", r.history, &IterationRecord::z_norm)},
                                   {"Population mean norm (" + r.algorithm + ")", "iteration", "||z||"}));
}

inline int cmd_solve(const CommonArgs& a, std::ostream& out, std::ostream& err) {
  const RunConfig rc = resolve(a);
  const Case c = build_case(rc);
  print_warnings(c, err);
  const SolverConfig s = solver_for(rc, c);
  const Algorithm alg = rc.algorithm.value_or(Algorithm::admm);
  const VirtualCost phi = c.virtual_cost(rc.seed);
  const auto t0 = std::chrono::steady_clock::now();
  const EquilibriumResult r = solve(c.game, phi, alg, s);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_solve_outputs(a.out_dir, c.game, r);
  out << "case " << c.name << ", N = " << c.game.n() << ", algorithm " << r.algorithm << '\n'
      << (r.converged ? "converged" : "not converged") << " after " << r.iterations << " iterations ("
      << detail::fmt(secs) << " s)\n"
      << "final mf_residual " << io::num(r.final_mf_residual) << ", ||z|| " << io::num(c.game.grid().norm(r.z_star))
      << '\n'
      << "outputs written to " << a.out_dir << '\n';
  return r.converged ? ok : not_converged;
}

inline int cmd_compare(const CommonArgs& a, std::ostream& out, std::ostream& err) {
  const RunConfig rc = resolve(a);
  const Case c = build_case(rc);
  print_warnings(c, err);
  const SolverConfig s = solver_for(rc, c);
  const VirtualCost phi = c.virtual_cost(rc.seed);
  const std::vector<Algorithm> algs{Algorithm::mann, Algorithm::primal_dual, Algorithm::admm};
  std::vector<EquilibriumResult> runs;
  for (Algorithm alg : algs) {
    try {
      runs.push_back(solve(c.game, phi, alg, s));
    } catch (const UnboundednessError& e) {
      err << "note: " << algorithm_name(alg) << " not applicable: " << e.what() << '\n';
    }
  }

  const std::filesystem::path dir = a.out_dir;
  io::ensure_dir(dir);
  std::ostringstream combined;
  combined << "algorithm,iter,du_norm,dz_norm,dlambda_norm,mf_residual,primal_residual,dual_residual,u_norm,z_norm\n";
  for (const auto& r : runs)
    for (const auto& h : r.history)
      combined << r.algorithm << ',' << h.iter << ',' << io::num(h.du_norm) << ',' << io::num(h.dz_norm) << ','
               << io::num(h.dlambda_norm) << ',' << io::num(h.mf_residual) << ',' << io::num(h.primal_residual) << ','
               << io::num(h.dual_residual) << ',' << io::num(h.u_norm) << ',' << io::num(h.z_norm) << '\n';
  io::write_text(dir / "compare.csv", combined.str());

  std::vector<io::Series> mf, zn;
  for (const auto& r : runs) {
    mf.push_back(history_series(r.algorithm, r.history, &IterationRecord::mf_residual));
    zn.push_back(history_series(r.algorithm, r.history, &IterationRecord::z_norm));
  }
  io::PlotSpec mf_spec{"Mean-field residual per iteration", "iteration", "mf_residual"};
  mf_spec.log_y = true;
  io::write_text(dir / "compare_mf_residual.svg", io::line_plot_svg(mf, mf_spec));
  io::write_text(dir / "compare_z_norm.svg",
                 io::line_plot_svg(zn, {"Population mean norm per iteration", "iteration", "||z||"}));

  // Pairwise relative agreement among converged runs, measured against the later run.
  double worst = 0.0;
  int pairs = 0;
  for (std::size_t i = 0; i < runs.size(); ++i)
    for (std::size_t j = i + 1; j < runs.size(); ++j) {
      if (!runs[i].converged || !runs[j].converged) continue;
      const double du = detail::stacked_distance(runs[i].controls, runs[j].controls) /
                        std::max(1e-12, detail::stacked_norm(runs[j].controls));
      const double dz = c.game.grid().norm(runs[i].z_star - runs[j].z_star) /
                        std::max(1.0, c.game.grid().norm(runs[j].z_star));
      worst = std::max({worst, du, dz});
      ++pairs;
    }
  std::ostringstream summary;
  summary << "algorithm,iterations,converged,final_mf_residual\n";
  for (const auto& r : runs)
    summary << r.algorithm << ',' << r.iterations << ',' << (r.converged ? 1 : 0) << ',' << io::num(r.final_mf_residual)
            << '\n';
  io::write_text(dir / "compare_summary.csv", summary.str());

  out << "case " << c.name << ", N = " << c.game.n() << ", tol " << detail::fmt(s.tol) << '\n';
  out << "algorithm     iterations  converged  final mf_residual\n";
  for (const auto& r : runs) {
    char line[128];
    std::snprintf(line, sizeof line, "%-12s  %10d  %9s  %.3e\n", r.algorithm.c_str(), r.iterations,
                  r.converged ? "yes" : "no", r.final_mf_residual);
    out << line;
  }
  out << "max pairwise relative (u, z) distance: " << (pairs ? detail::fmt(worst) : std::string("n/a")) << '\n';
  bool all = true;
  for (const auto& r : runs) all = all && r.converged;
  if (!all) return not_converged;
  return worst <= 1e-3 ? ok : verification_failed;
}

inline int cmd_verify(const CommonArgs& a, const std::string& equilibrium_file, std::size_t samples, std::ostream& out,
                      std::ostream& err) {
  const RunConfig rc = resolve(a);
  const Case c = build_case(rc);
  print_warnings(c, err);
  ReportConfig cfg;
  cfg.solver = solver_for(rc, c);
  cfg.seed = rc.seed;
  cfg.epsilon_agents = samples;
  EquivalenceReport rep = equivalence_report(c, cfg);
  if (!equilibrium_file.empty()) {
    const auto us = io::read_controls_csv(equilibrium_file);
    CheckResult chk{"precomputed_equilibrium", "fail", "", std::numeric_limits<double>::quiet_NaN(), 1e-3};
    try {
      c.game.check_profile(us);
      const Vector y = c.game.coupling()(c.game.mean_coupled(us));
      const double res = mf_residual(c.game, us, y, cfg.solver.qp);
      chk.value = res;
      chk.status = res <= chk.tolerance ? "pass" : "fail";
      chk.detail = "mean-field residual of supplied controls " + detail::fmt(res);
    } catch (const std::exception& e) {
      chk.status = "error";
      chk.detail = e.what();
    }
    if (chk.status != "pass") rep.all_passed = false;
    rep.checks.push_back(chk);
  }
  const std::filesystem::path dir = a.out_dir;
  io::ensure_dir(dir);
  io::write_text(dir / "report.json", io::to_json(rep).dump(2) + "\n");
  const std::string text = io::report_text(rep);
  io::write_text(dir / "report.txt", text);
  out << text;
  return rep.all_passed ? ok : verification_failed;
}

inline int cmd_rates(const CommonArgs& a, const std::string& study, std::size_t samples, std::ostream& out,
                     std::ostream&) {
  RunConfig rc = resolve(a, false);
  std::vector<std::size_t> ns;
  RateFit fit;
  double lo = -INFINITY, hi = INFINITY;
  std::string what;
  if (study == "lemma1") {
    ns = a.n.empty() ? std::vector<std::size_t>{16, 64, 256, 1024} : parse_n_list(a.n);
    fit = lemma1_rate(lemma1_kink_family(), ns, samples, rc.seed);
    lo = -0.65, hi = -0.35;
    what = "|E F(xbar).x_i - F(E xbar).E x_i|";
  } else if (study == "lemma2") {
    ns = a.n.empty() ? std::vector<std::size_t>{16, 64, 256, 1024} : parse_n_list(a.n);
    fit = lemma2_rate(lemma2_quadratic_family(), ns, samples, rc.seed);
    lo = -1.2, hi = -0.8;
    what = "|E G(xbar) - E G(xbar_-i)|";
  } else if (study == "epsilon") {
    ns = a.n.empty() ? std::vector<std::size_t>{25, 50, 100, 200, 400} : parse_n_list(a.n);
    if (a.case_name.empty() && a.config.empty()) rc.case_name = "ev-stochastic";
    EpsilonStudyConfig ec;
    ec.seed = rc.seed;
    if (a.tol) ec.solver.tol = *a.tol;
    if (a.max_iters) ec.solver.max_iters = *a.max_iters;
    if (rc.algorithm) ec.algorithm = *rc.algorithm;
    fit = epsilon_rate_study(
        [&](std::size_t n) {
          RunConfig r = rc;
          r.n = n;
          return build_case(r);
        },
        ns, ec);
    hi = -0.4;
    what = "epsilon-Nash";
  } else {
    throw UsageError("unknown study '" + study + "' (expected lemma1, lemma2, epsilon)");
  }

  const std::filesystem::path dir = a.out_dir;
  io::ensure_dir(dir);
  io::write_text(dir / "rates.csv", io::rates_csv(fit));
  io::Series pts{study, {}, {}};
  for (const auto& p : fit.points) {
    pts.x.push_back(double(p.n));
    pts.y.push_back(p.value);
  }
  io::PlotSpec spec{study + " rate: " + what, "N", "value"};
  spec.log_x = spec.log_y = true;
  if (!fit.degenerate) {
    spec.fit = std::make_pair(fit.slope, fit.intercept);
    spec.annotation = "fitted slope " + detail::fmt(fit.slope) + " (95% CI " + detail::fmt(fit.ci_low) + ", " +
                      detail::fmt(fit.ci_high) + ")";
  }
  io::write_text(dir / "rates.svg", io::line_plot_svg({pts}, spec));

  out << "study " << study << ", N = ";
  for (std::size_t k = 0; k < ns.size(); ++k) out << (k ? "," : "") << ns[k];
  out << '\n';
  for (const auto& p : fit.points) out << "  N=" << p.n << "  value " << io::num(p.value) << '\n';
  if (fit.degenerate) {
    out << "degenerate: every value is numerically zero, no slope fitted\n";
    return verification_failed;
  }
  const bool in_band = fit.slope >= lo && fit.slope <= hi;
  out << "slope " << detail::fmt(fit.slope) << " (95% CI [" << detail::fmt(fit.ci_low) << ", " << detail::fmt(fit.ci_high)
      << "]), band [" << detail::fmt(lo) << ", " << detail::fmt(hi) << "]: " << (in_band ? "within" : "outside") << '\n';
  return in_band ? ok : verification_failed;
}

/// Entry point; returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Mean-field game equilibria and their social-welfare counterparts"};
  app.require_subcommand(1);
  CommonArgs solve_a, compare_a, verify_a, rates_a;
  std::string equilibrium_file, study = "lemma1";
  std::size_t verify_samples = 0, rate_samples = 2000;

  auto* solve_cmd = app.add_subcommand("solve", "Compute an equilibrium with one algorithm");
  add_common(solve_cmd, solve_a, true);
  auto* compare_cmd = app.add_subcommand("compare", "Run mann, primal-dual and admm on the same instance");
  add_common(compare_cmd, compare_a, false);
  auto* verify_cmd = app.add_subcommand("verify", "Write the equilibrium/social-optimum equivalence report");
  add_common(verify_cmd, verify_a, false);
  verify_cmd->add_option("--equilibrium", equilibrium_file, "Precomputed controls CSV to certify")
      ->check(CLI::ExistingFile);
  verify_cmd->add_option("--samples", verify_samples, "Agents sampled for the epsilon-Nash check (0 = all)");
  auto* rates_cmd = app.add_subcommand("rates", "Convergence-rate studies on log-log axes");
  add_common(rates_cmd, rates_a, true);
  rates_cmd->add_option("--study", study, "lemma1, lemma2 or epsilon");
  rates_cmd->add_option("--samples", rate_samples, "Monte-Carlo replications per N (lemma studies)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? ok : usage;
  }
  try {
    if (solve_cmd->parsed()) return cmd_solve(solve_a, out, err);
    if (compare_cmd->parsed()) return cmd_compare(compare_a, out, err);
    if (verify_cmd->parsed()) return cmd_verify(verify_a, equilibrium_file, verify_samples, out, err);
    if (rates_cmd->parsed()) return cmd_rates(rates_a, study, rate_samples, out, err);
  } catch (const InsufficientDataError& e) {
    err << "error: " << e.what() << '\n';
    return usage;
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << '\n';
    return not_converged;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return usage;
  }
  return usage;
}

inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"mfg_cli"};
  for (const auto& s : args) argv.push_back(s.c_str());
  return run(int(argv.size()), argv.data(), out, err);
}

}  // namespace mfg::cli
