#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mfg/bestresponse.hpp"
#include "mfg/errors.hpp"
#include "mfg/model.hpp"
#include "mfg/parallel.hpp"

namespace mfg {

/// ι_k = a / k^power (diminishing) or ι_k = a (constant).
struct StepSchedule {
  enum class Kind { diminishing, constant };
  Kind kind = Kind::diminishing;
  double a = 1.0;
  double power = 1.0;

  static StepSchedule diminishing(double a = 1.0, double power = 1.0) { return {Kind::diminishing, a, power}; }
  static StepSchedule constant(double a) { return {Kind::constant, a, 0.0}; }

  [[nodiscard]] double operator()(int k) const {
    return kind == Kind::constant ? a : a / std::pow(double(k), power);
  }

  void validate() const {
    if (!(a > 0.0)) throw UsageError("step schedule: a must be positive");
    if (kind == Kind::diminishing && !(power > 0.0 && power <= 1.0))
      throw UsageError("step schedule: diminishing power must lie in (0, 1]");
  }
};

struct SolverConfig {
  int max_iters = 1000;
  double tol = 1e-4;
  StepSchedule step = StepSchedule::diminishing();
  double admm_penalty = 1.0;
  /// Doubles/halves ρ when the primal/dual residual ratio exceeds 10.
  bool residual_balancing = false;
  std::uint64_t seed = 0;
  /// Starting mean z⁰ (default: mean of the uncoupled best responses).
  std::optional<Vector> initial_mean;
  /// Primal-dual dual-step gain B in λ ← λ + ι_k B (x̄ − z).
  double dual_step_gain = 1.0;
  /// Primal-dual: take z from a provisional dual step instead of λ^{k−1}.
  bool z_after_dual = false;
  bool record_iterates = false;
  bool track_mf_residual = true;
  /// Agent whose ‖u_i‖ is logged; negative selects one from the seed.
  int tracked_agent = -1;
  QpOptions qp;

  void validate() const {
    if (max_iters < 1) throw UsageError("SolverConfig: max_iters must be >= 1");
    if (!(tol > 0.0)) throw UsageError("SolverConfig: tol must be positive");
    if (!(admm_penalty > 0.0)) throw UsageError("SolverConfig: admm_penalty must be positive");
    if (!(dual_step_gain > 0.0)) throw UsageError("SolverConfig: dual_step_gain must be positive");
    step.validate();
  }
};

struct IterationRecord {
  int iter = 0;
  double du_norm = 0.0;
  double dz_norm = 0.0;
  double dlambda_norm = 0.0;
  double mf_residual = 0.0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double z_norm = 0.0;
  double u_norm = 0.0;
};

struct EquilibriumResult {
  std::string algorithm;
  std::vector<Vector> controls;
  Vector z_star;
  Vector lambda_star;
  std::vector<IterationRecord> history;
  /// z-iterates z⁰, z¹, … when SolverConfig::record_iterates is set.
  std::vector<Vector> z_iterates;
  int iterations = 0;
  bool converged = false;
  double final_mf_residual = 0.0;
  std::size_t tracked_agent = 0;
};

/// Best responses of all agents against a common price y (concurrent, order-independent result).
inline std::vector<Vector> best_responses(const GameInstance& game, const Vector& y, const QpOptions& qp = {},
                                          const std::vector<Vector>* warm = nullptr) {
  std::vector<Vector> out(game.n());
  parallel_for(game.n(), [&](std::size_t i) {
    try {
      out[i] = best_response(game, i, y, nullptr, qp, warm ? &(*warm)[i] : nullptr);
    } catch (const NumericalError& e) {
      throw NumericalError("best response of agent " + std::to_string(i) + ": " + e.what(), e.residual());
    }
  });
  return out;
}

/// max(‖y − F(x̄)‖, max_i [J^br_i(u_i; y) − J^br_i(μ_i(y); y)]₊).
inline double mf_residual(const GameInstance& game, std::span<const Vector> us, const Vector& y, const QpOptions& qp = {}) {
  game.check_profile(us);
  const Vector xbar = game.mean_coupled(us);
  const double consistency = game.grid().norm(y - game.coupling()(xbar));
  std::vector<double> gaps(game.n(), 0.0);
  parallel_for(game.n(), [&](std::size_t i) {
    const Vector mu = best_response(game, i, y, nullptr, qp);
    gaps[i] = std::max(0.0, best_response_objective(game, i, us[i], y) - best_response_objective(game, i, mu, y));
  });
  double worst = consistency;
  for (double g : gaps) worst = std::max(worst, g);
  return worst;
}

namespace detail {

inline double max_control_change(std::span<const Vector> a, std::span<const Vector> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, (a[i] - b[i]).norm());
  return m;
}

inline std::size_t pick_tracked(const GameInstance& game, const SolverConfig& c) {
  if (c.tracked_agent >= 0) return std::min<std::size_t>(std::size_t(c.tracked_agent), game.n() - 1);
  return std::size_t(splitmix64(c.seed) % game.n());
}

struct Start {
  std::vector<Vector> u;
  Vector z;
};

inline Start initial_point(const GameInstance& game, const SolverConfig& c) {
  Start s;
  s.u = best_responses(game, Vector::Zero(game.dim()), c.qp);
  if (c.initial_mean) {
    game.grid().check(*c.initial_mean);
    s.z = *c.initial_mean;
  } else {
    s.z = game.mean_coupled(s.u);
  }
  return s;
}

/// Stopping also requires the mean-field residual certificate at the current iterate.
inline bool certified(const GameInstance& game, std::span<const Vector> u, const Vector& y, const SolverConfig& c,
                      const IterationRecord& rec) {
  const double res = c.track_mf_residual ? rec.mf_residual : mf_residual(game, u, y, c.qp);
  return res <= c.tol;
}

inline void finish(const GameInstance& game, const SolverConfig& c, EquilibriumResult& r) {
  r.final_mf_residual = mf_residual(game, r.controls, r.lambda_star, c.qp);
}

}  // namespace detail

/// Mann iteration z^k = z^{k−1} + ν_k (x̄(μ(F(z^{k−1}))) − z^{k−1}); Picard when ν ≡ 1.
/// Stops when both ‖Δz‖ and max_i ‖Δu_i‖ are at most tol and the mean-field residual certifies.
inline EquilibriumResult solve_fixed_point(const GameInstance& game, const SolverConfig& config) {
  config.validate();
  const auto& space = game.grid();
  EquilibriumResult r;
  r.algorithm = config.step.kind == StepSchedule::Kind::constant && config.step.a == 1.0 ? "fixed-point" : "mann";
  r.tracked_agent = detail::pick_tracked(game, config);
  auto start = detail::initial_point(game, config);
  std::vector<Vector> u = std::move(start.u);
  Vector z = std::move(start.z);
  Vector lambda = game.coupling()(z);
  if (config.record_iterates) r.z_iterates.push_back(z);
  for (int k = 1; k <= config.max_iters; ++k) {
    const std::vector<Vector> un = best_responses(game, lambda, config.qp, &u);
    const Vector xbar = game.mean_coupled(un);
    const double nu = config.step(k);
    const Vector zn = z + nu * (xbar - z);
    const Vector ln = game.coupling()(zn);
    IterationRecord rec;
    rec.iter = k;
    rec.du_norm = detail::max_control_change(un, u);
    rec.dz_norm = space.norm(zn - z);
    rec.dlambda_norm = space.norm(ln - lambda);
    rec.primal_residual = space.norm(xbar - zn);
    rec.dual_residual = rec.dz_norm;
    rec.z_norm = space.norm(zn);
    rec.u_norm = un[r.tracked_agent].norm();
    u = un;
    z = zn;
    lambda = ln;
    if (config.track_mf_residual) rec.mf_residual = mf_residual(game, u, lambda, config.qp);
    r.history.push_back(rec);
    if (config.record_iterates) r.z_iterates.push_back(z);
    r.iterations = k;
    if (rec.dz_norm <= config.tol && rec.du_norm <= config.tol && detail::certified(game, u, lambda, config, rec)) {
      r.converged = true;
      break;
    }
  }
  r.controls = std::move(u);
  r.z_star = z;
  r.lambda_star = lambda;
  detail::finish(game, config, r);
  return r;
}

/// Dual ascent on the constructed social problem: u^k = μ(λ^{k−1}),
/// z^{k−1} = argmin φ(z) − Nλ^{k−1}·z, λ^k = λ^{k−1} + ι_k B (x̄^k − z^{k−1}).
inline EquilibriumResult solve_primal_dual(const GameInstance& game, const VirtualCost& phi, const SolverConfig& config) {
  config.validate();
  const auto& space = game.grid();
  EquilibriumResult r;
  r.algorithm = "primal-dual";
  r.tracked_agent = detail::pick_tracked(game, config);
  auto start = detail::initial_point(game, config);
  std::vector<Vector> u = std::move(start.u);
  Vector lambda = game.coupling()(start.z);
  auto z_of = [&](const Vector& lam, const Vector& hint) -> Vector {
    const auto z = phi.tilted_argmin(lam, &hint);
    if (!z) throw UnboundednessError("primal-dual: z-subproblem unbounded below at the current multiplier");
    return *z;
  };
  Vector z = z_of(lambda, start.z);
  if (config.record_iterates) r.z_iterates.push_back(z);
  for (int k = 1; k <= config.max_iters; ++k) {
    const std::vector<Vector> un = best_responses(game, lambda, config.qp, &u);
    const Vector xbar = game.mean_coupled(un);
    const double iota = config.step(k) * config.dual_step_gain;
    Vector z_used = z;
    // Alternative ordering: z from a provisional dual step, then the actual dual step.
    if (config.z_after_dual) z_used = z_of(lambda + iota * (xbar - z), xbar);
    const Vector ln = lambda + iota * (xbar - z_used);
    const Vector zn = z_of(ln, xbar);
    IterationRecord rec;
    rec.iter = k;
    rec.du_norm = detail::max_control_change(un, u);
    rec.dlambda_norm = space.norm(ln - lambda);
    rec.dz_norm = space.norm(zn - z);
    rec.primal_residual = space.norm(xbar - z_used);
    rec.dual_residual = rec.dlambda_norm;
    rec.z_norm = space.norm(zn);
    rec.u_norm = un[r.tracked_agent].norm();
    u = un;
    lambda = ln;
    z = zn;
    if (config.track_mf_residual) rec.mf_residual = mf_residual(game, u, lambda, config.qp);
    r.history.push_back(rec);
    if (config.record_iterates) r.z_iterates.push_back(z);
    r.iterations = k;
    if (rec.dlambda_norm <= config.tol && rec.du_norm <= config.tol && rec.primal_residual <= config.tol &&
        detail::certified(game, u, lambda, config, rec)) {
      r.converged = true;
      break;
    }
  }
  r.controls = std::move(u);
  r.z_star = z;
  r.lambda_star = lambda;
  detail::finish(game, config, r);
  return r;
}

/// Scaled-form ADMM on the sharing constraint (1/N)Σ E x_i = z. Agents solve proximal best
/// responses, z takes a proximal step on φ, and the scaled multiplier w accumulates x̄ − z.
inline EquilibriumResult solve_admm(const GameInstance& game, const VirtualCost& phi, const SolverConfig& config) {
  config.validate();
  const auto& space = game.grid();
  const std::size_t N = game.n();
  EquilibriumResult r;
  r.algorithm = "admm";
  r.tracked_agent = detail::pick_tracked(game, config);
  double rho = config.admm_penalty;
  auto start = detail::initial_point(game, config);
  std::vector<Vector> u = std::move(start.u);
  std::vector<Vector> x = game.coupled_all(u);
  Vector xbar = mean_of(std::span<const Vector>(x));
  Vector z = start.z;
  Vector w = game.coupling()(z) / rho;
  if (config.record_iterates) r.z_iterates.push_back(z);
  for (int k = 1; k <= config.max_iters; ++k) {
    std::vector<Vector> un(N);
    parallel_for(N, [&](std::size_t i) {
      ProxTerm prox{rho, x[i] - xbar + z - w};
      un[i] = best_response(game, i, Vector::Zero(game.dim()), &prox, config.qp, &u[i]);
    });
    std::vector<Vector> xn = game.coupled_all(un);
    const Vector xbar_n = mean_of(std::span<const Vector>(xn));
    const Vector zn = phi.prox(xbar_n + w, rho);
    const Vector wn = w + xbar_n - zn;
    IterationRecord rec;
    rec.iter = k;
    rec.du_norm = detail::max_control_change(un, u);
    rec.dz_norm = space.norm(zn - z);
    rec.dlambda_norm = space.norm(rho * (wn - w));
    rec.primal_residual = space.norm(xbar_n - zn);
    rec.dual_residual = rho * rec.dz_norm;
    rec.z_norm = space.norm(zn);
    rec.u_norm = un[r.tracked_agent].norm();
    u = std::move(un);
    x = std::move(xn);
    xbar = xbar_n;
    z = zn;
    w = wn;
    if (config.track_mf_residual) rec.mf_residual = mf_residual(game, u, rho * w, config.qp);
    r.history.push_back(rec);
    if (config.record_iterates) r.z_iterates.push_back(z);
    r.iterations = k;
    if (rec.primal_residual <= config.tol && rec.dual_residual <= config.tol && rec.du_norm <= config.tol &&
        detail::certified(game, u, rho * w, config, rec)) {
      r.converged = true;
      break;
    }
    if (config.residual_balancing) {
      if (rec.primal_residual > 10.0 * rec.dual_residual) {
        rho *= 2.0;
        w /= 2.0;
      } else if (rec.dual_residual > 10.0 * rec.primal_residual) {
        rho /= 2.0;
        w *= 2.0;
      }
    }
  }
  r.controls = std::move(u);
  r.z_star = z;
  r.lambda_star = rho * w;
  detail::finish(game, config, r);
  return r;
}

enum class Algorithm { mann, fixed_point, primal_dual, admm };

inline Algorithm parse_algorithm(const std::string& s) {
  if (s == "mann") return Algorithm::mann;
  if (s == "fixed-point" || s == "picard") return Algorithm::fixed_point;
  if (s == "primal-dual") return Algorithm::primal_dual;
  if (s == "admm") return Algorithm::admm;
  throw UsageError("unknown algorithm '" + s + "' (expected mann, fixed-point, primal-dual, admm)");
}

inline std::string algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::mann:
      return "mann";
    case Algorithm::fixed_point:
      return "fixed-point";
    case Algorithm::primal_dual:
      return "primal-dual";
    case Algorithm::admm:
      return "admm";
  }
  return "?";
}

/// Dispatch helper. Mann uses the config schedule; fixed-point forces ν ≡ 1.
inline EquilibriumResult solve(const GameInstance& game, const VirtualCost& phi, Algorithm alg, SolverConfig config) {
  switch (alg) {
    case Algorithm::mann: {
      auto r = solve_fixed_point(game, config);
      r.algorithm = "mann";
      return r;
    }
    case Algorithm::fixed_point:
      config.step = StepSchedule::constant(1.0);
      return solve_fixed_point(game, config);
    case Algorithm::primal_dual:
      return solve_primal_dual(game, phi, config);
    case Algorithm::admm:
      return solve_admm(game, phi, config);
  }
  throw UsageError("unknown algorithm");
}

}  // namespace mfg
