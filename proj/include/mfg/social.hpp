#pragma once

#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mfg/bestresponse.hpp"
#include "mfg/errors.hpp"
#include "mfg/model.hpp"
#include "mfg/parallel.hpp"

namespace mfg {

/// The constructed welfare problem min Σ V_i(u_i) + φ(z) s.t. (1/N)Σ 𝔼x_i = z.
struct SocialProblem {
  const GameInstance& game;
  const VirtualCost& phi;
};

struct SocialOptions {
  double tol = 1e-8;
  int max_iters = 50000;
  /// Starting controls; default is each agent's uncoupled optimum.
  std::optional<std::vector<Vector>> initial;
};

struct SocialSolution {
  std::vector<Vector> controls;
  Vector z;
  double value = 0.0;
  double pg_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

namespace detail {

inline double private_sum(const GameInstance& game, std::span<const Vector> us) {
  double s = 0.0;
  for (std::size_t i = 0; i < game.n(); ++i) s += game.agent(i).private_cost(us[i]);
  return s;
}

struct Stacking {
  std::vector<Eigen::Index> offset;
  Eigen::Index total = 0;

  explicit Stacking(const GameInstance& game) {
    for (std::size_t i = 0; i < game.n(); ++i) {
      offset.push_back(total);
      total += game.agent(i).control_dim();
    }
  }

  [[nodiscard]] Vector stack(std::span<const Vector> us) const {
    Vector v(total);
    for (std::size_t i = 0; i < us.size(); ++i) v.segment(offset[i], us[i].size()) = us[i];
    return v;
  }

  [[nodiscard]] std::vector<Vector> split(const GameInstance& game, const Vector& v) const {
    std::vector<Vector> us(game.n());
    for (std::size_t i = 0; i < game.n(); ++i) us[i] = v.segment(offset[i], game.agent(i).control_dim());
    return us;
  }
};

inline std::vector<Vector> uncoupled_optima(const GameInstance& game) {
  std::vector<Vector> us(game.n());
  parallel_for(game.n(), [&](std::size_t i) { us[i] = best_response(game, i, Vector::Zero(game.dim())); });
  return us;
}

/// Projected gradient over the stacked controls with per-agent projections.
inline SocialSolution minimize_over_controls(const GameInstance& game, const std::function<double(const std::vector<Vector>&)>& f,
                                             const std::function<Vector(const std::vector<Vector>&)>& dx_of,
                                             const SocialOptions& opt) {
  const Stacking st(game);
  const Vector& w = game.weights();
  auto value = [&](const Vector& v) { return f(st.split(game, v)); };
  // dx_of returns the common weighted price term; agent i picks up C_iᵀ W (·).
  auto grad = [&](const Vector& v) -> Vector {
    const auto us = st.split(game, v);
    const Vector common = w.cwiseProduct(dx_of(us));
    Vector g(st.total);
    for (std::size_t i = 0; i < game.n(); ++i)
      g.segment(st.offset[i], us[i].size()) =
          game.agent(i).private_gradient(us[i]) + game.coupled_matrix(i).transpose() * common;
    return g;
  };
  auto project = [&](const Vector& v) -> Vector {
    Vector out(st.total);
    parallel_for(game.n(), [&](std::size_t i) {
      const Eigen::Index m = game.agent(i).control_dim();
      out.segment(st.offset[i], m) = game.agent(i).admissible.project(v.segment(st.offset[i], m));
    });
    return out;
  };
  const std::vector<Vector> init = opt.initial ? *opt.initial : uncoupled_optima(game);
  game.check_profile(init);
  PgOptions po;
  po.tol = opt.tol;
  po.max_iters = opt.max_iters;
  const PgResult r = accelerated_projected_gradient(value, grad, project, st.stack(init), po);
  SocialSolution s;
  s.controls = st.split(game, r.x);
  s.z = game.mean_coupled(s.controls);
  s.value = r.value;
  s.pg_norm = r.pg_norm;
  s.iterations = r.iterations;
  s.converged = r.converged;
  return s;
}

}  // namespace detail

/// J_s(u, z) = Σ V_i(u_i) + φ(z).
inline double social_cost(const SocialProblem& p, std::span<const Vector> us, const Vector& z) {
  p.game.check_profile(us);
  return detail::private_sum(p.game, us) + p.phi.value(z);
}

/// L(u, z, λ) = J_s(u, z) + λ·(Σ 𝔼x_i − N z).
inline double lagrangian(const SocialProblem& p, std::span<const Vector> us, const Vector& z, const Vector& lambda) {
  const double N = double(p.game.n());
  Vector g = -N * z;
  for (std::size_t i = 0; i < p.game.n(); ++i) g += p.game.coupled(i, us[i]);
  return social_cost(p, us, z) + detail::weighted_dot(lambda, g, p.game.weights());
}

/// D(λ) = Σᵢ min_u [V_i + λ·𝔼x_i] + inf_z [φ(z) − N λ·z]; −∞ when any piece is unbounded.
inline double dual_value(const SocialProblem& p, const Vector& lambda) {
  p.game.grid().check(lambda);
  const double z_part = p.phi.tilted_infimum(lambda);
  if (!std::isfinite(z_part)) return -std::numeric_limits<double>::infinity();
  std::vector<double> parts(p.game.n(), 0.0);
  std::atomic<bool> unbounded{false};
  parallel_for(p.game.n(), [&](std::size_t i) {
    try {
      const Vector mu = best_response(p.game, i, lambda);
      parts[i] = best_response_objective(p.game, i, mu, lambda);
    } catch (const UnboundednessError&) {
      unbounded.store(true);
    }
  });
  if (unbounded.load()) return -std::numeric_limits<double>::infinity();
  double s = z_part;
  for (double v : parts) s += v;
  return s;
}

/// J_s(u, z) − D(λ); nonnegative up to solver noise for feasible (u, z).
inline double duality_gap(const SocialProblem& p, std::span<const Vector> us, const Vector& z, const Vector& lambda) {
  return social_cost(p, us, z) - dual_value(p, lambda);
}

/// Solves the reduced problem min_u Σ V_i(u_i) + φ((1/N)Σ 𝔼x_i) independently of the equilibrium solvers.
inline SocialSolution solve_social_direct(const SocialProblem& p, const SocialOptions& opt = {}) {
  const auto& game = p.game;
  auto f = [&](const std::vector<Vector>& us) {
    return detail::private_sum(game, us) + p.phi.value(game.mean_coupled(us));
  };
  auto dx = [&](const std::vector<Vector>& us) -> Vector { return game.coupling()(game.mean_coupled(us)); };
  return detail::minimize_over_controls(game, f, dx, opt);
}

/// Classical welfare Σ_i J_i(u) under certainty equivalence: Σ V_i + N F(x̄)·x̄ + N G(x̄).
inline double classical_cost(const GameInstance& game, std::span<const Vector> us) {
  game.check_profile(us);
  const double N = double(game.n());
  const Vector xbar = game.mean_coupled(us);
  return detail::private_sum(game, us) + N * detail::weighted_dot(game.coupling()(xbar), xbar, game.weights()) +
         N * game.mf_cost().g(xbar);
}

/// Minimizes the classical welfare jointly; the gradient carries the Jacobian-transpose of F.
inline SocialSolution classical_social_solve(const GameInstance& game, const SocialOptions& opt = {}) {
  const auto& F = game.coupling();
  const Vector& w = game.weights();
  auto adjoint = [&](const Vector& xbar, const Vector& v) -> Vector {
    if (F.adjoint_jvp) return F.adjoint_jvp(xbar, v);
    if (F.linear) return F.linear->gain.cwiseProduct(v);
    const Matrix J = detail::fd_jacobian(F.map, xbar, 1e-6);
    return (J.transpose() * w.cwiseProduct(v)).cwiseQuotient(w);
  };
  auto f = [&](const std::vector<Vector>& us) { return classical_cost(game, us); };
  auto dx = [&](const std::vector<Vector>& us) -> Vector {
    const Vector xbar = game.mean_coupled(us);
    return F(xbar) + adjoint(xbar, xbar) + game.mf_cost().grad_g(xbar);
  };
  return detail::minimize_over_controls(game, f, dx, opt);
}

}  // namespace mfg
