#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "mfg/errors.hpp"
#include "mfg/model.hpp"
#include "mfg/projection.hpp"

namespace mfg {

struct QpOptions {
  /// Stop when ‖projected gradient‖ <= tol·(1 + ‖g‖).
  double tol = 1e-9;
  int max_iters = 200000;
  double tikhonov = 1e-12;
};

namespace detail {

inline double power_iteration_lmax(const Matrix& H, int iters = 50) {
  Vector v = Vector::Ones(H.rows()) / std::sqrt(double(H.rows()));
  double lam = 0.0;
  for (int k = 0; k < iters; ++k) {
    const Vector hv = H * v;
    const double nrm = hv.norm();
    if (nrm == 0.0) return 0.0;
    lam = v.dot(hv);
    v = hv / nrm;
  }
  // Rayleigh quotients underestimate; the final norm is a safe upper proxy.
  return std::max(lam, (H * v).norm());
}

/// min g·u over box ∩ optional {Σu = γ}, minimum-norm among ties.
inline Vector solve_lp_simple(const Vector& g, const Polyhedron& P) {
  const Eigen::Index m = g.size();
  const double gscale = 1e-12 * (1.0 + g.cwiseAbs().maxCoeff());
  Vector u(m);
  if (!P.equality) {
    for (Eigen::Index k = 0; k < m; ++k) {
      if (g[k] > gscale) {
        if (!std::isfinite(P.lower[k])) throw UnboundednessError("best response: LP unbounded below (coordinate " + std::to_string(k) + ")");
        u[k] = P.lower[k];
      } else if (g[k] < -gscale) {
        if (!std::isfinite(P.upper[k])) throw UnboundednessError("best response: LP unbounded below (coordinate " + std::to_string(k) + ")");
        u[k] = P.upper[k];
      } else {
        u[k] = clip(0.0, P.lower[k], P.upper[k]);
      }
    }
    return u;
  }
  const double gamma = P.equality->rhs;
  if (!P.lower.allFinite()) {
    if (g.maxCoeff() - g.minCoeff() > gscale)
      throw UnboundednessError("best response: LP unbounded below (infinite lower bound with equality)");
    return knapsack_project(Vector::Zero(m), P.lower, P.upper, gamma);
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return g[a] < g[b]; });
  u = P.lower;
  double budget = gamma - P.lower.sum();
  std::size_t pos = 0;
  while (pos < order.size() && budget > 0.0) {
    std::size_t end = pos + 1;
    while (end < order.size() && g[order[end]] - g[order[pos]] <= gscale) ++end;
    double room = 0.0;
    for (std::size_t j = pos; j < end; ++j) room += P.upper[order[j]] - P.lower[order[j]];
    const double take = std::min(room, budget);
    // Within a tie group, the minimum-norm split is a knapsack projection of 0.
    Vector lo(end - pos), hi(end - pos);
    for (std::size_t j = pos; j < end; ++j) {
      lo[Eigen::Index(j - pos)] = P.lower[order[j]];
      hi[Eigen::Index(j - pos)] = P.upper[order[j]];
    }
    const Vector part = knapsack_project(Vector::Zero(lo.size()), lo, hi, lo.sum() + take);
    for (std::size_t j = pos; j < end; ++j) u[order[j]] = part[Eigen::Index(j - pos)];
    budget -= take;
    pos = end;
  }
  return u;
}

/// True when −g has a component along a null direction of H that is also a recession
/// direction of P, so ½uᵀHu + gᵀu is unbounded below on P.
inline bool unbounded_ray(const Matrix& H, const Vector& g, const Polyhedron& P) {
  if (P.lower.allFinite() && P.upper.allFinite()) return false;
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (H + H.transpose()));
  const double hmax = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  Vector d = Vector::Zero(g.size());
  for (Eigen::Index k = 0; k < g.size(); ++k) {
    if (es.eigenvalues()[k] <= 1e-10 * hmax) {
      const Vector v = es.eigenvectors().col(k);
      d -= v.dot(g) * v;
    }
  }
  const double dn = d.norm();
  if (dn <= 1e-12 * (1.0 + g.norm())) return false;
  d /= dn;
  const double tol = 1e-10;
  for (Eigen::Index k = 0; k < d.size(); ++k) {
    if (d[k] > tol && std::isfinite(P.upper[k])) return false;
    if (d[k] < -tol && std::isfinite(P.lower[k])) return false;
  }
  if (P.equality && std::abs(P.equality->row.dot(d)) > tol * (1.0 + P.equality->row.norm())) return false;
  if (P.inequalities && (P.inequalities->lhs * d).maxCoeff() > tol) return false;
  return g.dot(d) < 0.0;
}

}  // namespace detail

/// argmin ½uᵀHu + gᵀu over P.
inline Vector solve_qp(const Matrix& H, const Vector& g, const Polyhedron& P, QpOptions opt = {},
                       const Vector* warm = nullptr) {
  const Eigen::Index m = g.size();
  if (H.rows() != m || H.cols() != m || P.dim() != m) throw UsageError("solve_qp: dimension mismatch");
  const double hmax = H.cwiseAbs().maxCoeff();
  const double scale = 1.0 + g.norm();

  if (hmax <= 1e-14 * scale) {
    if (P.simple()) return detail::solve_lp_simple(g, P);
  }
  Matrix off = H;
  off.diagonal().setZero();
  const bool diagonal = off.cwiseAbs().maxCoeff() <= 1e-14 * hmax;
  if (diagonal && hmax > 0.0) {
    const Vector d = H.diagonal();
    if ((d.array() - d[0]).abs().maxCoeff() <= 1e-14 * hmax && d[0] > 0.0) return P.project(-g / d[0]);
    if (P.box_only() && (d.array() > 0.0).all())
      return (-g.cwiseQuotient(d)).cwiseMax(P.lower).cwiseMin(P.upper);
  }

  if (detail::unbounded_ray(H, g, P))
    throw UnboundednessError("best response: objective unbounded below along a feasible ray");
  Matrix Ht = H;
  Ht.diagonal().array() += opt.tikhonov;
  const double L = 1.01 * detail::power_iteration_lmax(Ht) + 1e-12;
  auto f = [&](const Vector& u) { return 0.5 * u.dot(Ht * u) + g.dot(u); };
  Vector x = P.project(warm ? *warm : Vector::Zero(m));
  Vector y = x;
  double fx = f(x);
  double t = 1.0;
  const double blowup = 1e12 * scale;
  double pg = std::numeric_limits<double>::infinity();
  for (int it = 0; it < opt.max_iters; ++it) {
    Vector xn = P.project(y - (Ht * y + g) / L);
    double fn = f(xn);
    if (fn > fx) {
      // Restart momentum from the last accepted iterate.
      t = 1.0;
      y = x;
      xn = P.project(x - (Ht * x + g) / L);
      fn = f(xn);
    }
    const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    y = xn + ((t - 1.0) / tn) * (xn - x);
    t = tn;
    x = std::move(xn);
    fx = fn;
    if (x.lpNorm<Eigen::Infinity>() > blowup)
      throw UnboundednessError("best response: objective unbounded below along a feasible ray");
    pg = L * (x - P.project(x - (Ht * x + g) / L)).norm();
    if (pg <= opt.tol * scale) return x;
  }
  throw NumericalError("solve_qp: projected gradient did not converge", pg);
}

/// Optional proximal term (ρ/2)‖C u + d − center‖² added to the best-response objective.
struct ProxTerm {
  double rho = 0.0;
  Vector center;
};

/// Best-response data ½uᵀHu + gᵀu for agent i against price y.
struct BestResponseQp {
  Matrix H;
  Vector g;
  double constant = 0.0;
};

inline BestResponseQp best_response_qp(const GameInstance& game, std::size_t i, const Vector& y,
                                       const ProxTerm* prox = nullptr) {
  const auto& a = game.agent(i);
  game.grid().check(y);
  const Matrix C = game.coupled_matrix(i);
  const Vector d = game.coupled_offset(i);
  const Vector& w = game.weights();
  BestResponseQp qp;
  qp.H = 2.0 * a.cost_quad;
  qp.g = a.cost_lin + C.transpose() * w.cwiseProduct(y);
  qp.constant = a.cost_const + detail::weighted_dot(y, d, w);
  if (prox && prox->rho > 0.0) {
    const Vector shift = d - prox->center;
    qp.H += prox->rho * C.transpose() * w.asDiagonal() * C;
    qp.g += prox->rho * C.transpose() * w.cwiseProduct(shift);
    qp.constant += 0.5 * prox->rho * detail::weighted_dot(shift, shift, w);
  }
  return qp;
}

/// J^br_i(u; y) = V_i(u) + y·E x_i.
inline double best_response_objective(const GameInstance& game, std::size_t i, const Vector& u, const Vector& y) {
  return game.agent(i).private_cost(u) + detail::weighted_dot(y, game.coupled(i, u), game.weights());
}

/// μ_i(y) = argmin over the admissible set of V_i(u) + y·E x_i (optionally with a prox term).
inline Vector best_response(const GameInstance& game, std::size_t i, const Vector& y, const ProxTerm* prox = nullptr,
                            QpOptions opt = {}, const Vector* warm = nullptr) {
  const auto qp = best_response_qp(game, i, y, prox);
  return solve_qp(qp.H, qp.g, game.agent(i).admissible, opt, warm);
}

/// Best response for a stand-alone agent whose coupled quantity is its state A u + b.
inline Vector best_response(const AgentModel& agent, const TrajectorySpace& space, const Vector& y, QpOptions opt = {}) {
  space.check(y);
  const Vector& w = space.weights();
  const Vector g = agent.cost_lin + agent.state_matrix.transpose() * w.cwiseProduct(y);
  return solve_qp(2.0 * agent.cost_quad, g, agent.admissible, opt);
}

struct PgOptions {
  double tol = 1e-9;
  int max_iters = 100000;
  /// Gradient scaling for a diagonal metric; valid only with box projections.
  std::optional<Vector> metric;
};

struct PgResult {
  Vector x;
  double value = 0.0;
  double pg_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// FISTA with backtracking and function-value restart for min f over a set given by `project`.
/// Stops when ‖L·(x − P(x − ∇f/L))‖ <= tol·(1 + ‖∇f(x0)‖).
inline PgResult accelerated_projected_gradient(const std::function<double(const Vector&)>& f,
                                               const std::function<Vector(const Vector&)>& grad,
                                               const std::function<Vector(const Vector&)>& project,
                                               const Vector& x0, PgOptions opt = {}) {
  PgResult r;
  Vector x = project(x0);
  double fx = f(x);
  Vector gx = grad(x);
  const double scale = 1.0 + gx.norm();
  const Vector Dinv = opt.metric ? Vector(opt.metric->cwiseInverse()) : Vector(Vector::Ones(x.size()));
  double L = 1.0;
  Vector y = x;
  double t = 1.0;
  auto step_from = [&](const Vector& p, const Vector& gp, double Lc) { return project(p - Dinv.cwiseProduct(gp) / Lc); };
  // Backtracking prox-gradient step from p; grows L until the quadratic model majorizes f.
  auto backtrack = [&](const Vector& p, double fp, const Vector& gp, Vector& out, double& fout) {
    for (;;) {
      out = step_from(p, gp, L);
      fout = f(out);
      const Vector dp = out - p;
      const double model = fp + gp.dot(dp) + 0.5 * L * dp.cwiseQuotient(Dinv).dot(dp);
      if (std::isfinite(fout) && fout <= model + 1e-12 * (1.0 + std::abs(fp))) return;
      L *= 2.0;
      if (L > 1e30) throw NumericalError("projected gradient: step size underflow", r.pg_norm);
    }
  };
  for (int it = 1; it <= opt.max_iters; ++it) {
    Vector xn;
    double fn;
    backtrack(y, f(y), grad(y), xn, fn);
    if (fn > fx) {
      // Momentum overshoot: restart with a plain step from x.
      t = 1.0;
      backtrack(x, fx, gx, xn, fn);
      y = xn;
    } else {
      const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      y = xn + ((t - 1.0) / tn) * (xn - x);
      t = tn;
    }
    x = std::move(xn);
    fx = fn;
    gx = grad(x);
    r.pg_norm = (L * (x - step_from(x, gx, L)).cwiseQuotient(Dinv)).norm();
    r.iterations = it;
    if (r.pg_norm <= opt.tol * scale) {
      r.converged = true;
      break;
    }
    L = std::max(1e-12, 0.9 * L);
  }
  r.x = x;
  r.value = fx;
  return r;
}

/// Exact certainty-equivalent J_i for a unilateral deviation u against fixed others.
inline double full_cost_deterministic(const GameInstance& game, std::size_t i, const Vector& u, const Vector& others_sum) {
  const double N = double(game.n());
  const Vector x = game.coupled(i, u);
  const Vector xbar = (x + others_sum) / N;
  return detail::cost_at(game, i, u, x, xbar);
}

/// Deviator's argmin of the full J_i (self-influence on the mean included).
inline Vector best_response_full(const GameInstance& game, std::size_t i, std::span<const Vector> us,
                                 QpOptions opt = {}) {
  game.check_profile(us);
  const auto& a = game.agent(i);
  const double N = double(game.n());
  const Vector& w = game.weights();
  Vector others = Vector::Zero(game.dim());
  for (std::size_t j = 0; j < game.n(); ++j)
    if (j != i) others += game.coupled(j, us[j]);
  const Matrix C = game.coupled_matrix(i);
  const Vector d = game.coupled_offset(i);
  const auto& F = game.coupling();
  const auto& G = game.mf_cost();

  if (F.linear && G.quadratic) {
    const Vector& ga = F.linear->gain;
    const Vector& gb = F.linear->offset;
    const double kq = G.quadratic->coeff;
    const Vector curv = 2.0 * ga / N + Vector::Constant(ga.size(), 2.0 * kq / (N * N));
    const Matrix H = 2.0 * a.cost_quad + C.transpose() * (w.cwiseProduct(curv)).asDiagonal() * C;
    const Vector xbar0 = (d + others) / N;
    const Vector dx = w.cwiseProduct(ga.cwiseProduct(xbar0) + gb + ga.cwiseProduct(d) / N +
                                     (2.0 * kq * xbar0 + G.quadratic->lin) / N);
    const Vector g = a.cost_lin + C.transpose() * dx;
    const Vector warm = us[i];
    return solve_qp(H, g, a.admissible, opt, &warm);
  }

  auto f = [&](const Vector& u) { return full_cost_deterministic(game, i, u, others); };
  // Weighted adjoint DF(x̄)* x = W⁻¹ Jᵀ W x, with J by finite differences when not supplied.
  auto adjoint = [&](const Vector& xbar, const Vector& x) -> Vector {
    if (F.adjoint_jvp) return F.adjoint_jvp(xbar, x);
    const Matrix J = detail::fd_jacobian(F.map, xbar, 1e-6);
    return (J.transpose() * w.cwiseProduct(x)).cwiseQuotient(w);
  };
  auto grad = [&](const Vector& u) -> Vector {
    const Vector x = C * u + d;
    const Vector xbar = (x + others) / N;
    const Vector dx = F(xbar) + adjoint(xbar, x) / N + G.grad_g(xbar) / N;
    return a.private_gradient(u) + C.transpose() * w.cwiseProduct(dx);
  };
  PgOptions po;
  po.tol = opt.tol;
  const auto res = accelerated_projected_gradient(f, grad, [&](const Vector& v) { return a.admissible.project(v); },
                                                  us[i], po);
  if (!res.converged)
    throw NumericalError("best_response_full: agent " + std::to_string(i) + " did not converge", res.pg_norm);
  return res.x;
}

}  // namespace mfg
