#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mfg/errors.hpp"
#include "mfg/space.hpp"

namespace mfg {

/// e·u = rhs
struct LinearEquality {
  Vector row;
  double rhs = 0.0;
};

/// lhs·u <= rhs, one constraint per row
struct LinearInequalities {
  Matrix lhs;
  Vector rhs;
};

namespace detail {

inline double clip(double x, double lo, double hi) { return std::min(std::max(x, lo), hi); }

inline double knapsack_sum(const Vector& v, const Vector& lower, const Vector& upper, double tau) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < v.size(); ++k) s += clip(v[k] - tau, lower[k], upper[k]);
  return s;
}

inline bool is_all_ones(const Vector& row) { return (row.array() == 1.0).all(); }

}  // namespace detail

/// Euclidean projection onto {lower <= u <= upper, Σu = gamma}.
///
/// Bisection on the scalar shift τ in u_k = clip(v_k − τ, l_k, ub_k), then one exact
/// re-solve for τ on the identified free set.
inline Vector knapsack_project(const Vector& v, const Vector& lower, const Vector& upper, double gamma) {
  if (v.size() != lower.size() || v.size() != upper.size())
    throw UsageError("knapsack_project: dimension mismatch");
  const double tol = 1e-12 * std::max(1.0, std::abs(gamma));
  const double lo_sum = lower.sum();
  const double hi_sum = upper.sum();
  if ((lower.array() > upper.array()).any()) throw InfeasibilityError("knapsack_project: lower > upper");
  if (gamma < lo_sum - tol || gamma > hi_sum + tol)
    throw InfeasibilityError("knapsack_project: gamma=" + std::to_string(gamma) + " outside [" +
                             std::to_string(lo_sum) + ", " + std::to_string(hi_sum) + "]");

  // Bracket [min(v−ub), max(v−l)]; infinite bounds get an expanding search instead.
  double tau_lo = (v - upper).minCoeff();
  double tau_hi = (v - lower).maxCoeff();
  if (!std::isfinite(tau_lo)) {
    double step = 1.0 + std::abs(gamma);
    tau_lo = v.minCoeff() - step;
    while (detail::knapsack_sum(v, lower, upper, tau_lo) < gamma) tau_lo -= (step *= 2.0);
  }
  if (!std::isfinite(tau_hi)) {
    double step = 1.0 + std::abs(gamma);
    tau_hi = v.maxCoeff() + step;
    while (detail::knapsack_sum(v, lower, upper, tau_hi) > gamma) tau_hi += (step *= 2.0);
  }

  double tau = 0.5 * (tau_lo + tau_hi);
  for (int it = 0; it < 200; ++it) {
    tau = 0.5 * (tau_lo + tau_hi);
    const double s = detail::knapsack_sum(v, lower, upper, tau);
    if (std::abs(s - gamma) <= tol) break;
    if (s > gamma)
      tau_lo = tau;
    else
      tau_hi = tau;
  }

  Vector u(v.size());
  for (Eigen::Index k = 0; k < v.size(); ++k) u[k] = detail::clip(v[k] - tau, lower[k], upper[k]);

  // Exact τ on the free set; keep it only if it reduces the constraint error.
  double fixed = 0.0, free_v = 0.0;
  int n_free = 0;
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    const double x = v[k] - tau;
    if (x > lower[k] && x < upper[k]) {
      free_v += v[k];
      ++n_free;
    } else {
      fixed += u[k];
    }
  }
  if (n_free > 0) {
    const double tau_exact = (free_v - (gamma - fixed)) / n_free;
    Vector w(v.size());
    for (Eigen::Index k = 0; k < v.size(); ++k) w[k] = detail::clip(v[k] - tau_exact, lower[k], upper[k]);
    if (std::abs(w.sum() - gamma) <= std::abs(u.sum() - gamma)) u = w;
  }
  return u;
}

/// Simple convex sets with exact single-set projections.
struct BoxSet {
  Vector lower, upper;
  [[nodiscard]] Vector project(const Vector& v) const { return v.cwiseMax(lower).cwiseMin(upper); }
  [[nodiscard]] double violation(const Vector& u) const {
    return std::max({0.0, (lower - u).maxCoeff(), (u - upper).maxCoeff()});
  }
};

struct KnapsackSet {
  Vector lower, upper;
  double total = 0.0;
  [[nodiscard]] Vector project(const Vector& v) const { return knapsack_project(v, lower, upper, total); }
  [[nodiscard]] double violation(const Vector& u) const {
    return std::max(BoxSet{lower, upper}.violation(u), std::abs(u.sum() - total));
  }
};

struct HyperplaneSet {
  Vector normal;
  double offset = 0.0;
  [[nodiscard]] Vector project(const Vector& v) const {
    const double nn = normal.squaredNorm();
    return v - ((normal.dot(v) - offset) / nn) * normal;
  }
  [[nodiscard]] double violation(const Vector& u) const { return std::abs(normal.dot(u) - offset); }
};

struct HalfspaceSet {
  Vector normal;
  double offset = 0.0;
  [[nodiscard]] Vector project(const Vector& v) const {
    const double excess = normal.dot(v) - offset;
    if (excess <= 0.0) return v;
    return v - (excess / normal.squaredNorm()) * normal;
  }
  [[nodiscard]] double violation(const Vector& u) const { return std::max(0.0, normal.dot(u) - offset); }
};

using ConvexSet = std::variant<BoxSet, KnapsackSet, HyperplaneSet, HalfspaceSet>;

inline Vector project_onto(const ConvexSet& s, const Vector& v) {
  return std::visit([&](const auto& set) { return set.project(v); }, s);
}

inline double violation_of(const ConvexSet& s, const Vector& u) {
  return std::visit([&](const auto& set) { return set.violation(u); }, s);
}

struct DykstraOptions {
  double tol = 1e-10;
  int max_sweeps = 10000;
};

/// Projection onto the intersection of `sets` by Dykstra's alternating projections.
inline Vector dykstra_project(const Vector& v, std::span<const ConvexSet> sets, DykstraOptions opt = {}) {
  if (sets.empty()) throw UsageError("dykstra_project: no sets");
  if (sets.size() == 1) return project_onto(sets.front(), v);
  std::vector<Vector> increments(sets.size(), Vector::Zero(v.size()));
  Vector x = v;
  double change = std::numeric_limits<double>::infinity();
  for (int sweep = 0; sweep < opt.max_sweeps; ++sweep) {
    const Vector x_prev = x;
    for (std::size_t j = 0; j < sets.size(); ++j) {
      const Vector y = x + increments[j];
      x = project_onto(sets[j], y);
      increments[j] = y - x;
    }
    change = (x - x_prev).norm();
    if (change <= opt.tol) {
      double viol = 0.0;
      for (const auto& s : sets) viol = std::max(viol, violation_of(s, x));
      if (viol <= 1e-8 * (1.0 + x.lpNorm<Eigen::Infinity>())) return x;
    }
  }
  throw NumericalError("dykstra_project: no convergence within " + std::to_string(opt.max_sweeps) +
                           " sweeps (last change " + std::to_string(change) + ")",
                       change);
}

/// Polyhedral admissible set l <= u <= ub, optional e·u = γ, optional G·u <= h.
struct Polyhedron {
  Vector lower, upper;
  std::optional<LinearEquality> equality;
  std::optional<LinearInequalities> inequalities;

  [[nodiscard]] Eigen::Index dim() const { return lower.size(); }

  [[nodiscard]] bool box_only() const { return !equality && !inequalities; }

  /// Box ∩ (sum-hyperplane when the equality row is all ones).
  [[nodiscard]] bool simple() const {
    return !inequalities && (!equality || detail::is_all_ones(equality->row));
  }

  [[nodiscard]] ConvexSet base_set() const {
    if (equality && detail::is_all_ones(equality->row)) return KnapsackSet{lower, upper, equality->rhs};
    return BoxSet{lower, upper};
  }

  [[nodiscard]] std::vector<ConvexSet> all_sets() const {
    std::vector<ConvexSet> sets{base_set()};
    if (equality && !detail::is_all_ones(equality->row)) sets.emplace_back(HyperplaneSet{equality->row, equality->rhs});
    if (inequalities)
      for (Eigen::Index r = 0; r < inequalities->lhs.rows(); ++r)
        sets.emplace_back(HalfspaceSet{inequalities->lhs.row(r).transpose(), inequalities->rhs[r]});
    return sets;
  }

  [[nodiscard]] double violation(const Vector& u) const {
    double viol = BoxSet{lower, upper}.violation(u);
    if (equality) viol = std::max(viol, std::abs(equality->row.dot(u) - equality->rhs));
    if (inequalities)
      viol = std::max(viol, std::max(0.0, (inequalities->lhs * u - inequalities->rhs).maxCoeff()));
    return viol;
  }

  [[nodiscard]] bool contains(const Vector& u, double tol = 1e-9) const {
    return violation(u) <= tol * (1.0 + u.lpNorm<Eigen::Infinity>());
  }

  /// Euclidean projection. When the projection onto the base set already satisfies
  /// every remaining constraint it is the answer; otherwise Dykstra.
  [[nodiscard]] Vector project(const Vector& v) const {
    if (v.size() != dim()) throw UsageError("Polyhedron::project: dimension mismatch");
    const ConvexSet base = base_set();
    Vector p = project_onto(base, v);
    if (simple()) return p;
    if (contains(p, 1e-12)) return p;
    const auto sets = all_sets();
    return dykstra_project(v, sets);
  }
};

}  // namespace mfg
