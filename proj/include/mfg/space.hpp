#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mfg/errors.hpp"

namespace mfg {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Finite time grid with positive quadrature weights. The weighted sum
/// x·y = Σ_k w_k x_k y_k is the inner product of the discretized state space;
/// every functional gradient in this library is a Riesz representer with
/// respect to it (Euclidean gradient = W · weighted gradient).
class TrajectorySpace {
 public:
  TrajectorySpace(Vector weights, Vector grid) : weights_(std::move(weights)), grid_(std::move(grid)) {
    if (weights_.size() < 1) throw UsageError("TrajectorySpace: dim must be >= 1");
    if (grid_.size() != weights_.size())
      throw UsageError("TrajectorySpace: weights and grid lengths differ");
    for (Eigen::Index k = 0; k < weights_.size(); ++k) {
      if (!(weights_[k] > 0.0) || !std::isfinite(weights_[k]))
        throw UsageError("TrajectorySpace: weight " + std::to_string(k) + " is not strictly positive");
    }
  }

  explicit TrajectorySpace(Vector weights)
      : TrajectorySpace(weights, Vector::LinSpaced(weights.size(), 0.0, double(weights.size() - 1))) {}

  /// Unit weights on t_k = k·dt (finite-horizon sums).
  static TrajectorySpace unit(std::size_t dim, double dt = 1.0) {
    const auto n = static_cast<Eigen::Index>(dim);
    Vector grid(n);
    for (Eigen::Index k = 0; k < n; ++k) grid[k] = double(k) * dt;
    return TrajectorySpace(Vector::Ones(n), grid);
  }

  /// Composite-rectangle weights w_k = e^{-rho t_k}·dt on t_k = k·dt, k·dt < t_max.
  /// With t_max <= 0 the horizon is the first t with e^{-rho t} < 1e-8.
  static TrajectorySpace exponential(double rho, double dt, double t_max = 0.0) {
    if (!(dt > 0.0)) throw UsageError("exponential space: dt must be positive");
    if (t_max <= 0.0) {
      if (!(rho > 0.0)) throw UsageError("exponential space: rho must be positive when t_max is implicit");
      t_max = -std::log(1e-8) / rho;
    }
    const auto n = static_cast<Eigen::Index>(std::ceil(t_max / dt - 1e-12));
    Vector grid(n), w(n);
    for (Eigen::Index k = 0; k < n; ++k) {
      grid[k] = double(k) * dt;
      w[k] = std::exp(-rho * grid[k]) * dt;
    }
    return TrajectorySpace(w, grid);
  }

  [[nodiscard]] std::size_t dim() const noexcept { return static_cast<std::size_t>(weights_.size()); }
  [[nodiscard]] Eigen::Index size() const noexcept { return weights_.size(); }
  [[nodiscard]] const Vector& weights() const noexcept { return weights_; }
  [[nodiscard]] const Vector& grid() const noexcept { return grid_; }

  [[nodiscard]] double inner(const Vector& x, const Vector& y) const {
    check(x);
    check(y);
    double s = 0.0;
    for (Eigen::Index k = 0; k < weights_.size(); ++k) s += weights_[k] * x[k] * y[k];
    return s;
  }

  [[nodiscard]] double norm(const Vector& x) const { return std::sqrt(inner(x, x)); }

  void check(const Vector& x) const {
    if (x.size() != weights_.size())
      throw UsageError("dimension mismatch: vector has " + std::to_string(x.size()) +
                       " entries, space has " + std::to_string(weights_.size()));
  }

  friend bool operator==(const TrajectorySpace& a, const TrajectorySpace& b) {
    return a.weights_ == b.weights_ && a.grid_ == b.grid_;
  }

 private:
  Vector weights_;
  Vector grid_;
};

using SpacePtr = std::shared_ptr<const TrajectorySpace>;

inline SpacePtr make_space(TrajectorySpace s) { return std::make_shared<const TrajectorySpace>(std::move(s)); }

/// An element of a TrajectorySpace. Entries are always finite.
class Trajectory {
 public:
  Trajectory(SpacePtr space, Vector values) : space_(std::move(space)), values_(std::move(values)) {
    if (!space_) throw UsageError("Trajectory: null space");
    space_->check(values_);
    if (!values_.allFinite()) throw UsageError("Trajectory: non-finite entry");
  }

  static Trajectory zero(SpacePtr space) {
    const auto n = space->size();
    return Trajectory(std::move(space), Vector::Zero(n));
  }

  [[nodiscard]] const Vector& values() const noexcept { return values_; }
  [[nodiscard]] const SpacePtr& space() const noexcept { return space_; }
  [[nodiscard]] std::size_t dim() const noexcept { return static_cast<std::size_t>(values_.size()); }
  [[nodiscard]] double operator[](Eigen::Index k) const { return values_[k]; }

 private:
  SpacePtr space_;
  Vector values_;
};

namespace detail {
inline void same_space(const Trajectory& x, const Trajectory& y) {
  if (x.space() != y.space() && !(*x.space() == *y.space()))
    throw UsageError("trajectories belong to different spaces");
}
}  // namespace detail

inline double inner(const Trajectory& x, const Trajectory& y) {
  detail::same_space(x, y);
  return x.space()->inner(x.values(), y.values());
}

inline double norm(const Trajectory& x) { return x.space()->norm(x.values()); }

/// Elementwise average, summed in list order.
inline Vector mean_of(std::span<const Vector> xs) {
  if (xs.empty()) throw UsageError("mean_of: empty list");
  Vector s = Vector::Zero(xs.front().size());
  for (const auto& x : xs) {
    if (x.size() != s.size()) throw UsageError("mean_of: dimension mismatch");
    s += x;
  }
  return s / double(xs.size());
}

inline Trajectory mean_of(std::span<const Trajectory> trajs) {
  if (trajs.empty()) throw UsageError("mean_of: empty list");
  Vector s = Vector::Zero(trajs.front().space()->size());
  for (const auto& t : trajs) {
    detail::same_space(trajs.front(), t);
    s += t.values();
  }
  return Trajectory(trajs.front().space(), s / double(trajs.size()));
}

}  // namespace mfg
