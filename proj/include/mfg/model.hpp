#pragma once

#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mfg/errors.hpp"
#include "mfg/projection.hpp"
#include "mfg/random.hpp"
#include "mfg/space.hpp"

namespace mfg {

/// Zero-mean additive perturbation, i.i.d. across coordinates and agents.
struct NoiseSpec {
  enum class Kind { gaussian, truncated_gaussian, uniform };
  Kind kind = Kind::truncated_gaussian;
  /// Standard deviation of the untruncated Gaussian, or half-width for uniform.
  double scale = 0.0;
  /// Truncation point in units of `scale` (truncated_gaussian only).
  double truncation = 3.0;

  /// Per-coordinate variance.
  [[nodiscard]] double variance() const {
    switch (kind) {
      case Kind::gaussian:
        return scale * scale;
      case Kind::uniform:
        return scale * scale / 3.0;
      case Kind::truncated_gaussian: {
        const double a = truncation;
        const double pdf = std::exp(-0.5 * a * a) / std::sqrt(2.0 * M_PI);
        const double mass = std::erf(a / std::sqrt(2.0));
        return scale * scale * (1.0 - 2.0 * a * pdf / mass);
      }
    }
    return 0.0;
  }

  /// Declared second-moment bound C = E‖π‖² in `space`.
  [[nodiscard]] double second_moment(const TrajectorySpace& space) const { return variance() * space.weights().sum(); }

  [[nodiscard]] double draw(std::mt19937_64& rng) const {
    switch (kind) {
      case Kind::gaussian:
        return scale * standard_normal(rng);
      case Kind::uniform:
        return mfg::uniform(rng, -scale, scale);
      case Kind::truncated_gaussian:
        for (;;) {
          const double z = standard_normal(rng);
          if (std::abs(z) <= truncation) return scale * z;
        }
    }
    return 0.0;
  }

  [[nodiscard]] Vector sample(std::mt19937_64& rng, Eigen::Index n) const {
    Vector v(n);
    for (Eigen::Index k = 0; k < n; ++k) v[k] = draw(rng);
    return v;
  }
};

/// One agent: expected state A u + b, private cost uᵀQu + qᵀu + c0, admissible polyhedron.
struct AgentModel {
  Matrix state_matrix;
  Vector state_offset;
  std::optional<NoiseSpec> noise;
  Matrix cost_quad;
  Vector cost_lin;
  double cost_const = 0.0;
  Polyhedron admissible;

  [[nodiscard]] Eigen::Index control_dim() const { return cost_lin.size(); }

  [[nodiscard]] double private_cost(const Vector& u) const {
    return u.dot(cost_quad * u) + cost_lin.dot(u) + cost_const;
  }

  [[nodiscard]] Vector private_gradient(const Vector& u) const { return 2.0 * (cost_quad * u) + cost_lin; }
};

/// A u + b, plus the noise sample when given.
inline Vector state_of(const AgentModel& agent, const Vector& u, const Vector* noise_sample = nullptr) {
  if (u.size() != agent.state_matrix.cols())
    throw UsageError("state_of: control has " + std::to_string(u.size()) + " entries, expected " +
                     std::to_string(agent.state_matrix.cols()));
  Vector x = agent.state_matrix * u + agent.state_offset;
  if (noise_sample) {
    if (noise_sample->size() != x.size()) throw UsageError("state_of: noise dimension mismatch");
    x += *noise_sample;
  }
  return x;
}

inline Trajectory state_of(const AgentModel& agent, const SpacePtr& space, const Vector& u,
                           const Vector* noise_sample = nullptr) {
  return Trajectory(space, state_of(agent, u, noise_sample));
}

enum class CouplingTarget { state_mean, control_mean };

/// F(z) = gain ∘ z + offset.
struct LinearForm {
  Vector gain;
  Vector offset;
};

/// Closed-form potential ψ with ∇ψ = F, so φ = N ψ.
struct CouplingPotential {
  std::function<double(const Vector&)> value;
  /// argmin_z ψ(z) − λ·z, or nullopt when unbounded below.
  std::function<std::optional<Vector>(const Vector&)> tilted_argmin;
};

struct Coupling {
  using Map = std::function<Vector(const Vector&)>;

  Map map;
  double lipschitz = 0.0;
  bool monotone = false;
  CouplingTarget target = CouplingTarget::state_mean;
  /// F_t depends on z_t only.
  bool separable = false;
  std::optional<LinearForm> linear;
  std::optional<CouplingPotential> potential;
  /// Adjoint Jacobian product DF(z)* v (weighted), used by the classical welfare gradient.
  std::function<Vector(const Vector& z, const Vector& v)> adjoint_jvp;
  /// Sampling box for construction checks; standard normal draws when absent.
  std::optional<std::pair<Vector, Vector>> domain;

  Vector operator()(const Vector& z) const { return map(z); }
  Trajectory operator()(const Trajectory& z) const { return Trajectory(z.space(), map(z.values())); }

  static Coupling zero(Eigen::Index dim, CouplingTarget target = CouplingTarget::state_mean) {
    return affine(Vector::Zero(dim), Vector::Zero(dim), target);
  }

  /// Diagonal affine coupling; monotone iff all gains are nonnegative.
  static Coupling affine(Vector gain, Vector offset, CouplingTarget target = CouplingTarget::state_mean) {
    if (gain.size() != offset.size()) throw UsageError("Coupling::affine: gain/offset size mismatch");
    Coupling c;
    c.linear = LinearForm{gain, offset};
    c.map = [gain, offset](const Vector& z) -> Vector { return gain.cwiseProduct(z) + offset; };
    c.lipschitz = gain.cwiseAbs().maxCoeff();
    c.monotone = (gain.array() >= 0.0).all();
    c.target = target;
    c.separable = true;
    c.adjoint_jvp = [gain](const Vector&, const Vector& v) -> Vector { return gain.cwiseProduct(v); };
    return c;
  }
};

/// Mean-field cost G with weighted gradient.
struct MeanFieldCost {
  /// G(z) = coeff·(z·z) + lin·z + constant, in the weighted inner product.
  struct Quadratic {
    double coeff = 0.0;
    Vector lin;
    double constant = 0.0;
  };

  std::function<double(const Vector&)> g;
  std::function<Vector(const Vector&)> grad_g;
  double grad_lipschitz = 0.0;
  std::optional<Quadratic> quadratic;

  static MeanFieldCost zero(const TrajectorySpace& space) {
    return from_quadratic(space, 0.0, Vector::Zero(space.size()), 0.0);
  }

  static MeanFieldCost from_quadratic(const TrajectorySpace& space, double coeff, Vector lin, double constant) {
    if (lin.size() != space.size()) throw UsageError("MeanFieldCost: linear term has wrong dimension");
    MeanFieldCost m;
    const Vector w = space.weights();
    m.quadratic = Quadratic{coeff, lin, constant};
    m.g = [w, coeff, lin, constant](const Vector& z) {
      return coeff * (w.array() * z.array().square()).sum() + (w.array() * lin.array() * z.array()).sum() + constant;
    };
    m.grad_g = [coeff, lin](const Vector& z) -> Vector { return 2.0 * coeff * z + lin; };
    m.grad_lipschitz = 2.0 * std::abs(coeff);
    return m;
  }
};

namespace detail {

inline Vector sample_point(const std::optional<std::pair<Vector, Vector>>& domain, Eigen::Index n,
                           std::mt19937_64& rng) {
  Vector x(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    if (domain) {
      const double lo = domain->first[k], hi = domain->second[k];
      x[k] = mfg::uniform(rng, lo, hi);
    } else {
      x[k] = standard_normal(rng);
    }
  }
  return x;
}

/// Weighted gradient of f by central differences, relative step `rel`.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x, const Vector& w,
                          double rel = 1e-5) {
  Vector g(x.size());
  Vector xp = x;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double h = rel * (1.0 + std::abs(x[k]));
    xp[k] = x[k] + h;
    const double fp = f(xp);
    xp[k] = x[k] - h;
    const double fm = f(xp);
    xp[k] = x[k];
    g[k] = (fp - fm) / (2.0 * h) / w[k];
  }
  return g;
}

/// Dense Jacobian of `map` by central differences.
inline Matrix fd_jacobian(const Coupling::Map& map, const Vector& x, double rel = 1e-5) {
  const Eigen::Index n = x.size();
  Matrix J(n, n);
  Vector xp = x;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double h = rel * (1.0 + std::abs(x[k]));
    xp[k] = x[k] + h;
    const Vector fp = map(xp);
    xp[k] = x[k] - h;
    const Vector fm = map(xp);
    xp[k] = x[k];
    J.col(k) = (fp - fm) / (2.0 * h);
  }
  return J;
}

inline double weighted_norm(const Vector& x, const Vector& w) { return std::sqrt((w.array() * x.array().square()).sum()); }

}  // namespace detail

/// N agents, coupling, and mean-field cost on one space. Validated at construction.
class GameInstance {
 public:
  GameInstance(SpacePtr space, std::vector<AgentModel> agents, Coupling coupling, MeanFieldCost mf_cost,
               std::uint64_t check_seed = 0)
      : space_(std::move(space)), agents_(std::move(agents)), coupling_(std::move(coupling)), mf_cost_(std::move(mf_cost)) {
    if (!space_) throw ConstructionError("GameInstance: null space");
    if (agents_.empty()) throw ConstructionError("GameInstance: need at least one agent");
    if (!coupling_.map) throw ConstructionError("GameInstance: coupling map missing");
    if (!mf_cost_.g || !mf_cost_.grad_g) throw ConstructionError("GameInstance: mean-field cost incomplete");
    for (std::size_t i = 0; i < agents_.size(); ++i) validate_agent(i);
    check_coupling(check_seed);
    check_mf_cost(check_seed);
  }

  [[nodiscard]] const SpacePtr& space() const noexcept { return space_; }
  [[nodiscard]] const TrajectorySpace& grid() const noexcept { return *space_; }
  [[nodiscard]] std::size_t n() const noexcept { return agents_.size(); }
  [[nodiscard]] const std::vector<AgentModel>& agents() const noexcept { return agents_; }
  [[nodiscard]] const AgentModel& agent(std::size_t i) const {
    if (i >= agents_.size()) throw UsageError("agent index " + std::to_string(i) + " out of range");
    return agents_[i];
  }
  [[nodiscard]] const Coupling& coupling() const noexcept { return coupling_; }
  [[nodiscard]] const MeanFieldCost& mf_cost() const noexcept { return mf_cost_; }
  [[nodiscard]] const Vector& weights() const noexcept { return space_->weights(); }
  [[nodiscard]] Eigen::Index dim() const noexcept { return space_->size(); }

  /// Matrix C_i of the coupled quantity C_i u + d_i (state or control, by target).
  [[nodiscard]] Matrix coupled_matrix(std::size_t i) const {
    const auto& a = agent(i);
    if (coupling_.target == CouplingTarget::control_mean) return Matrix::Identity(dim(), dim());
    return a.state_matrix;
  }

  [[nodiscard]] Vector coupled_offset(std::size_t i) const {
    const auto& a = agent(i);
    if (coupling_.target == CouplingTarget::control_mean) return Vector::Zero(dim());
    return a.state_offset;
  }

  /// Expected coupled quantity E x_i.
  [[nodiscard]] Vector coupled(std::size_t i, const Vector& u) const {
    const auto& a = agent(i);
    if (u.size() != a.control_dim())
      throw UsageError("control of agent " + std::to_string(i) + " has wrong dimension");
    if (coupling_.target == CouplingTarget::control_mean) return u;
    return a.state_matrix * u + a.state_offset;
  }

  [[nodiscard]] std::vector<Vector> coupled_all(std::span<const Vector> us) const {
    check_profile(us);
    std::vector<Vector> xs;
    xs.reserve(us.size());
    for (std::size_t i = 0; i < us.size(); ++i) xs.push_back(coupled(i, us[i]));
    return xs;
  }

  /// (1/N) Σ E x_i in agent order.
  [[nodiscard]] Vector mean_coupled(std::span<const Vector> us) const {
    const auto xs = coupled_all(us);
    return mean_of(std::span<const Vector>(xs));
  }

  void check_profile(std::span<const Vector> us) const {
    if (us.size() != agents_.size())
      throw UsageError("control profile has " + std::to_string(us.size()) + " entries, game has " +
                       std::to_string(agents_.size()) + " agents");
  }

  /// True when every agent is noise-free.
  [[nodiscard]] bool deterministic() const {
    for (const auto& a : agents_)
      if (a.noise && a.noise->scale > 0.0) return false;
    return true;
  }

  /// Per-coordinate noise variance of agent i's coupled quantity.
  [[nodiscard]] double noise_variance(std::size_t i) const {
    const auto& a = agent(i);
    return a.noise ? a.noise->variance() : 0.0;
  }

 private:
  void validate_agent(std::size_t i) const {
    const auto& a = agents_[i];
    const std::string who = "agent " + std::to_string(i) + ": ";
    const Eigen::Index m = a.control_dim();
    const Eigen::Index T = dim();
    if (m < 1) throw ConstructionError(who + "empty control");
    if (a.state_matrix.rows() != T || a.state_matrix.cols() != m)
      throw ConstructionError(who + "state_matrix must be T x m");
    if (a.state_offset.size() != T) throw ConstructionError(who + "state_offset must have T entries");
    if (a.cost_quad.rows() != m || a.cost_quad.cols() != m) throw ConstructionError(who + "cost_quad must be m x m");
    if (coupling_.target == CouplingTarget::control_mean && m != T)
      throw ConstructionError(who + "control-mean coupling requires control dim == space dim");
    const double qn = a.cost_quad.cwiseAbs().maxCoeff();
    if ((a.cost_quad - a.cost_quad.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + qn))
      throw ConstructionError(who + "cost_quad is not symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> es(a.cost_quad, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -1e-10)
      throw ConstructionError(who + "cost_quad is not positive semidefinite (min eigenvalue " +
                              std::to_string(es.eigenvalues().minCoeff()) + ")");
    const auto& P = a.admissible;
    if (P.lower.size() != m || P.upper.size() != m) throw ConstructionError(who + "box bounds must have m entries");
    if ((P.lower.array() > P.upper.array()).any()) throw ConstructionError(who + "box_lower > box_upper");
    if (P.equality && P.equality->row.size() != m) throw ConstructionError(who + "equality row must have m entries");
    if (P.inequalities && (P.inequalities->lhs.cols() != m || P.inequalities->lhs.rows() != P.inequalities->rhs.size()))
      throw ConstructionError(who + "inequality shapes inconsistent");
    if (a.noise && !(a.noise->scale >= 0.0 && std::isfinite(a.noise->variance())))
      throw ConstructionError(who + "noise must have finite second moment");
    // Feasibility certificate: project a finite anchor into the set.
    Vector anchor(m);
    for (Eigen::Index k = 0; k < m; ++k) {
      const double lo = P.lower[k], hi = P.upper[k];
      anchor[k] = std::isfinite(lo) && std::isfinite(hi) ? 0.5 * (lo + hi) : detail::clip(0.0, lo, hi);
    }
    Vector p;
    try {
      p = P.project(anchor);
    } catch (const InfeasibilityError& e) {
      throw InfeasibilityError(who + "admissible set is empty (" + e.what() + ")");
    } catch (const NumericalError& e) {
      throw InfeasibilityError(who + "admissible set appears empty (projection did not converge)");
    }
    if (!P.contains(p, 1e-7)) throw InfeasibilityError(who + "admissible set is empty");
  }

  void check_coupling(std::uint64_t seed) const {
    if (!(coupling_.lipschitz >= 0.0)) throw ConstructionError("coupling: Lipschitz constant must be >= 0");
    const Vector& w = weights();
    auto rng = make_stream(seed, 0xC0u);
    double worst = 0.0;
    for (int s = 0; s < 100; ++s) {
      const Vector x = detail::sample_point(coupling_.domain, dim(), rng);
      const Vector y = detail::sample_point(coupling_.domain, dim(), rng);
      const double d = detail::weighted_norm(x - y, w);
      if (d <= 0.0) continue;
      const Vector fx = coupling_.map(x), fy = coupling_.map(y);
      if (fx.size() != dim() || fy.size() != dim()) throw ConstructionError("coupling: map output has wrong dimension");
      worst = std::max(worst, detail::weighted_norm(fx - fy, w) / d);
    }
    if (worst > 1.05 * coupling_.lipschitz + 1e-12)
      throw ConstructionError("coupling: sampled Lipschitz ratio " + std::to_string(worst) +
                              " exceeds declared L=" + std::to_string(coupling_.lipschitz) + " by more than 5%");
  }

  void check_mf_cost(std::uint64_t seed) const {
    const Vector& w = weights();
    auto rng = make_stream(seed, 0xC1u);
    for (int s = 0; s < 5; ++s) {
      const Vector x = detail::sample_point(coupling_.domain, dim(), rng);
      const Vector g = mf_cost_.grad_g(x);
      if (g.size() != dim()) throw ConstructionError("mean-field cost: gradient has wrong dimension");
      const Vector fd = detail::fd_gradient(mf_cost_.g, x, w);
      const double gn = detail::weighted_norm(g, w);
      if (detail::weighted_norm(g - fd, w) > 1e-4 * (1.0 + gn))
        throw ConstructionError("mean-field cost: grad_g disagrees with finite differences of g");
    }
  }

  SpacePtr space_;
  std::vector<AgentModel> agents_;
  Coupling coupling_;
  MeanFieldCost mf_cost_;
};

/// Options for expectation evaluation when noise enters nonlinearly.
struct McOptions {
  int samples = 2000;
  std::uint64_t seed = 0;
};

namespace detail {

inline double weighted_dot(const Vector& a, const Vector& b, const Vector& w) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < a.size(); ++k) s += w[k] * a[k] * b[k];
  return s;
}

/// Deterministic part of J_i at the given expected coupled quantities.
inline double cost_at(const GameInstance& game, std::size_t i, const Vector& u_i, const Vector& x_i, const Vector& xbar) {
  const Vector& w = game.weights();
  return game.agent(i).private_cost(u_i) + weighted_dot(game.coupling()(xbar), x_i, w) + game.mf_cost().g(xbar);
}

}  // namespace detail

/// J_i(u_i, u_{-i}) = E[V_i + F(x̄)·x_i + G(x̄)].
///
/// Noise-free games and affine-F / quadratic-G games are evaluated in closed form
/// (the noise adds Σ_k w_k a_k var_i/N and coeff·Σ_k w_k Σ_j var_j/N²). Otherwise
/// Monte Carlo with antithetic pairs and common random numbers from `mc.seed`.
inline double agent_cost(const GameInstance& game, std::size_t i, std::span<const Vector> us, McOptions mc = {}) {
  game.check_profile(us);
  if (i >= game.n()) throw UsageError("agent_cost: index " + std::to_string(i) + " out of range");
  const auto xs = game.coupled_all(us);
  const Vector xbar = mean_of(std::span<const Vector>(xs));
  const double base = detail::cost_at(game, i, us[i], xs[i], xbar);
  if (game.deterministic()) return base;

  const Vector& w = game.weights();
  const double N = double(game.n());
  const auto& coupling = game.coupling();
  const auto& G = game.mf_cost();
  if (coupling.linear && G.quadratic) {
    double var_sum = 0.0;
    for (std::size_t j = 0; j < game.n(); ++j) var_sum += game.noise_variance(j);
    const double vi = game.noise_variance(i);
    const double own = (w.array() * coupling.linear->gain.array()).sum() * vi / N;
    const double spread = G.quadratic->coeff * w.sum() * var_sum / (N * N);
    return base + own + spread;
  }

  if (mc.samples < 2) throw UsageError("agent_cost: Monte Carlo needs at least 2 samples");
  const int pairs = mc.samples / 2;
  const Eigen::Index T = game.dim();
  double acc = 0.0;
  for (int s = 0; s < pairs; ++s) {
    auto rng = make_stream(mc.seed, 0xA6u, std::uint64_t(s));
    std::vector<Vector> noise(game.n());
    for (std::size_t j = 0; j < game.n(); ++j) {
      const auto& a = game.agent(j);
      noise[j] = (a.noise && a.noise->scale > 0.0) ? a.noise->sample(rng, T) : Vector::Zero(T);
    }
    for (const double sign : {1.0, -1.0}) {
      Vector xb = xbar;
      for (std::size_t j = 0; j < game.n(); ++j) xb += sign * noise[j] / N;
      const Vector xi = xs[i] + sign * noise[i];
      acc += detail::cost_at(game, i, us[i], xi, xb);
    }
  }
  return acc / double(2 * pairs);
}

/// Virtual agent cost φ with ∇φ = N F.
class VirtualCost {
 public:
  VirtualCost(Coupling coupling, std::size_t n, SpacePtr space, bool closed_form, double phi0)
      : coupling_(std::move(coupling)), n_(n), space_(std::move(space)), closed_form_(closed_form), phi0_(phi0) {}

  [[nodiscard]] bool closed_form() const noexcept { return closed_form_; }
  [[nodiscard]] std::size_t n() const noexcept { return n_; }
  [[nodiscard]] const Coupling& coupling() const noexcept { return coupling_; }

  [[nodiscard]] double value(const Vector& z) const {
    space_->check(z);
    const double N = double(n_);
    if (coupling_.potential) return N * coupling_.potential->value(z);
    // φ(z) = φ(0) + N ∫₀¹ F(sz)·z ds, 64-interval composite Simpson.
    constexpr int m = 64;
    const Vector& w = space_->weights();
    double acc = 0.0;
    for (int j = 0; j <= m; ++j) {
      const double s = double(j) / m;
      const double c = (j == 0 || j == m) ? 1.0 : (j % 2 ? 4.0 : 2.0);
      acc += c * detail::weighted_dot(coupling_.map(s * z), z, w);
    }
    return phi0_ + N * acc / (3.0 * m);
  }

  double operator()(const Vector& z) const { return value(z); }

  /// Weighted gradient N F(z).
  [[nodiscard]] Vector gradient(const Vector& z) const { return double(n_) * coupling_.map(z); }

  /// argmin_z φ(z) − N λ·z, i.e. F(z) = λ. nullopt when the infimum is −∞.
  /// Coordinates where φ is flat take `flat_hint` (default 0).
  [[nodiscard]] std::optional<Vector> tilted_argmin(const Vector& lambda, const Vector* flat_hint = nullptr) const {
    space_->check(lambda);
    if (coupling_.potential && coupling_.potential->tilted_argmin) return coupling_.potential->tilted_argmin(lambda);
    if (coupling_.linear) {
      const auto& L = *coupling_.linear;
      Vector z(lambda.size());
      for (Eigen::Index k = 0; k < z.size(); ++k) {
        if (L.gain[k] > 0.0)
          z[k] = (lambda[k] - L.offset[k]) / L.gain[k];
        else if (L.gain[k] == 0.0 && std::abs(lambda[k] - L.offset[k]) <= 1e-14 * (1.0 + std::abs(lambda[k])))
          z[k] = flat_hint ? (*flat_hint)[k] : 0.0;
        else
          return std::nullopt;
      }
      return z;
    }
    if (!coupling_.monotone)
      throw UsageError("z-subproblem: non-monotone coupling needs a closed-form potential");
    return newton(lambda, Vector::Zero(lambda.size()), 0.0);
  }

  /// Value of inf_z φ(z) − N λ·z, −∞ when unbounded.
  [[nodiscard]] double tilted_infimum(const Vector& lambda) const {
    const auto z = tilted_argmin(lambda);
    if (!z) return -std::numeric_limits<double>::infinity();
    return value(*z) - double(n_) * detail::weighted_dot(lambda, *z, space_->weights());
  }

  /// argmin_z φ(z) + (Nρ/2)‖z − v‖², i.e. F(z) + ρ(z − v) = 0.
  [[nodiscard]] Vector prox(const Vector& v, double rho) const {
    space_->check(v);
    if (!(rho > 0.0)) throw UsageError("prox: rho must be positive");
    if (coupling_.linear) {
      const auto& L = *coupling_.linear;
      return ((rho * v - L.offset).array() / (L.gain.array() + rho)).matrix();
    }
    return newton(Vector::Zero(v.size()), v, rho);
  }

 private:
  /// Damped Newton on R(z) = F(z) − λ + ρ(z − v).
  [[nodiscard]] Vector newton(const Vector& lambda, const Vector& v, double rho) const {
    const Eigen::Index n = lambda.size();
    Vector z = rho > 0.0 ? v : Vector::Zero(n);
    if (coupling_.domain) z = z.cwiseMax(coupling_.domain->first).cwiseMin(coupling_.domain->second);
    auto residual = [&](const Vector& x) -> Vector { return coupling_.map(x) - lambda + rho * (x - v); };
    const double scale = 1.0 + lambda.lpNorm<Eigen::Infinity>() + rho * v.lpNorm<Eigen::Infinity>();
    Vector r = residual(z);
    for (int it = 0; it < 100; ++it) {
      const double rn = r.lpNorm<Eigen::Infinity>();
      if (rn <= 1e-12 * scale) return z;
      Vector step;
      if (coupling_.separable) {
        Vector d(n);
        for (Eigen::Index k = 0; k < n; ++k) {
          const double h = 1e-6 * (1.0 + std::abs(z[k]));
          Vector zp = z, zm = z;
          zp[k] += h;
          zm[k] -= h;
          d[k] = (coupling_.map(zp)[k] - coupling_.map(zm)[k]) / (2.0 * h) + rho;
        }
        step = r.cwiseQuotient(d);
      } else {
        Matrix J = detail::fd_jacobian(coupling_.map, z, 1e-6);
        J.diagonal().array() += rho;
        step = J.partialPivLu().solve(r);
      }
      double t = 1.0;
      bool accepted = false;
      for (int h = 0; h < 40; ++h, t *= 0.5) {
        const Vector zn = z - t * step;
        const Vector rnew = residual(zn);
        if (rnew.allFinite() && rnew.lpNorm<Eigen::Infinity>() < rn) {
          z = zn;
          r = rnew;
          accepted = true;
          break;
        }
      }
      if (!accepted) break;
    }
    const double rn = r.lpNorm<Eigen::Infinity>();
    if (rn <= 1e-8 * scale) return z;
    throw NumericalError("z-subproblem: damped Newton did not converge", rn);
  }

  Coupling coupling_;
  std::size_t n_;
  SpacePtr space_;
  bool closed_form_;
  double phi0_;
};

/// Builds φ for `coupling` with N = n. Uses the closed-form potential when the
/// coupling carries one; otherwise tests conservativeness (symmetric weighted
/// Jacobian) and falls back to the line integral with φ(0) = phi0.
inline VirtualCost build_virtual_cost(const Coupling& coupling, std::size_t n, const SpacePtr& space,
                                      double phi0 = 0.0, std::uint64_t seed = 0) {
  if (n < 1) throw UsageError("build_virtual_cost: n must be >= 1");
  const Vector& w = space->weights();
  const Eigen::Index T = space->size();
  auto rng = make_stream(seed, 0xF1u);

  if (!coupling.potential && !coupling.linear) {
    for (int s = 0; s < 3; ++s) {
      const Vector z = detail::sample_point(coupling.domain, T, rng);
      const Matrix J = detail::fd_jacobian(coupling.map, z);
      const Matrix H = w.asDiagonal() * J;
      const double tol = 1e-4 * (1.0 + H.cwiseAbs().maxCoeff());
      std::ostringstream bad;
      int count = 0;
      for (Eigen::Index k = 0; k < T; ++k)
        for (Eigen::Index l = k + 1; l < T; ++l)
          if (std::abs(H(k, l) - H(l, k)) > tol) {
            if (count < 5) bad << (count ? ", " : "") << "(" << k << "," << l << ")";
            ++count;
          }
      if (count > 0)
        throw ConstructionError("build_virtual_cost: coupling is not conservative; asymmetric Jacobian at " +
                                std::to_string(count) + " coordinate pairs, e.g. " + bad.str());
    }
  }

  VirtualCost phi(coupling, n, space, coupling.potential.has_value(), phi0);
  for (int s = 0; s < 20; ++s) {
    const Vector z = detail::sample_point(coupling.domain, T, rng);
    const Vector g = phi.gradient(z);
    const Vector fd = detail::fd_gradient([&](const Vector& x) { return phi.value(x); }, z, w);
    const double gn = detail::weighted_norm(g, w);
    if (detail::weighted_norm(fd - g, w) > 1e-4 * (1.0 + gn))
      throw ConstructionError("build_virtual_cost: finite-difference gradient of phi differs from N·F");
  }
  return phi;
}

}  // namespace mfg
