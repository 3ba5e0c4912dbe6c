#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mfg/errors.hpp"
#include "mfg/model.hpp"
#include "mfg/random.hpp"

namespace mfg {

/// A generated game plus analytic facts the tests and reports rely on.
struct Case {
  Case(std::string name_, GameInstance game_) : name(std::move(name_)), game(std::move(game_)) {}

  std::string name;
  GameInstance game;
  /// φ(0) used when φ is built by line integral.
  double phi0 = 0.0;
  std::optional<double> primal_optimum;
  std::optional<double> contraction_constant;
  std::optional<Vector> equilibrium_mean;
  std::vector<std::string> warnings;
  /// ADMM penalty suited to the instance's curvature, when the generator knows one.
  std::optional<double> admm_penalty;

  [[nodiscard]] VirtualCost virtual_cost(std::uint64_t seed = 0) const {
    return build_virtual_cost(game.coupling(), game.n(), game.space(), phi0, seed);
  }
};

struct EvParams {
  std::size_t n = 100;
  int horizon = 36;
  double period_minutes = 5.0;
  double eta = 0.01;
  double gamma_price = 1.0;
  /// Price profile c (one entry per period). Default: a smooth evening-peak shape.
  std::optional<Vector> c;
  std::pair<double, double> capacity_range{15.0, 20.0};  // kWh
  std::pair<double, double> rate_range{6.0, 8.0};        // kW
  std::pair<double, double> demand_range{4.0, 10.0};     // kWh
  std::pair<double, double> soc0_range{0.0, 0.2};        // fraction of capacity
  /// Std. dev. of the truncated-Gaussian perturbation of delivered energy; 0 = deterministic.
  double noise_scale = 0.0;
};

inline Vector default_ev_price(int horizon) {
  Vector c(horizon);
  for (int t = 0; t < horizon; ++t) {
    const double s = double(t) / double(std::max(1, horizon - 1));
    c[t] = 0.2 + 0.15 * std::exp(-std::pow((s - 0.3) / 0.18, 2.0)) - 0.05 * s;
  }
  return c;
}

namespace detail {

inline void check_range(const std::pair<double, double>& r, const char* what) {
  if (!(r.first <= r.second) || !std::isfinite(r.first) || !std::isfinite(r.second))
    throw UsageError(std::string("ev_game: empty or invalid ") + what + " range");
}

}  // namespace detail

/// EV charging coordination: integrator dynamics, control-mean coupling F(z) = 2(γ−η)z,
/// G(z) = η z·z, box, demand equality, and cumulative state caps.
inline Case ev_game(const EvParams& p, std::uint64_t seed) {
  if (p.n < 1) throw UsageError("ev_game: n must be >= 1");
  if (p.horizon < 1) throw UsageError("ev_game: horizon must be >= 1");
  if (!(p.eta > 0.0) || !(p.gamma_price > p.eta)) throw UsageError("ev_game: need 0 < eta < gamma");
  detail::check_range(p.capacity_range, "capacity");
  detail::check_range(p.rate_range, "rate");
  detail::check_range(p.demand_range, "demand");
  detail::check_range(p.soc0_range, "soc0");
  const int T = p.horizon;
  const Vector c = p.c ? *p.c : default_ev_price(T);
  if (c.size() != T) throw UsageError("ev_game: price profile length must equal horizon");

  Vector grid(T);
  for (int t = 0; t < T; ++t) grid[t] = double(t) * p.period_minutes * 60.0;
  auto space = make_space(TrajectorySpace(Vector::Ones(T), grid));
  const double hours = p.period_minutes / 60.0;
  const Matrix integrator = Matrix::Ones(T, T).triangularView<Eigen::Lower>();

  std::vector<AgentModel> agents;
  agents.reserve(p.n);
  for (std::size_t i = 0; i < p.n; ++i) {
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      auto rng = make_stream(seed, 0xE7u + i, std::uint64_t(attempt));
      const double cap = uniform(rng, p.capacity_range.first, p.capacity_range.second);
      const double rate = uniform(rng, p.rate_range.first, p.rate_range.second);
      const double soc0 = uniform(rng, p.soc0_range.first, p.soc0_range.second);
      const double demand = uniform(rng, p.demand_range.first, p.demand_range.second);
      const double x0 = soc0 * cap;
      const double umax = rate * hours;
      if (demand > umax * T || demand > cap - x0 || demand < 0.0) continue;
      AgentModel a;
      a.state_matrix = integrator;
      a.state_offset = Vector::Constant(T, x0);
      a.cost_quad = p.eta * Matrix::Identity(T, T);
      a.cost_lin = 2.0 * p.gamma_price * c;
      a.admissible.lower = Vector::Zero(T);
      a.admissible.upper = Vector::Constant(T, umax);
      a.admissible.equality = LinearEquality{Vector::Ones(T), demand};
      a.admissible.inequalities = LinearInequalities{integrator, Vector::Constant(T, cap - x0)};
      if (p.noise_scale > 0.0) a.noise = NoiseSpec{NoiseSpec::Kind::truncated_gaussian, p.noise_scale, 3.0};
      agents.push_back(std::move(a));
      ok = true;
    }
    if (!ok) throw InfeasibilityError("ev_game: agent " + std::to_string(i) + " has no feasible draw in 100 attempts");
  }

  const double B = 2.0 * (p.gamma_price - p.eta);
  Coupling coupling = Coupling::affine(Vector::Constant(T, B), Vector::Zero(T), CouplingTarget::control_mean);
  MeanFieldCost G = MeanFieldCost::from_quadratic(*space, p.eta, Vector::Zero(T), 0.0);
  Case out("ev", GameInstance(space, std::move(agents), std::move(coupling), std::move(G), seed));
  out.admm_penalty = 10.0 * p.eta;
  if (p.eta >= p.gamma_price / 10.0)
    out.warnings.push_back("ev_game: eta >= gamma/10; the model assumes eta << gamma");
  return out;
}

/// Sine game on an exponentially weighted space: x_i = u_i, V = ‖x‖², F_t(z) = κ e^{−t} sin z_t.
inline Case sine_game(double kappa, double rho = 1.0, double dt = 0.1, double t_max = 0.0, std::size_t n = 10) {
  if (!(kappa > 0.0)) throw UsageError("sine_game: kappa must be positive");
  if (n < 1) throw UsageError("sine_game: n must be >= 1");
  auto space = make_space(TrajectorySpace::exponential(rho, dt, t_max));
  const Eigen::Index T = space->size();
  const Vector w = space->weights();
  const Vector decay = (-space->grid().array()).exp().matrix();

  AgentModel a;
  a.state_matrix = Matrix::Identity(T, T);
  a.state_offset = Vector::Zero(T);
  a.cost_quad = Matrix(w.asDiagonal());
  a.cost_lin = Vector::Zero(T);
  a.admissible.lower = Vector::Constant(T, -1e6);
  a.admissible.upper = Vector::Constant(T, 1e6);

  Coupling c;
  c.map = [decay, kappa](const Vector& z) -> Vector { return kappa * decay.cwiseProduct(z.array().sin().matrix()); };
  c.lipschitz = kappa;
  c.monotone = false;
  c.separable = true;
  c.target = CouplingTarget::state_mean;
  c.adjoint_jvp = [decay, kappa](const Vector& z, const Vector& v) -> Vector {
    return kappa * decay.cwiseProduct(z.array().cos().matrix()).cwiseProduct(v);
  };
  // ψ(0) = −κ so that φ(0) = −Nκ; only λ = 0 gives a bounded z-subproblem.
  c.potential = CouplingPotential{
      [decay, w, kappa](const Vector& z) {
        return -kappa + kappa * (w.array() * decay.array() * (1.0 - z.array().cos())).sum();
      },
      [kappa](const Vector& lambda) -> std::optional<Vector> {
        if (lambda.lpNorm<Eigen::Infinity>() > 1e-15 * kappa) return std::nullopt;
        return Vector::Zero(lambda.size());
      }};

  const double N = double(n);
  Case out("sine", GameInstance(space, std::vector<AgentModel>(n, a), std::move(c), MeanFieldCost::zero(*space)));
  out.phi0 = -N * kappa;
  out.primal_optimum = -N * kappa;
  out.contraction_constant = kappa / 2.0;
  out.equilibrium_mean = Vector::Zero(T);
  return out;
}

struct RoutingEdge {
  int from = 0;
  int to = 0;
  /// c_e(f) = a f + b with a >= 0.
  double a = 0.0;
  double b = 0.0;
};

struct RoutingGraph {
  int vertices = 0;
  std::vector<RoutingEdge> edges;
};

struct Commodity {
  int source = 0;
  int sink = 0;
  double rate = 1.0;
};

/// Simple directed paths from s to t as edge-index lists (depth-first, at most `cap`).
inline std::vector<std::vector<int>> enumerate_paths(const RoutingGraph& g, int s, int t, std::size_t cap = 100) {
  std::vector<std::vector<int>> adj(std::size_t(g.vertices));
  for (std::size_t e = 0; e < g.edges.size(); ++e) adj[std::size_t(g.edges[e].from)].push_back(int(e));
  std::vector<std::vector<int>> paths;
  std::vector<int> current;
  std::vector<bool> visited(std::size_t(g.vertices), false);
  std::function<void(int)> dfs = [&](int v) {
    if (v == t) {
      if (paths.size() >= cap) throw UsageError("routing_game: more than " + std::to_string(cap) + " paths");
      paths.push_back(current);
      return;
    }
    visited[std::size_t(v)] = true;
    for (int e : adj[std::size_t(v)]) {
      const int w = g.edges[std::size_t(e)].to;
      if (visited[std::size_t(w)]) continue;
      current.push_back(e);
      dfs(w);
      current.pop_back();
    }
    visited[std::size_t(v)] = false;
  };
  dfs(s);
  return paths;
}

/// Splittable routing: each commodity is an agent choosing path flows; the coupled
/// quantity is its edge-flow vector, and F_e(x̄) = c_e(N x̄_e).
inline Case routing_game(const RoutingGraph& graph, const std::vector<Commodity>& commodities) {
  if (graph.vertices < 2 || graph.edges.empty()) throw UsageError("routing_game: graph needs vertices and edges");
  if (commodities.empty()) throw UsageError("routing_game: need at least one commodity");
  const Eigen::Index E = Eigen::Index(graph.edges.size());
  Vector a(E), b(E);
  for (Eigen::Index e = 0; e < E; ++e) {
    const auto& ed = graph.edges[std::size_t(e)];
    if (ed.from < 0 || ed.from >= graph.vertices || ed.to < 0 || ed.to >= graph.vertices)
      throw UsageError("routing_game: edge endpoint out of range");
    if (ed.a < 0.0) throw UsageError("routing_game: edge costs must be nondecreasing (a >= 0)");
    a[e] = ed.a;
    b[e] = ed.b;
  }
  auto space = make_space(TrajectorySpace::unit(std::size_t(E)));
  std::vector<AgentModel> agents;
  for (std::size_t i = 0; i < commodities.size(); ++i) {
    const auto& k = commodities[i];
    if (!(k.rate >= 0.0)) throw UsageError("routing_game: commodity rate must be nonnegative");
    const auto paths = enumerate_paths(graph, k.source, k.sink);
    if (paths.empty())
      throw InfeasibilityError("routing_game: commodity " + std::to_string(i) + " has no source-sink path");
    const Eigen::Index P = Eigen::Index(paths.size());
    AgentModel ag;
    ag.state_matrix = Matrix::Zero(E, P);
    for (Eigen::Index p = 0; p < P; ++p)
      for (int e : paths[std::size_t(p)]) ag.state_matrix(e, p) = 1.0;
    ag.state_offset = Vector::Zero(E);
    ag.cost_quad = Matrix::Zero(P, P);
    ag.cost_lin = Vector::Zero(P);
    ag.admissible.lower = Vector::Zero(P);
    ag.admissible.upper = Vector::Constant(P, std::numeric_limits<double>::infinity());
    ag.admissible.equality = LinearEquality{Vector::Ones(P), k.rate};
    agents.push_back(std::move(ag));
  }
  const double N = double(agents.size());
  Coupling c = Coupling::affine(N * a, b, CouplingTarget::state_mean);
  return Case("routing", GameInstance(space, std::move(agents), std::move(c), MeanFieldCost::zero(*space)));
}

/// Two parallel edges with c₁(f) = 1 and c₂(f) = f, one unit commodity per agent.
inline Case pigou_game(std::size_t n = 2, double rate = 1.0) {
  RoutingGraph g{2, {{0, 1, 0.0, 1.0}, {0, 1, 1.0, 0.0}}};
  return routing_game(g, std::vector<Commodity>(n, Commodity{0, 1, rate}));
}

/// Scalar game J_i = (x_i − 1)² + x_i log x̄ on [0.1, 10].
inline Case log_game(std::size_t n) {
  if (n < 2) throw UsageError("log_game: n must be >= 2");
  auto space = make_space(TrajectorySpace::unit(1));
  AgentModel a;
  a.state_matrix = Matrix::Identity(1, 1);
  a.state_offset = Vector::Zero(1);
  a.cost_quad = Matrix::Identity(1, 1);
  a.cost_lin = Vector::Constant(1, -2.0);
  a.cost_const = 1.0;
  a.admissible.lower = Vector::Constant(1, 0.1);
  a.admissible.upper = Vector::Constant(1, 10.0);

  Coupling c;
  c.map = [](const Vector& z) -> Vector { return z.array().log().matrix(); };
  c.lipschitz = 10.0;
  c.monotone = true;
  c.separable = true;
  c.domain = std::make_pair(Vector::Constant(1, 0.1), Vector::Constant(1, 10.0));
  c.adjoint_jvp = [](const Vector& z, const Vector& v) -> Vector { return v.cwiseQuotient(z); };
  c.potential = CouplingPotential{[](const Vector& z) { return (z.array() * z.array().log() - z.array()).sum(); },
                                  [](const Vector& lambda) -> std::optional<Vector> {
                                    return Vector(lambda.array().exp().matrix());
                                  }};
  return Case("log", GameInstance(space, std::vector<AgentModel>(n, a), std::move(c), MeanFieldCost::zero(*space)));
}

}  // namespace mfg
