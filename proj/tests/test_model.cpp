#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "mfg/model.hpp"

using namespace mfg;

namespace {

Polyhedron box(Eigen::Index m, double lo, double hi) {
  Polyhedron P;
  P.lower = Vector::Constant(m, lo);
  P.upper = Vector::Constant(m, hi);
  return P;
}

AgentModel scalar_agent(double q_quad, double q_lin, double c0) {
  AgentModel a;
  a.state_matrix = Matrix::Identity(1, 1);
  a.state_offset = Vector::Zero(1);
  a.cost_quad = Matrix::Constant(1, 1, q_quad);
  a.cost_lin = Vector::Constant(1, q_lin);
  a.cost_const = c0;
  a.admissible = box(1, -10.0, 10.0);
  return a;
}

AgentModel identity_agent(Eigen::Index T) {
  AgentModel a;
  a.state_matrix = Matrix::Identity(T, T);
  a.state_offset = Vector::Zero(T);
  a.cost_quad = Matrix::Identity(T, T);
  a.cost_lin = Vector::Zero(T);
  a.admissible = box(T, -5.0, 5.0);
  return a;
}

// Separable coupling κ e^{-t} sin z_t with its weighted potential.
Coupling sine_like(const TrajectorySpace& s, double kappa, bool with_potential) {
  Coupling c;
  const Vector decay = (-s.grid().array()).exp().matrix();
  const Vector w = s.weights();
  c.map = [decay, kappa](const Vector& z) -> Vector { return kappa * decay.cwiseProduct(z.array().sin().matrix()); };
  c.lipschitz = kappa;
  c.separable = true;
  if (with_potential) {
    c.potential = CouplingPotential{[decay, w, kappa](const Vector& z) {
                                      return -kappa + kappa * (w.array() * decay.array() * (1.0 - z.array().cos())).sum();
                                    },
                                    {}};
  }
  return c;
}

}  // namespace

TEST(StateOf, IntegratorCumulativeSum) {
  AgentModel a = identity_agent(3);
  a.state_matrix = Matrix::Ones(3, 3).triangularView<Eigen::Lower>();
  const Vector x = state_of(a, Vector::Ones(3));
  EXPECT_EQ(x, (Vector{{1.0, 2.0, 3.0}}));
}

TEST(StateOf, ZeroControlGivesOffsetAndIsAffine) {
  auto rng = make_stream(5);
  AgentModel a = identity_agent(4);
  for (Eigen::Index r = 0; r < 4; ++r)
    for (Eigen::Index c = 0; c < 4; ++c) a.state_matrix(r, c) = standard_normal(rng);
  a.state_offset = Vector{{1.0, -2.0, 0.5, 3.0}};
  EXPECT_EQ(state_of(a, Vector::Zero(4)), a.state_offset);
  Vector u1(4), u2(4);
  for (int k = 0; k < 4; ++k) {
    u1[k] = standard_normal(rng);
    u2[k] = standard_normal(rng);
  }
  // Matrix-vector oracle computed entry by entry.
  Vector oracle = a.state_offset;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) oracle[r] += a.state_matrix(r, c) * u1[c];
  EXPECT_LE((state_of(a, u1) - oracle).cwiseAbs().maxCoeff(), 1e-12);
  const Vector lhs = state_of(a, u1 + u2) - state_of(a, Vector::Zero(4));
  const Vector rhs = (state_of(a, u1) - a.state_offset) + (state_of(a, u2) - a.state_offset);
  EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
  const Vector noise = Vector::Ones(4);
  EXPECT_LE((state_of(a, u1, &noise) - oracle - noise).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW(state_of(a, Vector::Zero(3)), UsageError);
}

TEST(AgentCost, SingleAgentNoCoupling) {
  auto s = make_space(TrajectorySpace::unit(2));
  GameInstance g(s, {identity_agent(2)}, Coupling::zero(2), MeanFieldCost::zero(*s));
  std::vector<Vector> u{Vector::Ones(2)};
  EXPECT_DOUBLE_EQ(agent_cost(g, 0, u), 2.0);
}

TEST(AgentCost, TwoAgentScalarHandValue) {
  auto s = make_space(TrajectorySpace::unit(1));
  // V_i = (u − 1)², F(z) = z.
  std::vector<AgentModel> agents{scalar_agent(1.0, -2.0, 1.0), scalar_agent(1.0, -2.0, 1.0)};
  GameInstance g(s, agents, Coupling::affine(Vector::Ones(1), Vector::Zero(1)), MeanFieldCost::zero(*s));
  std::vector<Vector> u{Vector::Constant(1, 1.0), Vector::Constant(1, 0.0)};
  // Brute-force evaluator written independently of agent_cost.
  auto brute = [](double u1, double u2) {
    const double xbar = 0.5 * (u1 + u2);
    return (u1 - 1.0) * (u1 - 1.0) + xbar * u1;
  };
  EXPECT_NEAR(agent_cost(g, 0, u), 0.5, 1e-15);
  EXPECT_NEAR(agent_cost(g, 0, u), brute(1.0, 0.0), 1e-15);
  EXPECT_THROW(agent_cost(g, 2, u), UsageError);
  std::vector<Vector> short_profile{Vector::Zero(1)};
  EXPECT_THROW(agent_cost(g, 0, short_profile), UsageError);
}

TEST(AgentCost, InvariantUnderRelabelingOthers) {
  auto s = make_space(TrajectorySpace::unit(2));
  std::vector<AgentModel> agents(4, identity_agent(2));
  GameInstance g(s, agents, Coupling::affine(Vector::Constant(2, 0.7), Vector::Ones(2)),
                 MeanFieldCost::from_quadratic(*s, 0.3, Vector::Zero(2), 0.0));
  std::vector<Vector> u{Vector{{1.0, 2.0}}, Vector{{-1.0, 0.5}}, Vector{{0.3, 0.0}}, Vector{{2.0, -2.0}}};
  std::vector<Vector> v{u[0], u[3], u[1], u[2]};
  EXPECT_NEAR(agent_cost(g, 0, u), agent_cost(g, 0, v), 1e-12);
}

TEST(AgentCost, NoiseClosedFormMatchesSimulation) {
  auto s = make_space(TrajectorySpace(Vector{{1.0, 0.5}}));
  std::vector<AgentModel> agents(3, identity_agent(2));
  for (auto& a : agents) a.noise = NoiseSpec{NoiseSpec::Kind::gaussian, 0.4, 3.0};
  const Vector gain{{1.5, 0.5}};
  GameInstance g(s, agents, Coupling::affine(gain, Vector::Zero(2)),
                 MeanFieldCost::from_quadratic(*s, 0.8, Vector::Zero(2), 0.0));
  std::vector<Vector> u{Vector{{1.0, 0.0}}, Vector{{0.5, 0.5}}, Vector{{0.0, 1.0}}};
  const double closed = agent_cost(g, 0, u);
  // Direct simulation of E[V + F(x̄)·x_0 + G(x̄)].
  auto rng = make_stream(99);
  const int M = 400000;
  double acc = 0.0;
  const Vector w = s->weights();
  for (int r = 0; r < M; ++r) {
    std::vector<Vector> x(3);
    for (int j = 0; j < 3; ++j) x[j] = u[j] + Vector{{0.4 * standard_normal(rng), 0.4 * standard_normal(rng)}};
    const Vector xbar = (x[0] + x[1] + x[2]) / 3.0;
    const Vector F = gain.cwiseProduct(xbar);
    acc += u[0].squaredNorm() + (w.array() * F.array() * x[0].array()).sum() +
           0.8 * (w.array() * xbar.array().square()).sum();
  }
  EXPECT_NEAR(closed, acc / M, 5e-3);
}

TEST(AgentCost, MonteCarloIsSeedDeterministic) {
  auto s = make_space(TrajectorySpace::unit(2));
  std::vector<AgentModel> agents(3, identity_agent(2));
  for (auto& a : agents) a.noise = NoiseSpec{NoiseSpec::Kind::uniform, 0.3, 3.0};
  Coupling c = sine_like(*s, 1.0, false);
  GameInstance g(s, agents, c, MeanFieldCost::zero(*s));
  std::vector<Vector> u(3, Vector{{0.5, 1.0}});
  const double a = agent_cost(g, 1, u, McOptions{200, 4});
  const double b = agent_cost(g, 1, u, McOptions{200, 4});
  EXPECT_EQ(a, b);
  EXPECT_NE(a, agent_cost(g, 1, u, McOptions{200, 5}));
}

TEST(Noise, TruncatedGaussianVariance) {
  NoiseSpec n{NoiseSpec::Kind::truncated_gaussian, 2.0, 1.0};
  auto rng = make_stream(8);
  double acc = 0.0;
  const int M = 200000;
  for (int r = 0; r < M; ++r) {
    const double x = n.draw(rng);
    ASSERT_LE(std::abs(x), 2.0);
    acc += x * x;
  }
  EXPECT_NEAR(acc / M, n.variance(), 0.01 * n.variance());
  EXPECT_NEAR((NoiseSpec{NoiseSpec::Kind::uniform, 3.0, 0.0}).variance(), 3.0, 1e-15);
}

TEST(GameInstance, ConstructionChecks) {
  auto s = make_space(TrajectorySpace::unit(2));
  AgentModel bad = identity_agent(2);
  bad.cost_quad(0, 0) = -1.0;
  EXPECT_THROW(GameInstance(s, {bad}, Coupling::zero(2), MeanFieldCost::zero(*s)), ConstructionError);

  AgentModel asym = identity_agent(2);
  asym.cost_quad(0, 1) = 0.5;
  EXPECT_THROW(GameInstance(s, {asym}, Coupling::zero(2), MeanFieldCost::zero(*s)), ConstructionError);

  AgentModel empty = identity_agent(2);
  empty.admissible.equality = LinearEquality{Vector::Ones(2), 100.0};
  EXPECT_THROW(GameInstance(s, {empty}, Coupling::zero(2), MeanFieldCost::zero(*s)), InfeasibilityError);

  Coupling lying = Coupling::affine(Vector::Constant(2, 3.0), Vector::Zero(2));
  lying.lipschitz = 1.0;
  EXPECT_THROW(GameInstance(s, {identity_agent(2)}, lying, MeanFieldCost::zero(*s)), ConstructionError);

  MeanFieldCost wrong = MeanFieldCost::from_quadratic(*s, 1.0, Vector::Zero(2), 0.0);
  wrong.grad_g = [](const Vector& z) -> Vector { return z; };
  EXPECT_THROW(GameInstance(s, {identity_agent(2)}, Coupling::zero(2), wrong), ConstructionError);

  EXPECT_THROW(GameInstance(s, {}, Coupling::zero(2), MeanFieldCost::zero(*s)), ConstructionError);
}

TEST(VirtualCost, QuadraticClosedForm) {
  // F(z) = 2(γ−η) z gives φ(z) = N(γ−η) z·z.
  const double gamma = 1.0, eta = 0.05;
  const std::size_t N = 7;
  auto s = make_space(TrajectorySpace::unit(4));
  const auto phi = build_virtual_cost(Coupling::affine(Vector::Constant(4, 2.0 * (gamma - eta)), Vector::Zero(4)), N, s);
  const Vector z{{1.0, -0.5, 2.0, 0.25}};
  EXPECT_NEAR(phi.value(z), double(N) * (gamma - eta) * z.squaredNorm(), 1e-12);
  const auto zl = phi.tilted_argmin(Vector::Constant(4, 1.9));
  ASSERT_TRUE(zl.has_value());
  EXPECT_LE((*zl - Vector::Ones(4)).norm(), 1e-14);
}

TEST(VirtualCost, ZeroCouplingIsConstant) {
  auto s = make_space(TrajectorySpace::unit(3));
  const auto phi = build_virtual_cost(Coupling::zero(3), 5, s, 2.5);
  EXPECT_EQ(phi.value(Vector{{1.0, 2.0, 3.0}}), 2.5);
  EXPECT_EQ(phi.value(Vector::Zero(3)), 2.5);
}

TEST(VirtualCost, LineIntegralMatchesSinePotential) {
  auto s = make_space(TrajectorySpace::exponential(1.0, 0.1, 3.0));
  const double kappa = 1.5;
  const std::size_t N = 4;
  const auto closed = build_virtual_cost(sine_like(*s, kappa, true), N, s);
  const auto line = build_virtual_cost(sine_like(*s, kappa, false), N, s, -double(N) * kappa);
  EXPECT_TRUE(closed.closed_form());
  EXPECT_FALSE(line.closed_form());
  auto rng = make_stream(21);
  for (int trial = 0; trial < 10; ++trial) {
    Vector z(s->size());
    for (Eigen::Index k = 0; k < z.size(); ++k) z[k] = standard_normal(rng);
    EXPECT_NEAR(closed.value(z), line.value(z), 1e-6 * (1.0 + std::abs(closed.value(z))));
  }
  EXPECT_NEAR(closed.value(Vector::Zero(s->size())), -double(N) * kappa, 1e-14);
}

TEST(VirtualCost, NonConservativeCouplingNamesCoordinates) {
  auto s = make_space(TrajectorySpace::unit(2));
  Coupling rot;
  rot.map = [](const Vector& z) -> Vector { return Vector{{z[1], -z[0]}}; };
  rot.lipschitz = 1.0;
  try {
    (void)build_virtual_cost(rot, 3, s);
    FAIL() << "expected ConstructionError";
  } catch (const ConstructionError& e) {
    EXPECT_NE(std::string(e.what()).find("(0,1)"), std::string::npos) << e.what();
  }
}

TEST(VirtualCost, GradientConditionOnNonlinearMonotoneMap) {
  auto s = make_space(TrajectorySpace(Vector{{1.0, 2.0, 0.5}}));
  Coupling c;
  c.map = [](const Vector& z) -> Vector { return (z.array() + z.array().pow(3) / 3.0).matrix(); };
  c.lipschitz = 100.0;
  c.monotone = true;
  c.separable = true;
  const auto phi = build_virtual_cost(c, 6, s);
  const Vector z{{0.3, -1.0, 2.0}};
  const Vector w = s->weights();
  // φ = N Σ w (z²/2 + z⁴/12).
  const double oracle = 6.0 * (w.array() * (z.array().square() / 2.0 + z.array().pow(4) / 12.0)).sum();
  EXPECT_NEAR(phi.value(z), oracle, 1e-9 * oracle);
  const Vector lam{{1.0, -0.5, 0.2}};
  const auto zs = phi.tilted_argmin(lam);
  ASSERT_TRUE(zs.has_value());
  EXPECT_LE((c.map(*zs) - lam).norm(), 1e-10);
  const Vector v{{1.0, 2.0, -3.0}};
  const Vector p = phi.prox(v, 0.7);
  EXPECT_LE((c.map(p) + 0.7 * (p - v)).norm(), 1e-10);
}

TEST(VirtualCost, UnboundedTiltedSubproblem) {
  auto s = make_space(TrajectorySpace::unit(2));
  const auto phi = build_virtual_cost(Coupling::zero(2), 3, s);
  EXPECT_FALSE(phi.tilted_argmin(Vector{{1.0, 0.0}}).has_value());
  EXPECT_EQ(phi.tilted_infimum(Vector{{1.0, 0.0}}), -std::numeric_limits<double>::infinity());
  EXPECT_EQ(phi.tilted_infimum(Vector::Zero(2)), 0.0);
}
