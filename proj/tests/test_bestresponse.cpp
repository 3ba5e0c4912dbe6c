#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "mfg/bestresponse.hpp"

using namespace mfg;

namespace {

const double kInf = std::numeric_limits<double>::infinity();

AgentModel make_agent(const Matrix& Q, const Vector& q, const Polyhedron& P) {
  AgentModel a;
  a.state_matrix = Matrix::Identity(q.size(), q.size());
  a.state_offset = Vector::Zero(q.size());
  a.cost_quad = Q;
  a.cost_lin = q;
  a.admissible = P;
  return a;
}

Polyhedron box(Eigen::Index m, double lo, double hi) {
  Polyhedron P;
  P.lower = Vector::Constant(m, lo);
  P.upper = Vector::Constant(m, hi);
  return P;
}

Matrix random_psd(std::mt19937_64& rng, int m, double ridge) {
  Matrix B(m, m);
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < m; ++c) B(r, c) = standard_normal(rng);
  return B * B.transpose() / m + ridge * Matrix::Identity(m, m);
}

// Exhaustive grid over {0 <= u <= 1, Σu = s} in three dimensions at resolution h.
double grid_min_simplex3(const std::function<double(const Vector&)>& f, double s, double h) {
  double best = kInf;
  const int n = int(std::round(1.0 / h));
  for (int i = 0; i <= n; ++i)
    for (int j = 0; j <= n; ++j) {
      const double u0 = i * h, u1 = j * h, u2 = s - u0 - u1;
      if (u2 < -1e-12 || u2 > 1.0 + 1e-12) continue;
      best = std::min(best, f(Vector{{u0, u1, u2}}));
    }
  return best;
}

}  // namespace

TEST(BestResponse, UnconstrainedMinimumFeasible) {
  auto s = make_space(TrajectorySpace::unit(3));
  const AgentModel a = make_agent(Matrix::Identity(3, 3), Vector::Zero(3), box(3, -1.0, 1.0));
  EXPECT_LE(best_response(a, *s, Vector::Zero(3)).norm(), 1e-14);
}

TEST(BestResponse, SinePointwiseFormula) {
  auto s = make_space(TrajectorySpace::exponential(1.0, 0.1, 5.0));
  const Vector w = s->weights();
  const AgentModel a = make_agent(Matrix(w.asDiagonal()), Vector::Zero(s->size()), box(s->size(), -1e6, 1e6));
  Vector y(s->size());
  for (Eigen::Index k = 0; k < y.size(); ++k) y[k] = std::sin(0.7 * k) * std::exp(-s->grid()[k]);
  EXPECT_LE((best_response(a, *s, y) + 0.5 * y).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(BestResponse, ThreeDimKnapsackAgentMatchesGridOracle) {
  auto s = make_space(TrajectorySpace::unit(3));
  auto rng = make_stream(31);
  for (int trial = 0; trial < 5; ++trial) {
    Polyhedron P = box(3, 0.0, 1.0);
    P.equality = LinearEquality{Vector::Ones(3), 2.0};
    const Matrix Q = random_psd(rng, 3, 0.05);
    const Vector q{{standard_normal(rng), standard_normal(rng), standard_normal(rng)}};
    const AgentModel a = make_agent(Q, q, P);
    const Vector y{{standard_normal(rng), standard_normal(rng), standard_normal(rng)}};
    const Vector u = best_response(a, *s, y);
    auto obj = [&](const Vector& v) { return v.dot(Q * v) + q.dot(v) + y.dot(v); };
    const double grid = grid_min_simplex3(obj, 2.0, 1e-3);
    EXPECT_TRUE(P.contains(u, 1e-9));
    EXPECT_LE(obj(u), grid + 1e-9);
    EXPECT_GE(obj(u), grid - 2e-3);
  }
}

TEST(BestResponse, VariationalInequalityCertificate) {
  auto s = make_space(TrajectorySpace(Vector{{1.0, 0.5, 2.0, 1.5}}));
  auto rng = make_stream(32);
  Polyhedron P = box(4, -0.5, 1.0);
  P.equality = LinearEquality{Vector::Ones(4), 1.0};
  Matrix G(1, 4);
  G << 1.0, 1.0, 0.0, 0.0;
  P.inequalities = LinearInequalities{G, Vector::Constant(1, 0.6)};
  const Matrix Q = random_psd(rng, 4, 0.1);
  const Vector q{{1.0, -2.0, 0.5, 0.0}};
  const AgentModel a = make_agent(Q, q, P);
  const Vector y{{-1.0, 0.5, 0.3, -0.2}};
  const Vector u = best_response(a, *s, y);
  const Vector grad = 2.0 * Q * u + q + s->weights().cwiseProduct(y);
  for (int trial = 0; trial < 100; ++trial) {
    Vector v(4);
    for (int k = 0; k < 4; ++k) v[k] = 2.0 * standard_normal(rng);
    const Vector feasible = P.project(v);
    EXPECT_GE(grad.dot(feasible - u), -1e-6);
  }
}

TEST(BestResponse, UnboundedDirectionsThrow) {
  auto s = make_space(TrajectorySpace::unit(2));
  const AgentModel lp = make_agent(Matrix::Zero(2, 2), Vector::Zero(2), box(2, -kInf, kInf));
  EXPECT_THROW((void)best_response(lp, *s, Vector{{1.0, 0.0}}), UnboundednessError);
  Matrix Q(2, 2);
  Q << 1.0, -1.0, -1.0, 1.0;
  const AgentModel ray = make_agent(Q, Vector{{-1.0, -1.0}}, box(2, -kInf, kInf));
  EXPECT_THROW((void)best_response(ray, *s, Vector::Zero(2)), UnboundednessError);
  // Same singular Q but a bounded feasible set: finite answer.
  const AgentModel bounded = make_agent(Q, Vector{{-1.0, -1.0}}, box(2, -2.0, 3.0));
  const Vector u = best_response(bounded, *s, Vector::Zero(2));
  EXPECT_NEAR(u[0], 3.0, 1e-6);
  EXPECT_NEAR(u[1], 3.0, 1e-6);
}

TEST(BestResponse, LinearProgramTiesSplitEvenly) {
  Polyhedron P = box(4, 0.0, 1.0);
  P.equality = LinearEquality{Vector::Ones(4), 1.0};
  const Vector u = solve_qp(Matrix::Zero(4, 4), Vector{{2.0, 1.0, 1.0, 3.0}}, P);
  EXPECT_EQ(u, (Vector{{0.0, 0.5, 0.5, 0.0}}));
}

TEST(BestResponse, SeparableStationaryPointWhenFeasible) {
  auto s = make_space(TrajectorySpace::unit(3));
  Matrix Q = Vector{{1.0, 2.0, 4.0}}.asDiagonal();
  const Vector q{{-1.0, 2.0, 0.5}};
  const AgentModel a = make_agent(Q, q, box(3, -10.0, 10.0));
  const Vector u = best_response(a, *s, Vector::Zero(3));
  EXPECT_LE((u + 0.5 * Q.inverse() * q).norm(), 1e-12);
}

TEST(BestResponseFull, SingleAgentIsGlobalMinimizer) {
  auto s = make_space(TrajectorySpace::unit(2));
  // J = ‖u‖² + (z + 1)·u + 0.5 z·z with z = u: minimizer solves 2u + 2u + 1 + u = 0.
  AgentModel a = make_agent(Matrix::Identity(2, 2), Vector::Zero(2), box(2, -5.0, 5.0));
  GameInstance g(s, {a}, Coupling::affine(Vector::Ones(2), Vector::Ones(2)),
                 MeanFieldCost::from_quadratic(*s, 0.5, Vector::Zero(2), 0.0));
  std::vector<Vector> u{Vector::Zero(2)};
  const Vector br = best_response_full(g, 0, u);
  EXPECT_LE((br - Vector::Constant(2, -0.2)).norm(), 1e-9);
}

TEST(BestResponseFull, GapToMeanFieldResponseShrinksLikeOneOverN) {
  auto s = make_space(TrajectorySpace::unit(3));
  std::vector<double> gaps;
  for (int N : {10, 100, 1000}) {
    AgentModel a = make_agent(Matrix::Identity(3, 3), Vector{{-1.0, 0.0, 1.0}}, box(3, -5.0, 5.0));
    std::vector<AgentModel> agents(N, a);
    GameInstance g(s, agents, Coupling::affine(Vector::Constant(3, 2.0), Vector::Zero(3)), MeanFieldCost::zero(*s));
    std::vector<Vector> u(N, Vector{{0.3, 0.0, -0.3}});
    const Vector xbar = g.mean_coupled(u);
    const Vector br = best_response(g, 0, g.coupling()(xbar));
    const Vector full = best_response_full(g, 0, u);
    gaps.push_back((br - full).norm());
  }
  EXPECT_GT(gaps[0], gaps[1]);
  EXPECT_GT(gaps[1], gaps[2]);
  EXPECT_NEAR(gaps[1] * 100.0, gaps[2] * 1000.0, 0.05 * gaps[2] * 1000.0);
}

TEST(BestResponseFull, NonlinearCouplingUsesProjectedGradient) {
  auto s = make_space(TrajectorySpace::unit(1));
  // Log coupling, J = (u−1)² + u·log((u + S)/N).
  AgentModel a = make_agent(Matrix::Identity(1, 1), Vector::Constant(1, -2.0), box(1, 0.1, 10.0));
  a.cost_const = 1.0;
  Coupling c;
  c.map = [](const Vector& z) -> Vector { return z.array().log().matrix(); };
  c.lipschitz = 10.0;
  c.monotone = true;
  c.separable = true;
  c.domain = std::make_pair(Vector::Constant(1, 0.1), Vector::Constant(1, 10.0));
  GameInstance g(s, {a, a, a}, c, MeanFieldCost::zero(*s));
  std::vector<Vector> u{Vector::Constant(1, 1.0), Vector::Constant(1, 0.5), Vector::Constant(1, 2.0)};
  const Vector br = best_response_full(g, 0, u);
  // Scalar stationarity: 2(u−1) + log((u+2.5)/3) + u/(u+2.5) = 0.
  const double x = br[0];
  EXPECT_NEAR(2.0 * (x - 1.0) + std::log((x + 2.5) / 3.0) + x / (x + 2.5), 0.0, 1e-7);
}
