#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "mfg/projection.hpp"
#include "mfg/random.hpp"
#include "oracles.hpp"

using namespace mfg;

using oracle::knapsack_enumeration_oracle;
using oracle::rand_vec;

TEST(Knapsack, SymmetricExample) {
  const Vector p = knapsack_project(Vector{{5.0, 5.0}}, Vector::Zero(2), Vector::Constant(2, 4.0), 6.0);
  EXPECT_NEAR(p[0], 3.0, 1e-12);
  EXPECT_NEAR(p[1], 3.0, 1e-12);
}

TEST(Knapsack, FeasiblePointIsFixed) {
  const Vector v{{0.2, 0.5, 0.3}};
  const Vector p = knapsack_project(v, Vector::Zero(3), Vector::Ones(3), 1.0);
  EXPECT_LE((p - v).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Knapsack, MatchesActiveSetEnumeration) {
  auto rng = make_stream(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Vector l = rand_vec(rng, 6, -1.0, 0.5);
    const Vector u = l + rand_vec(rng, 6, 0.1, 2.0);
    const double gamma = uniform(rng, l.sum(), u.sum());
    const Vector v = rand_vec(rng, 6, -3.0, 3.0);
    const Vector p = knapsack_project(v, l, u, gamma);
    const Vector oracle = knapsack_enumeration_oracle(v, l, u, gamma);
    EXPECT_LE((p - oracle).cwiseAbs().maxCoeff(), 1e-8) << "trial " << trial;
    EXPECT_NEAR(p.sum(), gamma, 1e-12 * std::max(1.0, std::abs(gamma)));
  }
}

TEST(Knapsack, InfiniteUpperBounds) {
  const double inf = std::numeric_limits<double>::infinity();
  const Vector p = knapsack_project(Vector{{2.0, -1.0}}, Vector::Zero(2), Vector::Constant(2, inf), 1.0);
  EXPECT_NEAR(p[0], 1.0, 1e-12);
  EXPECT_NEAR(p[1], 0.0, 1e-12);
}

TEST(Knapsack, InfeasibleGammaThrows) {
  EXPECT_THROW(knapsack_project(Vector::Zero(2), Vector::Zero(2), Vector::Ones(2), 3.0), InfeasibilityError);
  EXPECT_THROW(knapsack_project(Vector::Zero(2), Vector::Zero(2), Vector::Ones(2), -0.1), InfeasibilityError);
}

TEST(Knapsack, IdempotentAndNonExpansive) {
  auto rng = make_stream(12);
  const Vector l = Vector::Zero(5), u = Vector::Constant(5, 1.5);
  for (int trial = 0; trial < 100; ++trial) {
    const Vector v = rand_vec(rng, 5, -4.0, 4.0), w = rand_vec(rng, 5, -4.0, 4.0);
    const Vector pv = knapsack_project(v, l, u, 3.0), pw = knapsack_project(w, l, u, 3.0);
    EXPECT_LE((knapsack_project(pv, l, u, 3.0) - pv).norm(), 1e-12);
    EXPECT_LE((pv - pw).norm(), (v - w).norm() + 1e-12);
  }
}

TEST(Dykstra, SingleSetAndInteriorPoint) {
  std::vector<ConvexSet> one{BoxSet{Vector::Zero(3), Vector::Ones(3)}};
  const Vector v{{2.0, -1.0, 0.5}};
  EXPECT_EQ(dykstra_project(v, one), (Vector{{1.0, 0.0, 0.5}}));
  std::vector<ConvexSet> two{BoxSet{Vector::Zero(3), Vector::Ones(3)}, HalfspaceSet{Vector::Ones(3), 2.0}};
  const Vector inside{{0.2, 0.3, 0.4}};
  EXPECT_LE((dykstra_project(inside, two) - inside).norm(), 1e-14);
}

TEST(Dykstra, BoxHyperplaneMatchesKnapsack) {
  auto rng = make_stream(13);
  for (int trial = 0; trial < 50; ++trial) {
    const Vector l = rand_vec(rng, 5, -1.0, 0.0), u = l + rand_vec(rng, 5, 0.5, 2.0);
    const double gamma = uniform(rng, l.sum(), u.sum());
    const Vector v = rand_vec(rng, 5, -3.0, 3.0);
    std::vector<ConvexSet> sets{BoxSet{l, u}, HyperplaneSet{Vector::Ones(5), gamma}};
    const Vector d = dykstra_project(v, sets);
    EXPECT_LE((d - knapsack_project(v, l, u, gamma)).cwiseAbs().maxCoeff(), 1e-8) << "trial " << trial;
  }
}

TEST(Dykstra, BudgetExhaustionCarriesResidual) {
  std::vector<ConvexSet> sets{BoxSet{Vector::Zero(2), Vector::Ones(2)}, HyperplaneSet{Vector{{1.0, 2.0}}, 2.5}};
  try {
    (void)dykstra_project(Vector{{5.0, -3.0}}, sets, DykstraOptions{1e-16, 2});
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_GT(e.residual(), 0.0);
  }
}

TEST(Polyhedron, EmptyIntersectionDoesNotConverge) {
  // Σu = 2 with u0 + u1 <= 0.5 and u2 <= 1 is empty.
  Polyhedron P;
  P.lower = Vector::Zero(3);
  P.upper = Vector::Ones(3);
  P.equality = LinearEquality{Vector::Ones(3), 2.0};
  Matrix G(1, 3);
  G << 1.0, 1.0, 0.0;
  P.inequalities = LinearInequalities{G, Vector::Constant(1, 0.5)};
  EXPECT_THROW((void)P.project(Vector{{1.0, 1.0, 0.0}}), NumericalError);
}

TEST(Polyhedron, CumulativeCapsFeasibleVariant) {
  Polyhedron P;
  P.lower = Vector::Zero(3);
  P.upper = Vector::Ones(3);
  P.equality = LinearEquality{Vector::Ones(3), 1.5};
  Matrix G(1, 3);
  G << 1.0, 1.0, 0.0;
  P.inequalities = LinearInequalities{G, Vector::Constant(1, 0.5)};
  const Vector v{{1.0, 1.0, 0.0}};
  const Vector p = P.project(v);
  // Active cap and sum: u0 = u1 = 0.25, u2 = 1 minimizes the distance (KKT by symmetry).
  EXPECT_NEAR(p[0], 0.25, 1e-7);
  EXPECT_NEAR(p[1], 0.25, 1e-7);
  EXPECT_NEAR(p[2], 1.0, 1e-7);
  EXPECT_LE((P.project(p) - p).norm(), 1e-9);
}
