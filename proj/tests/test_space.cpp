#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "mfg/random.hpp"
#include "mfg/space.hpp"

using namespace mfg;

namespace {

Vector random_vector(std::mt19937_64& rng, Eigen::Index n) {
  Vector v(n);
  for (Eigen::Index k = 0; k < n; ++k) v[k] = standard_normal(rng);
  return v;
}

// Pairwise (tree) summation, independent of mean_of's sequential loop.
Vector tree_sum(const std::vector<Vector>& xs, std::size_t lo, std::size_t hi) {
  if (hi - lo == 1) return xs[lo];
  const std::size_t mid = lo + (hi - lo) / 2;
  return tree_sum(xs, lo, mid) + tree_sum(xs, mid, hi);
}

}  // namespace

TEST(Space, UnitWeightInnerProduct) {
  auto s = make_space(TrajectorySpace::unit(2));
  Trajectory x(s, Vector{{1.0, 2.0}});
  Trajectory y(s, Vector{{3.0, 4.0}});
  EXPECT_DOUBLE_EQ(inner(x, y), 11.0);
  EXPECT_DOUBLE_EQ(norm(Trajectory(s, Vector{{3.0, 4.0}})), 5.0);
}

TEST(Space, BasisVectorNormIsWeight) {
  Vector w{{0.3, 1.7, 2.5}};
  auto s = make_space(TrajectorySpace(w));
  Vector e = Vector::Zero(3);
  e[0] = 1.0;
  EXPECT_DOUBLE_EQ(s->inner(e, e), 0.3);
}

TEST(Space, ExponentialWeightsMatchDirectQuadrature) {
  const auto sp = TrajectorySpace::exponential(1.0, 0.1, 1.0);
  ASSERT_EQ(sp.dim(), 10u);
  double oracle = 0.0;
  for (int k = 0; k < 10; ++k) oracle += std::exp(-0.1 * k) * 0.1;
  const Vector ones = Vector::Ones(10);
  EXPECT_NEAR(sp.inner(ones, ones), oracle, 1e-14);
  EXPECT_NEAR(sp.grid()[9], 0.9, 1e-14);
}

TEST(Space, ImplicitHorizonReachesTolerance) {
  const auto sp = TrajectorySpace::exponential(1.0, 0.1);
  const double t_last = sp.grid()[sp.size() - 1];
  EXPECT_LT(std::exp(-(t_last + 0.1)), 1e-8 * 1.0001);
  EXPECT_GT(std::exp(-(t_last - 0.1)), 1e-8);
}

TEST(Space, NormProperties) {
  auto rng = make_stream(1);
  auto s = make_space(TrajectorySpace(Vector{{0.5, 2.0, 1.0, 0.1}}));
  EXPECT_EQ(norm(Trajectory::zero(s)), 0.0);
  for (int trial = 0; trial < 50; ++trial) {
    const Vector x = random_vector(rng, 4), y = random_vector(rng, 4);
    EXPECT_NEAR(s->norm(-2.0 * x), 2.0 * s->norm(x), 1e-12);
    EXPECT_LE(std::abs(s->inner(x, y)), s->norm(x) * s->norm(y) + 1e-12);
    const double lhs = std::pow(s->norm(x + y), 2) + std::pow(s->norm(x - y), 2);
    const double rhs = 2.0 * (std::pow(s->norm(x), 2) + std::pow(s->norm(y), 2));
    EXPECT_NEAR(lhs, rhs, 1e-10 * rhs);
    EXPECT_NEAR(s->inner(x, y), s->inner(y, x), 1e-15);
  }
}

TEST(Space, MeanOfMatchesTreeSummation) {
  auto rng = make_stream(2);
  std::vector<Vector> xs;
  for (int i = 0; i < 100; ++i) xs.push_back(random_vector(rng, 7));
  const Vector m = mean_of(std::span<const Vector>(xs));
  const Vector oracle = tree_sum(xs, 0, xs.size()) / 100.0;
  EXPECT_LE((m - oracle).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Space, MeanOfSimpleCases) {
  auto s = make_space(TrajectorySpace::unit(3));
  Trajectory x(s, Vector{{1.0, -2.0, 3.0}});
  std::vector<Trajectory> one{x};
  EXPECT_EQ(mean_of(std::span<const Trajectory>(one)).values(), x.values());
  std::vector<Trajectory> pair{x, Trajectory(s, -x.values())};
  EXPECT_EQ(mean_of(std::span<const Trajectory>(pair)).values(), Vector::Zero(3));
  std::vector<Vector> empty;
  EXPECT_THROW(mean_of(std::span<const Vector>(empty)), UsageError);
}

TEST(Space, MeanOfReproducibleAfterSorting) {
  auto rng = make_stream(3);
  std::vector<std::pair<int, Vector>> tagged;
  for (int i = 0; i < 20; ++i) tagged.emplace_back(i, random_vector(rng, 5));
  auto shuffled = tagged;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  std::sort(shuffled.begin(), shuffled.end(), [](auto& a, auto& b) { return a.first < b.first; });
  std::vector<Vector> a, b;
  for (auto& [i, v] : tagged) a.push_back(v);
  for (auto& [i, v] : shuffled) b.push_back(v);
  EXPECT_EQ(mean_of(std::span<const Vector>(a)), mean_of(std::span<const Vector>(b)));
}

TEST(Space, Validation) {
  EXPECT_THROW(TrajectorySpace(Vector{{1.0, 0.0}}), UsageError);
  EXPECT_THROW(TrajectorySpace(Vector{{1.0, -1.0}}), UsageError);
  EXPECT_THROW(TrajectorySpace(Vector(0)), UsageError);
  EXPECT_THROW(TrajectorySpace(Vector::Ones(2), Vector::Zero(3)), UsageError);
  auto s = make_space(TrajectorySpace::unit(2));
  EXPECT_THROW(Trajectory(s, Vector::Ones(3)), UsageError);
  Vector bad = Vector::Ones(2);
  bad[1] = std::nan("");
  EXPECT_THROW(Trajectory(s, bad), UsageError);
  auto s3 = make_space(TrajectorySpace::unit(3));
  EXPECT_THROW(inner(Trajectory::zero(s), Trajectory::zero(s3)), UsageError);
  EXPECT_THROW((void)s->inner(Vector::Ones(2), Vector::Ones(3)), UsageError);
}
