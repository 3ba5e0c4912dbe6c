#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "mfg/bestresponse.hpp"
#include "mfg/cases.hpp"
#include "mfg/equilibrium.hpp"
#include "mfg/errors.hpp"
#include "mfg/model.hpp"
#include "mfg/parallel.hpp"
#include "mfg/random.hpp"
#include "mfg/social.hpp"

namespace mfg {

// ---------------------------------------------------------------- ε-Nash

struct EpsilonNash {
  double epsilon = 0.0;
  /// Smallest unclamped improvement over the evaluated agents.
  double raw_min = 0.0;
  std::size_t worst_agent = 0;
  std::size_t agents_evaluated = 0;
};

/// ε = max_i J_i(u*) − J_i(best_response_full(i), u*_{−i}) over all agents (sample = 0)
/// or over `sample` agents drawn from `seed`. Values in [−1e-8, 0) are clamped to 0.
inline EpsilonNash epsilon_nash(const GameInstance& game, std::span<const Vector> u_star, std::size_t sample = 0,
                                std::uint64_t seed = 0, QpOptions qp = {}, McOptions mc = {}) {
  game.check_profile(u_star);
  std::vector<std::size_t> idx(game.n());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (sample > 0 && sample < game.n()) {
    auto rng = make_stream(seed, 0xE5u);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(sample);
    std::sort(idx.begin(), idx.end());
  }
  std::vector<double> gain(idx.size(), 0.0);
  parallel_for(idx.size(), [&](std::size_t k) {
    const std::size_t i = idx[k];
    try {
      const Vector dev = best_response_full(game, i, u_star, qp);
      std::vector<Vector> alt(u_star.begin(), u_star.end());
      alt[i] = dev;
      gain[k] = agent_cost(game, i, u_star, mc) - agent_cost(game, i, alt, mc);
    } catch (const std::exception& e) {
      throw NumericalError("epsilon_nash: agent " + std::to_string(i) + ": " + e.what());
    }
  });
  EpsilonNash out;
  out.agents_evaluated = idx.size();
  out.raw_min = std::numeric_limits<double>::infinity();
  out.epsilon = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < idx.size(); ++k) {
    out.raw_min = std::min(out.raw_min, gain[k]);
    if (gain[k] > out.epsilon) {
      out.epsilon = gain[k];
      out.worst_agent = idx[k];
    }
  }
  if (out.epsilon < 0.0 && out.epsilon >= -1e-8) out.epsilon = 0.0;
  return out;
}

// ---------------------------------------------------------------- rate fits

struct RatePoint {
  std::size_t n = 0;
  double value = 0.0;
  std::size_t replications = 0;
  double std_error = 0.0;
};

struct RateFit {
  std::vector<RatePoint> points;
  double slope = std::numeric_limits<double>::quiet_NaN();
  double intercept = std::numeric_limits<double>::quiet_NaN();
  double ci_low = std::numeric_limits<double>::quiet_NaN();
  double ci_high = std::numeric_limits<double>::quiet_NaN();
  /// Every value is numerically zero; no slope is fitted.
  bool degenerate = false;
  std::size_t dropped = 0;
};

namespace detail {

inline std::pair<double, double> ls_line(std::span<const double> x, std::span<const double> y) {
  const double n = double(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sxy += (x[k] - mx) * (y[k] - my);
    sxx += (x[k] - mx) * (x[k] - mx);
  }
  const double slope = sxy / sxx;
  return {slope, my - slope * mx};
}

inline void check_span(std::span<const std::size_t> ns) {
  if (ns.empty()) throw UsageError("rate study: empty N list");
  for (std::size_t n : ns)
    if (n < 1) throw UsageError("rate study: N values must be positive");
}

}  // namespace detail

/// Least-squares slope of log value against log N with a residual-bootstrap 95% interval.
inline RateFit fit_rate(std::vector<RatePoint> points, std::uint64_t seed = 0, int bootstrap = 2000) {
  RateFit fit;
  fit.points = points;
  double scale = 0.0;
  for (const auto& p : points) scale = std::max(scale, std::abs(p.value));
  if (scale <= 1e-14) {
    fit.degenerate = true;
    return fit;
  }
  std::vector<double> lx, ly;
  for (const auto& p : points) {
    if (!(p.value > 0.0) || !std::isfinite(p.value)) {
      ++fit.dropped;
      continue;
    }
    lx.push_back(std::log(double(p.n)));
    ly.push_back(std::log(p.value));
  }
  if (lx.size() < 3)
    throw InsufficientDataError("rate study: fewer than 3 positive points (" + std::to_string(lx.size()) + ")");
  const auto [slope, icept] = detail::ls_line(lx, ly);
  fit.slope = slope;
  fit.intercept = icept;
  std::vector<double> resid(lx.size());
  for (std::size_t k = 0; k < lx.size(); ++k) resid[k] = ly[k] - (icept + slope * lx[k]);
  auto rng = make_stream(seed, 0xB0u);
  std::uniform_int_distribution<std::size_t> pick(0, lx.size() - 1);
  std::vector<double> slopes;
  slopes.reserve(std::size_t(bootstrap));
  std::vector<double> yb(lx.size());
  for (int b = 0; b < bootstrap; ++b) {
    for (std::size_t k = 0; k < lx.size(); ++k) yb[k] = icept + slope * lx[k] + resid[pick(rng)];
    slopes.push_back(detail::ls_line(lx, yb).first);
  }
  std::sort(slopes.begin(), slopes.end());
  fit.ci_low = slopes[std::size_t(0.025 * (slopes.size() - 1))];
  fit.ci_high = slopes[std::size_t(0.975 * (slopes.size() - 1))];
  return fit;
}

/// Family member for size N: the generated case (φ is built from it).
using CaseFamily = std::function<Case(std::size_t n)>;

struct EpsilonStudyConfig {
  Algorithm algorithm = Algorithm::primal_dual;
  SolverConfig solver = [] {
    SolverConfig c;
    c.tol = 1e-10;
    c.max_iters = 20000;
    c.track_mf_residual = false;
    return c;
  }();
  /// Agents evaluated per N (0 = all).
  std::size_t sampled_agents = 0;
  std::uint64_t seed = 0;
};

/// ε-Nash of the computed equilibrium for each N, fitted on log-log axes.
inline RateFit epsilon_rate_study(const CaseFamily& family, std::span<const std::size_t> n_list,
                                  const EpsilonStudyConfig& cfg = {}) {
  detail::check_span(n_list);
  std::vector<RatePoint> pts;
  for (std::size_t n : n_list) {
    const Case c = family(n);
    const VirtualCost phi = c.virtual_cost(cfg.seed);
    SolverConfig sc = cfg.solver;
    if (c.admm_penalty && cfg.algorithm == Algorithm::admm) sc.admm_penalty = *c.admm_penalty;
    const auto eq = solve(c.game, phi, cfg.algorithm, sc);
    const auto eps = epsilon_nash(c.game, eq.controls, cfg.sampled_agents, cfg.seed);
    pts.push_back({n, eps.epsilon, 1, 0.0});
  }
  return fit_rate(std::move(pts), cfg.seed);
}

// ---------------------------------------------------------------- lemma rates

/// Independent states x_i = mean + π_i with F applied to the empirical mean.
struct Lemma1Family {
  SpacePtr space;
  Coupling::Map F;
  double lipschitz = 0.0;
  Vector mean;
  std::optional<NoiseSpec> noise;
};

/// F_t(x) = L |x_t − m_t| with states centred at m: F(𝔼x̄) = 0 while 𝔼F(x̄) ~ L σ/√N.
inline Lemma1Family lemma1_kink_family(std::size_t dim = 4, double L = 1.0, double sigma = 1.0, double m = 1.0) {
  Lemma1Family f;
  f.space = make_space(TrajectorySpace::unit(dim));
  f.mean = Vector::Constant(Eigen::Index(dim), m);
  const Vector center = f.mean;
  f.F = [center, L](const Vector& x) -> Vector { return L * (x - center).cwiseAbs(); };
  f.lipschitz = L;
  f.noise = NoiseSpec{NoiseSpec::Kind::truncated_gaussian, sigma, 3.0};
  return f;
}

/// Monte-Carlo |𝔼(F(x̄)·x_i) − F(𝔼x̄)·𝔼x_i| per N, with independent draws for every (N, replication).
/// By exchangeability the agent average is used, and since 𝔼x̄ is known the per-replication sample
/// is (F(x̄) − F(𝔼x̄))·x̄, which is exactly zero for constant F.
inline RateFit lemma1_rate(const Lemma1Family& fam, std::span<const std::size_t> n_list, std::size_t mc_samples,
                           std::uint64_t seed) {
  detail::check_span(n_list);
  if (mc_samples < 2) throw UsageError("lemma1_rate: need at least 2 replications");
  const Vector& w = fam.space->weights();
  const Eigen::Index T = fam.space->size();
  const Vector F_mean = fam.F(fam.mean);
  std::vector<RatePoint> pts;
  for (std::size_t n : n_list) {
    std::vector<double> vals(mc_samples);
    parallel_for(mc_samples, [&](std::size_t r) {
      auto rng = make_stream(seed, 0x11000u + n, r);
      Vector xbar = Vector::Zero(T);
      for (std::size_t j = 0; j < n; ++j) xbar += fam.noise ? fam.noise->sample(rng, T) : Vector::Zero(T);
      xbar = fam.mean + xbar / double(n);
      vals[r] = detail::weighted_dot(fam.F(xbar) - F_mean, xbar, w);
    });
    double mean = 0.0, sq = 0.0;
    for (double v : vals) mean += v;
    mean /= double(mc_samples);
    for (double v : vals) sq += (v - mean) * (v - mean);
    const double se = std::sqrt(sq / double(mc_samples - 1) / double(mc_samples));
    pts.push_back({n, std::abs(mean), mc_samples, se});
  }
  return fit_rate(std::move(pts), seed);
}

struct Lemma2Family {
  SpacePtr space;
  MeanFieldCost G;
  Vector mean;
  std::optional<NoiseSpec> noise;
};

inline Lemma2Family lemma2_quadratic_family(std::size_t dim = 4, double beta = 2.0, double sigma = 1.0, double m = 1.0) {
  Lemma2Family f;
  f.space = make_space(TrajectorySpace::unit(dim));
  f.G = MeanFieldCost::from_quadratic(*f.space, beta / 2.0, Vector::Zero(Eigen::Index(dim)), 0.0);
  f.mean = Vector::Constant(Eigen::Index(dim), m);
  f.noise = NoiseSpec{NoiseSpec::Kind::truncated_gaussian, sigma, 3.0};
  return f;
}

/// Monte-Carlo |𝔼G(x̄) − 𝔼G(x̄_{−i})| per N, x̄_{−i} = (1/N)Σ_{j≠i} x_j, paired within each replication.
inline RateFit lemma2_rate(const Lemma2Family& fam, std::span<const std::size_t> n_list, std::size_t mc_samples,
                           std::uint64_t seed) {
  detail::check_span(n_list);
  if (mc_samples < 2) throw UsageError("lemma2_rate: need at least 2 replications");
  const Eigen::Index T = fam.space->size();
  std::vector<RatePoint> pts;
  for (std::size_t n : n_list) {
    std::vector<double> vals(mc_samples);
    parallel_for(mc_samples, [&](std::size_t r) {
      auto rng = make_stream(seed, 0x22000u + n, r);
      Vector sum = Vector::Zero(T);
      Vector x0;
      for (std::size_t j = 0; j < n; ++j) {
        const Vector x = fam.mean + (fam.noise ? fam.noise->sample(rng, T) : Vector::Zero(T));
        if (j == 0) x0 = x;
        sum += x;
      }
      const Vector xbar = sum / double(n);
      vals[r] = fam.G.g(xbar) - fam.G.g(xbar - x0 / double(n));
    });
    double mean = 0.0, sq = 0.0;
    for (double v : vals) mean += v;
    mean /= double(mc_samples);
    for (double v : vals) sq += (v - mean) * (v - mean);
    const double se = std::sqrt(sq / double(mc_samples - 1) / double(mc_samples));
    pts.push_back({n, std::abs(mean), mc_samples, se});
  }
  return fit_rate(std::move(pts), seed);
}

// ---------------------------------------------------------------- structural checks

struct MonotoneReport {
  bool is_monotone = true;
  double min_pairing = 0.0;
  Vector witness_x;
  Vector witness_y;
};

/// min ⟨F(x) − F(y), x − y⟩ over random pairs, constant-level probes, and 50 descent steps from the worst pair.
inline MonotoneReport monotone_check(const Coupling& coupling, const TrajectorySpace& space, std::size_t samples = 200,
                                     std::uint64_t seed = 0) {
  const Vector& w = space.weights();
  const Eigen::Index T = space.size();
  auto pairing = [&](const Vector& x, const Vector& y) {
    return detail::weighted_dot(coupling(x) - coupling(y), x - y, w);
  };
  auto clamp = [&](Vector v) {
    if (coupling.domain) v = v.cwiseMax(coupling.domain->first).cwiseMin(coupling.domain->second);
    return v;
  };
  auto rng = make_stream(seed, 0x3Cu);
  MonotoneReport rep;
  rep.min_pairing = std::numeric_limits<double>::infinity();
  double max_abs = 0.0;
  auto consider = [&](const Vector& x, const Vector& y) {
    const double p = pairing(x, y);
    max_abs = std::max(max_abs, std::abs(p));
    if (p < rep.min_pairing) {
      rep.min_pairing = p;
      rep.witness_x = x;
      rep.witness_y = y;
    }
  };
  for (std::size_t s = 0; s < samples; ++s) {
    const Vector x = detail::sample_point(coupling.domain, T, rng);
    const Vector y = detail::sample_point(coupling.domain, T, rng);
    consider(x, y);
  }
  const double levels[] = {-4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0};
  for (double a : levels)
    for (double b : levels)
      if (a < b) consider(clamp(Vector::Constant(T, a)), clamp(Vector::Constant(T, b)));

  // Descent on the pairing from the current worst pair, step length shrunk on failure.
  Vector x = rep.witness_x, y = rep.witness_y;
  double step = 0.1 * (1.0 + space.norm(x - y));
  for (int it = 0; it < 50; ++it) {
    const Vector gx = detail::fd_gradient([&](const Vector& v) { return pairing(v, y); }, x, w);
    const Vector gy = detail::fd_gradient([&](const Vector& v) { return pairing(x, v); }, y, w);
    const double gn = std::sqrt(space.inner(gx, gx) + space.inner(gy, gy));
    if (!(gn > 0.0)) break;
    const Vector xn = clamp(x - step * gx / gn), yn = clamp(y - step * gy / gn);
    if (pairing(xn, yn) < pairing(x, y)) {
      x = xn;
      y = yn;
      consider(x, y);
    } else {
      step *= 0.5;
    }
  }
  rep.is_monotone = rep.min_pairing >= -1e-8 * std::max(1.0, max_abs);
  return rep;
}

struct PotentialReport {
  bool is_potential = true;
  double max_asymmetry = 0.0;
  double scale = 0.0;
};

/// Compares ∂²J_i/∂x_i∂x_j with ∂²J_j/∂x_j∂x_i by central differences of the coupled part
/// F(x̄)·x_i + G(x̄) over the agents' coupled quantities.
inline PotentialReport potential_game_check(const GameInstance& game, std::size_t samples = 3, double fd_step = 1e-3,
                                            std::uint64_t seed = 0) {
  PotentialReport rep;
  const std::size_t N = game.n();
  if (N < 2) return rep;
  const Eigen::Index T = game.dim();
  const Vector& w = game.weights();
  const auto& F = game.coupling();
  const auto& G = game.mf_cost();
  auto rng = make_stream(seed, 0x9Fu);
  auto draw = [&]() {
    if (F.domain) {
      const Vector lo = F.domain->first, hi = F.domain->second;
      Vector v(T);
      for (Eigen::Index k = 0; k < T; ++k) {
        const double a = lo[k] + 0.1 * (hi[k] - lo[k]), b = hi[k] - 0.1 * (hi[k] - lo[k]);
        v[k] = uniform(rng, a, b);
      }
      return v;
    }
    Vector v(T);
    for (Eigen::Index k = 0; k < T; ++k) v[k] = standard_normal(rng);
    return v;
  };
  const double h = fd_step;
  for (std::size_t s = 0; s < samples; ++s) {
    std::vector<Vector> xs(N);
    for (auto& x : xs) x = draw();
    std::size_t i = std::size_t(rng() % N), j = std::size_t(rng() % (N - 1));
    if (j >= i) ++j;
    Vector sum = Vector::Zero(T);
    for (const auto& x : xs) sum += x;
    // Coupled part of agent a's cost after shifting x_i[k] by di and x_j[l] by dj.
    auto cost = [&](std::size_t a, Eigen::Index k, double di, Eigen::Index l, double dj) {
      Vector xi = xs[i], xj = xs[j];
      xi[k] += di;
      xj[l] += dj;
      const Vector xbar = (sum - xs[i] - xs[j] + xi + xj) / double(N);
      const Vector& xa = a == i ? xi : xj;
      return detail::weighted_dot(F(xbar), xa, w) + G.g(xbar);
    };
    auto mixed = [&](std::size_t a, Eigen::Index k, Eigen::Index l) {
      return (cost(a, k, h, l, h) - cost(a, k, h, l, -h) - cost(a, k, -h, l, h) + cost(a, k, -h, l, -h)) / (4.0 * h * h);
    };
    for (Eigen::Index k = 0; k < T; ++k)
      for (Eigen::Index l = 0; l < T; ++l) {
        const double a = mixed(i, k, l), b = mixed(j, k, l);
        rep.scale = std::max({rep.scale, std::abs(a), std::abs(b)});
        rep.max_asymmetry = std::max(rep.max_asymmetry, std::abs(a - b));
      }
  }
  rep.is_potential = rep.max_asymmetry <= 1e-4 * (1.0 + rep.scale);
  return rep;
}

/// Largest sampled ‖F(x) − F(y)‖ / ‖x − y‖ over random pairs and pairs at distance 1e-4.
inline double lipschitz_estimate(const Coupling::Map& map, const TrajectorySpace& space, std::size_t samples = 200,
                                 std::uint64_t seed = 0,
                                 const std::optional<std::pair<Vector, Vector>>& domain = std::nullopt) {
  const Eigen::Index T = space.size();
  auto rng = make_stream(seed, 0x71u);
  double best = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    const Vector x = detail::sample_point(domain, T, rng);
    Vector y = detail::sample_point(domain, T, rng);
    if (s % 2 == 1) {
      Vector d(T);
      for (Eigen::Index k = 0; k < T; ++k) d[k] = standard_normal(rng);
      y = x + 1e-4 * d / space.norm(d);
      if (domain) y = y.cwiseMax(domain->first).cwiseMin(domain->second);
    }
    const double dx = space.norm(x - y);
    if (dx <= 0.0) continue;
    best = std::max(best, space.norm(map(x) - map(y)) / dx);
  }
  return best;
}

// ---------------------------------------------------------------- equivalence report

struct CheckResult {
  std::string name;
  /// "pass", "fail", "info" or "error".
  std::string status;
  std::string detail;
  double value = std::numeric_limits<double>::quiet_NaN();
  double tolerance = std::numeric_limits<double>::quiet_NaN();
};

struct EquivalenceReport {
  std::string case_name;
  std::vector<CheckResult> checks;
  std::vector<EquilibriumResult> equilibria;
  std::optional<SocialSolution> social;
  double primal_value = std::numeric_limits<double>::quiet_NaN();
  double dual_value = std::numeric_limits<double>::quiet_NaN();
  double gap = std::numeric_limits<double>::quiet_NaN();
  bool monotone = false;
  std::string uniqueness = "not tested";
  std::string equivalence = "not established";
  bool all_passed = false;

  [[nodiscard]] const CheckResult* find(const std::string& name) const {
    for (const auto& c : checks)
      if (c.name == name) return &c;
    return nullptr;
  }
};

struct ReportConfig {
  SolverConfig solver;
  double agreement_tol = 1e-3;
  double equivalence_tol = 1e-3;
  double gap_tol = 1e-6;
  double uniqueness_tol = 1e-6;
  int restarts = 5;
  std::size_t epsilon_agents = 0;
  std::uint64_t seed = 0;
  std::vector<Algorithm> algorithms{Algorithm::mann, Algorithm::primal_dual, Algorithm::admm};
};

namespace detail {

inline double stacked_distance(std::span<const Vector> a, std::span<const Vector> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]).squaredNorm();
  return std::sqrt(s);
}

inline double stacked_norm(std::span<const Vector> a) {
  double s = 0.0;
  for (const auto& v : a) s += v.squaredNorm();
  return std::sqrt(s);
}

inline double rel(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

}  // namespace detail

/// Runs the equivalence pipeline on a case. Sub-failures become per-check "error" entries.
inline EquivalenceReport equivalence_report(const Case& c, const ReportConfig& cfg = {}) {
  EquivalenceReport rep;
  rep.case_name = c.name;
  const GameInstance& game = c.game;
  auto add = [&](std::string name, bool ok, std::string detail, double value = std::numeric_limits<double>::quiet_NaN(),
                 double tol = std::numeric_limits<double>::quiet_NaN()) {
    rep.checks.push_back({std::move(name), ok ? "pass" : "fail", std::move(detail), value, tol});
  };
  auto info = [&](std::string name, std::string detail, double value = std::numeric_limits<double>::quiet_NaN()) {
    rep.checks.push_back({std::move(name), "info", std::move(detail), value, std::numeric_limits<double>::quiet_NaN()});
  };
  auto error = [&](std::string name, const std::exception& e) {
    rep.checks.push_back({std::move(name), "error", e.what(), std::numeric_limits<double>::quiet_NaN(),
                          std::numeric_limits<double>::quiet_NaN()});
  };

  try {
    const auto m = monotone_check(game.coupling(), game.grid(), 200, cfg.seed);
    rep.monotone = m.is_monotone;
    info("monotone", m.is_monotone ? "coupling is monotone on all sampled pairs"
                                   : "non-monotone; witness pairing " + detail::fmt(m.min_pairing),
         m.min_pairing);
  } catch (const std::exception& e) {
    error("monotone", e);
  }

  std::optional<VirtualCost> phi;
  try {
    phi.emplace(c.virtual_cost(cfg.seed));
    add("virtual_cost", true, phi->closed_form() ? "closed-form potential" : "line integral of F");
  } catch (const std::exception& e) {
    error("virtual_cost", e);
  }
  if (!phi) return rep;
  const SocialProblem prob{game, *phi};

  SolverConfig sc = cfg.solver;
  for (Algorithm a : cfg.algorithms) {
    const std::string name = "solve_" + algorithm_name(a);
    try {
      SolverConfig s = sc;
      if (a == Algorithm::admm && c.admm_penalty) s.admm_penalty = *c.admm_penalty;
      auto r = solve(game, *phi, a, s);
      add(name, r.converged,
          std::to_string(r.iterations) + " iterations, mf_residual " + detail::fmt(r.final_mf_residual),
          double(r.iterations));
      rep.equilibria.push_back(std::move(r));
    } catch (const UnboundednessError& e) {
      info(name, std::string("not applicable: ") + e.what());
    } catch (const std::exception& e) {
      error(name, e);
    }
  }
  std::vector<const EquilibriumResult*> good;
  for (const auto& r : rep.equilibria)
    if (r.converged) good.push_back(&r);

  if (good.size() >= 2) {
    double worst = 0.0;
    for (std::size_t a = 0; a < good.size(); ++a)
      for (std::size_t b = a + 1; b < good.size(); ++b) {
        const double du = detail::stacked_distance(good[a]->controls, good[b]->controls) /
                          std::max(1e-12, detail::stacked_norm(good[b]->controls));
        const double dz = game.grid().norm(good[a]->z_star - good[b]->z_star) /
                          std::max(1.0, game.grid().norm(good[b]->z_star));
        worst = std::max({worst, du, dz});
      }
    add("algorithm_agreement", worst <= cfg.agreement_tol, "max pairwise relative distance " + detail::fmt(worst), worst,
        cfg.agreement_tol);
  }

  const EquilibriumResult* ref = good.empty() ? nullptr : good.back();
  bool gap_ok = false, equiv_ok = false;
  if (ref) {
    const Vector xbar = game.mean_coupled(ref->controls);
    try {
      rep.social = solve_social_direct(prob);
      rep.primal_value = rep.social->value;
      const double mfe_value = social_cost(prob, ref->controls, xbar);
      const double d = detail::rel(mfe_value, rep.primal_value);
      equiv_ok = d <= cfg.equivalence_tol && rep.social->converged;
      add("social_equivalence", equiv_ok,
          "social optimum " + detail::fmt(rep.primal_value) + " vs equilibrium social cost " + detail::fmt(mfe_value), d,
          cfg.equivalence_tol);
    } catch (const std::exception& e) {
      error("social_equivalence", e);
    }
    try {
      rep.dual_value = dual_value(prob, ref->lambda_star);
      const double primal = social_cost(prob, ref->controls, xbar);
      rep.gap = primal - rep.dual_value;
      const double g = std::isfinite(rep.gap) ? std::abs(rep.gap) / std::max(1.0, std::abs(primal))
                                              : std::numeric_limits<double>::infinity();
      gap_ok = g <= cfg.gap_tol;
      add("duality_gap", gap_ok, "P " + detail::fmt(primal) + ", D(lambda*) " + detail::fmt(rep.dual_value), g,
          cfg.gap_tol);
    } catch (const std::exception& e) {
      error("duality_gap", e);
    }
    try {
      const auto eps = epsilon_nash(game, ref->controls, cfg.epsilon_agents, cfg.seed);
      info("epsilon_nash", "largest unilateral improvement " + detail::fmt(eps.epsilon), eps.epsilon);
    } catch (const std::exception& e) {
      error("epsilon_nash", e);
    }
  }

  // Multi-start probe from random initial means at a tight tolerance: Picard when the case
  // is a known contraction, otherwise ADMM.
  try {
    std::vector<Vector> zs;
    auto rng = make_stream(cfg.seed, 0x5Eu);
    const Vector z0 = ref ? ref->z_star : Vector::Zero(game.dim());
    const bool contraction = c.contraction_constant && *c.contraction_constant < 1.0;
    for (int r = 0; r < cfg.restarts; ++r) {
      SolverConfig s = sc;
      s.tol = std::min(sc.tol, 1e-9);
      s.max_iters = std::max(sc.max_iters, 5000);
      s.track_mf_residual = false;
      if (c.admm_penalty) s.admm_penalty = *c.admm_penalty;
      Vector init(game.dim());
      for (Eigen::Index k = 0; k < init.size(); ++k) init[k] = z0[k] + (1.0 + std::abs(z0[k])) * standard_normal(rng);
      if (game.coupling().domain)
        init = init.cwiseMax(game.coupling().domain->first).cwiseMin(game.coupling().domain->second);
      s.initial_mean = init;
      const auto res = contraction ? solve(game, *phi, Algorithm::fixed_point, s) : solve(game, *phi, Algorithm::admm, s);
      if (res.converged) zs.push_back(res.z_star);
    }
    double spread = 0.0;
    for (std::size_t a = 0; a < zs.size(); ++a)
      for (std::size_t b = a + 1; b < zs.size(); ++b) spread = std::max(spread, game.grid().norm(zs[a] - zs[b]));
    if (int(zs.size()) < cfg.restarts) {
      rep.uniqueness = "inconclusive";
      info("uniqueness", std::to_string(zs.size()) + " of " + std::to_string(cfg.restarts) + " restarts converged",
           spread);
    } else {
      rep.uniqueness = spread <= cfg.uniqueness_tol ? "unique (empirically)" : "multiple candidates";
      info("uniqueness", rep.uniqueness + ", max restart distance " + detail::fmt(spread), spread);
    }
  } catch (const std::exception& e) {
    error("uniqueness", e);
  }

  const bool unique = rep.uniqueness == "unique (empirically)";
  if (equiv_ok && gap_ok && rep.monotone)
    rep.equivalence = "equivalent (monotone coupling)";
  else if (equiv_ok && gap_ok && unique)
    rep.equivalence = "equivalent (unique equilibrium)";
  else if (equiv_ok && gap_ok)
    rep.equivalence = "one-directional only";
  add("equivalence", equiv_ok && gap_ok && (rep.monotone || unique), rep.equivalence);

  rep.all_passed = true;
  for (const auto& ch : rep.checks)
    if (ch.status == "fail" || ch.status == "error") rep.all_passed = false;
  return rep;
}

}  // namespace mfg
