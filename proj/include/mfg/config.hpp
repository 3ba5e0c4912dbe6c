#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <filesystem>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mfg/cases.hpp"
#include "mfg/equilibrium.hpp"
#include "mfg/errors.hpp"
#include "mfg/io.hpp"

// Config schema (INI; arrays comma-separated, matrix rows and records separated by ';').
//
//   [case]     name = ev | sine | routing | pigou | log | custom ; seed ; n
//   [solver]   algorithm, tol, max_iters, step = diminishing | constant, step_scale, step_power,
//              admm_penalty, residual_balancing, dual_step_gain, z_after_dual, initial_mean, tracked_agent
//   [ev]       n, horizon, period_minutes, eta, gamma, capacity, rate, demand, soc0 (lo,hi pairs),
//              noise_scale, price (list) or price_file (CSV period,price)
//   [sine]     kappa, rho, dt, t_max, n
//   [routing]  vertices, edges = from,to,a,b; ...   commodities = source,sink,rate; ...
//   [log]      n
//
// name = custom builds the instance inline:
//   [space]    dim, dt   or   weights, grid
//   [coupling] type = affine | zero, gain, offset (scalar or list), target = state | control
//   [mf_cost]  coeff, lin, constant
//   [agents]   count, control_dim, mode = inline | generated, seed, plus per-agent defaults
//              A, b, Q, q, c0, lower, upper, eq_row, eq_rhs, ineq_lhs, ineq_rhs, noise_scale.
//              mode = generated draws diag(Q) from Q_range, q from q_range and eq_rhs from eq_rhs_range.
//   [agent.K]  overrides for agent K (inline mode).
// Scalars broadcast to vectors; a scalar matrix s means s·I.

namespace mfg {

struct RunConfig {
  std::string case_name = "ev";
  std::uint64_t seed = 7;
  std::optional<std::size_t> n;
  EvParams ev;
  double kappa = 1.5;
  double sine_rho = 1.0;
  double sine_dt = 0.1;
  double sine_t_max = 0.0;
  std::size_t sine_n = 10;
  std::optional<RoutingGraph> graph;
  std::vector<Commodity> commodities;
  std::size_t log_n = 10;
  std::optional<boost::property_tree::ptree> custom;

  std::optional<Algorithm> algorithm;
  SolverConfig solver;
  bool admm_penalty_set = false;
};

namespace config_detail {

using boost::property_tree::ptree;

inline void check_keys(const ptree& sec, const std::string& name, const std::set<std::string>& allowed) {
  for (const auto& [k, v] : sec)
    if (!allowed.count(k)) throw UsageError("config: unknown key '" + k + "' in [" + name + "]");
}

inline double get_double(const ptree& sec, const std::string& key, double fallback) {
  const auto v = sec.get_optional<std::string>(key);
  return v ? io::parse_double(*v, key) : fallback;
}

inline std::size_t get_size(const ptree& sec, const std::string& key, std::size_t fallback) {
  const double v = get_double(sec, key, double(fallback));
  if (v < 0 || v != std::floor(v)) throw UsageError("config: '" + key + "' must be a nonnegative integer");
  return std::size_t(v);
}

inline bool get_bool(const ptree& sec, const std::string& key, bool fallback) {
  const auto v = sec.get_optional<std::string>(key);
  if (!v) return fallback;
  const std::string s = io::trim(*v);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw UsageError("config: '" + key + "' must be a boolean");
}

inline std::vector<double> parse_list(const std::string& s, const std::string& what) {
  std::vector<double> out;
  for (const auto& cell : io::split(s, ',')) out.push_back(io::parse_double(cell, what));
  return out;
}

inline Vector parse_vector(const std::string& s, Eigen::Index n, const std::string& what) {
  const auto v = parse_list(s, what);
  if (v.size() == 1) return Vector::Constant(n, v[0]);
  if (Eigen::Index(v.size()) != n)
    throw UsageError("config: '" + what + "' needs 1 or " + std::to_string(n) + " entries, got " +
                     std::to_string(v.size()));
  return Eigen::Map<const Vector>(v.data(), n);
}

inline Matrix parse_matrix(const std::string& s, Eigen::Index rows, Eigen::Index cols, const std::string& what) {
  const std::string t = io::trim(s);
  if (t == "identity") {
    if (rows != cols) throw UsageError("config: '" + what + "' = identity requires a square shape");
    return Matrix::Identity(rows, cols);
  }
  const auto row_strs = io::split(t, ';');
  if (row_strs.size() == 1 && parse_list(row_strs[0], what).size() == 1) {
    if (rows != cols) throw UsageError("config: scalar '" + what + "' requires a square shape");
    return parse_list(row_strs[0], what)[0] * Matrix::Identity(rows, cols);
  }
  if (Eigen::Index(row_strs.size()) != rows)
    throw UsageError("config: '" + what + "' needs " + std::to_string(rows) + " rows");
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) m.row(r) = parse_vector(row_strs[std::size_t(r)], cols, what).transpose();
  return m;
}

inline std::pair<double, double> parse_range(const ptree& sec, const std::string& key, std::pair<double, double> fb) {
  const auto v = sec.get_optional<std::string>(key);
  if (!v) return fb;
  const auto l = parse_list(*v, key);
  if (l.size() != 2) throw UsageError("config: '" + key + "' must be 'lo,hi'");
  return {l[0], l[1]};
}

inline CouplingTarget parse_target(const std::string& s) {
  const std::string t = io::trim(s);
  if (t == "state" || t == "state_mean") return CouplingTarget::state_mean;
  if (t == "control" || t == "control_mean") return CouplingTarget::control_mean;
  throw UsageError("config: coupling target must be 'state' or 'control'");
}

/// Looks up key in the agent's own section first, then in [agents].
struct AgentKeys {
  const ptree* own;
  const ptree& shared;
  [[nodiscard]] std::optional<std::string> get(const std::string& key) const {
    if (own)
      if (auto v = own->get_optional<std::string>(key)) return *v;
    if (auto v = shared.get_optional<std::string>(key)) return *v;
    return std::nullopt;
  }
};

inline const std::set<std::string> agent_keys{"A",     "b",      "Q",      "q",        "c0",       "lower",
                                               "upper", "eq_row", "eq_rhs", "ineq_lhs", "ineq_rhs", "noise_scale"};

inline Case build_custom(const ptree& root, std::uint64_t seed) {
  const ptree empty;
  auto section = [&](const std::string& name) -> const ptree& {
    const auto s = root.get_child_optional(name);
    return s ? *s : empty;
  };
  const ptree& sp = section("space");
  check_keys(sp, "space", {"dim", "dt", "weights", "grid", "rho", "t_max"});
  SpacePtr space;
  if (auto w = sp.get_optional<std::string>("weights")) {
    const auto wl = parse_list(*w, "weights");
    const Vector wv = Eigen::Map<const Vector>(wl.data(), Eigen::Index(wl.size()));
    if (auto g = sp.get_optional<std::string>("grid"))
      space = make_space(TrajectorySpace(wv, parse_vector(*g, wv.size(), "grid")));
    else
      space = make_space(TrajectorySpace(wv));
  } else if (sp.get_optional<std::string>("rho")) {
    space = make_space(TrajectorySpace::exponential(get_double(sp, "rho", 1.0), get_double(sp, "dt", 0.1),
                                                    get_double(sp, "t_max", 0.0)));
  } else {
    const std::size_t dim = get_size(sp, "dim", 0);
    if (dim == 0) throw UsageError("config: [space] needs dim or weights");
    space = make_space(TrajectorySpace::unit(dim, get_double(sp, "dt", 1.0)));
  }
  const Eigen::Index T = space->size();

  const ptree& cp = section("coupling");
  check_keys(cp, "coupling", {"type", "gain", "offset", "target"});
  const std::string ctype = io::trim(cp.get<std::string>("type", "affine"));
  const CouplingTarget target = parse_target(cp.get<std::string>("target", "state"));
  Coupling coupling;
  if (ctype == "zero")
    coupling = Coupling::zero(T, target);
  else if (ctype == "affine")
    coupling = Coupling::affine(parse_vector(cp.get<std::string>("gain", "0"), T, "gain"),
                                parse_vector(cp.get<std::string>("offset", "0"), T, "offset"), target);
  else
    throw UsageError("config: coupling type must be 'affine' or 'zero'");

  const ptree& mp = section("mf_cost");
  check_keys(mp, "mf_cost", {"coeff", "lin", "constant"});
  MeanFieldCost G = MeanFieldCost::from_quadratic(*space, get_double(mp, "coeff", 0.0),
                                                  parse_vector(mp.get<std::string>("lin", "0"), T, "lin"),
                                                  get_double(mp, "constant", 0.0));

  const ptree& ag = section("agents");
  std::set<std::string> allowed = agent_keys;
  allowed.insert({"count", "control_dim", "mode", "seed", "Q_range", "q_range", "eq_rhs_range"});
  check_keys(ag, "agents", allowed);
  const std::size_t count = get_size(ag, "count", 0);
  if (count == 0) throw UsageError("config: [agents] count must be >= 1");
  const Eigen::Index m = Eigen::Index(get_size(ag, "control_dim", std::size_t(T)));
  const std::string mode = io::trim(ag.get<std::string>("mode", "inline"));
  if (mode != "inline" && mode != "generated") throw UsageError("config: [agents] mode must be inline or generated");
  const std::uint64_t gen_seed = get_size(ag, "seed", seed);

  for (const auto& [name, sec] : root) {
    if (name.rfind("agent.", 0) != 0) continue;
    check_keys(sec, name, agent_keys);
    const std::size_t k = std::size_t(io::parse_double(name.substr(6), name));
    if (k >= count) throw UsageError("config: section [" + name + "] beyond agent count");
  }

  std::vector<AgentModel> agents;
  for (std::size_t i = 0; i < count; ++i) {
    const AgentKeys keys{root.get_child_optional(ptree::path_type("agent." + std::to_string(i), '/')).get_ptr(), ag};
    AgentModel a;
    a.state_matrix = keys.get("A") ? parse_matrix(*keys.get("A"), T, m, "A")
                                   : (m == T ? Matrix(Matrix::Identity(T, m))
                                             : throw UsageError("config: A required when control_dim != dim"));
    a.state_offset = parse_vector(keys.get("b").value_or("0"), T, "b");
    a.cost_quad = parse_matrix(keys.get("Q").value_or("0"), m, m, "Q");
    a.cost_lin = parse_vector(keys.get("q").value_or("0"), m, "q");
    a.cost_const = io::parse_double(keys.get("c0").value_or("0"), "c0");
    a.admissible.lower = parse_vector(keys.get("lower").value_or("-inf"), m, "lower");
    a.admissible.upper = parse_vector(keys.get("upper").value_or("inf"), m, "upper");
    std::optional<double> eq_rhs;
    if (auto r = keys.get("eq_rhs")) eq_rhs = io::parse_double(*r, "eq_rhs");
    if (mode == "generated") {
      auto rng = make_stream(gen_seed, 0xC0u + i, 0);
      const auto qr = parse_range(ag, "Q_range", {1.0, 1.0});
      const auto lr = parse_range(ag, "q_range", {0.0, 0.0});
      Vector diag(m), lin(m);
      for (Eigen::Index k = 0; k < m; ++k) diag[k] = uniform(rng, qr.first, qr.second);
      for (Eigen::Index k = 0; k < m; ++k) lin[k] = uniform(rng, lr.first, lr.second);
      a.cost_quad = diag.asDiagonal();
      a.cost_lin = lin;
      if (ag.get_optional<std::string>("eq_rhs_range")) {
        const auto er = parse_range(ag, "eq_rhs_range", {0.0, 0.0});
        eq_rhs = uniform(rng, er.first, er.second);
      }
    }
    if (auto row = keys.get("eq_row")) {
      if (!eq_rhs) throw UsageError("config: eq_row given without eq_rhs");
      a.admissible.equality = LinearEquality{parse_vector(*row, m, "eq_row"), *eq_rhs};
    }
    if (auto lhs = keys.get("ineq_lhs")) {
      const auto rows = io::split(io::trim(*lhs), ';');
      const auto rhs = keys.get("ineq_rhs");
      if (!rhs) throw UsageError("config: ineq_lhs given without ineq_rhs");
      const Eigen::Index R = Eigen::Index(rows.size());
      a.admissible.inequalities = LinearInequalities{parse_matrix(*lhs, R, m, "ineq_lhs"), parse_vector(*rhs, R, "ineq_rhs")};
    }
    const double ns = io::parse_double(keys.get("noise_scale").value_or("0"), "noise_scale");
    if (ns > 0.0) a.noise = NoiseSpec{NoiseSpec::Kind::truncated_gaussian, ns, 3.0};
    agents.push_back(std::move(a));
  }
  return Case("custom", GameInstance(space, std::move(agents), std::move(coupling), std::move(G), seed));
}

inline std::vector<std::vector<double>> parse_records(const std::string& s, std::size_t width, const std::string& what) {
  std::vector<std::vector<double>> out;
  for (const auto& rec : io::split(io::trim(s), ';')) {
    if (io::trim(rec).empty()) continue;
    auto v = parse_list(rec, what);
    if (v.size() != width) throw UsageError("config: each '" + what + "' record needs " + std::to_string(width) + " fields");
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace config_detail

/// Reads an INI config into a RunConfig; relative price_file paths resolve against the config's directory.
inline RunConfig parse_config(std::istream& in, const std::filesystem::path& base_dir = {}) {
  using namespace config_detail;
  ptree root;
  try {
    boost::property_tree::ini_parser::read_ini(in, root);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  static const std::set<std::string> sections{"case", "solver", "ev", "sine", "routing", "log",
                                              "space", "coupling", "mf_cost", "agents"};
  for (const auto& [name, sec] : root)
    if (!sections.count(name) && name.rfind("agent.", 0) != 0)
      throw UsageError("config: unknown section [" + name + "]");

  const ptree empty;
  auto section = [&](const std::string& name) -> const ptree& {
    const auto s = root.get_child_optional(name);
    return s ? *s : empty;
  };
  RunConfig rc;
  const ptree& cs = section("case");
  check_keys(cs, "case", {"name", "seed", "n"});
  rc.case_name = io::trim(cs.get<std::string>("name", "ev"));
  rc.seed = get_size(cs, "seed", rc.seed);
  if (cs.get_optional<std::string>("n")) rc.n = get_size(cs, "n", 0);

  const ptree& sv = section("solver");
  check_keys(sv, "solver", {"algorithm", "tol", "max_iters", "step", "step_scale", "step_power", "admm_penalty",
                            "residual_balancing", "dual_step_gain", "z_after_dual", "initial_mean", "tracked_agent"});
  if (auto a = sv.get_optional<std::string>("algorithm")) rc.algorithm = parse_algorithm(io::trim(*a));
  SolverConfig& s = rc.solver;
  s.tol = get_double(sv, "tol", s.tol);
  s.max_iters = int(get_size(sv, "max_iters", std::size_t(s.max_iters)));
  const std::string step = io::trim(sv.get<std::string>("step", "diminishing"));
  const double scale = get_double(sv, "step_scale", 1.0);
  if (step == "diminishing")
    s.step = StepSchedule::diminishing(scale, get_double(sv, "step_power", 1.0));
  else if (step == "constant")
    s.step = StepSchedule::constant(scale);
  else
    throw UsageError("config: step must be 'diminishing' or 'constant'");
  if (sv.get_optional<std::string>("admm_penalty")) {
    s.admm_penalty = get_double(sv, "admm_penalty", 1.0);
    rc.admm_penalty_set = true;
  }
  s.residual_balancing = get_bool(sv, "residual_balancing", false);
  s.dual_step_gain = get_double(sv, "dual_step_gain", 1.0);
  s.z_after_dual = get_bool(sv, "z_after_dual", false);
  if (sv.get_optional<std::string>("tracked_agent")) s.tracked_agent = int(get_size(sv, "tracked_agent", 0));
  if (auto im = sv.get_optional<std::string>("initial_mean")) {
    // Stored as a one-entry vector and broadcast once the space is known.
    s.initial_mean = Vector::Constant(1, io::parse_double(*im, "initial_mean"));
  }

  const ptree& ev = section("ev");
  check_keys(ev, "ev", {"n", "horizon", "period_minutes", "eta", "gamma", "capacity", "rate", "demand", "soc0",
                        "noise_scale", "price", "price_file"});
  EvParams& p = rc.ev;
  p.n = get_size(ev, "n", p.n);
  p.horizon = int(get_size(ev, "horizon", std::size_t(p.horizon)));
  p.period_minutes = get_double(ev, "period_minutes", p.period_minutes);
  p.eta = get_double(ev, "eta", p.eta);
  p.gamma_price = get_double(ev, "gamma", p.gamma_price);
  p.capacity_range = parse_range(ev, "capacity", p.capacity_range);
  p.rate_range = parse_range(ev, "rate", p.rate_range);
  p.demand_range = parse_range(ev, "demand", p.demand_range);
  p.soc0_range = parse_range(ev, "soc0", p.soc0_range);
  p.noise_scale = get_double(ev, "noise_scale", p.noise_scale);
  if (auto pr = ev.get_optional<std::string>("price")) p.c = parse_vector(*pr, p.horizon, "price");
  if (auto pf = ev.get_optional<std::string>("price_file")) {
    std::filesystem::path path = io::trim(*pf);
    if (path.is_relative() && !base_dir.empty()) path = base_dir / path;
    p.c = io::read_price_csv(path);
  }

  const ptree& si = section("sine");
  check_keys(si, "sine", {"kappa", "rho", "dt", "t_max", "n"});
  rc.kappa = get_double(si, "kappa", rc.kappa);
  rc.sine_rho = get_double(si, "rho", rc.sine_rho);
  rc.sine_dt = get_double(si, "dt", rc.sine_dt);
  rc.sine_t_max = get_double(si, "t_max", rc.sine_t_max);
  rc.sine_n = get_size(si, "n", rc.sine_n);

  const ptree& ro = section("routing");
  check_keys(ro, "routing", {"vertices", "edges", "commodities"});
  if (auto edges = ro.get_optional<std::string>("edges")) {
    RoutingGraph g;
    g.vertices = int(get_size(ro, "vertices", 0));
    for (const auto& r : parse_records(*edges, 4, "edges")) g.edges.push_back({int(r[0]), int(r[1]), r[2], r[3]});
    rc.graph = g;
    const auto com = ro.get_optional<std::string>("commodities");
    if (!com) throw UsageError("config: [routing] edges given without commodities");
    for (const auto& r : parse_records(*com, 3, "commodities")) rc.commodities.push_back({int(r[0]), int(r[1]), r[2]});
  }

  const ptree& lg = section("log");
  check_keys(lg, "log", {"n"});
  rc.log_n = get_size(lg, "n", rc.log_n);

  if (rc.case_name == "custom") rc.custom = root;
  return rc;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot read config '" + path.string() + "'");
  return parse_config(f, path.parent_path());
}

/// Builds the instance named by the config; `n` (from [case] or --n) overrides the per-case population size.
inline Case build_case(const RunConfig& rc) {
  const std::string& name = rc.case_name;
  if (name == "ev" || name == "ev-stochastic") {
    EvParams p = rc.ev;
    if (rc.n) p.n = *rc.n;
    if (name == "ev-stochastic" && p.noise_scale <= 0.0) p.noise_scale = 0.05;
    Case c = ev_game(p, rc.seed);
    c.name = name;
    return c;
  }
  if (name == "sine") return sine_game(rc.kappa, rc.sine_rho, rc.sine_dt, rc.sine_t_max, rc.n.value_or(rc.sine_n));
  if (name == "routing" || name == "pigou") {
    if (rc.graph) {
      std::vector<Commodity> ks = rc.commodities;
      if (rc.n) {
        if (ks.size() != 1) throw UsageError("--n replicates a single commodity; the config lists several");
        ks.assign(*rc.n, ks.front());
      }
      return routing_game(*rc.graph, ks);
    }
    Case c = pigou_game(rc.n.value_or(2));
    c.name = name;
    return c;
  }
  if (name == "log") return log_game(rc.n.value_or(rc.log_n));
  if (name == "custom") {
    if (!rc.custom) throw UsageError("case 'custom' requires a config file");
    return config_detail::build_custom(*rc.custom, rc.seed);
  }
  throw UsageError("unknown case '" + name + "' (expected ev, ev-stochastic, sine, routing, pigou, log, custom)");
}

}  // namespace mfg
