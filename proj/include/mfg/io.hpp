#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfg/equilibrium.hpp"
#include "mfg/errors.hpp"
#include "mfg/verify.hpp"

namespace mfg::io {

/// Shortest round-trip decimal form, so reruns produce identical bytes.
inline std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw UsageError("cannot create output directory '" + dir.string() + "': " + ec.message());
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw UsageError("cannot write '" + path.string() + "'");
  f << text;
}

inline std::string residuals_csv(const std::vector<IterationRecord>& h) {
  std::ostringstream os;
  os << "iter,du_norm,dz_norm,dlambda_norm,mf_residual,primal_residual,dual_residual\n";
  for (const auto& r : h)
    os << r.iter << ',' << num(r.du_norm) << ',' << num(r.dz_norm) << ',' << num(r.dlambda_norm) << ','
       << num(r.mf_residual) << ',' << num(r.primal_residual) << ',' << num(r.dual_residual) << '\n';
  return os.str();
}

/// Per-iteration ‖u_i‖ of the tracked agent and ‖z‖; the data source of the norm plots.
inline std::string norms_csv(const std::vector<IterationRecord>& h, std::size_t agent) {
  std::ostringstream os;
  os << "iter,agent,u_norm,z_norm\n";
  for (const auto& r : h) os << r.iter << ',' << agent << ',' << num(r.u_norm) << ',' << num(r.z_norm) << '\n';
  return os.str();
}

/// One trajectory per row; the header carries the grid.
inline std::string equilibrium_csv(const GameInstance& game, const EquilibriumResult& r) {
  std::ostringstream os;
  os << "label";
  for (Eigen::Index k = 0; k < game.grid().grid().size(); ++k) os << ',' << num(game.grid().grid()[k]);
  os << '\n';
  auto row = [&](const std::string& label, const Vector& v) {
    os << label;
    for (Eigen::Index k = 0; k < v.size(); ++k) os << ',' << num(v[k]);
    os << '\n';
  };
  row("z_star", r.z_star);
  row("lambda_star", r.lambda_star);
  row("mean", game.mean_coupled(r.controls));
  for (std::size_t i = 0; i < r.controls.size(); ++i) row("x_" + std::to_string(i), game.coupled(i, r.controls[i]));
  return os.str();
}

/// Controls, one agent per row (lengths may differ between agents).
inline std::string controls_csv(const std::vector<Vector>& us) {
  std::ostringstream os;
  os << "agent,values\n";
  for (std::size_t i = 0; i < us.size(); ++i) {
    os << i;
    for (Eigen::Index k = 0; k < us[i].size(); ++k) os << ',' << num(us[i][k]);
    os << '\n';
  }
  return os.str();
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(trim(s), &pos);
    if (pos != trim(s).size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw UsageError("cannot parse number '" + s + "' in " + what);
  }
}

inline std::vector<Vector> read_controls_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot read '" + path.string() + "'");
  std::string line;
  std::getline(f, line);
  std::vector<Vector> us;
  while (std::getline(f, line)) {
    if (trim(line).empty()) continue;
    const auto cells = split(line, ',');
    Vector v(Eigen::Index(cells.size() - 1));
    for (std::size_t k = 1; k < cells.size(); ++k) v[Eigen::Index(k - 1)] = parse_double(cells[k], path.string());
    us.push_back(v);
  }
  return us;
}

/// Price profile with columns period, price (header optional), sorted by period.
inline Vector read_price_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot read price file '" + path.string() + "'");
  std::vector<std::pair<double, double>> rows;
  std::string line;
  bool first = true;
  while (std::getline(f, line)) {
    if (trim(line).empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() < 2) throw UsageError("price file: expected 'period,price' rows");
    if (first) {
      first = false;
      if (trim(cells[0]) == "period") continue;
    }
    rows.emplace_back(parse_double(cells[0], path.string()), parse_double(cells[1], path.string()));
  }
  std::sort(rows.begin(), rows.end());
  Vector c(Eigen::Index(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) c[Eigen::Index(k)] = rows[k].second;
  return c;
}

inline std::string rates_csv(const RateFit& fit) {
  std::ostringstream os;
  os << "N,value,replications,std_error\n";
  for (const auto& p : fit.points)
    os << p.n << ',' << num(p.value) << ',' << p.replications << ',' << num(p.std_error) << '\n';
  return os.str();
}

// ---------------------------------------------------------------- SVG

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct PlotSpec {
  PlotSpec() = default;
  PlotSpec(std::string t, std::string x, std::string y)
      : title(std::move(t)), xlabel(std::move(x)), ylabel(std::move(y)) {}

  std::string title;
  std::string xlabel;
  std::string ylabel;
  bool log_x = false;
  bool log_y = false;
  /// Optional fitted line y = exp(b) x^a on log-log axes.
  std::optional<std::pair<double, double>> fit;
  std::string annotation;
};

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

namespace detail {

inline std::string fixed(double v, int prec = 2) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

inline std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

}  // namespace detail

/// Static line plot: axes, ticks, one polyline per series, legend. Non-positive values are
/// skipped on log axes.
inline std::string line_plot_svg(const std::vector<Series>& series, const PlotSpec& spec) {
  const double W = 640, H = 400, ml = 70, mr = 20, mt = 40, mb = 50;
  auto tx = [&](double v) { return spec.log_x ? std::log10(v) : v; };
  auto ty = [&](double v) { return spec.log_y ? std::log10(v) : v; };
  auto usable = [&](double x, double y) {
    return std::isfinite(x) && std::isfinite(y) && (!spec.log_x || x > 0) && (!spec.log_y || y > 0);
  };
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series)
    for (std::size_t k = 0; k < s.x.size(); ++k)
      if (usable(s.x[k], s.y[k])) {
        x0 = std::min(x0, tx(s.x[k]));
        x1 = std::max(x1, tx(s.x[k]));
        y0 = std::min(y0, ty(s.y[k]));
        y1 = std::max(y1, ty(s.y[k]));
      }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 - x0 < 1e-12) x0 -= 0.5, x1 += 0.5;
  if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;
  const double pw = W - ml - mr, ph = H - mt - mb;
  auto px = [&](double v) { return ml + (v - x0) / (x1 - x0) * pw; };
  auto py = [&](double v) { return mt + ph - (v - y0) / (y1 - y0) * ph; };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W << ' '
     << H << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">"
     << xml_escape(spec.title) << "</text>\n"
     << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double xv = x0 + (x1 - x0) * t / 4.0, yv = y0 + (y1 - y0) * t / 4.0;
    const double xs = spec.log_x ? std::pow(10.0, xv) : xv, ys = spec.log_y ? std::pow(10.0, yv) : yv;
    os << "<line x1=\"" << detail::fixed(px(xv)) << "\" y1=\"" << mt + ph << "\" x2=\"" << detail::fixed(px(xv))
       << "\" y2=\"" << mt + ph + 5 << "\" stroke=\"black\"/>\n"
       << "<text x=\"" << detail::fixed(px(xv)) << "\" y=\"" << mt + ph + 18
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << detail::tick_label(xs)
       << "</text>\n"
       << "<line x1=\"" << ml - 5 << "\" y1=\"" << detail::fixed(py(yv)) << "\" x2=\"" << ml << "\" y2=\""
       << detail::fixed(py(yv)) << "\" stroke=\"black\"/>\n"
       << "<text x=\"" << ml - 8 << "\" y=\"" << detail::fixed(py(yv) + 4)
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << detail::tick_label(ys) << "</text>\n";
  }
  os << "<text x=\"" << ml + pw / 2 << "\" y=\"" << H - 10
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << xml_escape(spec.xlabel)
     << "</text>\n"
     << "<text x=\"16\" y=\"" << mt + ph / 2 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
     << "transform=\"rotate(-90 16 " << mt + ph / 2 << ")\">" << xml_escape(spec.ylabel) << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* col = colors[s % 6];
    os << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.5\" points=\"";
    bool first = true;
    for (std::size_t k = 0; k < series[s].x.size(); ++k) {
      if (!usable(series[s].x[k], series[s].y[k])) continue;
      os << (first ? "" : " ") << detail::fixed(px(tx(series[s].x[k]))) << ','
         << detail::fixed(py(ty(series[s].y[k])));
      first = false;
    }
    os << "\"/>\n";
    if (spec.log_x && spec.log_y)
      for (std::size_t k = 0; k < series[s].x.size(); ++k)
        if (usable(series[s].x[k], series[s].y[k]))
          os << "<circle cx=\"" << detail::fixed(px(tx(series[s].x[k]))) << "\" cy=\""
             << detail::fixed(py(ty(series[s].y[k]))) << "\" r=\"3\" fill=\"" << col << "\"/>\n";
    os << "<text x=\"" << ml + pw - 8 << "\" y=\"" << mt + 16 + 15 * double(s)
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\" fill=\"" << col << "\">"
       << xml_escape(series[s].label) << "</text>\n";
  }
  if (spec.fit && spec.log_x && spec.log_y) {
    const auto [a, b] = *spec.fit;
    const double ya = (a * x0 * std::log(10.0) + b) / std::log(10.0), yb = (a * x1 * std::log(10.0) + b) / std::log(10.0);
    os << "<line x1=\"" << detail::fixed(px(x0)) << "\" y1=\"" << detail::fixed(py(ya)) << "\" x2=\""
       << detail::fixed(px(x1)) << "\" y2=\"" << detail::fixed(py(yb))
       << "\" stroke=\"gray\" stroke-dasharray=\"5,4\"/>\n";
  }
  if (!spec.annotation.empty())
    os << "<text x=\"" << ml + 8 << "\" y=\"" << mt + ph - 10 << "\" font-family=\"sans-serif\" font-size=\"12\">"
       << xml_escape(spec.annotation) << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

// ---------------------------------------------------------------- reports

inline nlohmann::ordered_json to_json(const EquivalenceReport& r) {
  nlohmann::ordered_json j;
  auto numeric = [](double v) -> nlohmann::ordered_json {
    if (std::isfinite(v)) return v;
    return num(v);
  };
  j["case"] = r.case_name;
  j["all_passed"] = r.all_passed;
  j["monotone"] = r.monotone;
  j["uniqueness"] = r.uniqueness;
  j["equivalence"] = r.equivalence;
  j["primal_value"] = numeric(r.primal_value);
  j["dual_value"] = numeric(r.dual_value);
  j["duality_gap"] = numeric(r.gap);
  auto& checks = j["checks"] = nlohmann::ordered_json::array();
  for (const auto& c : r.checks) {
    nlohmann::ordered_json cj;
    cj["name"] = c.name;
    cj["status"] = c.status;
    cj["detail"] = c.detail;
    cj["value"] = numeric(c.value);
    cj["tolerance"] = numeric(c.tolerance);
    checks.push_back(cj);
  }
  return j;
}

inline std::string report_text(const EquivalenceReport& r) {
  std::ostringstream os;
  os << "case: " << r.case_name << '\n'
     << "primal value (social optimum): " << num(r.primal_value) << '\n'
     << "dual value at lambda*: " << num(r.dual_value) << '\n'
     << "duality gap: " << num(r.gap) << '\n'
     << "monotone coupling: " << (r.monotone ? "yes" : "no") << '\n'
     << "uniqueness probe: " << r.uniqueness << '\n'
     << "equivalence verdict: " << r.equivalence << '\n';
  for (const auto& c : r.checks) {
    os << "[" << c.status << "] " << c.name << ": " << c.detail;
    if (std::isfinite(c.tolerance)) os << " (tolerance " << mfg::detail::fmt(c.tolerance) << ")";
    os << '\n';
  }
  os << "overall: " << (r.all_passed ? "PASS" : "FAIL") << '\n';
  return os.str();
}

}  // namespace mfg::io
