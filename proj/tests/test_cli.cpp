#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfg/cli.hpp"

namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code;
  std::string out, err;
};

CliRun cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = mfg::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "mfg_test_cli" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::size_t line_count(const fs::path& p) {
  const std::string s = slurp(p);
  return std::size_t(std::count(s.begin(), s.end(), '\n'));
}

std::string sample(const std::string& name) { return std::string(MFG_SAMPLES_DIR) + "/" + name; }

void expect_svg(const fs::path& p) {
  const std::string s = slurp(p);
  ASSERT_FALSE(s.empty()) << p;
  EXPECT_EQ(s.rfind("<?xml", 0), 0u) << p;
  EXPECT_NE(s.find("<svg"), std::string::npos) << p;
  EXPECT_NE(s.find("</svg>"), std::string::npos) << p;
  EXPECT_NE(s.find("<polyline"), std::string::npos) << p;
  EXPECT_EQ(s.find("nan"), std::string::npos) << p;
}

}  // namespace

TEST(Cli, UsageErrors) {
  EXPECT_EQ(cli({}).code, 1);
  EXPECT_EQ(cli({"--help"}).code, 0);
  EXPECT_EQ(cli({"solve", "--bogus"}).code, 1);
  EXPECT_EQ(cli({"solve", "--case", "nope", "--out-dir", scratch("u1").string()}).code, 1);
  EXPECT_EQ(cli({"solve", "--case", "ev", "--algorithm", "newton", "--out-dir", scratch("u2").string()}).code, 1);
  EXPECT_EQ(cli({"solve", "--case", "sine", "--kappa", "-1", "--out-dir", scratch("u3").string()}).code, 1);
  EXPECT_EQ(cli({"rates", "--study", "other", "--out-dir", scratch("u4").string()}).code, 1);
  EXPECT_EQ(cli({"solve", "--config", "/definitely/missing.ini"}).code, 1);
}

TEST(Cli, SolveWritesOutputs) {
  const fs::path d = scratch("solve");
  const auto r = cli({"solve", "--case", "ev", "--n", "20", "--seed", "7", "--out-dir", d.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"residuals.csv", "norms.csv", "equilibrium.csv", "controls.csv", "u_norm.svg", "z_norm.svg"})
    EXPECT_TRUE(fs::exists(d / f)) << f;
  const std::string res = slurp(d / "residuals.csv");
  EXPECT_EQ(res.rfind("iter,du_norm,dz_norm,dlambda_norm,mf_residual,primal_residual,dual_residual\n", 0), 0u);
  EXPECT_GE(line_count(d / "residuals.csv"), 2u);
  const std::string eq = slurp(d / "equilibrium.csv");
  for (const char* label : {"\nz_star,", "\nlambda_star,", "\nmean,", "\nx_0,"}) EXPECT_NE(eq.find(label), std::string::npos);
  EXPECT_EQ(line_count(d / "controls.csv"), 21u);
  expect_svg(d / "u_norm.svg");
  expect_svg(d / "z_norm.svg");
}

TEST(Cli, BudgetExhaustionExitsTwoAndKeepsHistory) {
  const fs::path d = scratch("budget");
  const auto r = cli({"solve", "--case", "ev", "--n", "20", "--algorithm", "mann", "--max-iters", "5", "--out-dir",
                      d.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(line_count(d / "residuals.csv"), 6u);
}

TEST(Cli, OutputsAreBitwiseDeterministic) {
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  const std::vector<std::string> base{"solve", "--case", "ev", "--n", "30", "--seed", "11", "--out-dir"};
  auto args_a = base, args_b = base;
  args_a.push_back(a.string());
  args_b.push_back(b.string());
  ASSERT_EQ(cli(args_a).code, 0);
  ASSERT_EQ(cli(args_b).code, 0);
  for (const auto& entry : fs::directory_iterator(a)) {
    const auto name = entry.path().filename();
    EXPECT_EQ(slurp(a / name), slurp(b / name)) << name;
  }
}

TEST(Cli, SeedChangesOutput) {
  const fs::path a = scratch("seed_a"), b = scratch("seed_b");
  ASSERT_EQ(cli({"solve", "--case", "ev", "--n", "10", "--seed", "1", "--out-dir", a.string()}).code, 0);
  ASSERT_EQ(cli({"solve", "--case", "ev", "--n", "10", "--seed", "2", "--out-dir", b.string()}).code, 0);
  EXPECT_NE(slurp(a / "controls.csv"), slurp(b / "controls.csv"));
}

TEST(Cli, CompareRunsThreeAlgorithms) {
  const fs::path d = scratch("compare");
  const auto r = cli({"compare", "--case", "ev", "--n", "20", "--out-dir", d.string()});
  ASSERT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_EQ(line_count(d / "compare_summary.csv"), 4u);
  const std::string s = slurp(d / "compare_summary.csv");
  for (const char* alg : {"mann,", "primal-dual,", "admm,"}) EXPECT_NE(s.find(alg), std::string::npos);
  expect_svg(d / "compare_mf_residual.svg");
  expect_svg(d / "compare_z_norm.svg");
}

TEST(Cli, CompareSkipsUnboundedPrimalDual) {
  const fs::path d = scratch("compare_pigou");
  const auto r = cli({"compare", "--case", "pigou", "--n", "3", "--out-dir", d.string()});
  EXPECT_NE(r.err.find("primal-dual not applicable"), std::string::npos);
  const std::string s = slurp(d / "compare_summary.csv");
  EXPECT_EQ(line_count(d / "compare_summary.csv"), 3u);
  EXPECT_EQ(s.find("primal-dual"), std::string::npos);
  EXPECT_NE(s.find("admm,"), std::string::npos);
}

TEST(Cli, VerifyWritesReport) {
  const fs::path d = scratch("verify");
  const auto r = cli({"verify", "--case", "sine", "--kappa", "1.5", "--out-dir", d.string()});
  ASSERT_EQ(r.code, 0) << r.out;
  const auto j = nlohmann::json::parse(slurp(d / "report.json"));
  EXPECT_TRUE(j.at("all_passed").get<bool>());
  EXPECT_FALSE(j.at("checks").empty());
  EXPECT_NE(slurp(d / "report.txt").find("PASS"), std::string::npos);
}

TEST(Cli, VerifyPrecomputedEquilibrium) {
  const fs::path solved = scratch("pre_solve"), good = scratch("pre_good"), bad = scratch("pre_bad");
  ASSERT_EQ(cli({"solve", "--case", "log", "--n", "5", "--out-dir", solved.string()}).code, 0);
  EXPECT_EQ(cli({"verify", "--case", "log", "--n", "5", "--equilibrium", (solved / "controls.csv").string(), "--out-dir",
                 good.string()})
                .code,
            0);
  std::ofstream(bad / "controls.csv") << "agent,values\n0,2\n1,2\n2,2\n3,2\n4,2\n";
  EXPECT_EQ(cli({"verify", "--case", "log", "--n", "5", "--equilibrium", (bad / "controls.csv").string(), "--out-dir",
                 bad.string()})
                .code,
            3);
  std::ofstream(bad / "short.csv") << "agent,values\n0,1\n";
  EXPECT_EQ(cli({"verify", "--case", "log", "--n", "5", "--equilibrium", (bad / "short.csv").string(), "--out-dir",
                 bad.string()})
                .code,
            3);
}

TEST(Cli, SampleConfigsSolve) {
  for (const char* f : {"ev_price_file.ini", "sine.ini", "braess.ini", "log.ini", "custom_quadratic.ini",
                        "custom_generated.ini"}) {
    const fs::path d = scratch(std::string("cfg_") + f);
    const auto r = cli({"solve", "--config", sample(f), "--out-dir", d.string()});
    EXPECT_EQ(r.code, 0) << f << ": " << r.err;
  }
}

TEST(Cli, ConfigErrors) {
  const fs::path d = scratch("cfg_err");
  std::ofstream(d / "unknown_key.ini") << "[case]\nname = ev\ncolour = blue\n";
  std::ofstream(d / "unknown_section.ini") << "[case]\nname = ev\n[extras]\nx = 1\n";
  std::ofstream(d / "bad_number.ini") << "[case]\nname = sine\n[sine]\nkappa = lots\n";
  for (const char* f : {"unknown_key.ini", "unknown_section.ini", "bad_number.ini"})
    EXPECT_EQ(cli({"solve", "--config", (d / f).string(), "--out-dir", d.string()}).code, 1) << f;
}

TEST(Cli, CommandLineOverridesConfig) {
  const fs::path d = scratch("override");
  const auto r = cli({"solve", "--config", sample("sine.ini"), "--max-iters", "1", "--out-dir", d.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(line_count(d / "residuals.csv"), 2u);
}

TEST(Cli, RatesStudy) {
  const fs::path d = scratch("rates");
  const auto r = cli({"rates", "--study", "lemma2", "--samples", "400", "--out-dir", d.string()});
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(slurp(d / "rates.csv").rfind("N,value,replications,std_error\n", 0), 0u);
  EXPECT_EQ(line_count(d / "rates.csv"), 5u);
  expect_svg(d / "rates.svg");
}

TEST(Cli, RatesRejectsTooFewPoints) {
  const fs::path d = scratch("rates_short");
  EXPECT_EQ(cli({"rates", "--study", "lemma2", "--n", "16", "--out-dir", d.string()}).code, 1);
}
