#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include <topo/cli.hpp>

#include "oracles.hpp"

using namespace topo;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "topo");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Bundle with losses, 01 losses, weights and a risk history.
TrajectoryBundle loss_run(double lr, std::int64_t bs, std::uint64_t seed) {
  const std::size_t rows = 40, cols = 50;
  CounterRng rng(seed);
  TrajectoryBundle b;
  b.run_meta.learning_rate = lr;
  b.run_meta.batch_size = bs;
  b.run_meta.n_train = 500;
  b.run_meta.T = static_cast<std::int64_t>(rows) - 1;
  b.iteration_index.resize(rows);
  std::iota(b.iteration_index.begin(), b.iteration_index.end(), 0);
  LossTrajectory l;
  l.matrix = RealMatrix(rows, cols);
  BinaryLossTrajectory z;
  z.matrix = BinaryMatrix(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t k = 0; k < cols; ++k) {
      const double v = 0.5 * std::exp(-lr * static_cast<double>(i) * (1.0 + 0.01 * k)) + 0.05 * rng.uniform();
      l.matrix(i, k) = v;
      z.matrix(i, k) = v > 0.3;
    }
  }
  l.sample_ids.resize(cols);
  std::iota(l.sample_ids.begin(), l.sample_ids.end(), 0);
  l.subsample_fraction = 0.1;
  z.sample_ids = l.sample_ids;
  b.losses = l;
  b.losses01 = z;
  b.weights = WeightTrajectory{RealMatrix(rows, 3)};
  for (auto& v : b.weights->matrix.data) v = rng.normal();
  b.risk_history = {{0, 0.5, 0.55},
                    {20, 0.2, 0.3 + 0.1 * rng.uniform()},
                    {39, 0.1, 0.7 + lr + 1e-3 * static_cast<double>(bs) + 0.05 * rng.uniform()}};
  return b;
}

}  // namespace

TEST(Cli, ComputeWritesAlphaAndBothScales) {
  const auto dir = oracle::scratch("cli_compute");
  write_bundle(loss_run(0.05, 32, 1), dir / "run1");
  const auto out = (dir / "r.json").string();
  const auto r = run({"compute", "--bundle", (dir / "run1").string(), "--metric", "rho-p", "--p", "1", "--e-alpha",
                      "1.0", "--mag-scale", "sqrt-n", "--mag-scale", "0.01", "--pmag", "--out", out});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(slurp(out));
  EXPECT_TRUE(j["e_alpha"].contains("1.0"));
  EXPECT_TRUE(j["mag"].contains("sqrt-n"));
  EXPECT_TRUE(j["mag"].contains("0.01"));
  EXPECT_TRUE(j["pmag"].contains("sqrt-n"));
  EXPECT_TRUE(j["pmag"].contains("0.01"));
  EXPECT_NEAR(j["magnitude"][0]["scale"].get<double>(), std::sqrt(500.0), 1e-12);
  EXPECT_TRUE(j.contains("gap"));
  EXPECT_TRUE(j.contains("config"));
  EXPECT_TRUE(j.contains("generated_at"));
}

TEST(Cli, ComputeIsDeterministicWithoutTimestamp) {
  const auto dir = oracle::scratch("cli_det");
  write_bundle(loss_run(0.05, 32, 2), dir / "run");
  std::vector<std::string> args{"--no-timestamp", "compute", "--bundle", (dir / "run").string(), "--metric",
                                "zero-one", "--mag-scale", "sqrt-n", "--pmag"};
  const auto a = run(args);
  const auto b = run(args);
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(a.out.find("generated_at"), std::string::npos);
}

TEST(Cli, MissingBundleExitsOneWithDiagnostic) {
  const auto r = run({"compute", "--bundle", "/nonexistent/run"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("MissingFile"), std::string::npos);
  const auto j = run({"--errors-json", "compute", "--bundle", "/nonexistent/run"});
  EXPECT_EQ(j.code, 1);
  const auto err = nlohmann::json::parse(j.err);
  EXPECT_EQ(err["error_kind"], "MissingFile");
  EXPECT_EQ(err["exit_code"], 1);
}

TEST(Cli, BadArgumentsExitOne) {
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"compute"}).code, 1);
  EXPECT_EQ(run({"compute", "--bundle", "x", "--metric", "cosine"}).code, 1);
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST(Cli, ValidateReportsViolations) {
  const auto dir = oracle::scratch("cli_validate");
  write_bundle(loss_run(0.05, 32, 3), dir / "ok");
  const auto ok = run({"validate", "--bundle", (dir / "ok").string()});
  EXPECT_EQ(ok.code, 0);
  EXPECT_TRUE(nlohmann::json::parse(ok.out)["valid"].get<bool>());

  // raise loss_bound violation by shrinking the bound on disk
  std::ifstream in(dir / "ok" / "meta.json");
  auto meta = nlohmann::ordered_json::parse(in);
  in.close();
  meta["loss_bound"] = 0.01;
  std::ofstream(dir / "ok" / "meta.json", std::ios::trunc) << meta.dump();
  const auto bad = run({"validate", "--bundle", (dir / "ok").string()});
  EXPECT_EQ(bad.code, 1);
  const auto j = nlohmann::json::parse(bad.out);
  EXPECT_FALSE(j["valid"].get<bool>());
  EXPECT_EQ(j["violations"][0]["code"], "loss_range");
}

TEST(Cli, SynthThenValidateAndCompute) {
  const auto dir = oracle::scratch("cli_synth");
  const auto r = run({"synth", "--shape", "circle", "--n", "300", "--seed", "4", "--out", (dir / "c").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(run({"validate", "--bundle", (dir / "c").string()}).code, 0);
  const auto c = run({"--no-timestamp", "compute", "--bundle", (dir / "c").string(), "--metric", "euclid",
                      "--ph-dim", "--ph-min-size", "100", "--mag-scale", "1"});
  ASSERT_EQ(c.code, 0) << c.err;
  const auto j = nlohmann::json::parse(c.out);
  EXPECT_NEAR(j["ph_dim"]["dim"].get<double>(), 1.0, 0.25);
  EXPECT_EQ(j["ph_dim"]["protocol"]["min_size"], 100);
}

TEST(Cli, ComputeOnWrongMetricIsInvalid) {
  const auto dir = oracle::scratch("cli_wrongmetric");
  run({"synth", "--shape", "cube", "--n", "20", "--out", (dir / "c").string()});
  const auto r = run({"--errors-json", "compute", "--bundle", (dir / "c").string(), "--metric", "rho-p"});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(nlohmann::json::parse(r.err)["error_kind"], "InvalidArgument");
}

TEST(Cli, GridAndKendall) {
  const auto dir = oracle::scratch("cli_grid");
  int k = 0;
  for (double lr : {0.01, 0.05, 0.1}) {
    for (std::int64_t bs : {16, 64, 256}) {
      write_bundle(loss_run(lr, bs, static_cast<std::uint64_t>(k)), dir / "runs" / ("run" + std::to_string(k)));
      ++k;
    }
  }
  std::ofstream(dir / "spec.json") << R"({"metrics": [{"kind": "rho-p", "p": 1}, "zero-one", "euclid"],
                                          "scales": ["sqrt-n", 0.01], "seed": 3})";
  const auto g = run({"--no-timestamp", "grid", "--root", (dir / "runs").string(), "--spec",
                      (dir / "spec.json").string(), "--jobs", "2", "--out", (dir / "out").string()});
  ASSERT_EQ(g.code, 0) << g.err;
  const auto report = nlohmann::json::parse(slurp(dir / "out" / "grid_report.json"));
  EXPECT_EQ(report["runs"].size(), 9u);
  EXPECT_EQ(report["failures"].size(), 0u);
  for (const auto& [id, c] : report["coefficients"].items()) {
    for (const char* key : {"psi_lr", "psi_bs", "Psi", "tau"}) {
      if (!c[key].is_null()) {
        EXPECT_GE(c[key].get<double>(), -1.0) << id;
        EXPECT_LE(c[key].get<double>(), 1.0) << id;
      }
    }
  }
  EXPECT_TRUE(std::filesystem::exists(dir / "out" / "scatter" / "PMag_sqrt-n_zero_one.csv"));

  const auto kd = run({"--no-timestamp", "kendall", "--grid", (dir / "out" / "grid_report.json").string()});
  ASSERT_EQ(kd.code, 0) << kd.err;
  const auto kj = nlohmann::json::parse(kd.out);
  for (const auto& [id, c] : report["coefficients"].items()) {
    ASSERT_TRUE(kj["coefficients"].contains(id)) << id;
    EXPECT_EQ(kj["coefficients"][id]["Psi"], c["Psi"]) << id;
  }

  // rerunning the grid gives byte-identical output
  const auto g2 = run({"--no-timestamp", "grid", "--root", (dir / "runs").string(), "--spec",
                       (dir / "spec.json").string(), "--jobs", "1", "--out", (dir / "out2").string()});
  ASSERT_EQ(g2.code, 0);
  EXPECT_EQ(slurp(dir / "out" / "grid_report.json"), slurp(dir / "out2" / "grid_report.json"));
  EXPECT_EQ(slurp(dir / "out" / "grid_report.csv"), slurp(dir / "out2" / "grid_report.csv"));
}

TEST(Cli, ExitCodeMapping) {
  EXPECT_EQ(cli::exit_code_for(ErrorKind::MissingFile), 1);
  EXPECT_EQ(cli::exit_code_for(ErrorKind::InvalidBundle), 1);
  EXPECT_EQ(cli::exit_code_for(ErrorKind::SolverDiverged), 2);
  EXPECT_EQ(cli::exit_code_for(ErrorKind::NoValidSlice), 2);
}

TEST(Cli, BinaryRunsFromShell) {
  const auto dir = oracle::scratch("cli_binary");
  const std::string cmd = std::string(TOPO_CLI_PATH) + " synth --shape cube --dim 2 --n 50 --out " +
                          (dir / "c").string() + " > /dev/null && " + TOPO_CLI_PATH + " validate --bundle " +
                          (dir / "c").string() + " > /dev/null";
  EXPECT_EQ(std::system(cmd.c_str()), 0);
  const std::string missing = std::string(TOPO_CLI_PATH) + " compute --bundle /nonexistent 2> /dev/null";
  const int status = std::system(missing.c_str());
  EXPECT_EQ(WEXITSTATUS(status), 1);
}
