#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "rws/rws.hpp"

namespace {

namespace fs = std::filesystem;

struct RunResult {
  int exit_code;
  std::string out;
};

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("rws_cli_test_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  RunResult run(const std::string& args) const {
    const std::string out_file = path("cmd_out.txt");
    const std::string cmd =
        std::string(RWS_CLI_PATH) + " " + args + " > " + out_file + " 2>&1";
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(out_file);
    std::stringstream ss;
    ss << in.rdbuf();
    r.out = ss.str();
    return r;
  }

  static std::string slurp(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  fs::path dir_;
};

TEST_F(CliTest, SimulateWritesDeterministicBatches) {
  const auto r1 = run("simulate --model homo --n 100 --batch-size 25 --seed 7 --out-dir " +
                      path("a"));
  ASSERT_EQ(r1.exit_code, 0) << r1.out;
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(path("a"))) files.push_back(e.path().string());
  EXPECT_EQ(files.size(), 4u);

  const auto r2 = run("simulate --model homo --n 100 --batch-size 25 --seed 7 --out-dir " +
                      path("b"));
  ASSERT_EQ(r2.exit_code, 0);
  for (int j = 1; j <= 4; ++j) {
    const std::string name = "batch_000" + std::to_string(j) + ".csv";
    EXPECT_EQ(slurp(path("a/" + name)), slurp(path("b/" + name)));
    const rws::Batch b = rws::read_batch_csv(path("a/" + name));
    EXPECT_EQ(b.size(), 25u);
  }
}

TEST_F(CliTest, SimulateUsageErrors) {
  EXPECT_EQ(run("simulate --model homo --n 0 --batch-size 5 --seed 1 --out-dir " + path("x"))
                .exit_code,
            2);
  EXPECT_EQ(run("simulate --model nope --n 10 --batch-size 5 --seed 1 --out-dir " + path("x"))
                .exit_code,
            2);
}

TEST_F(CliTest, FitStreamMatchesPooledNwReference) {
  ASSERT_EQ(run("simulate --model homo --n 300 --batch-size 60 --seed 3 --out-dir " +
                path("batches"))
                .exit_code,
            0);
  const auto fit = run("fit-stream --estfun mean --bandwidth 0.4 --batch-dir " +
                       path("batches") + " --out " + path("est.csv"));
  ASSERT_EQ(fit.exit_code, 0) << fit.out;

  // reference: pooled N-W on the same grid
  rws::PooledDataset pooled;
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(path("batches"))) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) pooled.append(rws::read_batch_csv(f));
  const rws::Batch first = rws::read_batch_csv(files.front());
  const double lo = *std::min_element(first.xs.begin(), first.xs.end());
  const double hi = *std::max_element(first.xs.begin(), first.xs.end());
  const rws::EvaluationGrid grid = rws::EvaluationGrid::uniform(lo, hi, 401, 0.05);
  const auto ref = rws::nw_full(pooled, 0.4, rws::KernelSpec::gaussian(), grid);

  std::ifstream est(path("est.csv"));
  std::string line;
  std::getline(est, line);
  EXPECT_EQ(line, "x,estimate");
  std::size_t idx = 0, compared = 0;
  while (std::getline(est, line)) {
    const auto comma = line.find(',');
    ASSERT_NE(comma, std::string::npos);
    const double value = std::stod(line.substr(comma + 1));
    if (ref.is_defined(idx)) {
      EXPECT_NEAR(value, ref.values[idx], 1e-10 * (1.0 + std::abs(ref.values[idx])));
      ++compared;
    }
    ++idx;
  }
  EXPECT_EQ(idx, grid.size());
  EXPECT_GT(compared, 300u);
}

TEST_F(CliTest, FitStreamResumeIsByteIdentical) {
  ASSERT_EQ(run("simulate --model gamma --n 400 --batch-size 40 --seed 5 --out-dir " +
                path("g"))
                .exit_code,
            0);
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(path("g"))) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  ASSERT_EQ(files.size(), 10u);

  std::string all, first_half, second_half;
  for (std::size_t i = 0; i < files.size(); ++i) {
    all += " " + files[i];
    (i < 5 ? first_half : second_half) += " " + files[i];
  }

  const auto one_shot =
      run("fit-stream --estfun gamma-shape --bandwidth-constant 0.8 --out " +
          path("oneshot.csv") + all);
  ASSERT_EQ(one_shot.exit_code, 0) << one_shot.out;

  ASSERT_EQ(run("fit-stream --estfun gamma-shape --bandwidth-constant 0.8 --state-out " +
                path("mid.rws") + " --out " + path("half.csv") + first_half)
                .exit_code,
            0);
  const auto resumed = run("fit-stream --state-in " + path("mid.rws") + " --out " +
                           path("resumed.csv") + second_half);
  ASSERT_EQ(resumed.exit_code, 0) << resumed.out;

  EXPECT_EQ(slurp(path("oneshot.csv")), slurp(path("resumed.csv")));
}

TEST_F(CliTest, FitStreamTwoComponentEstimates) {
  ASSERT_EQ(run("simulate --model hetero --n 200 --batch-size 50 --seed 8 --out-dir " +
                path("mv"))
                .exit_code,
            0);
  ASSERT_EQ(run("fit-stream --estfun mean-variance --bandwidth 0.3 --batch-dir " + path("mv") +
                " --out " + path("mv.csv"))
                .exit_code,
            0);
  std::ifstream est(path("mv.csv"));
  std::string line;
  std::getline(est, line);
  EXPECT_EQ(line, "x,estimate,estimate2");
  int rows = 0;
  while (std::getline(est, line)) ++rows;
  EXPECT_EQ(rows, 401);
}

TEST_F(CliTest, FitStreamUsageErrors) {
  EXPECT_EQ(run("fit-stream --estfun mean --bandwidth 0.4").exit_code, 2);  // no batches
  ASSERT_EQ(run("simulate --model homo --n 40 --batch-size 40 --seed 2 --out-dir " + path("h"))
                .exit_code,
            0);
  // both bandwidth modes at once
  EXPECT_EQ(run("fit-stream --estfun mean --bandwidth 0.4 --bandwidth-constant 1.0 "
                "--batch-dir " +
                path("h"))
                .exit_code,
            2);
  // no estfun on a fresh stream
  EXPECT_EQ(run("fit-stream --bandwidth 0.4 --batch-dir " + path("h")).exit_code, 2);
  // inverted support bounds
  EXPECT_EQ(run("fit-stream --estfun mean --bandwidth 0.4 --support-lo 2 --support-hi -2 "
                "--batch-dir " +
                path("h"))
                .exit_code,
            2);
  // malformed evaluation-points file is a data error
  std::ofstream pts(path("pts.txt"));
  pts << "0.5\nnot-a-number\n";
  pts.close();
  EXPECT_EQ(run("fit-stream --estfun mean --bandwidth 0.4 --eval-points " + path("pts.txt") +
                " --batch-dir " + path("h"))
                .exit_code,
            1);
}

TEST_F(CliTest, FitStreamSnapshotConflictIsConfigError) {
  ASSERT_EQ(run("simulate --model homo --n 80 --batch-size 40 --seed 6 --out-dir " + path("s"))
                .exit_code,
            0);
  ASSERT_EQ(run("fit-stream --estfun mean --bandwidth 0.3 --state-out " + path("s.rws") +
                " --batch-dir " + path("s") + " --out " + path("s1.csv"))
                .exit_code,
            0);
  EXPECT_EQ(run("fit-stream --state-in " + path("s.rws") +
                " --estfun gamma-shape --batch-dir " + path("s"))
                .exit_code,
            2);
  EXPECT_EQ(run("fit-stream --state-in " + path("s.rws") + " --bandwidth 0.9 --batch-dir " +
                path("s"))
                .exit_code,
            2);
  EXPECT_EQ(run("fit-stream --state-in " + path("s.rws") + " --grid-points 51 --batch-dir " +
                path("s"))
                .exit_code,
            2);
}

TEST_F(CliTest, ThreadsDefaultFromEnvironment) {
  std::ofstream cfg(path("env.cfg"));
  cfg << "model = homo\ndesign = fixed-n-vary-batch\nn_values = 300\nbatch_values = 60\n"
         "estimators = rws-hk\nreplications = 2\nseed = 12\ngrid_points = 51\n";
  cfg.close();
  const std::string out_file = path("cmd_out.txt");
  const std::string cmd = "RWS_THREADS=3 " + std::string(RWS_CLI_PATH) +
                          " run-experiment --config " + path("env.cfg") + " > " + out_file +
                          " 2>&1";
  ASSERT_EQ(WEXITSTATUS(std::system(cmd.c_str())), 0);
  EXPECT_NE(slurp(out_file).find("threads=3"), std::string::npos);
}

std::string small_config_text() {
  return "model = homo\n"
         "design = fixed-n-vary-batch\n"
         "n_values = 600\n"
         "batch_values = 60\n"
         "estimators = nwe-f, nwe-a, rws-hk\n"
         "replications = 2\n"
         "seed = 12\n"
         "grid_points = 101\n";
}

TEST_F(CliTest, RunExperimentEmitsResultsCsv) {
  std::ofstream cfg(path("exp.cfg"));
  cfg << small_config_text();
  cfg.close();
  const auto r = run("run-experiment --config " + path("exp.cfg") + " --out " +
                     path("results.csv"));
  ASSERT_EQ(r.exit_code, 0) << r.out;
  EXPECT_NE(r.out.find("estimator=nwe-f"), std::string::npos);

  std::ifstream in(path("results.csv"));
  const rws::MiseReport report = rws::read_results_csv(in);
  ASSERT_EQ(report.rows.size(), 3u);
  for (const auto& row : report.rows) EXPECT_GT(row.mise, 0.0);
}

TEST_F(CliTest, RunExperimentDeterministicAcrossThreads) {
  std::ofstream cfg(path("exp.cfg"));
  cfg << small_config_text();
  cfg.close();
  ASSERT_EQ(run("run-experiment --config " + path("exp.cfg") + " --threads 1 --out " +
                path("r1.csv"))
                .exit_code,
            0);
  ASSERT_EQ(run("run-experiment --config " + path("exp.cfg") + " --threads 4 --out " +
                path("r4.csv"))
                .exit_code,
            0);
  EXPECT_EQ(slurp(path("r1.csv")), slurp(path("r4.csv")));
}

TEST_F(CliTest, RunExperimentSingleReplicationRuns) {
  std::ofstream cfg(path("one.cfg"));
  cfg << small_config_text();
  cfg.close();
  const auto r = run("run-experiment --config " + path("one.cfg") +
                     " --replications 1 --out " + path("one.csv"));
  ASSERT_EQ(r.exit_code, 0) << r.out;
  std::ifstream in(path("one.csv"));
  const rws::MiseReport report = rws::read_results_csv(in);
  for (const auto& row : report.rows) EXPECT_EQ(row.replications, 1);
}

TEST_F(CliTest, RunExperimentConfigErrors) {
  std::ofstream bad(path("bad.cfg"));
  bad << "model = gamma\n"
         "design = fixed-n-vary-batch\n"
         "n_values = 600\n"
         "batch_values = 60\n"
         "estimators = csp-f\n"
         "replications = 2\n"
         "seed = 12\n";
  bad.close();
  const auto r = run("run-experiment --config " + path("bad.cfg"));
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.out.find("csp-f"), std::string::npos);

  std::ofstream unknown(path("unknown.cfg"));
  unknown << small_config_text() << "mystery_key = 3\n";
  unknown.close();
  const auto r2 = run("run-experiment --config " + path("unknown.cfg"));
  EXPECT_EQ(r2.exit_code, 2);
  EXPECT_NE(r2.out.find("mystery_key"), std::string::npos);
}

TEST_F(CliTest, RateCheckOnExactPowerLaw) {
  rws::MiseReport report;
  for (double n : {1e3, 1e4, 1e5}) {
    rws::MiseRow row;
    row.model = "homo";
    row.design = "fixed-batch-vary-n";
    row.n = static_cast<std::int64_t>(n);
    row.batch_size = 100;
    row.estimator = "nwe-f";
    row.component = 0;
    row.replications = 20;
    row.mise = std::pow(n, -0.8);
    row.coverage = 1.0;
    report.rows.push_back(row);
  }
  std::ofstream out(path("rate.csv"));
  rws::write_results_csv(report, out);
  out.close();

  const auto r = run("rate-check --results " + path("rate.csv") + " --estimator nwe-f");
  ASSERT_EQ(r.exit_code, 0) << r.out;
  EXPECT_NE(r.out.find("slope=-0.8"), std::string::npos);

  rws::MiseReport short_report;
  short_report.rows = {report.rows[0]};
  std::ofstream out2(path("short.csv"));
  rws::write_results_csv(short_report, out2);
  out2.close();
  EXPECT_EQ(run("rate-check --results " + path("short.csv") + " --estimator nwe-f").exit_code,
            1);
}

TEST_F(CliTest, InspectStatePrintsSummary) {
  ASSERT_EQ(run("simulate --model homo --n 80 --batch-size 20 --seed 9 --out-dir " + path("i"))
                .exit_code,
            0);
  ASSERT_EQ(run("fit-stream --estfun mean --bandwidth-constant 1.2 --state-out " +
                path("i.rws") + " --batch-dir " + path("i") + " --out " + path("i.csv"))
                .exit_code,
            0);
  const auto r = run("inspect-state --state " + path("i.rws"));
  ASSERT_EQ(r.exit_code, 0) << r.out;
  EXPECT_NE(r.out.find("closed-form"), std::string::npos);
  EXPECT_NE(r.out.find("schedule c=1.2"), std::string::npos);
  EXPECT_NE(r.out.find("batches: 4"), std::string::npos);
  EXPECT_NE(r.out.find("observations: 80"), std::string::npos);
}

TEST_F(CliTest, CorruptSnapshotIsRuntimeError) {
  std::ofstream f(path("junk.rws"), std::ios::binary);
  f << "not a snapshot";
  f.close();
  EXPECT_EQ(run("inspect-state --state " + path("junk.rws")).exit_code, 1);
}

}  // namespace
