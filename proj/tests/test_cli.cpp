#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "cli.hpp"
#include "json.hpp"
#include "otakf/bench_io.hpp"

using namespace otakf;
namespace fs = std::filesystem;

namespace {

struct CliResult {
    int code = -1;
    std::string out;
    std::string err;
};

CliResult run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "otakf");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out;
    std::ostringstream err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        unsetenv("OTAKF_SEED");
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir_ = fs::temp_directory_path() / ("otakf_cli_" + std::string(info->name()) + "_" +
                                            std::to_string(::getpid()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override {
        unsetenv("OTAKF_SEED");
        fs::remove_all(dir_);
    }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    fs::path dir_;
};

std::vector<std::string> lines_of(const std::string& file, bool skip_comments) {
    std::ifstream in(file);
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        if (skip_comments && !line.empty() && line[0] == '#') continue;
        out.push_back(line);
    }
    return out;
}

std::vector<double> split_doubles(const std::string& line) {
    std::vector<double> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell.empty() ? std::nan("") : std::stod(cell));
    return out;
}

Trajectory load(const std::string& file, const SsmSpec& spec) {
    std::ifstream in(file);
    return read_trajectory_csv(in, spec);
}

}  // namespace

TEST_F(CliTest, SimulateWritesOneFileWithHeaderAndRows) {
    const auto r = run_cli({"simulate", "--model", "lorenz", "--T", "100", "--inv-r2-db", "20",
                            "--nu-db", "0", "--seed", "7", "--out", dir_.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("T=100"), std::string::npos) << r.out;
    const auto all = lines_of(path("lorenz_seed7.csv"), false);
    ASSERT_FALSE(all.empty());
    EXPECT_EQ(all[0], "# otakf " + bench::tool_version());
    EXPECT_EQ(all[1].rfind("# config={", 0), 0u);
    const auto rows = lines_of(path("lorenz_seed7.csv"), true);
    EXPECT_EQ(rows[0], "t,x1,x2,x3,y1,y2,y3");
    EXPECT_EQ(rows.size(), 102u);  // header, x0 row, 100 steps
    EXPECT_EQ(std::distance(fs::directory_iterator(dir_), fs::directory_iterator{}), 1);
}

TEST_F(CliTest, RunsFlagWritesSuffixedSeeds) {
    const auto r = run_cli({"simulate", "--model", "linear1d", "--T", "10", "--seed", "3",
                            "--runs", "5", "--out", dir_.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    for (int s = 3; s < 8; ++s) {
        EXPECT_TRUE(fs::exists(path("linear1d_seed" + std::to_string(s) + ".csv"))) << s;
    }
}

TEST_F(CliTest, UsageErrorsExitWithTwo) {
    EXPECT_EQ(run_cli({"simulate", "--T", "10", "--out", dir_.string()}).code, 2);
    EXPECT_EQ(run_cli({"simulate", "--model", "pendulum"}).code, 2);
    EXPECT_EQ(run_cli({"simulate", "--model", "lorenz", "--bogus"}).code, 2);
    EXPECT_EQ(run_cli({"simulate", "--model", "lorenz", "--T", "1"}).code, 2);
    EXPECT_EQ(run_cli({"filter", "--model", "lorenz", "--lr", "-1", "x.csv"}).code, 2);
    EXPECT_EQ(run_cli({"filter", "--model", "lorenz"}).code, 2);
    EXPECT_EQ(run_cli({"bench", "--suite", "nope"}).code, 2);
    EXPECT_EQ(run_cli({"simulate", "--model", "lorenz", "--config", path("missing.cfg")}).code,
              2);
    EXPECT_EQ(run_cli({}).code, 2);
    EXPECT_EQ(run_cli({"--help"}).code, 0);
    const auto v = run_cli({"--version"});
    EXPECT_EQ(v.code, 0);
    EXPECT_NE(v.out.find(bench::tool_version()), std::string::npos);
}

TEST_F(CliTest, RuntimeFailuresExitWithOne) {
    const auto missing = run_cli({"filter", "--model", "lorenz", "--out", dir_.string(),
                                  path("absent.csv")});
    EXPECT_EQ(missing.code, 1);

    {
        std::ofstream f(path("bad.csv"));
        f << "t,x1,x2,x3,y1,y2,y3\n1,0,0,0,1,2,3\n2,0,0,zero,1,2,3\n";
    }
    const auto bad = run_cli({"filter", "--model", "lorenz", "--out", dir_.string(),
                              path("bad.csv")});
    EXPECT_EQ(bad.code, 1);
    EXPECT_NE(bad.err.find("line 3"), std::string::npos) << bad.err;
}

TEST_F(CliTest, SimulateThenFilterMatchesInMemoryPipeline) {
    ASSERT_EQ(run_cli({"simulate", "--model", "lorenz", "--T", "60", "--inv-r2-db", "20",
                       "--seed", "11", "--out", dir_.string()})
                  .code,
              0);
    cli::RunConfig cfg;
    cfg.inv_r2_db = 20.0;
    const SsmSpec spec = SsmSpec::lorenz();
    bench::DriftScenario sc = bench::default_scenario(spec);
    sc.true_cov = cli::flag_covariances(cfg, spec);
    sc.T = 60;
    sc.seed = 11;
    const Trajectory mem = bench::scenario_trajectory(sc, 0);
    const Trajectory disk = load(path("lorenz_seed11.csv"), spec);
    EXPECT_EQ(trajectory_hash(mem), trajectory_hash(disk));

    for (const std::string method : {"fixed", "otak"}) {
        const auto r = run_cli({"filter", "--model", "lorenz", "--method", method, "--oracle",
                                "--seed", "11", "--out", dir_.string(),
                                path("lorenz_seed11.csv")});
        ASSERT_EQ(r.code, 0) << r.err;
        EXPECT_NE(r.out.find("MSE"), std::string::npos);

        const NoiseParams theta = NoiseParams::from_covariances(mem.true_cov);
        std::vector<StateEstimate> expected;
        if (method == "fixed") {
            expected = run_filter(mem, theta, initial_estimate(mem));
        } else {
            AdaptConfig acfg;
            acfg.seed = 11;
            expected = run_otak_filter(mem, theta, acfg, initial_estimate(mem)).estimates;
        }
        const auto rows = lines_of(path("lorenz_seed11_estimates.csv"), true);
        ASSERT_EQ(rows[0], "t,xhat1,xhat2,xhat3,mse");
        ASSERT_EQ(rows.size(), 61u);
        for (int t = 0; t < 60; ++t) {
            const auto v = split_doubles(rows[t + 1]);
            ASSERT_EQ(v.size(), 5u);
            EXPECT_EQ(v[0], t + 1);
            for (int i = 0; i < 3; ++i) ASSERT_EQ(v[i + 1], expected[t].mean(i)) << method << t;
        }
        const auto all = lines_of(path("lorenz_seed11_estimates.csv"), false);
        bool from_file = false;
        for (const auto& l : all) from_file |= l == "# covariance_source=file metadata";
        EXPECT_TRUE(from_file);
    }
}

TEST_F(CliTest, OtakWithZeroRateEqualsFixedAndWritesDiagnostics) {
    ASSERT_EQ(run_cli({"simulate", "--model", "lorenz", "--T", "40", "--inv-r2-db", "20",
                       "--seed", "2", "--out", dir_.string()})
                  .code,
              0);
    const std::string input = path("lorenz_seed2.csv");
    const fs::path fixed_dir = dir_ / "fixed";
    const fs::path otak_dir = dir_ / "otak";
    const fs::path adapt_dir = dir_ / "adapt";
    ASSERT_EQ(run_cli({"filter", "--model", "lorenz", "--method", "fixed", "--out",
                       fixed_dir.string(), input})
                  .code,
              0);
    ASSERT_EQ(run_cli({"filter", "--model", "lorenz", "--method", "otak", "--lr", "0", "--out",
                       otak_dir.string(), input})
                  .code,
              0);
    EXPECT_EQ(lines_of((fixed_dir / "lorenz_seed2_estimates.csv").string(), true),
              lines_of((otak_dir / "lorenz_seed2_estimates.csv").string(), true));

    ASSERT_EQ(run_cli({"filter", "--model", "lorenz", "--method", "otak", "--W", "20", "--lr",
                       "1.8e-3", "--out", adapt_dir.string(), input})
                  .code,
              0);
    const auto diag = lines_of((adapt_dir / "lorenz_seed2_diagnostics.csv").string(), true);
    ASSERT_EQ(diag.size(), 41u);
    EXPECT_EQ(diag[0], "t,lr,skipped,clamped,loss1,loss2,loss3,q2_1,q2_2,q2_3,r2_1,r2_2,r2_3");
    const auto row = split_doubles(diag[20]);
    EXPECT_DOUBLE_EQ(row[1], warmup_lr(20, 20, 1.8e-3));
}

TEST_F(CliTest, ConfigFileSitsBetweenFlagsAndDefaults) {
    {
        std::ofstream f(path("run.cfg"));
        f << "model=linear1d\nT=30\nseed=4\n";
    }
    auto r = run_cli({"simulate", "--config", path("run.cfg"), "--out", dir_.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(lines_of(path("linear1d_seed4.csv"), true).size(), 32u);
    r = run_cli({"simulate", "--config", path("run.cfg"), "--T", "12", "--out", dir_.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(lines_of(path("linear1d_seed4.csv"), true).size(), 14u);
    const auto header = lines_of(path("linear1d_seed4.csv"), false)[1];
    const auto cfg = nlohmann::json::parse(header.substr(std::string("# config=").size()));
    EXPECT_EQ(cfg["T"], 12);
    EXPECT_EQ(cfg["config_file"], path("run.cfg"));
}

TEST_F(CliTest, SeedEnvironmentOverridesDefaultOnly) {
    setenv("OTAKF_SEED", "9", 1);
    ASSERT_EQ(run_cli({"simulate", "--model", "linear1d", "--T", "5", "--out", dir_.string()}).code,
              0);
    EXPECT_TRUE(fs::exists(path("linear1d_seed9.csv")));
    ASSERT_EQ(run_cli({"simulate", "--model", "linear1d", "--T", "5", "--seed", "3", "--out",
                       dir_.string()})
                  .code,
              0);
    EXPECT_TRUE(fs::exists(path("linear1d_seed3.csv")));
}

TEST_F(CliTest, BenchSuitesEmitResultFiles) {
    auto r = run_cli({"bench", "--suite", "lorenz-drift", "--runs", "2", "--T", "12", "--out",
                      dir_.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    std::ifstream jf(path("lorenz-drift.json"));
    const auto doc = nlohmann::json::parse(jf);
    EXPECT_EQ(doc["version"], bench::tool_version());
    ASSERT_EQ(doc["scenarios"].size(), 5u);
    for (const auto& sc : doc["scenarios"]) EXPECT_EQ(sc["methods"].size(), 3u);
    EXPECT_EQ(doc["run_config"]["runs"], 2);
    EXPECT_EQ(lines_of(path("lorenz-drift_runs.csv"), true)[0], "method,level_db,run,mse_db");
    EXPECT_EQ(lines_of(path("lorenz-drift_runs.csv"), true).size(), 1u + 5 * 3 * 2);
    EXPECT_EQ(lines_of(path("lorenz-drift_curves.csv"), true).size(), 1u + 5 * 3 * 12);

    r = run_cli({"bench", "--suite", "ablation", "--runs", "2", "--T", "12", "--out",
                 dir_.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("otak_no_warmup"), std::string::npos);
    EXPECT_NE(r.out.find("otak_pointwise"), std::string::npos);
    std::ifstream af(path("ablation.json"));
    const auto abl = nlohmann::json::parse(af);
    EXPECT_TRUE(abl["scenarios"][0]["ablation_config_diff"].contains("otak_pointwise"));

    r = run_cli({"bench", "--suite", "nclt-synthetic", "--runs", "2", "--T", "12", "--out",
                 dir_.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    std::ifstream nf(path("nclt-synthetic.json"));
    const auto nclt = nlohmann::json::parse(nf);
    const auto& q = nclt["scenarios"][0]["scenario"]["nominal"]["Q_diag"];
    EXPECT_EQ(q, nlohmann::json({1.0, 1.0, 0.001, 0.001, 0.001}));
    EXPECT_EQ(nclt["scenarios"][0]["scenario"]["spec"]["model"], "nclt");
}
