#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("skt_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write_config(const json& j, const std::string& name = "config.json") {
    const fs::path p = dir_ / name;
    std::ofstream(p) << j.dump(2);
    return p;
  }

  int run(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + " " + SKT_CLI_PATH + " " + args + " > " + (dir_ / "stdout.txt").string() +
                            " 2> " + (dir_ / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string read(const fs::path& p) const {
    std::ifstream f(p);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
  }

  json read_json(const fs::path& p) const { return json::parse(read(p)); }

  std::vector<std::string> lines(const fs::path& p) const {
    std::vector<std::string> out;
    std::ifstream f(p);
    for (std::string line; std::getline(f, line);) out.push_back(line);
    return out;
  }

  static json small_spde() {
    return json::parse(R"({
      "schemaVersion": 1,
      "model": {"a": [[1.0, 1.0, 0.5], [1.0, 0.5, 1.0]]},
      "grid": {"length": 1.0, "cells": 32},
      "initial": [{"base": 1.0, "amplitude": 0.5, "center": 0.3, "width": 0.1},
                  {"base": 1.0, "amplitude": 0.5, "center": 0.7, "width": 0.1}],
      "solver": {"dt": 1e-5, "t_end": 1e-3, "population": 1000, "record_every": 50,
                 "entropy_tolerance": 0.05}
    })");
  }

  static json small_particles() {
    return json::parse(R"({
      "schemaVersion": 1,
      "model": {"a": [[0.5, 0.0]]},
      "grid": {"origin": -4.0, "length": 8.0, "cells": 64},
      "initial": [{"base": 0.0, "amplitude": 1.0, "center": 0.0, "width": 0.5}],
      "solver": {"epsilon": 1e-6, "dt": 1e-3},
      "particles": {"count": 100, "dt": 0.01, "t_end": 0.05, "replicas": 20, "eta": 0.2,
                    "initial": [{"mean": 0.0, "sd": 0.5}],
                    "test_functions": [{"center": 0.0, "radius": 1.0}],
                    "mean_field_records": 6}
    })");
  }

  fs::path dir_;
};

TEST_F(CliTest, UsageErrorsExitOne) {
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("simulate-spde"), 1);
  EXPECT_EQ(run("no-such-command -c x.json"), 1);
  EXPECT_EQ(run("simulate-spde -c " + (dir_ / "missing.json").string()), 1);
  json bad = small_spde();
  bad["solver"]["dtt"] = 1.0;
  EXPECT_EQ(run("simulate-spde -c " + write_config(bad).string() + " -o " + (dir_ / "o").string()), 1);
  EXPECT_NE(read(dir_ / "stderr.txt").find("$.solver.dtt: unknown key"), std::string::npos);
  EXPECT_EQ(run("--help"), 0);
}

TEST_F(CliTest, SimulateSpdeOutputs) {
  const fs::path out = dir_ / "spde";
  ASSERT_EQ(run("simulate-spde -c " + write_config(small_spde()).string() + " -o " + out.string() + " -s 17"), 0);
  const json s = read_json(out / "summary.json");
  EXPECT_EQ(s.at("schemaVersion"), 1);
  EXPECT_EQ(s.at("command"), "simulate-spde");
  EXPECT_EQ(s.at("seed"), 17);
  EXPECT_EQ(s.at("config").at("solver").at("seed"), 17);
  EXPECT_EQ(s.at("config").at("grid").at("cells"), 32);
  EXPECT_TRUE(s.at("positivity").get<bool>());
  EXPECT_LT(s.at("mass_drift_relative").get<double>(), 1e-12);
  EXPECT_EQ(s.at("steps"), 100);

  const auto traj = lines(out / "trajectory.csv");
  ASSERT_GT(traj.size(), 5u);
  EXPECT_EQ(traj[0], "# schemaVersion: 1");
  EXPECT_EQ(traj[1], "# command: simulate-spde");
  EXPECT_EQ(traj[2], "# seed: 17");
  EXPECT_EQ(json::parse(traj[3].substr(std::string("# config: ").size())), s.at("config"));
  EXPECT_EQ(traj[4], "t,mass_1,mass_2,H,D,D_lb,min_u,max_u,int_D,noise_work,correction_work,ito_correction");
  EXPECT_EQ(traj.size(), 5u + 101u);

  const auto snaps = lines(out / "snapshots.csv");
  EXPECT_EQ(snaps[4], "t,species,x,v,w,u");
  EXPECT_EQ(snaps.size(), 5u + 3u * 2u * 32u);  // t = 0, 50 dt, 100 dt
}

TEST_F(CliTest, SeedControlsStochasticRuns) {
  const fs::path cfg = write_config(small_spde());
  ASSERT_EQ(run("simulate-spde -c " + cfg.string() + " -o " + (dir_ / "a").string() + " -s 3"), 0);
  ASSERT_EQ(run("simulate-spde -c " + cfg.string() + " -o " + (dir_ / "b").string() + " -s 3"), 0);
  ASSERT_EQ(run("simulate-spde -c " + cfg.string() + " -o " + (dir_ / "c").string() + " -s 4"), 0);
  EXPECT_EQ(read(dir_ / "a" / "snapshots.csv"), read(dir_ / "b" / "snapshots.csv"));
  EXPECT_NE(read(dir_ / "a" / "snapshots.csv"), read(dir_ / "c" / "snapshots.csv"));
}

TEST_F(CliTest, OutputRootFromEnvironment) {
  const fs::path root = dir_ / "env_root";
  ASSERT_EQ(run("simulate-spde -c " + write_config(small_spde()).string(), "SKT_OUTPUT_ROOT=" + root.string()), 0);
  EXPECT_TRUE(fs::exists(root / "summary.json"));
  EXPECT_TRUE(fs::exists(root / "trajectory.csv"));
}

TEST_F(CliTest, VerifyEntropyPassAndFail) {
  json j = small_spde();
  ASSERT_EQ(run("verify-entropy -c " + write_config(j).string() + " -o " + (dir_ / "p").string()), 0);
  const json s = read_json(dir_ / "p" / "summary.json");
  EXPECT_EQ(s.at("check").at("name"), "entropy_balance");
  EXPECT_TRUE(s.at("check").at("passed").get<bool>());

  j["solver"]["entropy_tolerance"] = 1e-12;
  EXPECT_EQ(run("verify-entropy -c " + write_config(j).string() + " -o " + (dir_ / "f").string()), 2);
  EXPECT_FALSE(read_json(dir_ / "f" / "summary.json").at("check").at("passed").get<bool>());
}

TEST_F(CliTest, ComputeAbortExitsThree) {
  json j = small_spde();
  j["solver"]["blowup_threshold"] = 1.0;
  EXPECT_EQ(run("simulate-spde -c " + write_config(j).string() + " -o " + (dir_ / "x").string()), 3);
  EXPECT_NE(read(dir_ / "stderr.txt").find("compute aborted"), std::string::npos);
}

TEST_F(CliTest, CheckAssumptions) {
  json j = small_spde();
  ASSERT_EQ(run("check-assumptions -c " + write_config(j).string() + " -o " + (dir_ / "ok").string()), 0);
  const json s = read_json(dir_ / "ok" / "assumptions.json");
  EXPECT_EQ(s.at("schemaVersion"), 1);
  EXPECT_TRUE(s.at("detailed_balance").at("passed").get<bool>());
  EXPECT_TRUE(s.at("minimal_population").is_number());

  j["model"]["a"] = {{1.0, 1.0, 0.5, 0.2}, {1.0, 0.5, 1.0, 0.7}, {1.0, 0.1, 0.3, 1.0}};
  j["initial"].push_back(j["initial"][0]);
  EXPECT_EQ(run("check-assumptions -c " + write_config(j).string() + " -o " + (dir_ / "bad").string()), 2);
  EXPECT_FALSE(read_json(dir_ / "bad" / "assumptions.json").at("detailed_balance").at("passed").get<bool>());
}

TEST_F(CliTest, ParticleOutputs) {
  const fs::path out = dir_ / "particles";
  ASSERT_EQ(run("simulate-particles -c " + write_config(small_particles()).string() + " -o " + out.string()), 0);
  const json s = read_json(out / "covariance_summary.json");
  EXPECT_EQ(s.at("schemaVersion"), 1);
  EXPECT_EQ(s.at("command"), "simulate-particles");
  ASSERT_EQ(s.at("entries").size(), 1u);
  for (const char* key : {"estimate", "stderr", "analytic", "z"}) {
    EXPECT_TRUE(s.at("entries")[0].contains(key)) << key;
  }
  const auto m = lines(out / "martingale.csv");
  EXPECT_EQ(m[4], "replica,t,species,test_function,M");
  EXPECT_EQ(m.size(), 5u + 20u * 5u);  // every replica, every step
}

}  // namespace
