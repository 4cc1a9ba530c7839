#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

// stdout only; stderr goes to the test log
Run run(const std::string& args) {
  const std::string cmd = std::string(SAMA_CLI_PATH) + " " + args;
  Run r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("sama_cli_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // 4 tiny sequences and a 1-epoch run of a small model
  void train_tiny() {
    ASSERT_EQ(run("gen-data --out " + path("d.jsonl") + " --sequences 4 --frames 12 --seed 3").code, 0);
    const auto r = run("train --data " + path("d.jsonl") + " --out-dir " + path("run") +
                       " --epochs 1 --depth 1 --dim 8 --state-dim 4 --clip-len 4 --batch-size 2");
    ASSERT_EQ(r.code, 0) << r.out;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("no-such-command").code, 2);
  EXPECT_EQ(run("train").code, 2);  // --data is required
  EXPECT_EQ(run("gen-data --out " + path("x.jsonl") + " --sequences many").code, 2);
  EXPECT_EQ(run("bench --forms rec,fft").code, 2);
  EXPECT_EQ(run("--help").code, 0);
}

TEST_F(Cli, RuntimeErrorsExitOne) {
  std::ofstream(path("bad.jsonl")) << "{not json\n";
  std::ofstream(path("fake.ckpt")) << "garbage";
  EXPECT_EQ(run("eval --checkpoint " + path("fake.ckpt") + " --data " + path("bad.jsonl")).code, 1);
  ASSERT_EQ(run("gen-data --out " + path("d.jsonl") + " --sequences 2 --frames 8").code, 0);
  EXPECT_EQ(run("train --data " + path("d.jsonl") + " --out-dir " + path("r") + " --set heads=5").code, 1);
  EXPECT_EQ(run("train --data " + path("d.jsonl") + " --out-dir " + path("r") + " --set bogus=1").code, 1);
  EXPECT_EQ(run("train --data " + path("d.jsonl") + " --out-dir " + path("r") + " --skeleton chain4").code, 1);
}

TEST_F(Cli, VerifyPasses) {
  const auto r = run("verify");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find(", 0 failed"), std::string::npos);
}

TEST_F(Cli, InjectedFaultIsDetected) {
  const auto r = run("verify --inject-fault");
  EXPECT_EQ(r.code, 1);
  std::istringstream is(r.out);
  std::string line;
  int rows = 0;
  bool quad_failed = false;
  while (std::getline(is, line)) {
    if (line.find("PASS") != std::string::npos || line.find("FAIL") != std::string::npos) ++rows;
    if (line.rfind("dual_form.quadratic", 0) == 0) quad_failed = line.find("FAIL") != std::string::npos;
  }
  EXPECT_TRUE(quad_failed) << r.out;
  EXPECT_GE(rows, 12);
}

TEST_F(Cli, TrainWritesArtifactsAndEvalReproducesThem) {
  train_tiny();
  for (const char* f : {"config.json", "train_log.csv", "model.ckpt", "summary.json"}) EXPECT_TRUE(fs::exists(dir_ / "run" / f)) << f;

  std::istringstream log(read_file(dir_ / "run" / "train_log.csv"));
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(log, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0].rfind("# config {", 0), 0u);
  EXPECT_EQ(lines[1], "epoch,train_loss,eval_mpjpe");
  EXPECT_EQ(lines[2].rfind("1,", 0), 0u);

  const auto summary = json::parse(read_file(dir_ / "run" / "summary.json"));
  const std::string eval_cmd = "eval --checkpoint " + path("run/model.ckpt") + " --data " + path("d.jsonl");
  const auto e1 = run(eval_cmd), e2 = run(eval_cmd);
  ASSERT_EQ(e1.code, 0);
  EXPECT_EQ(e1.out, e2.out);
  const auto metrics = json::parse(e1.out);
  for (const char* k : {"mpjpe", "p_mpjpe", "n_mpjpe", "mpjve", "pck", "auc"}) EXPECT_EQ(metrics[k], summary["heldout"][k]) << k;
  EXPECT_EQ(metrics["config"], summary["config"]);
}

TEST_F(Cli, OracleModeIsPerfect) {
  train_tiny();
  const auto r = run("eval --oracle --split all --checkpoint " + path("run/model.ckpt") + " --data " + path("d.jsonl"));
  ASSERT_EQ(r.code, 0);
  const auto m = json::parse(r.out);
  EXPECT_EQ(m["mpjpe"].get<double>(), 0.0);
  EXPECT_EQ(m["mpjve"].get<double>(), 0.0);
  EXPECT_EQ(m["n_mpjpe"].get<double>(), 0.0);
  EXPECT_LT(m["p_mpjpe"].get<double>(), 1e-9);
  EXPECT_EQ(m["pck"].get<double>(), 100.0);
  EXPECT_EQ(m["auc"].get<double>(), 100.0);
}

TEST_F(Cli, FlippedMagicIsReported) {
  train_tiny();
  {
    std::fstream f(path("run/model.ckpt"), std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(1);
    f.put('Z');
  }
  const std::string cmd = std::string(SAMA_CLI_PATH) + " eval --checkpoint " + path("run/model.ckpt") + " --data " +
                          path("d.jsonl") + " 2>&1";
  FILE* p = ::popen(cmd.c_str(), "r");
  ASSERT_NE(p, nullptr);
  std::string out;
  std::array<char, 512> buf{};
  std::size_t n = 0;
  while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) out.append(buf.data(), n);
  EXPECT_EQ(WEXITSTATUS(::pclose(p)), 1);
  EXPECT_NE(out.find("bad checkpoint magic"), std::string::npos) << out;
}

TEST_F(Cli, PeriodicCheckpointsAndDumps) {
  ASSERT_EQ(run("gen-data --out " + path("d.jsonl") + " --sequences 4 --frames 8").code, 0);
  ASSERT_EQ(run("train --data " + path("d.jsonl") + " --out-dir " + path("run") +
                " --epochs 2 --checkpoint-every 1 --depth 1 --dim 8 --state-dim 4 --clip-len 4")
                .code,
            0);
  EXPECT_TRUE(fs::exists(dir_ / "run" / "model_epoch1.ckpt"));
  EXPECT_TRUE(fs::exists(dir_ / "run" / "model_epoch2.ckpt"));

  const auto adj = run("dump-adjacency --checkpoint " + path("run/model.ckpt") + " --out -");
  ASSERT_EQ(adj.code, 0);
  const auto a = json::parse(adj.out);
  ASSERT_EQ(a["layers"].size(), 1u);
  double row = 0.0;
  for (double v : a["layers"][0][0]) row += v;
  EXPECT_NEAR(row, 1.0, 1e-12);

  const auto dd = run("dump-delta --split all --checkpoint " + path("run/model.ckpt") + " --data " + path("d.jsonl") + " --out -");
  ASSERT_EQ(dd.code, 0);
  const auto d = json::parse(dd.out);
  EXPECT_EQ(d["mean_delta"].size(), 17u);
  EXPECT_EQ(d["mean_motion_2d"].size(), 17u);
}

TEST_F(Cli, ConfigFileAndOverrides) {
  ASSERT_EQ(run("gen-data --out " + path("d.jsonl") + " --sequences 4 --frames 8").code, 0);
  std::ofstream(path("cfg.json")) << R"({"depth": 1, "dim": 8, "state_dim": 4, "epochs": 1, "clip_len": 4, "msm_variant": "linear"})";
  const auto r = run("train --config " + path("cfg.json") + " --data " + path("d.jsonl") + " --out-dir " + path("run") +
                     " --set lambda_m=5 --use-ssi false");
  ASSERT_EQ(r.code, 0);
  const auto cfg = json::parse(read_file(dir_ / "run" / "config.json"));
  EXPECT_EQ(cfg["msm_variant"], "linear");
  EXPECT_EQ(cfg["lambda_m"].get<double>(), 5.0);
  EXPECT_EQ(cfg["use_ssi"], false);
  EXPECT_EQ(cfg["dim"], 8);
}

TEST_F(Cli, BenchChunkSweep) {
  const auto r = run("bench --t 1024 --n 8 --d 16 --forms rec,quad,chunk --chunk 1,8,64 --reps 1");
  ASSERT_EQ(r.code, 0);
  std::istringstream is(r.out);
  std::string line;
  int chunk_rows = 0, total_rows = 0;
  bool header = false, macs = false;
  while (std::getline(is, line)) {
    if (line == "form,T,n,d,chunk,wall_ns_per_token,max_rel_dev") header = true;
    if (line.rfind("# macs_per_frame", 0) == 0) macs = true;
    if (line.empty() || line[0] == '#' || line.rfind("form,", 0) == 0) continue;
    ++total_rows;
    if (line.rfind("chunk,", 0) == 0) ++chunk_rows;
    const double dev = std::stod(line.substr(line.rfind(',') + 1));
    EXPECT_LT(dev, 1e-10) << line;
  }
  EXPECT_TRUE(header);
  EXPECT_TRUE(macs);
  EXPECT_EQ(chunk_rows, 3);
  EXPECT_EQ(total_rows, 5);
}

// measured, loose: doubling T at most ~4x the wall time of the recurrence
TEST_F(Cli, RecurrentScalesLinearly) {
  auto ns_per_token = [](const std::string& out) {
    std::istringstream is(out);
    std::string line;
    while (std::getline(is, line))
      if (line.rfind("rec,", 0) == 0) {
        std::vector<std::string> f;
        std::stringstream ls(line);
        std::string tok;
        while (std::getline(ls, tok, ',')) f.push_back(tok);
        return std::stod(f[5]);
      }
    return -1.0;
  };
  const double a = ns_per_token(run("bench --t 4096 --forms rec --reps 5").out);
  const double b = ns_per_token(run("bench --t 8192 --forms rec --reps 5").out);
  ASSERT_GT(a, 0.0);
  ASSERT_GT(b, 0.0);
  // per-token cost within 2x either way of constant
  EXPECT_LT(b, 2.0 * a);
  EXPECT_GT(b, 0.5 * a);
}
