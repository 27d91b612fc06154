#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "triprompt/common.hpp"

#ifndef TRIPROMPT_CLI_PATH
#error "TRIPROMPT_CLI_PATH must point at the built command-line binary"
#endif

using triprompt::read_file_bytes;
using triprompt::write_file_bytes;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out;  // stdout + stderr
};

// runs the CLI with the given arguments, capturing output and the exit code
RunResult run_cli(const std::string& args, const fs::path& scratch) {
  const fs::path log = scratch / "last_output.txt";
  const std::string cmd =
      std::string("\"") + TRIPROMPT_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file_bytes(log);
  return r;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::path(::testing::TempDir()) / ("triprompt_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// a deliberately tiny run so every CLI test stays fast
fs::path write_micro_config(const fs::path& dir) {
  const fs::path file = dir / "micro.json";
  write_file_bytes(file, R"({
  "data": {"num_images": 12, "num_test_images": 8, "num_classes": 4,
           "height": 2, "width": 2, "feature_dim": 8},
  "train": {"epochs": 2, "batch_size": 4, "lr0": 0.01},
  "eval": {"topk": [1]},
  "compare": {"seeds": [1]}
})");
  return file;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

}  // namespace

TEST(Cli, GenDataIsDeterministicAcrossInvocations) {
  const fs::path dir = scratch_dir("gen");
  const fs::path cfg = write_micro_config(dir);

  const RunResult a = run_cli("gen-data --config " + q(cfg) + " --out " + q(dir / "a"), dir);
  ASSERT_EQ(a.code, 0) << a.out;
  EXPECT_NE(a.out.find("train hash"), std::string::npos);

  const RunResult b = run_cli("gen-data --config " + q(cfg) + " --out " + q(dir / "b"), dir);
  ASSERT_EQ(b.code, 0) << b.out;

  for (const char* role : {"train", "test"})
    for (const char* f : {"manifest.json", "features.bin", "labels.csv"})
      EXPECT_EQ(read_file_bytes(dir / "a" / role / f), read_file_bytes(dir / "b" / role / f))
          << role << "/" << f;
}

TEST(Cli, TrainEvalPipelineProducesArtifacts) {
  const fs::path dir = scratch_dir("pipeline");
  const fs::path cfg = write_micro_config(dir);
  ASSERT_EQ(run_cli("gen-data --config " + q(cfg) + " --out " + q(dir / "data"), dir).code, 0);

  const RunResult tr = run_cli("train --config " + q(cfg) + " --data " + q(dir / "data") +
                                   " --out " + q(dir / "run"),
                               dir);
  ASSERT_EQ(tr.code, 0) << tr.out;
  EXPECT_TRUE(fs::exists(dir / "run" / "checkpoint.bin"));
  ASSERT_TRUE(fs::exists(dir / "run" / "train_log.csv"));
  EXPECT_EQ(read_file_bytes(dir / "run" / "train_log.csv").rfind("epoch,step,lr,loss\n", 0), 0u);

  const RunResult ev = run_cli("eval --checkpoint " + q(dir / "run" / "checkpoint.bin") +
                                   " --data " + q(dir / "data") + " --out " +
                                   q(dir / "metrics.json"),
                               dir);
  ASSERT_EQ(ev.code, 0) << ev.out;
  EXPECT_NE(ev.out.find("mAP"), std::string::npos);
  const nlohmann::json metrics = nlohmann::json::parse(read_file_bytes(dir / "metrics.json"));
  EXPECT_TRUE(metrics.contains("mAP"));
  EXPECT_EQ(metrics["metadata"]["split"], "all");
  EXPECT_EQ(metrics["metadata"]["num_images"], 8);
}

TEST(Cli, TrainResumeReproducesTheSingleShotCheckpoint) {
  const fs::path dir = scratch_dir("resume");
  const fs::path cfg = write_micro_config(dir);
  ASSERT_EQ(run_cli("gen-data --config " + q(cfg) + " --out " + q(dir / "data"), dir).code, 0);

  ASSERT_EQ(run_cli("train --config " + q(cfg) + " --data " + q(dir / "data") + " --out " +
                        q(dir / "full"),
                    dir)
                .code,
            0);
  ASSERT_EQ(run_cli("train --config " + q(cfg) + " --data " + q(dir / "data") + " --out " +
                        q(dir / "part") + " --epoch-limit 1",
                    dir)
                .code,
            0);
  ASSERT_EQ(run_cli("train --config " + q(cfg) + " --data " + q(dir / "data") + " --out " +
                        q(dir / "resumed") + " --resume " + q(dir / "part" / "checkpoint.bin"),
                    dir)
                .code,
            0);

  EXPECT_EQ(read_file_bytes(dir / "resumed" / "checkpoint.bin"),
            read_file_bytes(dir / "full" / "checkpoint.bin"));
}

TEST(Cli, EvalEnforcesProtocolSplitsAndConfigHashes) {
  const fs::path dir = scratch_dir("evalguard");
  const fs::path cfg = write_micro_config(dir);
  ASSERT_EQ(run_cli("gen-data --config " + q(cfg) + " --out " + q(dir / "data"), dir).code, 0);
  ASSERT_EQ(run_cli("train --config " + q(cfg) + " --data " + q(dir / "data") + " --out " +
                        q(dir / "run"),
                    dir)
                .code,
            0);
  const std::string eval_base = "eval --checkpoint " + q(dir / "run" / "checkpoint.bin") +
                                " --data " + q(dir / "data");

  // seen/unseen splits need the zero-shot protocol; this run is partial-label
  const RunResult seen = run_cli(eval_base + " --split seen", dir);
  EXPECT_EQ(seen.code, 1);
  EXPECT_NE(seen.out.find("zero-shot"), std::string::npos);

  const RunResult nonsense = run_cli(eval_base + " --split train", dir);
  EXPECT_EQ(nonsense.code, 1);

  // hash cross-check: same config passes, overridden config is rejected
  EXPECT_EQ(run_cli(eval_base + " --config " + q(cfg), dir).code, 0);
  const RunResult mismatch =
      run_cli(eval_base + " --config " + q(cfg) + " --set train.lr0=0.5", dir);
  EXPECT_EQ(mismatch.code, 1);
  EXPECT_NE(mismatch.out.find("hash"), std::string::npos);
}

TEST(Cli, GradcheckRunsTheReducedGrid) {
  const fs::path dir = scratch_dir("gradcheck");
  const RunResult r = run_cli("gradcheck --configs 2 --seed 417", dir);
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("gradcheck overall: PASS"), std::string::npos);
  EXPECT_NE(r.out.find("disentangle"), std::string::npos);
}

TEST(Cli, CompareWritesTheFullGridReport) {
  const fs::path dir = scratch_dir("compare");
  const fs::path cfg = write_micro_config(dir);
  ASSERT_EQ(run_cli("gen-data --config " + q(cfg) + " --out " + q(dir / "data"), dir).code, 0);

  const RunResult r = run_cli("compare --config " + q(cfg) + " --data " + q(dir / "data") +
                                  " --out " + q(dir / "compare.json"),
                              dir);
  // ordering checks may legitimately fail on a 12-image micro run; the grid
  // and report structure must be complete either way
  EXPECT_TRUE(r.code == 0 || r.code == 3) << r.out;
  const nlohmann::json rep = nlohmann::json::parse(read_file_bytes(dir / "compare.json"));
  EXPECT_EQ(rep["rows"].size(), 7u);
  EXPECT_EQ(rep["checks"].size(), 3u);
  EXPECT_DOUBLE_EQ(rep["tolerance"].get<double>(), 0.01);
  EXPECT_NE(r.out.find("contextless"), std::string::npos);
}

TEST(Cli, FailsCleanlyOnBadInputs) {
  const fs::path dir = scratch_dir("badinput");
  const fs::path cfg = write_micro_config(dir);

  // config with an unknown key
  const fs::path bad = dir / "bad.json";
  write_file_bytes(bad, R"({"data": {"bogus": 1}})");
  const RunResult r1 = run_cli("gen-data --config " + q(bad) + " --out " + q(dir / "x"), dir);
  EXPECT_EQ(r1.code, 1);
  EXPECT_NE(r1.out.find("error:"), std::string::npos);

  // dataset directory that was never generated
  const RunResult r2 = run_cli("train --config " + q(cfg) + " --data " + q(dir / "nowhere") +
                                   " --out " + q(dir / "run"),
                               dir);
  EXPECT_EQ(r2.code, 1);

  // checkpoint path that does not exist
  const RunResult r3 =
      run_cli("eval --checkpoint " + q(dir / "missing.bin") + " --data " + q(dir / "nowhere"),
              dir);
  EXPECT_EQ(r3.code, 1);

  // parse failures from the argument layer use a nonzero exit as well
  EXPECT_NE(run_cli("no-such-verb", dir).code, 0);
  EXPECT_NE(run_cli("train --config " + q(cfg), dir).code, 0);  // missing required flags
}
