#include <sys/wait.h>

#include <cstdio>
#include <fstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "ccr/image_io.hpp"
#include "ccr/metrics.hpp"
#include "support.hpp"

using ccr::test::TempDir;
using nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run ccr_cli(const std::string& args) {
  const std::string cmd = std::string(CCR_BIN) + " " + args + " 2>/dev/null";
  Run r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string line_value(const std::string& out, const std::string& key) {
  const auto pos = out.find(key + " ");
  if (pos == std::string::npos) return "";
  const auto end = out.find('\n', pos);
  return out.substr(pos + key.size() + 1, end - pos - key.size() - 1);
}

// Small 32x32 model so the whole pipeline runs in seconds.
json small_config(const std::filesystem::path& dataset) {
  return {{"train",
           {{"model",
             {{"resolution", 32},
              {"latent_channels", 8},
              {"noise_dim", 4},
              {"encoder_widths", {4, 8}},
              {"mapper_hidden", 8},
              {"disc_widths", {4, 8}},
              {"identity_dim", 4}}},
            {"batch_size", 4},
            {"epochs_stage1", 1},
            {"epochs_stage2", 1},
            {"epochs_stage3", 1},
            {"classifier_epochs", 1},
            {"identity_epochs", 1},
            {"max_iters_per_epoch", 2},
            {"eval_every", 0},
            {"dataset", dataset.string()}}},
          {"eval", {{"max_images", 4}}}};
}

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(ccr_cli("").code, 2);
  EXPECT_EQ(ccr_cli("frobnicate").code, 2);
  EXPECT_EQ(ccr_cli("gen-data --count 0").code, 2);
  EXPECT_EQ(ccr_cli("gen-data --resolution 48").code, 2);
  EXPECT_EQ(ccr_cli("edit --checkpoint x").code, 2);
  EXPECT_EQ(ccr_cli("train --stage 5").code, 2);
  EXPECT_EQ(ccr_cli("serve --checkpoint x --port 70000").code, 2);
  EXPECT_EQ(ccr_cli("ablate --variant bogus").code, 2);
  EXPECT_EQ(ccr_cli("--help").code, 0);
}

TEST(Cli, RuntimeErrorsExitOne) {
  TempDir dir("cli_rt");
  EXPECT_EQ(ccr_cli("edit --checkpoint " + (dir / "none").string() + " --input a.png --path +bangs").code, 1);
  EXPECT_EQ(ccr_cli("metrics --a " + (dir / "a.png").string() + " --b " + (dir / "b.png").string()).code, 1);
  EXPECT_EQ(ccr_cli("reverse --trace " + (dir / "trace.json").string()).code, 1);
}

TEST(Cli, MetricsJsonMatchesLibrary) {
  TempDir dir("cli_met");
  const auto a = ccr::test::random_images(1, 32, 1)[0], b = ccr::test::random_images(1, 32, 2)[0];
  ccr::save_png(dir / "a.png", a);
  ccr::save_png(dir / "b.png", b);
  const auto r = ccr_cli("metrics --json --a " + (dir / "a.png").string() + " --b " + (dir / "b.png").string());
  ASSERT_EQ(r.code, 0);
  const auto j = json::parse(r.out);
  const auto want = ccr::ImageMetrics::compute(ccr::load_png(dir / "a.png"), ccr::load_png(dir / "b.png"));
  EXPECT_NEAR(j["metrics"]["mse"].get<double>(), want.mse, 1e-12);
  EXPECT_NEAR(j["metrics"]["ssim"].get<double>(), want.ssim, 1e-12);
  EXPECT_EQ(j["directions"]["psnr"], "higher");
}

TEST(Cli, GenDataIsDeterministic) {
  TempDir dir("cli_gen");
  const auto a = ccr_cli("gen-data --count 24 --seed 3 --resolution 32 --out " + (dir / "a").string());
  const auto b = ccr_cli("gen-data --count 24 --seed 3 --resolution 32 --out " + (dir / "b").string());
  ASSERT_EQ(a.code, 0);
  ASSERT_EQ(b.code, 0);
  EXPECT_EQ(line_value(a.out, "manifest_sha256").size(), 64u);
  EXPECT_EQ(line_value(a.out, "manifest_sha256"), line_value(b.out, "manifest_sha256"));
  EXPECT_TRUE(std::filesystem::exists(dir / "a" / "images" / "000000.png"));
}

TEST(Cli, TrainEditReverseEvalPipeline) {
  TempDir dir("cli_pipe");
  const auto data = dir / "data", ckpt = dir / "ckpt";
  ASSERT_EQ(ccr_cli("gen-data --count 40 --seed 1 --resolution 32 --out " + data.string()).code, 0);
  {
    std::ofstream(dir / "cfg.json") << small_config(data).dump();
  }
  const auto cfg = (dir / "cfg.json").string();
  auto r = ccr_cli("train --config " + cfg + " --checkpoint-dir " + ckpt.string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(line_value(r.out, "trained_stages"), "[1,2,3]");

  r = ccr_cli("edit --checkpoint " + ckpt.string() + " --input " + (data / "images" / "000001.png").string() +
              " --path +blond@seed:2,+glasses --out-dir " + (dir / "edit").string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(std::filesystem::exists(dir / "edit" / "stage_2.png"));
  EXPECT_EQ(ccr_cli("edit --checkpoint " + ckpt.string() + " --input " + (data / "images" / "000001.png").string() +
                    " --path +purple")
                .code,
            2);

  r = ccr_cli("reverse --trace " + (dir / "edit" / "trace.json").string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_FALSE(line_value(r.out, "mean_l1").empty());

  r = ccr_cli("eval --config " + cfg + " --checkpoint " + ckpt.string() + " --dataset " + data.string() +
              " --report " + (dir / "report.json").string());
  ASSERT_EQ(r.code, 0) << r.out;
  std::ifstream in(dir / "report.json");
  const auto report = json::parse(in);
  EXPECT_EQ(report["m"], 4);
  EXPECT_EQ(report["n"], 3);
  EXPECT_TRUE(report.contains("single_attribute_accuracy"));
}

TEST(Cli, DeterministicEnvironmentFlag) {
  const std::string cmd = "CCR_DETERMINISTIC=1 " + std::string(CCR_BIN) + " metrics --a x --b y 2>&1";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  ASSERT_NE(pipe, nullptr);
  std::string out;
  char buf[512];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) out.append(buf, n);
  ::pclose(pipe);
  EXPECT_NE(out.find("deterministic mode"), std::string::npos);
}
