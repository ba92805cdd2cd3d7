#include "fsk/synth.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace fsk;

int run_cli(const std::string& args) {
  const std::string cmd = std::string(FSK_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  if (status == -1 || !WIFEXITED(status)) return -1;
  return WEXITSTATUS(status);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) out.push_back(line);
  return out;
}

std::string write_tiny_scene(const std::string& name) {
  synth::SceneSpec spec;
  spec.bounds_lo = Vec3(-15, -15, -2);
  spec.bounds_hi = Vec3(15, 15, 5);
  spec.n_background = 120;
  spec.rng_seed = 7;
  synth::ObjectSpec a;
  a.box = Box3D(Vec3(-6, 0, 1), Vec3(3, 2, 2), 0.2);
  a.points_per_object = 20;
  a.velocity = Vec3(0.6, 0, 0);
  spec.objects.push_back(a);
  synth::ObjectSpec b;
  b.box = Box3D(Vec3(5, -4, 0.5), Vec3(2, 2, 1.5), -0.5);
  b.points_per_object = 14;
  spec.objects.push_back(b);
  const std::string path = ::testing::TempDir() + name;
  synth::save_scene(spec, path);
  return path;
}

TEST(CliBenchPool, TinyGridWritesCsvAndExitsZero) {
  const std::string out = ::testing::TempDir() + "bench_tiny.csv";
  const int code = run_cli(
      "bench-pool --dims 4 --regimes 2-6 --imbalanced off --reps 1 --warmups 0 --groups 5 --out " +
      out);
  ASSERT_EQ(code, 0);
  const auto rows = lines_of(read_file(out));
  std::remove(out.c_str());
  ASSERT_EQ(rows.size(), 3u);  // header + naive + optimized
  EXPECT_EQ(rows[0], "dim,regime_lo,regime_hi,balanced,backend,threads,median_ms,speedup");
  EXPECT_EQ(rows[1].rfind("4,2,6,1,naive,", 0), 0u);
  EXPECT_EQ(rows[2].rfind("4,2,6,1,optimized,", 0), 0u);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    EXPECT_EQ(std::count(rows[r].begin(), rows[r].end(), ','), 7) << rows[r];
  }
}

TEST(CliBenchPool, BrokenEquivalenceTripsGate) {
  const int code = run_cli(
      "bench-pool --dims 4 --regimes 2-6 --imbalanced off --reps 1 --warmups 0 --groups 5 "
      "--debug-break-equivalence");
  EXPECT_EQ(code, 1);
}

TEST(CliBenchPool, UnknownFlagIsUsageError) {
  EXPECT_EQ(run_cli("bench-pool --no-such-flag"), 2);
}

TEST(Cli, MissingSubcommandIsUsageError) { EXPECT_EQ(run_cli(""), 2); }

TEST(Cli, SelftestPasses) { EXPECT_EQ(run_cli("selftest"), 0); }

TEST(CliPipeline, MissingSceneIsUsageError) {
  EXPECT_EQ(run_cli("pipeline --scene " + ::testing::TempDir() + "no_such_scene.json"), 2);
}

TEST(CliPipeline, BadModeIsUsageError) {
  const std::string scene = write_tiny_scene("cli_scene_badmode.json");
  EXPECT_EQ(run_cli("pipeline --scene " + scene + " --mode warp --frames 1"), 2);
  std::remove(scene.c_str());
}

TEST(CliPipeline, TemporalWithEveryFrameKeyframeMatchesFullFrameRun) {
  const std::string scene = write_tiny_scene("cli_scene_match.json");
  const std::string dir_a = ::testing::TempDir() + "cli_out_fsd";
  const std::string dir_b = ::testing::TempDir() + "cli_out_fsdpp";
  ASSERT_EQ(run_cli("pipeline --scene " + scene + " --mode fsd --frames 5 --out " + dir_a), 0);
  ASSERT_EQ(run_cli("pipeline --scene " + scene +
                    " --mode fsdpp --keyframe-gap 1 --frames 5 --out " + dir_b),
            0);
  const std::string pred_a = read_file(dir_a + "/predictions.jsonl");
  const std::string pred_b = read_file(dir_b + "/predictions.jsonl");
  EXPECT_FALSE(pred_a.empty());
  EXPECT_EQ(pred_a, pred_b);  // byte-identical

  const auto stats = lines_of(read_file(dir_b + "/stats.csv"));
  ASSERT_EQ(stats.size(), 6u);
  EXPECT_EQ(stats[0], "frame,n_total,n_residual,n_skeleton,residual_ratio,n_predictions,latency_ms");
  std::remove(scene.c_str());
}

TEST(CliPipeline, TemporalModeDiffersFromFullFrameWithoutKeyframes) {
  const std::string scene = write_tiny_scene("cli_scene_sparse.json");
  const std::string dir = ::testing::TempDir() + "cli_out_sparse";
  ASSERT_EQ(run_cli("pipeline --scene " + scene + " --mode fsdpp --frames 5 --out " + dir), 0);
  const auto stats = lines_of(read_file(dir + "/stats.csv"));
  ASSERT_EQ(stats.size(), 6u);
  // Frame 0 is the only keyframe; later frames must report skeleton points.
  bool any_skeleton = false;
  for (std::size_t r = 2; r < stats.size(); ++r) {
    std::stringstream ss(stats[r]);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    ASSERT_EQ(cells.size(), 7u);
    if (std::stoi(cells[3]) > 0) any_skeleton = true;
  }
  EXPECT_TRUE(any_skeleton);
  std::remove(scene.c_str());
}

TEST(CliPipeline, ZeroFramesYieldsEmptyOutputs) {
  const std::string scene = write_tiny_scene("cli_scene_zero.json");
  const std::string dir = ::testing::TempDir() + "cli_out_zero";
  ASSERT_EQ(run_cli("pipeline --scene " + scene + " --mode fsd --frames 0 --out " + dir), 0);
  EXPECT_TRUE(read_file(dir + "/predictions.jsonl").empty());
  const auto stats = lines_of(read_file(dir + "/stats.csv"));
  ASSERT_EQ(stats.size(), 1u);  // header only
  std::remove(scene.c_str());
}

}  // namespace
