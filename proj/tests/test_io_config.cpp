#include "fsk/config.hpp"
#include "fsk/io.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace {

using namespace fsk;

std::string temp_path(const std::string& name) { return ::testing::TempDir() + name; }

// Values exactly representable in f32 and in <= 9 decimal digits, so both
// the binary and the CSV container round-trip them bit-exactly.
PointSet f32_exact_points() {
  PointSet pts;
  pts.coords.resize(4, 3);
  pts.coords << 0.5, -3.25, 1.75, 2.0, 0.015625, -100.125, 0.0, 42.5, -0.875, 7.0, -7.0, 0.25;
  pts.features.resize(4, 2);
  pts.features << 1.5, -2.0, 0.125, 3.0, -0.5, 0.75, 10.0, -11.25;
  return pts;
}

TEST(Fspc, RoundTripIsExactForF32Values) {
  const PointSet pts = f32_exact_points();
  const std::string path = temp_path("pts_roundtrip.fspc");
  io::save_fspc(pts, path);
  const PointSet back = io::load_fspc(path);
  std::remove(path.c_str());
  ASSERT_EQ(back.size(), pts.size());
  ASSERT_EQ(back.feature_dim(), 2);
  EXPECT_TRUE((back.coords.array() == pts.coords.array()).all());
  EXPECT_TRUE((back.features.array() == pts.features.array()).all());
  EXPECT_FALSE(back.has_timestamps());
}

TEST(Fspc, RoundTripCastsThroughF32) {
  PointSet pts;
  pts.coords.resize(1, 3);
  pts.coords << 0.1, 0.2, 0.3;  // not representable in f32
  const std::string path = temp_path("pts_cast.fspc");
  io::save_fspc(pts, path);
  const PointSet back = io::load_fspc(path);
  std::remove(path.c_str());
  for (int d = 0; d < 3; ++d) {
    const double want = static_cast<double>(static_cast<float>(pts.coords(0, d)));
    EXPECT_EQ(back.coords(0, d), want);
  }
}

TEST(Fspc, FeatureFreeSetsKeepZeroFeatureDim) {
  PointSet pts;
  pts.coords.resize(2, 3);
  pts.coords << 1, 2, 3, 4, 5, 6;
  const std::string path = temp_path("pts_nofeat.fspc");
  io::save_fspc(pts, path);
  const PointSet back = io::load_fspc(path);
  std::remove(path.c_str());
  EXPECT_EQ(back.size(), 2);
  EXPECT_EQ(back.feature_dim(), 0);
}

TEST(Fspc, BadMagicRejected) {
  const std::string path = temp_path("bad_magic.fspc");
  {
    std::ofstream out(path, std::ios::binary);
    out << "XXXXsome bytes that are definitely not the container";
  }
  EXPECT_THROW(io::load_fspc(path), std::invalid_argument);
  std::remove(path.c_str());
}

TEST(Fspc, UnsupportedVersionRejected) {
  const std::string path = temp_path("bad_version.fspc");
  {
    std::ofstream out(path, std::ios::binary);
    out.write(io::kPointMagic, 4);
    const std::uint32_t version = 999, n = 0, c = 0;
    out.write(reinterpret_cast<const char*>(&version), 4);
    out.write(reinterpret_cast<const char*>(&n), 4);
    out.write(reinterpret_cast<const char*>(&c), 4);
  }
  EXPECT_THROW(io::load_fspc(path), std::invalid_argument);
  std::remove(path.c_str());
}

TEST(Fspc, TruncatedPayloadRejected) {
  const PointSet pts = f32_exact_points();
  const std::string path = temp_path("trunc.fspc");
  io::save_fspc(pts, path);
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), 16 + 5);  // header plus a sliver of the payload
  }
  EXPECT_THROW(io::load_fspc(path), std::invalid_argument);
  std::remove(path.c_str());
}

TEST(Fspc, MissingFileRejected) {
  EXPECT_THROW(io::load_fspc(temp_path("does_not_exist.fspc")), std::invalid_argument);
}

TEST(Csv, RoundTripIsExactForShortDecimals) {
  const PointSet pts = f32_exact_points();
  const std::string path = temp_path("pts.csv");
  io::save_csv(pts, path);
  {
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "x,y,z,f0,f1");
  }
  const PointSet back = io::load_csv(path);
  std::remove(path.c_str());
  ASSERT_EQ(back.size(), pts.size());
  ASSERT_EQ(back.feature_dim(), 2);
  EXPECT_TRUE((back.coords.array() == pts.coords.array()).all());
  EXPECT_TRUE((back.features.array() == pts.features.array()).all());
}

TEST(Csv, BadHeaderRejected) {
  const std::string path = temp_path("bad_header.csv");
  {
    std::ofstream out(path);
    out << "a,b,c\n1,2,3\n";
  }
  EXPECT_THROW(io::load_csv(path), std::invalid_argument);
  std::remove(path.c_str());
}

TEST(Csv, RaggedRowRejected) {
  const std::string path = temp_path("ragged.csv");
  {
    std::ofstream out(path);
    out << "x,y,z\n1,2,3\n4,5\n";
  }
  EXPECT_THROW(io::load_csv(path), std::invalid_argument);
  std::remove(path.c_str());
}

TEST(RunConfig, EmptyJsonYieldsDefaults) {
  const config::RunConfig def;
  const config::RunConfig c = config::config_from_json(nlohmann::json::object());
  EXPECT_EQ(c.radius, def.radius);
  EXPECT_EQ(c.fg_threshold, def.fg_threshold);
  EXPECT_EQ(c.chunk_size, def.chunk_size);
  EXPECT_EQ(c.threads, def.threads);
  EXPECT_TRUE((c.voxel_size.array() == def.voxel_size.array()).all());
  EXPECT_EQ(c.sir_widths, def.sir_widths);
  EXPECT_EQ(c.sir2_widths, def.sir2_widths);
  EXPECT_EQ(c.init_seed, def.init_seed);
  EXPECT_TRUE((c.rpp.qsize.array() == def.rpp.qsize.array()).all());
  EXPECT_EQ(c.rpp.num_base_frames, def.rpp.num_base_frames);
  EXPECT_EQ(c.rpp.max_age, def.rpp.max_age);
  EXPECT_EQ(c.skeleton_strategy, def.skeleton_strategy);
  EXPECT_EQ(c.budget_per_box, def.budget_per_box);
  EXPECT_EQ(c.detector_min_points, def.detector_min_points);
}

TEST(RunConfig, FileRoundTripPreservesEveryField) {
  config::RunConfig c;
  c.radius = 0.8;
  c.fg_threshold = 0.35;
  c.chunk_size = 128;
  c.threads = 4;
  c.voxel_size = Vec3(0.2, 0.2, 0.3);
  c.encoder_hidden = 32;
  c.encoder_out = 48;
  c.sir_widths = {16, 24};
  c.sir2_widths = {16, 16, 16};
  c.head_hidden = 40;
  c.focal_alpha = 0.5;
  c.focal_gamma = 1.5;
  c.init_seed = 99;
  c.rpp.qsize = Vec3(0.3, 0.3, 0.5);
  c.rpp.num_base_frames = 3;
  c.rpp.max_age = 4;
  c.skeleton_strategy = temporal::SkeletonStrategy::kVoxel;
  c.budget_per_box = 64;
  c.skeleton_seed = 5;
  c.noise_seed = 6;
  c.detector_min_points = 3;

  const std::string path = temp_path("run_config.json");
  config::save_config(c, path);
  const config::RunConfig back = config::load_config(path);
  std::remove(path.c_str());

  EXPECT_EQ(back.radius, c.radius);
  EXPECT_EQ(back.fg_threshold, c.fg_threshold);
  EXPECT_EQ(back.chunk_size, c.chunk_size);
  EXPECT_EQ(back.threads, c.threads);
  EXPECT_TRUE((back.voxel_size.array() == c.voxel_size.array()).all());
  EXPECT_EQ(back.encoder_hidden, c.encoder_hidden);
  EXPECT_EQ(back.encoder_out, c.encoder_out);
  EXPECT_EQ(back.sir_widths, c.sir_widths);
  EXPECT_EQ(back.sir2_widths, c.sir2_widths);
  EXPECT_EQ(back.head_hidden, c.head_hidden);
  EXPECT_EQ(back.focal_alpha, c.focal_alpha);
  EXPECT_EQ(back.focal_gamma, c.focal_gamma);
  EXPECT_EQ(back.init_seed, c.init_seed);
  EXPECT_TRUE((back.rpp.qsize.array() == c.rpp.qsize.array()).all());
  EXPECT_EQ(back.rpp.num_base_frames, c.rpp.num_base_frames);
  EXPECT_EQ(back.rpp.max_age, c.rpp.max_age);
  EXPECT_EQ(back.skeleton_strategy, c.skeleton_strategy);
  EXPECT_EQ(back.budget_per_box, c.budget_per_box);
  EXPECT_EQ(back.skeleton_seed, c.skeleton_seed);
  EXPECT_EQ(back.noise_seed, c.noise_seed);
  EXPECT_EQ(back.detector_min_points, c.detector_min_points);
}

TEST(RunConfig, UnknownKeyRejected) {
  nlohmann::json j;
  j["radiu"] = 0.5;
  EXPECT_THROW(config::config_from_json(j), std::invalid_argument);
}

TEST(RunConfig, UnknownNestedRppKeyRejected) {
  nlohmann::json j;
  j["rpp"] = {{"qsiz", {0.1, 0.1, 0.1}}};
  EXPECT_THROW(config::config_from_json(j), std::invalid_argument);
}

TEST(RunConfig, SkeletonStrategyParsing) {
  for (auto strat : {temporal::SkeletonStrategy::kRandom, temporal::SkeletonStrategy::kObjectFps,
                     temporal::SkeletonStrategy::kVoxel}) {
    nlohmann::json j;
    j["skeleton_strategy"] = temporal::to_string(strat);
    EXPECT_EQ(config::config_from_json(j).skeleton_strategy, strat);
  }
  nlohmann::json bad;
  bad["skeleton_strategy"] = "fancy";
  EXPECT_THROW(config::config_from_json(bad), std::invalid_argument);
}

TEST(RunConfig, InvalidValuesRejected) {
  nlohmann::json zero_age;
  zero_age["rpp"] = {{"max_age", 0}};
  EXPECT_THROW(config::config_from_json(zero_age), std::invalid_argument);

  nlohmann::json zero_min;
  zero_min["detector_min_points"] = 0;
  EXPECT_THROW(config::config_from_json(zero_min), std::invalid_argument);
}

TEST(RunConfig, MapsOntoModelAndSequenceConfigs) {
  config::RunConfig c;
  c.radius = 0.9;
  c.chunk_size = 64;
  c.sir_widths = {8, 8};
  c.init_seed = 17;
  c.rpp.max_age = 3;
  c.skeleton_strategy = temporal::SkeletonStrategy::kObjectFps;
  c.budget_per_box = 32;
  c.skeleton_seed = 21;
  c.noise_seed = 22;

  const model::FsdConfig m = c.to_model_config();
  EXPECT_EQ(m.radius, 0.9);
  EXPECT_EQ(m.chunk_size, 64);
  EXPECT_EQ(m.sir_widths, c.sir_widths);
  EXPECT_EQ(m.init_seed, 17u);

  const temporal::SequenceConfig s = c.to_sequence_config();
  EXPECT_EQ(s.rpp.max_age, 3);
  EXPECT_EQ(s.strategy, temporal::SkeletonStrategy::kObjectFps);
  EXPECT_EQ(s.budget_per_box, 32);
  EXPECT_EQ(s.skeleton_seed, 21u);
  EXPECT_EQ(s.noise.seed, 22u);
}

}  // namespace
