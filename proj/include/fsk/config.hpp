#pragma once

// One JSON document carrying every tunable default: grouping radius,
// foreground threshold, pooling chunk size, residual-probing config,
// network widths, seeds, and the temporal pipeline knobs. Unknown keys
// are rejected so a typo cannot silently fall back to a default.

#include "fsk/core.hpp"
#include "fsk/model.hpp"
#include "fsk/synth.hpp"
#include "fsk/temporal.hpp"

#include "json.hpp"

#include <fstream>
#include <string>
#include <vector>

namespace fsk::config {

struct RunConfig {
  double radius = 0.6;
  double fg_threshold = 0.5;
  int chunk_size = 256;
  int threads = 1;
  Vec3 voxel_size{0.25, 0.25, 0.25};
  int encoder_hidden = 64;
  int encoder_out = 64;
  std::vector<int> sir_widths{64, 64, 64};
  std::vector<int> sir2_widths{64, 64, 64, 64, 64, 64};
  int head_hidden = 64;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  std::uint64_t init_seed = 1;
  temporal::RppConfig rpp;
  temporal::SkeletonStrategy skeleton_strategy = temporal::SkeletonStrategy::kRandom;
  int budget_per_box = 128;
  std::uint64_t skeleton_seed = 11;
  std::uint64_t noise_seed = 7;
  int detector_min_points = 1;

  model::FsdConfig to_model_config() const {
    model::FsdConfig m;
    m.radius = radius;
    m.fg_threshold = fg_threshold;
    m.chunk_size = chunk_size;
    m.threads = threads;
    m.voxel_size = voxel_size;
    m.encoder_hidden = encoder_hidden;
    m.encoder_out = encoder_out;
    m.sir_widths = sir_widths;
    m.sir2_widths = sir2_widths;
    m.head_hidden = head_hidden;
    m.focal_alpha = focal_alpha;
    m.focal_gamma = focal_gamma;
    m.init_seed = init_seed;
    return m;
  }

  temporal::SequenceConfig to_sequence_config() const {
    temporal::SequenceConfig s;
    s.rpp = rpp;
    s.strategy = skeleton_strategy;
    s.budget_per_box = budget_per_box;
    s.skeleton_seed = skeleton_seed;
    s.noise.seed = noise_seed;
    return s;
  }
};

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["radius"] = c.radius;
  j["fg_threshold"] = c.fg_threshold;
  j["chunk_size"] = c.chunk_size;
  j["threads"] = c.threads;
  j["voxel_size"] = synth::detail_json::vec3_to(c.voxel_size);
  j["encoder_hidden"] = c.encoder_hidden;
  j["encoder_out"] = c.encoder_out;
  j["sir_widths"] = c.sir_widths;
  j["sir2_widths"] = c.sir2_widths;
  j["head_hidden"] = c.head_hidden;
  j["focal_alpha"] = c.focal_alpha;
  j["focal_gamma"] = c.focal_gamma;
  j["init_seed"] = c.init_seed;
  j["rpp"] = {{"qsize", synth::detail_json::vec3_to(c.rpp.qsize)},
              {"num_base_frames", c.rpp.num_base_frames},
              {"max_age", c.rpp.max_age}};
  j["skeleton_strategy"] = temporal::to_string(c.skeleton_strategy);
  j["budget_per_box"] = c.budget_per_box;
  j["skeleton_seed"] = c.skeleton_seed;
  j["noise_seed"] = c.noise_seed;
  j["detector_min_points"] = c.detector_min_points;
  return j;
}

inline RunConfig config_from_json(const nlohmann::json& j) {
  synth::detail_json::check_keys(
      j,
      {"radius", "fg_threshold", "chunk_size", "threads", "voxel_size", "encoder_hidden",
       "encoder_out", "sir_widths", "sir2_widths", "head_hidden", "focal_alpha", "focal_gamma",
       "init_seed", "rpp", "skeleton_strategy", "budget_per_box", "skeleton_seed", "noise_seed",
       "detector_min_points"},
      "config");
  RunConfig c;
  if (j.contains("radius")) c.radius = j["radius"].get<double>();
  if (j.contains("fg_threshold")) c.fg_threshold = j["fg_threshold"].get<double>();
  if (j.contains("chunk_size")) c.chunk_size = j["chunk_size"].get<int>();
  if (j.contains("threads")) c.threads = j["threads"].get<int>();
  if (j.contains("voxel_size"))
    c.voxel_size = synth::detail_json::vec3_from(j["voxel_size"], "voxel_size");
  if (j.contains("encoder_hidden")) c.encoder_hidden = j["encoder_hidden"].get<int>();
  if (j.contains("encoder_out")) c.encoder_out = j["encoder_out"].get<int>();
  if (j.contains("sir_widths")) c.sir_widths = j["sir_widths"].get<std::vector<int>>();
  if (j.contains("sir2_widths")) c.sir2_widths = j["sir2_widths"].get<std::vector<int>>();
  if (j.contains("head_hidden")) c.head_hidden = j["head_hidden"].get<int>();
  if (j.contains("focal_alpha")) c.focal_alpha = j["focal_alpha"].get<double>();
  if (j.contains("focal_gamma")) c.focal_gamma = j["focal_gamma"].get<double>();
  if (j.contains("init_seed")) c.init_seed = j["init_seed"].get<std::uint64_t>();
  if (j.contains("rpp")) {
    const auto& jr = j["rpp"];
    synth::detail_json::check_keys(jr, {"qsize", "num_base_frames", "max_age"}, "config.rpp");
    if (jr.contains("qsize")) c.rpp.qsize = synth::detail_json::vec3_from(jr["qsize"], "rpp.qsize");
    if (jr.contains("num_base_frames")) c.rpp.num_base_frames = jr["num_base_frames"].get<int>();
    if (jr.contains("max_age")) c.rpp.max_age = jr["max_age"].get<int>();
  }
  if (j.contains("skeleton_strategy")) {
    const auto s = temporal::skeleton_strategy_from_string(j["skeleton_strategy"].get<std::string>());
    detail::require(s.has_value(), "config: skeleton_strategy must be random|object_fps|voxel");
    c.skeleton_strategy = *s;
  }
  if (j.contains("budget_per_box")) c.budget_per_box = j["budget_per_box"].get<int>();
  if (j.contains("skeleton_seed")) c.skeleton_seed = j["skeleton_seed"].get<std::uint64_t>();
  if (j.contains("noise_seed")) c.noise_seed = j["noise_seed"].get<std::uint64_t>();
  if (j.contains("detector_min_points"))
    c.detector_min_points = j["detector_min_points"].get<int>();
  c.rpp.validate();
  detail::require(c.detector_min_points >= 1, "config: detector_min_points must be >= 1");
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  detail::require(in.good(), "load_config: cannot open " + path);
  nlohmann::json j;
  in >> j;
  return config_from_json(j);
}

inline void save_config(const RunConfig& c, const std::string& path) {
  std::ofstream out(path);
  detail::require(out.good(), "save_config: cannot open " + path);
  out << to_json(c).dump(2) << '\n';
}

}  // namespace fsk::config
