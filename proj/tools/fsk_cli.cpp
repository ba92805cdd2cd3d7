// Command-line entry point: pooling benchmark grid, detection pipeline
// over synthetic scenes (full-frame or temporal super-sparse mode), and
// the built-in invariant self-test.
//
// Exit codes: 0 success, 1 property/assertion failure, 2 usage or IO
// error.

#include "fsk/bench.hpp"
#include "fsk/config.hpp"
#include "fsk/dynpool.hpp"
#include "fsk/model.hpp"
#include "fsk/selftest.hpp"
#include "fsk/synth.hpp"
#include "fsk/temporal.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(std::stoi(cell));
  return out;
}

std::vector<fsk::bench::Regime> parse_regimes(const std::string& s) {
  std::vector<fsk::bench::Regime> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    const auto dash = cell.find('-');
    if (dash == std::string::npos) throw CLI::ValidationError("regimes", "expected lo-hi pairs");
    out.push_back({std::stoi(cell.substr(0, dash)), std::stoi(cell.substr(dash + 1))});
  }
  return out;
}

// --threads: explicit flag wins, else FSK_THREADS, else 1.
int resolve_cli_threads(int flag_value) { return fsk::dynpool::resolve_threads(flag_value); }

int cmd_bench_pool(const std::string& dims, const std::string& regimes,
                   const std::string& imbalanced, int reps, int warmups, int threads,
                   int chunk_size, int groups, std::uint64_t seed, const std::string& out_path,
                   bool break_equivalence) {
  fsk::bench::BenchSpec spec;
  spec.dims = parse_int_list(dims);
  spec.regimes = parse_regimes(regimes);
  if (imbalanced == "on")
    spec.balance_modes = {false};
  else if (imbalanced == "off")
    spec.balance_modes = {true};
  else if (imbalanced == "both")
    spec.balance_modes = {true, false};
  else
    throw CLI::ValidationError("--imbalanced", "must be on, off, or both");
  spec.reps = reps;
  spec.warmups = warmups;
  spec.threads = resolve_cli_threads(threads);
  spec.chunk_size = chunk_size;
  spec.num_groups = groups;
  spec.seed = seed;
  spec.break_equivalence = break_equivalence;

  const fsk::bench::BenchResult result = fsk::bench::run_grid(spec);
  if (!result.equivalence_ok) {
    std::cerr << "bench-pool: " << result.failure << "\n";
    return kExitFailure;
  }
  std::ostringstream csv;
  csv << fsk::bench::csv_header() << '\n';
  for (const auto& row : result.rows) csv << fsk::bench::to_csv_row(row) << '\n';
  if (out_path.empty()) {
    std::cout << csv.str();
  } else {
    std::ofstream out(out_path);
    if (!out.good()) {
      std::cerr << "bench-pool: cannot open " << out_path << "\n";
      return kExitUsage;
    }
    out << csv.str();
  }
  return kExitOk;
}

nlohmann::json prediction_line(int frame, const std::vector<fsk::sir::Proposal>& preds) {
  nlohmann::json j;
  j["frame"] = frame;
  j["boxes"] = nlohmann::json::array();
  j["scores"] = nlohmann::json::array();
  for (const auto& p : preds) {
    j["boxes"].push_back({p.box.center.x(), p.box.center.y(), p.box.center.z(), p.box.size.x(),
                          p.box.size.y(), p.box.size.z(), p.box.yaw});
    j["scores"].push_back(p.score);
  }
  return j;
}

int cmd_pipeline(const std::string& scene_path, const std::string& config_path,
                 const std::string& mode, int frames, int keyframe_gap, double drop_p,
                 double insert_p, const std::string& out_dir, std::uint64_t seed, int threads,
                 const std::string& detector_kind) {
  fsk::synth::SceneSpec scene;
  fsk::config::RunConfig run_cfg;
  try {
    scene = fsk::synth::load_scene(scene_path);
    if (!config_path.empty()) run_cfg = fsk::config::load_config(config_path);
  } catch (const std::exception& e) {
    std::cerr << "pipeline: " << e.what() << "\n";
    return kExitUsage;
  }
  run_cfg.threads = resolve_cli_threads(threads);

  std::optional<fsk::model::FsdModel> model;
  if (detector_kind == "model") model.emplace(run_cfg.to_model_config());

  // Detector closure: oracle by default (ground truth filtered by what
  // the given points actually contain), or the untrained model.
  auto detector = [&](const fsk::PointSet& pts, int frame) -> std::vector<fsk::sir::Proposal> {
    const fsk::synth::Frame f = fsk::synth::gen_frame(scene, frame);
    if (model) {
      return model->forward(pts, {}, false).refined;
    }
    fsk::Rng rng = fsk::Rng(seed).fork(static_cast<std::uint64_t>(frame));
    return fsk::synth::oracle_detector(pts, f.gt_boxes, fsk::synth::DetectorNoise{}, rng,
                                       run_cfg.detector_min_points);
  };

  std::vector<std::string> pred_lines;
  std::vector<std::string> stats_lines;

  if (mode == "fsd") {
    for (int t = 0; t < frames; ++t) {
      const fsk::synth::Frame f = fsk::synth::gen_frame(scene, t);
      const auto t0 = std::chrono::steady_clock::now();
      const auto preds = detector(f.points, t);
      const auto t1 = std::chrono::steady_clock::now();
      fsk::temporal::FrameStats st;
      st.frame = t;
      st.n_total = f.points.size();
      st.n_predictions = preds.size();
      st.latency_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
      pred_lines.push_back(prediction_line(t, preds).dump());
      stats_lines.push_back(fsk::temporal::to_csv_row(st));
    }
  } else if (mode == "fsdpp") {
    std::vector<fsk::temporal::SequenceFrame> seq;
    for (int t = 0; t < frames; ++t) {
      fsk::synth::Frame f = fsk::synth::gen_frame(scene, t);
      seq.push_back({std::move(f.points), f.pose});
    }
    fsk::temporal::SequenceConfig scfg = run_cfg.to_sequence_config();
    scfg.keyframe_gap = keyframe_gap;
    scfg.noise.drop_p = drop_p;
    scfg.noise.insert_p = insert_p;
    const auto result = fsk::temporal::run_sequence(seq, detector, scfg);
    for (const auto& fo : result.frames) {
      pred_lines.push_back(prediction_line(fo.frame, fo.predictions).dump());
      stats_lines.push_back(fsk::temporal::to_csv_row(fo.stats));
    }
  } else {
    std::cerr << "pipeline: --mode must be fsd or fsdpp\n";
    return kExitUsage;
  }

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) {
    std::cerr << "pipeline: cannot create " << out_dir << ": " << ec.message() << "\n";
    return kExitUsage;
  }
  {
    std::ofstream out(out_dir + "/predictions.jsonl");
    if (!out.good()) {
      std::cerr << "pipeline: cannot write predictions\n";
      return kExitUsage;
    }
    for (const auto& line : pred_lines) out << line << '\n';
  }
  {
    std::ofstream out(out_dir + "/stats.csv");
    if (!out.good()) {
      std::cerr << "pipeline: cannot write stats\n";
      return kExitUsage;
    }
    out << fsk::temporal::stats_csv_header() << '\n';
    for (const auto& line : stats_lines) out << line << '\n';
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fully sparse point-cloud instance recognition toolkit"};
  app.require_subcommand(1);

  // bench-pool
  auto* bench = app.add_subcommand("bench-pool", "Pooling benchmark grid (CSV output)");
  std::string dims = "64,256,1024";
  std::string regimes = "1-10,10-100,100-1000,1000-10000";
  std::string imbalanced = "both";
  int reps = 20, warmups = 3, threads = 0, chunk_size = 256, groups = 100;
  std::uint64_t bench_seed = 42;
  std::string bench_out;
  bool break_eq = false;
  bench->add_option("--dims", dims, "Comma-separated feature dims");
  bench->add_option("--regimes", regimes, "Comma-separated lo-hi group size regimes");
  bench->add_option("--imbalanced", imbalanced, "on, off, or both");
  bench->add_option("--reps", reps, "Timed repetitions per cell");
  bench->add_option("--warmups", warmups, "Untimed warm-up repetitions");
  bench->add_option("--threads", threads, "Worker threads (0: FSK_THREADS or 1)");
  bench->add_option("--chunk-size", chunk_size, "Subgroup chunk size");
  bench->add_option("--groups", groups, "Groups per workload");
  bench->add_option("--seed", bench_seed, "Workload seed");
  bench->add_option("--out", bench_out, "Write CSV here instead of stdout");
  bench->add_flag("--debug-break-equivalence", break_eq,
                  "Deliberately corrupt one optimized value (gate must trip)");

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "Run the detection pipeline on a synthetic scene");
  std::string scene_path, config_path, mode = "fsd", out_dir = "out", detector_kind = "oracle";
  int frames = 10, keyframe_gap = 0, pipe_threads = 0;
  double drop_p = 0.0, insert_p = 0.0;
  std::uint64_t pipe_seed = 1;
  pipe->add_option("--scene", scene_path, "Scene spec JSON")->required();
  pipe->add_option("--config", config_path, "Run config JSON (defaults when omitted)");
  pipe->add_option("--mode", mode, "fsd (full frame) or fsdpp (temporal)");
  pipe->add_option("--frames", frames, "Number of frames");
  pipe->add_option("--keyframe-gap", keyframe_gap, "Full-frame rectification interval (fsdpp)");
  pipe->add_option("--drop", drop_p, "Seed box drop probability (fsdpp)");
  pipe->add_option("--insert", insert_p, "Seed box insertion rate (fsdpp)");
  pipe->add_option("--out", out_dir, "Output directory");
  pipe->add_option("--seed", pipe_seed, "Detector seed");
  pipe->add_option("--threads", pipe_threads, "Worker threads (0: FSK_THREADS or 1)");
  pipe->add_option("--detector", detector_kind, "oracle or model");

  // selftest
  auto* self = app.add_subcommand("selftest", "Run built-in invariant suites");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (bench->parsed())
      return cmd_bench_pool(dims, regimes, imbalanced, reps, warmups, threads, chunk_size, groups,
                            bench_seed, bench_out, break_eq);
    if (pipe->parsed())
      return cmd_pipeline(scene_path, config_path, mode, frames, keyframe_gap, drop_p, insert_p,
                          out_dir, pipe_seed, pipe_threads, detector_kind);
    if (self->parsed()) return fsk::selftest::run_all(std::cout);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
