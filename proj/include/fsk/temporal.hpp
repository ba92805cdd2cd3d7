#pragma once

// Temporal redundancy removal: residual point probing against a window
// of past frames, skeleton sampling inside predicted boxes, a max-age
// point buffer, and a sequence runner with keyframe rectification and a
// seed-noise harness.

#include "fsk/core.hpp"
#include "fsk/rng.hpp"
#include "fsk/sir.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

namespace fsk::temporal {

// ---------------------------------------------------------------------
// Ego pose: rigid transform (yaw rotation + translation) from a frame's
// ego coordinates to world coordinates.

struct EgoPose {
  Vec3 translation{0, 0, 0};
  double yaw = 0.0;

  Vec3 apply(const Vec3& p) const {
    const double c = std::cos(yaw), s = std::sin(yaw);
    return Vec3(c * p.x() - s * p.y() + translation.x(),
                s * p.x() + c * p.y() + translation.y(), p.z() + translation.z());
  }
  Vec3 apply_inverse(const Vec3& p) const {
    const Vec3 d = p - translation;
    const double c = std::cos(yaw), s = std::sin(yaw);
    return Vec3(c * d.x() + s * d.y(), -s * d.x() + c * d.y(), d.z());
  }
};

inline PointSet transform_points(const PointSet& pts, const EgoPose& pose, bool inverse = false) {
  PointSet out = pts;
  for (Eigen::Index i = 0; i < pts.size(); ++i) {
    const Vec3 p = pts.coords.row(i).transpose();
    out.coords.row(i) = (inverse ? pose.apply_inverse(p) : pose.apply(p)).transpose();
  }
  return out;
}

inline Box3D transform_box(const Box3D& b, const EgoPose& pose, bool inverse = false) {
  if (inverse) return Box3D(pose.apply_inverse(b.center), b.size, b.yaw - pose.yaw);
  return Box3D(pose.apply(b.center), b.size, b.yaw + pose.yaw);
}

// ---------------------------------------------------------------------
// Residual point probing

struct RppConfig {
  Vec3 qsize{0.25, 0.25, 0.4};
  int num_base_frames = 5;
  int max_age = 2;

  void validate() const {
    detail::require((qsize.array() > 0).all(), "RppConfig: qsize must be positive");
    detail::require(num_base_frames >= 1, "RppConfig: num_base_frames must be >= 1");
    detail::require(max_age >= 1, "RppConfig: max_age must be >= 1");
  }
};

using VoxelSet = std::unordered_set<VoxelKey, VoxelKeyHash>;

inline VoxelSet occupancy(const PointSet& pts, const Vec3& qsize) {
  VoxelSet s;
  s.reserve(static_cast<std::size_t>(pts.size()));
  for (Eigen::Index i = 0; i < pts.size(); ++i)
    s.insert(quantize_point(pts.coords.row(i).transpose(), qsize));
  return s;
}

// Rows of `current` whose voxel is unoccupied by every base frame. All
// frames must be expressed in the same coordinate frame. No base frames
// means every point is residual.
inline std::vector<int> rpp_rows(const PointSet& current, const std::vector<PointSet>& base_frames,
                                 const RppConfig& cfg) {
  cfg.validate();
  detail::require(static_cast<int>(base_frames.size()) <= cfg.num_base_frames,
                  "rpp: more base frames than num_base_frames");
  VoxelSet occupied;
  for (const auto& f : base_frames)
    for (Eigen::Index i = 0; i < f.size(); ++i)
      occupied.insert(quantize_point(f.coords.row(i).transpose(), cfg.qsize));
  std::vector<int> rows;
  for (Eigen::Index i = 0; i < current.size(); ++i)
    if (!occupied.count(quantize_point(current.coords.row(i).transpose(), cfg.qsize)))
      rows.push_back(static_cast<int>(i));
  return rows;
}

inline PointSet rpp(const PointSet& current, const std::vector<PointSet>& base_frames,
                    const RppConfig& cfg) {
  return current.gather(rpp_rows(current, base_frames, cfg));
}

// ---------------------------------------------------------------------
// Skeleton sampling

enum class SkeletonStrategy { kRandom, kObjectFps, kVoxel };

inline const char* to_string(SkeletonStrategy s) {
  switch (s) {
    case SkeletonStrategy::kRandom: return "random";
    case SkeletonStrategy::kObjectFps: return "object_fps";
    case SkeletonStrategy::kVoxel: return "voxel";
  }
  return "?";
}

inline std::optional<SkeletonStrategy> skeleton_strategy_from_string(const std::string& s) {
  if (s == "random") return SkeletonStrategy::kRandom;
  if (s == "object_fps") return SkeletonStrategy::kObjectFps;
  if (s == "voxel") return SkeletonStrategy::kVoxel;
  return std::nullopt;
}

namespace detail {

using fsk::detail::require;

inline std::vector<int> sample_random(const std::vector<int>& rows, int budget, Rng& rng) {
  std::vector<int> pool = rows;
  rng.shuffle(pool);
  pool.resize(static_cast<std::size_t>(budget));
  std::sort(pool.begin(), pool.end());
  return pool;
}

// Farthest point sampling seeded at the row nearest the box center.
inline std::vector<int> sample_fps(const PointSet& pts, const std::vector<int>& rows, int budget,
                                   const Vec3& center) {
  const auto n = static_cast<int>(rows.size());
  int seed_i = 0;
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    const double d = (pts.coords.row(rows[static_cast<std::size_t>(i)]).transpose() - center)
                         .squaredNorm();
    if (d < best) {
      best = d;
      seed_i = i;
    }
  }
  std::vector<double> dist(static_cast<std::size_t>(n),
                           std::numeric_limits<double>::infinity());
  std::vector<int> chosen;
  chosen.reserve(static_cast<std::size_t>(budget));
  int cur = seed_i;
  chosen.push_back(rows[static_cast<std::size_t>(cur)]);
  dist[static_cast<std::size_t>(cur)] = -1.0;
  while (static_cast<int>(chosen.size()) < budget) {
    int next = -1;
    double far = -1.0;
    for (int i = 0; i < n; ++i) {
      auto& di = dist[static_cast<std::size_t>(i)];
      if (di < 0) continue;
      const double d = (pts.coords.row(rows[static_cast<std::size_t>(i)]) -
                        pts.coords.row(rows[static_cast<std::size_t>(cur)]))
                           .squaredNorm();
      di = std::min(di, d);
      if (di > far) {
        far = di;
        next = i;
      }
    }
    chosen.push_back(rows[static_cast<std::size_t>(next)]);
    dist[static_cast<std::size_t>(next)] = -1.0;
    cur = next;
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

}  // namespace detail

// Per box: gather interior points; keep all if within budget, else
// subsample. random — uniform without replacement; object_fps — farthest
// point sampling seeded at the point nearest the box center; voxel —
// centroids of occupied voxels in ascending key order, truncated to the
// budget. Deterministic given the seed. Skeleton points carry
// coordinates and timestamps only.
inline PointSet skeleton_sample(const PointSet& prev_points, const std::vector<Box3D>& prev_boxes,
                                SkeletonStrategy strategy, int budget_per_box, std::uint64_t seed,
                                const Vec3& qsize = Vec3(0.25, 0.25, 0.4)) {
  detail::require(budget_per_box >= 1, "skeleton_sample: budget_per_box must be >= 1");
  Rng rng(seed);
  std::vector<Vec3> out_coords;
  std::vector<double> out_ts;
  const bool has_ts = prev_points.has_timestamps();

  for (std::size_t b = 0; b < prev_boxes.size(); ++b) {
    Rng box_rng = rng.fork(static_cast<std::uint64_t>(b));
    std::vector<int> rows;
    for (Eigen::Index i = 0; i < prev_points.size(); ++i)
      if (point_in_box(prev_points.coords.row(i).transpose(), prev_boxes[b]))
        rows.push_back(static_cast<int>(i));
    if (rows.empty()) continue;

    if (strategy == SkeletonStrategy::kVoxel) {
      // Centroids of occupied voxels, emitted in key order.
      std::map<VoxelKey, std::pair<Vec3, int>> cells;
      std::map<VoxelKey, double> cell_ts;
      for (int r : rows) {
        const Vec3 p = prev_points.coords.row(r).transpose();
        const VoxelKey k = quantize_point(p, qsize);
        auto& acc = cells[k];
        if (acc.second == 0) acc.first = Vec3::Zero();
        acc.first += p;
        acc.second += 1;
        if (has_ts && !cell_ts.count(k)) cell_ts[k] = prev_points.timestamps(r);
      }
      int emitted = 0;
      for (const auto& [k, acc] : cells) {
        if (emitted >= budget_per_box) break;
        out_coords.push_back(acc.first / acc.second);
        if (has_ts) out_ts.push_back(cell_ts[k]);
        ++emitted;
      }
      continue;
    }

    std::vector<int> keep;
    if (static_cast<int>(rows.size()) <= budget_per_box) {
      keep = rows;
    } else if (strategy == SkeletonStrategy::kRandom) {
      keep = detail::sample_random(rows, budget_per_box, box_rng);
    } else {
      keep = detail::sample_fps(prev_points, rows, budget_per_box, prev_boxes[b].center);
    }
    for (int r : keep) {
      out_coords.push_back(prev_points.coords.row(r).transpose());
      if (has_ts) out_ts.push_back(prev_points.timestamps(r));
    }
  }

  PointSet out;
  out.coords.resize(static_cast<Eigen::Index>(out_coords.size()), 3);
  for (std::size_t i = 0; i < out_coords.size(); ++i)
    out.coords.row(static_cast<Eigen::Index>(i)) = out_coords[i].transpose();
  if (has_ts) {
    out.timestamps.resize(static_cast<Eigen::Index>(out_ts.size()));
    for (std::size_t i = 0; i < out_ts.size(); ++i)
      out.timestamps(static_cast<Eigen::Index>(i)) = out_ts[i];
  }
  return out;
}

// ---------------------------------------------------------------------
// Aged residual buffer

struct AgedPoints {
  PointSet points;
  std::vector<int> birth_frame;
  std::vector<int> age;  // >= 1; entries older than max_age are evicted

  void validate() const {
    detail::require(birth_frame.size() == static_cast<std::size_t>(points.size()) &&
                        age.size() == static_cast<std::size_t>(points.size()),
                    "AgedPoints: per-point array size mismatch");
    for (int a : age) detail::require(a >= 1, "AgedPoints: age must be >= 1");
  }
};

// New residual enters at age 1; survivors age by one; entries exceeding
// max_age are evicted. The emitted set is exactly the union of the last
// max_age residual frames.
inline AgedPoints age_update(const AgedPoints& buffer, const PointSet& new_residual, int frame,
                             const RppConfig& cfg) {
  cfg.validate();
  std::vector<int> keep;
  for (std::size_t i = 0; i < buffer.age.size(); ++i)
    if (buffer.age[i] + 1 <= cfg.max_age) keep.push_back(static_cast<int>(i));

  AgedPoints out;
  PointSet survivors = buffer.points.gather(keep);
  out.points = concat(survivors, new_residual);
  out.birth_frame.reserve(keep.size() + static_cast<std::size_t>(new_residual.size()));
  out.age.reserve(out.birth_frame.capacity());
  for (int i : keep) {
    out.birth_frame.push_back(buffer.birth_frame[static_cast<std::size_t>(i)]);
    out.age.push_back(buffer.age[static_cast<std::size_t>(i)] + 1);
  }
  for (Eigen::Index i = 0; i < new_residual.size(); ++i) {
    out.birth_frame.push_back(frame);
    out.age.push_back(1);
  }
  return out;
}

// ---------------------------------------------------------------------
// Super sparse input assembly

enum class Provenance : std::uint8_t { kResidual = 0, kSkeleton = 1 };

struct SuperSparseInput {
  PointSet points;                        // residual rows first, then skeleton
  std::vector<Provenance> provenance;     // per row
  Eigen::Index n_residual = 0;
  Eigen::Index n_skeleton = 0;
};

// Concatenation with provenance tags; no deduplication across the two
// sources.
inline SuperSparseInput assemble(const AgedPoints& buffer, const PointSet& skeleton) {
  SuperSparseInput out;
  out.points = concat(buffer.points, skeleton);
  out.n_residual = buffer.points.size();
  out.n_skeleton = skeleton.size();
  out.provenance.assign(static_cast<std::size_t>(out.points.size()), Provenance::kResidual);
  for (Eigen::Index i = buffer.points.size(); i < out.points.size(); ++i)
    out.provenance[static_cast<std::size_t>(i)] = Provenance::kSkeleton;
  return out;
}

// ---------------------------------------------------------------------
// Sequence runner

struct SeedNoise {
  double drop_p = 0.0;    // drop each seed box with this probability
  double insert_p = 0.0;  // insert round(insert_p * |boxes|) random boxes
  Vec3 insert_lo{-10, -10, -2};
  Vec3 insert_hi{10, 10, 2};
  Vec3 size_lo{0.5, 0.5, 0.5};
  Vec3 size_hi{4.0, 4.0, 2.5};
  std::uint64_t seed = 7;
};

inline std::vector<Box3D> apply_seed_noise(const std::vector<Box3D>& boxes, const SeedNoise& noise,
                                           int frame) {
  if (noise.drop_p == 0.0 && noise.insert_p == 0.0) return boxes;
  Rng base(noise.seed);
  Rng rng = base.fork(static_cast<std::uint64_t>(frame));
  std::vector<Box3D> out;
  for (const Box3D& b : boxes)
    if (!rng.bernoulli(noise.drop_p)) out.push_back(b);
  const auto n_insert =
      static_cast<int>(std::llround(noise.insert_p * static_cast<double>(boxes.size())));
  for (int i = 0; i < n_insert; ++i) {
    Vec3 c, s;
    for (int d = 0; d < 3; ++d) {
      c(d) = rng.uniform(noise.insert_lo(d), noise.insert_hi(d));
      s(d) = rng.uniform(noise.size_lo(d), noise.size_hi(d));
    }
    out.emplace_back(c, s, rng.uniform(-kPi, kPi));
  }
  return out;
}

struct SequenceFrame {
  PointSet points;               // in this frame's ego coordinates
  std::optional<EgoPose> pose;   // ego -> world; required
};

using Detector = std::function<std::vector<sir::Proposal>(const PointSet&, int frame)>;

struct SequenceConfig {
  RppConfig rpp;
  SkeletonStrategy strategy = SkeletonStrategy::kRandom;
  int budget_per_box = 128;
  int keyframe_gap = 0;  // 0: only frame 0 is a keyframe; 1: every frame
  SeedNoise noise;
  std::uint64_t skeleton_seed = 11;
};

struct FrameStats {
  int frame = 0;
  Eigen::Index n_total = 0;
  Eigen::Index n_residual = 0;
  Eigen::Index n_skeleton = 0;
  double residual_ratio = 0.0;
  std::size_t n_predictions = 0;
  double latency_ms = 0.0;
};

inline std::string stats_csv_header() {
  return "frame,n_total,n_residual,n_skeleton,residual_ratio,n_predictions,latency_ms";
}

inline std::string to_csv_row(const FrameStats& s) {
  std::ostringstream os;
  os << s.frame << ',' << s.n_total << ',' << s.n_residual << ',' << s.n_skeleton << ','
     << s.residual_ratio << ',' << s.n_predictions << ',' << s.latency_ms;
  return os.str();
}

struct FrameOutput {
  int frame = 0;
  std::vector<sir::Proposal> predictions;  // in the frame's ego coordinates
  FrameStats stats;
};

struct SequenceResult {
  std::vector<FrameOutput> frames;
};

// Runs the temporal pipeline. Frame 0 and every keyframe run the
// detector on the full frame; other frames run it on the super sparse
// input (aged residual points plus skeleton points sampled inside the
// previous frame's predicted boxes, seed noise applied first).
// Reported predictions are the detector's own output, before any noise.
// The residual buffer and base window live in world coordinates; the
// detector always sees the current ego frame.
inline SequenceResult run_sequence(const std::vector<SequenceFrame>& frames,
                                   const Detector& detector, const SequenceConfig& cfg) {
  cfg.rpp.validate();
  detail::require(cfg.budget_per_box >= 1, "run_sequence: budget_per_box must be >= 1");
  detail::require(cfg.keyframe_gap >= 0, "run_sequence: keyframe_gap must be >= 0");
  detail::require(static_cast<bool>(detector), "run_sequence: detector callback required");

  SequenceResult result;
  std::deque<PointSet> base_window;  // last num_base_frames raw frames, world coords
  AgedPoints buffer;
  std::vector<Box3D> prev_boxes_world;
  PointSet prev_full_world;

  for (int t = 0; t < static_cast<int>(frames.size()); ++t) {
    const SequenceFrame& fr = frames[static_cast<std::size_t>(t)];
    detail::require(fr.pose.has_value(), "run_sequence: frame missing ego pose");
    fr.points.validate();
    const EgoPose& pose = *fr.pose;
    const PointSet world = transform_points(fr.points, pose);

    // Residual probing against the base window, every frame.
    const std::vector<PointSet> base(base_window.begin(), base_window.end());
    const PointSet residual_world = rpp(world, base, cfg.rpp);
    buffer = age_update(buffer, residual_world, t, cfg.rpp);

    const bool keyframe = t == 0 || (cfg.keyframe_gap > 0 && t % cfg.keyframe_gap == 0);

    FrameOutput out;
    out.frame = t;
    out.stats.frame = t;
    out.stats.n_total = fr.points.size();
    out.stats.n_residual = residual_world.size();
    out.stats.residual_ratio =
        fr.points.size() > 0
            ? static_cast<double>(residual_world.size()) / static_cast<double>(fr.points.size())
            : 0.0;

    PointSet detector_input;
    if (keyframe) {
      detector_input = fr.points;
    } else {
      const std::vector<Box3D> seeds = apply_seed_noise(prev_boxes_world, cfg.noise, t);
      Rng seed_rng(cfg.skeleton_seed);
      const PointSet skeleton =
          skeleton_sample(prev_full_world, seeds, cfg.strategy, cfg.budget_per_box,
                          seed_rng.fork(static_cast<std::uint64_t>(t)).next_u64(), cfg.rpp.qsize);
      out.stats.n_skeleton = skeleton.size();
      const SuperSparseInput ssi = assemble(buffer, skeleton);
      detector_input = transform_points(ssi.points, pose, /*inverse=*/true);
    }

    const auto t0 = std::chrono::steady_clock::now();
    out.predictions = detector(detector_input, t);
    const auto t1 = std::chrono::steady_clock::now();
    out.stats.latency_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    out.stats.n_predictions = out.predictions.size();

    prev_boxes_world.clear();
    for (const auto& p : out.predictions)
      prev_boxes_world.push_back(transform_box(p.box, pose));
    prev_full_world = world;

    base_window.push_back(world);
    while (static_cast<int>(base_window.size()) > cfg.rpp.num_base_frames)
      base_window.pop_front();

    result.frames.push_back(std::move(out));
  }
  return result;
}

}  // namespace fsk::temporal
