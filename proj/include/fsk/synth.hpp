#pragma once

// Synthetic scenes and workloads: deterministic frame generation with
// moving objects and a static jittered-grid background, an oracle
// detector with drop/insert noise, and the grouped-feature workload
// generator for pooling benchmarks.

#include "fsk/core.hpp"
#include "fsk/rng.hpp"
#include "fsk/sir.hpp"
#include "fsk/temporal.hpp"

#include "json.hpp"

#include <cmath>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

namespace fsk::synth {

// ---------------------------------------------------------------------
// Scene specification

struct ObjectSpec {
  Box3D box;                          // pose at frame 0
  int points_per_object = 1;
  Vec3 velocity{0, 0, 0};             // meters per frame
  int appear_frame = 0;               // first frame the object exists
  std::vector<Vec3> explicit_points;  // canonical-frame offsets; overrides sampling
};

struct SceneSpec {
  Vec3 bounds_lo{-20, -20, -2};
  Vec3 bounds_hi{20, 20, 6};
  int n_background = 1000;
  double bg_jitter = 0.05;  // < background pitch; keeps grid points in their cells
  Vec3 ego_velocity{0, 0, 0};
  std::uint64_t rng_seed = 1;
  std::vector<ObjectSpec> objects;

  void validate() const {
    detail::require((bounds_hi.array() > bounds_lo.array()).all(),
                    "SceneSpec: bounds_hi must exceed bounds_lo");
    detail::require(n_background >= 0, "SceneSpec: n_background must be >= 0");
    detail::require(bg_jitter >= 0, "SceneSpec: bg_jitter must be >= 0");
    for (const auto& o : objects) {
      detail::require(o.points_per_object >= 1 || !o.explicit_points.empty(),
                      "SceneSpec: each object needs at least one point");
      detail::require(o.appear_frame >= 0, "SceneSpec: appear_frame must be >= 0");
      detail::require((o.box.center.array() >= bounds_lo.array()).all() &&
                          (o.box.center.array() <= bounds_hi.array()).all(),
                      "SceneSpec: object center outside bounds at frame 0");
    }
  }
};

struct Frame {
  PointSet points;                // current ego coordinates
  std::vector<Box3D> gt_boxes;    // current ego coordinates
  temporal::EgoPose pose;         // ego -> world
  std::vector<int> point_object;  // per point: object index or -1 background
};

// Deterministic frame synthesis. Background points live on a jittered
// grid, fixed across frames in world coordinates; object points are
// sampled once in the box's canonical frame and rigidly translated by
// velocity * frame. Output coordinates are in the frame's ego system
// (ego translates by ego_velocity per frame).
inline Frame gen_frame(const SceneSpec& spec, int frame) {
  spec.validate();
  detail::require(frame >= 0, "gen_frame: frame must be >= 0");
  Rng root(spec.rng_seed);

  std::vector<Vec3> world;
  std::vector<int> owner;
  std::vector<Box3D> gts_world;
  std::vector<int> gt_owner;

  for (std::size_t i = 0; i < spec.objects.size(); ++i) {
    const ObjectSpec& obj = spec.objects[i];
    if (frame < obj.appear_frame) continue;
    const Vec3 center = obj.box.center + obj.velocity * static_cast<double>(frame);
    const Box3D moved(center, obj.box.size, obj.box.yaw);
    gts_world.push_back(moved);
    gt_owner.push_back(static_cast<int>(i));

    const double cy = std::cos(moved.yaw), sy = std::sin(moved.yaw);
    auto place = [&](const Vec3& off) {
      const Vec3 rot(cy * off.x() - sy * off.y(), sy * off.x() + cy * off.y(), off.z());
      world.push_back(center + rot);
      owner.push_back(static_cast<int>(i));
    };
    if (!obj.explicit_points.empty()) {
      for (const Vec3& off : obj.explicit_points) place(off);
    } else {
      Rng orng = root.fork(1000 + static_cast<std::uint64_t>(i));
      for (int k = 0; k < obj.points_per_object; ++k) {
        Vec3 off;
        for (int d = 0; d < 3; ++d) off(d) = (orng.uniform() - 0.5) * moved.size(d);
        place(off);
      }
    }
  }

  if (spec.n_background > 0) {
    Rng brng = root.fork(1);
    const Vec3 ext = spec.bounds_hi - spec.bounds_lo;
    const double pitch = std::cbrt(ext.prod() / static_cast<double>(spec.n_background));
    const int nx = std::max<int>(1, static_cast<int>(std::ceil(ext.x() / pitch)));
    const int ny = std::max<int>(1, static_cast<int>(std::ceil(ext.y() / pitch)));
    const int nz = std::max<int>(1, static_cast<int>(std::ceil(ext.z() / pitch)));
    int emitted = 0;
    for (int ix = 0; ix < nx && emitted < spec.n_background; ++ix)
      for (int iy = 0; iy < ny && emitted < spec.n_background; ++iy)
        for (int iz = 0; iz < nz && emitted < spec.n_background; ++iz) {
          Vec3 p = spec.bounds_lo +
                   Vec3((ix + 0.5) * pitch, (iy + 0.5) * pitch, (iz + 0.5) * pitch);
          for (int d = 0; d < 3; ++d) {
            p(d) += brng.uniform(-spec.bg_jitter, spec.bg_jitter);
            p(d) = std::min(spec.bounds_hi(d), std::max(spec.bounds_lo(d), p(d)));
          }
          world.push_back(p);
          owner.push_back(-1);
          ++emitted;
        }
  }

  Frame out;
  out.pose.translation = spec.ego_velocity * static_cast<double>(frame);
  out.pose.yaw = 0.0;
  const auto N = static_cast<Eigen::Index>(world.size());
  out.points.coords.resize(N, 3);
  for (Eigen::Index i = 0; i < N; ++i)
    out.points.coords.row(i) =
        out.pose.apply_inverse(world[static_cast<std::size_t>(i)]).transpose();
  out.points.timestamps = Vecd::Constant(N, static_cast<double>(frame));
  out.point_object = std::move(owner);
  out.gt_boxes.reserve(gts_world.size());
  for (const Box3D& b : gts_world)
    out.gt_boxes.push_back(temporal::transform_box(b, out.pose, /*inverse=*/true));
  (void)gt_owner;
  return out;
}

// ---------------------------------------------------------------------
// Oracle detector

struct DetectorNoise {
  double drop_p = 0.0;
  double insert_p = 0.0;
  Vec3 center_lo{-10, -10, -2};
  Vec3 center_hi{10, 10, 2};
  Vec3 size_lo{1.0, 1.0, 1.0};
  Vec3 size_hi{4.0, 4.0, 2.5};

  void validate() const {
    detail::require(drop_p >= 0 && drop_p <= 1, "DetectorNoise: drop_p must be in [0,1]");
    detail::require(insert_p >= 0 && insert_p <= 1, "DetectorNoise: insert_p must be in [0,1]");
  }
};

inline int interior_count(const PointSet& pts, const Box3D& box, int stop_at) {
  int n = 0;
  for (Eigen::Index i = 0; i < pts.size(); ++i) {
    if (point_in_box(pts.coords.row(i).transpose(), box) && ++n >= stop_at) break;
  }
  return n;
}

// Ground-truth boxes minus random drops plus random insertions, as
// unit-score proposals. A box is only returned when at least min_points
// of the given points lie inside it: the detector sees only the points
// it is handed.
inline std::vector<sir::Proposal> oracle_detector(const PointSet& points,
                                                  const std::vector<Box3D>& gts,
                                                  const DetectorNoise& noise, Rng& rng,
                                                  int min_points = 1) {
  noise.validate();
  detail::require(min_points >= 1, "oracle_detector: min_points must be >= 1");
  std::vector<sir::Proposal> out;
  for (std::size_t k = 0; k < gts.size(); ++k) {
    if (rng.bernoulli(noise.drop_p)) continue;
    if (interior_count(points, gts[k], min_points) < min_points) continue;
    sir::Proposal p;
    p.box = gts[k];
    p.score = 1.0;
    p.group_id = static_cast<int>(k);
    out.push_back(p);
  }
  const auto n_insert =
      static_cast<int>(std::llround(noise.insert_p * static_cast<double>(gts.size())));
  for (int i = 0; i < n_insert; ++i) {
    Vec3 c, s;
    for (int d = 0; d < 3; ++d) {
      c(d) = rng.uniform(noise.center_lo(d), noise.center_hi(d));
      s(d) = rng.uniform(noise.size_lo(d), noise.size_hi(d));
    }
    const Box3D box(c, s, rng.uniform(-kPi, kPi));
    if (interior_count(points, box, min_points) < min_points) continue;
    sir::Proposal p;
    p.box = box;
    p.score = 1.0;
    p.group_id = -1;
    out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------
// Pooling benchmark workloads

struct WorkloadSpec {
  int num_groups = 100;
  int size_lo = 10;  // group sizes uniform in [size_lo, size_hi)
  int size_hi = 100;
  int feature_dim = 64;
  bool imbalanced = false;  // every 10th group's size scaled by 10

  void validate() const {
    detail::require(num_groups >= 1, "WorkloadSpec: num_groups must be >= 1");
    detail::require(size_lo >= 1, "WorkloadSpec: size_lo must be >= 1");
    detail::require(size_hi > size_lo, "WorkloadSpec: size_hi must exceed size_lo");
    detail::require(feature_dim >= 1, "WorkloadSpec: feature_dim must be >= 1");
  }
};

// Standard-normal features with shuffled group ids; deterministic per
// seed, bit-identical across runs.
template <typename Scalar>
std::pair<MatrixX<Scalar>, GroupIndex> gen_workload(const WorkloadSpec& spec,
                                                    std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  std::vector<Eigen::Index> sizes(static_cast<std::size_t>(spec.num_groups));
  Eigen::Index total = 0;
  for (int g = 0; g < spec.num_groups; ++g) {
    Eigen::Index n = spec.size_lo +
                     static_cast<Eigen::Index>(rng.bounded(
                         static_cast<std::uint64_t>(spec.size_hi - spec.size_lo)));
    if (spec.imbalanced && g % 10 == 0) n *= 10;
    sizes[static_cast<std::size_t>(g)] = n;
    total += n;
  }

  std::vector<int> ids(static_cast<std::size_t>(total));
  std::size_t at = 0;
  for (int g = 0; g < spec.num_groups; ++g)
    for (Eigen::Index k = 0; k < sizes[static_cast<std::size_t>(g)]; ++k) ids[at++] = g;
  rng.shuffle(ids);

  GroupIndex index;
  index.num_groups = spec.num_groups;
  index.ids.resize(total);
  for (Eigen::Index i = 0; i < total; ++i) index.ids(i) = ids[static_cast<std::size_t>(i)];

  MatrixX<Scalar> feats(total, spec.feature_dim);
  for (Eigen::Index i = 0; i < total; ++i)
    for (int c = 0; c < spec.feature_dim; ++c)
      feats(i, c) = static_cast<Scalar>(rng.normal());
  return {std::move(feats), std::move(index)};
}

// ---------------------------------------------------------------------
// Scene JSON (strict: unknown keys rejected)

namespace detail_json {

inline void check_keys(const nlohmann::json& j, const std::vector<std::string>& allowed,
                       const std::string& where) {
  fsk::detail::require(j.is_object(), where + ": expected a JSON object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const auto& k : allowed)
      if (item.key() == k) {
        ok = true;
        break;
      }
    fsk::detail::require(ok, where + ": unknown key '" + item.key() + "'");
  }
}

inline Vec3 vec3_from(const nlohmann::json& j, const std::string& where) {
  fsk::detail::require(j.is_array() && j.size() == 3, where + ": expected an array of 3 numbers");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

inline nlohmann::json vec3_to(const Vec3& v) {
  return nlohmann::json::array({v.x(), v.y(), v.z()});
}

}  // namespace detail_json

inline nlohmann::json to_json(const SceneSpec& spec) {
  nlohmann::json j;
  j["bounds_lo"] = detail_json::vec3_to(spec.bounds_lo);
  j["bounds_hi"] = detail_json::vec3_to(spec.bounds_hi);
  j["n_background"] = spec.n_background;
  j["bg_jitter"] = spec.bg_jitter;
  j["ego_velocity"] = detail_json::vec3_to(spec.ego_velocity);
  j["rng_seed"] = spec.rng_seed;
  j["objects"] = nlohmann::json::array();
  for (const auto& o : spec.objects) {
    nlohmann::json jo;
    jo["center"] = detail_json::vec3_to(o.box.center);
    jo["size"] = detail_json::vec3_to(o.box.size);
    jo["yaw"] = o.box.yaw;
    jo["points"] = o.points_per_object;
    jo["velocity"] = detail_json::vec3_to(o.velocity);
    jo["appear_frame"] = o.appear_frame;
    j["objects"].push_back(jo);
  }
  return j;
}

inline SceneSpec scene_from_json(const nlohmann::json& j) {
  detail_json::check_keys(j,
                          {"bounds_lo", "bounds_hi", "n_background", "bg_jitter", "ego_velocity",
                           "rng_seed", "objects"},
                          "scene");
  SceneSpec spec;
  if (j.contains("bounds_lo")) spec.bounds_lo = detail_json::vec3_from(j["bounds_lo"], "bounds_lo");
  if (j.contains("bounds_hi")) spec.bounds_hi = detail_json::vec3_from(j["bounds_hi"], "bounds_hi");
  if (j.contains("n_background")) spec.n_background = j["n_background"].get<int>();
  if (j.contains("bg_jitter")) spec.bg_jitter = j["bg_jitter"].get<double>();
  if (j.contains("ego_velocity"))
    spec.ego_velocity = detail_json::vec3_from(j["ego_velocity"], "ego_velocity");
  if (j.contains("rng_seed")) spec.rng_seed = j["rng_seed"].get<std::uint64_t>();
  if (j.contains("objects")) {
    fsk::detail::require(j["objects"].is_array(), "scene: objects must be an array");
    for (const auto& jo : j["objects"]) {
      detail_json::check_keys(jo, {"center", "size", "yaw", "points", "velocity", "appear_frame"},
                              "object");
      ObjectSpec o;
      Vec3 center(0, 0, 0), size(1, 1, 1);
      double yaw = 0;
      if (jo.contains("center")) center = detail_json::vec3_from(jo["center"], "object.center");
      if (jo.contains("size")) size = detail_json::vec3_from(jo["size"], "object.size");
      if (jo.contains("yaw")) yaw = jo["yaw"].get<double>();
      o.box = Box3D(center, size, yaw);
      if (jo.contains("points")) o.points_per_object = jo["points"].get<int>();
      if (jo.contains("velocity"))
        o.velocity = detail_json::vec3_from(jo["velocity"], "object.velocity");
      if (jo.contains("appear_frame")) o.appear_frame = jo["appear_frame"].get<int>();
      spec.objects.push_back(o);
    }
  }
  spec.validate();
  return spec;
}

inline SceneSpec load_scene(const std::string& path) {
  std::ifstream in(path);
  detail::require(in.good(), "load_scene: cannot open " + path);
  nlohmann::json j;
  in >> j;
  return scene_from_json(j);
}

inline void save_scene(const SceneSpec& spec, const std::string& path) {
  std::ofstream out(path);
  detail::require(out.good(), "save_scene: cannot open " + path);
  out << to_json(spec).dump(2) << '\n';
}

}  // namespace fsk::synth
