#pragma once

// Core value types shared by every module: point sets, ragged group
// indices, 3D boxes with yaw, and voxel quantization.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace fsk {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Matd = MatrixX<double>;
using Matf = MatrixX<float>;
using Veci = Eigen::VectorXi;
using Vecd = Eigen::VectorXd;
using Vec3 = Eigen::Vector3d;
// N x 3 coordinate block, meters.
using Coords = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

constexpr double kPi = 3.14159265358979323846;

// Group id assigned to points that belong to no instance.
constexpr int kBackground = -1;

namespace detail {
inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}
}  // namespace detail

// Normalize an angle to (-pi, pi]. Exact identity on in-range input, so
// normalization is idempotent at the bit level.
inline double normalize_yaw(double yaw) {
  detail::require(std::isfinite(yaw), "normalize_yaw: non-finite angle");
  if (yaw > -kPi && yaw <= kPi) return yaw;
  double y = std::fmod(yaw + kPi, 2.0 * kPi);
  if (y <= 0.0) y += 2.0 * kPi;
  return y - kPi;
}

// A set of points with optional per-point features and frame timestamps.
// coords is N x 3; features is N x C (C may be 0); timestamps has length N
// or 0 when absent.
struct PointSet {
  Coords coords;
  Matd features;
  Vecd timestamps;

  PointSet() : coords(0, 3), features(0, 0), timestamps(0) {}

  int size() const { return static_cast<int>(coords.rows()); }
  int feature_dim() const { return static_cast<int>(features.cols()); }
  bool has_features() const { return features.rows() > 0; }
  bool has_timestamps() const { return timestamps.size() > 0; }

  void validate() const {
    detail::require(coords.allFinite(), "PointSet: non-finite coordinate");
    detail::require(features.rows() == 0 || features.rows() == coords.rows(),
                    "PointSet: feature rows must match point count");
    detail::require(timestamps.size() == 0 || timestamps.size() == coords.rows(),
                    "PointSet: timestamp count must match point count");
  }

  // Row-gather: result holds rows[i] of coords/features/timestamps.
  PointSet gather(const std::vector<int>& rows) const {
    PointSet out;
    out.coords.resize(static_cast<Eigen::Index>(rows.size()), 3);
    if (has_features()) out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
    if (has_timestamps()) out.timestamps.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      detail::require(rows[i] >= 0 && rows[i] < size(), "PointSet::gather: row out of range");
      out.coords.row(static_cast<Eigen::Index>(i)) = coords.row(rows[i]);
      if (has_features()) out.features.row(static_cast<Eigen::Index>(i)) = features.row(rows[i]);
      if (has_timestamps()) out.timestamps(static_cast<Eigen::Index>(i)) = timestamps(rows[i]);
    }
    return out;
  }
};

// Concatenate two point sets. Feature/timestamp presence must agree unless
// one side is empty.
inline PointSet concat(const PointSet& a, const PointSet& b) {
  if (a.size() == 0) return b;
  if (b.size() == 0) return a;
  detail::require(a.has_features() == b.has_features() &&
                      (!a.has_features() || a.features.cols() == b.features.cols()),
                  "concat: feature layout mismatch");
  detail::require(a.has_timestamps() == b.has_timestamps(), "concat: timestamp layout mismatch");
  PointSet out;
  out.coords.resize(a.size() + b.size(), 3);
  out.coords << a.coords, b.coords;
  if (a.has_features()) {
    out.features.resize(a.size() + b.size(), a.features.cols());
    out.features << a.features, b.features;
  }
  if (a.has_timestamps()) {
    out.timestamps.resize(a.size() + b.size());
    out.timestamps << a.timestamps, b.timestamps;
  }
  return out;
}

// Ragged group assignment: ids[i] in [-1, num_groups), -1 meaning
// background. Groups may be empty.
struct GroupIndex {
  Veci ids;
  int num_groups = 0;

  GroupIndex() : ids(0) {}
  GroupIndex(Veci ids_, int num_groups_) : ids(std::move(ids_)), num_groups(num_groups_) {}

  int size() const { return static_cast<int>(ids.size()); }

  void validate() const {
    detail::require(num_groups >= 0, "GroupIndex: negative num_groups");
    for (Eigen::Index i = 0; i < ids.size(); ++i)
      detail::require(ids(i) >= kBackground && ids(i) < num_groups,
                      "GroupIndex: id out of range at row " + std::to_string(i));
  }

  // Member count per group (background excluded).
  std::vector<int> group_sizes() const {
    std::vector<int> sizes(static_cast<std::size_t>(num_groups), 0);
    for (Eigen::Index i = 0; i < ids.size(); ++i)
      if (ids(i) >= 0) ++sizes[static_cast<std::size_t>(ids(i))];
    return sizes;
  }
};

// Per-group pooled features, M x C with M == num_groups.
using GroupFeatures = Matd;

// Upright 3D box: center, full extents (length along local x at yaw 0,
// width along local y, height along z), yaw about +z in radians.
struct Box3D {
  Vec3 center{0.0, 0.0, 0.0};
  Vec3 size{1.0, 1.0, 1.0};
  double yaw = 0.0;

  Box3D() = default;
  Box3D(const Vec3& center_, const Vec3& size_, double yaw_)
      : center(center_), size(size_), yaw(normalize_yaw(yaw_)) {
    detail::require(center.allFinite() && size.allFinite(), "Box3D: non-finite field");
    detail::require(size.minCoeff() > 0.0, "Box3D: extents must be positive");
  }

  double volume() const { return size.x() * size.y() * size.z(); }
};

// Closed containment test: boundary points count as inside.
inline bool point_in_box(const Vec3& p, const Box3D& box) {
  const Vec3 d = p - box.center;
  const double c = std::cos(box.yaw);
  const double s = std::sin(box.yaw);
  // Rotate the offset into the box frame (inverse yaw rotation).
  const double lx = c * d.x() + s * d.y();
  const double ly = -s * d.x() + c * d.y();
  return std::abs(lx) <= 0.5 * box.size.x() && std::abs(ly) <= 0.5 * box.size.y() &&
         std::abs(d.z()) <= 0.5 * box.size.z();
}

// Integer voxel coordinate from floor(coord / qsize) per axis.
struct VoxelKey {
  std::int64_t x = 0;
  std::int64_t y = 0;
  std::int64_t z = 0;

  friend bool operator==(const VoxelKey&, const VoxelKey&) = default;
  friend auto operator<=>(const VoxelKey&, const VoxelKey&) = default;
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const {
    std::uint64_t h = 0x9e3779b97f4a7c15ull;
    for (std::uint64_t v : {static_cast<std::uint64_t>(k.x), static_cast<std::uint64_t>(k.y),
                            static_cast<std::uint64_t>(k.z)}) {
      h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
      h *= 0xbf58476d1ce4e5b9ull;
      h ^= h >> 29;
    }
    return static_cast<std::size_t>(h);
  }
};

inline VoxelKey quantize_point(const Vec3& p, const Vec3& qsize) {
  detail::require(qsize.minCoeff() > 0.0, "quantize: voxel size must be positive");
  detail::require(p.allFinite(), "quantize: non-finite coordinate");
  return VoxelKey{static_cast<std::int64_t>(std::floor(p.x() / qsize.x())),
                  static_cast<std::int64_t>(std::floor(p.y() / qsize.y())),
                  static_cast<std::int64_t>(std::floor(p.z() / qsize.z()))};
}

// Per-point voxel keys at the given voxel size.
inline std::vector<VoxelKey> quantize(const PointSet& points, const Vec3& qsize) {
  std::vector<VoxelKey> keys;
  keys.reserve(static_cast<std::size_t>(points.size()));
  for (int i = 0; i < points.size(); ++i)
    keys.push_back(quantize_point(points.coords.row(i).transpose(), qsize));
  return keys;
}

}  // namespace fsk
