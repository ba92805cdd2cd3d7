#pragma once

// Vote-and-cluster instance grouping: threshold foreground votes, build a
// radius graph over voted centers with a uniform spatial hash, and label
// connected components with Union-Find.

#include "fsk/core.hpp"
#include "fsk/dynpool.hpp"

#include <unordered_map>
#include <vector>

namespace fsk::grouping {

// Per-point foreground probability and center offset (point -> predicted
// object center, meters).
struct VoteOutput {
  Vecd foreground_prob;
  Coords offsets;

  void validate(int n_points) const {
    detail::require(foreground_prob.size() == n_points && offsets.rows() == n_points,
                    "VoteOutput: size mismatch");
    for (Eigen::Index i = 0; i < foreground_prob.size(); ++i)
      detail::require(std::isfinite(foreground_prob(i)) && foreground_prob(i) >= 0.0 &&
                          foreground_prob(i) <= 1.0,
                      "VoteOutput: probability out of [0,1]");
  }
};

// Disjoint sets with path compression and union by rank.
class UnionFind {
 public:
  explicit UnionFind(int n) : parent_(static_cast<std::size_t>(n)), rank_(static_cast<std::size_t>(n), 0) {
    for (int i = 0; i < n; ++i) parent_[static_cast<std::size_t>(i)] = i;
  }

  int find(int x) {
    while (parent_[static_cast<std::size_t>(x)] != x) {
      parent_[static_cast<std::size_t>(x)] = parent_[static_cast<std::size_t>(parent_[static_cast<std::size_t>(x)])];
      x = parent_[static_cast<std::size_t>(x)];
    }
    return x;
  }

  // Returns true if the two elements were in different sets.
  bool unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    if (rank_[static_cast<std::size_t>(a)] < rank_[static_cast<std::size_t>(b)]) std::swap(a, b);
    parent_[static_cast<std::size_t>(b)] = a;
    if (rank_[static_cast<std::size_t>(a)] == rank_[static_cast<std::size_t>(b)]) ++rank_[static_cast<std::size_t>(a)];
    return true;
  }

  int size() const { return static_cast<int>(parent_.size()); }

 private:
  std::vector<int> parent_;
  std::vector<int> rank_;
};

// Foreground selection + voted centers.
struct VotedCenters {
  std::vector<std::uint8_t> mask;  // length N
  std::vector<int> rows;           // original row of each selected point
  Coords centers;                  // K x 3, coords + offsets of selected points
};

inline VotedCenters vote_centers(const PointSet& points, const VoteOutput& votes,
                                 double fg_threshold) {
  votes.validate(points.size());
  VotedCenters out;
  out.mask.assign(static_cast<std::size_t>(points.size()), 0);
  for (int i = 0; i < points.size(); ++i) {
    if (votes.foreground_prob(i) >= fg_threshold) {
      out.mask[static_cast<std::size_t>(i)] = 1;
      out.rows.push_back(i);
    }
  }
  out.centers.resize(static_cast<Eigen::Index>(out.rows.size()), 3);
  for (std::size_t k = 0; k < out.rows.size(); ++k)
    out.centers.row(static_cast<Eigen::Index>(k)) =
        points.coords.row(out.rows[k]) + votes.offsets.row(out.rows[k]);
  return out;
}

// Connected components of the radius graph over centers (Euclidean
// distance strictly below radius). Candidate pairs come from a uniform
// grid with cell size = radius (27-cell neighborhood), which cannot miss
// a pair within radius. Components are renumbered by minimum member
// index, so the labeling is independent of hash iteration order.
inline GroupIndex ccl_group(const Coords& centers, double radius) {
  detail::require(radius > 0.0, "ccl_group: radius must be positive");
  detail::require(centers.allFinite(), "ccl_group: non-finite center");
  const int K = static_cast<int>(centers.rows());

  std::unordered_map<VoxelKey, std::vector<int>, VoxelKeyHash> grid;
  grid.reserve(static_cast<std::size_t>(K) * 2);
  std::vector<VoxelKey> keys(static_cast<std::size_t>(K));
  const Vec3 cell(radius, radius, radius);
  for (int i = 0; i < K; ++i)
    keys[static_cast<std::size_t>(i)] = quantize_point(centers.row(i).transpose(), cell);

  UnionFind uf(K);
  const double r2 = radius * radius;
  for (int i = 0; i < K; ++i) {
    const VoxelKey& k = keys[static_cast<std::size_t>(i)];
    for (std::int64_t dx = -1; dx <= 1; ++dx)
      for (std::int64_t dy = -1; dy <= 1; ++dy)
        for (std::int64_t dz = -1; dz <= 1; ++dz) {
          const auto it = grid.find(VoxelKey{k.x + dx, k.y + dy, k.z + dz});
          if (it == grid.end()) continue;
          for (int j : it->second) {
            if ((centers.row(i) - centers.row(j)).squaredNorm() < r2) uf.unite(i, j);
          }
        }
    grid[k].push_back(i);
  }

  // Renumber components in order of their minimum member index.
  Veci ids(K);
  std::unordered_map<int, int> root_to_id;
  root_to_id.reserve(static_cast<std::size_t>(K));
  int next = 0;
  for (int i = 0; i < K; ++i) {
    const int root = uf.find(i);
    auto [it, inserted] = root_to_id.try_emplace(root, next);
    if (inserted) ++next;
    ids(i) = it->second;
  }
  return GroupIndex(std::move(ids), next);
}

// Spread component ids from voted points back to the full point set;
// unselected points become background.
inline GroupIndex lift_to_points(const std::vector<std::uint8_t>& mask,
                                 const GroupIndex& voted_groups) {
  std::size_t selected = 0;
  for (std::uint8_t m : mask) selected += m ? 1 : 0;
  detail::require(static_cast<int>(selected) == voted_groups.size(),
                  "lift_to_points: mask count does not match voted group count");
  Veci ids(static_cast<Eigen::Index>(mask.size()));
  int k = 0;
  for (std::size_t i = 0; i < mask.size(); ++i)
    ids(static_cast<Eigen::Index>(i)) = mask[i] ? voted_groups.ids(k++) : kBackground;
  return GroupIndex(std::move(ids), voted_groups.num_groups);
}

// Centroid of voted centers per group, via avg pooling.
inline Coords group_centers(const Coords& centers, const GroupIndex& groups, int threads = 1) {
  detail::require(static_cast<int>(centers.rows()) == groups.size(),
                  "group_centers: size mismatch");
  const auto p = dynpool::plan(groups);
  const Matd cm = centers;
  const auto pooled = dynpool::pool<double>(cm, p, dynpool::PoolKind::kAvg, threads);
  return pooled.group_values;
}

}  // namespace fsk::grouping
