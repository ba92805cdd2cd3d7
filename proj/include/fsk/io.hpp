#pragma once

// Point-cloud file formats: a small binary container and a CSV
// alternative for hand-written fixtures. Both carry coordinates and
// optional per-point features at f32 precision; timestamps are not
// serialized.

#include "fsk/core.hpp"

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fsk::io {

inline constexpr char kPointMagic[4] = {'F', 'S', 'P', 'C'};
inline constexpr std::uint32_t kPointVersion = 1;

// Binary layout: magic "FSPC", u32 version, u32 N, u32 C, then N*3
// little-endian f32 coordinates, then N*C f32 features.
inline void save_fspc(const PointSet& pts, const std::string& path) {
  pts.validate();
  std::ofstream out(path, std::ios::binary);
  detail::require(out.good(), "save_fspc: cannot open " + path);
  out.write(kPointMagic, 4);
  auto put_u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  put_u32(kPointVersion);
  put_u32(static_cast<std::uint32_t>(pts.size()));
  put_u32(static_cast<std::uint32_t>(pts.feature_dim()));
  auto put_f32 = [&](double v) {
    const float f = static_cast<float>(v);
    out.write(reinterpret_cast<const char*>(&f), 4);
  };
  for (Eigen::Index i = 0; i < pts.size(); ++i)
    for (int d = 0; d < 3; ++d) put_f32(pts.coords(i, d));
  for (Eigen::Index i = 0; i < pts.size(); ++i)
    for (Eigen::Index c = 0; c < pts.feature_dim(); ++c) put_f32(pts.features(i, c));
  detail::require(out.good(), "save_fspc: write failed for " + path);
}

inline PointSet load_fspc(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  detail::require(in.good(), "load_fspc: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  detail::require(in.good() && std::equal(magic, magic + 4, kPointMagic),
                  "load_fspc: bad magic in " + path);
  auto get_u32 = [&]() {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  const std::uint32_t version = get_u32();
  detail::require(version == kPointVersion, "load_fspc: unsupported version");
  const std::uint32_t n = get_u32();
  const std::uint32_t c = get_u32();
  PointSet pts;
  pts.coords.resize(n, 3);
  pts.features.resize(n, c);
  auto get_f32 = [&]() {
    float f = 0;
    in.read(reinterpret_cast<char*>(&f), 4);
    return static_cast<double>(f);
  };
  for (std::uint32_t i = 0; i < n; ++i)
    for (int d = 0; d < 3; ++d) pts.coords(i, d) = get_f32();
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t k = 0; k < c; ++k) pts.features(i, k) = get_f32();
  detail::require(in.good(), "load_fspc: truncated file " + path);
  return pts;
}

// CSV with header `x,y,z[,f0,f1,...]`.
inline void save_csv(const PointSet& pts, const std::string& path) {
  pts.validate();
  std::ofstream out(path);
  detail::require(out.good(), "save_csv: cannot open " + path);
  out << "x,y,z";
  for (Eigen::Index c = 0; c < pts.feature_dim(); ++c) out << ",f" << c;
  out << '\n';
  out.precision(9);
  for (Eigen::Index i = 0; i < pts.size(); ++i) {
    out << pts.coords(i, 0) << ',' << pts.coords(i, 1) << ',' << pts.coords(i, 2);
    for (Eigen::Index c = 0; c < pts.feature_dim(); ++c) out << ',' << pts.features(i, c);
    out << '\n';
  }
  detail::require(out.good(), "save_csv: write failed for " + path);
}

inline PointSet load_csv(const std::string& path) {
  std::ifstream in(path);
  detail::require(in.good(), "load_csv: cannot open " + path);
  std::string line;
  detail::require(static_cast<bool>(std::getline(in, line)), "load_csv: empty file " + path);
  int cols = 1;
  for (char ch : line)
    if (ch == ',') ++cols;
  detail::require(cols >= 3 && line.rfind("x,y,z", 0) == 0,
                  "load_csv: header must start with x,y,z");
  const int feat = cols - 3;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    detail::require(static_cast<int>(row.size()) == cols, "load_csv: ragged row in " + path);
    rows.push_back(std::move(row));
  }
  PointSet pts;
  pts.coords.resize(static_cast<Eigen::Index>(rows.size()), 3);
  pts.features.resize(static_cast<Eigen::Index>(rows.size()), feat);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (int d = 0; d < 3; ++d) pts.coords(static_cast<Eigen::Index>(i), d) = rows[i][static_cast<std::size_t>(d)];
    for (int c = 0; c < feat; ++c)
      pts.features(static_cast<Eigen::Index>(i), c) = rows[i][static_cast<std::size_t>(3 + c)];
  }
  return pts;
}

}  // namespace fsk::io
