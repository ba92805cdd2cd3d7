#pragma once

// Exact IoU for upright yawed boxes: convex polygon clipping in the
// ground plane times the z-extent overlap.

#include "fsk/core.hpp"

#include <algorithm>
#include <array>
#include <vector>

namespace fsk {
namespace detail {

struct Pt2 {
  double x, y;
};

// BEV footprint corners in counter-clockwise order.
inline std::array<Pt2, 4> bev_corners(const Box3D& b) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double hl = 0.5 * b.size.x(), hw = 0.5 * b.size.y();
  std::array<Pt2, 4> local{{{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}}};
  std::array<Pt2, 4> out{};
  for (int i = 0; i < 4; ++i) {
    out[i] = {b.center.x() + c * local[i].x - s * local[i].y,
              b.center.y() + s * local[i].x + c * local[i].y};
  }
  return out;
}

inline double cross(const Pt2& o, const Pt2& a, const Pt2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Shoelace area; vertices counter-clockwise yield a non-negative value.
inline double polygon_area(const std::vector<Pt2>& poly) {
  if (poly.size() < 3) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0, n = poly.size(); i < n; ++i) {
    const Pt2& p = poly[i];
    const Pt2& q = poly[(i + 1) % n];
    acc += p.x * q.y - p.y * q.x;
  }
  return 0.5 * acc;
}

// Sutherland-Hodgman clip of a convex subject polygon against the
// half-plane left of directed edge a->b (boundary inclusive).
inline std::vector<Pt2> clip_edge(const std::vector<Pt2>& subject, const Pt2& a, const Pt2& b) {
  std::vector<Pt2> out;
  out.reserve(subject.size() + 1);
  const std::size_t n = subject.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Pt2& cur = subject[i];
    const Pt2& nxt = subject[(i + 1) % n];
    const double dc = cross(a, b, cur);
    const double dn = cross(a, b, nxt);
    if (dc >= 0.0) out.push_back(cur);
    if ((dc > 0.0 && dn < 0.0) || (dc < 0.0 && dn > 0.0)) {
      const double t = dc / (dc - dn);
      out.push_back({cur.x + t * (nxt.x - cur.x), cur.y + t * (nxt.y - cur.y)});
    }
  }
  return out;
}

inline double bev_intersection_area(const Box3D& a, const Box3D& b) {
  const auto ca = bev_corners(a);
  const auto cb = bev_corners(b);
  std::vector<Pt2> poly(ca.begin(), ca.end());
  for (int i = 0; i < 4 && !poly.empty(); ++i)
    poly = clip_edge(poly, cb[static_cast<std::size_t>(i)], cb[static_cast<std::size_t>((i + 1) % 4)]);
  return std::max(0.0, polygon_area(poly));
}

}  // namespace detail

// Intersection-over-union of two upright yawed boxes. Exact: BEV overlap
// is a convex polygon clip, the z overlap a 1D interval.
inline double box_iou_3d(const Box3D& a, const Box3D& b) {
  const double area = detail::bev_intersection_area(a, b);
  const double za = std::min(a.center.z() + 0.5 * a.size.z(), b.center.z() + 0.5 * b.size.z()) -
                    std::max(a.center.z() - 0.5 * a.size.z(), b.center.z() - 0.5 * b.size.z());
  const double inter = area * std::max(0.0, za);
  const double uni = a.volume() + b.volume() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace fsk
