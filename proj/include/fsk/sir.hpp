#pragma once

// Sparse instance recognition layers and the machinery around them:
// per-group PointNet-style layer stack, prediction heads, box and
// residual codecs, positive assignment, and proposal-based group
// correction. Forward passes cache what the hand-written backward needs.

#include "fsk/core.hpp"
#include "fsk/dynpool.hpp"
#include "fsk/geometry.hpp"
#include "fsk/nn.hpp"

#include <optional>
#include <vector>

namespace fsk::sir {

// One detection per group: decoded box, logistic score, source group.
struct Proposal {
  Box3D box;
  double score = 0.0;
  int group_id = -1;
};

// Regression target/output layout: center offset in meters, extents in
// log space, yaw as (sin, cos).
struct BoxTarget {
  Vec3 center_offset{0, 0, 0};
  Vec3 log_size{0, 0, 0};
  Eigen::Vector2d yaw_sincos{0, 0};

  Eigen::Matrix<double, 8, 1> to_vec() const {
    Eigen::Matrix<double, 8, 1> v;
    v << center_offset, log_size, yaw_sincos;
    return v;
  }
  static BoxTarget from_vec(const Eigen::Matrix<double, 8, 1>& v) {
    BoxTarget t;
    t.center_offset = v.segment<3>(0);
    t.log_size = v.segment<3>(3);
    t.yaw_sincos = v.segment<2>(6);
    return t;
  }
};

constexpr int kBoxCodeDim = 8;
constexpr double kYawDecodeEps = 1e-9;

inline double decode_yaw(double s, double c) {
  // Degenerate (near-zero) sin/cos pairs decode to yaw 0.
  if (std::abs(s) + std::abs(c) < kYawDecodeEps) return 0.0;
  return std::atan2(s, c);
}

inline BoxTarget encode_box(const Box3D& gt, const Vec3& group_center) {
  BoxTarget t;
  t.center_offset = gt.center - group_center;
  t.log_size = gt.size.array().log();
  t.yaw_sincos << std::sin(gt.yaw), std::cos(gt.yaw);
  return t;
}

inline Box3D decode_box(const BoxTarget& t, const Vec3& group_center) {
  return Box3D(group_center + t.center_offset, t.log_size.array().exp().matrix(),
               decode_yaw(t.yaw_sincos(0), t.yaw_sincos(1)));
}

// Residual codec in the proposal's canonical frame: the center delta is
// rotated by the proposal yaw, sizes are log ratios, yaw is the delta
// angle as (sin, cos). decode(identity) == proposal exactly.
inline BoxTarget encode_residual(const Box3D& gt, const Box3D& proposal) {
  BoxTarget t;
  const Vec3 d = gt.center - proposal.center;
  const double c = std::cos(proposal.yaw), s = std::sin(proposal.yaw);
  t.center_offset << c * d.x() + s * d.y(), -s * d.x() + c * d.y(), d.z();
  t.log_size = (gt.size.array() / proposal.size.array()).log();
  const double dy = gt.yaw - proposal.yaw;
  t.yaw_sincos << std::sin(dy), std::cos(dy);
  return t;
}

inline Box3D decode_residual(const BoxTarget& t, const Box3D& proposal) {
  const double c = std::cos(proposal.yaw), s = std::sin(proposal.yaw);
  const Vec3 d(c * t.center_offset.x() - s * t.center_offset.y(),
               s * t.center_offset.x() + c * t.center_offset.y(), t.center_offset.z());
  const Vec3 size = (proposal.size.array() * t.log_size.array().exp()).matrix();
  const double dy = decode_yaw(t.yaw_sincos(0), t.yaw_sincos(1));
  return Box3D(proposal.center + d, size, proposal.yaw + dy);
}

inline BoxTarget identity_residual() {
  BoxTarget t;
  t.yaw_sincos << 0.0, 1.0;
  return t;
}

// ---------------------------------------------------------------------
// SIR layer stack

// Two LinNormAct stages per layer: stage 1 consumes (features |
// coordinates relative to the group's voted centroid), stage 2 consumes
// (stage-1 output | broadcast per-group max of stage-1 output).
struct SirLayerState {
  nn::LinNormActParams stage1;  // (C_in + 3) -> W
  nn::LinNormActParams stage2;  // 2W -> W
};

struct SirStackParams {
  std::vector<SirLayerState> layers;

  static SirStackParams init(int c_in, const std::vector<int>& widths, Rng& rng) {
    detail::require(!widths.empty(), "SirStackParams: need at least one layer");
    SirStackParams p;
    int c = c_in;
    for (int w : widths) {
      detail::require(w > 0, "SirStackParams: width must be positive");
      SirLayerState s;
      s.stage1 = nn::LinNormActParams::init(c + 3, w, rng);
      s.stage2 = nn::LinNormActParams::init(2 * w, w, rng);
      p.layers.push_back(std::move(s));
      c = w;
    }
    return p;
  }

  // Width of the concatenated per-group feature (sum of per-layer
  // pooled widths).
  int concat_dim() const {
    int d = 0;
    for (const auto& l : layers) d += l.stage1.out();
    return d;
  }

  void register_params(nn::ParamRegistry& r, const std::string& prefix) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      r.add_lna(prefix + ".layer" + std::to_string(l) + ".stage1", &layers[l].stage1);
      r.add_lna(prefix + ".layer" + std::to_string(l) + ".stage2", &layers[l].stage2);
    }
  }
};

struct SirStackGrads {
  struct LayerGrads {
    nn::LinNormActGrads stage1, stage2;
  };
  std::vector<LayerGrads> layers;

  static SirStackGrads zeros_like(const SirStackParams& p) {
    SirStackGrads g;
    for (const auto& l : p.layers)
      g.layers.push_back({nn::LinNormActGrads::zeros_like(l.stage1),
                          nn::LinNormActGrads::zeros_like(l.stage2)});
    return g;
  }

  void register_grads(nn::ParamRegistry& r, const std::string& prefix) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      r.add_lna(prefix + ".layer" + std::to_string(l) + ".stage1", &layers[l].stage1);
      r.add_lna(prefix + ".layer" + std::to_string(l) + ".stage2", &layers[l].stage2);
    }
  }
};

struct SirLayerCache {
  nn::LinNormActCache c1, c2;
  Matd f_prime;                         // stage-1 output
  dynpool::PoolResult<double> pooled;   // max pool of f_prime (values + argmax)
};

struct SirForwardCache {
  Coords rel;                 // N x 3, X - broadcast(centroid)
  Coords centroid;            // M x 3, avg pool of X_voted
  std::vector<SirLayerCache> layers;
  Matd point_features;        // final per-point features
};

// Forward pass of the full stack. Returns the concatenated per-group
// features (M x concat_dim); per-point outputs and every intermediate
// needed by the backward live in `cache` when provided.
inline GroupFeatures sir_forward(const Matd& F0, const Coords& X, const Coords& X_voted,
                                 const GroupIndex& I, const dynpool::PoolPlan& plan,
                                 const SirStackParams& params, int threads = 1,
                                 SirForwardCache* cache = nullptr) {
  detail::require(F0.rows() == I.size() && X.rows() == I.size() && X_voted.rows() == I.size(),
                  "sir_forward: row count mismatch");
  detail::require(!params.layers.empty(), "sir_forward: empty stack");

  const Matd xv = X_voted;
  const auto centroid = dynpool::pool<double>(xv, plan, dynpool::PoolKind::kAvg, threads);
  const Matd rel = X - dynpool::broadcast<double>(centroid.group_values, I, threads);

  SirForwardCache local;
  SirForwardCache& c = cache ? *cache : local;
  c.rel = rel;
  c.centroid = centroid.group_values;
  c.layers.clear();
  c.layers.resize(params.layers.size());

  GroupFeatures concat(I.num_groups, params.concat_dim());
  Matd f = F0;
  int col = 0;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& st = params.layers[l];
    auto& lc = c.layers[l];

    Matd cat1(f.rows(), f.cols() + 3);
    cat1 << f, rel;
    lc.f_prime = nn::lin_norm_act(cat1, st.stage1, &lc.c1);

    lc.pooled = dynpool::pool<double>(lc.f_prime, plan, dynpool::PoolKind::kMax, threads);
    concat.middleCols(col, st.stage1.out()) = lc.pooled.group_values;
    col += st.stage1.out();

    Matd cat2(f.rows(), 2 * st.stage1.out());
    cat2 << lc.f_prime, dynpool::broadcast<double>(lc.pooled.group_values, I, threads);
    f = nn::lin_norm_act(cat2, st.stage2, &lc.c2);
  }
  c.point_features = f;
  return concat;
}

// Single layer as a standalone operation: returns (next point features,
// pooled group features of this layer).
inline std::pair<Matd, GroupFeatures> sir_layer(const Matd& F, const Coords& X,
                                                const Coords& X_voted, const GroupIndex& I,
                                                const SirLayerState& state, int threads = 1) {
  SirStackParams one;
  one.layers.push_back(state);
  const auto plan = dynpool::plan(I);
  SirForwardCache cache;
  GroupFeatures g = sir_forward(F, X, X_voted, I, plan, one, threads, &cache);
  return {cache.point_features, std::move(g)};
}

struct SirBackwardResult {
  Matd grad_F0;
  Coords grad_X_voted;
};

// Backward through the stack given gradients w.r.t. the concatenated
// group features and (optionally) the final per-point features.
// Parameter gradients accumulate into `grads`. The relative-coordinate
// path contributes gradient to X_voted via the avg-pool centroid.
inline SirBackwardResult sir_backward(const GroupFeatures& grad_concat,
                                      const Matd* grad_point_features, const GroupIndex& I,
                                      const dynpool::PoolPlan& plan, const SirStackParams& params,
                                      const SirForwardCache& cache, SirStackGrads& grads) {
  const Eigen::Index N = I.size();
  const auto L = params.layers.size();
  detail::require(cache.layers.size() == L, "sir_backward: cache mismatch");

  Matd grad_f;  // gradient w.r.t. the running point features
  if (grad_point_features)
    grad_f = *grad_point_features;
  else
    grad_f = Matd::Zero(N, params.layers.back().stage2.out());

  Matd grad_rel = Matd::Zero(N, 3);

  int col = params.concat_dim();
  for (std::size_t li = L; li-- > 0;) {
    const auto& st = params.layers[li];
    const auto& lc = cache.layers[li];
    const int w = st.stage1.out();
    col -= w;

    // F_{l+1} = LNA2(cat(F', bcast(max(F')))): split the incoming grad.
    Matd grad_cat2 = nn::lin_norm_act_backward(grad_f, st.stage2, lc.c2, grads.layers[li].stage2);
    Matd grad_fprime = grad_cat2.leftCols(w);
    const Matd grad_bcast = grad_cat2.rightCols(w);

    // Group-feature gradient: the concat slice plus the broadcast path.
    Matd grad_pooled = dynpool::segment_sum<double>(grad_bcast, I);
    grad_pooled += grad_concat.middleCols(col, w);
    grad_fprime += dynpool::pool_backward<double>(grad_pooled, I, lc.pooled, dynpool::PoolKind::kMax);

    // F' = LNA1(cat(F_l, rel)).
    Matd grad_cat1 = nn::lin_norm_act_backward(grad_fprime, st.stage1, lc.c1, grads.layers[li].stage1);
    grad_f = grad_cat1.leftCols(grad_cat1.cols() - 3);
    grad_rel += grad_cat1.rightCols(3);
  }

  // rel = X - broadcast(centroid); centroid = avg(X_voted).
  SirBackwardResult out;
  out.grad_F0 = std::move(grad_f);
  const Matd grad_centroid = -dynpool::segment_sum<double>(grad_rel, I);
  dynpool::PoolResult<double> avg_state;  // avg backward needs no argmax
  out.grad_X_voted = dynpool::pool_backward<double>(grad_centroid, I, avg_state, dynpool::PoolKind::kAvg);
  return out;
}

// ---------------------------------------------------------------------
// Prediction heads

// Two-layer head: LinNormAct hidden layer, then a plain linear output.
struct HeadParams {
  nn::LinNormActParams hidden;
  nn::LinearParams out;

  static HeadParams init(int in, int hidden_width, int out_dim, Rng& rng) {
    HeadParams p;
    p.hidden = nn::LinNormActParams::init(in, hidden_width, rng);
    p.out = nn::LinearParams::init(hidden_width, out_dim, rng);
    return p;
  }

  void register_params(nn::ParamRegistry& r, const std::string& prefix) {
    r.add_lna(prefix + ".hidden", &hidden);
    r.add_linear(prefix + ".out", &out);
  }
};

struct HeadGrads {
  nn::LinNormActGrads hidden;
  nn::LinearGrads out;

  static HeadGrads zeros_like(const HeadParams& p) {
    return {nn::LinNormActGrads::zeros_like(p.hidden), nn::LinearGrads::zeros_like(p.out)};
  }
  void register_grads(nn::ParamRegistry& r, const std::string& prefix) {
    r.add_lna(prefix + ".hidden", &hidden);
    r.add_linear(prefix + ".out", &out);
  }
};

struct HeadCache {
  nn::LinNormActCache c1;
  Matd h;  // hidden activations
};

inline Matd head_forward(const Matd& x, const HeadParams& p, HeadCache* cache = nullptr) {
  HeadCache local;
  HeadCache& c = cache ? *cache : local;
  c.h = nn::lin_norm_act(x, p.hidden, &c.c1);
  return nn::linear(c.h, p.out);
}

inline Matd head_backward(const Matd& grad_y, const HeadParams& p, const HeadCache& c,
                          HeadGrads& g) {
  const Matd grad_h = nn::linear_backward(grad_y, c.h, p.out, g.out);
  return nn::lin_norm_act_backward(grad_h, p.hidden, c.c1, g.hidden);
}

// Decode raw head rows (8 box code channels + 1 class logit) into
// proposals, one per group.
inline std::vector<Proposal> decode_head_output(const Matd& raw, const Coords& group_centers) {
  detail::require(raw.cols() == kBoxCodeDim + 1, "decode_head_output: expected 9 channels");
  detail::require(raw.rows() == group_centers.rows(), "decode_head_output: row mismatch");
  std::vector<Proposal> out;
  out.reserve(static_cast<std::size_t>(raw.rows()));
  for (Eigen::Index g = 0; g < raw.rows(); ++g) {
    const BoxTarget t = BoxTarget::from_vec(raw.row(g).head<kBoxCodeDim>().transpose());
    Proposal p;
    p.box = decode_box(t, group_centers.row(g).transpose());
    p.score = 1.0 / (1.0 + std::exp(-raw(g, kBoxCodeDim)));
    p.group_id = static_cast<int>(g);
    out.push_back(p);
  }
  return out;
}

// Convenience inference op: group features -> proposals.
inline std::vector<Proposal> predict(const GroupFeatures& group_feats, const Coords& group_centers,
                                     const HeadParams& head) {
  if (group_feats.rows() == 0) return {};
  return decode_head_output(head_forward(group_feats, head), group_centers);
}

// A group is positive iff its center lies inside some gt box; when
// several boxes contain it, the nearest gt center wins.
inline std::vector<int> assign_positives(const Coords& group_centers,
                                         const std::vector<Box3D>& gts) {
  std::vector<int> assign(static_cast<std::size_t>(group_centers.rows()), -1);
  for (Eigen::Index g = 0; g < group_centers.rows(); ++g) {
    const Vec3 c = group_centers.row(g).transpose();
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < gts.size(); ++k) {
      if (!point_in_box(c, gts[k])) continue;
      const double d = (gts[k].center - c).squaredNorm();
      if (d < best) {
        best = d;
        assign[static_cast<std::size_t>(g)] = static_cast<int>(k);
      }
    }
  }
  return assign;
}

// ---------------------------------------------------------------------
// Group correction

// Points regrouped by proposal membership. A point inside k proposals
// appears k times (one copy per proposal); points inside no proposal are
// dropped. boundary_feats per copy: signed distances to the 6 canonical
// faces of its proposal (positive inside) plus the distance to the
// proposal center.
struct CorrectedGroups {
  PointSet points;
  std::vector<int> source_rows;  // expanded row -> original row
  GroupIndex index;              // expanded row -> proposal id
  Matd boundary_feats;           // N' x 7
};

inline CorrectedGroups correct_groups(const PointSet& points, const GroupIndex& old_index,
                                      const std::vector<Proposal>& proposals) {
  detail::require(old_index.size() == points.size(), "correct_groups: index size mismatch");
  CorrectedGroups out;
  std::vector<int> ids;
  std::vector<double> feats;
  for (std::size_t p = 0; p < proposals.size(); ++p) {
    const Box3D& b = proposals[p].box;
    const double cy = std::cos(b.yaw), sy = std::sin(b.yaw);
    for (int i = 0; i < points.size(); ++i) {
      const Vec3 pt = points.coords.row(i).transpose();
      if (!point_in_box(pt, b)) continue;
      out.source_rows.push_back(i);
      ids.push_back(static_cast<int>(p));
      const Vec3 d = pt - b.center;
      const double lx = cy * d.x() + sy * d.y();
      const double ly = -sy * d.x() + cy * d.y();
      const double hx = 0.5 * b.size.x(), hy = 0.5 * b.size.y(), hz = 0.5 * b.size.z();
      feats.insert(feats.end(), {hx - lx, hx + lx, hy - ly, hy + ly, hz - d.z(), hz + d.z(),
                                 d.norm()});
    }
  }
  out.points = points.gather(out.source_rows);
  Veci idv(static_cast<Eigen::Index>(ids.size()));
  for (std::size_t i = 0; i < ids.size(); ++i) idv(static_cast<Eigen::Index>(i)) = ids[i];
  out.index = GroupIndex(std::move(idv), static_cast<int>(proposals.size()));
  out.boundary_feats.resize(static_cast<Eigen::Index>(out.source_rows.size()), 7);
  for (std::size_t i = 0; i < out.source_rows.size(); ++i)
    for (int j = 0; j < 7; ++j)
      out.boundary_feats(static_cast<Eigen::Index>(i), j) = feats[i * 7 + static_cast<std::size_t>(j)];
  return out;
}

}  // namespace fsk::sir
