#pragma once

// End-to-end detector composition: stub point encoder with voting heads,
// vote-and-cluster grouping, first-stage SIR with prediction head, group
// correction, second-stage SIR refinement, the six-term training loss,
// and a full analytic backward over every parameter.
//
// Discrete structure (foreground mask, group partition, proposal
// membership at correction) and regression targets are treated as
// constants by the backward pass (stop-gradient). The FrozenStructure
// mechanism lets a finite-difference closure pin exactly the same
// structure, making analytic and numeric gradients comparable.

#include "fsk/core.hpp"
#include "fsk/dynpool.hpp"
#include "fsk/geometry.hpp"
#include "fsk/grouping.hpp"
#include "fsk/losses.hpp"
#include "fsk/nn.hpp"
#include "fsk/sir.hpp"

#include <string>
#include <vector>

namespace fsk::model {

// ---------------------------------------------------------------------
// Stub encoder: a small per-point MLP over (coords | offset to the
// point's voxel center), producing features plus foreground/vote heads.
// Stands in for a real sparse voxel encoder.

inline Vec3 voxel_center(const Vec3& p, const Vec3& qsize) {
  const VoxelKey k = quantize_point(p, qsize);
  return Vec3((static_cast<double>(k.x) + 0.5) * qsize.x(),
              (static_cast<double>(k.y) + 0.5) * qsize.y(),
              (static_cast<double>(k.z) + 0.5) * qsize.z());
}

// Offset from a point to the center of its voxel.
inline Vec3 voxel_center_offset(const Vec3& p, const Vec3& qsize) {
  return voxel_center(p, qsize) - p;
}

struct StubEncoderParams {
  Vec3 voxel_size{0.25, 0.25, 0.25};
  nn::LinNormActParams trunk1;  // 6 -> hidden
  nn::LinNormActParams trunk2;  // hidden -> out
  nn::LinearParams fg_head;     // out -> 1
  nn::LinearParams vote_head;   // out -> 3

  static StubEncoderParams init(int hidden, int out, const Vec3& voxel, Rng& rng) {
    StubEncoderParams p;
    p.voxel_size = voxel;
    p.trunk1 = nn::LinNormActParams::init(6, hidden, rng);
    p.trunk2 = nn::LinNormActParams::init(hidden, out, rng);
    p.fg_head = nn::LinearParams::init(out, 1, rng);
    p.vote_head = nn::LinearParams::init(out, 3, rng);
    return p;
  }

  int out_dim() const { return trunk2.out(); }

  void register_params(nn::ParamRegistry& r, const std::string& prefix) {
    r.add_lna(prefix + ".trunk1", &trunk1);
    r.add_lna(prefix + ".trunk2", &trunk2);
    r.add_linear(prefix + ".fg", &fg_head);
    r.add_linear(prefix + ".vote", &vote_head);
  }
};

struct StubEncoderGrads {
  nn::LinNormActGrads trunk1, trunk2;
  nn::LinearGrads fg_head, vote_head;

  static StubEncoderGrads zeros_like(const StubEncoderParams& p) {
    return {nn::LinNormActGrads::zeros_like(p.trunk1), nn::LinNormActGrads::zeros_like(p.trunk2),
            nn::LinearGrads::zeros_like(p.fg_head), nn::LinearGrads::zeros_like(p.vote_head)};
  }
  void register_grads(nn::ParamRegistry& r, const std::string& prefix) {
    r.add_lna(prefix + ".trunk1", &trunk1);
    r.add_lna(prefix + ".trunk2", &trunk2);
    r.add_linear(prefix + ".fg", &fg_head);
    r.add_linear(prefix + ".vote", &vote_head);
  }
};

struct StubEncoderCache {
  Matd input;  // N x 6
  nn::LinNormActCache c1, c2;
  Matd t1, t2;
};

struct EncoderOutput {
  Matd features;   // N x C
  Vecd fg_logits;  // N
  grouping::VoteOutput votes;
};

inline EncoderOutput stub_encoder(const PointSet& points, const StubEncoderParams& p,
                                  StubEncoderCache* cache = nullptr) {
  const Eigen::Index N = points.size();
  Matd input(N, 6);
  for (Eigen::Index i = 0; i < N; ++i) {
    const Vec3 pt = points.coords.row(i).transpose();
    input.row(i).head<3>() = pt.transpose();
    input.row(i).tail<3>() = voxel_center_offset(pt, p.voxel_size).transpose();
  }
  StubEncoderCache local;
  StubEncoderCache& c = cache ? *cache : local;
  c.input = input;
  c.t1 = nn::lin_norm_act(input, p.trunk1, &c.c1);
  c.t2 = nn::lin_norm_act(c.t1, p.trunk2, &c.c2);

  EncoderOutput out;
  out.features = c.t2;
  const Matd fg = nn::linear(c.t2, p.fg_head);
  out.fg_logits = fg.col(0);
  out.votes.offsets = nn::linear(c.t2, p.vote_head);
  out.votes.foreground_prob.resize(N);
  for (Eigen::Index i = 0; i < N; ++i)
    out.votes.foreground_prob(i) = losses::sigmoid(out.fg_logits(i));
  return out;
}

// Backward: grads w.r.t. features / fg logits / vote offsets in, encoder
// parameter grads out.
inline void stub_encoder_backward(const Matd& grad_features, const Vecd& grad_fg_logits,
                                  const Matd& grad_offsets, const StubEncoderParams& p,
                                  const StubEncoderCache& c, StubEncoderGrads& g) {
  Matd grad_t2 = grad_features;
  const Matd gfg = grad_fg_logits;
  grad_t2 += nn::linear_backward(gfg, c.t2, p.fg_head, g.fg_head);
  grad_t2 += nn::linear_backward(grad_offsets, c.t2, p.vote_head, g.vote_head);
  const Matd grad_t1 = nn::lin_norm_act_backward(grad_t2, p.trunk2, c.c2, g.trunk2);
  nn::lin_norm_act_backward(grad_t1, p.trunk1, c.c1, g.trunk1);
}

// Ground-truth votes: probability 1 and exact center offset for points
// inside a gt box (nearest center if several), 0 / zero offset outside.
inline grouping::VoteOutput oracle_votes(const PointSet& points, const std::vector<Box3D>& gts) {
  grouping::VoteOutput v;
  v.foreground_prob = Vecd::Zero(points.size());
  v.offsets = Coords::Zero(points.size(), 3);
  for (int i = 0; i < points.size(); ++i) {
    const Vec3 pt = points.coords.row(i).transpose();
    double best = std::numeric_limits<double>::infinity();
    int best_k = -1;
    for (std::size_t k = 0; k < gts.size(); ++k) {
      if (!point_in_box(pt, gts[k])) continue;
      const double d = (gts[k].center - pt).squaredNorm();
      if (d < best) {
        best = d;
        best_k = static_cast<int>(k);
      }
    }
    if (best_k >= 0) {
      v.foreground_prob(i) = 1.0;
      v.offsets.row(i) = (gts[static_cast<std::size_t>(best_k)].center - pt).transpose();
    }
  }
  return v;
}

// ---------------------------------------------------------------------
// Model configuration and parameters

struct FsdConfig {
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
  // Oracle switches for pipeline and acceptance harnesses.
  bool oracle_votes = false;        // replace predicted votes with gt votes
  bool oracle_boxes = false;        // stage-1 boxes from gt encode/decode
  bool identity_residual = false;   // stage-2 refinement is the identity
};

struct FsdParams {
  StubEncoderParams encoder;
  sir::SirStackParams sir1;
  sir::HeadParams head1;
  sir::SirStackParams sir2;
  sir::HeadParams head2;

  static FsdParams init(const FsdConfig& cfg) {
    Rng rng(cfg.init_seed);
    FsdParams p;
    p.encoder = StubEncoderParams::init(cfg.encoder_hidden, cfg.encoder_out, cfg.voxel_size, rng);
    p.sir1 = sir::SirStackParams::init(cfg.encoder_out, cfg.sir_widths, rng);
    p.head1 = sir::HeadParams::init(p.sir1.concat_dim(), cfg.head_hidden, sir::kBoxCodeDim + 1, rng);
    p.sir2 = sir::SirStackParams::init(cfg.encoder_out + 7, cfg.sir2_widths, rng);
    p.head2 = sir::HeadParams::init(p.sir2.concat_dim(), cfg.head_hidden, sir::kBoxCodeDim + 1, rng);
    return p;
  }

  void register_params(nn::ParamRegistry& r) {
    encoder.register_params(r, "encoder");
    sir1.register_params(r, "sir1");
    head1.register_params(r, "head1");
    sir2.register_params(r, "sir2");
    head2.register_params(r, "head2");
  }
};

struct FsdGrads {
  StubEncoderGrads encoder;
  sir::SirStackGrads sir1;
  sir::HeadGrads head1;
  sir::SirStackGrads sir2;
  sir::HeadGrads head2;

  static FsdGrads zeros_like(const FsdParams& p) {
    return {StubEncoderGrads::zeros_like(p.encoder), sir::SirStackGrads::zeros_like(p.sir1),
            sir::HeadGrads::zeros_like(p.head1), sir::SirStackGrads::zeros_like(p.sir2),
            sir::HeadGrads::zeros_like(p.head2)};
  }
  void register_grads(nn::ParamRegistry& r) {
    encoder.register_grads(r, "encoder");
    sir1.register_grads(r, "sir1");
    head1.register_grads(r, "head1");
    sir2.register_grads(r, "sir2");
    head2.register_grads(r, "head2");
  }
};

// Discrete/detached quantities pinned across finite-difference
// evaluations: selection structure, correction structure, and every loss
// target. Continuous quantities are always recomputed from parameters.
struct FrozenStructure {
  std::vector<std::uint8_t> mask;        // foreground selection
  std::vector<int> fg_rows;
  GroupIndex fg_index;                    // groups over selected rows
  std::vector<sir::Proposal> proposals;   // detached stage-1 boxes for correction
  sir::CorrectedGroups corrected;
  // Loss targets.
  Vecd sem_labels;                        // N
  std::vector<int> vote_rows;
  Matd vote_targets;
  std::vector<int> assignment;            // group -> gt or -1
  Matd reg_targets;                       // |pos_groups| x 8
  std::vector<int> pos_groups;
  Vecd cls_labels;                        // M
  Matd res_targets;                       // |pos_props| x 8
  std::vector<int> pos_props;
  Vecd iou_targets;                       // P
};

struct FsdOutputs {
  std::vector<sir::Proposal> proposals;
  std::vector<sir::Proposal> refined;
  std::vector<std::uint8_t> fg_mask;
  GroupIndex point_groups;  // over all input points, -1 background
  Coords group_centers;
  losses::LossBreakdown loss;
};

struct FsdForwardCache {
  // Stage 0: encoder.
  StubEncoderCache enc;
  EncoderOutput enc_out;
  // Selection / grouping.
  std::vector<int> fg_rows;
  GroupIndex fg_index;
  dynpool::PoolPlan plan1;
  Coords centers;  // K x 3 voted centers
  // Stage 1.
  Matd F0;
  sir::SirForwardCache sir1;
  GroupFeatures gf1;
  sir::HeadCache head1;
  Matd raw1;
  // Stage 2.
  sir::CorrectedGroups corrected;
  dynpool::PoolPlan plan2;
  Matd F02;
  Coords Xv2;
  sir::SirForwardCache sir2;
  GroupFeatures gf2;
  sir::HeadCache head2;
  Matd raw2;
  bool stage2_ran = false;
  // Loss context (targets are stop-gradient constants).
  FrozenStructure frozen;
  bool train = false;
};

class FsdModel {
 public:
  explicit FsdModel(const FsdConfig& cfg) : cfg_(cfg), params_(FsdParams::init(cfg)) {}

  const FsdConfig& config() const { return cfg_; }
  FsdParams& params() { return params_; }
  const FsdParams& params() const { return params_; }

  // Full forward. `gts` drive labels/targets when `train` is true and
  // the oracle switches in any mode; may be empty. When `frozen` is
  // given, all discrete structure and targets come from it.
  FsdOutputs forward(const PointSet& points, const std::vector<Box3D>& gts, bool train,
                     FsdForwardCache* cache = nullptr,
                     const FrozenStructure* frozen = nullptr) const {
    FsdForwardCache local;
    FsdForwardCache& c = cache ? *cache : local;
    c.train = train;
    FsdOutputs out;
    const Eigen::Index N = points.size();
    points.validate();

    // Encoder + votes.
    c.enc_out = stub_encoder(points, params_.encoder, &c.enc);
    grouping::VoteOutput votes = cfg_.oracle_votes ? oracle_votes(points, gts) : c.enc_out.votes;

    // Foreground selection and grouping: recompute or take frozen.
    if (frozen) {
      c.fg_rows = frozen->fg_rows;
      c.fg_index = frozen->fg_index;
      out.fg_mask = frozen->mask;
    } else {
      const auto voted = grouping::vote_centers(points, votes, cfg_.fg_threshold);
      out.fg_mask = voted.mask;
      c.fg_rows = voted.rows;
      c.fg_index = grouping::ccl_group(voted.centers, cfg_.radius);
    }
    const auto K = static_cast<Eigen::Index>(c.fg_rows.size());
    const int M = c.fg_index.num_groups;

    // Voted centers for the selected rows (parameter-dependent).
    c.centers.resize(K, 3);
    for (Eigen::Index k = 0; k < K; ++k)
      c.centers.row(k) = points.coords.row(c.fg_rows[static_cast<std::size_t>(k)]) +
                         votes.offsets.row(c.fg_rows[static_cast<std::size_t>(k)]);

    out.point_groups = grouping::lift_to_points(out.fg_mask.empty()
                                                    ? std::vector<std::uint8_t>(static_cast<std::size_t>(N), 0)
                                                    : out.fg_mask,
                                                c.fg_index);

    // Stage 1: SIR over selected rows grouped by the voted partition.
    c.plan1 = dynpool::plan(c.fg_index, cfg_.chunk_size);
    c.F0.resize(K, c.enc_out.features.cols());
    Coords X1(K, 3);
    for (Eigen::Index k = 0; k < K; ++k) {
      c.F0.row(k) = c.enc_out.features.row(c.fg_rows[static_cast<std::size_t>(k)]);
      X1.row(k) = points.coords.row(c.fg_rows[static_cast<std::size_t>(k)]);
    }
    c.gf1 = sir::sir_forward(c.F0, X1, c.centers, c.fg_index, c.plan1, params_.sir1, cfg_.threads,
                             &c.sir1);
    out.group_centers = c.sir1.centroid;
    c.raw1 = M > 0 ? sir::head_forward(c.gf1, params_.head1, &c.head1) : Matd(0, sir::kBoxCodeDim + 1);

    // Targets / assignment.
    std::vector<int> assignment;
    if (frozen) {
      assignment = frozen->assignment;
    } else {
      assignment = sir::assign_positives(out.group_centers, gts);
    }

    // Stage-1 proposals.
    if (cfg_.oracle_boxes) {
      out.proposals.reserve(static_cast<std::size_t>(M));
      for (int g = 0; g < M; ++g) {
        const Vec3 ctr = out.group_centers.row(g).transpose();
        sir::Proposal p;
        if (assignment[static_cast<std::size_t>(g)] >= 0) {
          const Box3D& gt = gts[static_cast<std::size_t>(assignment[static_cast<std::size_t>(g)])];
          p.box = sir::decode_box(sir::encode_box(gt, ctr), ctr);
          p.score = 1.0;
        } else {
          p.box = sir::decode_box(sir::BoxTarget{}, ctr);
          p.score = 0.0;
        }
        p.group_id = g;
        out.proposals.push_back(p);
      }
    } else {
      out.proposals = sir::decode_head_output(c.raw1, out.group_centers);
    }

    // Stage 2: correction + SIR2 over proposal interiors (proposals
    // detached).
    if (frozen) {
      c.frozen = *frozen;
    } else {
      c.frozen.mask = out.fg_mask;
      c.frozen.fg_rows = c.fg_rows;
      c.frozen.fg_index = c.fg_index;
      c.frozen.proposals = out.proposals;
      c.frozen.corrected = sir::correct_groups(points, out.point_groups, out.proposals);
      c.frozen.assignment = assignment;
    }
    c.corrected = c.frozen.corrected;
    const auto P = static_cast<int>(c.frozen.proposals.size());
    const auto N2 = static_cast<Eigen::Index>(c.corrected.source_rows.size());

    c.stage2_ran = P > 0;
    if (c.stage2_ran) {
      c.plan2 = dynpool::plan(c.corrected.index, cfg_.chunk_size);
      c.F02.resize(N2, c.enc_out.features.cols() + 7);
      for (Eigen::Index i = 0; i < N2; ++i) {
        c.F02.row(i).head(c.enc_out.features.cols()) =
            c.enc_out.features.row(c.corrected.source_rows[static_cast<std::size_t>(i)]);
        c.F02.row(i).tail(7) = c.corrected.boundary_feats.row(i);
      }
      // Relative coordinates anchor at the proposal center.
      c.Xv2.resize(N2, 3);
      for (Eigen::Index i = 0; i < N2; ++i)
        c.Xv2.row(i) = c.frozen.proposals[static_cast<std::size_t>(c.corrected.index.ids(i))]
                           .box.center.transpose();
      c.gf2 = sir::sir_forward(c.F02, c.corrected.points.coords, c.Xv2, c.corrected.index,
                               c.plan2, params_.sir2, cfg_.threads, &c.sir2);
      c.raw2 = sir::head_forward(c.gf2, params_.head2, &c.head2);

      out.refined.reserve(static_cast<std::size_t>(P));
      for (int p = 0; p < P; ++p) {
        const sir::Proposal& prop = c.frozen.proposals[static_cast<std::size_t>(p)];
        sir::Proposal r = prop;
        if (cfg_.identity_residual) {
          r.box = sir::decode_residual(sir::identity_residual(), prop.box);
        } else {
          const sir::BoxTarget t =
              sir::BoxTarget::from_vec(c.raw2.row(p).head<sir::kBoxCodeDim>().transpose());
          r.box = sir::decode_residual(t, prop.box);
          r.score = losses::sigmoid(c.raw2(p, sir::kBoxCodeDim));
        }
        out.refined.push_back(r);
      }
    }

    // Losses.
    if (train) {
      if (!frozen) build_targets(points, gts, out, assignment, c.frozen);
      out.loss = compute_losses(c);
    }
    return out;
  }

  // Runs a plain forward and exports the frozen structure + targets for
  // finite-difference closures.
  FrozenStructure freeze(const PointSet& points, const std::vector<Box3D>& gts) const {
    FsdForwardCache cache;
    forward(points, gts, true, &cache, nullptr);
    return cache.frozen;
  }

  // Analytic backward over every parameter; requires a train-mode cache.
  void backward(const FsdForwardCache& c, FsdGrads& g) const {
    detail::require(c.train, "backward: cache must come from a train forward");
    const Eigen::Index N = c.enc_out.fg_logits.size();
    const auto K = static_cast<Eigen::Index>(c.fg_rows.size());
    const int M = c.fg_index.num_groups;
    const FrozenStructure& fz = c.frozen;

    Matd grad_features = Matd::Zero(N, c.enc_out.features.cols());
    Vecd grad_fg = Vecd::Zero(N);
    Matd grad_offsets = Matd::Zero(N, 3);

    // L_sem: focal on all point logits.
    if (!cfg_.oracle_votes)
      grad_fg += losses::focal_loss_grad(c.enc_out.fg_logits, fz.sem_labels, cfg_.focal_alpha,
                                         cfg_.focal_gamma);

    // L_vote: L1 on offsets of geometric-foreground rows.
    if (!cfg_.oracle_votes && !fz.vote_rows.empty()) {
      Matd pred(static_cast<Eigen::Index>(fz.vote_rows.size()), 3);
      for (std::size_t i = 0; i < fz.vote_rows.size(); ++i)
        pred.row(static_cast<Eigen::Index>(i)) = c.enc_out.votes.offsets.row(fz.vote_rows[i]);
      const Matd gl = losses::l1_loss_grad(pred, fz.vote_targets);
      for (std::size_t i = 0; i < fz.vote_rows.size(); ++i)
        grad_offsets.row(fz.vote_rows[i]) += gl.row(static_cast<Eigen::Index>(i));
    }

    // Stage-1 head gradients: L_reg rows + L_cls column.
    if (M > 0 && !cfg_.oracle_boxes) {
      Matd grad_raw1 = Matd::Zero(M, sir::kBoxCodeDim + 1);
      if (!fz.pos_groups.empty()) {
        Matd pred(static_cast<Eigen::Index>(fz.pos_groups.size()), sir::kBoxCodeDim);
        for (std::size_t i = 0; i < fz.pos_groups.size(); ++i)
          pred.row(static_cast<Eigen::Index>(i)) =
              c.raw1.row(fz.pos_groups[i]).head<sir::kBoxCodeDim>();
        const Matd gl = losses::l1_loss_grad(pred, fz.reg_targets);
        for (std::size_t i = 0; i < fz.pos_groups.size(); ++i)
          grad_raw1.row(fz.pos_groups[i]).head<sir::kBoxCodeDim>() +=
              gl.row(static_cast<Eigen::Index>(i));
      }
      const Vecd gcls = losses::focal_loss_grad(c.raw1.col(sir::kBoxCodeDim), fz.cls_labels,
                                                cfg_.focal_alpha, cfg_.focal_gamma);
      grad_raw1.col(sir::kBoxCodeDim) += gcls;

      const Matd grad_gf1 = sir::head_backward(grad_raw1, params_.head1, c.head1, g.head1);
      const auto b1 = sir::sir_backward(grad_gf1, nullptr, c.fg_index, c.plan1, params_.sir1,
                                        c.sir1, g.sir1);
      for (Eigen::Index k = 0; k < K; ++k) {
        grad_features.row(c.fg_rows[static_cast<std::size_t>(k)]) += b1.grad_F0.row(k);
        // centers = coords + offsets, so the centroid path lands on the
        // vote offsets.
        if (!cfg_.oracle_votes)
          grad_offsets.row(c.fg_rows[static_cast<std::size_t>(k)]) += b1.grad_X_voted.row(k);
      }
    }

    // Stage-2 head gradients: L_res rows + L_iou column.
    if (c.stage2_ran && !cfg_.identity_residual) {
      const auto P = static_cast<Eigen::Index>(fz.proposals.size());
      Matd grad_raw2 = Matd::Zero(P, sir::kBoxCodeDim + 1);
      if (!fz.pos_props.empty()) {
        Matd pred(static_cast<Eigen::Index>(fz.pos_props.size()), sir::kBoxCodeDim);
        for (std::size_t i = 0; i < fz.pos_props.size(); ++i)
          pred.row(static_cast<Eigen::Index>(i)) =
              c.raw2.row(fz.pos_props[i]).head<sir::kBoxCodeDim>();
        const Matd gl = losses::l1_loss_grad(pred, fz.res_targets);
        for (std::size_t i = 0; i < fz.pos_props.size(); ++i)
          grad_raw2.row(fz.pos_props[i]).head<sir::kBoxCodeDim>() +=
              gl.row(static_cast<Eigen::Index>(i));
      }
      grad_raw2.col(sir::kBoxCodeDim) +=
          losses::bce_with_logits_grad(c.raw2.col(sir::kBoxCodeDim), fz.iou_targets);

      const Matd grad_gf2 = sir::head_backward(grad_raw2, params_.head2, c.head2, g.head2);
      const auto b2 = sir::sir_backward(grad_gf2, nullptr, c.corrected.index, c.plan2,
                                        params_.sir2, c.sir2, g.sir2);
      // Left block of F02 is gathered encoder features; boundary block
      // and the proposal-center anchors are detached constants.
      const Eigen::Index C = c.enc_out.features.cols();
      for (Eigen::Index i = 0; i < b2.grad_F0.rows(); ++i)
        grad_features.row(c.corrected.source_rows[static_cast<std::size_t>(i)]) +=
            b2.grad_F0.row(i).head(C);
    }

    stub_encoder_backward(grad_features, grad_fg, grad_offsets, params_.encoder, c.enc, g.encoder);
  }

 private:
  void build_targets(const PointSet& points, const std::vector<Box3D>& gts, const FsdOutputs& out,
                     const std::vector<int>& assignment, FrozenStructure& fz) const {
    const Eigen::Index N = points.size();
    const int M = c_num_groups(fz);

    fz.sem_labels = Vecd::Zero(N);
    fz.vote_rows.clear();
    std::vector<Vec3> vt;
    for (Eigen::Index i = 0; i < N; ++i) {
      const Vec3 pt = points.coords.row(i).transpose();
      double best = std::numeric_limits<double>::infinity();
      int best_k = -1;
      for (std::size_t k = 0; k < gts.size(); ++k) {
        if (!point_in_box(pt, gts[k])) continue;
        const double d = (gts[k].center - pt).squaredNorm();
        if (d < best) {
          best = d;
          best_k = static_cast<int>(k);
        }
      }
      if (best_k >= 0) {
        fz.sem_labels(i) = 1.0;
        fz.vote_rows.push_back(static_cast<int>(i));
        vt.push_back(gts[static_cast<std::size_t>(best_k)].center - pt);
      }
    }
    fz.vote_targets.resize(static_cast<Eigen::Index>(vt.size()), 3);
    for (std::size_t i = 0; i < vt.size(); ++i)
      fz.vote_targets.row(static_cast<Eigen::Index>(i)) = vt[i].transpose();

    fz.cls_labels = Vecd::Zero(M);
    fz.pos_groups.clear();
    std::vector<sir::BoxTarget> rt;
    for (int gidx = 0; gidx < M; ++gidx) {
      const int a = assignment[static_cast<std::size_t>(gidx)];
      if (a < 0) continue;
      fz.cls_labels(gidx) = 1.0;
      fz.pos_groups.push_back(gidx);
      rt.push_back(sir::encode_box(gts[static_cast<std::size_t>(a)],
                                   out.group_centers.row(gidx).transpose()));
    }
    fz.reg_targets.resize(static_cast<Eigen::Index>(rt.size()), sir::kBoxCodeDim);
    for (std::size_t i = 0; i < rt.size(); ++i)
      fz.reg_targets.row(static_cast<Eigen::Index>(i)) = rt[i].to_vec().transpose();

    // Stage-2 targets against the detached proposals.
    const auto P = static_cast<int>(fz.proposals.size());
    fz.iou_targets = Vecd::Zero(P);
    fz.pos_props.clear();
    std::vector<sir::BoxTarget> res;
    for (int p = 0; p < P; ++p) {
      const int gidx = fz.proposals[static_cast<std::size_t>(p)].group_id;
      const int a = gidx >= 0 ? assignment[static_cast<std::size_t>(gidx)] : -1;
      if (a < 0) continue;
      const Box3D& gt = gts[static_cast<std::size_t>(a)];
      fz.iou_targets(p) =
          losses::soft_iou_label(box_iou_3d(fz.proposals[static_cast<std::size_t>(p)].box, gt));
      fz.pos_props.push_back(p);
      res.push_back(sir::encode_residual(gt, fz.proposals[static_cast<std::size_t>(p)].box));
    }
    fz.res_targets.resize(static_cast<Eigen::Index>(res.size()), sir::kBoxCodeDim);
    for (std::size_t i = 0; i < res.size(); ++i)
      fz.res_targets.row(static_cast<Eigen::Index>(i)) = res[i].to_vec().transpose();
  }

  losses::LossBreakdown compute_losses(const FsdForwardCache& c) const {
    const FrozenStructure& fz = c.frozen;
    double sem = 0, vote = 0, reg = 0, cls = 0, res = 0, iou = 0;

    if (!cfg_.oracle_votes) {
      sem = losses::focal_loss(c.enc_out.fg_logits, fz.sem_labels, cfg_.focal_alpha,
                               cfg_.focal_gamma);
      if (!fz.vote_rows.empty()) {
        Matd pred(static_cast<Eigen::Index>(fz.vote_rows.size()), 3);
        for (std::size_t i = 0; i < fz.vote_rows.size(); ++i)
          pred.row(static_cast<Eigen::Index>(i)) = c.enc_out.votes.offsets.row(fz.vote_rows[i]);
        vote = losses::l1_loss(pred, fz.vote_targets);
      }
    }

    if (c.fg_index.num_groups > 0 && !cfg_.oracle_boxes) {
      if (!fz.pos_groups.empty()) {
        Matd pred(static_cast<Eigen::Index>(fz.pos_groups.size()), sir::kBoxCodeDim);
        for (std::size_t i = 0; i < fz.pos_groups.size(); ++i)
          pred.row(static_cast<Eigen::Index>(i)) =
              c.raw1.row(fz.pos_groups[i]).head<sir::kBoxCodeDim>();
        reg = losses::l1_loss(pred, fz.reg_targets);
      }
      cls = losses::focal_loss(c.raw1.col(sir::kBoxCodeDim), fz.cls_labels, cfg_.focal_alpha,
                               cfg_.focal_gamma);
    }

    if (c.stage2_ran && !cfg_.identity_residual) {
      if (!fz.pos_props.empty()) {
        Matd pred(static_cast<Eigen::Index>(fz.pos_props.size()), sir::kBoxCodeDim);
        for (std::size_t i = 0; i < fz.pos_props.size(); ++i)
          pred.row(static_cast<Eigen::Index>(i)) =
              c.raw2.row(fz.pos_props[i]).head<sir::kBoxCodeDim>();
        res = losses::l1_loss(pred, fz.res_targets);
      }
      iou = losses::bce_with_logits(c.raw2.col(sir::kBoxCodeDim), fz.iou_targets);
    }
    return losses::total_loss(sem, vote, reg, cls, res, iou);
  }

  static int c_num_groups(const FrozenStructure& fz) { return fz.fg_index.num_groups; }

  FsdConfig cfg_;
  FsdParams params_;
};

}  // namespace fsk::model
