#include "fsk/model.hpp"
#include "fsk/rng.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

namespace {

using namespace fsk;

TEST(VoxelCenter, OffsetPointsToOwnVoxelCenter) {
  const Vec3 q(0.25, 0.25, 0.25);
  // x = 0.3 lies in voxel [0.25, 0.5) whose center is 0.375.
  const Vec3 c = model::voxel_center(Vec3(0.3, 0, 0), q);
  EXPECT_NEAR(c.x(), 0.375, 1e-15);
  EXPECT_NEAR(c.y(), 0.125, 1e-15);
  EXPECT_NEAR(c.z(), 0.125, 1e-15);
  const Vec3 off = model::voxel_center_offset(Vec3(0.3, 0, 0), q);
  EXPECT_NEAR(off.x(), 0.075, 1e-15);
  EXPECT_NEAR(off.y(), 0.125, 1e-15);
  EXPECT_NEAR(off.z(), 0.125, 1e-15);
  // Negative coordinates floor away from zero.
  const Vec3 neg = model::voxel_center_offset(Vec3(-0.1, 0, 0), q);
  EXPECT_NEAR(neg.x(), -0.025, 1e-15);
  // The offset never exceeds half the voxel size.
  Rng rng(71);
  for (int t = 0; t < 100; ++t) {
    const Vec3 p(rng.normal() * 5, rng.normal() * 5, rng.normal() * 5);
    const Vec3 o = model::voxel_center_offset(p, q);
    EXPECT_LE(o.cwiseAbs().maxCoeff(), 0.125 + 1e-12);
  }
}

PointSet points_at(const std::vector<Vec3>& rows) {
  PointSet p;
  p.coords.resize(static_cast<Eigen::Index>(rows.size()), 3);
  for (std::size_t i = 0; i < rows.size(); ++i)
    p.coords.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  return p;
}

TEST(StubEncoder, DeterministicAndShapes) {
  Rng rng(72);
  const auto params = model::StubEncoderParams::init(8, 6, Vec3(0.25, 0.25, 0.25), rng);
  const auto pts = points_at({{0, 0, 0}, {1, 2, 0.5}, {-3, 0.4, 1}});
  const auto a = model::stub_encoder(pts, params);
  const auto b = model::stub_encoder(pts, params);
  EXPECT_EQ(a.features.rows(), 3);
  EXPECT_EQ(a.features.cols(), 6);
  EXPECT_EQ(a.fg_logits.size(), 3);
  EXPECT_EQ(a.votes.offsets.rows(), 3);
  EXPECT_TRUE((a.features.array() == b.features.array()).all());
  EXPECT_TRUE((a.fg_logits.array() == b.fg_logits.array()).all());
  for (int i = 0; i < 3; ++i)
    EXPECT_NEAR(a.votes.foreground_prob(i), losses::sigmoid(a.fg_logits(i)), 1e-15);
}

TEST(StubEncoder, FiniteDifferenceGradcheck) {
  Rng rng(73);
  auto params = model::StubEncoderParams::init(5, 4, Vec3(0.3, 0.3, 0.3), rng);
  const auto pts = points_at({{0.1, 0.2, 0.3}, {1.5, -0.7, 0.9}, {-2, 0.4, 1.1}, {3, 3, 0}});
  Matd A(4, 4);
  Vecd b(4);
  Matd C(4, 3);
  for (Eigen::Index i = 0; i < A.size(); ++i) A.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < 4; ++i) b(i) = rng.normal();
  for (Eigen::Index i = 0; i < C.size(); ++i) C.data()[i] = rng.normal();

  auto loss = [&]() {
    const auto out = model::stub_encoder(pts, params);
    return (out.features.array() * A.array()).sum() + out.fg_logits.dot(b) +
           (out.votes.offsets.array() * C.array()).sum();
  };

  model::StubEncoderCache cache;
  model::stub_encoder(pts, params, &cache);
  auto grads = model::StubEncoderGrads::zeros_like(params);
  model::stub_encoder_backward(A, b, C, params, cache, grads);

  nn::ParamRegistry preg, greg;
  params.register_params(preg, "enc");
  grads.register_grads(greg, "enc");
  const double h = 1e-6;
  for (std::size_t k = 0; k < preg.total_size(); ++k) {
    const double x0 = preg.get(k);
    preg.set(k, x0 + h);
    const double lp = loss();
    preg.set(k, x0 - h);
    const double lm = loss();
    preg.set(k, x0);
    const double fd = (lp - lm) / (2 * h);
    EXPECT_NEAR(fd, greg.get(k), 1e-5 * std::max(1.0, std::abs(fd))) << "param " << k;
  }
}

TEST(OracleVotes, ExactOffsetsInsideNearestBox) {
  const std::vector<Box3D> gts = {Box3D(Vec3(0, 0, 0), Vec3(4, 4, 4), 0.0),
                                  Box3D(Vec3(3, 0, 0), Vec3(4, 4, 4), 0.0)};
  const auto pts = points_at({{0.5, 0, 0},   // in both, nearer first
                              {2.6, 0, 0},   // in both, nearer second
                              {10, 10, 10},  // outside
                              {-1.9, 1.9, -1.9}});
  const auto v = model::oracle_votes(pts, gts);
  EXPECT_DOUBLE_EQ(v.foreground_prob(0), 1.0);
  EXPECT_DOUBLE_EQ(v.foreground_prob(1), 1.0);
  EXPECT_DOUBLE_EQ(v.foreground_prob(2), 0.0);
  EXPECT_DOUBLE_EQ(v.foreground_prob(3), 1.0);
  EXPECT_LT((v.offsets.row(0).transpose() - (gts[0].center - pts.coords.row(0).transpose())).norm(),
            1e-15);
  EXPECT_LT((v.offsets.row(1).transpose() - (gts[1].center - pts.coords.row(1).transpose())).norm(),
            1e-15);
  EXPECT_TRUE((v.offsets.row(2).array() == 0).all());
}

// A compact scene: two point clusters inside two ground-truth boxes plus
// far-away background points.
struct TinyScene {
  PointSet points;
  std::vector<Box3D> gts;
  int n_obj_points = 0;  // rows [0, n_obj_points) belong to objects
};

TinyScene tiny_scene(double separation = 12.0) {
  TinyScene s;
  s.gts = {Box3D(Vec3(0, 0, 0), Vec3(3, 3, 2), 0.2),
           Box3D(Vec3(separation, 0, 0), Vec3(2.5, 2.5, 2), -0.4)};
  std::vector<Vec3> rows;
  const std::vector<Vec3> offsets = {{0, 0, 0},        {0.6, 0.4, 0.2}, {-0.5, 0.3, -0.3},
                                     {0.2, -0.6, 0.4}, {0.5, 0.5, 0},   {-0.4, -0.4, 0.1}};
  for (const auto& gt : s.gts)
    for (const auto& o : offsets) rows.push_back(gt.center + o);
  s.n_obj_points = static_cast<int>(rows.size());
  rows.push_back(Vec3(-30, -30, 3));
  rows.push_back(Vec3(40, 25, -2));
  rows.push_back(Vec3(0, -35, 1));
  s.points = points_at(rows);
  return s;
}

model::FsdConfig tiny_config() {
  model::FsdConfig cfg;
  cfg.encoder_hidden = 6;
  cfg.encoder_out = 6;
  cfg.sir_widths = {6, 6};
  cfg.sir2_widths = {6, 6};
  cfg.head_hidden = 6;
  cfg.init_seed = 5;
  return cfg;
}

TEST(FsdModel, OracleVoteForwardStructure) {
  const auto scene = tiny_scene();
  auto cfg = tiny_config();
  cfg.oracle_votes = true;
  const model::FsdModel fsd(cfg);
  model::FsdForwardCache cache;
  const auto out = fsd.forward(scene.points, scene.gts, true, &cache);

  // Exactly the object points are foreground; they form one group per
  // object; every group yields exactly one proposal.
  ASSERT_EQ(static_cast<int>(out.fg_mask.size()), scene.points.size());
  for (int i = 0; i < scene.points.size(); ++i)
    EXPECT_EQ(out.fg_mask[static_cast<std::size_t>(i)], i < scene.n_obj_points ? 1 : 0);
  EXPECT_EQ(out.point_groups.num_groups, 2);
  for (int i = 0; i < scene.n_obj_points; ++i) EXPECT_EQ(out.point_groups.ids(i), i / 6);
  for (int i = scene.n_obj_points; i < scene.points.size(); ++i)
    EXPECT_EQ(out.point_groups.ids(i), kBackground);
  ASSERT_EQ(out.proposals.size(), 2u);
  EXPECT_EQ(out.proposals[0].group_id, 0);
  EXPECT_EQ(out.proposals[1].group_id, 1);
  EXPECT_EQ(out.refined.size(), out.proposals.size());

  // Oracle votes put every group center exactly at its gt center.
  EXPECT_LT((out.group_centers.row(0).transpose() - scene.gts[0].center).norm(), 1e-12);
  EXPECT_LT((out.group_centers.row(1).transpose() - scene.gts[1].center).norm(), 1e-12);
  EXPECT_TRUE(std::isfinite(out.loss.total));
  // Oracle votes disable the vote/sem terms.
  EXPECT_DOUBLE_EQ(out.loss.sem, 0.0);
  EXPECT_DOUBLE_EQ(out.loss.vote, 0.0);
}

TEST(FsdModel, OneProposalPerGroupUnderPermutation) {
  const auto scene = tiny_scene();
  auto cfg = tiny_config();
  cfg.oracle_votes = true;
  const model::FsdModel fsd(cfg);
  const auto base = fsd.forward(scene.points, scene.gts, false);

  Rng rng(74);
  std::vector<int> perm(static_cast<std::size_t>(scene.points.size()));
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
  rng.shuffle(perm);
  PointSet shuffled = scene.points.gather(perm);
  const auto got = fsd.forward(shuffled, scene.gts, false);

  ASSERT_EQ(got.proposals.size(), base.proposals.size());
  // Match proposals by nearest center; boxes agree to the last bits up to
  // group relabeling.
  for (const auto& p : base.proposals) {
    double best = std::numeric_limits<double>::infinity();
    const sir::Proposal* match = nullptr;
    for (const auto& q : got.proposals) {
      const double d = (q.box.center - p.box.center).norm();
      if (d < best) {
        best = d;
        match = &q;
      }
    }
    ASSERT_NE(match, nullptr);
    EXPECT_LT((match->box.center - p.box.center).norm(), 1e-12);
    EXPECT_LT((match->box.size - p.box.size).norm(), 1e-12);
    EXPECT_NEAR(match->box.yaw, p.box.yaw, 1e-12);
    EXPECT_NEAR(match->score, p.score, 1e-12);
  }
}

TEST(FsdModel, GroupIsolation) {
  auto cfg = tiny_config();
  cfg.oracle_votes = true;
  const model::FsdModel fsd(cfg);

  const auto scene_a = tiny_scene(30.0);
  // Same scene with the second object shifted 5 m further out; the first
  // object's points and box are untouched.
  TinyScene scene_b = scene_a;
  const Vec3 shift(5, 2, 0);
  scene_b.gts[1] = Box3D(scene_a.gts[1].center + shift, scene_a.gts[1].size, scene_a.gts[1].yaw);
  for (int i = 6; i < 12; ++i)
    scene_b.points.coords.row(i) = scene_a.points.coords.row(i) + shift.transpose();

  const auto out_a = fsd.forward(scene_a.points, scene_a.gts, false);
  const auto out_b = fsd.forward(scene_b.points, scene_b.gts, false);
  ASSERT_EQ(out_a.proposals.size(), 2u);
  ASSERT_EQ(out_b.proposals.size(), 2u);
  // Group 0 output is bit-identical: groups do not interact.
  EXPECT_TRUE((out_b.proposals[0].box.center.array() == out_a.proposals[0].box.center.array()).all());
  EXPECT_TRUE((out_b.proposals[0].box.size.array() == out_a.proposals[0].box.size.array()).all());
  EXPECT_EQ(out_b.proposals[0].box.yaw, out_a.proposals[0].box.yaw);
  EXPECT_EQ(out_b.proposals[0].score, out_a.proposals[0].score);
  ASSERT_EQ(out_a.refined.size(), 2u);
  ASSERT_EQ(out_b.refined.size(), 2u);
  EXPECT_TRUE((out_b.refined[0].box.center.array() == out_a.refined[0].box.center.array()).all());
  EXPECT_TRUE((out_b.refined[0].box.size.array() == out_a.refined[0].box.size.array()).all());
  EXPECT_EQ(out_b.refined[0].score, out_a.refined[0].score);
}

TEST(FsdModel, OracleBoxesReproduceGroundTruth) {
  const auto scene = tiny_scene();
  auto cfg = tiny_config();
  cfg.oracle_votes = true;
  cfg.oracle_boxes = true;
  const model::FsdModel fsd(cfg);
  const auto out = fsd.forward(scene.points, scene.gts, false);
  ASSERT_EQ(out.proposals.size(), 2u);
  for (int g = 0; g < 2; ++g) {
    EXPECT_LT((out.proposals[static_cast<std::size_t>(g)].box.center -
               scene.gts[static_cast<std::size_t>(g)].center)
                  .norm(),
              1e-9);
    EXPECT_LT((out.proposals[static_cast<std::size_t>(g)].box.size -
               scene.gts[static_cast<std::size_t>(g)].size)
                  .norm(),
              1e-9);
    EXPECT_NEAR(out.proposals[static_cast<std::size_t>(g)].box.yaw,
                scene.gts[static_cast<std::size_t>(g)].yaw, 1e-9);
    EXPECT_DOUBLE_EQ(out.proposals[static_cast<std::size_t>(g)].score, 1.0);
  }
}

TEST(FsdModel, IdentityResidualKeepsProposals) {
  const auto scene = tiny_scene();
  auto cfg = tiny_config();
  cfg.oracle_votes = true;
  cfg.identity_residual = true;
  const model::FsdModel fsd(cfg);
  const auto out = fsd.forward(scene.points, scene.gts, false);
  ASSERT_EQ(out.refined.size(), out.proposals.size());
  for (std::size_t p = 0; p < out.proposals.size(); ++p) {
    EXPECT_TRUE(
        (out.refined[p].box.center.array() == out.proposals[p].box.center.array()).all());
    EXPECT_TRUE((out.refined[p].box.size.array() == out.proposals[p].box.size.array()).all());
    EXPECT_EQ(out.refined[p].box.yaw, out.proposals[p].box.yaw);
  }
}

TEST(FsdModel, EmptySceneProducesNoProposals) {
  auto cfg = tiny_config();
  const model::FsdModel fsd(cfg);
  PointSet far = points_at({{100, 100, 50}, {-100, 100, 50}});
  // No gts, no training: forward must degrade gracefully whatever the
  // predicted mask does.
  const auto out = fsd.forward(far, {}, false);
  EXPECT_EQ(out.proposals.size(), static_cast<std::size_t>(out.point_groups.num_groups));
  const auto train_out = fsd.forward(far, {}, true);
  EXPECT_TRUE(std::isfinite(train_out.loss.total));
}

TEST(FsdModel, BackwardRequiresTrainCache) {
  const auto scene = tiny_scene();
  const auto cfg = tiny_config();
  const model::FsdModel fsd(cfg);
  model::FsdForwardCache cache;
  fsd.forward(scene.points, scene.gts, false, &cache);
  auto grads = model::FsdGrads::zeros_like(fsd.params());
  EXPECT_THROW(fsd.backward(cache, grads), std::invalid_argument);
}

TEST(FsdModel, FullGradcheckAgainstFiniteDifferences) {
  const auto scene = tiny_scene();
  auto cfg = tiny_config();  // all oracle switches off: every loss term live
  model::FsdModel fsd(cfg);

  const auto frozen = fsd.freeze(scene.points, scene.gts);
  auto loss_at = [&]() {
    return fsd.forward(scene.points, scene.gts, true, nullptr, &frozen).loss.total;
  };

  model::FsdForwardCache cache;
  fsd.forward(scene.points, scene.gts, true, &cache, &frozen);
  auto grads = model::FsdGrads::zeros_like(fsd.params());
  fsd.backward(cache, grads);

  nn::ParamRegistry preg, greg;
  fsd.params().register_params(preg);
  grads.register_grads(greg);
  ASSERT_EQ(preg.total_size(), greg.total_size());

  // Probe a deterministic spread of parameter indices across all blocks.
  const std::size_t total = preg.total_size();
  std::vector<std::size_t> picks;
  for (int k = 0; k < 40; ++k) picks.push_back(k * total / 40);
  picks.push_back(total - 1);
  const double h = 1e-5;
  for (std::size_t idx : picks) {
    const double x0 = preg.get(idx);
    preg.set(idx, x0 + h);
    const double lp = loss_at();
    preg.set(idx, x0 - h);
    const double lm = loss_at();
    preg.set(idx, x0);
    const double fd = (lp - lm) / (2 * h);
    const double got = greg.get(idx);
    const double scale = std::max({1.0, std::abs(fd), std::abs(got)});
    EXPECT_LT(std::abs(fd - got) / scale, 1e-4) << "param " << idx << " fd " << fd << " got " << got;
  }
}

TEST(FsdModel, GroupFeatureSeesEveryMemberPoint) {
  // Receptive field: each member row of a group contributes gradient to
  // the group feature (checked through sir_forward directly).
  Rng rng(75);
  const int n = 5;
  Matd F(n, 4);
  Coords X(n, 3), Xv(n, 3);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < 4; ++j) F(i, j) = rng.normal();
    for (int j = 0; j < 3; ++j) {
      X(i, j) = rng.normal();
      Xv(i, j) = X(i, j);
    }
  }
  GroupIndex I;
  I.num_groups = 1;
  I.ids = Veci::Zero(n);
  auto stack = sir::SirStackParams::init(4, {6}, rng);
  const auto plan = dynpool::plan(I);
  auto total = [&]() { return sir::sir_forward(F, X, Xv, I, plan, stack).sum(); };
  const double base = total();
  for (int i = 0; i < n; ++i) {
    const double x0 = F(i, 0);
    F(i, 0) = x0 + 1e-3;
    const double moved = total();
    F(i, 0) = x0;
    EXPECT_GT(std::abs(moved - base), 1e-12) << "row " << i << " has no influence";
  }
}

TEST(FsdModel, CheckpointRoundTripReproducesForward) {
  const auto scene = tiny_scene();
  auto cfg = tiny_config();
  cfg.oracle_votes = true;
  model::FsdModel fsd(cfg);
  const auto want = fsd.forward(scene.points, scene.gts, false);

  const std::string path = ::testing::TempDir() + "/fsd_params.fsdw";
  {
    nn::ParamRegistry reg;
    fsd.params().register_params(reg);
    reg.save(path);
  }
  auto cfg2 = cfg;
  cfg2.init_seed = 999;  // different init, then overwritten by load
  model::FsdModel other(cfg2);
  {
    nn::ParamRegistry reg;
    other.params().register_params(reg);
    reg.load(path);
  }
  const auto got = other.forward(scene.points, scene.gts, false);
  ASSERT_EQ(got.proposals.size(), want.proposals.size());
  for (std::size_t p = 0; p < want.proposals.size(); ++p) {
    EXPECT_TRUE(
        (got.proposals[p].box.center.array() == want.proposals[p].box.center.array()).all());
    EXPECT_EQ(got.proposals[p].score, want.proposals[p].score);
  }
  std::remove(path.c_str());
}

}  // namespace
