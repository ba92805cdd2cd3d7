#pragma once

// Fast built-in invariant suites: pooling equivalence and adjointness,
// grouping vs a brute-force oracle, analytic gradients vs central
// differences, loss spot values, codec round-trips, and residual-probing
// properties. Each suite prints one line; all must pass for exit 0.

#include "fsk/core.hpp"
#include "fsk/dynpool.hpp"
#include "fsk/grouping.hpp"
#include "fsk/losses.hpp"
#include "fsk/model.hpp"
#include "fsk/nn.hpp"
#include "fsk/rng.hpp"
#include "fsk/sir.hpp"
#include "fsk/synth.hpp"
#include "fsk/temporal.hpp"

#include <cmath>
#include <functional>
#include <ostream>
#include <queue>
#include <sstream>
#include <string>
#include <vector>

namespace fsk::selftest {

namespace detail {

using fsk::detail::require;

inline bool close(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

// Central-difference check of a registry-backed gradient. `loss` must be
// a pure function of the registered parameters.
inline double max_grad_err(nn::ParamRegistry& params, nn::ParamRegistry& grads,
                           const std::function<double()>& loss,
                           const std::vector<std::size_t>& indices, double eps) {
  double worst = 0;
  for (std::size_t idx : indices) {
    const double x0 = params.get(idx);
    params.set(idx, x0 + eps);
    const double lp = loss();
    params.set(idx, x0 - eps);
    const double lm = loss();
    params.set(idx, x0);
    const double fd = (lp - lm) / (2 * eps);
    const double an = grads.get(idx);
    const double scale = std::max({1.0, std::abs(fd), std::abs(an)});
    worst = std::max(worst, std::abs(fd - an) / scale);
  }
  return worst;
}

inline std::vector<std::size_t> spread_indices(std::size_t total, std::size_t want, Rng& rng) {
  std::vector<std::size_t> idxs;
  for (std::size_t i = 0; i < want && total > 0; ++i)
    idxs.push_back(rng.bounded(total));
  return idxs;
}

}  // namespace detail

struct Suite {
  std::string name;
  std::function<bool(std::string&)> run;
};

// --- pooling ---------------------------------------------------------

inline bool suite_pool_equivalence(std::string& msg) {
  Rng rng(101);
  for (int t = 0; t < 25; ++t) {
    synth::WorkloadSpec w;
    w.num_groups = 1 + static_cast<int>(rng.bounded(64));
    w.size_lo = 1;
    w.size_hi = 2 + static_cast<int>(rng.bounded(40));
    w.feature_dim = (t % 3 == 0) ? 1 : (t % 3 == 1 ? 8 : 64);
    w.imbalanced = t % 2 == 0;
    auto [F, I] = synth::gen_workload<double>(w, rng.next_u64());
    const auto plan = dynpool::plan(I, 16);

    const auto ref_max = dynpool::pool_naive(F, I, dynpool::PoolKind::kMax);
    const auto ref_avg = dynpool::pool_naive(F, I, dynpool::PoolKind::kAvg);
    for (int threads : {1, 2, 8}) {
      const auto got_max = dynpool::pool(F, plan, dynpool::PoolKind::kMax, threads);
      if (!(got_max.group_values.array() == ref_max.group_values.array()).all() ||
          !(got_max.argmax.array() == ref_max.argmax.array()).all()) {
        msg = "max mismatch at case " + std::to_string(t);
        return false;
      }
      const auto got_avg = dynpool::pool(F, plan, dynpool::PoolKind::kAvg, threads);
      const double rel = (got_avg.group_values - ref_avg.group_values).cwiseAbs().maxCoeff() /
                         std::max(1.0, ref_avg.group_values.cwiseAbs().maxCoeff());
      if (rel > 1e-6) {
        msg = "avg relative error " + std::to_string(rel);
        return false;
      }
    }
  }
  return true;
}

inline bool suite_pool_adjoint(std::string& msg) {
  Rng rng(102);
  for (int t = 0; t < 10; ++t) {
    const Eigen::Index n = 5 + static_cast<Eigen::Index>(rng.bounded(200));
    const int m = 1 + static_cast<int>(rng.bounded(12));
    const Eigen::Index c = 1 + static_cast<Eigen::Index>(rng.bounded(6));
    GroupIndex I;
    I.num_groups = m;
    I.ids.resize(n);
    for (Eigen::Index i = 0; i < n; ++i)
      I.ids(i) = static_cast<int>(rng.bounded(static_cast<std::uint64_t>(m) + 1)) - 1;
    Matd F(n, c), u(n, c), v(m, c);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < c; ++j) F(i, j) = rng.normal();
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < c; ++j) u(i, j) = rng.normal();
    for (int i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j < c; ++j) v(i, j) = rng.normal();

    for (auto kind : {dynpool::PoolKind::kAvg, dynpool::PoolKind::kMax}) {
      const auto fwd = dynpool::pool_naive(F, I, kind);
      const Matd back = dynpool::pool_backward(v, I, fwd, kind);
      // Linearization of pool at F applied to u: avg pools u; max picks
      // u at the fixed argmax.
      Matd lin(m, c);
      if (kind == dynpool::PoolKind::kAvg) {
        lin = dynpool::pool_naive(u, I, kind).group_values;
      } else {
        lin.setZero();
        for (int g = 0; g < m; ++g)
          for (Eigen::Index j = 0; j < c; ++j)
            if (fwd.argmax(g, j) >= 0) lin(g, j) = u(fwd.argmax(g, j), j);
      }
      const double lhs = (lin.array() * v.array()).sum();
      const double rhs = (u.array() * back.array()).sum();
      if (!detail::close(lhs, rhs, 1e-9)) {
        msg = "adjoint identity violated";
        return false;
      }
    }
  }
  return true;
}

// --- grouping --------------------------------------------------------

inline GroupIndex bfs_components(const Coords& centers, double radius) {
  const Eigen::Index k = centers.rows();
  std::vector<int> comp(static_cast<std::size_t>(k), -1);
  int next = 0;
  for (Eigen::Index s = 0; s < k; ++s) {
    if (comp[static_cast<std::size_t>(s)] >= 0) continue;
    std::queue<Eigen::Index> q;
    q.push(s);
    comp[static_cast<std::size_t>(s)] = next;
    while (!q.empty()) {
      const Eigen::Index a = q.front();
      q.pop();
      for (Eigen::Index b = 0; b < k; ++b) {
        if (comp[static_cast<std::size_t>(b)] >= 0) continue;
        if ((centers.row(a) - centers.row(b)).norm() < radius) {
          comp[static_cast<std::size_t>(b)] = next;
          q.push(b);
        }
      }
    }
    ++next;
  }
  GroupIndex out;
  out.num_groups = next;
  out.ids.resize(k);
  for (Eigen::Index i = 0; i < k; ++i) out.ids(i) = comp[static_cast<std::size_t>(i)];
  return out;
}

inline bool suite_ccl(std::string& msg) {
  Rng rng(103);
  for (int t = 0; t < 20; ++t) {
    const Eigen::Index k = 2 + static_cast<Eigen::Index>(rng.bounded(400));
    Coords centers(k, 3);
    for (Eigen::Index i = 0; i < k; ++i)
      for (int d = 0; d < 3; ++d) centers(i, d) = rng.uniform(-4, 4);
    const double radius = rng.uniform(0.2, 1.2);
    const GroupIndex fast = grouping::ccl_group(centers, radius);
    const GroupIndex slow = bfs_components(centers, radius);
    // Both number components by minimum member row, so ids must match
    // exactly.
    if (fast.num_groups != slow.num_groups || !(fast.ids.array() == slow.ids.array()).all()) {
      msg = "partition mismatch at case " + std::to_string(t);
      return false;
    }
  }
  return true;
}

// --- gradients -------------------------------------------------------

inline bool suite_gradcheck_lna(std::string& msg) {
  Rng rng(104);
  nn::LinNormActParams p = nn::LinNormActParams::init(5, 4, rng);
  Matd x(7, 5), w(7, 4);
  for (Eigen::Index i = 0; i < 7; ++i)
    for (Eigen::Index j = 0; j < 5; ++j) x(i, j) = rng.normal();
  for (Eigen::Index i = 0; i < 7; ++i)
    for (Eigen::Index j = 0; j < 4; ++j) w(i, j) = rng.normal();

  nn::ParamRegistry preg, greg;
  preg.add("lna", &p.weight);
  preg.add("lna.b", &p.bias);
  preg.add("lna.s", &p.norm_scale);
  preg.add("lna.t", &p.norm_shift);
  nn::LinNormActGrads g = nn::LinNormActGrads::zeros_like(p);
  greg.add("lna", &g.weight);
  greg.add("lna.b", &g.bias);
  greg.add("lna.s", &g.norm_scale);
  greg.add("lna.t", &g.norm_shift);

  nn::LinNormActCache cache;
  nn::lin_norm_act(x, p, &cache);
  const Matd gx = nn::lin_norm_act_backward(w, p, cache, g);

  auto loss = [&]() { return (nn::lin_norm_act(x, p).array() * w.array()).sum(); };
  std::vector<std::size_t> idxs;
  for (std::size_t i = 0; i < preg.total_size(); ++i) idxs.push_back(i);
  const double err = detail::max_grad_err(preg, greg, loss, idxs, 1e-6);
  if (err > 1e-6) {
    msg = "parameter gradient error " + std::to_string(err);
    return false;
  }
  // Input gradient via finite differences.
  double worst = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double x0 = x(i, j);
      x(i, j) = x0 + 1e-6;
      const double lp = loss();
      x(i, j) = x0 - 1e-6;
      const double lm = loss();
      x(i, j) = x0;
      const double fd = (lp - lm) / 2e-6;
      worst = std::max(worst,
                       std::abs(fd - gx(i, j)) / std::max({1.0, std::abs(fd), std::abs(gx(i, j))}));
    }
  if (worst > 1e-6) {
    msg = "input gradient error " + std::to_string(worst);
    return false;
  }
  return true;
}

inline bool suite_gradcheck_model(std::string& msg) {
  synth::SceneSpec scene;
  scene.bounds_lo = Vec3(-8, -8, -2);
  scene.bounds_hi = Vec3(8, 8, 4);
  scene.n_background = 40;
  scene.rng_seed = 5;
  synth::ObjectSpec a;
  a.box = Box3D(Vec3(-3, -2, 1), Vec3(3, 2, 1.5), 0.4);
  a.points_per_object = 12;
  scene.objects.push_back(a);
  synth::ObjectSpec b;
  b.box = Box3D(Vec3(4, 3, 0.5), Vec3(2, 1.5, 1.2), -0.8);
  b.points_per_object = 9;
  scene.objects.push_back(b);
  const synth::Frame f = synth::gen_frame(scene, 0);

  model::FsdConfig cfg;
  cfg.encoder_hidden = 6;
  cfg.encoder_out = 6;
  cfg.sir_widths = {6, 6};
  cfg.sir2_widths = {6, 6};
  cfg.head_hidden = 6;
  cfg.threads = 1;
  model::FsdModel mdl(cfg);

  const model::FrozenStructure frozen = mdl.freeze(f.points, f.gt_boxes);
  model::FsdForwardCache cache;
  mdl.forward(f.points, f.gt_boxes, true, &cache, &frozen);
  model::FsdGrads grads = model::FsdGrads::zeros_like(mdl.params());
  mdl.backward(cache, grads);

  nn::ParamRegistry preg, greg;
  mdl.params().register_params(preg);
  grads.register_grads(greg);
  auto loss = [&]() {
    return mdl.forward(f.points, f.gt_boxes, true, nullptr, &frozen).loss.total;
  };
  Rng rng(105);
  const auto idxs = detail::spread_indices(preg.total_size(), 30, rng);
  const double err = detail::max_grad_err(preg, greg, loss, idxs, 1e-5);
  if (err > 1e-4) {
    msg = "model gradient error " + std::to_string(err);
    return false;
  }
  return true;
}

// --- losses and codecs ------------------------------------------------

inline bool suite_loss_values(std::string& msg) {
  using namespace losses;
  if (!detail::close(soft_iou_label(0.3), 0.1, 1e-12) ||
      !detail::close(soft_iou_label(0.5), 0.5, 1e-12) ||
      !detail::close(soft_iou_label(0.8), 1.0, 1e-12) || soft_iou_label(0.2) != 0.0) {
    msg = "soft iou label spot values";
    return false;
  }
  // gamma = 0, alpha = 0.5 reduces to half the BCE.
  Vecd logits(3), labels(3);
  logits << -1.3, 0.4, 2.0;
  labels << 0, 1, 1;
  const double f = focal_loss(logits, labels, 0.5, 0.0);
  const double b = bce_with_logits(logits, labels);
  if (!detail::close(f, 0.5 * b, 1e-12)) {
    msg = "focal gamma=0 reduction";
    return false;
  }
  // Large-logit stability.
  Vecd big(2), tl(2);
  big << 500, -500;
  tl << 1, 0;
  const double stable = bce_with_logits(big, tl);
  if (!std::isfinite(stable) || stable > 1e-6) {
    msg = "bce stability at large logits";
    return false;
  }
  return true;
}

inline bool suite_codecs(std::string& msg) {
  Rng rng(106);
  for (int t = 0; t < 200; ++t) {
    const Box3D gt(Vec3(rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(-3, 3)),
                   Vec3(rng.uniform(0.3, 6), rng.uniform(0.3, 6), rng.uniform(0.3, 4)),
                   rng.uniform(-3.1, 3.1));
    const Vec3 ctr(rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(-3, 3));
    const Box3D rt = sir::decode_box(sir::encode_box(gt, ctr), ctr);
    if ((rt.center - gt.center).norm() > 1e-9 || (rt.size - gt.size).norm() > 1e-9 ||
        std::abs(normalize_yaw(rt.yaw - gt.yaw)) > 1e-9) {
      msg = "box codec round-trip";
      return false;
    }
    const Box3D prop(Vec3(rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(-3, 3)),
                     Vec3(rng.uniform(0.3, 6), rng.uniform(0.3, 6), rng.uniform(0.3, 4)),
                     rng.uniform(-3.1, 3.1));
    const Box3D rr = sir::decode_residual(sir::encode_residual(gt, prop), prop);
    if ((rr.center - gt.center).norm() > 1e-9 || (rr.size - gt.size).norm() > 1e-9 ||
        std::abs(normalize_yaw(rr.yaw - gt.yaw)) > 1e-9) {
      msg = "residual codec round-trip";
      return false;
    }
    const Box3D id = sir::decode_residual(sir::identity_residual(), prop);
    if (id.center != prop.center || id.size != prop.size || id.yaw != prop.yaw) {
      msg = "identity residual must be exact";
      return false;
    }
  }
  return true;
}

// --- residual probing --------------------------------------------------

inline bool suite_rpp(std::string& msg) {
  Rng rng(107);
  PointSet a;
  a.coords.resize(300, 3);
  for (Eigen::Index i = 0; i < 300; ++i)
    for (int d = 0; d < 3; ++d) a.coords(i, d) = rng.uniform(-10, 10);
  temporal::RppConfig cfg;
  if (temporal::rpp(a, {a}, cfg).size() != 0) {
    msg = "identical base must leave no residual";
    return false;
  }
  if (temporal::rpp(a, {}, cfg).size() != a.size()) {
    msg = "empty base must keep all points";
    return false;
  }
  PointSet b = a;
  for (Eigen::Index i = 0; i < 60; ++i) b.coords(i, 0) += 3.0;
  Eigen::Index prev = -1;
  for (double q : {0.15, 0.25, 0.35, 0.6}) {
    temporal::RppConfig c2;
    c2.qsize = Vec3(q, q, q);
    const Eigen::Index n = temporal::rpp(b, {a}, c2).size();
    if (prev >= 0 && n > prev) {
      msg = "residual count must not grow with coarser quantization";
      return false;
    }
    prev = n;
  }
  // Aged buffer emits exactly the union of the last max_age frames.
  temporal::AgedPoints buf;
  PointSet f1, f2, f3;
  f1.coords = Coords::Constant(2, 3, 1.0);
  f2.coords = Coords::Constant(3, 3, 2.0);
  f3.coords = Coords::Constant(4, 3, 3.0);
  buf = temporal::age_update(buf, f1, 0, cfg);
  buf = temporal::age_update(buf, f2, 1, cfg);
  if (buf.points.size() != 5) {
    msg = "max_age=2 buffer must hold both frames";
    return false;
  }
  buf = temporal::age_update(buf, f3, 2, cfg);
  if (buf.points.size() != 7 || buf.points.coords(0, 0) != 2.0) {
    msg = "oldest frame must be evicted at max_age";
    return false;
  }
  return true;
}

inline std::vector<Suite> suites() {
  return {
      {"pool-equivalence", suite_pool_equivalence},
      {"pool-adjoint", suite_pool_adjoint},
      {"ccl-vs-bfs", suite_ccl},
      {"gradcheck-lin-norm-act", suite_gradcheck_lna},
      {"gradcheck-model", suite_gradcheck_model},
      {"loss-spot-values", suite_loss_values},
      {"codec-round-trips", suite_codecs},
      {"residual-probing", suite_rpp},
  };
}

inline int run_all(std::ostream& os) {
  int failures = 0;
  for (const Suite& s : suites()) {
    std::string msg;
    bool ok = false;
    try {
      ok = s.run(msg);
    } catch (const std::exception& e) {
      msg = e.what();
    }
    os << (ok ? "[ok]   " : "[FAIL] ") << s.name;
    if (!ok && !msg.empty()) os << ": " << msg;
    os << '\n';
    if (!ok) ++failures;
  }
  return failures == 0 ? 0 : 1;
}

}  // namespace fsk::selftest
