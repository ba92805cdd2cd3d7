#pragma once

// Pooling benchmark grid: feature dims x group-size regimes x balance
// modes, optimized backend vs the naive single-pass scatter. Every cell
// passes an exact-equivalence gate before any timing; warm-up
// repetitions are excluded and the median is reported.

#include "fsk/core.hpp"
#include "fsk/dynpool.hpp"
#include "fsk/synth.hpp"

#include <algorithm>
#include <chrono>
#include <sstream>
#include <string>
#include <vector>

namespace fsk::bench {

struct Regime {
  int lo = 1;  // group sizes uniform in [lo, hi)
  int hi = 10;
};

struct BenchSpec {
  std::vector<int> dims{64, 256, 1024};
  std::vector<Regime> regimes{{1, 10}, {10, 100}, {100, 1000}, {1000, 10000}};
  std::vector<bool> balance_modes{true, false};  // balanced, imbalanced
  int num_groups = 100;
  int reps = 20;
  int warmups = 3;
  int threads = 1;
  int chunk_size = 256;
  std::uint64_t seed = 42;
  bool break_equivalence = false;  // debug hook: corrupt one optimized value
};

struct BenchRow {
  int dim = 0;
  int regime_lo = 0;
  int regime_hi = 0;
  bool balanced = true;
  std::string backend;
  int threads = 1;
  double median_ms = 0;
  double speedup = 1.0;  // naive median / this backend's median
};

struct BenchResult {
  std::vector<BenchRow> rows;
  bool equivalence_ok = true;
  std::string failure;  // first failing cell, when equivalence_ok is false
};

inline std::string csv_header() {
  return "dim,regime_lo,regime_hi,balanced,backend,threads,median_ms,speedup";
}

inline std::string to_csv_row(const BenchRow& r) {
  std::ostringstream os;
  os << r.dim << ',' << r.regime_lo << ',' << r.regime_hi << ',' << (r.balanced ? 1 : 0) << ','
     << r.backend << ',' << r.threads << ',' << r.median_ms << ',' << r.speedup;
  return os.str();
}

namespace detail {

using fsk::detail::require;

template <typename F>
double median_ms(F&& fn, int warmups, int reps) {
  for (int i = 0; i < warmups; ++i) fn();
  std::vector<double> t(static_cast<std::size_t>(reps));
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    t[static_cast<std::size_t>(i)] = std::chrono::duration<double, std::milli>(t1 - t0).count();
  }
  std::sort(t.begin(), t.end());
  const std::size_t n = t.size();
  return n % 2 == 1 ? t[n / 2] : 0.5 * (t[n / 2 - 1] + t[n / 2]);
}

}  // namespace detail

// Runs one cell: equivalence gate, then timed repetitions per backend.
// Returns false (with message) if the gate fails.
inline bool run_cell(const BenchSpec& spec, int dim, const Regime& regime, bool balanced,
                     std::vector<BenchRow>& rows, std::string& failure) {
  synth::WorkloadSpec w;
  w.num_groups = spec.num_groups;
  w.size_lo = regime.lo;
  w.size_hi = regime.hi;
  w.feature_dim = dim;
  w.imbalanced = !balanced;
  const std::uint64_t cell_seed =
      spec.seed ^ (static_cast<std::uint64_t>(dim) << 32) ^
      (static_cast<std::uint64_t>(regime.lo) << 16) ^ static_cast<std::uint64_t>(balanced);
  auto [F, I] = synth::gen_workload<float>(w, cell_seed);
  const dynpool::PoolPlan plan = dynpool::plan(I, spec.chunk_size);

  // Equivalence gate: bit-identical max pooling between backends.
  {
    const auto ref = dynpool::pool_naive(F, I, dynpool::PoolKind::kMax);
    auto got = dynpool::pool(F, plan, dynpool::PoolKind::kMax, spec.threads);
    if (spec.break_equivalence && got.group_values.size() > 0) got.group_values(0, 0) += 1.0f;
    const bool same = got.group_values.rows() == ref.group_values.rows() &&
                      got.group_values.cols() == ref.group_values.cols() &&
                      (got.group_values.array() == ref.group_values.array()).all() &&
                      (got.argmax.array() == ref.argmax.array()).all();
    if (!same) {
      std::ostringstream os;
      os << "equivalence failed: dim=" << dim << " regime=[" << regime.lo << ',' << regime.hi
         << ") balanced=" << balanced;
      failure = os.str();
      return false;
    }
  }

  const double naive_ms = detail::median_ms(
      [&] { dynpool::pool_naive(F, I, dynpool::PoolKind::kMax); }, spec.warmups, spec.reps);
  const double opt_ms = detail::median_ms(
      [&] { dynpool::pool(F, plan, dynpool::PoolKind::kMax, spec.threads); }, spec.warmups,
      spec.reps);

  BenchRow naive;
  naive.dim = dim;
  naive.regime_lo = regime.lo;
  naive.regime_hi = regime.hi;
  naive.balanced = balanced;
  naive.backend = "naive";
  naive.threads = 1;
  naive.median_ms = naive_ms;
  naive.speedup = 1.0;
  rows.push_back(naive);

  BenchRow opt = naive;
  opt.backend = "optimized";
  opt.threads = spec.threads;
  opt.median_ms = opt_ms;
  opt.speedup = opt_ms > 0 ? naive_ms / opt_ms : 0.0;
  rows.push_back(opt);
  return true;
}

// Full grid; cells are processed one at a time so only one workload is
// resident (the largest cell holds ~1M rows x 1024 f32).
inline BenchResult run_grid(const BenchSpec& spec) {
  detail::require(spec.reps >= 1, "bench: reps must be >= 1");
  detail::require(spec.warmups >= 0, "bench: warmups must be >= 0");
  BenchResult result;
  for (int dim : spec.dims)
    for (const Regime& regime : spec.regimes)
      for (bool balanced : spec.balance_modes) {
        if (!run_cell(spec, dim, regime, balanced, result.rows, result.failure)) {
          result.equivalence_ok = false;
          return result;
        }
      }
  return result;
}

}  // namespace fsk::bench
