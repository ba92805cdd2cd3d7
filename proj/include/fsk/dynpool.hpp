#pragma once

// Group-wise pooling over ragged point groups, the scatter/gather core
// every other module is built on.
//
// pool_naive is the straightforward single-pass scatter reference.
// pool runs a two-phase plan: per-subgroup partials computed
// independently, then combined per group in ascending subgroup order.
// Because the subgroup structure is fixed by the plan (not by the thread
// count), results are bit-identical for any number of threads.

#include "fsk/core.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

#include <algorithm>
#include <cstdlib>
#include <limits>
#include <string>
#include <vector>

namespace fsk::dynpool {

using MatI = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class PoolKind { kMax, kAvg };

// Execution plan for pool(): foreground rows sorted by group id (ties in
// original row order) and chunked into subgroups of at most chunk_size
// rows each. Subgroups of one group are adjacent; group g owns
// subgroups [group_subgroup_begin[g], group_subgroup_begin[g+1]).
struct PoolPlan {
  struct SubGroup {
    int group_id;
    int begin;  // half-open range into permutation
    int end;
  };

  std::vector<int> permutation;  // non-background rows, group-major
  std::vector<SubGroup> subgroups;
  std::vector<int> group_subgroup_begin;  // length num_groups + 1
  std::vector<int> group_sizes;           // member count per group
  int num_groups = 0;
  int source_rows = 0;
  int chunk_size = 0;
};

inline PoolPlan plan(const GroupIndex& index, int chunk_size = 256) {
  detail::require(chunk_size > 0, "plan: chunk_size must be positive");
  index.validate();

  PoolPlan p;
  p.num_groups = index.num_groups;
  p.source_rows = index.size();
  p.chunk_size = chunk_size;
  p.group_sizes = index.group_sizes();

  // Counting sort by group id keeps ties in original row order.
  std::vector<int> offsets(static_cast<std::size_t>(index.num_groups) + 1, 0);
  for (int g = 0; g < index.num_groups; ++g) offsets[static_cast<std::size_t>(g) + 1] = offsets[static_cast<std::size_t>(g)] + p.group_sizes[static_cast<std::size_t>(g)];
  p.permutation.resize(static_cast<std::size_t>(offsets.back()));
  std::vector<int> cursor(offsets.begin(), offsets.end() - 1);
  for (int i = 0; i < index.size(); ++i) {
    const int g = index.ids(i);
    if (g >= 0) p.permutation[static_cast<std::size_t>(cursor[static_cast<std::size_t>(g)]++)] = i;
  }

  p.group_subgroup_begin.resize(static_cast<std::size_t>(index.num_groups) + 1, 0);
  for (int g = 0; g < index.num_groups; ++g) {
    p.group_subgroup_begin[static_cast<std::size_t>(g)] = static_cast<int>(p.subgroups.size());
    for (int b = offsets[static_cast<std::size_t>(g)]; b < offsets[static_cast<std::size_t>(g) + 1]; b += chunk_size) {
      p.subgroups.push_back({g, b, std::min(b + chunk_size, offsets[static_cast<std::size_t>(g) + 1])});
    }
  }
  p.group_subgroup_begin[static_cast<std::size_t>(index.num_groups)] = static_cast<int>(p.subgroups.size());
  return p;
}

// Pooled output: group_values is num_groups x C. argmax (max pooling
// only) holds the original row index of each winning element, -1 for
// empty groups; ties go to the lowest row index.
template <typename Scalar>
struct PoolResult {
  MatrixX<Scalar> group_values;
  MatI argmax;
};

// Reference implementation: one pass over rows in original order.
template <typename Scalar>
PoolResult<Scalar> pool_naive(const MatrixX<Scalar>& F, const GroupIndex& index, PoolKind kind) {
  detail::require(F.rows() == index.size(), "pool_naive: row count mismatch");
  index.validate();
  const Eigen::Index M = index.num_groups;
  const Eigen::Index C = F.cols();

  PoolResult<Scalar> out;
  out.group_values = MatrixX<Scalar>::Zero(M, C);
  if (kind == PoolKind::kMax) {
    out.argmax = MatI::Constant(M, C, -1);
    for (int i = 0; i < index.size(); ++i) {
      const int g = index.ids(i);
      if (g < 0) continue;
      const Scalar* row = F.row(i).data();
      Scalar* best = out.group_values.row(g).data();
      int* arg = out.argmax.row(g).data();
      for (Eigen::Index c = 0; c < C; ++c) {
        if (arg[c] < 0 || row[c] > best[c]) {
          best[c] = row[c];
          arg[c] = i;
        }
      }
    }
  } else {
    std::vector<int> counts = index.group_sizes();
    for (int i = 0; i < index.size(); ++i) {
      const int g = index.ids(i);
      if (g >= 0) out.group_values.row(g) += F.row(i);
    }
    for (Eigen::Index g = 0; g < M; ++g)
      if (counts[static_cast<std::size_t>(g)] > 0)
        out.group_values.row(g) /= static_cast<Scalar>(counts[static_cast<std::size_t>(g)]);
  }
  return out;
}

// Planned two-phase pooling. Bit-identical to itself for any `threads`;
// identical to pool_naive for max, equal within rounding for avg (the
// summation tree differs).
template <typename Scalar>
PoolResult<Scalar> pool(const MatrixX<Scalar>& F, const PoolPlan& p, PoolKind kind, int threads = 1) {
  detail::require(F.rows() == p.source_rows, "pool: F rows do not match plan");
  const Eigen::Index M = p.num_groups;
  const Eigen::Index C = F.cols();
  const auto S = static_cast<Eigen::Index>(p.subgroups.size());

  PoolResult<Scalar> out;
  out.group_values = MatrixX<Scalar>::Zero(M, C);
  if (kind == PoolKind::kMax) out.argmax = MatI::Constant(M, C, -1);

  MatrixX<Scalar> partial(S, C);
  MatI partial_arg;
  if (kind == PoolKind::kMax) partial_arg.resize(S, C);

#ifdef _OPENMP
  const int nthreads = std::max(1, threads);
#pragma omp parallel num_threads(nthreads)
#endif
  {
    // Phase 1: each subgroup reduces its own rows; no cross-thread state.
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
    for (Eigen::Index s = 0; s < S; ++s) {
      const auto& sg = p.subgroups[static_cast<std::size_t>(s)];
      Scalar* acc = partial.row(s).data();
      if (kind == PoolKind::kMax) {
        int* arg = partial_arg.row(s).data();
        const int r0 = p.permutation[static_cast<std::size_t>(sg.begin)];
        const Scalar* row0 = F.row(r0).data();
        for (Eigen::Index c = 0; c < C; ++c) {
          acc[c] = row0[c];
          arg[c] = r0;
        }
        for (int k = sg.begin + 1; k < sg.end; ++k) {
          const int r = p.permutation[static_cast<std::size_t>(k)];
          const Scalar* row = F.row(r).data();
          for (Eigen::Index c = 0; c < C; ++c) {
            if (row[c] > acc[c]) {
              acc[c] = row[c];
              arg[c] = r;
            }
          }
        }
      } else {
        for (Eigen::Index c = 0; c < C; ++c) acc[c] = Scalar(0);
        for (int k = sg.begin; k < sg.end; ++k) {
          const Scalar* row = F.row(p.permutation[static_cast<std::size_t>(k)]).data();
          for (Eigen::Index c = 0; c < C; ++c) acc[c] += row[c];
        }
      }
    }

    // Phase 2: combine each group's subgroup partials in ascending order.
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
    for (Eigen::Index g = 0; g < M; ++g) {
      const int sb = p.group_subgroup_begin[static_cast<std::size_t>(g)];
      const int se = p.group_subgroup_begin[static_cast<std::size_t>(g) + 1];
      if (sb == se) continue;  // empty group keeps the zero row
      Scalar* dst = out.group_values.row(g).data();
      if (kind == PoolKind::kMax) {
        int* darg = out.argmax.row(g).data();
        const Scalar* src0 = partial.row(sb).data();
        const int* sarg0 = partial_arg.row(sb).data();
        for (Eigen::Index c = 0; c < C; ++c) {
          dst[c] = src0[c];
          darg[c] = sarg0[c];
        }
        for (int s = sb + 1; s < se; ++s) {
          const Scalar* src = partial.row(s).data();
          const int* sarg = partial_arg.row(s).data();
          for (Eigen::Index c = 0; c < C; ++c) {
            // Strict > keeps the earliest row: subgroup row ranges ascend.
            if (src[c] > dst[c]) {
              dst[c] = src[c];
              darg[c] = sarg[c];
            }
          }
        }
      } else {
        for (Eigen::Index c = 0; c < C; ++c) dst[c] = Scalar(0);
        for (int s = sb; s < se; ++s) {
          const Scalar* src = partial.row(s).data();
          for (Eigen::Index c = 0; c < C; ++c) dst[c] += src[c];
        }
        const auto inv = Scalar(1) / static_cast<Scalar>(p.group_sizes[static_cast<std::size_t>(g)]);
        for (Eigen::Index c = 0; c < C; ++c) dst[c] *= inv;
      }
    }
  }
  return out;
}

// Per-point gather of group rows; background rows come back zero.
template <typename Scalar>
MatrixX<Scalar> broadcast(const MatrixX<Scalar>& G, const GroupIndex& index, int threads = 1) {
  detail::require(G.rows() == index.num_groups, "broadcast: G rows must equal num_groups");
  index.validate();
  const Eigen::Index N = index.size();
  MatrixX<Scalar> out(N, G.cols());
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(std::max(1, threads))
#endif
  for (Eigen::Index i = 0; i < N; ++i) {
    const int g = index.ids(i);
    if (g < 0)
      out.row(i).setZero();
    else
      out.row(i) = G.row(g);
  }
  return out;
}

// Adjoint of broadcast: per-group sum of point rows, in ascending row
// order (deterministic).
template <typename Scalar>
MatrixX<Scalar> segment_sum(const MatrixX<Scalar>& F, const GroupIndex& index) {
  detail::require(F.rows() == index.size(), "segment_sum: row count mismatch");
  MatrixX<Scalar> out = MatrixX<Scalar>::Zero(index.num_groups, F.cols());
  for (int i = 0; i < index.size(); ++i) {
    const int g = index.ids(i);
    if (g >= 0) out.row(g) += F.row(i);
  }
  return out;
}

// Gradient of pooling w.r.t. F. Max routes each group/channel gradient
// to its argmax row; avg spreads the gradient uniformly over members.
template <typename Scalar>
MatrixX<Scalar> pool_backward(const MatrixX<Scalar>& grad_G, const GroupIndex& index,
                              const PoolResult<Scalar>& forward, PoolKind kind) {
  detail::require(grad_G.rows() == index.num_groups, "pool_backward: grad rows must equal num_groups");
  const Eigen::Index C = grad_G.cols();
  MatrixX<Scalar> grad_F = MatrixX<Scalar>::Zero(index.size(), C);
  if (kind == PoolKind::kMax) {
    detail::require(forward.argmax.rows() == index.num_groups && forward.argmax.cols() == C,
                    "pool_backward: argmax shape mismatch");
    for (Eigen::Index g = 0; g < grad_G.rows(); ++g) {
      const int* arg = forward.argmax.row(g).data();
      const Scalar* gg = grad_G.row(g).data();
      for (Eigen::Index c = 0; c < C; ++c)
        if (arg[c] >= 0) grad_F(arg[c], c) += gg[c];
    }
  } else {
    const std::vector<int> counts = index.group_sizes();
    for (int i = 0; i < index.size(); ++i) {
      const int g = index.ids(i);
      if (g >= 0) grad_F.row(i) += grad_G.row(g) / static_cast<Scalar>(counts[static_cast<std::size_t>(g)]);
    }
  }
  return grad_F;
}

// Thread count resolution: explicit request wins, then the FSK_THREADS
// environment variable, then the hardware default.
inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("FSK_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
#ifdef _OPENMP
  return std::max(1, omp_get_max_threads());
#else
  return 1;
#endif
}

}  // namespace fsk::dynpool
