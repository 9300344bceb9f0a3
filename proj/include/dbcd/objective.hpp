#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <type_traits>
#include <vector>

#include "dbcd/data.hpp"
#include "dbcd/kernels.hpp"
#include "dbcd/losses.hpp"
#include "dbcd/rff.hpp"
#include "dbcd/rng.hpp"
#include "dbcd/solver.hpp"
#include "dbcd/types.hpp"

namespace dbcd {

// =========================================================================
// Objectives and duality gap.
//
// The minimized dual is  D(a) = a'Ka/2 + (1/lambda) sum_i xi*(-lambda a_i);
// logs and reports carry its negation ("dual objective", the maximization
// form, which increases during training). The primal is
// P = theta'theta/2 + (1/lambda) sum_i loss(y_i, u_i) with u_i the raw score
// of sample i, and theta'theta = a'Ka. The duality gap P - (-D) >= 0 by weak
// duality and is the convergence certificate.
// =========================================================================

template <typename T>
struct ObjectiveValues {
  T dual = T(0);    // reported (maximization-form) dual objective
  T primal = T(0);  // primal objective
  T gap = T(0);     // primal - dual
  bool has_primal = false;
};

namespace detail {

/// u_S = K_{S,:} alpha over the (normalized) dataset, in column chunks.
template <typename T>
VectorX<T> kernel_scores(const Dataset<T>& data, const std::type_identity_t<Normalization<T>>* norm,
                         const KernelSpec& spec, const VectorX<T>& alpha,
                         const std::vector<Index>& rows, Index chunk) {
  RowMatrix<T> X_S, X_C;
  data.gather(rows, X_S);
  if (norm) norm->apply(X_S);
  VectorX<T> u = VectorX<T>::Zero(static_cast<Index>(rows.size()));
  chunk = std::max<Index>(1, chunk);
  for (Index c0 = 0; c0 < data.n; c0 += chunk) {
    const Index len = std::min(chunk, data.n - c0);
    data.gather_range(c0, c0 + len, X_C);
    if (norm) norm->apply(X_C);
    u.noalias() += kernel_block(spec, X_S, X_C) * alpha.segment(c0, len);
  }
  return u;
}

/// u_S = psi(X_S)' theta.
template <typename T>
VectorX<T> rff_scores(const Dataset<T>& data, const std::type_identity_t<Normalization<T>>* norm,
                      const RffMap<T>& map, const VectorX<T>& theta,
                      const std::vector<Index>& rows) {
  RowMatrix<T> X_S;
  data.gather(rows, X_S);
  if (norm) norm->apply(X_S);
  return rff_map(map, X_S).transpose() * theta;
}

}  // namespace detail

/// Exact minimization-form dual value of the current multipliers under the
/// exact kernel (O(n^2 d), chunked).
template <typename T>
T dual_objective_exact(const Dataset<T>& data, const std::type_identity_t<Normalization<T>>* norm,
                       const KernelSpec& spec, const DualLoss<T>& loss,
                       const VectorX<T>& alpha, Index chunk = 8192) {
  std::vector<Index> all(data.n);
  std::iota(all.begin(), all.end(), Index(0));
  const VectorX<T> u = detail::kernel_scores(data, norm, spec, alpha, all, chunk);
  return T(0.5) * alpha.dot(u) + loss.value(data.labels, alpha);
}

/// Minimization-form dual value in feature-map mode: theta'theta/2 replaces
/// the quadratic term (identical under the surrogate kernel).
template <typename T>
T dual_objective_inexact(const VectorX<T>& theta, const VectorX<T>& labels,
                         const DualLoss<T>& loss, const VectorX<T>& alpha) {
  return T(0.5) * theta.squaredNorm() + loss.value(labels, alpha);
}

// =========================================================================
// Matched-subsample estimator.
//
// Both objectives are estimated from the same index subsample S with exact
// per-sample scores u_i, scaling sums by n/|S|:
//   Q_S      = (n/|S|) sum_S alpha_i u_i          (estimates a'Ka)
//   dual     = -( Q_S/2 + (n/|S|) (1/lambda) sum_S xi*(-lambda alpha_i) )
//   primal   =    Q_S/2 + (n/|S|) (1/lambda) sum_S loss(y_i, u_i)
// The matched construction keeps gap = primal - dual >= 0 pointwise by the
// Fenchel-Young inequality, regardless of the subsample. With |S| = n the
// values are exact.
// =========================================================================

enum class PrimalEvalPolicy { off, subsample, full };

template <typename T>
class ObjectiveEstimator {
 public:
  /// Exact-kernel mode.
  ObjectiveEstimator(const Dataset<T>& data, const std::type_identity_t<Normalization<T>>* norm,
                     const KernelSpec& spec, const DualLoss<T>& loss, PrimalEvalPolicy policy,
                     Index subsample, std::uint64_t seed, Index chunk = 8192)
      : data_(data), norm_(norm), loss_(loss), spec_(spec), map_(nullptr), policy_(policy),
        chunk_(chunk) {
    pick_rows(subsample, seed);
  }

  /// Feature-map mode.
  ObjectiveEstimator(const Dataset<T>& data, const std::type_identity_t<Normalization<T>>* norm, const RffMap<T>& map,
                     const DualLoss<T>& loss, PrimalEvalPolicy policy, Index subsample,
                     std::uint64_t seed, Index chunk = 8192)
      : data_(data), norm_(norm), loss_(loss), map_(&map), policy_(policy), chunk_(chunk) {
    pick_rows(subsample, seed);
  }

  PrimalEvalPolicy policy() const { return policy_; }

  ObjectiveValues<T> evaluate(const DualState<T>& state) const {
    return evaluate(state.alpha, state.inexact ? &state.theta : nullptr);
  }

  ObjectiveValues<T> evaluate(const VectorX<T>& alpha, const VectorX<T>* theta) const {
    ObjectiveValues<T> out;
    if (policy_ == PrimalEvalPolicy::off && map_) {
      // no primal columns wanted: the exact feature-map dual is O(M + n)
      out.dual = -dual_objective_inexact(*theta, data_.labels, loss_, alpha);
      out.has_primal = false;
      return out;
    }
    const T scale = T(data_.n) / T(rows_.size());
    const VectorX<T> u = map_ ? detail::rff_scores(data_, norm_, *map_, *theta, rows_)
                              : detail::kernel_scores(data_, norm_, spec_, alpha, rows_, chunk_);
    const T lambda = loss_.lambda();
    T quad_s = T(0), conj = T(0), loss_sum = T(0);
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      const Index r = rows_[i];
      quad_s += alpha[r] * u[Index(i)];
      conj += conjugate_eval(loss_.kind(), data_.labels[r], -lambda * alpha[r]).value;
      loss_sum += primal_loss(loss_.kind(), data_.labels[r], u[Index(i)]);
    }
    quad_s *= scale;
    out.dual = -(T(0.5) * quad_s + scale * conj / lambda);
    out.primal = T(0.5) * quad_s + scale * loss_sum / lambda;
    out.gap = out.primal - out.dual;
    out.has_primal = policy_ != PrimalEvalPolicy::off;
    return out;
  }

 private:
  void pick_rows(Index subsample, std::uint64_t seed) {
    const Index n = data_.n;
    const Index m = policy_ == PrimalEvalPolicy::subsample ? std::min(subsample, n) : n;
    rows_.resize(n);
    std::iota(rows_.begin(), rows_.end(), Index(0));
    if (m < n) {
      Rng rng(seed);
      for (Index i = 0; i < m; ++i) {
        const Index j = i + static_cast<Index>(rng.below(static_cast<std::uint64_t>(n - i)));
        std::swap(rows_[i], rows_[j]);
      }
      rows_.resize(m);
    }
  }

  const Dataset<T>& data_;
  const std::type_identity_t<Normalization<T>>* norm_;
  DualLoss<T> loss_;
  KernelSpec spec_;
  const RffMap<T>* map_;
  PrimalEvalPolicy policy_;
  Index chunk_;
  std::vector<Index> rows_;
};

/// Exact primal/dual/gap triple (full evaluation; convenience for tests and
/// small problems).
template <typename T>
ObjectiveValues<T> duality_gap_exact(const Dataset<T>& data, const std::type_identity_t<Normalization<T>>* norm,
                                     const KernelSpec& spec, const DualLoss<T>& loss,
                                     const VectorX<T>& alpha, Index chunk = 8192) {
  ObjectiveEstimator<T> est(data, norm, spec, loss, PrimalEvalPolicy::full, data.n, 0, chunk);
  return est.evaluate(alpha, nullptr);
}

template <typename T>
ObjectiveValues<T> duality_gap_inexact(const Dataset<T>& data, const std::type_identity_t<Normalization<T>>* norm,
                                       const RffMap<T>& map, const DualLoss<T>& loss,
                                       const VectorX<T>& alpha, const VectorX<T>& theta) {
  ObjectiveEstimator<T> est(data, norm, map, loss, PrimalEvalPolicy::full, data.n, 0);
  return est.evaluate(alpha, &theta);
}

}  // namespace dbcd
