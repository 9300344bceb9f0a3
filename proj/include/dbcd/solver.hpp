#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <type_traits>
#include <vector>

#include "dbcd/data.hpp"
#include "dbcd/kernels.hpp"
#include "dbcd/losses.hpp"
#include "dbcd/rff.hpp"
#include "dbcd/rng.hpp"
#include "dbcd/types.hpp"

namespace dbcd {

// =========================================================================
// Block partition
// =========================================================================

/// Fixed disjoint blocks covering [0, n): indices are shuffled by the seed
/// and chopped into consecutive blocks of the target size, with at most one
/// smaller remainder block at the end.
struct BlockPartition {
  std::vector<std::vector<Index>> blocks;
  Index n = 0;
  Index target = 0;

  std::size_t size() const { return blocks.size(); }
};

inline BlockPartition partition_blocks(Index n, Index block_size, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("partition_blocks: n must be >= 1");
  if (block_size < 1) throw std::invalid_argument("partition_blocks: block_size must be >= 1");
  block_size = std::min(block_size, n);
  std::vector<Index> idx(n);
  std::iota(idx.begin(), idx.end(), Index(0));
  Rng rng(seed);
  rng.shuffle(idx.begin(), idx.end());
  BlockPartition part;
  part.n = n;
  part.target = block_size;
  for (Index start = 0; start < n; start += block_size) {
    const Index len = std::min(block_size, n - start);
    part.blocks.emplace_back(idx.begin() + start, idx.begin() + start + len);
  }
  return part;
}

// =========================================================================
// Trust-region configuration
// =========================================================================

template <typename T>
struct TrustRegionConfig {
  T delta_max = T(1);   // max radius
  T eta = T(0.1);       // step acceptance threshold, in [0, 1/4]
  T eps_tol = T(1e-5);  // CG residual tolerance and radius-expansion slack
  int max_tr_iters = 50;
  int max_cg_iters = 10;
  // Box handling on CG truncation: adopt the violating iterate before
  // breaking and rely on the final clamp (default), or break first and keep
  // the last feasible iterate.
  bool cg_adopt_on_box_hit = true;

  void validate() const {
    if (!(delta_max > T(0))) throw std::invalid_argument("delta_max must be > 0");
    if (!(eta >= T(0) && eta <= T(0.25))) throw std::invalid_argument("eta must be in [0, 1/4]");
    if (!(eps_tol > T(0))) throw std::invalid_argument("eps_tol must be > 0");
    if (max_tr_iters < 1) throw std::invalid_argument("max_tr_iters must be >= 1");
    if (max_cg_iters < 1) throw std::invalid_argument("max_cg_iters must be >= 1");
  }
};

// =========================================================================
// Truncated CG-Steihaug with box truncation
// =========================================================================

/// Positive root of ||s + w*d|| = delta, given ||s|| < delta and d != 0.
template <typename T>
T boundary_intersection(const VectorX<T>& s, const VectorX<T>& d, T delta) {
  const T dd = d.squaredNorm();
  if (!(dd > T(0))) throw std::invalid_argument("boundary_intersection: d must be nonzero");
  const T sd = s.dot(d);
  const T ss = s.squaredNorm();
  const T disc = std::max(sd * sd + dd * (delta * delta - ss), T(0));
  const T root = std::sqrt(disc);
  // cancellation-free branch of the quadratic formula
  return sd <= T(0) ? (root - sd) / dd : (delta * delta - ss) / (sd + root);
}

namespace detail {

template <typename T>
bool violates_box(const VectorX<T>& alpha, const VectorX<T>& s, const VectorX<T>& lo,
                  const VectorX<T>& hi) {
  for (Index i = 0; i < s.size(); ++i) {
    const T a = alpha[i] + s[i];
    if (a < lo[i] || a > hi[i]) return true;
  }
  return false;
}

}  // namespace detail

/// Minimize the quadratic model mu(s) = g's + s'Qs/2 over the intersection of
/// the trust region ||s|| <= delta and the box tau_lower <= alpha_B + s <=
/// tau_upper, by conjugate gradients truncated at the region boundary, at a
/// box violation, at residual ||r||^2 <= eps_tol, or after max_iters steps,
/// followed by a componentwise clamp to the box.
///
/// Qmul is any callable computing out = Q * v for symmetric positive
/// semidefinite Q. The returned step always satisfies the box exactly (in
/// the arithmetic sense: alpha_B + s stays inside), ||s|| <= delta up to
/// roundoff, and mu(s) <= mu(0).
template <typename T, typename QMul>
VectorX<T> tcg_steihaug_op(QMul&& Qmul, const VectorX<T>& g, const VectorX<T>& alpha_B,
                           const VectorX<T>& tau_upper, const VectorX<T>& tau_lower, T delta,
                           T eps_tol, int max_iters, bool adopt_on_box_hit = true) {
  const Index m = g.size();
  if (!g.allFinite()) throw numerical_error("tcg_steihaug: non-finite gradient");
  VectorX<T> s = VectorX<T>::Zero(m);
  VectorX<T> r = -g;
  VectorX<T> d = r;
  VectorX<T> qd(m), s_next(m);
  T r2old = r.squaredNorm();
  if (r2old > eps_tol) {
    for (int it = 0; it < max_iters; ++it) {
      Qmul(d, qd);
      const T dqd = d.dot(qd);
      if (!(dqd > T(0))) {
        // flat or (numerically) negative curvature: march to the boundary
        s += boundary_intersection(s, d, delta) * d;
        break;
      }
      const T omega = r2old / dqd;
      s_next = s + omega * d;
      if (s_next.norm() > delta) {
        s += boundary_intersection(s, d, delta) * d;
        break;
      }
      if (detail::violates_box(alpha_B, s_next, tau_lower, tau_upper)) {
        if (adopt_on_box_hit) s = s_next;
        break;
      }
      s = s_next;
      r -= omega * qd;
      const T r2new = r.squaredNorm();
      if (r2new <= eps_tol) break;
      d = r + (r2new / r2old) * d;
      r2old = r2new;
    }
  }
  // clamp into the box: s = max(min(s, tau_upper - alpha), tau_lower - alpha)
  for (Index i = 0; i < m; ++i) {
    s[i] = std::max(std::min(s[i], tau_upper[i] - alpha_B[i]), tau_lower[i] - alpha_B[i]);
    // alpha + s must land inside the box in floating point as well;
    // nudging toward zero always restores feasibility since alpha is feasible
    while (alpha_B[i] + s[i] > tau_upper[i] || alpha_B[i] + s[i] < tau_lower[i])
      s[i] = std::nextafter(s[i], T(0));
  }
  // The clamp is not a projection in the Q-metric, so guard the model
  // decrease: halve the step until mu(s) <= 0 (halved steps stay feasible and
  // inside the region), falling back to zero.
  Qmul(s, qd);
  T mu = g.dot(s) + T(0.5) * s.dot(qd);
  if (mu > T(0)) {
    for (int k = 0; k < 64 && mu > T(0); ++k) {
      s *= T(0.5);
      Qmul(s, qd);
      mu = g.dot(s) + T(0.5) * s.dot(qd);
    }
    if (mu > T(0)) s.setZero();
  }
  return s;
}

template <typename T>
VectorX<T> tcg_steihaug(const MatrixX<T>& Q, const VectorX<T>& g, const VectorX<T>& alpha_B,
                        const VectorX<T>& tau_upper, const VectorX<T>& tau_lower, T delta,
                        T eps_tol, int max_iters, bool adopt_on_box_hit = true) {
  return tcg_steihaug_op(
      [&Q](const VectorX<T>& v, VectorX<T>& out) { out.noalias() = Q * v; }, g, alpha_B,
      tau_upper, tau_lower, delta, eps_tol, max_iters, adopt_on_box_hit);
}

// =========================================================================
// Trust-region solve of one block subproblem
// =========================================================================

template <typename T>
struct TrustRegionStats {
  int iterations = 0;
  int accepted = 0;
  T objective_decrease = T(0);  // J(entry) - J(exit), >= 0
  std::vector<T> rho;           // acceptance ratios, one per iteration
};

/// Run up to max_tr_iters trust-region iterations on the block subproblem
///   J(a) = a'K_BB a/2 + c'a + f(a),  tau_lower <= a <= tau_upper,
/// where the fixed coupling c is implied by gbar = K_{B,:} alpha. alpha_B and
/// gbar are updated in place on accepted steps (gbar += K_BB * s). The loss
/// adapter supplies box(y), value(y,a), and model_grad_hess(y,a,g,h).
template <typename T, typename Loss>
void trust_region_solve(const MatrixX<T>& K_BB, VectorX<T>& alpha_B, VectorX<T>& gbar,
                        const VectorX<T>& y_B, const Loss& loss,
                        const TrustRegionConfig<T>& cfg, TrustRegionStats<T>* stats = nullptr) {
  cfg.validate();
  const Index m = alpha_B.size();
  VectorX<T> tau_lower(m), tau_upper(m);
  for (Index i = 0; i < m; ++i) {
    const auto box = loss.box(y_B[i]);
    tau_lower[i] = box.lower;
    tau_upper[i] = box.upper;
  }
  // Penalties with a kink at zero (the epsilon-insensitive term): the
  // linearized model is exact only while every coordinate keeps its sign, so
  // each step is restricted to the current orthant. A coordinate sitting at
  // zero moves along its descending one-sided slope, or is frozen for this
  // step when zero is stationary (both one-sided slopes point uphill).
  T kink = T(0);
  if constexpr (requires { loss.interior_kink_weight(); })
    kink = loss.interior_kink_weight();
  VectorX<T> step_lower = tau_lower, step_upper = tau_upper;
  const auto apply_kink_rules = [&](const VectorX<T>& a, VectorX<T>& g) {
    if (kink <= T(0)) return;
    for (Index i = 0; i < m; ++i) {
      step_lower[i] = tau_lower[i];
      step_upper[i] = tau_upper[i];
      if (a[i] > T(0)) {
        step_lower[i] = std::max(tau_lower[i], T(0));
      } else if (a[i] < T(0)) {
        step_upper[i] = std::min(tau_upper[i], T(0));
      } else {
        const T right = g[i] + kink;  // slope of J along +e_i
        const T left = g[i] - kink;   // slope of J along +e_i from the left
        if (right < T(0)) {
          g[i] = right;
          step_lower[i] = std::max(tau_lower[i], T(0));
        } else if (left > T(0)) {
          g[i] = left;
          step_upper[i] = std::min(tau_upper[i], T(0));
        } else {
          g[i] = T(0);  // stationary kink: freeze
          step_lower[i] = T(0);
          step_upper[i] = T(0);
        }
      }
    }
  };

  VectorX<T> alpha = alpha_B;
  T f_val = loss.value(y_B, alpha);
  // |J| at entry, used only to scale the model-decrease guard
  VectorX<T> Ka(m);
  Ka.noalias() = K_BB * alpha;
  T j_abs = std::abs(gbar.dot(alpha) - T(0.5) * alpha.dot(Ka) + f_val);
  if (!std::isfinite(j_abs))
    throw numerical_error("trust_region_solve: non-finite block objective");
  const T guard_coeff = std::max(T(1e-14), T(8) * std::numeric_limits<T>::epsilon());

  T delta = cfg.delta_max / T(4);
  VectorX<T> fgrad(m), fhess(m), g_k(m), s(m), Ks(m), alpha_trial(m);
  bool grad_dirty = true;
  for (int k = 0; k < cfg.max_tr_iters; ++k) {
    if (grad_dirty) {
      loss.model_grad_hess(y_B, alpha, fgrad, fhess);
      grad_dirty = false;
    }
    g_k = gbar + fgrad;
    apply_kink_rules(alpha, g_k);
    s = tcg_steihaug_op(
        [&](const VectorX<T>& v, VectorX<T>& out) {
          out.noalias() = K_BB * v;
          out.array() += fhess.array() * v.array();
        },
        g_k, alpha, step_upper, step_lower, delta, cfg.eps_tol, cfg.max_cg_iters,
        cfg.cg_adopt_on_box_hit);
    if (stats) ++stats->iterations;
    // exact feasibility of the trial point, then re-derive the step
    for (Index i = 0; i < m; ++i) {
      const T a = alpha[i] + s[i];
      alpha_trial[i] = std::max(std::min(a, step_upper[i]), step_lower[i]);
      s[i] = alpha_trial[i] - alpha[i];
    }
    Ks.noalias() = K_BB * s;
    const T skews = T(0.5) * s.dot(Ks);
    const T pred = -(g_k.dot(s) + skews + T(0.5) * fhess.dot(s.cwiseAbs2()));
    if (!(pred > guard_coeff * (T(1) + j_abs))) {
      // stationary within numerical noise: no model decrease available
      delta /= T(4);
      if (stats) stats->rho.push_back(T(0));
      break;
    }
    const T f_trial = loss.value(y_B, alpha_trial);
    const T actual = -(gbar.dot(s) + skews + (f_trial - f_val));
    if (!std::isfinite(actual) || !std::isfinite(pred))
      throw numerical_error("trust_region_solve: non-finite objective change");
    const T rho = actual / pred;
    if (stats) stats->rho.push_back(rho);
    if (rho < T(0.5)) {
      delta /= T(4);
    } else if (rho > T(0.75) && delta - s.norm() < cfg.eps_tol) {
      delta = std::min(T(2) * delta, cfg.delta_max);
    }
    if (rho > cfg.eta) {
      alpha = alpha_trial;
      gbar += Ks;
      f_val = f_trial;
      j_abs = std::max(j_abs - actual, T(0));
      grad_dirty = true;
      if (stats) {
        ++stats->accepted;
        stats->objective_decrease += actual;
      }
    }
  }
  alpha_B = alpha;
}

// =========================================================================
// Outer DBCD loop
// =========================================================================

template <typename T>
struct DualState {
  VectorX<T> alpha;
  VectorX<T> theta;  // maintained weight vector; size 0 in exact mode
  BlockPartition partition;
  std::uint64_t iteration = 0;
  Rng rng{0};  // block-selection stream
  bool inexact = false;
};

/// Uniform choice among the partition blocks; advances the state's rng.
template <typename T>
std::size_t select_block(DualState<T>& state) {
  if (state.partition.blocks.empty())
    throw std::invalid_argument("select_block: empty partition");
  return static_cast<std::size_t>(state.rng.below(state.partition.blocks.size()));
}

template <typename T>
struct SolveOptions {
  TrustRegionConfig<T> tr;
  std::uint64_t iterations = 0;
  Index chunk = 8192;                 // column chunk of the exact kernel gradient
  std::uint64_t selection_seed = 1;   // block-selection stream seed
  std::uint64_t callback_every = 1;   // progress cadence
  // Return false to stop training early. Also invoked on the final iteration.
  std::function<bool(const DualState<T>&, std::uint64_t)> progress;
};

namespace detail {

/// Exact-kernel block assembly: K_BB by direct evaluation, gbar = K_{B,:}a
/// recomputed fresh each outer iteration in column chunks.
template <typename T>
class ExactEngine {
 public:
  ExactEngine(const Dataset<T>& data, const std::type_identity_t<Normalization<T>>* norm, const KernelSpec& spec,
              Index chunk)
      : data_(data), norm_(norm), spec_(spec), chunk_(std::max<Index>(1, chunk)) {}

  void assemble(const std::vector<Index>& block, const DualState<T>& state, MatrixX<T>& K_BB,
                VectorX<T>& gbar) {
    gather(block, X_B_);
    K_BB = kernel_gram(spec_, X_B_);
    const Index nb = static_cast<Index>(block.size());
    gbar.setZero(nb);
    for (Index c0 = 0; c0 < data_.n; c0 += chunk_) {
      const Index len = std::min(chunk_, data_.n - c0);
      data_.gather_range(c0, c0 + len, X_C_);
      if (norm_) norm_->apply(X_C_);
      gbar.noalias() += kernel_block(spec_, X_B_, X_C_) * state.alpha.segment(c0, len);
    }
  }

  void commit(DualState<T>&, const VectorX<T>&) {}

 private:
  void gather(const std::vector<Index>& block, RowMatrix<T>& out) {
    data_.gather(block, out);
    if (norm_) norm_->apply(out);
  }

  const Dataset<T>& data_;
  const std::type_identity_t<Normalization<T>>* norm_;
  KernelSpec spec_;
  Index chunk_;
  RowMatrix<T> X_B_, X_C_;
};

/// Feature-map block assembly: K_BB = psi(X_B)'psi(X_B), gbar = psi(X_B)'theta,
/// and theta += psi(X_B) (alpha_B_new - alpha_B_old) on commit.
template <typename T>
class RffEngine {
 public:
  RffEngine(const Dataset<T>& data, const std::type_identity_t<Normalization<T>>* norm, const RffMap<T>& map,
            Index chunk)
      : data_(data), norm_(norm), map_(map), chunk_(std::max<Index>(1, chunk)) {}

  VectorX<T> initial_theta(const VectorX<T>& alpha) {
    VectorX<T> theta = VectorX<T>::Zero(map_.feature_dim());
    if ((alpha.array() != T(0)).any()) {
      for (Index c0 = 0; c0 < data_.n; c0 += chunk_) {
        const Index len = std::min(chunk_, data_.n - c0);
        data_.gather_range(c0, c0 + len, X_C_);
        if (norm_) norm_->apply(X_C_);
        theta.noalias() += rff_map(map_, X_C_) * alpha.segment(c0, len);
      }
    }
    return theta;
  }

  void assemble(const std::vector<Index>& block, const DualState<T>& state, MatrixX<T>& K_BB,
                VectorX<T>& gbar) {
    data_.gather(block, X_B_);
    if (norm_) norm_->apply(X_B_);
    psi_B_ = rff_map(map_, X_B_);
    const Index nb = psi_B_.cols();
    K_BB.resize(nb, nb);
    K_BB.noalias() = psi_B_.transpose() * psi_B_;
    for (Index j = 0; j < nb; ++j)  // force exact symmetry
      for (Index i = j + 1; i < nb; ++i) K_BB(j, i) = K_BB(i, j);
    gbar.noalias() = psi_B_.transpose() * state.theta;
  }

  void commit(DualState<T>& state, const VectorX<T>& delta_alpha) {
    state.theta.noalias() += psi_B_ * delta_alpha;
  }

 private:
  const Dataset<T>& data_;
  const std::type_identity_t<Normalization<T>>* norm_;
  const RffMap<T>& map_;
  Index chunk_;
  RowMatrix<T> X_B_, X_C_;
  MatrixX<T> psi_B_;
};

template <typename T, typename Engine>
DualState<T> dbcd_loop(const Dataset<T>& data, const DualLoss<T>& loss,
                       BlockPartition partition, const SolveOptions<T>& opts, Engine& engine,
                       bool inexact) {
  DualState<T> state;
  state.partition = std::move(partition);
  state.rng = Rng(opts.selection_seed);
  state.inexact = inexact;
  state.alpha.resize(data.n);
  for (Index i = 0; i < data.n; ++i) state.alpha[i] = loss.initial_alpha(data.labels[i]);
  if constexpr (std::is_same_v<Engine, RffEngine<T>>) {
    state.theta = engine.initial_theta(state.alpha);
  }

  MatrixX<T> K_BB;
  VectorX<T> gbar, alpha_B, y_B, delta_alpha;
  for (std::uint64_t t = 1; t <= opts.iterations; ++t) {
    const std::size_t bi = select_block(state);
    const auto& block = state.partition.blocks[bi];
    const Index nb = static_cast<Index>(block.size());
    engine.assemble(block, state, K_BB, gbar);
    alpha_B.resize(nb);
    y_B.resize(nb);
    for (Index i = 0; i < nb; ++i) {
      alpha_B[i] = state.alpha[block[i]];
      y_B[i] = data.labels[block[i]];
    }
    delta_alpha = alpha_B;
    trust_region_solve(K_BB, alpha_B, gbar, y_B, loss, opts.tr);
    if (!alpha_B.allFinite())
      throw numerical_error("dbcd_train: non-finite multiplier at iteration " + std::to_string(t));
    delta_alpha = alpha_B - delta_alpha;
    engine.commit(state, delta_alpha);
    for (Index i = 0; i < nb; ++i) state.alpha[block[i]] = alpha_B[i];
    state.iteration = t;
    if (opts.progress && (t % std::max<std::uint64_t>(1, opts.callback_every) == 0 ||
                          t == opts.iterations)) {
      if (!opts.progress(state, t)) break;
    }
  }
  return state;
}

}  // namespace detail

/// Exact-kernel training: block Gram and kernel gradient evaluated directly.
template <typename T>
DualState<T> dbcd_train(const Dataset<T>& data, const std::type_identity_t<Normalization<T>>* norm,
                        const DualLoss<T>& loss, const KernelSpec& kernel,
                        const BlockPartition& partition, const SolveOptions<T>& opts) {
  detail::ExactEngine<T> engine(data, norm, kernel, opts.chunk);
  return detail::dbcd_loop(data, loss, partition, opts, engine, /*inexact=*/false);
}

/// Feature-map training: the surrogate kernel psi'psi replaces exact kernel
/// evaluations and the weight vector theta = sum_i alpha_i psi(x_i) is
/// maintained incrementally.
template <typename T>
DualState<T> dbcd_train(const Dataset<T>& data, const std::type_identity_t<Normalization<T>>* norm,
                        const DualLoss<T>& loss, const RffMap<T>& map,
                        const BlockPartition& partition, const SolveOptions<T>& opts) {
  detail::RffEngine<T> engine(data, norm, map, opts.chunk);
  return detail::dbcd_loop(data, loss, partition, opts, engine, /*inexact=*/true);
}

}  // namespace dbcd
