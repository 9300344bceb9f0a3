#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "dbcd/types.hpp"

namespace dbcd {

// =========================================================================
// Loss catalog
//
// Each loss family is described through the per-sample primal loss
// xi_y(u) = loss(y, u), its Fenchel conjugate xi*_y(v) with derivatives, and
// the induced feasible interval for the dual multiplier alpha under the
// substitution v = -lambda * alpha. The dual objective treated throughout is
//
//   (1/2) alpha' K alpha + (1/lambda) sum_i xi*_{y_i}(-lambda alpha_i),
//
// minimized subject to alpha staying inside the per-sample boxes.
// =========================================================================

enum class LossFamily {
  square,         // kernel ridge regression
  lp,             // |y-u|^p / p, p > 1
  l1,             // absolute loss
  huber,          // delta-smoothed absolute loss
  svr,            // epsilon-insensitive loss
  hinge,          // L1-SVC
  squared_hinge,  // L2-SVC
  logistic,       // kernel logistic regression
};

inline const char* loss_name(LossFamily f) {
  switch (f) {
    case LossFamily::square: return "square";
    case LossFamily::lp: return "lp";
    case LossFamily::l1: return "l1";
    case LossFamily::huber: return "huber";
    case LossFamily::svr: return "svr";
    case LossFamily::hinge: return "hinge";
    case LossFamily::squared_hinge: return "squared_hinge";
    case LossFamily::logistic: return "logistic";
  }
  return "?";
}

/// A loss family together with its hyperparameters. One model instance owns
/// exactly one configuration; hyperparameters are validated on construction.
struct LossKind {
  LossFamily family = LossFamily::square;
  double p = 2.0;        // lp exponent, p > 1
  double delta = 1.0;    // huber threshold, > 0
  double eps_ins = 0.0;  // svr insensitivity, >= 0

  static LossKind square() { return {LossFamily::square}; }
  static LossKind lp(double p) {
    if (!(p > 1.0)) throw std::invalid_argument("lp loss requires p > 1");
    LossKind k{LossFamily::lp};
    k.p = p;
    return k;
  }
  static LossKind l1() { return {LossFamily::l1}; }
  static LossKind huber(double delta) {
    if (!(delta > 0.0)) throw std::invalid_argument("huber loss requires delta > 0");
    LossKind k{LossFamily::huber};
    k.delta = delta;
    return k;
  }
  static LossKind svr(double eps_ins) {
    if (!(eps_ins >= 0.0)) throw std::invalid_argument("svr loss requires eps_ins >= 0");
    LossKind k{LossFamily::svr};
    k.eps_ins = eps_ins;
    return k;
  }
  static LossKind hinge() { return {LossFamily::hinge}; }
  static LossKind squared_hinge() { return {LossFamily::squared_hinge}; }
  static LossKind logistic() { return {LossFamily::logistic}; }

  /// Conjugate exponent q with 1/p + 1/q = 1.
  double conjugate_exponent() const { return p / (p - 1.0); }

  bool is_classification() const {
    return family == LossFamily::hinge || family == LossFamily::squared_hinge ||
           family == LossFamily::logistic;
  }

  /// Conjugates that are piecewise linear in v (zero curvature; the kernel
  /// block supplies all curvature of the trust-region model).
  bool has_piecewise_linear_conjugate() const {
    return family == LossFamily::l1 || family == LossFamily::svr ||
           family == LossFamily::hinge;
  }
};

/// Closed feasible interval for one dual multiplier.
template <typename T>
struct DualBox {
  T lower;
  T upper;

  bool contains(T a) const { return a >= lower && a <= upper; }
  T clamp(T a) const { return a < lower ? lower : (a > upper ? upper : a); }
};

namespace detail {

template <typename T>
inline T sgn0(T x) {
  // sign with sign(0) := 0
  return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0));
}

// log(1 + exp(z)) without overflow.
template <typename T>
inline T log1pexp(T z) {
  if (z > T(0)) return z + std::log1p(std::exp(-z));
  return std::log1p(std::exp(z));
}

// x log x with the convention 0 log 0 = 0.
template <typename T>
inline T xlogx(T x) {
  return x > T(0) ? x * std::log(x) : T(0);
}

// Curvature cap shared by the conjugates whose Hessian blows up at isolated
// points: min(h, eps_1^{-1/2}) with eps_1 the gap between 1 and the next
// smaller representable value at working precision.
template <typename T>
inline T curvature_cap() {
  const T eps1 = T(1) - std::nextafter(T(1), T(0));
  return T(1) / std::sqrt(eps1);
}

template <typename T>
inline void require_classification_label(const LossKind& kind, T y) {
  if (kind.is_classification() && y != T(1) && y != T(-1)) {
    throw std::invalid_argument(std::string(loss_name(kind.family)) +
                                " loss requires labels in {-1,+1}");
  }
}

}  // namespace detail

// -------------------------------------------------------------------------
// Primal losses xi_y(u)
// -------------------------------------------------------------------------

template <typename T>
T primal_loss(const LossKind& kind, T y, T u) {
  detail::require_classification_label(kind, y);
  switch (kind.family) {
    case LossFamily::square: {
      const T r = y - u;
      return T(0.5) * r * r;
    }
    case LossFamily::lp:
      return std::pow(std::abs(y - u), T(kind.p)) / T(kind.p);
    case LossFamily::l1:
      return std::abs(y - u);
    case LossFamily::huber: {
      const T d = T(kind.delta);
      const T r = std::abs(u - y);
      return r <= d ? T(0.5) * r * r : d * r - T(0.5) * d * d;
    }
    case LossFamily::svr: {
      const T r = std::abs(u - y) - T(kind.eps_ins);
      return r > T(0) ? r : T(0);
    }
    case LossFamily::hinge: {
      const T m = T(1) - y * u;
      return m > T(0) ? m : T(0);
    }
    case LossFamily::squared_hinge: {
      const T m = T(1) - y * u;
      return m > T(0) ? T(0.5) * m * m : T(0);
    }
    case LossFamily::logistic:
      return detail::log1pexp(-y * u);
  }
  return T(0);
}

// -------------------------------------------------------------------------
// Conjugates xi*_y(v)
// -------------------------------------------------------------------------

template <typename T>
struct ConjugateEval {
  T value;
  T grad;
  T hess;
};

namespace detail {

// Domain membership is checked with a few-ulp relative slack: the solver
// keeps alpha inside the box in alpha space, but v = -lambda*alpha can spill
// past the conjugate domain bound by rounding. In-slack values are clamped;
// beyond-slack values are a genuine violation.
template <typename T>
inline T check_domain(const LossKind& kind, T v, T lo, T hi) {
  const T slack = T(8) * std::numeric_limits<T>::epsilon() *
                  (T(1) + std::max(std::abs(lo) == std::numeric_limits<T>::infinity() ? T(0) : std::abs(lo),
                                   std::abs(hi) == std::numeric_limits<T>::infinity() ? T(0) : std::abs(hi)));
  if (v < lo - slack || v > hi + slack) {
    throw domain_violation(std::string(loss_name(kind.family)) +
                           " conjugate evaluated outside its domain: v=" + std::to_string(double(v)) +
                           " not in [" + std::to_string(double(lo)) + ", " + std::to_string(double(hi)) + "]");
  }
  return v < lo ? lo : (v > hi ? hi : v);
}

}  // namespace detail

template <typename T>
ConjugateEval<T> conjugate_eval(const LossKind& kind, T y, T v) {
  constexpr T inf = std::numeric_limits<T>::infinity();
  detail::require_classification_label(kind, y);
  switch (kind.family) {
    case LossFamily::square:
      return {T(0.5) * v * v + v * y, v + y, T(1)};
    case LossFamily::lp: {
      const T q = T(kind.conjugate_exponent());
      const T av = std::abs(v);
      const T value = std::pow(av, q) / q + v * y;
      const T grad = detail::sgn0(v) * std::pow(av, q - T(1)) + y;
      T hess;
      if (q == T(2)) {
        hess = T(1);
      } else if (av == T(0)) {
        hess = q > T(2) ? T(0) : detail::curvature_cap<T>();
      } else {
        hess = std::min((q - T(1)) * std::pow(av, q - T(2)), detail::curvature_cap<T>());
      }
      return {value, grad, hess};
    }
    case LossFamily::l1: {
      v = detail::check_domain(kind, v, T(-1), T(1));
      return {v * y, y, T(0)};
    }
    case LossFamily::huber: {
      const T d = T(kind.delta);
      v = detail::check_domain(kind, v, -d, d);
      return {T(0.5) * v * v + v * y, v + y, T(1)};
    }
    case LossFamily::svr: {
      v = detail::check_domain(kind, v, T(-1), T(1));
      const T e = T(kind.eps_ins);
      return {e * std::abs(v) + v * y, e * detail::sgn0(v) + y, T(0)};
    }
    case LossFamily::hinge: {
      // dom: -1 <= v*y <= 0
      v = y > T(0) ? detail::check_domain(kind, v, T(-1), T(0))
                   : detail::check_domain(kind, v, T(0), T(1));
      return {v * y, y, T(0)};
    }
    case LossFamily::squared_hinge: {
      v = y > T(0) ? detail::check_domain(kind, v, -inf, T(0))
                   : detail::check_domain(kind, v, T(0), inf);
      return {T(0.5) * v * v + v * y, v + y, T(1)};
    }
    case LossFamily::logistic: {
      // xi*_y(v) = bEnt(-v*y) on -1 <= v*y <= 0, with bEnt the binary entropy
      // x log x + (1-x) log(1-x) and 0 log 0 := 0. Derivatives are infinite
      // at the corners of the domain.
      v = y > T(0) ? detail::check_domain(kind, v, T(-1), T(0))
                   : detail::check_domain(kind, v, T(0), T(1));
      const T x = -v * y;
      const T one_minus = T(1) - x;
      const T value = detail::xlogx(x) + (x < T(1) ? one_minus * std::log1p(-x) : T(0));
      const T grad = -y * (std::log(x) - std::log(one_minus));
      const T hess = T(1) / (x * one_minus);
      return {value, grad, hess};
    }
  }
  return {T(0), T(0), T(0)};
}

// -------------------------------------------------------------------------
// Dual boxes: the alpha interval with -lambda*alpha in dom xi*_y
// -------------------------------------------------------------------------

template <typename T>
DualBox<T> dual_box(const LossKind& kind, T y, T lambda) {
  constexpr T inf = std::numeric_limits<T>::infinity();
  if (!(lambda > T(0))) throw std::invalid_argument("lambda must be > 0");
  detail::require_classification_label(kind, y);
  switch (kind.family) {
    case LossFamily::square:
    case LossFamily::lp:
      return {-inf, inf};
    case LossFamily::l1:
    case LossFamily::svr:
      return {T(-1) / lambda, T(1) / lambda};
    case LossFamily::huber: {
      const T b = T(kind.delta) / lambda;
      return {-b, b};
    }
    case LossFamily::hinge:
    case LossFamily::logistic:
      // 0 <= alpha*y <= 1/lambda
      return y > T(0) ? DualBox<T>{T(0), T(1) / lambda}
                      : DualBox<T>{T(-1) / lambda, T(0)};
    case LossFamily::squared_hinge:
      return y > T(0) ? DualBox<T>{T(0), inf} : DualBox<T>{-inf, T(0)};
  }
  return {-inf, inf};
}

// -------------------------------------------------------------------------
// Separable block penalty f(alpha_B) = sum_i xi*_{y_i}(-lambda alpha_i)/lambda
// -------------------------------------------------------------------------

template <typename T>
struct FBlockEval {
  T value;
  VectorX<T> grad;       // grad_i = -xi*'(-lambda alpha_i)
  VectorX<T> hess_diag;  // hess_ii = lambda * xi*''(-lambda alpha_i)
};

template <typename T>
FBlockEval<T> f_block(const LossKind& kind, const VectorX<T>& y_B, T lambda,
                      const VectorX<T>& alpha_B) {
  if (!(lambda > T(0))) throw std::invalid_argument("lambda must be > 0");
  const Index m = alpha_B.size();
  FBlockEval<T> out{T(0), VectorX<T>(m), VectorX<T>(m)};
  for (Index i = 0; i < m; ++i) {
    const auto c = conjugate_eval(kind, y_B[i], -lambda * alpha_B[i]);
    out.value += c.value / lambda;
    out.grad[i] = -c.grad;
    out.hess_diag[i] = lambda * c.hess;
  }
  return out;
}

// -------------------------------------------------------------------------
// Logistic safeguards
// -------------------------------------------------------------------------

/// Distance from 1/lambda to the next smaller representable value at the
/// working precision. Both the shrunken feasible region and the Hessian cap
/// of the logistic dual are expressed through it.
template <typename T>
T klr_boundary_eps(T lambda) {
  const T inv = T(1) / lambda;
  return inv - std::nextafter(inv, T(0));
}

template <typename T>
struct KlrEval {
  T value;
  VectorX<T> grad;       // in alpha space
  VectorX<T> hess_diag;  // capped at eps^{-1/2}
  DualBox<T> hat_box;    // feasible interval of alpha_hat = y*alpha
  T eps;
};

/// Logistic dual penalty with the boundary safeguards: the feasible region in
/// alpha_hat space is shrunk to [eps, 1/lambda - eps] so that 1/lambda -
/// alpha_hat never cancels catastrophically, and the Hessian diagonal is
/// capped at eps^{-1/2}. The value is the exact conjugate sum (so duality-gap
/// computations stay consistent); 0 log 0 evaluates to 0.
template <typename T>
KlrEval<T> klr_safeguarded_eval(const VectorX<T>& y_B, T lambda,
                                const VectorX<T>& alpha_B) {
  if (!(lambda > T(0))) throw std::invalid_argument("lambda must be > 0");
  const T inv = T(1) / lambda;
  const T eps = klr_boundary_eps(lambda);
  const T cap = T(1) / std::sqrt(eps);
  const T log_lambda_term = std::log(lambda) / lambda;  // per-sample constant
  const Index m = alpha_B.size();
  KlrEval<T> out{T(0), VectorX<T>(m), VectorX<T>(m), DualBox<T>{eps, inv - eps}, eps};
  for (Index i = 0; i < m; ++i) {
    const T y = y_B[i];
    const T hat = y * alpha_B[i];
    const T t = inv - hat;  // exact near the boundary by construction
    // (1/lambda) bEnt(lambda*hat) rewritten so that the (1 - lambda*hat)
    // factor is computed through t:
    out.value += detail::xlogx(hat) + detail::xlogx(t) + log_lambda_term;
    out.grad[i] = y * (std::log(hat) - std::log(t));
    out.hess_diag[i] = std::min(T(1) / (hat * lambda * t), cap);
  }
  return out;
}

// -------------------------------------------------------------------------
// SVR linearization
// -------------------------------------------------------------------------

/// Gradient of the linearized epsilon-insensitive dual model around alpha_B:
/// g = kernel_grad - y_B + eps_ins * sign(alpha_B), with sign(0) := 0. The
/// curvature contribution of the penalty is zero; the trust-region ratio test
/// against the true objective absorbs the linearization error.
template <typename T>
VectorX<T> svr_linearized_gradient(const VectorX<T>& alpha_B,
                                   const VectorX<T>& kernel_grad,
                                   const VectorX<T>& y_B, T eps_ins) {
  VectorX<T> g(alpha_B.size());
  for (Index i = 0; i < alpha_B.size(); ++i) {
    g[i] = kernel_grad[i] - y_B[i] + eps_ins * detail::sgn0(alpha_B[i]);
  }
  return g;
}

// =========================================================================
// DualLoss: the per-block view consumed by the solver.
//
// value() is the exact conjugate penalty (used in the trust-region ratio and
// in the dual objective); model_grad_hess() is the derivative information of
// the quadratic model, which substitutes the linearized gradient for the
// piecewise-linear conjugates and the safeguarded derivatives for logistic.
// =========================================================================

template <typename T>
class DualLoss {
 public:
  DualLoss(const LossKind& kind, T lambda) : kind_(kind), lambda_(lambda) {
    if (!(lambda > T(0))) throw std::invalid_argument("lambda must be > 0");
    if (kind.family == LossFamily::lp && !(kind.p > 1.0))
      throw std::invalid_argument("lp loss requires p > 1");
    if (kind.family == LossFamily::logistic) eps_ = klr_boundary_eps(lambda);
  }

  const LossKind& kind() const { return kind_; }
  T lambda() const { return lambda_; }

  /// Kink weight of the penalty at alpha = 0 (the epsilon-insensitive term
  /// eps*|alpha|; zero for every other family). The linearized model is only
  /// exact while a step keeps each coordinate's sign, so the solver restricts
  /// steps to the current orthant and treats zero coordinates by their
  /// one-sided slopes.
  T interior_kink_weight() const {
    return kind_.family == LossFamily::svr ? T(kind_.eps_ins) : T(0);
  }

  DualBox<T> box(T y) const {
    if (kind_.family == LossFamily::logistic) {
      const T inv = T(1) / lambda_;
      return y > T(0) ? DualBox<T>{eps_, inv - eps_}
                      : DualBox<T>{-(inv - eps_), -eps_};
    }
    return dual_box(kind_, y, lambda_);
  }

  /// Feasible starting multiplier. Zero everywhere except logistic, which
  /// starts strictly inside its shrunken box.
  T initial_alpha(T y) const {
    if (kind_.family == LossFamily::logistic) {
      const T hat = std::min(T(1e-3) / lambda_, T(0.5) / lambda_);
      return y * std::max(hat, eps_);
    }
    return T(0);
  }

  /// Exact penalty sum_i xi*_{y_i}(-lambda alpha_i)/lambda.
  T value(const VectorX<T>& y_B, const VectorX<T>& alpha_B) const {
    const T lam = lambda_;
    T acc = T(0);
    switch (kind_.family) {
      case LossFamily::square:
      case LossFamily::huber:
      case LossFamily::squared_hinge:
        for (Index i = 0; i < alpha_B.size(); ++i) {
          const T a = alpha_B[i];
          acc += T(0.5) * lam * a * a - y_B[i] * a;
        }
        return acc;
      case LossFamily::lp: {
        const T q = T(kind_.conjugate_exponent());
        const T c = std::pow(lam, q - T(1)) / q;
        for (Index i = 0; i < alpha_B.size(); ++i) {
          const T a = alpha_B[i];
          acc += c * std::pow(std::abs(a), q) - y_B[i] * a;
        }
        return acc;
      }
      case LossFamily::l1:
      case LossFamily::hinge:
        return -y_B.dot(alpha_B);
      case LossFamily::svr: {
        const T e = T(kind_.eps_ins);
        for (Index i = 0; i < alpha_B.size(); ++i)
          acc += e * std::abs(alpha_B[i]) - y_B[i] * alpha_B[i];
        return acc;
      }
      case LossFamily::logistic: {
        const T inv = T(1) / lam;
        const T log_lambda_term = std::log(lam) / lam;
        for (Index i = 0; i < alpha_B.size(); ++i) {
          const T hat = y_B[i] * alpha_B[i];
          acc += detail::xlogx(hat) + detail::xlogx(inv - hat) + log_lambda_term;
        }
        return acc;
      }
    }
    return acc;
  }

  /// Gradient and Hessian diagonal of the trust-region model of the penalty.
  void model_grad_hess(const VectorX<T>& y_B, const VectorX<T>& alpha_B,
                       VectorX<T>& grad, VectorX<T>& hess_diag) const {
    const Index m = alpha_B.size();
    grad.resize(m);
    hess_diag.resize(m);
    const T lam = lambda_;
    switch (kind_.family) {
      case LossFamily::square:
      case LossFamily::huber:
      case LossFamily::squared_hinge:
        grad = lam * alpha_B - y_B;
        hess_diag.setConstant(lam);
        return;
      case LossFamily::lp: {
        const T q = T(kind_.conjugate_exponent());
        const T cap = lam * detail::curvature_cap<T>();
        for (Index i = 0; i < m; ++i) {
          const T la = std::abs(lam * alpha_B[i]);
          grad[i] = detail::sgn0(alpha_B[i]) * std::pow(la, q - T(1)) - y_B[i];
          if (q == T(2)) {
            hess_diag[i] = lam;
          } else if (la == T(0)) {
            hess_diag[i] = q > T(2) ? T(0) : cap;
          } else {
            hess_diag[i] = std::min(lam * (q - T(1)) * std::pow(la, q - T(2)), cap);
          }
        }
        return;
      }
      case LossFamily::l1:
      case LossFamily::hinge:
        grad = -y_B;
        hess_diag.setZero();
        return;
      case LossFamily::svr: {
        const T e = T(kind_.eps_ins);
        for (Index i = 0; i < m; ++i)
          grad[i] = e * detail::sgn0(alpha_B[i]) - y_B[i];
        hess_diag.setZero();
        return;
      }
      case LossFamily::logistic: {
        const auto ev = klr_safeguarded_eval(y_B, lam, alpha_B);
        grad = ev.grad;
        hess_diag = ev.hess_diag;
        return;
      }
    }
  }

 private:
  LossKind kind_;
  T lambda_;
  T eps_ = T(0);
};

}  // namespace dbcd
