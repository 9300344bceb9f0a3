#pragma once

// Independent test oracles. Everything here recomputes expected values
// through a different route than the library code under test: conjugates by
// brute-force grid suprema, derivatives by central finite differences, KRR
// by a dense factorization, and the full dual problem by proximal gradient
// with closed-form per-coordinate proximal maps.

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>

#include "dbcd/losses.hpp"
#include "dbcd/types.hpp"

namespace oracles {

using dbcd::Index;
using dbcd::LossFamily;
using dbcd::LossKind;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// sup_u { u*v - loss(y,u) } by a three-stage refined grid search.
inline double conjugate_grid_supremum(const LossKind& kind, double y, double v,
                                      double* arg_max = nullptr) {
  const auto objective = [&](double u) { return u * v - dbcd::primal_loss(kind, y, u); };
  double center = y + v;
  double width = 20.0 + 4.0 * (std::abs(y) + std::abs(v) + 1.0);
  double best_u = center, best = -std::numeric_limits<double>::infinity();
  for (int stage = 0; stage < 3; ++stage) {
    const int pts = 2001;
    const double h = 2.0 * width / (pts - 1);
    for (int i = 0; i < pts; ++i) {
      const double u = center - width + i * h;
      const double val = objective(u);
      if (val > best) {
        best = val;
        best_u = u;
      }
    }
    center = best_u;
    width = 2.0 * h;
  }
  if (arg_max) *arg_max = best_u;
  return best;
}

/// Central finite differences of a scalar function.
inline double fd_grad(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline double fd_hess(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h);
}

/// Dense closed-form KRR multipliers (K + lambda I)^{-1} y.
inline VectorXd krr_closed_form(const MatrixXd& K, const VectorXd& y, double lambda) {
  MatrixXd A = K;
  A.diagonal().array() += lambda;
  return Eigen::LDLT<MatrixXd>(A).solve(y);
}

// -------------------------------------------------------------------------
// Proximal-gradient solver of the dual problem
//   min_a  a'Ka/2 + (1/lambda) sum_i xi*(-lambda a_i)   s.t. box
// The quadratic is handled by gradient steps, the separable penalty plus box
// by exact 1-D proximal maps.
// -------------------------------------------------------------------------

namespace detail {

inline double clamp(double x, double lo, double hi) {
  return x < lo ? lo : (x > hi ? hi : x);
}

/// argmin_w (w-z)^2/(2t) + xi*(-lambda w)/lambda subject to the dual box.
inline double prox_dual(const LossKind& kind, double y, double lambda, double t, double z) {
  const auto box = dbcd::dual_box(kind, y, lambda);
  switch (kind.family) {
    case LossFamily::square:
    case LossFamily::huber:
    case LossFamily::squared_hinge:
      // f(w) = lambda w^2/2 - y w
      return clamp((z + t * y) / (1.0 + t * lambda), box.lower, box.upper);
    case LossFamily::l1:
    case LossFamily::hinge:
      // f(w) = -y w
      return clamp(z + t * y, box.lower, box.upper);
    case LossFamily::svr: {
      // f(w) = e |w| - y w : soft threshold then clamp
      const double a = z + t * y;
      const double k = t * kind.eps_ins;
      const double soft = a > k ? a - k : (a < -k ? a + k : 0.0);
      return clamp(soft, box.lower, box.upper);
    }
    case LossFamily::lp: {
      // (w - z)/t + sign(w) |lambda w|^{q-1} - y = 0, monotone in w
      const double q = kind.conjugate_exponent();
      const auto g = [&](double w) {
        return (w - z) / t + (w >= 0 ? 1.0 : -1.0) * std::pow(std::abs(lambda * w), q - 1.0) - y;
      };
      double lo = -1.0, hi = 1.0;
      while (g(lo) > 0) lo *= 2;
      while (g(hi) < 0) hi *= 2;
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (g(mid) > 0 ? hi : lo) = mid;
      }
      return 0.5 * (lo + hi);
    }
    case LossFamily::logistic: {
      // solve in what = y*w on (0, 1/lambda):
      //   (what - zhat)/t + log(lambda what) - log(1 - lambda what) = 0
      const double zhat = y * z;
      const double inv = 1.0 / lambda;
      double lo = inv * 1e-18, hi = inv * (1.0 - 1e-15);
      const auto h = [&](double w) {
        return (w - zhat) / t + std::log(lambda * w) - std::log1p(-lambda * w);
      };
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (h(mid) > 0 ? hi : lo) = mid;
      }
      return y * 0.5 * (lo + hi);
    }
  }
  return z;
}

}  // namespace detail

struct PgResult {
  VectorXd alpha;
  int iterations = 0;
  double step_inf = 0;  // final fixed-point residual
};

inline PgResult pg_solve_dual(const MatrixXd& K, const VectorXd& y, const LossKind& kind,
                              double lambda, int max_iters = 2000000, double tol = 1e-13) {
  const Index n = K.rows();
  const double L =
      Eigen::SelfAdjointEigenSolver<MatrixXd>(K, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
  const double t = 1.0 / std::max(L, 1e-12);
  VectorXd alpha = VectorXd::Zero(n);
  for (Index i = 0; i < n; ++i)
    alpha[i] = dbcd::DualLoss<double>(kind, lambda).initial_alpha(y[i]);
  PgResult res;
  VectorXd grad(n), next(n);
  for (res.iterations = 0; res.iterations < max_iters; ++res.iterations) {
    grad.noalias() = K * alpha;
    double step = 0;
    for (Index i = 0; i < n; ++i) {
      next[i] = detail::prox_dual(kind, y[i], lambda, t, alpha[i] - t * grad[i]);
      step = std::max(step, std::abs(next[i] - alpha[i]));
    }
    alpha.swap(next);
    res.step_inf = step;
    if (step <= tol * (1.0 + alpha.cwiseAbs().maxCoeff())) break;
  }
  res.alpha = alpha;
  return res;
}

/// Minimization-form dual objective, evaluated densely.
inline double dual_value(const MatrixXd& K, const VectorXd& y, const LossKind& kind,
                         double lambda, const VectorXd& alpha) {
  const dbcd::DualLoss<double> loss(kind, lambda);
  return 0.5 * alpha.dot(K * alpha) + loss.value(y, alpha);
}

}  // namespace oracles
