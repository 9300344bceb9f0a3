#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "dbcd/rng.hpp"
#include "dbcd/types.hpp"

namespace dbcd {

enum class KernelFamily { gaussian, laplacian };

inline const char* kernel_name(KernelFamily f) {
  return f == KernelFamily::gaussian ? "gaussian" : "laplacian";
}

/// Shift-invariant kernel with bandwidth sigma:
///   gaussian:  exp(-||x-x'||^2 / (2 sigma^2))
///   laplacian: exp(-||x-x'||_1 / sigma)
struct KernelSpec {
  KernelFamily family = KernelFamily::gaussian;
  double sigma = 1.0;

  KernelSpec() = default;
  KernelSpec(KernelFamily f, double s) : family(f), sigma(s) {
    if (!(s > 0.0)) throw std::invalid_argument("kernel bandwidth sigma must be > 0");
  }
};

template <typename T, typename DerivedA, typename DerivedB>
T kernel_eval(const KernelSpec& spec, const Eigen::MatrixBase<DerivedA>& x,
              const Eigen::MatrixBase<DerivedB>& x2) {
  if (x.size() != x2.size())
    throw data_error("kernel_eval: dimension mismatch (" + std::to_string(x.size()) +
                     " vs " + std::to_string(x2.size()) + ")");
  const T sigma = T(spec.sigma);
  if (spec.family == KernelFamily::gaussian) {
    const T d2 = (x - x2).squaredNorm();
    return std::exp(-d2 / (T(2) * sigma * sigma));
  }
  const T d1 = (x - x2).template lpNorm<1>();
  return std::exp(-d1 / sigma);
}

/// Pairwise kernel matrix between the rows of X_A and X_B (|A| x |B|).
/// Called with the same matrix for both sides, the diagonal is exactly 1.
template <typename T>
MatrixX<T> kernel_block(const KernelSpec& spec, const RowMatrix<T>& X_A,
                        const RowMatrix<T>& X_B) {
  if (X_A.cols() != X_B.cols())
    throw data_error("kernel_block: dimension mismatch (" + std::to_string(X_A.cols()) +
                     " vs " + std::to_string(X_B.cols()) + ")");
  const Index na = X_A.rows(), nb = X_B.rows();
  MatrixX<T> K(na, nb);
  const T sigma = T(spec.sigma);
  if (spec.family == KernelFamily::gaussian) {
    // ||a-b||^2 = ||a||^2 + ||b||^2 - 2 a.b, clamped at zero against
    // cancellation, so the heavy part is one GEMM.
    const VectorX<T> a2 = X_A.rowwise().squaredNorm();
    const VectorX<T> b2 = X_B.rowwise().squaredNorm();
    K.noalias() = X_A * X_B.transpose();
    const T inv = T(1) / (T(2) * sigma * sigma);
    for (Index j = 0; j < nb; ++j) {
      for (Index i = 0; i < na; ++i) {
        const T d2 = std::max(a2[i] + b2[j] - T(2) * K(i, j), T(0));
        K(i, j) = std::exp(-d2 * inv);
      }
    }
  } else {
    for (Index i = 0; i < na; ++i)
      for (Index j = 0; j < nb; ++j)
        K(i, j) = std::exp(-(X_A.row(i) - X_B.row(j)).template lpNorm<1>() / sigma);
  }
  if (&X_A == &X_B)
    for (Index i = 0; i < na; ++i) K(i, i) = T(1);
  return K;
}

/// Symmetric Gram matrix of one sample set. Exactly symmetric and with unit
/// diagonal by construction.
template <typename T>
MatrixX<T> kernel_gram(const KernelSpec& spec, const RowMatrix<T>& X) {
  MatrixX<T> K = kernel_block(spec, X, X);
  for (Index i = 0; i < K.rows(); ++i) {
    K(i, i) = T(1);
    for (Index j = i + 1; j < K.cols(); ++j) K(j, i) = K(i, j);
  }
  return K;
}

/// K_{B,:} * alpha over a dense sample matrix, accumulated over column chunks
/// of at most `chunk` samples so peak scratch memory stays O(|B| * chunk).
template <typename T>
VectorX<T> exact_kernel_grad(const KernelSpec& spec, const RowMatrix<T>& X,
                             const VectorX<T>& alpha, const std::vector<Index>& block,
                             Index chunk) {
  if (alpha.size() != X.rows())
    throw data_error("exact_kernel_grad: alpha length does not match sample count");
  if (chunk < 1) throw std::invalid_argument("chunk must be >= 1");
  const Index nb = static_cast<Index>(block.size());
  RowMatrix<T> X_B(nb, X.cols());
  for (Index i = 0; i < nb; ++i) X_B.row(i) = X.row(block[i]);
  VectorX<T> out = VectorX<T>::Zero(nb);
  for (Index c0 = 0; c0 < X.rows(); c0 += chunk) {
    const Index len = std::min(chunk, X.rows() - c0);
    const RowMatrix<T> X_C = X.middleRows(c0, len);
    out.noalias() += kernel_block(spec, X_B, X_C) * alpha.segment(c0, len);
  }
  return out;
}

/// Median pairwise distance (Euclidean for the Gaussian family, L1 for the
/// Laplacian) over a uniformly subsampled set of min(subsample, n) points.
/// For an even number of distances the two central order statistics are
/// averaged. Throws if the median distance is zero.
template <typename T>
T median_heuristic(const RowMatrix<T>& X, Index subsample, std::uint64_t seed,
                   KernelFamily family) {
  const Index n = X.rows();
  if (n < 2) throw data_error("median_heuristic: need at least 2 samples");
  const Index m = std::min(subsample, n);
  std::vector<Index> idx(n);
  std::iota(idx.begin(), idx.end(), Index(0));
  Rng rng(seed);
  // partial Fisher-Yates: the first m entries are a uniform subsample
  for (Index i = 0; i < m; ++i) {
    const Index j = i + static_cast<Index>(rng.below(static_cast<std::uint64_t>(n - i)));
    std::swap(idx[i], idx[j]);
  }
  std::vector<T> dist;
  dist.reserve(static_cast<std::size_t>(m) * (m - 1) / 2);
  for (Index i = 0; i < m; ++i) {
    for (Index j = i + 1; j < m; ++j) {
      if (family == KernelFamily::gaussian)
        dist.push_back((X.row(idx[i]) - X.row(idx[j])).norm());
      else
        dist.push_back((X.row(idx[i]) - X.row(idx[j])).template lpNorm<1>());
    }
  }
  const std::size_t half = dist.size() / 2;
  std::nth_element(dist.begin(), dist.begin() + half, dist.end());
  T med = dist[half];
  if (dist.size() % 2 == 0) {
    const T lo = *std::max_element(dist.begin(), dist.begin() + half);
    med = (lo + med) / T(2);
  }
  if (!(med > T(0)))
    throw data_error("median_heuristic: median pairwise distance is zero (degenerate data)");
  return med;
}

}  // namespace dbcd
