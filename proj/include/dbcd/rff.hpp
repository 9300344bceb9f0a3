#pragma once

#include <cmath>
#include <cstdint>

#include "dbcd/kernels.hpp"
#include "dbcd/rng.hpp"
#include "dbcd/types.hpp"

namespace dbcd {

/// Sampled random-Fourier feature map psi(x) = sqrt(2/M) cos(W x + b).
/// Immutable after sampling; reconstruction from (family, sigma, M, d, seed)
/// is bit-identical.
template <typename T>
struct RffMap {
  MatrixX<T> W;  // M x d, spectral frequencies
  VectorX<T> b;  // M, phases in [0, 2pi)
  KernelFamily family = KernelFamily::gaussian;
  T sigma = T(1);
  std::uint64_t seed = 0;

  Index feature_dim() const { return W.rows(); }
  Index input_dim() const { return W.cols(); }
  T scale() const { return std::sqrt(T(2) / T(W.rows())); }
};

/// Draw a feature map for the kernel's spectral distribution: rows of W are
/// i.i.d. N(0, sigma^-2 I) for the Gaussian kernel and i.i.d. Cauchy with
/// scale 1/sigma (via the inverse CDF) for the Laplacian; b is uniform on
/// [0, 2pi). Sampling is done in double and cast to the working precision,
/// row by row of W first, then b.
template <typename T>
RffMap<T> rff_sample(const KernelSpec& spec, Index M, Index d, std::uint64_t seed) {
  if (M < 1 || d < 1) throw std::invalid_argument("rff_sample: M and d must be >= 1");
  RffMap<T> map;
  map.W.resize(M, d);
  map.b.resize(M);
  map.family = spec.family;
  map.sigma = T(spec.sigma);
  map.seed = seed;
  Rng rng(seed);
  const double inv_sigma = 1.0 / spec.sigma;
  for (Index i = 0; i < M; ++i) {
    for (Index j = 0; j < d; ++j) {
      const double w = spec.family == KernelFamily::gaussian ? rng.normal() : rng.cauchy();
      map.W(i, j) = T(w * inv_sigma);
    }
  }
  for (Index i = 0; i < M; ++i)
    map.b[i] = T(rng.uniform(0.0, 6.283185307179586476925286766559));
  return map;
}

/// Feature matrix with one column per sample: psi(X) in R^{M x n}.
template <typename T>
MatrixX<T> rff_map(const RffMap<T>& map, const RowMatrix<T>& X) {
  if (X.cols() != map.input_dim())
    throw data_error("rff_map: dimension mismatch (" + std::to_string(X.cols()) +
                     " vs " + std::to_string(map.input_dim()) + ")");
  MatrixX<T> phi(map.feature_dim(), X.rows());
  phi.noalias() = map.W * X.transpose();
  phi.colwise() += map.b;
  phi = map.scale() * phi.array().cos();
  return phi;
}

}  // namespace dbcd
