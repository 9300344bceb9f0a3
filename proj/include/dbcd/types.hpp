#pragma once

#include <Eigen/Core>
#include <stdexcept>
#include <string>

namespace dbcd {

using Index = Eigen::Index;

template <typename T>
using VectorX = Eigen::Vector<T, Eigen::Dynamic>;

template <typename T>
using MatrixX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

// Sample matrices are row-major: one sample per row, contiguous, so blocks of
// rows can be gathered cheaply.
template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Malformed or inconsistent input data (files, shapes, labels).
struct data_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Non-finite values encountered during optimization.
struct numerical_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A dual variable left the domain of the conjugate it is evaluated under.
struct domain_violation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace dbcd
