#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "dbcd/types.hpp"

namespace dbcd {

template <typename T>
double rmse(const VectorX<T>& y, const VectorX<T>& yhat) {
  if (y.size() == 0 || y.size() != yhat.size())
    throw data_error("rmse: empty input or length mismatch");
  return std::sqrt((y - yhat).template cast<double>().squaredNorm() / double(y.size()));
}

/// ||y - yhat||_2 / ||y||_2
template <typename T>
double relative_error(const VectorX<T>& y, const VectorX<T>& yhat) {
  if (y.size() == 0 || y.size() != yhat.size())
    throw data_error("relative_error: empty input or length mismatch");
  const double den = y.template cast<double>().norm();
  if (!(den > 0)) throw data_error("relative_error: reference labels are all zero");
  return (y - yhat).template cast<double>().norm() / den;
}

template <typename T>
double accuracy(const VectorX<T>& y, const VectorX<T>& yhat) {
  if (y.size() == 0 || y.size() != yhat.size())
    throw data_error("accuracy: empty input or length mismatch");
  Index correct = 0;
  for (Index i = 0; i < y.size(); ++i) correct += y[i] == yhat[i];
  return double(correct) / double(y.size());
}

/// Mann-Whitney AUC with ties counted 1/2, computed through midranks.
/// Labels must contain both classes (positive: y > 0).
template <typename T>
double auc(const VectorX<T>& labels, const VectorX<T>& scores) {
  if (labels.size() == 0 || labels.size() != scores.size())
    throw data_error("auc: empty input or length mismatch");
  const Index n = labels.size();
  std::vector<Index> order(n);
  std::iota(order.begin(), order.end(), Index(0));
  std::sort(order.begin(), order.end(),
            [&](Index a, Index b) { return scores[a] < scores[b]; });
  double rank_pos = 0;
  Index n_pos = 0, n_neg = 0;
  Index i = 0;
  while (i < n) {
    Index j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * double(i + j + 1);  // average of ranks i+1..j
    for (Index k = i; k < j; ++k) {
      if (labels[order[k]] > T(0)) {
        rank_pos += midrank;
        ++n_pos;
      } else {
        ++n_neg;
      }
    }
    i = j;
  }
  if (n_pos == 0 || n_neg == 0)
    throw data_error("auc: both classes must be present");
  return (rank_pos - 0.5 * double(n_pos) * double(n_pos + 1)) /
         (double(n_pos) * double(n_neg));
}

}  // namespace dbcd
