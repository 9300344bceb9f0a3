#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "dbcd/rng.hpp"
#include "dbcd/types.hpp"

namespace dbcd {

// =========================================================================
// Dataset: row-sample feature storage (dense or CSR). Sparse rows stay
// sparse until a block of rows is gathered, so training memory is
// proportional to |B| * d rather than n * d.
// =========================================================================

template <typename T>
struct Dataset {
  Index n = 0;
  Index d = 0;
  bool sparse = false;

  RowMatrix<T> dense;  // n x d when !sparse

  // CSR storage when sparse
  std::vector<Index> sp_col;
  std::vector<T> sp_val;
  std::vector<std::size_t> sp_row_ptr;  // n+1 offsets

  VectorX<T> labels;

  Index rows() const { return n; }
  Index dim() const { return d; }

  /// Densify the given rows into out (resized to |rows| x d).
  void gather(const std::vector<Index>& rows, RowMatrix<T>& out) const {
    out.resize(static_cast<Index>(rows.size()), d);
    if (!sparse) {
      for (std::size_t i = 0; i < rows.size(); ++i) out.row(Index(i)) = dense.row(rows[i]);
      return;
    }
    out.setZero();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const Index r = rows[i];
      for (std::size_t k = sp_row_ptr[r]; k < sp_row_ptr[r + 1]; ++k)
        out(Index(i), sp_col[k]) = sp_val[k];
    }
  }

  /// Densify the contiguous row range [begin, end).
  void gather_range(Index begin, Index end, RowMatrix<T>& out) const {
    out.resize(end - begin, d);
    if (!sparse) {
      out = dense.middleRows(begin, end - begin);
      return;
    }
    out.setZero();
    for (Index r = begin; r < end; ++r)
      for (std::size_t k = sp_row_ptr[r]; k < sp_row_ptr[r + 1]; ++k)
        out(r - begin, sp_col[k]) = sp_val[k];
  }

  RowMatrix<T> to_dense() const {
    RowMatrix<T> out;
    gather_range(0, n, out);
    return out;
  }

  /// Row subset as a new dataset (used by train/test splitting).
  Dataset<T> subset(const std::vector<Index>& rows) const {
    Dataset<T> out;
    out.n = static_cast<Index>(rows.size());
    out.d = d;
    out.sparse = sparse;
    out.labels.resize(out.n);
    for (Index i = 0; i < out.n; ++i) out.labels[i] = labels[rows[i]];
    if (!sparse) {
      out.dense.resize(out.n, d);
      for (Index i = 0; i < out.n; ++i) out.dense.row(i) = dense.row(rows[i]);
    } else {
      out.sp_row_ptr.assign(1, 0);
      for (Index r : rows) {
        for (std::size_t k = sp_row_ptr[r]; k < sp_row_ptr[r + 1]; ++k) {
          out.sp_col.push_back(sp_col[k]);
          out.sp_val.push_back(sp_val[k]);
        }
        out.sp_row_ptr.push_back(out.sp_col.size());
      }
    }
    return out;
  }
};

// =========================================================================
// z-score normalization (population standard deviation; constant columns
// map to zero)
// =========================================================================

template <typename T>
struct Normalization {
  VectorX<T> mean;
  VectorX<T> stdev;

  Index dim() const { return mean.size(); }

  /// In-place (x - mean) / std per row; columns with std == 0 become 0.
  void apply(RowMatrix<T>& X) const {
    if (X.cols() != mean.size())
      throw data_error("normalization: dimension mismatch (" + std::to_string(X.cols()) +
                       " vs " + std::to_string(mean.size()) + ")");
    for (Index j = 0; j < X.cols(); ++j) {
      const T inv = stdev[j] > T(0) ? T(1) / stdev[j] : T(0);
      X.col(j) = (X.col(j).array() - mean[j]) * inv;
    }
  }

  /// Identity transform of the given width.
  static Normalization<T> identity(Index d) {
    Normalization<T> s;
    s.mean = VectorX<T>::Zero(d);
    s.stdev = VectorX<T>::Ones(d);
    return s;
  }
};

template <typename T>
Normalization<T> zscore_fit(const Dataset<T>& data) {
  Normalization<T> s;
  s.mean = VectorX<T>::Zero(data.d);
  s.stdev = VectorX<T>::Zero(data.d);
  const T n = T(data.n);
  if (!data.sparse) {
    for (Index j = 0; j < data.d; ++j) {
      const T m = data.dense.col(j).sum() / n;
      s.mean[j] = m;
      s.stdev[j] = std::sqrt((data.dense.col(j).array() - m).square().sum() / n);
    }
    return s;
  }
  // sparse: implicit zeros contribute (0 - mean)^2 per absent entry
  std::vector<Index> nnz(data.d, 0);
  for (Index r = 0; r < data.n; ++r)
    for (std::size_t k = data.sp_row_ptr[r]; k < data.sp_row_ptr[r + 1]; ++k) {
      s.mean[data.sp_col[k]] += data.sp_val[k];
      ++nnz[data.sp_col[k]];
    }
  s.mean /= n;
  for (Index r = 0; r < data.n; ++r)
    for (std::size_t k = data.sp_row_ptr[r]; k < data.sp_row_ptr[r + 1]; ++k) {
      const T diff = data.sp_val[k] - s.mean[data.sp_col[k]];
      s.stdev[data.sp_col[k]] += diff * diff;
    }
  for (Index j = 0; j < data.d; ++j) {
    const T zeros = n - T(nnz[j]);
    s.stdev[j] = std::sqrt((s.stdev[j] + zeros * s.mean[j] * s.mean[j]) / n);
  }
  return s;
}

template <typename T>
void zscore_apply(const Normalization<T>& stats, RowMatrix<T>& X) {
  stats.apply(X);
}

// =========================================================================
// libsvm format
// =========================================================================

namespace detail {

inline bool parse_number(const char* begin, const char* end, double& out) {
  // std::from_chars for doubles is the strict, locale-free path
  const auto res = std::from_chars(begin, end, out);
  return res.ec == std::errc() && res.ptr == end;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

}  // namespace detail

/// Parse the libsvm text format: per line "label idx:value idx:value ...",
/// 1-based strictly increasing indices, missing indices are zeros.
template <typename T>
Dataset<T> load_libsvm(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open " + path);
  Dataset<T> out;
  out.sparse = true;
  out.sp_row_ptr.assign(1, 0);
  std::vector<T> labels;
  std::string line;
  Index max_index = 0;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view sv = detail::trim(line);
    if (sv.empty()) continue;
    const auto fail = [&](const std::string& what) {
      throw data_error(path + ":" + std::to_string(lineno) + ": " + what);
    };
    // label token
    std::size_t sp = sv.find_first_of(" \t");
    std::string_view label_tok = sp == std::string_view::npos ? sv : sv.substr(0, sp);
    double y;
    if (!detail::parse_number(label_tok.data(), label_tok.data() + label_tok.size(), y))
      fail("malformed label '" + std::string(label_tok) + "'");
    labels.push_back(T(y));
    sv = sp == std::string_view::npos ? std::string_view{} : detail::trim(sv.substr(sp));
    Index prev_index = 0;
    while (!sv.empty()) {
      sp = sv.find_first_of(" \t");
      std::string_view tok = sp == std::string_view::npos ? sv : sv.substr(0, sp);
      const std::size_t colon = tok.find(':');
      if (colon == std::string_view::npos) fail("malformed feature '" + std::string(tok) + "'");
      long long idx = 0;
      const auto ir = std::from_chars(tok.data(), tok.data() + colon, idx);
      if (ir.ec != std::errc() || ir.ptr != tok.data() + colon || idx < 1)
        fail("malformed feature index '" + std::string(tok.substr(0, colon)) + "'");
      if (idx <= prev_index)
        fail("non-increasing feature index " + std::to_string(idx));
      double val;
      if (!detail::parse_number(tok.data() + colon + 1, tok.data() + tok.size(), val))
        fail("malformed feature value '" + std::string(tok.substr(colon + 1)) + "'");
      prev_index = Index(idx);
      max_index = std::max(max_index, Index(idx));
      out.sp_col.push_back(Index(idx) - 1);
      out.sp_val.push_back(T(val));
      sv = sp == std::string_view::npos ? std::string_view{} : detail::trim(sv.substr(sp));
    }
    out.sp_row_ptr.push_back(out.sp_col.size());
  }
  out.n = static_cast<Index>(labels.size());
  out.d = max_index;
  if (out.n == 0) throw data_error(path + ": no samples");
  out.labels = Eigen::Map<VectorX<T>>(labels.data(), out.n);
  return out;
}

namespace detail {

template <typename T>
inline std::string format_value(T v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), double(v));
  return std::string(buf, res.ptr);
}

}  // namespace detail

/// Write the libsvm format with shortest round-trip number formatting, so a
/// write/read cycle preserves values bit-exactly.
template <typename T>
void save_libsvm(const Dataset<T>& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot open " + path + " for writing");
  RowMatrix<T> row;
  for (Index i = 0; i < data.n; ++i) {
    out << detail::format_value(data.labels[i]);
    if (data.sparse) {
      for (std::size_t k = data.sp_row_ptr[i]; k < data.sp_row_ptr[i + 1]; ++k)
        out << ' ' << (data.sp_col[k] + 1) << ':' << detail::format_value(data.sp_val[k]);
    } else {
      for (Index j = 0; j < data.d; ++j)
        if (data.dense(i, j) != T(0))
          out << ' ' << (j + 1) << ':' << detail::format_value(data.dense(i, j));
    }
    out << '\n';
  }
}

// =========================================================================
// CSV
// =========================================================================

/// Rectangular numeric CSV. A first row with any non-numeric cell is treated
/// as a header and skipped. label_column selects the label column (negative
/// counts from the end, -1 = last).
template <typename T>
Dataset<T> load_csv(const std::string& path, int label_column = -1) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  std::size_t width = 0;
  bool first_content = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string_view sv = detail::trim(line);
    if (sv.empty()) continue;
    std::vector<double> cells;
    bool numeric = true;
    std::size_t start = 0;
    const std::string s(sv);
    while (true) {
      const std::size_t comma = s.find(',', start);
      const std::string_view tok =
          detail::trim(std::string_view(s).substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      double v = 0;
      if (!detail::parse_number(tok.data(), tok.data() + tok.size(), v)) {
        numeric = false;
        break;
      }
      cells.push_back(v);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (!numeric) {
      if (first_content) {
        first_content = false;  // header row
        continue;
      }
      throw data_error(path + ":" + std::to_string(lineno) + ": non-numeric cell");
    }
    first_content = false;
    if (width == 0) width = cells.size();
    if (cells.size() != width)
      throw data_error(path + ":" + std::to_string(lineno) + ": ragged row (" +
                       std::to_string(cells.size()) + " cells, expected " + std::to_string(width) + ")");
    rows.push_back(std::move(cells));
  }
  if (rows.empty()) throw data_error(path + ": no samples");
  if (width < 2) throw data_error(path + ": need at least one feature column and one label column");
  int lc = label_column < 0 ? int(width) + label_column : label_column;
  if (lc < 0 || lc >= int(width))
    throw data_error(path + ": label column " + std::to_string(label_column) + " out of range");
  Dataset<T> out;
  out.n = static_cast<Index>(rows.size());
  out.d = static_cast<Index>(width) - 1;
  out.dense.resize(out.n, out.d);
  out.labels.resize(out.n);
  for (Index i = 0; i < out.n; ++i) {
    Index jj = 0;
    for (std::size_t j = 0; j < width; ++j) {
      if (int(j) == lc)
        out.labels[i] = T(rows[i][j]);
      else
        out.dense(i, jj++) = T(rows[i][j]);
    }
  }
  return out;
}

// =========================================================================
// Splitting and label handling
// =========================================================================

template <typename T>
std::pair<Dataset<T>, Dataset<T>> train_test_split(const Dataset<T>& data, double fraction,
                                                   std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw std::invalid_argument("split fraction must be in (0, 1)");
  std::vector<Index> idx(data.n);
  std::iota(idx.begin(), idx.end(), Index(0));
  Rng rng(seed);
  rng.shuffle(idx.begin(), idx.end());
  const Index n_train = static_cast<Index>(std::llround(fraction * double(data.n)));
  if (n_train < 1 || n_train >= data.n)
    throw data_error("train/test split would leave an empty side");
  std::vector<Index> tr(idx.begin(), idx.begin() + n_train);
  std::vector<Index> te(idx.begin() + n_train, idx.end());
  return {data.subset(tr), data.subset(te)};
}

/// Sorted distinct label values.
template <typename T>
std::vector<T> distinct_labels(const Dataset<T>& data) {
  std::set<T> s(data.labels.begin(), data.labels.end());
  return std::vector<T>(s.begin(), s.end());
}

/// Remap two-valued labels onto {-1,+1} (lower value -> -1). Returns true if
/// a remap happened; labels already in {-1,+1} are left alone.
template <typename T>
bool remap_binary_labels(Dataset<T>& data) {
  const auto classes = distinct_labels(data);
  if (classes.size() != 2)
    throw data_error("binary classification requires exactly 2 distinct labels, got " +
                     std::to_string(classes.size()));
  if (classes[0] == T(-1) && classes[1] == T(1)) return false;
  for (Index i = 0; i < data.n; ++i)
    data.labels[i] = data.labels[i] == classes[0] ? T(-1) : T(1);
  return true;
}

// =========================================================================
// Synthetic datasets (test fixtures and demos)
// =========================================================================

enum class SynthKind {
  two_gaussians,            // balanced +-1 classes, unit Gaussians 6 apart on axis 0
  linear_regression_noise,  // y = x.w + noise * z
  sinusoid,                 // y = sin(3 * sum(x)/sqrt(d)) + noise * z
};

template <typename T>
Dataset<T> synth_make(SynthKind kind, Index n, Index d, std::uint64_t seed,
                      double noise = 0.1) {
  if (n < 1 || d < 1) throw std::invalid_argument("synth_make: n and d must be >= 1");
  Dataset<T> out;
  out.n = n;
  out.d = d;
  out.dense.resize(n, d);
  out.labels.resize(n);
  Rng rng(seed);
  switch (kind) {
    case SynthKind::two_gaussians: {
      for (Index i = 0; i < n; ++i) {
        const T y = (i % 2 == 0) ? T(1) : T(-1);
        for (Index j = 0; j < d; ++j) out.dense(i, j) = T(rng.normal());
        out.dense(i, 0) += y * T(3);  // means at +-3, unit variance: 6 sigma apart
        out.labels[i] = y;
      }
      break;
    }
    case SynthKind::linear_regression_noise: {
      VectorX<T> w(d);
      for (Index j = 0; j < d; ++j) w[j] = T(rng.normal() / std::sqrt(double(d)));
      for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < d; ++j) out.dense(i, j) = T(rng.normal());
        out.labels[i] = out.dense.row(i).dot(w) + T(noise * rng.normal());
      }
      break;
    }
    case SynthKind::sinusoid: {
      const T s = T(1) / std::sqrt(T(d));
      for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < d; ++j) out.dense(i, j) = T(rng.uniform(-1.0, 1.0));
        out.labels[i] = std::sin(T(3) * out.dense.row(i).sum() * s) + T(noise * rng.normal());
      }
      break;
    }
  }
  return out;
}

}  // namespace dbcd
