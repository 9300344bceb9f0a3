#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "dbcd/data.hpp"
#include "dbcd/kernels.hpp"
#include "dbcd/losses.hpp"
#include "dbcd/objective.hpp"
#include "dbcd/rff.hpp"
#include "dbcd/solver.hpp"
#include "dbcd/types.hpp"

namespace dbcd {

// =========================================================================
// Trained predictor. Exact mode retains the multipliers together with the
// normalized training inputs; feature-map mode retains the weight vector and
// the sampled map. Exactly one of the two is present.
// =========================================================================

template <typename T>
struct TrainedModel {
  LossKind loss;
  T lambda = T(1);
  bool inexact = false;
  KernelSpec kernel;

  // exact mode
  RowMatrix<T> train_X;  // normalized training features
  VectorX<T> train_y;
  VectorX<T> alpha;

  // feature-map mode
  RffMap<T> rff;
  VectorX<T> theta;

  Normalization<T> norm;

  // provenance
  std::uint64_t seed_partition = 0;
  std::uint64_t seed_rff = 0;
  std::uint64_t iterations = 0;
  std::optional<double> final_gap;
  double class_label = 0.0;  // one-vs-rest positive class; unused for binary

  /// Raw decision/regression scores u(x) for raw (unnormalized) inputs.
  VectorX<T> predict_raw(const RowMatrix<T>& X_raw, Index chunk = 8192) const {
    const Index expect = inexact ? rff.input_dim() : train_X.cols();
    if (X_raw.cols() != expect)
      throw data_error("predict: input has " + std::to_string(X_raw.cols()) +
                       " features but the model expects " + std::to_string(expect));
    RowMatrix<T> X = X_raw;
    norm.apply(X);
    chunk = std::max<Index>(1, chunk);
    if (inexact) {
      VectorX<T> u(X.rows());
      for (Index q0 = 0; q0 < X.rows(); q0 += chunk) {
        const Index len = std::min(chunk, X.rows() - q0);
        const RowMatrix<T> Xq = X.middleRows(q0, len);
        u.segment(q0, len).noalias() = rff_map(rff, Xq).transpose() * theta;
      }
      return u;
    }
    VectorX<T> u = VectorX<T>::Zero(X.rows());
    for (Index c0 = 0; c0 < train_X.rows(); c0 += chunk) {
      const Index len = std::min(chunk, train_X.rows() - c0);
      const RowMatrix<T> X_C = train_X.middleRows(c0, len);
      u.noalias() += kernel_block(kernel, X, X_C) * alpha.segment(c0, len);
    }
    return u;
  }
};

/// sign(u) with the tie rule sign(0) -> +1.
template <typename T>
VectorX<T> predict_label(const TrainedModel<T>& model, const RowMatrix<T>& X_raw) {
  if (!model.loss.is_classification())
    throw data_error("predict_label: model was trained with a regression loss");
  VectorX<T> u = model.predict_raw(X_raw);
  for (Index i = 0; i < u.size(); ++i) u[i] = u[i] >= T(0) ? T(1) : T(-1);
  return u;
}

/// Sigmoid probabilities 1/(1+exp(-u)); defined for the logistic loss only.
template <typename T>
VectorX<T> predict_proba(const TrainedModel<T>& model, const RowMatrix<T>& X_raw) {
  if (model.loss.family != LossFamily::logistic)
    throw data_error("predict_proba: probabilities are defined for the logistic loss only");
  VectorX<T> u = model.predict_raw(X_raw);
  for (Index i = 0; i < u.size(); ++i) {
    const T z = u[i];
    u[i] = z >= T(0) ? T(1) / (T(1) + std::exp(-z))
                     : std::exp(z) / (T(1) + std::exp(z));
  }
  return u;
}

// =========================================================================
// Training pipeline
// =========================================================================

template <typename T>
struct TrainOptions {
  LossKind loss;
  T lambda = T(1);
  bool inexact = false;
  KernelFamily kernel = KernelFamily::gaussian;
  std::optional<T> sigma;         // unset -> median heuristic
  Index median_subsample = 2000;
  Index rff_dim = 4096;           // M
  Index block_size = 0;           // 0 -> 512 (1024 for logistic)
  std::uint64_t iterations = 1000;
  TrustRegionConfig<T> tr;
  Index chunk = 8192;
  std::uint64_t seed_partition = 1;
  std::uint64_t seed_rff = 2;
  bool normalize = true;

  Index resolved_block_size() const {
    if (block_size > 0) return block_size;
    return loss.family == LossFamily::logistic ? Index(1024) : Index(512);
  }
};

template <typename T>
using ProgressFn = std::function<bool(const DualState<T>&, std::uint64_t)>;

/// Owns the resolved training configuration (normalization statistics,
/// bandwidth, sampled feature map, block partition) so that callers can build
/// diagnostics around the run before it starts.
template <typename T>
class TrainSession {
 public:
  TrainSession(const Dataset<T>& data, TrainOptions<T> opts)
      : data_(data), opts_(std::move(opts)), loss_(opts_.loss, opts_.lambda) {
    if (opts_.loss.is_classification()) {
      for (Index i = 0; i < data.n; ++i)
        if (data.labels[i] != T(1) && data.labels[i] != T(-1))
          throw data_error("classification training requires labels in {-1,+1}");
    }
    norm_ = opts_.normalize ? zscore_fit(data) : Normalization<T>::identity(data.d);
    T sigma;
    if (opts_.sigma) {
      sigma = *opts_.sigma;
    } else {
      // median heuristic over a normalized subsample
      const Index m = std::min(opts_.median_subsample, data.n);
      std::vector<Index> rows(data.n);
      std::iota(rows.begin(), rows.end(), Index(0));
      Rng rng(opts_.seed_rff ^ 0x6d656469616eULL);
      for (Index i = 0; i < m; ++i) {
        const Index j = i + static_cast<Index>(rng.below(static_cast<std::uint64_t>(data.n - i)));
        std::swap(rows[i], rows[j]);
      }
      rows.resize(m);
      RowMatrix<T> Xs;
      data.gather(rows, Xs);
      norm_.apply(Xs);
      sigma = median_heuristic(Xs, m, opts_.seed_rff ^ 0x6d656469616eULL, opts_.kernel);
    }
    kernel_ = KernelSpec(opts_.kernel, double(sigma));
    if (opts_.inexact) rff_ = rff_sample<T>(kernel_, opts_.rff_dim, data.d, opts_.seed_rff);
    partition_ = partition_blocks(data.n, opts_.resolved_block_size(), opts_.seed_partition);
  }

  const Normalization<T>& normalization() const { return norm_; }
  const KernelSpec& kernel() const { return kernel_; }
  const DualLoss<T>& loss() const { return loss_; }
  const RffMap<T>* rff() const { return opts_.inexact ? &rff_ : nullptr; }
  const BlockPartition& partition() const { return partition_; }

  ObjectiveEstimator<T> estimator(PrimalEvalPolicy policy, Index subsample,
                                  std::uint64_t seed) const {
    if (opts_.inexact)
      return ObjectiveEstimator<T>(data_, &norm_, rff_, loss_, policy, subsample, seed,
                                   opts_.chunk);
    return ObjectiveEstimator<T>(data_, &norm_, kernel_, loss_, policy, subsample, seed,
                                 opts_.chunk);
  }

  TrainedModel<T> run(ProgressFn<T> progress = {}, std::uint64_t callback_every = 1,
                      DualState<T>* state_out = nullptr) {
    SolveOptions<T> sopts;
    sopts.tr = opts_.tr;
    sopts.iterations = opts_.iterations;
    sopts.chunk = opts_.chunk;
    sopts.selection_seed = opts_.seed_partition ^ 0x9e3779b97f4a7c15ULL;
    sopts.callback_every = callback_every;
    sopts.progress = std::move(progress);
    DualState<T> state =
        opts_.inexact ? dbcd_train(data_, &norm_, loss_, rff_, partition_, sopts)
                      : dbcd_train(data_, &norm_, loss_, kernel_, partition_, sopts);

    TrainedModel<T> model;
    model.loss = opts_.loss;
    model.lambda = opts_.lambda;
    model.inexact = opts_.inexact;
    model.kernel = kernel_;
    model.norm = norm_;
    model.seed_partition = opts_.seed_partition;
    model.seed_rff = opts_.seed_rff;
    model.iterations = state.iteration;
    if (opts_.inexact) {
      model.rff = rff_;
      model.theta = state.theta;
    } else {
      model.train_X = data_.to_dense();
      norm_.apply(model.train_X);
      model.train_y = data_.labels;
      model.alpha = state.alpha;
    }
    if (state_out) *state_out = std::move(state);
    return model;
  }

 private:
  const Dataset<T>& data_;
  TrainOptions<T> opts_;
  DualLoss<T> loss_;
  Normalization<T> norm_;
  KernelSpec kernel_;
  RffMap<T> rff_;
  BlockPartition partition_;
};

template <typename T>
TrainedModel<T> train_binary(const Dataset<T>& data, const TrainOptions<T>& opts,
                             ProgressFn<T> progress = {}, std::uint64_t callback_every = 1) {
  TrainSession<T> session(data, opts);
  return session.run(std::move(progress), callback_every);
}

// =========================================================================
// One-vs-rest composition
// =========================================================================

template <typename T>
struct OvrModel {
  std::vector<TrainedModel<T>> models;   // one per class, ascending label order
  std::vector<double> class_labels;

  /// argmax of per-class raw scores; ties resolve to the lowest class index.
  VectorX<T> predict(const RowMatrix<T>& X_raw) const {
    MatrixX<T> scores = predict_scores(X_raw);
    VectorX<T> out(X_raw.rows());
    for (Index i = 0; i < scores.rows(); ++i) {
      Index best = 0;
      for (Index c = 1; c < scores.cols(); ++c)
        if (scores(i, c) > scores(i, best)) best = c;
      out[i] = T(class_labels[best]);
    }
    return out;
  }

  /// n x C matrix of per-class raw scores.
  MatrixX<T> predict_scores(const RowMatrix<T>& X_raw) const {
    MatrixX<T> scores(X_raw.rows(), Index(models.size()));
    for (std::size_t c = 0; c < models.size(); ++c)
      scores.col(Index(c)) = models[c].predict_raw(X_raw);
    return scores;
  }
};

/// Train one binary model per class (labels +1 for the class, -1 otherwise),
/// sequentially in ascending class-label order.
template <typename T>
OvrModel<T> ovr_train(const Dataset<T>& data, const TrainOptions<T>& opts,
                      std::function<void(std::size_t, const TrainedModel<T>&)> on_class = {}) {
  if (!opts.loss.is_classification())
    throw data_error("one-vs-rest requires a classification loss");
  const auto classes = distinct_labels(data);
  if (classes.size() < 2) throw data_error("one-vs-rest requires at least 2 classes");
  OvrModel<T> out;
  Dataset<T> work = data;  // features shared across classes, labels rewritten per class
  for (std::size_t c = 0; c < classes.size(); ++c) {
    for (Index i = 0; i < data.n; ++i)
      work.labels[i] = data.labels[i] == classes[c] ? T(1) : T(-1);
    TrainedModel<T> model = train_binary(work, opts);
    model.class_label = double(classes[c]);
    out.class_labels.push_back(double(classes[c]));
    if (on_class) on_class(c, model);
    out.models.push_back(std::move(model));
  }
  return out;
}

}  // namespace dbcd
