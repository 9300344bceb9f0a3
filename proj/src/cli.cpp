#include "cli.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <algorithm>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dbcd/data.hpp"
#include "dbcd/kernels.hpp"
#include "dbcd/losses.hpp"
#include "dbcd/metrics.hpp"
#include "dbcd/model.hpp"
#include "dbcd/model_io.hpp"
#include "dbcd/objective.hpp"
#include "dbcd/solver.hpp"
#include "dbcd/types.hpp"

namespace dbcd::cli {
namespace {

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------
// Options shared across subcommands
// ---------------------------------------------------------------------

struct TrainArgs {
  std::string train_path;
  std::string val_path;
  double val_fraction = 0.0;
  std::string model_out;
  std::string log_path;

  std::string loss = "square";
  double p = 2.0;
  double delta = 1.0;
  double eps_ins = 0.25;
  double lambda = 1.0;
  std::string mode = "exact";
  std::string kernel = "gaussian";
  double sigma = 0.0;  // 0 with !sigma_median means "not set" -> median
  bool sigma_median = false;
  std::int64_t rff_dim = 4096;
  std::int64_t block_size = 0;
  std::uint64_t iters = 1000;
  std::string precision = "double";

  double delta_max = 1.0;
  double eta = 0.1;
  double eps_tol = 1e-5;
  int tr_iters = 50;
  int cg_iters = 10;
  std::string cg_rule = "prose";

  std::uint64_t seed_partition = 1;
  std::uint64_t seed_rff = 2;
  std::uint64_t seed_split = 3;

  std::uint64_t log_every = 100;
  bool log_walltime = true;
  std::string primal_eval = "subsample";
  std::int64_t primal_subsample = 4096;
  std::int64_t val_max_rows = 10000;
  std::int64_t chunk = 8192;
  std::int64_t median_subsample = 2000;
  bool lambda_grid = false;

  std::string format = "auto";
  int label_col = -1;
  bool resume = false;
};

LossKind make_loss(const TrainArgs& a) {
  if (a.loss == "square" || a.loss == "krr") return LossKind::square();
  if (a.loss == "lp") return LossKind::lp(a.p);
  if (a.loss == "l1") return LossKind::l1();
  if (a.loss == "huber") return LossKind::huber(a.delta);
  if (a.loss == "svr") return LossKind::svr(a.eps_ins);
  if (a.loss == "hinge") return LossKind::hinge();
  if (a.loss == "squared_hinge" || a.loss == "svc") return LossKind::squared_hinge();
  if (a.loss == "logistic" || a.loss == "klr") return LossKind::logistic();
  throw std::invalid_argument("unknown loss '" + a.loss + "'");
}

bool is_csv_path(const std::string& path) {
  return path.size() > 4 && path.substr(path.size() - 4) == ".csv";
}

template <typename T>
Dataset<T> load_any(const std::string& path, const std::string& format, int label_col) {
  const bool csv = format == "csv" || (format == "auto" && is_csv_path(path));
  return csv ? load_csv<T>(path, label_col) : load_libsvm<T>(path);
}

PrimalEvalPolicy parse_policy(const std::string& s) {
  if (s == "off") return PrimalEvalPolicy::off;
  if (s == "subsample") return PrimalEvalPolicy::subsample;
  if (s == "full") return PrimalEvalPolicy::full;
  throw std::invalid_argument("unknown primal-eval policy '" + s + "'");
}

// ---------------------------------------------------------------------
// Training log: CSV rows at the progress cadence. Optional columns are
// left empty when the corresponding evaluation is disabled.
// ---------------------------------------------------------------------

template <typename T>
class TrainLogger {
 public:
  TrainLogger(const std::string& path, bool walltime, const ObjectiveEstimator<T>* estimator,
              const RowMatrix<T>* val_X, const VectorX<T>* val_y,
              const TrainSession<T>* session, const Dataset<T>* train)
      : walltime_(walltime), estimator_(estimator), val_X_(val_X), val_y_(val_y),
        session_(session), train_(train) {
    if (!path.empty()) {
      out_.open(path);
      if (!out_) throw data_error("cannot open log file " + path);
      out_ << "iteration,wall_seconds,dual_objective,primal_objective,duality_gap,val_loss,"
              "val_metric\n";
    }
    start_ = std::chrono::steady_clock::now();
  }

  bool enabled() const { return out_.is_open(); }

  ObjectiveValues<T> last_objectives() const { return last_; }

  bool on_progress(const DualState<T>& state, std::uint64_t iter) {
    if (!out_.is_open()) return true;
    std::string row = std::to_string(iter);
    row += ',';
    if (walltime_) {
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
      row += fmt(secs);
    }
    ObjectiveValues<T> obj = estimator_->evaluate(state);
    last_ = obj;
    row += ',';
    row += fmt(double(obj.dual));
    row += ',';
    if (obj.has_primal) row += fmt(double(obj.primal));
    row += ',';
    if (obj.has_primal) row += fmt(double(obj.gap));
    row += ',';
    if (val_X_ && val_X_->rows() > 0) {
      const VectorX<T> u = score_validation(state);
      double loss_sum = 0;
      for (Index i = 0; i < u.size(); ++i)
        loss_sum += double(primal_loss(session_->loss().kind(), (*val_y_)[i], u[i]));
      row += fmt(loss_sum / double(u.size()));
      row += ',';
      row += fmt(val_metric(u));
    } else {
      row += ',';
    }
    out_ << row << '\n';
    return true;
  }

 private:
  VectorX<T> score_validation(const DualState<T>& state) const {
    const Index chunk = 4096;
    if (state.inexact) {
      VectorX<T> u(val_X_->rows());
      for (Index q0 = 0; q0 < val_X_->rows(); q0 += chunk) {
        const Index len = std::min(chunk, val_X_->rows() - q0);
        const RowMatrix<T> Xq = val_X_->middleRows(q0, len);
        u.segment(q0, len).noalias() = rff_map(*session_->rff(), Xq).transpose() * state.theta;
      }
      return u;
    }
    VectorX<T> u = VectorX<T>::Zero(val_X_->rows());
    RowMatrix<T> X_C;
    for (Index c0 = 0; c0 < train_->n; c0 += chunk) {
      const Index len = std::min(chunk, train_->n - c0);
      train_->gather_range(c0, c0 + len, X_C);
      session_->normalization().apply(X_C);
      u.noalias() += kernel_block(session_->kernel(), *val_X_, X_C) * state.alpha.segment(c0, len);
    }
    return u;
  }

  double val_metric(const VectorX<T>& u) const {
    if (session_->loss().kind().is_classification()) {
      Index correct = 0;
      for (Index i = 0; i < u.size(); ++i) {
        const T label = u[i] >= T(0) ? T(1) : T(-1);
        correct += label == (*val_y_)[i];
      }
      return double(correct) / double(u.size());
    }
    VectorX<T> yh = u;
    return rmse(*val_y_, yh);
  }

  std::ofstream out_;
  bool walltime_;
  const ObjectiveEstimator<T>* estimator_;
  const RowMatrix<T>* val_X_;
  const VectorX<T>* val_y_;
  const TrainSession<T>* session_;
  const Dataset<T>* train_;
  std::chrono::steady_clock::time_point start_;
  ObjectiveValues<T> last_;
};

// ---------------------------------------------------------------------
// train
// ---------------------------------------------------------------------

template <typename T>
TrainOptions<T> make_options(const TrainArgs& a, double lambda) {
  TrainOptions<T> opts;
  opts.loss = make_loss(a);
  opts.lambda = T(lambda);
  opts.inexact = a.mode == "inexact";
  if (a.mode != "exact" && a.mode != "inexact")
    throw std::invalid_argument("mode must be exact or inexact");
  if (a.kernel == "gaussian")
    opts.kernel = KernelFamily::gaussian;
  else if (a.kernel == "laplacian")
    opts.kernel = KernelFamily::laplacian;
  else
    throw std::invalid_argument("kernel must be gaussian or laplacian");
  if (!a.sigma_median) {
    if (!(a.sigma > 0)) throw std::invalid_argument("pass --sigma > 0 or --sigma-median");
    opts.sigma = T(a.sigma);
  }
  opts.median_subsample = Index(a.median_subsample);
  opts.rff_dim = Index(a.rff_dim);
  opts.block_size = Index(a.block_size);
  opts.iterations = a.iters;
  opts.tr.delta_max = T(a.delta_max);
  opts.tr.eta = T(a.eta);
  opts.tr.eps_tol = T(a.eps_tol);
  opts.tr.max_tr_iters = a.tr_iters;
  opts.tr.max_cg_iters = a.cg_iters;
  if (a.cg_rule != "prose" && a.cg_rule != "literal")
    throw std::invalid_argument("cg-rule must be prose or literal");
  opts.tr.cg_adopt_on_box_hit = a.cg_rule == "prose";
  opts.chunk = Index(a.chunk);
  opts.seed_partition = a.seed_partition;
  opts.seed_rff = a.seed_rff;
  return opts;
}

/// Cap validation to at most val_max_rows rows (seeded uniform subsample).
template <typename T>
std::vector<Index> val_rows(const Dataset<T>& val, std::int64_t cap, std::uint64_t seed) {
  std::vector<Index> rows(val.n);
  std::iota(rows.begin(), rows.end(), Index(0));
  if (val.n > Index(cap)) {
    Rng rng(seed ^ 0x76616cULL);
    for (Index i = 0; i < Index(cap); ++i) {
      const Index j = i + Index(rng.below(std::uint64_t(val.n - i)));
      std::swap(rows[i], rows[j]);
    }
    rows.resize(std::size_t(cap));
  }
  return rows;
}

template <typename T>
struct BinaryRun {
  TrainedModel<T> model;
  double val_metric = 0;  // accuracy (classification) or rmse (regression)
  bool has_val = false;
};

template <typename T>
BinaryRun<T> run_binary(const TrainArgs& a, const Dataset<T>& train, const Dataset<T>* val,
                        double lambda, const std::string& log_path) {
  TrainOptions<T> opts = make_options<T>(a, lambda);
  TrainSession<T> session(train, opts);
  const PrimalEvalPolicy policy = parse_policy(a.primal_eval);
  ObjectiveEstimator<T> estimator =
      session.estimator(policy, Index(a.primal_subsample), a.seed_split);

  RowMatrix<T> val_X_raw, val_X;  // capped rows; raw for predict, normalized for logging
  VectorX<T> val_y;
  if (val) {
    const auto rows = val_rows(*val, a.val_max_rows, a.seed_split);
    val->gather(rows, val_X_raw);
    val_X = val_X_raw;
    session.normalization().apply(val_X);
    val_y.resize(Index(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) val_y[Index(i)] = val->labels[rows[i]];
  }

  TrainLogger<T> logger(log_path, a.log_walltime, &estimator, &val_X, &val_y, &session, &train);
  ProgressFn<T> progress;
  if (logger.enabled())
    progress = [&logger](const DualState<T>& st, std::uint64_t it) {
      return logger.on_progress(st, it);
    };
  BinaryRun<T> out;
  DualState<T> state;
  out.model = session.run(progress, a.log_every, &state);
  if (policy != PrimalEvalPolicy::off) {
    const ObjectiveValues<T> obj =
        estimator.evaluate(state.alpha, state.inexact ? &state.theta : nullptr);
    out.model.final_gap = double(obj.gap);
  }
  if (val && val_y.size() > 0) {
    const VectorX<T> us = out.model.predict_raw(val_X_raw, Index(a.chunk));
    if (opts.loss.is_classification()) {
      Index ok = 0;
      for (Index i = 0; i < us.size(); ++i) ok += (us[i] >= T(0) ? T(1) : T(-1)) == val_y[i];
      out.val_metric = double(ok) / double(us.size());
    } else {
      out.val_metric = rmse(val_y, us);
    }
    out.has_val = true;
  }
  return out;
}

template <typename T>
int cmd_train_impl(const TrainArgs& a) {
  if (a.resume)
    throw std::invalid_argument(
        "training resume is not supported: each run writes a complete model");
  Dataset<T> train = load_any<T>(a.train_path, a.format, a.label_col);
  std::optional<Dataset<T>> val;
  if (!a.val_path.empty()) {
    val = load_any<T>(a.val_path, a.format, a.label_col);
    if (val->d < train.d) {
      // libsvm files omit trailing zero features; widen to the train dim
      if (val->sparse) val->d = train.d;
    }
    if (val->d != train.d)
      throw data_error("validation data has " + std::to_string(val->d) +
                       " features, train has " + std::to_string(train.d));
  } else if (a.val_fraction > 0) {
    auto [tr, va] = train_test_split(train, 1.0 - a.val_fraction, a.seed_split);
    train = std::move(tr);
    val = std::move(va);
  }

  const LossKind loss = make_loss(a);
  bool multiclass = false;
  if (loss.is_classification()) {
    auto classes = distinct_labels(train);
    if (classes.size() < 2) throw data_error("classification data has a single class");
    if (classes.size() == 2) {
      if (remap_binary_labels(train))
        std::cerr << "note: remapped binary labels {" << fmt(double(classes[0])) << ","
                  << fmt(double(classes[1])) << "} to {-1,+1}\n";
      if (val) {
        for (Index i = 0; i < val->n; ++i) {
          if (val->labels[i] == T(classes[0]))
            val->labels[i] = T(-1);
          else if (val->labels[i] == T(classes[1]))
            val->labels[i] = T(1);
          else if (val->labels[i] != T(-1) && val->labels[i] != T(1))
            throw data_error("validation label not seen in training data");
        }
      }
    } else {
      multiclass = true;
    }
  }

  std::vector<double> grid;
  if (a.lambda_grid) {
    if (!val) throw std::invalid_argument("--lambda-grid requires --val or --val-fraction");
    for (int i = -7; i <= 7; ++i) grid.push_back(std::ldexp(1.0, i));
  } else {
    grid.push_back(a.lambda);
  }

  const bool higher_better = loss.is_classification();
  double best_metric = higher_better ? -1e300 : 1e300;
  double best_lambda = grid.front();
  bool saved = false;

  for (std::size_t gi = 0; gi < grid.size(); ++gi) {
    const double lambda = grid[gi];
    std::string log_path = a.log_path;
    if (!log_path.empty() && grid.size() > 1)
      log_path += ".lambda" + std::to_string(gi);
    if (!multiclass) {
      BinaryRun<T> run = run_binary<T>(a, train, val ? &*val : nullptr, lambda, log_path);
      const bool better = grid.size() == 1 ||
                          (run.has_val && (higher_better ? run.val_metric > best_metric
                                                         : run.val_metric < best_metric));
      if (better) {
        best_metric = run.has_val ? run.val_metric : 0;
        best_lambda = lambda;
        save_model(run.model, a.model_out);
        saved = true;
      }
      if (grid.size() > 1)
        std::cout << "lambda=" << fmt(lambda) << " val_metric=" << fmt(run.val_metric) << "\n";
    } else {
      // one-vs-rest: per-class logs carry a .class<k> suffix
      OvrModel<T> bundle;
      const auto classes = distinct_labels(train);
      Dataset<T> work = train;
      for (std::size_t c = 0; c < classes.size(); ++c) {
        for (Index i = 0; i < train.n; ++i)
          work.labels[i] = train.labels[i] == classes[c] ? T(1) : T(-1);
        std::string class_log = log_path;
        if (!class_log.empty()) class_log += ".class" + std::to_string(c);
        std::optional<Dataset<T>> val_c;
        if (val) {
          val_c = *val;
          for (Index i = 0; i < val_c->n; ++i)
            val_c->labels[i] = val->labels[i] == classes[c] ? T(1) : T(-1);
        }
        BinaryRun<T> run =
            run_binary<T>(a, work, val_c ? &*val_c : nullptr, lambda, class_log);
        run.model.class_label = double(classes[c]);
        bundle.class_labels.push_back(double(classes[c]));
        bundle.models.push_back(std::move(run.model));
      }
      double metric = 0;
      if (val) {
        const VectorX<T> pred = bundle.predict(val->to_dense());
        metric = accuracy(val->labels, pred);
      }
      const bool better = grid.size() == 1 || metric > best_metric;
      if (better) {
        best_metric = metric;
        best_lambda = lambda;
        save_model(bundle, a.model_out);
        saved = true;
      }
      if (grid.size() > 1)
        std::cout << "lambda=" << fmt(lambda) << " val_accuracy=" << fmt(metric) << "\n";
    }
  }
  if (!saved) throw data_error("no model was trained");
  if (grid.size() > 1)
    std::cout << "selected lambda=" << fmt(best_lambda) << " (val metric " << fmt(best_metric)
              << ")\n";
  std::cout << "model written to " << a.model_out << "\n";
  return 0;
}

int cmd_train(const TrainArgs& a) {
  if (a.precision == "single" || a.precision == "float") return cmd_train_impl<float>(a);
  if (a.precision == "double") return cmd_train_impl<double>(a);
  throw std::invalid_argument("precision must be single or double");
}

// ---------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------

struct PredictArgs {
  std::string model_path;
  std::string data_path;
  std::string out_path;
  bool proba = false;
  std::string format = "auto";
  int label_col = -1;
};

template <typename T>
int cmd_predict_impl(const PredictArgs& a) {
  OvrModel<T> bundle = load_model<T>(a.model_path);
  std::ofstream out(a.out_path);
  if (!out) throw data_error("cannot open " + a.out_path + " for writing");

  Dataset<T> data;
  bool empty_input = false;
  try {
    data = load_any<T>(a.data_path, a.format, a.label_col);
  } catch (const data_error& e) {
    if (std::string(e.what()).find("no samples") == std::string::npos) throw;
    empty_input = true;
  }

  const bool ovr = bundle.class_labels.size() >= 2;
  if (ovr && a.proba)
    throw data_error("probabilities are not available for one-vs-rest models");
  const TrainedModel<T>& first = bundle.models.front();
  const Index model_dim = first.inexact ? first.rff.input_dim() : first.train_X.cols();
  if (!empty_input && data.sparse && data.d < model_dim)
    data.d = model_dim;  // trailing zero features are omitted in libsvm files
  if (ovr) {
    out << "index,label";
    for (double c : bundle.class_labels) out << ",score_" << fmt(c);
    out << "\n";
    if (!empty_input) {
      const RowMatrix<T> X = data.to_dense();
      const MatrixX<T> scores = bundle.predict_scores(X);
      const VectorX<T> labels = bundle.predict(X);
      for (Index i = 0; i < X.rows(); ++i) {
        out << i << ',' << fmt(double(labels[i]));
        for (Index c = 0; c < scores.cols(); ++c) out << ',' << fmt(double(scores(i, c)));
        out << '\n';
      }
    }
    return 0;
  }

  if (a.proba && first.loss.family != LossFamily::logistic)
    throw data_error("probabilities are available for logistic models only");
  const bool classify = first.loss.is_classification();
  out << (a.proba ? "index,raw,probability" : (classify ? "index,raw,label" : "index,raw"))
      << "\n";
  if (!empty_input) {
    const RowMatrix<T> X = data.to_dense();
    const VectorX<T> u = first.predict_raw(X);
    for (Index i = 0; i < u.size(); ++i) {
      out << i << ',' << fmt(double(u[i]));
      if (a.proba) {
        const T z = u[i];
        const T pr = z >= T(0) ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
        out << ',' << fmt(double(pr));
      } else if (classify) {
        out << ',' << fmt(u[i] >= T(0) ? 1.0 : -1.0);
      }
      out << '\n';
    }
  }
  return 0;
}

int cmd_predict(const PredictArgs& a) {
  return model_file_precision(a.model_path) == 4 ? cmd_predict_impl<float>(a)
                                                 : cmd_predict_impl<double>(a);
}

// ---------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------

struct EvaluateArgs {
  std::string pred_path;
  std::string data_path;
  std::vector<std::string> metrics;  // rmse, rel, acc, auc
  std::string format = "auto";
  int label_col = -1;
};

struct PredColumns {
  std::vector<double> raw;
  std::vector<double> label;
  bool has_raw = false;
  bool has_label = false;
};

PredColumns read_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw data_error(path + ": empty predictions file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) header.push_back(tok);
  }
  int raw_col = -1, label_col = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "raw") raw_col = int(i);
    if (header[i] == "label") label_col = int(i);
  }
  PredColumns out;
  out.has_raw = raw_col >= 0;
  out.has_label = label_col >= 0;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string tok;
    int col = 0;
    while (std::getline(ss, tok, ',')) {
      if (col == raw_col || col == label_col) {
        double v = 0;
        if (!dbcd::detail::parse_number(tok.data(), tok.data() + tok.size(), v))
          throw data_error(path + ":" + std::to_string(lineno) + ": bad number '" + tok + "'");
        if (col == raw_col) out.raw.push_back(v);
        if (col == label_col) out.label.push_back(v);
      }
      ++col;
    }
  }
  return out;
}

int cmd_evaluate(const EvaluateArgs& a) {
  const PredColumns pred = read_predictions(a.pred_path);
  const Dataset<double> data = load_any<double>(a.data_path, a.format, a.label_col);
  const std::size_t n_pred = pred.has_raw ? pred.raw.size() : pred.label.size();
  if (Index(n_pred) != data.n)
    throw data_error("predictions (" + std::to_string(n_pred) + " rows) and labels (" +
                     std::to_string(data.n) + " rows) differ in length");
  if (data.n == 0) throw data_error("empty evaluation input");

  std::vector<std::string> metrics = a.metrics;
  if (metrics.empty()) {
    if (pred.has_label)
      metrics = {"acc"};
    else
      metrics = {"rmse", "rel"};
    if (pred.has_raw && pred.has_label) metrics.push_back("auc");
  }
  VectorX<double> y = data.labels;
  for (const std::string& m : metrics) {
    if (m == "rmse" || m == "rel") {
      if (!pred.has_raw) throw data_error(m + " requires a 'raw' prediction column");
      const VectorX<double> yh =
          Eigen::Map<const VectorX<double>>(pred.raw.data(), Index(pred.raw.size()));
      std::cout << m << " " << fmt(m == "rmse" ? rmse(y, yh) : relative_error(y, yh)) << "\n";
    } else if (m == "acc") {
      VectorX<double> yh;
      if (pred.has_label) {
        yh = Eigen::Map<const VectorX<double>>(pred.label.data(), Index(pred.label.size()));
      } else if (pred.has_raw) {
        // fall back to the sign rule on raw scores
        yh.resize(Index(pred.raw.size()));
        for (std::size_t i = 0; i < pred.raw.size(); ++i)
          yh[Index(i)] = pred.raw[i] >= 0 ? 1.0 : -1.0;
      } else {
        throw data_error("acc requires a 'label' or 'raw' prediction column");
      }
      std::cout << "acc " << fmt(accuracy(y, yh)) << "\n";
    } else if (m == "auc") {
      if (!pred.has_raw) throw data_error("auc requires a 'raw' prediction column");
      const VectorX<double> s =
          Eigen::Map<const VectorX<double>>(pred.raw.data(), Index(pred.raw.size()));
      std::cout << "auc " << fmt(auc(y, s)) << "\n";
    } else {
      throw std::invalid_argument("unknown metric '" + m + "'");
    }
  }
  return 0;
}

// ---------------------------------------------------------------------
// inspect
// ---------------------------------------------------------------------

int cmd_inspect(const std::string& path) {
  const ModelFileInfo info = inspect_model_file(path);
  std::cout << "format: v" << info.meta.at("format").get<int>() << ", precision "
            << info.meta.at("precision").get<std::string>() << ", " << info.model_count
            << " model(s)\n";
  const auto& models = info.meta.at("models");
  for (std::size_t k = 0; k < models.size(); ++k) {
    const auto& jm = models[k];
    std::cout << "model " << k << ": loss=" << jm.at("loss").at("family").get<std::string>()
              << " lambda=" << fmt(jm.at("lambda").get<double>())
              << " mode=" << jm.at("mode").get<std::string>()
              << " kernel=" << jm.at("kernel").at("family").get<std::string>()
              << " sigma=" << fmt(jm.at("kernel").at("sigma").get<double>());
    if (!jm.at("rff").is_null()) std::cout << " M=" << jm.at("rff").at("M").get<Index>();
    std::cout << " iterations=" << jm.at("iterations").get<std::uint64_t>()
              << " seeds=(" << jm.at("seeds").at("partition").get<std::uint64_t>() << ","
              << jm.at("seeds").at("rff").get<std::uint64_t>() << ")";
    if (!jm.at("final_gap").is_null())
      std::cout << " final_gap=" << fmt(jm.at("final_gap").get<double>());
    if (info.model_count > 1) std::cout << " class=" << fmt(jm.at("class_label").get<double>());
    std::cout << "\n";
  }
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"kernel machines trained by dual block coordinate descent"};
  app.require_subcommand(1);

  TrainArgs ta;
  CLI::App* train = app.add_subcommand("train", "train a model");
  std::string config_path;
  train->add_option("--config", config_path,
                    "key=value config file (command-line flags override it)");
  train->add_option("train", ta.train_path, "training data (libsvm or csv)")->required();
  train->add_option("--out", ta.model_out, "output model path")->required();
  train->add_option("--val", ta.val_path, "validation data path");
  train->add_option("--val-fraction", ta.val_fraction,
                    "carve a validation split off the training data")
      ->excludes("--val");
  train->add_option("--log", ta.log_path, "convergence log (csv)");
  train->add_option("--loss", ta.loss,
                    "square|lp|l1|huber|svr|hinge|squared_hinge|logistic (aliases: krr, svc, klr)");
  train->add_option("--p", ta.p, "lp loss exponent (p > 1)");
  train->add_option("--delta", ta.delta, "huber threshold");
  train->add_option("--epsilon", ta.eps_ins, "svr insensitivity");
  train->add_option("--lambda", ta.lambda, "regularization weight");
  train->add_option("--mode", ta.mode, "exact|inexact");
  train->add_option("--kernel", ta.kernel, "gaussian|laplacian");
  auto* sig = train->add_option("--sigma", ta.sigma, "kernel bandwidth");
  train->add_flag("--sigma-median", ta.sigma_median, "bandwidth from the median heuristic")
      ->excludes(sig);
  train->add_option("--rff-dim", ta.rff_dim, "feature-map dimension M (inexact mode)");
  train->add_option("--block-size", ta.block_size, "coordinate block size (0 = auto)");
  train->add_option("--iters", ta.iters, "outer iterations");
  train->add_option("--precision", ta.precision, "single|double");
  train->add_option("--delta-max", ta.delta_max, "max trust-region radius");
  train->add_option("--eta", ta.eta, "step acceptance threshold");
  train->add_option("--eps-tol", ta.eps_tol, "CG residual tolerance / radius slack");
  train->add_option("--tr-iters", ta.tr_iters, "max trust-region iterations per block");
  train->add_option("--cg-iters", ta.cg_iters, "max CG iterations per step");
  train->add_option("--cg-rule", ta.cg_rule,
                    "box handling on CG truncation: prose (adopt+clamp) | literal");
  train->add_option("--seed-partition", ta.seed_partition, "block partition seed");
  train->add_option("--seed-rff", ta.seed_rff, "feature map / bandwidth subsample seed");
  train->add_option("--seed-split", ta.seed_split, "split / subsample seed");
  train->add_option("--log-every", ta.log_every, "log cadence in iterations");
  train->add_flag("--log-walltime,!--no-log-walltime", ta.log_walltime,
                  "record wall-clock seconds in the log");
  train->add_option("--primal-eval", ta.primal_eval, "off|subsample|full");
  train->add_option("--primal-subsample", ta.primal_subsample,
                    "subsample size for objective estimates");
  train->add_option("--val-max-rows", ta.val_max_rows, "cap on scored validation rows");
  train->add_option("--chunk", ta.chunk, "column chunk for kernel products");
  train->add_option("--median-subsample", ta.median_subsample,
                    "points used by the median heuristic");
  train->add_flag("--lambda-grid", ta.lambda_grid,
                  "grid-search lambda over {2^i : i = -7..7} on the validation metric");
  train->add_option("--format", ta.format, "auto|libsvm|csv");
  train->add_option("--label-col", ta.label_col, "csv label column (negative = from end)");
  train->add_flag("--resume", ta.resume, "(unsupported)");

  PredictArgs pa;
  CLI::App* predict = app.add_subcommand("predict", "score data with a trained model");
  predict->add_option("model", pa.model_path, "model file")->required();
  predict->add_option("data", pa.data_path, "input data")->required();
  predict->add_option("--out", pa.out_path, "output csv")->required();
  predict->add_flag("--proba", pa.proba, "emit sigmoid probabilities (logistic models)");
  predict->add_option("--format", pa.format, "auto|libsvm|csv");
  predict->add_option("--label-col", pa.label_col, "csv label column");

  EvaluateArgs ea;
  CLI::App* evaluate = app.add_subcommand("evaluate", "compare predictions against labels");
  evaluate->add_option("--pred", ea.pred_path, "predictions csv from `predict`")->required();
  evaluate->add_option("data", ea.data_path, "data file with reference labels")->required();
  evaluate->add_option("--metrics", ea.metrics, "any of: rmse rel acc auc (default: auto)")
      ->delimiter(',');
  evaluate->add_option("--format", ea.format, "auto|libsvm|csv");
  evaluate->add_option("--label-col", ea.label_col, "csv label column");

  std::string inspect_path;
  CLI::App* inspect = app.add_subcommand("inspect", "print model file metadata");
  inspect->add_option("model", inspect_path, "model file")->required();

  // Config values are expanded into ordinary tokens ahead of the user's
  // flags; with a take-last policy the command line overrides the file.
  for (CLI::Option* opt : train->get_options())
    opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  try {
    if (!args.empty() && args[0] == "train") {
      std::string cfg;
      for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) cfg = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0) cfg = args[i].substr(9);
      }
      if (!cfg.empty()) {
        std::ifstream in(cfg);
        if (!in) throw data_error("cannot open config file " + cfg);
        std::vector<std::string> tokens;
        std::string line;
        while (std::getline(in, line)) {
          const auto sv = std::string(dbcd::detail::trim(line));
          if (sv.empty() || sv[0] == '#') continue;
          const auto eq = sv.find('=');
          if (eq == std::string::npos)
            throw std::invalid_argument("config line is not key=value: '" + sv + "'");
          const std::string key(dbcd::detail::trim(std::string_view(sv).substr(0, eq)));
          const std::string val(dbcd::detail::trim(std::string_view(sv).substr(eq + 1)));
          tokens.push_back("--" + key + "=" + val);
        }
        args.insert(args.begin() + 1, tokens.begin(), tokens.end());
      }
    }
  } catch (const data_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  }

  try {
    std::reverse(args.begin(), args.end());
    app.parse(std::move(args));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (train->parsed()) return cmd_train(ta);
    if (predict->parsed()) return cmd_predict(pa);
    if (evaluate->parsed()) return cmd_evaluate(ea);
    if (inspect->parsed()) return cmd_inspect(inspect_path);
    return 1;
  } catch (const numerical_error& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const data_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace dbcd::cli
