#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "dbcd/model.hpp"
#include "dbcd/model_io.hpp"
#include "dbcd/objective.hpp"
#include "oracles.hpp"

using namespace dbcd;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

TrainedModel<double> tiny_krr_model() {
  // n = 1, K = [1], lambda = 1, y = 1: alpha = (K + I)^{-1} y = 0.5
  TrainedModel<double> m;
  m.loss = LossKind::square();
  m.lambda = 1.0;
  m.kernel = KernelSpec(KernelFamily::gaussian, 1.0);
  m.train_X = RowMatrix<double>::Zero(1, 2);
  m.train_y = VectorX<double>::Ones(1);
  m.alpha = VectorX<double>::Constant(1, 0.5);
  m.norm = Normalization<double>::identity(2);
  return m;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("predict_raw examples") {
  auto m = tiny_krr_model();
  RowMatrix<double> X = RowMatrix<double>::Zero(1, 2);  // the training point itself
  CHECK(m.predict_raw(X)[0] == doctest::Approx(0.5));

  m.alpha.setZero();
  CHECK(m.predict_raw(X)[0] == 0.0);

  RowMatrix<double> bad = RowMatrix<double>::Zero(1, 3);
  CHECK_THROWS_WITH_AS(m.predict_raw(bad), doctest::Contains("features"), data_error);
}

TEST_CASE("labels and probabilities") {
  auto m = tiny_krr_model();
  m.loss = LossKind::logistic();
  RowMatrix<double> X = RowMatrix<double>::Zero(3, 2);
  X(1, 0) = 100.0;  // far away: kernel ~ 0 -> u ~ 0 -> tie
  m.alpha[0] = 0.5;

  const auto labels = predict_label(m, X);
  CHECK(labels[1] == 1.0);  // sign(0) -> +1

  const auto proba = predict_proba(m, X);
  CHECK(proba[1] == doctest::Approx(0.5));

  // u = ln 3 -> probability 0.75
  TrainedModel<double> p = tiny_krr_model();
  p.loss = LossKind::logistic();
  p.alpha[0] = std::log(3.0);
  const RowMatrix<double> origin = RowMatrix<double>::Zero(1, 2);
  CHECK(predict_proba(p, origin)[0] == doctest::Approx(0.75));

  TrainedModel<double> reg = tiny_krr_model();
  CHECK_THROWS_AS(predict_label(reg, X), data_error);
  CHECK_THROWS_AS(predict_proba(reg, X), data_error);
}

TEST_CASE("objective examples on the singleton problem") {
  Dataset<double> data;
  data.n = 1;
  data.d = 1;
  data.dense = RowMatrix<double>::Zero(1, 1);
  data.labels = VectorX<double>::Ones(1);
  const KernelSpec spec(KernelFamily::gaussian, 1.0);
  DualLoss<double> loss(LossKind::square(), 1.0);

  VectorX<double> alpha = VectorX<double>::Constant(1, 0.5);
  const auto at_opt = duality_gap_exact(data, nullptr, spec, loss, alpha);
  CHECK(at_opt.dual == doctest::Approx(0.25));    // reported (negated) dual
  CHECK(at_opt.primal == doctest::Approx(0.25));  // 0.5*0.25 + 0.5*0.25
  CHECK(std::abs(at_opt.gap) <= 1e-8);            // strong duality at the optimum

  alpha.setZero();
  const auto at_zero = duality_gap_exact(data, nullptr, spec, loss, alpha);
  CHECK(at_zero.dual == doctest::Approx(0.0));
  CHECK(at_zero.primal == doctest::Approx(0.5));  // (1/lambda) * ||y||^2 / 2
  CHECK(at_zero.gap == doctest::Approx(0.5));
}

TEST_CASE("weak duality holds along a training run") {
  auto data = synth_make<double>(SynthKind::linear_regression_noise, 60, 3, 13, 0.3);
  TrainOptions<double> opts;
  opts.loss = LossKind::huber(1.0);
  opts.lambda = 0.5;
  opts.sigma = 1.5;
  opts.block_size = 16;
  opts.iterations = 30;
  TrainSession<double> session(data, opts);
  auto est = session.estimator(PrimalEvalPolicy::full, data.n, 1);
  session.run([&](const DualState<double>& st, std::uint64_t) {
    const auto obj = est.evaluate(st);
    CHECK(obj.primal >= obj.dual - 1e-8 * (1.0 + std::abs(obj.primal)));
    CHECK(obj.gap >= -1e-12);
    return true;
  });
}

TEST_CASE("subsampled estimator keeps the gap nonnegative") {
  auto data = synth_make<double>(SynthKind::two_gaussians, 400, 4, 17);
  TrainOptions<double> opts;
  opts.loss = LossKind::squared_hinge();
  opts.lambda = 0.25;
  opts.sigma = 2.0;
  opts.iterations = 10;
  opts.block_size = 64;
  TrainSession<double> session(data, opts);
  auto est = session.estimator(PrimalEvalPolicy::subsample, 64, 5);
  session.run([&](const DualState<double>& st, std::uint64_t) {
    const auto obj = est.evaluate(st);
    CHECK(obj.gap >= -1e-10 * (1.0 + std::abs(obj.primal)));
    return true;
  });
}

TEST_CASE("strong duality at convergence (exact, small instance)") {
  auto data = synth_make<double>(SynthKind::linear_regression_noise, 80, 4, 19, 0.2);
  TrainOptions<double> opts;
  opts.loss = LossKind::square();
  opts.lambda = 1.0;
  opts.iterations = 40;
  opts.tr.delta_max = 100.0;
  TrainSession<double> session(data, opts);
  DualState<double> state;
  auto model = session.run({}, 1, &state);
  const auto est = session.estimator(PrimalEvalPolicy::full, data.n, 1);
  const auto obj = est.evaluate(state);
  CHECK(obj.gap / (1.0 + std::abs(obj.primal)) <= 1e-6);
  CHECK(model.final_gap.has_value() == false);  // set by the CLI layer, not here
}

TEST_CASE("inexact predict_raw is consistent with the maintained theta") {
  auto data = synth_make<double>(SynthKind::two_gaussians, 150, 3, 23);
  TrainOptions<double> opts;
  opts.loss = LossKind::squared_hinge();
  opts.lambda = 0.5;
  opts.inexact = true;
  opts.rff_dim = 128;
  opts.block_size = 32;
  opts.iterations = 40;
  opts.sigma = 2.0;
  TrainSession<double> session(data, opts);
  DualState<double> state;
  auto model = session.run({}, 1, &state);
  // predict_raw(x) = psi(x)' theta must equal sum_i alpha_i psi(x_i)' psi(x)
  RowMatrix<double> Xn = data.to_dense();
  session.normalization().apply(Xn);
  const MatrixX<double> phi = rff_map(*session.rff(), Xn);
  const VectorX<double> u_direct = phi.transpose() * (phi * state.alpha);
  const VectorX<double> u_model = model.predict_raw(data.to_dense());
  CHECK((u_direct - u_model).norm() <= 1e-5 * (1.0 + u_direct.norm()));
}

TEST_CASE("exact and feature-map modes agree at large M") {
  auto data = synth_make<double>(SynthKind::sinusoid, 500, 5, 59, 0.1);
  auto probe = synth_make<double>(SynthKind::sinusoid, 200, 5, 61, 0.1);
  TrainOptions<double> opts;
  opts.loss = LossKind::square();
  opts.lambda = 0.5;
  opts.sigma = 1.5;
  opts.iterations = 15;
  opts.block_size = 500;
  opts.tr.delta_max = 50.0;
  auto exact = train_binary(data, opts);
  opts.inexact = true;
  opts.rff_dim = 8192;
  auto approx = train_binary(data, opts);
  const VectorX<double> u1 = exact.predict_raw(probe.to_dense());
  const VectorX<double> u2 = approx.predict_raw(probe.to_dense());
  const double m1 = u1.mean(), m2 = u2.mean();
  const double corr = ((u1.array() - m1) * (u2.array() - m2)).sum() /
                      (std::sqrt((u1.array() - m1).square().sum()) *
                       std::sqrt((u2.array() - m2).square().sum()));
  CHECK(corr >= 0.99);
}

TEST_CASE("serialization round trip preserves predictions bit-exactly") {
  auto data = synth_make<double>(SynthKind::linear_regression_noise, 50, 3, 29, 0.2);
  TrainOptions<double> opts;
  opts.loss = LossKind::svr(0.1);
  opts.lambda = 0.5;
  opts.iterations = 20;
  auto model = train_binary(data, opts);
  model.final_gap = 0.125;

  const std::string path = temp_path("dbcd_model_rt.bin");
  save_model(model, path);
  const auto back = load_model<double>(path);
  REQUIRE(back.models.size() == 1);
  const auto test = synth_make<double>(SynthKind::linear_regression_noise, 20, 3, 31, 0.2);
  const VectorX<double> u1 = model.predict_raw(test.to_dense());
  const VectorX<double> u2 = back.models[0].predict_raw(test.to_dense());
  CHECK(u1 == u2);
  CHECK(back.models[0].final_gap == model.final_gap);
  CHECK(back.models[0].kernel.sigma == model.kernel.sigma);
  std::remove(path.c_str());
}

TEST_CASE("inexact serialization round trip (single precision)") {
  auto data = synth_make<float>(SynthKind::two_gaussians, 80, 3, 37);
  TrainOptions<float> opts;
  opts.loss = LossKind::logistic();
  opts.lambda = 1.0f;
  opts.inexact = true;
  opts.rff_dim = 64;
  opts.iterations = 15;
  opts.block_size = 32;
  auto model = train_binary(data, opts);
  const std::string path = temp_path("dbcd_model_rt32.bin");
  save_model(model, path);
  CHECK(model_file_precision(path) == 4);
  CHECK_THROWS_AS(load_model<double>(path), data_error);  // precision mismatch is named
  const auto back = load_model<float>(path);
  CHECK(back.models[0].rff.W == model.rff.W);  // row-major round trip, bit exact
  CHECK(back.models[0].rff.b == model.rff.b);
  CHECK(back.models[0].theta == model.theta);
  const VectorX<float> u1 = model.predict_raw(data.to_dense());
  const VectorX<float> u2 = back.models[0].predict_raw(data.to_dense());
  CHECK(u1 == u2);
  std::remove(path.c_str());
}

TEST_CASE("corrupt and truncated model files are rejected") {
  auto model = tiny_krr_model();
  const std::string path = temp_path("dbcd_model_tr.bin");
  save_model(model, path);
  // truncate the file
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 3);
  CHECK_THROWS_WITH_AS(inspect_model_file(path), doctest::Contains("truncated"), data_error);
  std::ofstream(path) << "not a model";
  CHECK_THROWS_AS(inspect_model_file(path), data_error);
  std::remove(path.c_str());
}

TEST_CASE("one-vs-rest training and prediction") {
  // three well-separated clusters
  const Index n = 120;
  Rng rng(41);
  Dataset<double> data;
  data.n = n;
  data.d = 2;
  data.dense.resize(n, 2);
  data.labels.resize(n);
  for (Index i = 0; i < n; ++i) {
    const int c = int(i % 3);
    data.labels[i] = double(c);
    data.dense(i, 0) = 6.0 * c + rng.normal();
    data.dense(i, 1) = rng.normal();
  }
  TrainOptions<double> opts;
  opts.loss = LossKind::squared_hinge();
  opts.lambda = 0.1;
  opts.iterations = 60;
  opts.block_size = 40;
  const auto ovr = ovr_train(data, opts);
  REQUIRE(ovr.models.size() == 3);
  CHECK(ovr.class_labels == std::vector<double>{0.0, 1.0, 2.0});
  const VectorX<double> pred = ovr.predict(data.to_dense());
  Index correct = 0;
  for (Index i = 0; i < n; ++i) correct += pred[i] == data.labels[i];
  CHECK(double(correct) / double(n) >= 0.95);

  // serialization of the bundle
  const std::string path = temp_path("dbcd_model_ovr.bin");
  save_model(ovr, path);
  const auto back = load_model<double>(path);
  CHECK(back.class_labels == ovr.class_labels);
  CHECK(back.predict(data.to_dense()) == pred);
  std::remove(path.c_str());

  TrainOptions<double> bad = opts;
  bad.loss = LossKind::square();
  CHECK_THROWS_AS(ovr_train(data, bad), data_error);
}

TEST_CASE("ovr with two classes matches the binary sign rule") {
  auto data = synth_make<double>(SynthKind::two_gaussians, 100, 2, 43);
  // class ids 0/1 for the ovr path
  Dataset<double> multi = data;
  for (Index i = 0; i < data.n; ++i) multi.labels[i] = data.labels[i] > 0 ? 1.0 : 0.0;
  TrainOptions<double> opts;
  opts.loss = LossKind::squared_hinge();
  opts.lambda = 0.5;
  opts.iterations = 40;
  opts.block_size = 32;
  const auto ovr = ovr_train(multi, opts);
  const MatrixX<double> scores = ovr.predict_scores(data.to_dense());
  const VectorX<double> pred = ovr.predict(data.to_dense());
  for (Index i = 0; i < data.n; ++i) {
    // model 0 is "class 0 vs rest"; its positive score means class 0
    const double expect = scores(i, 0) >= scores(i, 1) ? 0.0 : 1.0;
    CHECK(pred[i] == expect);
  }
}

}  // TEST_SUITE
