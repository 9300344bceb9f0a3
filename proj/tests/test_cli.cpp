#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "dbcd/data.hpp"
#include "dbcd/metrics.hpp"
#include "dbcd/model_io.hpp"

using namespace dbcd;

namespace {

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("dbcd");
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli::run(int(argv.size()), argv.data());
}

std::string tmp(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Cleanup {
  std::vector<std::string> paths;
  ~Cleanup() {
    for (const auto& p : paths) std::remove(p.c_str());
  }
  const std::string& add(const std::string& p) {
    paths.push_back(p);
    return paths.back();
  }
};

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("metrics used by evaluate") {
  VectorX<double> y(4), s(4);
  y << -1, -1, 1, 1;
  s << 0.1, 0.4, 0.35, 0.8;
  CHECK(auc(y, s) == doctest::Approx(0.75));

  VectorX<double> perfect(4);
  perfect << 0.1, 0.2, 0.7, 0.9;
  CHECK(auc(y, perfect) == doctest::Approx(1.0));

  VectorX<double> tied = VectorX<double>::Constant(4, 0.5);
  CHECK(auc(y, tied) == doctest::Approx(0.5));

  CHECK(rmse(y, y) == 0.0);
  CHECK(relative_error(y, y) == 0.0);
  CHECK(accuracy(y, y) == 1.0);

  VectorX<double> ones = VectorX<double>::Ones(4);
  CHECK_THROWS_AS(auc(ones, s), data_error);
  VectorX<double> empty;
  CHECK_THROWS_AS(rmse(empty, empty), data_error);
}

TEST_CASE("train on the singleton fixture, then predict its own input") {
  Cleanup c;
  const std::string train = c.add(tmp("cli_single.libsvm"));
  std::ofstream(train) << "1 1:0\n";
  const std::string model = c.add(tmp("cli_single.model"));
  const std::string pred = c.add(tmp("cli_single_pred.csv"));

  CHECK(run_cli({"train", train, "--out", model, "--loss", "square", "--lambda", "1",
                 "--sigma", "1", "--iters", "5", "--block-size", "1",
                 "--primal-eval", "full"}) == 0);
  CHECK(run_cli({"predict", model, train, "--out", pred}) == 0);
  const std::string out = slurp(pred);
  CHECK(out.substr(0, 10) == "index,raw\n");
  CHECK(out.find("0,0.5") == 10);  // alpha = (K + I)^{-1} y = 0.5
}

TEST_CASE("zero-iteration training writes a model and a header-only log") {
  Cleanup c;
  auto data = synth_make<double>(SynthKind::linear_regression_noise, 20, 3, 3, 0.1);
  const std::string train = c.add(tmp("cli_t0.libsvm"));
  save_libsvm(data, train);
  const std::string model = c.add(tmp("cli_t0.model"));
  const std::string log = c.add(tmp("cli_t0.log"));
  CHECK(run_cli({"train", train, "--out", model, "--loss", "square", "--sigma-median",
                 "--iters", "0", "--log", log}) == 0);
  const std::string logtext = slurp(log);
  CHECK(logtext ==
        "iteration,wall_seconds,dual_objective,primal_objective,duality_gap,val_loss,"
        "val_metric\n");
  const auto info = inspect_model_file(model);
  CHECK(info.model_count == 1);
  CHECK(info.meta.at("models")[0].at("iterations").get<int>() == 0);
  // the resolved median bandwidth is recorded in the model file
  CHECK(info.meta.at("models")[0].at("kernel").at("sigma").get<double>() > 0.0);
}

TEST_CASE("key=value config file with flag overrides") {
  Cleanup c;
  auto data = synth_make<double>(SynthKind::linear_regression_noise, 30, 2, 31, 0.1);
  const std::string train = c.add(tmp("cli_cfg.libsvm"));
  save_libsvm(data, train);
  const std::string cfg = c.add(tmp("cli_cfg.conf"));
  std::ofstream(cfg) << "loss=huber\ndelta=0.5\nlambda=0.25\nsigma=1.5\niters=8\n";
  const std::string model = c.add(tmp("cli_cfg.model"));
  CHECK(run_cli({"train", train, "--out", model, "--config", cfg}) == 0);
  auto info = inspect_model_file(model);
  CHECK(info.meta.at("models")[0].at("loss").at("family").get<std::string>() == "huber");
  CHECK(info.meta.at("models")[0].at("lambda").get<double>() == 0.25);
  // a flag on the command line overrides the config file value
  CHECK(run_cli({"train", train, "--out", model, "--config", cfg, "--lambda", "2"}) == 0);
  info = inspect_model_file(model);
  CHECK(info.meta.at("models")[0].at("lambda").get<double>() == 2.0);
}

TEST_CASE("predict widens sparse inputs with omitted trailing features") {
  Cleanup c;
  const std::string train = c.add(tmp("cli_wide.libsvm"));
  std::ofstream(train) << "1 1:1 3:1\n-1 1:-1 3:-1\n1 1:2 3:0.5\n-1 2:1 3:-2\n";
  const std::string model = c.add(tmp("cli_wide.model"));
  CHECK(run_cli({"train", train, "--out", model, "--loss", "squared_hinge", "--sigma", "2",
                 "--iters", "10"}) == 0);
  const std::string narrow = c.add(tmp("cli_wide_test.libsvm"));
  std::ofstream(narrow) << "1 1:1\n-1 2:1\n";  // max index 2 < model dim 3
  const std::string pred = c.add(tmp("cli_wide_pred.csv"));
  CHECK(run_cli({"predict", model, narrow, "--out", pred}) == 0);
  std::ifstream in(pred);
  std::string line;
  int rows = -1;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 2);
}

TEST_CASE("the literal CG box rule is reachable and trains") {
  Cleanup c;
  auto data = synth_make<double>(SynthKind::linear_regression_noise, 40, 3, 43, 0.2);
  const std::string train = c.add(tmp("cli_lit.libsvm"));
  save_libsvm(data, train);
  const std::string model = c.add(tmp("cli_lit.model"));
  CHECK(run_cli({"train", train, "--out", model, "--loss", "svr", "--epsilon", "0.2",
                 "--kernel", "laplacian", "--sigma-median", "--iters", "20",
                 "--cg-rule", "literal"}) == 0);
  CHECK(run_cli({"train", train, "--out", model, "--loss", "svr", "--sigma", "1",
                 "--cg-rule", "bogus"}) == 1);
}

TEST_CASE("shipped example configs parse, flags override their values") {
  Cleanup c;
  auto data = synth_make<double>(SynthKind::two_gaussians, 60, 3, 41);
  const std::string train = c.add(tmp("cli_excfg.libsvm"));
  save_libsvm(data, train);
  const std::string model = c.add(tmp("cli_excfg.model"));
  const std::string cfg = std::string(DBCD_SOURCE_DIR) + "/configs/klr-feature-map.conf";
  // the config asks for a large feature map and many iterations; flags shrink
  // the run while keeping the configured loss/lambda/kernel
  CHECK(run_cli({"train", train, "--out", model, "--config", cfg, "--rff-dim", "64",
                 "--iters", "5", "--block-size", "30", "--precision", "double"}) == 0);
  const auto info = inspect_model_file(model);
  CHECK(info.meta.at("models")[0].at("loss").at("family").get<std::string>() == "logistic");
  CHECK(info.meta.at("models")[0].at("lambda").get<double>() == 2.0);
  CHECK(info.meta.at("models")[0].at("kernel").at("family").get<std::string>() == "laplacian");
  CHECK(info.meta.at("models")[0].at("rff").at("M").get<int>() == 64);
  CHECK(info.meta.at("precision").get<std::string>() == "float64");
}

TEST_CASE("non-finite data aborts with the numerical exit code") {
  Cleanup c;
  const std::string train = c.add(tmp("cli_nan.libsvm"));
  std::ofstream(train) << "1 1:nan\n-1 1:0.5\n0.5 1:1\n";
  const std::string model = c.add(tmp("cli_nan.model"));
  CHECK(run_cli({"train", train, "--out", model, "--loss", "square", "--sigma", "1",
                 "--iters", "5"}) == 3);
}

TEST_CASE("determinism: identical runs produce identical model and log bytes") {
  Cleanup c;
  auto data = synth_make<double>(SynthKind::two_gaussians, 120, 4, 5);
  const std::string train = c.add(tmp("cli_det.libsvm"));
  save_libsvm(data, train);
  const std::string m1 = c.add(tmp("cli_det1.model"));
  const std::string m2 = c.add(tmp("cli_det2.model"));
  const std::string l1 = c.add(tmp("cli_det1.log"));
  const std::string l2 = c.add(tmp("cli_det2.log"));
  const std::vector<std::string> base = {
      "train", train, "--loss", "logistic", "--lambda", "0.5", "--mode", "inexact",
      "--sigma-median", "--rff-dim", "64", "--block-size", "32", "--iters", "30",
      "--log-every", "5", "--no-log-walltime", "--seed-partition", "11", "--seed-rff", "12",
      "--seed-split", "13"};
  auto args1 = base;
  args1.insert(args1.end(), {"--out", m1, "--log", l1});
  auto args2 = base;
  args2.insert(args2.end(), {"--out", m2, "--log", l2});
  CHECK(run_cli(args1) == 0);
  CHECK(run_cli(args2) == 0);
  CHECK(slurp(m1) == slurp(m2));
  CHECK(slurp(l1) == slurp(l2));
  CHECK(slurp(m1).size() > 0);
  CHECK(slurp(l1).find("iteration,") == 0);
}

TEST_CASE("log rows respect weak duality and the cadence") {
  Cleanup c;
  auto data = synth_make<double>(SynthKind::linear_regression_noise, 80, 3, 7, 0.2);
  const std::string train = c.add(tmp("cli_log.libsvm"));
  save_libsvm(data, train);
  const std::string model = c.add(tmp("cli_log.model"));
  const std::string log = c.add(tmp("cli_log.log"));
  CHECK(run_cli({"train", train, "--out", model, "--loss", "huber", "--delta", "1",
                 "--lambda", "0.5", "--sigma", "2", "--iters", "19", "--log", log,
                 "--log-every", "4", "--primal-eval", "full", "--no-log-walltime"}) == 0);
  std::ifstream in(log);
  std::string line;
  std::getline(in, line);  // header
  int rows = 0;
  double last_gap = 1e300, last_primal = 0;
  std::string last_iter;
  while (std::getline(in, line)) {
    ++rows;
    std::stringstream ss(line);
    std::string iter, wall, dual, primal, gap;
    std::getline(ss, iter, ',');
    std::getline(ss, wall, ',');
    std::getline(ss, dual, ',');
    std::getline(ss, primal, ',');
    std::getline(ss, gap, ',');
    CHECK(wall.empty());
    const double d = std::stod(dual), p = std::stod(primal);
    CHECK(p >= d - 1e-8 * (1.0 + std::abs(p)));
    CHECK(std::stod(gap) >= -1e-12);
    last_gap = std::stod(gap);
    last_primal = p;
    last_iter = iter;
  }
  CHECK(rows == 5);  // iterations 4, 8, 12, 16, and the final 19
  CHECK(last_iter == "19");
  // converged by the last row on this small instance
  CHECK(last_gap <= 1e-4 * (1.0 + std::abs(last_primal)));
}

TEST_CASE("validation columns and final gap metadata") {
  Cleanup c;
  auto data = synth_make<double>(SynthKind::two_gaussians, 200, 3, 9);
  const auto [tr, te] = train_test_split(data, 0.8, 1);
  const std::string train = c.add(tmp("cli_val_tr.libsvm"));
  const std::string val = c.add(tmp("cli_val_va.libsvm"));
  save_libsvm(tr, train);
  save_libsvm(te, val);
  const std::string model = c.add(tmp("cli_val.model"));
  const std::string log = c.add(tmp("cli_val.log"));
  CHECK(run_cli({"train", train, "--val", val, "--out", model, "--loss", "squared_hinge",
                 "--kernel", "laplacian", "--lambda", "0.25", "--sigma-median", "--iters", "40",
                 "--log", log, "--log-every", "20", "--primal-eval", "full"}) == 0);
  std::ifstream in(log);
  std::string line;
  std::getline(in, line);
  REQUIRE(std::getline(in, line));
  // last two columns are populated
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string tok;
  while (std::getline(ss, tok, ',')) cells.push_back(tok);
  REQUIRE(cells.size() == 7);
  CHECK(!cells[5].empty());
  CHECK(!cells[6].empty());
  CHECK(std::stod(cells[6]) >= 0.9);  // 6-sigma separation classifies easily

  const auto info = inspect_model_file(model);
  CHECK(!info.meta.at("models")[0].at("final_gap").is_null());
}

TEST_CASE("predict: probabilities, contract violations, empty input") {
  Cleanup c;
  auto data = synth_make<double>(SynthKind::two_gaussians, 60, 2, 11);
  const std::string train = c.add(tmp("cli_p.libsvm"));
  save_libsvm(data, train);
  const std::string klr_model = c.add(tmp("cli_p_klr.model"));
  CHECK(run_cli({"train", train, "--out", klr_model, "--loss", "logistic", "--lambda", "1",
                 "--sigma", "2", "--iters", "20", "--block-size", "30"}) == 0);
  const std::string pred = c.add(tmp("cli_p_pred.csv"));
  CHECK(run_cli({"predict", klr_model, train, "--out", pred, "--proba"}) == 0);
  {
    std::ifstream in(pred);
    std::string header;
    std::getline(in, header);
    CHECK(header == "index,raw,probability");
    std::string row;
    std::getline(in, row);
    const auto last = row.rfind(',');
    const double p = std::stod(row.substr(last + 1));
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }

  // regression model asked for probabilities -> data error (exit 2)
  const std::string reg_model = c.add(tmp("cli_p_reg.model"));
  auto reg = synth_make<double>(SynthKind::linear_regression_noise, 30, 2, 13, 0.1);
  const std::string rtrain = c.add(tmp("cli_p_reg.libsvm"));
  save_libsvm(reg, rtrain);
  CHECK(run_cli({"train", rtrain, "--out", reg_model, "--loss", "square", "--sigma", "1",
                 "--iters", "5"}) == 0);
  CHECK(run_cli({"predict", reg_model, rtrain, "--out", pred, "--proba"}) == 2);

  // zero-row input -> header-only output
  const std::string empty_file = c.add(tmp("cli_p_empty.libsvm"));
  std::ofstream(empty_file) << "";
  CHECK(run_cli({"predict", reg_model, empty_file, "--out", pred}) == 0);
  CHECK(slurp(pred) == "index,raw\n");
}

TEST_CASE("evaluate command computes the documented metrics") {
  Cleanup c;
  // build a prediction csv by hand: labels (-,-,+,+), scores (.1,.4,.35,.8)
  const std::string pred = c.add(tmp("cli_e_pred.csv"));
  std::ofstream(pred) << "index,raw,label\n0,0.1,-1\n1,0.4,1\n2,0.35,-1\n3,0.8,1\n";
  const std::string data = c.add(tmp("cli_e_data.libsvm"));
  std::ofstream(data) << "-1 1:0\n-1 1:0\n1 1:0\n1 1:0\n";
  CHECK(run_cli({"evaluate", "--pred", pred, data, "--metrics", "auc,acc"}) == 0);
  CHECK(run_cli({"evaluate", "--pred", pred, data, "--metrics", "rmse,rel"}) == 0);
  CHECK(run_cli({"evaluate", "--pred", pred, data, "--metrics", "nope"}) == 1);

  const std::string short_data = c.add(tmp("cli_e_short.libsvm"));
  std::ofstream(short_data) << "1 1:0\n";
  CHECK(run_cli({"evaluate", "--pred", pred, short_data}) == 2);
}

TEST_CASE("inspect reports metadata; corrupt files and resume are rejected") {
  Cleanup c;
  auto data = synth_make<double>(SynthKind::linear_regression_noise, 25, 2, 17, 0.1);
  const std::string train = c.add(tmp("cli_i.libsvm"));
  save_libsvm(data, train);
  const std::string model = c.add(tmp("cli_i.model"));
  CHECK(run_cli({"train", train, "--out", model, "--loss", "svr", "--epsilon", "0.2",
                 "--sigma", "1.5", "--iters", "5", "--precision", "single"}) == 0);
  CHECK(run_cli({"inspect", model}) == 0);
  // prediction dispatches on the stored precision
  const std::string pred = c.add(tmp("cli_i_pred.csv"));
  CHECK(run_cli({"predict", model, train, "--out", pred}) == 0);
  CHECK(slurp(pred).rfind("index,raw\n", 0) == 0);

  const std::string broken = c.add(tmp("cli_i_broken.model"));
  std::ofstream(broken) << "garbage";
  CHECK(run_cli({"inspect", broken}) == 2);

  CHECK(run_cli({"train", train, "--out", model, "--loss", "square", "--sigma", "1",
                 "--resume"}) == 1);
}

TEST_CASE("usage and data errors map to exit codes") {
  CHECK(run_cli({"train"}) == 1);                             // missing required args
  CHECK(run_cli({"nonsense"}) == 1);                          // unknown subcommand
  CHECK(run_cli({"train", "/does/not/exist", "--out", tmp("x.model"), "--sigma", "1"}) == 2);
  CHECK(run_cli({"--help"}) == 0);
}

TEST_CASE("multiclass csv training via one-vs-rest") {
  Cleanup c;
  const std::string train = c.add(tmp("cli_ovr.csv"));
  {
    std::ofstream out(train);
    out << "f1,f2,class\n";
    Rng rng(19);
    for (int i = 0; i < 90; ++i) {
      const int cls = i % 3;
      out << 5.0 * cls + 0.3 * rng.normal() << "," << 0.3 * rng.normal() << "," << cls << "\n";
    }
  }
  const std::string model = c.add(tmp("cli_ovr.model"));
  const std::string pred = c.add(tmp("cli_ovr_pred.csv"));
  CHECK(run_cli({"train", train, "--out", model, "--loss", "squared_hinge", "--lambda", "0.5",
                 "--sigma-median", "--iters", "30", "--block-size", "30"}) == 0);
  const auto info = inspect_model_file(model);
  CHECK(info.model_count == 3);
  CHECK(run_cli({"predict", model, train, "--out", pred}) == 0);
  CHECK(run_cli({"evaluate", "--pred", pred, train, "--metrics", "acc"}) == 0);

  // accuracy should be essentially perfect on these clusters
  const auto preds = slurp(pred);
  std::stringstream ss(preds);
  std::string line;
  std::getline(ss, line);
  CHECK(line.rfind("index,label,score_", 0) == 0);
  const auto data = load_csv<double>(train, -1);
  Index i = 0, correct = 0;
  while (std::getline(ss, line) && !line.empty()) {
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    const double lab = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
    correct += lab == data.labels[i];
    ++i;
  }
  CHECK(i == data.n);
  CHECK(double(correct) / double(i) >= 0.95);
}

TEST_CASE("lambda grid selects a model by the validation metric") {
  Cleanup c;
  auto data = synth_make<double>(SynthKind::linear_regression_noise, 60, 3, 23, 0.1);
  const auto [tr, te] = train_test_split(data, 0.8, 2);
  const std::string train = c.add(tmp("cli_grid_tr.libsvm"));
  const std::string val = c.add(tmp("cli_grid_va.libsvm"));
  save_libsvm(tr, train);
  save_libsvm(te, val);
  const std::string model = c.add(tmp("cli_grid.model"));
  CHECK(run_cli({"train", train, "--val", val, "--out", model, "--loss", "square",
                 "--sigma", "1.5", "--iters", "10", "--lambda-grid"}) == 0);
  CHECK(inspect_model_file(model).model_count == 1);
  // grid without a validation set is a usage error
  CHECK(run_cli({"train", train, "--out", model, "--loss", "square", "--sigma", "1.5",
                 "--lambda-grid"}) == 1);
}

TEST_CASE("the installed binary behaves like the library entry point") {
  const char* bin = std::getenv("DBCD_CLI");
  if (!bin) return;  // only wired up under ctest
  Cleanup c;
  auto data = synth_make<double>(SynthKind::linear_regression_noise, 30, 2, 29, 0.1);
  const std::string train = c.add(tmp("cli_bin.libsvm"));
  save_libsvm(data, train);
  const std::string model = c.add(tmp("cli_bin.model"));
  const std::string cmd = std::string(bin) + " train " + train + " --out " + model +
                          " --loss square --sigma 1 --iters 5 > /dev/null 2>&1";
  CHECK(std::system(cmd.c_str()) == 0);
  CHECK(std::filesystem::exists(model));
  const std::string bad = std::string(bin) + " train > /dev/null 2>&1";
  CHECK(WEXITSTATUS(std::system(bad.c_str())) == 1);
}

}  // TEST_SUITE
