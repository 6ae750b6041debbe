#include "kan/train.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "kan/gradcheck.hpp"
#include "kan/rng.hpp"

using namespace kan;
namespace fs = std::filesystem;

namespace {

ModelSpec spec_of(ModelName name, std::array<int, 3> shape, int classes) {
  ModelSpec s;
  s.name = name;
  s.input_shape = shape;
  s.n_classes = classes;
  return s;
}

// Trivially separable two-class set: class 0 is bright-left/dark-right,
// class 1 the mirror image.
LabeledImage make_blob(int label, int index, Rng& rng) {
  LabeledImage im;
  im.label = label;
  im.source_id = "blob_" + std::to_string(label) + "_" + std::to_string(index);
  im.pixels = Tensor({1, 8, 8});
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      const bool left = x < 4;
      const double sign = (left == (label == 0)) ? 1.0 : -1.0;
      im.pixels[y * 8 + x] = sign * 0.8 + rng.uniform(-0.1, 0.1);
    }
  }
  return im;
}

DatasetSplit blob_split() {
  Rng rng(55);
  DatasetSplit split;
  split.class_names = {"left_bright", "right_bright"};
  for (int label = 0; label < 2; ++label) {
    for (int i = 0; i < 30; ++i) split.train.push_back(make_blob(label, i, rng));
    for (int i = 0; i < 5; ++i) split.val.push_back(make_blob(label, 100 + i, rng));
    for (int i = 0; i < 5; ++i) split.test.push_back(make_blob(label, 200 + i, rng));
  }
  return split;
}

DatasetSplit small_synth_split(std::uint64_t seed) {
  const std::vector<LabeledImage> images = generate_synthetic(10, 16, 16, seed);
  return stratified_split(images, synthetic_class_names(), 0.8, 0.1, seed);
}

std::string temp_path(const std::string& name) {
  return (fs::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.epochs = -1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.lr = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.beta1 = 1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.repeats = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("adam first step is lr * g / (|g| + eps)") {
  TrainConfig cfg;
  cfg.lr = 1e-3;
  Parameter p(Tensor({3}, {1.0, -2.0, 0.5}), "p");
  Adam adam({&p}, cfg);
  p.grad = Tensor({3}, {1.0, -0.5, 0.0});
  adam.step();
  CHECK(std::abs(p.value[0] - (1.0 - cfg.lr * 1.0 / (1.0 + cfg.eps))) < 1e-18);
  CHECK(std::abs(p.value[1] - (-2.0 + cfg.lr * 0.5 / (0.5 + cfg.eps))) < 1e-18);
  CHECK(p.value[2] == 0.5);  // zero gradient: exactly no movement
  CHECK(adam.steps_taken() == 1);
}

TEST_CASE("adam matches an independent scalar trace") {
  // Reference implementation of the update rule, kept deliberately separate
  // from the library's loops.
  TrainConfig cfg;
  cfg.lr = 0.1;
  double w = 3.0;
  double m = 0.0, v = 0.0;
  Parameter p(Tensor::scalar(3.0), "w");
  Adam adam({&p}, cfg);

  for (int t = 1; t <= 3; ++t) {
    const double g = 2.0 * w;  // d/dw of w^2
    m = cfg.beta1 * m + (1 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1 - cfg.beta2) * g * g;
    const double mhat = m / (1 - std::pow(cfg.beta1, t));
    const double vhat = v / (1 - std::pow(cfg.beta2, t));
    w -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);

    p.grad[0] = 2.0 * p.value[0];
    adam.step();
    CHECK(std::abs(p.value[0] - w) < 1e-12);
  }
}

TEST_CASE("adam rejects a reshaped parameter") {
  TrainConfig cfg;
  Parameter p(Tensor({2}), "p");
  Adam adam({&p}, cfg);
  p.value = Tensor({3});
  p.grad = Tensor({3});
  CHECK_THROWS_AS(adam.step(), std::invalid_argument);
}

TEST_CASE("evaluate breaks argmax ties toward class zero") {
  // Fresh linear model: weights random, bias zero. Zeroing the weights makes
  // every logit zero, so every tie resolves to class 0.
  Model m = build_model(spec_of(ModelName::kSingleLayerLinearNet, {1, 8, 8}, 2), 1);
  m.parameters()[0]->value.fill(0.0);
  const DatasetSplit split = blob_split();
  const double acc = evaluate(m, split.test);
  CHECK(acc == 0.5);  // exactly the class-0 fraction
  CHECK_THROWS_AS(evaluate(m, {}), std::invalid_argument);
}

TEST_CASE("zero epochs still reports a test accuracy") {
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.seed = 9;
  const DatasetSplit split = blob_split();
  const TrainResult res =
      train_model(spec_of(ModelName::kSingleLayerLinearNet, {1, 8, 8}, 2), split, cfg);
  CHECK(res.report.epochs.empty());
  CHECK(res.report.test_accuracy >= 0.0);
  CHECK(res.report.test_accuracy <= 1.0);
  CHECK(res.report.param_count == 130);  // 2 * (64 + 1)
  CHECK(res.report.wall_seconds >= 0.0);
}

TEST_CASE("linear model solves separable blobs") {
  TrainConfig cfg;
  cfg.epochs = 12;
  cfg.batch_size = 8;
  cfg.lr = 1e-2;
  cfg.seed = 4;
  const DatasetSplit split = blob_split();
  const TrainResult res =
      train_model(spec_of(ModelName::kSingleLayerLinearNet, {1, 8, 8}, 2), split, cfg);
  REQUIRE(res.report.epochs.size() == 12);
  CHECK(res.report.epochs.back().train_acc == 1.0);
  CHECK(res.report.test_accuracy == 1.0);
  // Loss went down over training.
  CHECK(res.report.epochs.back().train_loss < res.report.epochs.front().train_loss);
}

TEST_CASE("training aborts on divergence instead of looping on NaN") {
  DatasetSplit split;
  split.class_names = {"a", "b"};
  LabeledImage im;
  im.label = 0;
  im.source_id = "huge";
  // NaN pixels poison the first forward pass, standing in for a diverged run.
  im.pixels = Tensor::full({1, 8, 8}, std::numeric_limits<double>::quiet_NaN());
  split.train = {im, im};
  split.val = {im};
  split.test = {im};
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 2;
  try {
    train_model(spec_of(ModelName::kSingleLayerLinearNet, {1, 8, 8}, 2), split, cfg);
    FAIL("expected throw");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("non-finite") != std::string::npos);
  }
}

TEST_CASE("training is deterministic apart from wall time") {
  const DatasetSplit split = small_synth_split(1);
  TrainConfig cfg;
  cfg.epochs = 6;  // crosses the epoch-5 grid refresh
  cfg.batch_size = 8;
  cfg.seed = 5;
  const ModelSpec spec = spec_of(ModelName::kTwoLayerConvKAN, {1, 16, 16}, 6);

  TrainResult a = train_model(spec, split, cfg);
  TrainResult b = train_model(spec, split, cfg);

  REQUIRE(a.report.epochs.size() == b.report.epochs.size());
  for (std::size_t i = 0; i < a.report.epochs.size(); ++i) {
    CHECK(a.report.epochs[i].train_loss == b.report.epochs[i].train_loss);
    CHECK(a.report.epochs[i].train_acc == b.report.epochs[i].train_acc);
    CHECK(a.report.epochs[i].val_acc == b.report.epochs[i].val_acc);
  }
  CHECK(a.report.test_accuracy == b.report.test_accuracy);

  const auto params_of = [](Model& m) {
    std::vector<double> v;
    for (Parameter* p : m.parameters()) v.insert(v.end(), p->value.data.begin(), p->value.data.end());
    return v;
  };
  const std::vector<double> pa = params_of(a.model);
  const std::vector<double> pb = params_of(b.model);
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i] == pb[i]);
}

TEST_CASE("benchmark aggregates match recomputation from its reports") {
  const DatasetSplit split = small_synth_split(2);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 16;
  cfg.seed = 30;
  cfg.repeats = 2;
  std::vector<RunReport> reports;
  const std::vector<AggregateRow> rows =
      benchmark({spec_of(ModelName::kSingleLayerLinearNet, {1, 16, 16}, 6)}, split, cfg, &reports);

  REQUIRE(rows.size() == 1);
  REQUIRE(reports.size() == 2);
  CHECK(reports[0].seed == 30);
  CHECK(reports[1].seed == 31);
  const AggregateRow& row = rows[0];
  CHECK(row.model == "SingleLayerLinearNet");
  REQUIRE(row.accuracies.size() == 2);
  CHECK(row.accuracies[0] == reports[0].test_accuracy);
  CHECK(row.accuracies[1] == reports[1].test_accuracy);
  CHECK(row.param_count == reports[0].param_count);

  double mean = 0.0;
  for (double a : row.accuracies) mean += a;
  mean /= 2.0;
  double ss = 0.0;
  for (double a : row.accuracies) ss += (a - mean) * (a - mean);
  CHECK(std::abs(row.mean_acc - mean) < 1e-15);
  CHECK(std::abs(row.std_acc - std::sqrt(ss)) < 1e-15);  // n-1 == 1
  CHECK(row.mean_seconds > 0.0);
}

TEST_CASE("single repeat reports zero spread") {
  const DatasetSplit split = blob_split();
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 16;
  cfg.repeats = 1;
  const std::vector<AggregateRow> rows =
      benchmark({spec_of(ModelName::kSingleLayerLinearNet, {1, 8, 8}, 2)}, split, cfg);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].std_acc == 0.0);
}

TEST_CASE("aggregate row formatting") {
  AggregateRow row;
  row.model = "DemoNet";
  row.mean_acc = 0.93;
  row.std_acc = 0.0316;
  row.mean_seconds = 12.34;
  row.param_count = 77080;
  CHECK(format_aggregate_row(row) == "DemoNet, 0.930 +/- 0.032, 12.3, 77080");
}

TEST_CASE("metrics csv round trips doubles exactly") {
  RunReport report;
  report.model = "DemoNet";
  EpochMetrics em;
  em.epoch = 0;
  em.train_loss = 1.0 / 3.0;
  em.train_acc = 2.0 / 7.0;
  em.val_acc = 0.125;
  report.epochs.push_back(em);

  const std::string path = temp_path("kan_test_metrics.csv");
  write_metrics_csv(path, report);
  std::ifstream in(path);
  std::string header, line;
  REQUIRE(std::getline(in, header));
  CHECK(header == "epoch,train_loss,train_acc,val_acc");
  REQUIRE(std::getline(in, line));
  std::stringstream ss(line);
  std::string field;
  std::getline(ss, field, ',');
  CHECK(field == "0");
  std::getline(ss, field, ',');
  CHECK(std::strtod(field.c_str(), nullptr) == 1.0 / 3.0);
  std::getline(ss, field, ',');
  CHECK(std::strtod(field.c_str(), nullptr) == 2.0 / 7.0);
  std::getline(ss, field, ',');
  CHECK(std::strtod(field.c_str(), nullptr) == 0.125);
  std::remove(path.c_str());
}

TEST_CASE("report json carries the run") {
  RunReport report;
  report.model = "DemoNet";
  report.seed = 17;
  report.param_count = 42;
  report.test_accuracy = 0.875;
  report.wall_seconds = 1.5;
  EpochMetrics em;
  em.epoch = 0;
  em.train_loss = 0.75;
  em.train_acc = 0.5;
  em.val_acc = 0.25;
  report.epochs.push_back(em);

  const std::string path = temp_path("kan_test_report.json");
  write_report_json(path, report);
  std::ifstream in(path);
  const nlohmann::json j = nlohmann::json::parse(in);
  CHECK(j.at("model") == "DemoNet");
  CHECK(j.at("seed") == 17);
  CHECK(j.at("param_count") == 42);
  CHECK(j.at("test_accuracy") == 0.875);
  CHECK(j.at("epochs").size() == 1);
  CHECK(j.at("epochs")[0].at("val_acc") == 0.25);
  std::remove(path.c_str());
}

TEST_CASE("aggregate writers agree with each other") {
  AggregateRow row;
  row.model = "DemoNet";
  row.mean_acc = 1.0 / 3.0;
  row.std_acc = 1.0 / 7.0;
  row.mean_seconds = 2.5;
  row.param_count = 130;
  row.accuracies = {0.25, 0.5};

  const std::string csv_path = temp_path("kan_test_agg.csv");
  const std::string json_path = temp_path("kan_test_agg.json");
  write_aggregate_csv(csv_path, {row});
  write_aggregate_json(json_path, {row});

  std::ifstream jin(json_path);
  const nlohmann::json j = nlohmann::json::parse(jin);
  REQUIRE(j.size() == 1);
  CHECK(j[0].at("mean_test_acc") == 1.0 / 3.0);
  CHECK(j[0].at("std_test_acc") == 1.0 / 7.0);
  CHECK(j[0].at("accuracies").get<std::vector<double>>() == std::vector<double>{0.25, 0.5});

  std::ifstream cin_(csv_path);
  std::string header, line;
  REQUIRE(std::getline(cin_, header));
  CHECK(header == "model,mean_test_acc,std_test_acc,mean_seconds,params");
  REQUIRE(std::getline(cin_, line));
  std::stringstream ss(line);
  std::string field;
  std::getline(ss, field, ',');
  CHECK(field == "DemoNet");
  std::getline(ss, field, ',');
  CHECK(std::strtod(field.c_str(), nullptr) == j[0].at("mean_test_acc").get<double>());
  std::getline(ss, field, ',');
  CHECK(std::strtod(field.c_str(), nullptr) == j[0].at("std_test_acc").get<double>());
  std::remove(csv_path.c_str());
  std::remove(json_path.c_str());
}

TEST_CASE("finite difference suite passes end to end") {
  const std::vector<GradCheckResult> results = run_gradcheck(42);
  CHECK(all_passed(results));
  bool saw_kan = false;
  for (const GradCheckResult& r : results) {
    INFO(r.name << " max_rel_err=" << r.max_rel_err);
    CHECK(r.passed);
    saw_kan |= (r.name == "kan_linear");
  }
  CHECK(saw_kan);
}
