#include "kan/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace kan {

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

int argmax_row(const Tensor& logits, int row) {
  const int classes = logits.dim(1);
  int best = 0;
  double best_v = logits[static_cast<std::int64_t>(row) * classes];
  for (int c = 1; c < classes; ++c) {
    const double v = logits[static_cast<std::int64_t>(row) * classes + c];
    if (v > best_v) {  // strict: ties keep the lowest index
      best_v = v;
      best = c;
    }
  }
  return best;
}

// Runs up to max_images training images forward and hands every spline
// layer the inputs it saw, so knots track the activation distribution.
void refresh_grids(Model& model, const std::vector<LabeledImage>& train, int max_images) {
  const auto kls = model.kan_layers();
  if (kls.empty() || train.empty()) return;
  const int total = std::min<int>(max_images, static_cast<int>(train.size()));

  std::vector<std::vector<double>> collected(kls.size());
  std::vector<int> widths(kls.size(), 0);
  constexpr int kChunk = 64;  // keeps intermediate activations small
  for (int start = 0; start < total; start += kChunk) {
    const int count = std::min(kChunk, total - start);
    const Tensor& first = train[0].pixels;
    std::vector<int> shape = {count};
    for (int d = 0; d < first.ndim(); ++d) shape.push_back(first.dim(d));
    Tensor images(shape);
    const std::int64_t stride = first.numel();
    for (int i = 0; i < count; ++i) {
      const Tensor& px = train[static_cast<std::size_t>(start + i)].pixels;
      std::copy(px.data.begin(), px.data.end(),
                images.data.begin() + static_cast<std::ptrdiff_t>(i * stride));
    }
    Tape tape;
    std::vector<Tensor> kan_inputs;
    model.forward(tape, tape.input(std::move(images)), &kan_inputs);
    for (std::size_t li = 0; li < kls.size(); ++li) {
      const Tensor& t = kan_inputs[li];
      widths[li] = t.dim(1);
      collected[li].insert(collected[li].end(), t.data.begin(), t.data.end());
    }
  }
  for (std::size_t li = 0; li < kls.size(); ++li) {
    const int rows = static_cast<int>(collected[li].size()) / widths[li];
    kls[li]->update_grids(Tensor({rows, widths[li]}, std::move(collected[li])));
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("config: epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("config: lr must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("config: betas must lie in (0, 1)");
  }
  if (!(eps > 0.0)) throw std::invalid_argument("config: eps must be positive");
  if (grid_update_samples < 1) {
    throw std::invalid_argument("config: grid_update_samples must be >= 1");
  }
  if (repeats < 1) throw std::invalid_argument("config: repeats must be >= 1");
}

Adam::Adam(std::vector<Parameter*> params, const TrainConfig& config)
    : params_(std::move(params)),
      lr_(config.lr),
      beta1_(config.beta1),
      beta2_(config.beta2),
      eps_(config.eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (Parameter* p : params_) {
    m_.emplace_back(p->value.shape);
    v_.emplace_back(p->value.shape);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    Parameter& p = *params_[pi];
    Tensor& m = m_[pi];
    Tensor& v = v_[pi];
    if (!same_shape(p.value, m)) {
      throw std::invalid_argument("adam_step: parameter \"" + p.name + "\" changed shape");
    }
    for (std::int64_t i = 0; i < p.value.numel(); ++i) {
      const double g = p.grad[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p.value[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

double evaluate(Model& model, const std::vector<LabeledImage>& images) {
  if (images.empty()) throw std::invalid_argument("evaluate: empty image set");
  constexpr int kChunk = 64;
  int correct = 0;
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const int count = static_cast<int>(std::min<std::size_t>(kChunk, images.size() - start));
    const Tensor& first = images[0].pixels;
    std::vector<int> shape = {count};
    for (int d = 0; d < first.ndim(); ++d) shape.push_back(first.dim(d));
    Tensor batch(shape);
    const std::int64_t stride = first.numel();
    for (int i = 0; i < count; ++i) {
      const Tensor& px = images[start + static_cast<std::size_t>(i)].pixels;
      std::copy(px.data.begin(), px.data.end(),
                batch.data.begin() + static_cast<std::ptrdiff_t>(i * stride));
    }
    const Tensor logits = forward_classify(model, batch);
    for (int i = 0; i < count; ++i) {
      if (argmax_row(logits, i) == images[start + static_cast<std::size_t>(i)].label) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(images.size());
}

TrainResult train_model(const ModelSpec& spec, const DatasetSplit& split,
                        const TrainConfig& config,
                        const std::function<void(const EpochMetrics&)>& on_epoch) {
  config.validate();
  const auto t0 = std::chrono::steady_clock::now();

  TrainResult result;
  result.model = build_model(spec, config.seed);
  Model& model = result.model;

  RunReport& report = result.report;
  report.model = to_string(spec.name);
  report.seed = config.seed;
  report.param_count = model.param_count();

  Adam adam(model.trainable_parameters(), config);
  const auto trainable = model.trainable_parameters();

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    // Grid refresh happens at the top of epochs 5, 10, ..., 50, then the
    // knots stay frozen for the rest of the run.
    if (config.grid_update && epoch > 0 && epoch <= 50 && epoch % 5 == 0) {
      refresh_grids(model, split.train, config.grid_update_samples);
    }

    double loss_sum = 0.0;
    std::int64_t seen = 0;
    std::int64_t correct = 0;
    const std::vector<Batch> batches = batch_iter(split.train, config.batch_size, config.seed, epoch);
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const Batch& batch = batches[bi];
      const int count = static_cast<int>(batch.labels.size());
      Tape tape;
      const int x = tape.input(batch.images);
      const int logits = model.forward(tape, x);
      const int loss_id = tape.softmax_cross_entropy(logits, batch.labels);
      const double loss = tape.value(loss_id).data[0];
      if (!std::isfinite(loss)) {
        throw std::runtime_error("train_model: non-finite loss at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(bi) + " (diverged)");
      }
      for (Parameter* p : trainable) p->zero_grad();
      tape.backward(loss_id);
      adam.step();

      loss_sum += loss * count;
      seen += count;
      const Tensor& lv = tape.value(logits);
      for (int i = 0; i < count; ++i) {
        if (argmax_row(lv, i) == batch.labels[static_cast<std::size_t>(i)]) ++correct;
      }
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.train_loss = seen > 0 ? loss_sum / static_cast<double>(seen) : 0.0;
    em.train_acc = seen > 0 ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
    em.val_acc = evaluate(model, split.val);
    report.epochs.push_back(em);
    if (on_epoch) on_epoch(em);
  }

  report.test_accuracy = evaluate(model, split.test);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

std::vector<AggregateRow> benchmark(const std::vector<ModelSpec>& specs,
                                    const DatasetSplit& split, const TrainConfig& config,
                                    std::vector<RunReport>* reports,
                                    const std::function<void(TrainResult&)>& on_run) {
  config.validate();
  std::vector<AggregateRow> rows;
  for (const ModelSpec& spec : specs) {
    AggregateRow row;
    row.model = to_string(spec.name);
    double seconds_sum = 0.0;
    for (int r = 0; r < config.repeats; ++r) {
      TrainConfig run_cfg = config;
      run_cfg.seed = config.seed + static_cast<std::uint64_t>(r);
      TrainResult res = train_model(spec, split, run_cfg);
      row.accuracies.push_back(res.report.test_accuracy);
      seconds_sum += res.report.wall_seconds;
      row.param_count = res.report.param_count;
      if (on_run) on_run(res);
      if (reports != nullptr) reports->push_back(std::move(res.report));
    }
    const int n = static_cast<int>(row.accuracies.size());
    double mean = 0.0;
    for (double a : row.accuracies) mean += a;
    mean /= n;
    row.mean_acc = mean;
    if (n > 1) {
      double ss = 0.0;
      for (double a : row.accuracies) ss += (a - mean) * (a - mean);
      row.std_acc = std::sqrt(ss / (n - 1));
    } else {
      row.std_acc = 0.0;
    }
    row.mean_seconds = seconds_sum / n;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_aggregate_row(const AggregateRow& row) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%s, %.3f +/- %.3f, %.1f, %lld", row.model.c_str(),
                row.mean_acc, row.std_acc, row.mean_seconds,
                static_cast<long long>(row.param_count));
  return buf;
}

void write_metrics_csv(const std::string& path, const RunReport& report) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("write_metrics_csv: cannot open " + path);
  f << "epoch,train_loss,train_acc,val_acc\n";
  for (const EpochMetrics& em : report.epochs) {
    f << em.epoch << "," << fmt17(em.train_loss) << "," << fmt17(em.train_acc) << ","
      << fmt17(em.val_acc) << "\n";
  }
  if (!f) throw std::runtime_error("write_metrics_csv: write failed for " + path);
}

namespace {

nlohmann::json report_to_json(const RunReport& report) {
  nlohmann::json j;
  j["model"] = report.model;
  j["seed"] = report.seed;
  j["param_count"] = report.param_count;
  j["test_accuracy"] = report.test_accuracy;
  j["wall_seconds"] = report.wall_seconds;
  j["epochs"] = nlohmann::json::array();
  for (const EpochMetrics& em : report.epochs) {
    j["epochs"].push_back({{"epoch", em.epoch},
                           {"train_loss", em.train_loss},
                           {"train_acc", em.train_acc},
                           {"val_acc", em.val_acc}});
  }
  return j;
}

}  // namespace

void write_report_json(const std::string& path, const RunReport& report) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("write_report_json: cannot open " + path);
  f << report_to_json(report).dump(2) << "\n";
  if (!f) throw std::runtime_error("write_report_json: write failed for " + path);
}

void write_aggregate_csv(const std::string& path, const std::vector<AggregateRow>& rows) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("write_aggregate_csv: cannot open " + path);
  f << "model,mean_test_acc,std_test_acc,mean_seconds,params\n";
  for (const AggregateRow& row : rows) {
    f << row.model << "," << fmt17(row.mean_acc) << "," << fmt17(row.std_acc) << ","
      << fmt17(row.mean_seconds) << "," << row.param_count << "\n";
  }
  if (!f) throw std::runtime_error("write_aggregate_csv: write failed for " + path);
}

void write_aggregate_json(const std::string& path, const std::vector<AggregateRow>& rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const AggregateRow& row : rows) {
    j.push_back({{"model", row.model},
                 {"mean_test_acc", row.mean_acc},
                 {"std_test_acc", row.std_acc},
                 {"mean_seconds", row.mean_seconds},
                 {"params", row.param_count},
                 {"accuracies", row.accuracies}});
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("write_aggregate_json: cannot open " + path);
  f << j.dump(2) << "\n";
  if (!f) throw std::runtime_error("write_aggregate_json: write failed for " + path);
}

}  // namespace kan
