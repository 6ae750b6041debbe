#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "kan/data.hpp"
#include "kan/model.hpp"

namespace kan {

struct TrainConfig {
  int epochs = 100;
  int batch_size = 32;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  bool grid_update = true;       // refresh spline grids during training
  int grid_update_samples = 256; // max train images used per refresh
  int repeats = 10;              // benchmark re-runs per model

  void validate() const;  // throws std::invalid_argument
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
};

struct RunReport {
  std::string model;
  std::uint64_t seed = 0;
  std::int64_t param_count = 0;
  std::vector<EpochMetrics> epochs;
  double test_accuracy = 0.0;
  double wall_seconds = 0.0;
};

/// Bias-corrected Adam over a fixed parameter set. step() consumes whatever
/// is in each Parameter's grad buffer; zeroing between steps is the caller's
/// job.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, const TrainConfig& config);

  void step();

  int steps_taken() const { return t_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  double lr_, beta1_, beta2_, eps_;
  int t_ = 0;
};

/// Fraction of images whose argmax logit matches the label; ties break to
/// the lowest class index. Throws on an empty set.
double evaluate(Model& model, const std::vector<LabeledImage>& images);

struct TrainResult {
  Model model;
  RunReport report;
};

/// Builds the model from (spec, config.seed) and runs the full loop:
/// per epoch, shuffled batches -> forward -> loss -> backward -> adam step,
/// with spline-grid refreshes at epochs 5, 10, ..., 50 when enabled.
/// Deterministic in config.seed except for wall_seconds. Throws on
/// non-finite loss. on_epoch (optional) observes each finished epoch.
TrainResult train_model(const ModelSpec& spec, const DatasetSplit& split,
                        const TrainConfig& config,
                        const std::function<void(const EpochMetrics&)>& on_epoch = {});

struct AggregateRow {
  std::string model;
  double mean_acc = 0.0;
  double std_acc = 0.0;  // sample (n-1) standard deviation; 0.0 for one run
  double mean_seconds = 0.0;
  std::int64_t param_count = 0;
  std::vector<double> accuracies;  // per-repeat values, in seed order
};

/// Runs every spec with seeds config.seed + 0 .. repeats-1 and aggregates
/// test accuracy. Per-run reports are appended to *reports when given;
/// on_run (optional) observes each finished run (e.g. to save checkpoints).
std::vector<AggregateRow> benchmark(const std::vector<ModelSpec>& specs,
                                    const DatasetSplit& split, const TrainConfig& config,
                                    std::vector<RunReport>* reports = nullptr,
                                    const std::function<void(TrainResult&)>& on_run = {});

/// "name, 0.930 +/- 0.032, 12.3, 77080"
std::string format_aggregate_row(const AggregateRow& row);

// Writers print doubles with %.17g so files round-trip exactly.
void write_metrics_csv(const std::string& path, const RunReport& report);
void write_report_json(const std::string& path, const RunReport& report);
void write_aggregate_csv(const std::string& path, const std::vector<AggregateRow>& rows);
void write_aggregate_json(const std::string& path, const std::vector<AggregateRow>& rows);

}  // namespace kan
