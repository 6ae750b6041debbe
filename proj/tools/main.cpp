// Command-line front end: dataset generation, training, evaluation,
// parameter counting, gradient self-check, and multi-seed benchmarks.
//
// Exit codes: 0 success, 2 usage/validation error, 1 runtime failure.
// Every run echoes its effective configuration as one "config: {...}" line
// and, when it owns an output directory, saves the same JSON beside the
// results so the run is reproducible from its artifacts.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "kan/data.hpp"
#include "kan/gradcheck.hpp"
#include "kan/model.hpp"
#include "kan/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Values from --config FILE sit between built-in defaults and explicit
// flags: an absent flag takes the file's value, a present flag wins.
class ConfigFile {
 public:
  void load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::invalid_argument("config file " + path + " cannot be opened");
    try {
      j_ = json::parse(f);
    } catch (const json::exception& e) {
      throw std::invalid_argument("config file " + path + " is not valid JSON: " + e.what());
    }
    if (!j_.is_object()) throw std::invalid_argument("config file " + path + " must hold an object");
  }

  template <typename T>
  T get(const std::string& key, T fallback) const {
    if (!j_.contains(key)) return fallback;
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw std::invalid_argument("config file key \"" + key + "\" has the wrong type");
    }
  }

  const json& raw() const { return j_; }

 private:
  json j_ = json::object();
};

std::vector<int> parse_dims(const std::string& text, std::size_t want, const char* flag) {
  std::vector<int> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t next = text.find('x', pos);
    const std::string part = text.substr(pos, next == std::string::npos ? next : next - pos);
    try {
      std::size_t used = 0;
      const int v = std::stoi(part, &used);
      if (used != part.size() || v < 1) throw std::invalid_argument("");
      out.push_back(v);
    } catch (...) {
      throw std::invalid_argument(std::string(flag) + " expects positive integers like 1x64x64, got \"" +
                                  text + "\"");
    }
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  if (out.size() != want) {
    throw std::invalid_argument(std::string(flag) + " expects " + std::to_string(want) +
                                " dimensions, got \"" + text + "\"");
  }
  return out;
}

void echo_and_save_config(const json& cfg, const std::string& save_dir) {
  std::cout << "config: " << cfg.dump() << "\n";
  if (!save_dir.empty()) {
    fs::create_directories(save_dir);
    std::ofstream f(fs::path(save_dir) / "config.json", std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write config.json under " + save_dir);
    f << cfg.dump(2) << "\n";
  }
}

// Applies an optional nested "kan" object plus hidden-width keys from the
// config file, then the explicit flag values on top.
kan::ModelSpec make_model_spec(const ConfigFile& file, const std::string& model_name,
                               const std::vector<int>& input, int n_classes) {
  kan::ModelSpec spec = kan::ModelSpec::from_json(file.raw().dump());
  spec.name = kan::parse_model_name(model_name);
  spec.input_shape = {input[0], input[1], input[2]};
  spec.n_classes = n_classes;
  return spec;
}

json model_spec_json(const kan::ModelSpec& spec) { return json::parse(spec.to_json()); }

struct RunWriter {
  fs::path dir;

  explicit RunWriter(const fs::path& base, const std::string& model, std::uint64_t seed) {
    dir = base / (model + "_seed" + std::to_string(seed));
    fs::create_directories(dir);
  }

  void save(kan::TrainResult& result, const json& cfg) const {
    std::ofstream c(dir / "config.json", std::ios::trunc);
    c << cfg.dump(2) << "\n";
    kan::write_report_json((dir / "report.json").string(), result.report);
    kan::write_metrics_csv((dir / "metrics.csv").string(), result.report);
    kan::save_checkpoint(result.model, (dir / "checkpoint.bin").string());
  }
};

int cmd_synth_gen(const std::string& out, int per_class, const std::string& size,
                  std::uint64_t seed) {
  const std::vector<int> hw = parse_dims(size, 2, "--size");
  const json cfg = {{"subcommand", "synth-gen"}, {"out", out},   {"per_class", per_class},
                    {"size", size},              {"seed", seed}};
  echo_and_save_config(cfg, out);
  const auto images = kan::generate_synthetic(per_class, hw[0], hw[1], seed);
  kan::write_synthetic_tree(out, images, kan::synthetic_class_names());
  std::cout << "wrote " << images.size() << " images (" << per_class << " per class) to " << out
            << "\n";
  return 0;
}

int cmd_params(const ConfigFile& file, const std::string& model, const std::string& input,
               int classes) {
  const std::vector<int> in = parse_dims(input, 3, "--input");
  kan::ModelSpec spec = make_model_spec(file, model, in, classes);
  const json cfg = {{"subcommand", "params"}, {"model", model_spec_json(spec)}};
  echo_and_save_config(cfg, "");
  kan::Model m = kan::build_model(spec, 0);
  std::cout << m.param_count() << "\n";
  return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
  const json cfg = {{"subcommand", "gradcheck"}, {"seed", seed}};
  echo_and_save_config(cfg, "");
  const auto results = kan::run_gradcheck(seed);
  for (const auto& r : results) {
    std::printf("%-28s max_rel_err=%-12.3g %s\n", r.name.c_str(), r.max_rel_err,
                r.passed ? "PASS" : "FAIL");
  }
  const bool ok = kan::all_passed(results);
  std::cout << (ok ? "gradcheck: all passed" : "gradcheck: FAILURES above") << "\n";
  return ok ? 0 : 1;
}

int cmd_train(const ConfigFile& file, const std::string& model, const std::string& data,
              const std::string& input, int epochs, int batch, double lr, std::uint64_t seed,
              bool grid_update, const std::string& out) {
  const std::vector<int> in = parse_dims(input, 3, "--input");

  kan::TrainConfig tc;
  tc.epochs = epochs;
  tc.batch_size = batch;
  tc.lr = lr;
  tc.seed = seed;
  tc.grid_update = grid_update;
  tc.repeats = 1;
  tc.validate();

  const kan::ImageFolder folder = kan::load_image_folder(data, in[1], in[2], in[0]);
  kan::ModelSpec spec = make_model_spec(file, model, in, static_cast<int>(folder.class_names.size()));

  const json cfg = {{"subcommand", "train"},
                    {"data", data},
                    {"epochs", epochs},
                    {"batch", batch},
                    {"lr", lr},
                    {"seed", seed},
                    {"grid_update", grid_update},
                    {"out", out},
                    {"model", model_spec_json(spec)}};

  const RunWriter writer(out, kan::to_string(spec.name), seed);
  echo_and_save_config(cfg, writer.dir.string());

  kan::DatasetSplit split =
      kan::stratified_split(folder.images, folder.class_names, 0.8, 0.1, seed);
  kan::write_split_manifest((writer.dir / "split.json").string(), split);

  kan::TrainResult result = kan::train_model(spec, split, tc, [&](const kan::EpochMetrics& em) {
    std::printf("epoch %d/%d  train_loss=%.4f  train_acc=%.4f  val_acc=%.4f\n", em.epoch + 1,
                tc.epochs, em.train_loss, em.train_acc, em.val_acc);
  });
  writer.save(result, cfg);

  std::printf("test_accuracy: %.6f\n", result.report.test_accuracy);
  std::printf("wall_seconds: %.1f\n", result.report.wall_seconds);
  std::cout << "run_dir: " << writer.dir.string() << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data) {
  kan::Model model = kan::load_checkpoint(checkpoint);
  const auto& in = model.spec().input_shape;
  const json cfg = {{"subcommand", "eval"},
                    {"checkpoint", checkpoint},
                    {"data", data},
                    {"model", model_spec_json(model.spec())}};
  echo_and_save_config(cfg, "");
  const kan::ImageFolder folder = kan::load_image_folder(data, in[1], in[2], in[0]);
  const double acc = kan::evaluate(model, folder.images);
  std::printf("accuracy: %.6f (%zu images)\n", acc, folder.images.size());
  return 0;
}

int cmd_benchmark(const ConfigFile& file, const std::string& models, const std::string& data,
                  const std::string& input, int epochs, int batch, double lr, int repeats,
                  std::uint64_t seed, bool grid_update, const std::string& out) {
  const std::vector<int> in = parse_dims(input, 3, "--input");

  std::vector<std::string> names;
  if (models == "all") {
    for (kan::ModelName n : kan::all_model_names()) names.push_back(kan::to_string(n));
  } else {
    std::size_t pos = 0;
    while (pos <= models.size()) {
      const std::size_t next = models.find(',', pos);
      names.push_back(models.substr(pos, next == std::string::npos ? next : next - pos));
      if (next == std::string::npos) break;
      pos = next + 1;
    }
  }
  if (names.empty()) throw std::invalid_argument("--models expects a comma-separated list or 'all'");

  kan::TrainConfig tc;
  tc.epochs = epochs;
  tc.batch_size = batch;
  tc.lr = lr;
  tc.seed = seed;
  tc.grid_update = grid_update;
  tc.repeats = repeats;
  tc.validate();

  const kan::ImageFolder folder = kan::load_image_folder(data, in[1], in[2], in[0]);
  std::vector<kan::ModelSpec> specs;
  for (const std::string& name : names) {
    specs.push_back(make_model_spec(file, name, in, static_cast<int>(folder.class_names.size())));
  }

  json cfg = {{"subcommand", "benchmark"}, {"data", data},   {"epochs", epochs},
              {"batch", batch},            {"lr", lr},       {"repeats", repeats},
              {"seed", seed},              {"grid_update", grid_update},
              {"out", out},                {"models", json::array()}};
  for (const auto& spec : specs) cfg["models"].push_back(model_spec_json(spec));
  echo_and_save_config(cfg, out);

  kan::DatasetSplit split =
      kan::stratified_split(folder.images, folder.class_names, 0.8, 0.1, seed);
  kan::write_split_manifest((fs::path(out) / "split.json").string(), split);

  const auto rows = kan::benchmark(specs, split, tc, nullptr, [&](kan::TrainResult& result) {
    const RunWriter writer(out, result.report.model, result.report.seed);
    writer.save(result, cfg);
    std::printf("done: %s seed=%llu test_accuracy=%.4f (%.1fs)\n", result.report.model.c_str(),
                static_cast<unsigned long long>(result.report.seed),
                result.report.test_accuracy, result.report.wall_seconds);
  });

  kan::write_aggregate_csv((fs::path(out) / "aggregate.csv").string(), rows);
  kan::write_aggregate_json((fs::path(out) / "aggregate.json").string(), rows);
  std::cout << "model, test_accuracy (mean +/- std), mean_seconds, params\n";
  for (const auto& row : rows) std::cout << kan::format_aggregate_row(row) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spline-edge (KAN) and convolutional classifiers for surface-defect images"};
  app.require_subcommand(1);

  // --config is shared and must be read before defaults are bound.
  std::string config_path;
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--config") config_path = argv[i + 1];
  }
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg.rfind("--config=", 0) == 0) config_path = arg.substr(9);
  }

  ConfigFile file;
  try {
    if (!config_path.empty()) file.load(config_path);

    std::string model = file.get<std::string>("model", "");
    std::string models = file.get<std::string>("models", "");
    std::string data = file.get<std::string>("data", "");
    std::string out = file.get<std::string>("out", "runs");
    std::string input = file.get<std::string>("input", "1x64x64");
    std::string size = file.get<std::string>("size", "64x64");
    int epochs = file.get<int>("epochs", 100);
    int batch = file.get<int>("batch", 32);
    double lr = file.get<double>("lr", 1e-3);
    std::uint64_t seed = file.get<std::uint64_t>("seed", 0);
    int repeats = file.get<int>("repeats", 10);
    int per_class = file.get<int>("per_class", 100);
    int classes = file.get<int>("classes", 6);
    bool grid_update = file.get<bool>("grid_update", true);
    std::string checkpoint = file.get<std::string>("checkpoint", "");

    const auto add_config_flag = [&](CLI::App* sub) {
      sub->add_option("--config", config_path, "JSON config file (flags override it)");
    };

    auto* synth = app.add_subcommand("synth-gen", "Generate the synthetic defect dataset");
    synth->add_option("--out", out, "Output directory")->required(!file.raw().contains("out"));
    synth->add_option("--per-class", per_class, "Images per class");
    synth->add_option("--size", size, "Image size HxW");
    synth->add_option("--seed", seed, "Generator seed");
    add_config_flag(synth);

    auto* train = app.add_subcommand("train", "Train one model on an image folder");
    train->add_option("--model", model, "Model name")->required(!file.raw().contains("model"));
    train->add_option("--data", data, "Dataset root (class subdirectories of .pgm)")
        ->required(!file.raw().contains("data"));
    train->add_option("--epochs", epochs, "Training epochs");
    train->add_option("--batch", batch, "Batch size");
    train->add_option("--lr", lr, "Adam learning rate");
    train->add_option("--seed", seed, "Run seed");
    train->add_option("--out", out, "Run directory root");
    train->add_option("--input", input, "Input shape CxHxW");
    train->add_flag("--grid-update,!--no-grid-update", grid_update,
                    "Refresh spline grids during training");
    add_config_flag(train);

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on an image folder");
    ev->add_option("--checkpoint", checkpoint, "Model checkpoint file")
        ->required(!file.raw().contains("checkpoint"));
    ev->add_option("--data", data, "Dataset root")->required(!file.raw().contains("data"));
    add_config_flag(ev);

    auto* params = app.add_subcommand("params", "Print the exact parameter count of a model");
    params->add_option("--model", model, "Model name")->required(!file.raw().contains("model"));
    params->add_option("--input", input, "Input shape CxHxW");
    params->add_option("--classes", classes, "Class count");
    add_config_flag(params);

    auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient self-check");
    gc->add_option("--seed", seed, "Sampling seed");
    add_config_flag(gc);

    auto* bench = app.add_subcommand("benchmark", "Multi-seed comparison table");
    bench->add_option("--models", models, "Comma-separated model names, or 'all'")
        ->required(!file.raw().contains("models"));
    bench->add_option("--data", data, "Dataset root")->required(!file.raw().contains("data"));
    bench->add_option("--repeats", repeats, "Runs per model (seed, seed+1, ...)");
    bench->add_option("--epochs", epochs, "Training epochs");
    bench->add_option("--batch", batch, "Batch size");
    bench->add_option("--lr", lr, "Adam learning rate");
    bench->add_option("--seed", seed, "Base seed");
    bench->add_option("--input", input, "Input shape CxHxW");
    bench->add_flag("--grid-update,!--no-grid-update", grid_update,
                    "Refresh spline grids during training");
    bench->add_option("--out", out, "Output directory");
    add_config_flag(bench);

    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e);
    } catch (const CLI::ParseError& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 2;
    }

    if (synth->parsed()) return cmd_synth_gen(out, per_class, size, seed);
    if (train->parsed())
      return cmd_train(file, model, data, input, epochs, batch, lr, seed, grid_update, out);
    if (ev->parsed()) return cmd_eval(checkpoint, data);
    if (params->parsed()) return cmd_params(file, model, input, classes);
    if (gc->parsed()) return cmd_gradcheck(seed);
    if (bench->parsed())
      return cmd_benchmark(file, models, data, input, epochs, batch, lr, repeats, seed,
                           grid_update, out);
    std::cerr << "error: no subcommand\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
