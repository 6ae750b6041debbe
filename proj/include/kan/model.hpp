#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "kan/kan_linear.hpp"
#include "kan/nn_layers.hpp"

namespace kan {

enum class ModelName {
  kTwoLayerConvNet,
  kTwoLayerConvNetPlus,
  kSingleLayerLinearNet,
  kFourLayerConvNet,
  kTwoLayerConvKAN,
  kFourLayerConvKAN,
  kThreeLayerConvTwoLayerKAN,
};

/// The seven buildable architectures, in canonical report order.
const std::vector<ModelName>& all_model_names();

std::string to_string(ModelName name);

/// Exact-name lookup; throws std::invalid_argument listing the valid names.
ModelName parse_model_name(const std::string& s);

struct ModelSpec {
  ModelName name = ModelName::kTwoLayerConvKAN;
  std::array<int, 3> input_shape = {1, 64, 64};  // [channels, H, W]
  int n_classes = 6;
  KanLayerConfig kan;
  int plus_hidden = 128;  // TwoLayerConvNetPlus hidden width
  int four_hidden = 256;  // FourLayerConvNet hidden width
  int kan_mid = 64;       // ThreeLayerConvTwoLayerKAN mid width

  std::string to_json() const;
  static ModelSpec from_json(const std::string& text);
};

/// A sequential stack built from a ModelSpec. Owns its layers; movable only.
class Model {
 public:
  Model() = default;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  /// Records the full stack on the tape and returns the logits node.
  /// When kan_inputs is non-null, the input tensor feeding each spline layer
  /// is appended to it (in layer order) as a side effect.
  int forward(Tape& tape, int x, std::vector<Tensor>* kan_inputs = nullptr);

  std::vector<Parameter*> parameters();            // all, in layer order
  std::vector<Parameter*> trainable_parameters();  // optimizer view
  std::vector<KanLinearLayer*> kan_layers();

  std::int64_t param_count();

  const ModelSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<std::unique_ptr<Layer>>& layers() const { return layers_; }

  /// One line per layer, e.g. "conv2d(1->5)".
  std::vector<std::string> describe_layers() const;

 private:
  friend Model build_model(const ModelSpec&, std::uint64_t);

  ModelSpec spec_;
  std::uint64_t seed_ = 0;
  std::vector<std::unique_ptr<Layer>> layers_;
};

/// Deterministic seeded construction of the named architecture. Throws
/// std::invalid_argument when pooling would hit an odd spatial size or the
/// spec is otherwise unsatisfiable.
Model build_model(const ModelSpec& spec, std::uint64_t seed);

/// Convenience forward on a fresh tape; returns logits [batch, n_classes].
Tensor forward_classify(Model& model, const Tensor& images);

/// Self-describing single-file format: magic, JSON header (spec, seed, blob
/// directory), then 64-bit little-endian float blobs in directory order.
void save_checkpoint(Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace kan
