#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kan/rng.hpp"
#include "kan/tape.hpp"

namespace kan {

/// One stage of a sequential model. forward() records onto the tape and
/// returns the output node id.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual int forward(Tape& tape, int x) = 0;

  /// Every parameter tensor the layer owns, in a fixed order. This order
  /// defines checkpoint blob layout, so it must not change across versions.
  virtual std::vector<Parameter*> parameters() { return {}; }

  /// The subset of parameters() the optimizer may update. Layers with frozen
  /// tensors override this.
  virtual std::vector<Parameter*> trainable_parameters() { return parameters(); }

  /// Total learnable scalars across parameters(), frozen ones included.
  std::int64_t param_count() {
    std::int64_t n = 0;
    for (Parameter* p : parameters()) n += p->value.numel();
    return n;
  }

  /// Short human-readable form, e.g. "conv2d(1->8)".
  virtual std::string describe() const = 0;
};

/// 3x3 convolution, stride 1, zero padding 1 (spatial size preserved).
/// Weights are Kaiming-uniform in the fan-in, bias starts at zero.
class Conv2dLayer : public Layer {
 public:
  Conv2dLayer(int c_in, int c_out, Rng& rng);

  int forward(Tape& tape, int x) override { return tape.conv2d(x, weight, bias); }
  std::vector<Parameter*> parameters() override { return {&weight, &bias}; }
  std::string describe() const override;

  Parameter weight;  // [c_out, c_in, 3, 3]
  Parameter bias;    // [c_out]
};

/// Dense layer y = x W^T + b, same init scheme as Conv2dLayer.
class LinearLayer : public Layer {
 public:
  LinearLayer(int n_in, int n_out, Rng& rng);

  int forward(Tape& tape, int x) override { return tape.linear(x, weight, bias); }
  std::vector<Parameter*> parameters() override { return {&weight, &bias}; }
  std::string describe() const override;

  Parameter weight;  // [n_out, n_in]
  Parameter bias;    // [n_out]
};

class ReluLayer : public Layer {
 public:
  int forward(Tape& tape, int x) override { return tape.relu(x); }
  std::string describe() const override { return "relu"; }
};

class MaxPool2Layer : public Layer {
 public:
  int forward(Tape& tape, int x) override { return tape.maxpool2(x); }
  std::string describe() const override { return "maxpool2"; }
};

class FlattenLayer : public Layer {
 public:
  int forward(Tape& tape, int x) override { return tape.flatten(x); }
  std::string describe() const override { return "flatten"; }
};

}  // namespace kan
