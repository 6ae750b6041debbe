#include "kan/nn_layers.hpp"

#include <cmath>
#include <stdexcept>

namespace kan {

namespace {

// Flat-order fill keeps initialization reproducible: the draw sequence is
// part of the layer's contract with seeded model builds.
void fill_kaiming_uniform(Tensor& t, int fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / fan_in);
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
}

}  // namespace

Conv2dLayer::Conv2dLayer(int c_in, int c_out, Rng& rng) {
  if (c_in < 1 || c_out < 1) {
    throw std::invalid_argument("conv2d layer: channel counts must be positive");
  }
  weight = Parameter(Tensor({c_out, c_in, 3, 3}), "weight");
  bias = Parameter(Tensor({c_out}), "bias");
  fill_kaiming_uniform(weight.value, c_in * 9, rng);
}

std::string Conv2dLayer::describe() const {
  return "conv2d(" + std::to_string(weight.value.dim(1)) + "->" +
         std::to_string(weight.value.dim(0)) + ")";
}

LinearLayer::LinearLayer(int n_in, int n_out, Rng& rng) {
  if (n_in < 1 || n_out < 1) {
    throw std::invalid_argument("linear layer: sizes must be positive");
  }
  weight = Parameter(Tensor({n_out, n_in}), "weight");
  bias = Parameter(Tensor({n_out}), "bias");
  fill_kaiming_uniform(weight.value, n_in, rng);
}

std::string LinearLayer::describe() const {
  return "linear(" + std::to_string(weight.value.dim(1)) + "->" +
         std::to_string(weight.value.dim(0)) + ")";
}

}  // namespace kan
