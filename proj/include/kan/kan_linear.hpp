#pragma once

#include <string>
#include <vector>

#include "kan/bspline.hpp"
#include "kan/nn_layers.hpp"

namespace kan {

/// Hyperparameters for a spline-edge layer.
struct KanLayerConfig {
  int grid_intervals = 5;    // G
  int degree = 3;            // k
  double range_lo = -1.0;    // knot range start
  double range_hi = 1.0;     // knot range end
  bool base_term = true;     // include w_b * silu(x); when false, w_b is frozen at 0
  double grid_blend = 0.02;  // uniform weight handed to adapt_grid on updates
};

/// Dense layer whose edges are learnable univariate splines:
///
///   y[b,j] = sum_i ( w_b[j,i] * silu(x[b,i])
///                  + w_s[j,i] * spline(grid_i, coeffs[j,i,:], x[b,i]) )
///
/// Each input column owns one knot grid, shared by its n_out edges. The silu
/// path sees the raw input; only the spline path clamps into the grid range.
class KanLinearLayer : public Layer {
 public:
  KanLinearLayer(int n_in, int n_out, const KanLayerConfig& config, Rng& rng);

  int forward(Tape& tape, int x) override { return tape.kan_linear(x, *this); }

  // Order defines checkpoint blob layout.
  std::vector<Parameter*> parameters() override {
    return {&base_weight_, &spline_scaler_, &spline_coeffs_};
  }
  std::vector<Parameter*> trainable_parameters() override;

  std::string describe() const override;

  /// Moves every input column's knots toward that column's sample quantiles
  /// in `batch` ([batch, n_in]) and refits all edges so the layer computes
  /// (almost) the same function on those samples.
  void update_grids(const Tensor& batch);

  int n_in() const { return n_in_; }
  int n_out() const { return n_out_; }
  const KanLayerConfig& config() const { return config_; }
  const std::vector<KnotGrid>& grids() const { return grids_; }

  /// Checkpoint restore; validates count and shape against the config.
  void set_grids(std::vector<KnotGrid> grids);

 private:
  friend class Tape;

  int n_in_ = 0;
  int n_out_ = 0;
  KanLayerConfig config_;
  std::vector<KnotGrid> grids_;  // one per input column
  Parameter base_weight_;        // w_b [n_out, n_in]
  Parameter spline_scaler_;      // w_s [n_out, n_in]
  Parameter spline_coeffs_;      // [n_out, n_in, G+k]
};

}  // namespace kan
