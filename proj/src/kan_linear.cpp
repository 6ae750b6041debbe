#include "kan/kan_linear.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace kan {

KanLinearLayer::KanLinearLayer(int n_in, int n_out, const KanLayerConfig& config, Rng& rng)
    : n_in_(n_in), n_out_(n_out), config_(config) {
  if (n_in < 1 || n_out < 1) {
    throw std::invalid_argument("kan layer: sizes must be positive");
  }
  const KnotGrid base =
      make_uniform_grid(config.range_lo, config.range_hi, config.grid_intervals, config.degree);
  grids_.assign(static_cast<std::size_t>(n_in), base);

  base_weight_ = Parameter(Tensor({n_out, n_in}), "base_weight");
  spline_scaler_ = Parameter(Tensor({n_out, n_in}), "spline_scaler");
  spline_coeffs_ = Parameter(Tensor({n_out, n_in, base.basis_count()}), "spline_coeffs");

  // Draw order (base weights, then coefficients) is fixed: seeded builds must
  // reproduce bit-identical layers.
  if (config.base_term) {
    const double bound = std::sqrt(6.0 / n_in);
    for (std::int64_t i = 0; i < base_weight_.value.numel(); ++i) {
      base_weight_.value[i] = rng.uniform(-bound, bound);
    }
  }
  spline_scaler_.value.fill(1.0);
  const double sigma = 0.1 / std::sqrt(static_cast<double>(base.basis_count()));
  for (std::int64_t i = 0; i < spline_coeffs_.value.numel(); ++i) {
    spline_coeffs_.value[i] = rng.normal(0.0, sigma);
  }
}

std::vector<Parameter*> KanLinearLayer::trainable_parameters() {
  if (config_.base_term) return {&base_weight_, &spline_scaler_, &spline_coeffs_};
  return {&spline_scaler_, &spline_coeffs_};
}

std::string KanLinearLayer::describe() const {
  return "kan_linear(" + std::to_string(n_in_) + "->" + std::to_string(n_out_) +
         ", G=" + std::to_string(config_.grid_intervals) +
         ", k=" + std::to_string(config_.degree) + ")";
}

void KanLinearLayer::update_grids(const Tensor& batch) {
  if (batch.ndim() != 2 || batch.dim(1) != n_in_) {
    throw std::invalid_argument("update_grids: batch shape " + shape_str(batch.shape) +
                                " incompatible with n_in=" + std::to_string(n_in_));
  }
  const int rows = batch.dim(0);
  if (rows < 1) throw std::invalid_argument("update_grids: empty batch");

  const int ncoef = grids_[0].basis_count();
  std::vector<double> column(static_cast<std::size_t>(rows));
  for (int i = 0; i < n_in_; ++i) {
    for (int b = 0; b < rows; ++b) {
      column[static_cast<std::size_t>(b)] = batch[static_cast<std::int64_t>(b) * n_in_ + i];
    }
    // Every edge of column i is refit against its old values; all calls see
    // the same samples, so they produce the same new grid.
    KnotGrid updated = grids_[static_cast<std::size_t>(i)];
    for (int j = 0; j < n_out_; ++j) {
      double* cf = &spline_coeffs_.value[(static_cast<std::int64_t>(j) * n_in_ + i) * ncoef];
      AdaptResult r = adapt_grid(grids_[static_cast<std::size_t>(i)],
                                 std::span<const double>(cf, static_cast<std::size_t>(ncoef)),
                                 column, config_.grid_blend);
      for (int m = 0; m < ncoef; ++m) cf[m] = r.coeffs[static_cast<std::size_t>(m)];
      updated = std::move(r.grid);
    }
    grids_[static_cast<std::size_t>(i)] = std::move(updated);
  }
}

void KanLinearLayer::set_grids(std::vector<KnotGrid> grids) {
  if (static_cast<int>(grids.size()) != n_in_) {
    throw std::invalid_argument("set_grids: expected " + std::to_string(n_in_) + " grids, got " +
                                std::to_string(grids.size()));
  }
  const std::size_t want =
      static_cast<std::size_t>(config_.grid_intervals + 2 * config_.degree + 1);
  for (const KnotGrid& g : grids) {
    if (g.degree != config_.degree || g.intervals != config_.grid_intervals ||
        g.knots.size() != want) {
      throw std::invalid_argument("set_grids: grid shape does not match layer config");
    }
  }
  grids_ = std::move(grids);
}

int Tape::kan_linear(int x, KanLinearLayer& layer) {
  // Register params first: param() may grow nodes_ and would invalidate tx.
  const int wb = param(layer.base_weight_);
  const int ws = param(layer.spline_scaler_);
  const int wc = param(layer.spline_coeffs_);
  const Tensor& tx = value(x);
  if (tx.ndim() != 2 || tx.dim(1) != layer.n_in_) {
    throw std::invalid_argument("kan_linear: input " + shape_str(tx.shape) +
                                " incompatible with n_in=" + std::to_string(layer.n_in_));
  }
  const int batch = tx.dim(0);
  const int n_in = layer.n_in_;
  const int n_out = layer.n_out_;
  const int k = layer.config_.degree;
  const int ncoef = layer.grids_[0].basis_count();

  Node n;
  n.op = Op::kKanLinear;
  n.inputs = {x, wb, ws, wc};
  n.out = Tensor({batch, n_out});

  KanCtx ctx;
  ctx.layer = &layer;
  ctx.spans.resize(static_cast<std::size_t>(batch) * n_in);
  ctx.basis.resize(static_cast<std::size_t>(batch) * n_in * (k + 1));

  std::vector<double> silu_x(static_cast<std::size_t>(batch) * n_in);
  for (int b = 0; b < batch; ++b) {
    for (int i = 0; i < n_in; ++i) {
      const std::size_t e = static_cast<std::size_t>(b) * n_in + i;
      const double xv = tx[static_cast<std::int64_t>(b) * n_in + i];
      silu_x[e] = silu_scalar(xv);
      ctx.spans[e] = basis_nonzero(layer.grids_[static_cast<std::size_t>(i)], xv,
                                   &ctx.basis[e * static_cast<std::size_t>(k + 1)]);
    }
  }

  const Tensor& wbv = layer.base_weight_.value;
  const Tensor& wsv = layer.spline_scaler_.value;
  const Tensor& wcv = layer.spline_coeffs_.value;
  for (int b = 0; b < batch; ++b) {
    for (int j = 0; j < n_out; ++j) {
      double acc = 0.0;
      for (int i = 0; i < n_in; ++i) {
        const std::size_t e = static_cast<std::size_t>(b) * n_in + i;
        const std::int64_t edge = static_cast<std::int64_t>(j) * n_in + i;
        const double* bas = &ctx.basis[e * static_cast<std::size_t>(k + 1)];
        const double* cf = &wcv[edge * ncoef];
        const int s = ctx.spans[e];
        double sv = 0.0;
        for (int t = 0; t <= k; ++t) sv += cf[s + t] * bas[t];
        acc += wbv[edge] * silu_x[e] + wsv[edge] * sv;
      }
      n.out[static_cast<std::int64_t>(b) * n_out + j] = acc;
    }
  }
  n.ctx = std::move(ctx);
  return push(std::move(n), true);
}

void Tape::kan_backward(Node& n) {
  const auto& ctx = std::get<KanCtx>(n.ctx);
  const KanLinearLayer& layer = *ctx.layer;
  const Tensor& g = n.grad;
  const Tensor& tx = value(n.inputs[0]);
  const Tensor& wbv = value(n.inputs[1]);
  const Tensor& wsv = value(n.inputs[2]);
  const Tensor& wcv = value(n.inputs[3]);
  Tensor& gx = ensure_grad(n.inputs[0]);
  Tensor& gwb = ensure_grad(n.inputs[1]);
  Tensor& gws = ensure_grad(n.inputs[2]);
  Tensor& gwc = ensure_grad(n.inputs[3]);

  const int batch = tx.dim(0);
  const int n_in = layer.n_in_;
  const int n_out = layer.n_out_;
  const int k = layer.config_.degree;
  const int ncoef = layer.grids_[0].basis_count();

  std::vector<double> dbasis(static_cast<std::size_t>(k + 1));
  for (int b = 0; b < batch; ++b) {
    for (int i = 0; i < n_in; ++i) {
      const std::size_t e = static_cast<std::size_t>(b) * n_in + i;
      const double xv = tx[static_cast<std::int64_t>(b) * n_in + i];
      const double sx = silu_scalar(xv);
      const double dsx = silu_derivative_scalar(xv);
      const KnotGrid& grid = layer.grids_[static_cast<std::size_t>(i)];
      // Outside the range the spline path saw clamp(x), whose derivative in
      // x is zero; the silu path never clamps.
      const bool outside = xv < grid.lo || xv > grid.hi;
      const int s = ctx.spans[e];
      const double* bas = &ctx.basis[e * static_cast<std::size_t>(k + 1)];
      int sd = 0;
      if (!outside) sd = basis_derivative_nonzero(grid, xv, dbasis.data());
      double dx = 0.0;
      for (int j = 0; j < n_out; ++j) {
        const double gv = g[static_cast<std::int64_t>(b) * n_out + j];
        const std::int64_t edge = static_cast<std::int64_t>(j) * n_in + i;
        const double* cf = &wcv[edge * ncoef];
        double sv = 0.0;
        for (int t = 0; t <= k; ++t) sv += cf[s + t] * bas[t];
        gwb[edge] += gv * sx;
        gws[edge] += gv * sv;
        const double wse = wsv[edge];
        for (int t = 0; t <= k; ++t) gwc[edge * ncoef + s + t] += gv * wse * bas[t];
        double slope = wbv[edge] * dsx;
        if (!outside) {
          double dv = 0.0;
          for (int t = 0; t <= k; ++t) dv += cf[sd + t] * dbasis[t];
          slope += wse * dv;
        }
        dx += gv * slope;
      }
      gx[static_cast<std::int64_t>(b) * n_in + i] += dx;
    }
  }
}

}  // namespace kan
