#include "kan/kan_linear.hpp"

#include <cmath>
#include <span>
#include <vector>

#include "doctest.h"
#include "kan/rng.hpp"
#include "kan/tape.hpp"

using namespace kan;

namespace {

Tensor forward_on(KanLinearLayer& layer, const Tensor& x) {
  Tape t;
  return t.value(layer.forward(t, t.input(x)));
}

Tensor uniform_tensor(std::vector<int> shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("zero weights give zero output") {
  Rng rng(21);
  KanLinearLayer layer(3, 2, KanLayerConfig{}, rng);
  layer.parameters()[0]->value.fill(0.0);  // base weight
  layer.parameters()[1]->value.fill(0.0);  // spline scaler
  const Tensor y = forward_on(layer, uniform_tensor({4, 3}, rng, -1.0, 1.0));
  CHECK(y.shape == std::vector<int>{4, 2});
  for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y[i] == 0.0);
}

TEST_CASE("pure base path is silu") {
  Rng rng(22);
  KanLinearLayer layer(1, 1, KanLayerConfig{}, rng);
  layer.parameters()[0]->value.fill(1.0);  // w_b = 1
  layer.parameters()[1]->value.fill(0.0);  // w_s = 0
  const Tensor y = forward_on(layer, Tensor({1, 1}, {1.0}));
  CHECK(std::abs(y[0] - 0.7310585786300049) < 1e-15);
}

TEST_CASE("spline path can represent the identity") {
  Rng rng(23);
  KanLinearLayer layer(1, 1, KanLayerConfig{}, rng);
  layer.parameters()[0]->value.fill(0.0);
  layer.parameters()[1]->value.fill(1.0);
  // Fit the edge's coefficients to f(x) = x on the layer's own grid.
  const KnotGrid& g = layer.grids()[0];
  std::vector<double> xs, ys;
  for (int i = 0; i < 60; ++i) {
    const double x = -1.0 + 2.0 * i / 59.0;
    xs.push_back(x);
    ys.push_back(x);
  }
  const std::vector<double> c = fit_least_squares(g, xs, ys);
  Parameter* coeffs = layer.parameters()[2];
  for (std::size_t i = 0; i < c.size(); ++i) coeffs->value[static_cast<std::int64_t>(i)] = c[i];

  for (int i = 0; i < 50; ++i) {
    const double x = -0.95 + 1.9 * i / 49.0;
    const Tensor y = forward_on(layer, Tensor({1, 1}, {x}));
    CHECK(std::abs(y[0] - x) < 1e-6);
  }
}

TEST_CASE("output decomposes into base and spline contributions") {
  Rng rng(24);
  KanLinearLayer layer(4, 3, KanLayerConfig{}, rng);
  const int ncoef = layer.grids()[0].basis_count();
  const Tensor& wb = layer.parameters()[0]->value;
  const Tensor& ws = layer.parameters()[1]->value;
  const Tensor& wc = layer.parameters()[2]->value;

  // Mix of in-range and clamped inputs.
  Tensor x({5, 4});
  for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform(-1.6, 1.6);

  const Tensor y = forward_on(layer, x);
  for (int b = 0; b < 5; ++b) {
    for (int j = 0; j < 3; ++j) {
      double want = 0.0;
      for (int i = 0; i < 4; ++i) {
        const double xv = x[b * 4 + i];
        const std::int64_t edge = j * 4 + i;
        const std::span<const double> cf(&wc[edge * ncoef], static_cast<std::size_t>(ncoef));
        want += wb[edge] * silu_scalar(xv) + ws[edge] * spline_eval(layer.grids()[static_cast<std::size_t>(i)], cf, xv);
      }
      CHECK(std::abs(y[b * 3 + j] - want) < 1e-12);
    }
  }
}

TEST_CASE("parameter count follows the closed form") {
  Rng rng(25);
  for (int trial = 0; trial < 20; ++trial) {
    const int n_in = 1 + rng.below(6);
    const int n_out = 1 + rng.below(6);
    KanLayerConfig cfg;
    cfg.grid_intervals = 2 + rng.below(6);
    cfg.degree = rng.below(4);
    KanLinearLayer layer(n_in, n_out, cfg, rng);
    const std::int64_t want =
        static_cast<std::int64_t>(n_out) * n_in * (cfg.grid_intervals + cfg.degree + 2);
    CHECK(layer.param_count() == want);
    std::int64_t enumerated = 0;
    for (Parameter* p : layer.parameters()) enumerated += p->value.numel();
    CHECK(enumerated == want);
  }
}

TEST_CASE("initialization is deterministic in the seed") {
  const auto snapshot = [](std::uint64_t seed) {
    Rng rng(seed);
    KanLinearLayer layer(3, 3, KanLayerConfig{}, rng);
    std::vector<double> all;
    for (Parameter* p : layer.parameters())
      all.insert(all.end(), p->value.data.begin(), p->value.data.end());
    return all;
  };
  const std::vector<double> a = snapshot(42);
  const std::vector<double> b = snapshot(42);
  const std::vector<double> c = snapshot(43);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) any_diff |= (a[i] != c[i]);
  CHECK(any_diff);
}

TEST_CASE("grid update changes the function only slightly on its batch") {
  // Operating point: each edge carries a smooth learned spline (set here by
  // fitting gentle sinusoids), and the refresh sees the batch that also
  // feeds the quantile knot move. Raw white-noise coefficients would wiggle
  // too fast for any knot move to preserve.
  Rng rng(26);
  KanLinearLayer layer(3, 2, KanLayerConfig{}, rng);
  const KnotGrid g = make_uniform_grid(-1.0, 1.0, 5, 3);
  const int ncoef = g.basis_count();
  std::vector<double> xs_fit;
  for (int i = 0; i < 64; ++i) xs_fit.push_back(-1.0 + 2.0 * i / 63.0);
  Tensor& wc = layer.parameters()[2]->value;
  REQUIRE(wc.shape == std::vector<int>{2, 3, ncoef});
  for (int edge = 0; edge < 6; ++edge) {
    const double amp = rng.uniform(0.2, 0.5);
    const double phase = rng.uniform(0.0, 3.14);
    std::vector<double> ys_fit;
    for (double x : xs_fit) ys_fit.push_back(amp * std::sin(1.2 * x + phase));
    const std::vector<double> c = fit_least_squares(g, xs_fit, ys_fit);
    for (int m = 0; m < ncoef; ++m) wc[edge * ncoef + m] = c[static_cast<std::size_t>(m)];
  }

  Tensor batch({64, 3});
  for (std::int64_t i = 0; i < batch.numel(); ++i)
    batch[i] = std::clamp(rng.normal(0.0, 0.5), -1.0, 1.0);

  const Tensor before = forward_on(layer, batch);
  layer.update_grids(batch);
  const Tensor after = forward_on(layer, batch);
  double max_delta = 0.0;
  for (std::int64_t i = 0; i < before.numel(); ++i)
    max_delta = std::max(max_delta, std::abs(after[i] - before[i]));
  CHECK(max_delta > 0.0);  // the refresh did rebuild the edges
  CHECK(max_delta < 1e-3);
}

TEST_CASE("full uniform blend leaves grids fixed on a uniform batch") {
  Rng rng(27);
  KanLayerConfig cfg;
  cfg.grid_blend = 1.0;
  KanLinearLayer layer(2, 2, cfg, rng);
  const std::vector<KnotGrid> before = layer.grids();
  Tensor batch = uniform_tensor({128, 2}, rng, -1.0, 1.0);
  layer.update_grids(batch);
  const std::vector<KnotGrid>& after = layer.grids();
  REQUIRE(after.size() == before.size());
  for (std::size_t i = 0; i < after.size(); ++i) {
    REQUIRE(after[i].knots.size() == before[i].knots.size());
    for (std::size_t j = 0; j < after[i].knots.size(); ++j) {
      CHECK(std::abs(after[i].knots[j] - before[i].knots[j]) < 1e-12);
    }
  }
}

TEST_CASE("grid update survives a constant batch") {
  Rng rng(28);
  KanLinearLayer layer(2, 2, KanLayerConfig{}, rng);
  const Tensor batch = Tensor::full({32, 2}, 0.4);
  layer.update_grids(batch);
  for (const KnotGrid& g : layer.grids()) {
    for (std::size_t j = 1; j < g.knots.size(); ++j) CHECK(g.knots[j] > g.knots[j - 1]);
  }
}

TEST_CASE("disabled base term freezes the base weights at zero") {
  Rng rng(29);
  KanLayerConfig cfg;
  cfg.base_term = false;
  KanLinearLayer layer(3, 2, cfg, rng);

  CHECK(layer.parameters().size() == 3);            // checkpoint layout unchanged
  CHECK(layer.trainable_parameters().size() == 2);  // optimizer skips w_b
  const Tensor& wb = layer.parameters()[0]->value;
  for (std::int64_t i = 0; i < wb.numel(); ++i) CHECK(wb[i] == 0.0);
  for (Parameter* p : layer.trainable_parameters()) CHECK(p != layer.parameters()[0]);
}

TEST_CASE("layer gradients flow to all three parameter tensors") {
  Rng rng(30);
  KanLinearLayer layer(3, 2, KanLayerConfig{}, rng);
  for (Parameter* p : layer.parameters()) p->zero_grad();
  Tape t;
  const int x = t.input(uniform_tensor({4, 3}, rng, -0.9, 0.9));
  const int y = layer.forward(t, x);
  t.backward(t.mean(t.mul(y, y)));
  for (Parameter* p : layer.parameters()) {
    double norm = 0.0;
    for (std::int64_t i = 0; i < p->grad.numel(); ++i) norm += std::abs(p->grad[i]);
    CHECK(norm > 0.0);
  }
}
