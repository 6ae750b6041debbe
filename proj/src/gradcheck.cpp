#include "kan/gradcheck.hpp"

#include <cmath>
#include <deque>
#include <functional>
#include <numeric>

#include "kan/bspline.hpp"
#include "kan/kan_linear.hpp"
#include "kan/rng.hpp"
#include "kan/tape.hpp"

namespace kan {

namespace {

constexpr double kStep = 1e-5;
constexpr double kRelTol = 1e-4;
constexpr double kTinyBoth = 1e-6;
constexpr double kTinyDiff = 1e-7;

// Error measure matching the pass rule: tiny pairs compare absolutely.
double grad_err(double analytic, double fd) {
  if (std::abs(analytic) < kTinyBoth && std::abs(fd) < kTinyBoth) {
    return std::abs(analytic - fd) < kTinyDiff ? 0.0 : 1.0;
  }
  return std::abs(analytic - fd) / std::max(std::abs(analytic), std::abs(fd));
}

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// One differentiation setup: input tensors plus parameters (owned here or
// borrowed from a layer) and a recipe that records a scalar loss. run()
// compares the tape gradient of every coordinate against a central
// difference of the re-evaluated loss.
class Scenario {
 public:
  explicit Scenario(std::string name) : name_(std::move(name)) {}

  Tensor& add_input(Tensor t) {
    inputs_.push_back(std::move(t));
    return inputs_.back();
  }

  Parameter& add_param(Tensor t) {
    owned_.emplace_back(std::move(t));
    checked_.push_back(&owned_.back());
    return owned_.back();
  }

  /// Registers a parameter owned elsewhere (e.g. by a layer) for
  /// perturbation and gradient comparison.
  void borrow_param(Parameter* p) { checked_.push_back(p); }

  // build(tape, input_ids) -> loss node; parameters must be read through
  // the Parameter objects so perturbations take effect on re-evaluation.
  void set_build(std::function<int(Tape&, const std::vector<int>&)> build) {
    build_ = std::move(build);
  }

  GradCheckResult run() {
    GradCheckResult res;
    res.name = name_;

    Tape tape;
    std::vector<int> ids;
    for (Tensor& t : inputs_) ids.push_back(tape.input(t));
    for (Parameter* p : checked_) p->zero_grad();
    const int loss = build_(tape, ids);
    tape.backward(loss);

    double max_err = 0.0;
    for (std::size_t k = 0; k < inputs_.size(); ++k) {
      const Tensor& g = tape.grad(ids[k]);
      for (std::int64_t i = 0; i < inputs_[k].numel(); ++i) {
        max_err = std::max(max_err, grad_err(g[i], central_diff(&inputs_[k][i])));
      }
    }
    for (Parameter* p : checked_) {
      for (std::int64_t i = 0; i < p->value.numel(); ++i) {
        max_err = std::max(max_err, grad_err(p->grad[i], central_diff(&p->value[i])));
      }
    }
    res.max_rel_err = max_err;
    res.passed = max_err < kRelTol;
    return res;
  }

 private:
  double eval() {
    Tape tape;
    std::vector<int> ids;
    for (Tensor& t : inputs_) ids.push_back(tape.input(t));
    return tape.value(build_(tape, ids)).data[0];
  }

  double central_diff(double* slot) {
    const double saved = *slot;
    *slot = saved + kStep;
    const double hi = eval();
    *slot = saved - kStep;
    const double lo = eval();
    *slot = saved;
    return (hi - lo) / (2.0 * kStep);
  }

  std::string name_;
  std::deque<Tensor> inputs_;
  std::deque<Parameter> owned_;
  std::vector<Parameter*> checked_;
  std::function<int(Tape&, const std::vector<int>&)> build_;
};

// Values with pairwise gaps >= 0.01 and magnitude >= 0.1, so a 1e-5 probe
// never crosses a maxpool tie or a relu kink.
Tensor spaced_tensor(std::vector<int> shape, Rng& rng) {
  Tensor t(std::move(shape));
  std::vector<std::int64_t> order(static_cast<std::size_t>(t.numel()));
  std::iota(order.begin(), order.end(), std::int64_t{0});
  rng.shuffle(order);
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    double v = 0.1 + 0.01 * static_cast<double>(i);
    if (rng.uniform01() < 0.5) v = -v;
    t[order[static_cast<std::size_t>(i)]] = v;
  }
  return t;
}

// Basis functions have interior extrema where a component's derivative sits
// anywhere in (0, 1e-3): pure relative error is ill-conditioned there, so
// small components are held to a tight absolute tolerance instead. Both
// branches flag a genuinely wrong derivative, whose error is O(knot spacing).
double derivative_err(double analytic, double fd) {
  if (std::abs(analytic) < 1e-3 && std::abs(fd) < 1e-3) {
    return std::abs(analytic - fd) < kTinyDiff ? 0.0 : 1.0;
  }
  return std::abs(analytic - fd) / std::max(std::abs(analytic), std::abs(fd));
}

GradCheckResult check_basis_derivative(Rng& rng) {
  GradCheckResult res;
  res.name = "bspline_basis_derivative";
  const KnotGrid g = make_uniform_grid(-1.0, 1.0, 5, 3);
  double max_err = 0.0;
  // Interior points only: a probe crossing lo/hi would hit the clamp.
  for (int s = 0; s < 100; ++s) {
    const double x = rng.uniform(-0.98, 0.98);
    const std::vector<double> d = basis_derivative(g, x);
    const std::vector<double> up = basis_eval(g, x + kStep);
    const std::vector<double> dn = basis_eval(g, x - kStep);
    for (std::size_t m = 0; m < d.size(); ++m) {
      const double fd = (up[m] - dn[m]) / (2.0 * kStep);
      max_err = std::max(max_err, derivative_err(d[m], fd));
    }
  }
  res.max_rel_err = max_err;
  res.passed = max_err < kRelTol;
  return res;
}

GradCheckResult check_spline_derivative(Rng& rng) {
  GradCheckResult res;
  res.name = "bspline_spline_derivative";
  const KnotGrid g = make_uniform_grid(-1.0, 1.0, 5, 3);
  std::vector<double> coeffs(static_cast<std::size_t>(g.basis_count()));
  for (double& c : coeffs) c = rng.uniform(-1.0, 1.0);
  double max_err = 0.0;
  for (int s = 0; s < 100; ++s) {
    const double x = rng.uniform(-0.98, 0.98);
    const double d = spline_derivative(g, coeffs, x);
    const double fd = (spline_eval(g, coeffs, x + kStep) - spline_eval(g, coeffs, x - kStep)) /
                      (2.0 * kStep);
    max_err = std::max(max_err, derivative_err(d, fd));
  }
  res.max_rel_err = max_err;
  res.passed = max_err < kRelTol;
  return res;
}

}  // namespace

bool all_passed(const std::vector<GradCheckResult>& results) {
  for (const GradCheckResult& r : results) {
    if (!r.passed) return false;
  }
  return true;
}

std::vector<GradCheckResult> run_gradcheck(std::uint64_t seed) {
  std::vector<GradCheckResult> out;
  Rng rng(mix64(seed, 0x9c6d));

  // Sizes keep every primitive's checked coordinate count at or above 100.
  {
    Scenario s("add");
    s.add_input(random_tensor({5, 7}, rng));
    s.add_input(random_tensor({5, 7}, rng));
    s.add_input(random_tensor({5, 7}, rng));
    s.set_build([](Tape& t, const std::vector<int>& ids) {
      return t.sum(t.mul(t.add(ids[0], ids[1]), ids[2]));
    });
    out.push_back(s.run());
  }
  {
    Scenario s("mul");
    s.add_input(random_tensor({5, 10}, rng));
    s.add_input(random_tensor({5, 10}, rng));
    s.set_build([](Tape& t, const std::vector<int>& ids) { return t.sum(t.mul(ids[0], ids[1])); });
    out.push_back(s.run());
  }
  {
    Scenario s("scale_mean");
    s.add_input(random_tensor({30}, rng));
    s.set_build([](Tape& t, const std::vector<int>& ids) { return t.mean(t.scale(ids[0], -1.7)); });
    out.push_back(s.run());
  }
  {
    Scenario s("relu");
    s.add_input(spaced_tensor({5, 10}, rng));
    s.add_input(random_tensor({5, 10}, rng));
    s.set_build([](Tape& t, const std::vector<int>& ids) {
      return t.sum(t.mul(t.relu(ids[0]), ids[1]));
    });
    out.push_back(s.run());
  }
  {
    Scenario s("silu");
    s.add_input(random_tensor({5, 10}, rng, -2.0, 2.0));
    s.add_input(random_tensor({5, 10}, rng));
    s.set_build([](Tape& t, const std::vector<int>& ids) {
      return t.sum(t.mul(t.silu(ids[0]), ids[1]));
    });
    out.push_back(s.run());
  }
  {
    Scenario s("matmul");
    s.add_input(random_tensor({8, 7}, rng));
    s.add_input(random_tensor({7, 8}, rng));
    s.add_input(random_tensor({8, 8}, rng));
    s.set_build([](Tape& t, const std::vector<int>& ids) {
      return t.sum(t.mul(t.matmul(ids[0], ids[1]), ids[2]));
    });
    out.push_back(s.run());
  }
  {
    Scenario s("linear");
    s.add_input(random_tensor({6, 8}, rng));
    s.add_input(random_tensor({6, 7}, rng));
    Parameter& w = s.add_param(random_tensor({7, 8}, rng));
    Parameter& b = s.add_param(random_tensor({7}, rng));
    s.set_build([&w, &b](Tape& t, const std::vector<int>& ids) {
      return t.sum(t.mul(t.linear(ids[0], w, b), ids[1]));
    });
    out.push_back(s.run());
  }
  {
    Scenario s("conv2d");
    s.add_input(random_tensor({1, 2, 5, 5}, rng));
    s.add_input(random_tensor({1, 3, 5, 5}, rng));
    Parameter& w = s.add_param(random_tensor({3, 2, 3, 3}, rng));
    Parameter& b = s.add_param(random_tensor({3}, rng));
    s.set_build([&w, &b](Tape& t, const std::vector<int>& ids) {
      return t.sum(t.mul(t.conv2d(ids[0], w, b), ids[1]));
    });
    out.push_back(s.run());
  }
  {
    Scenario s("maxpool2");
    s.add_input(spaced_tensor({1, 2, 6, 6}, rng));
    s.add_input(random_tensor({1, 2, 3, 3}, rng));
    s.set_build([](Tape& t, const std::vector<int>& ids) {
      return t.sum(t.mul(t.maxpool2(ids[0]), ids[1]));
    });
    out.push_back(s.run());
  }
  {
    Scenario s("softmax_cross_entropy");
    s.add_input(random_tensor({10, 10}, rng, -2.0, 2.0));
    std::vector<int> labels;
    for (int i = 0; i < 10; ++i) labels.push_back(static_cast<int>(rng.below(10)));
    s.set_build([labels](Tape& t, const std::vector<int>& ids) {
      return t.softmax_cross_entropy(ids[0], labels);
    });
    out.push_back(s.run());
  }

  out.push_back(check_basis_derivative(rng));
  out.push_back(check_spline_derivative(rng));

  {
    // Full spline-edge layer: input, base weights, scalers, coefficients.
    // Inputs stay 0.1 inside the grid range so the probe never crosses the
    // clamp boundary.
    Scenario s("kan_linear");
    Rng init(mix64(seed, 0x17));
    KanLinearLayer layer(4, 3, KanLayerConfig{}, init);
    s.add_input(random_tensor({4, 4}, rng, -0.9, 0.9));
    s.add_input(random_tensor({4, 3}, rng));
    for (Parameter* p : layer.parameters()) s.borrow_param(p);
    s.set_build([&layer](Tape& t, const std::vector<int>& ids) {
      return t.sum(t.mul(t.kan_linear(ids[0], layer), ids[1]));
    });
    out.push_back(s.run());
  }
  {
    // Same layer with inputs clamped by the spline path: gradients must
    // still match (the spline contribution is flat out there, silu is not).
    Scenario s("kan_linear_clamped");
    Rng init(mix64(seed, 0x18));
    KanLinearLayer layer(3, 3, KanLayerConfig{}, init);
    Tensor x({4, 3});
    for (std::int64_t i = 0; i < x.numel(); ++i) {
      x[i] = (rng.uniform01() < 0.5 ? -1.0 : 1.0) * rng.uniform(1.1, 1.8);
    }
    s.add_input(std::move(x));
    s.add_input(random_tensor({4, 3}, rng));
    for (Parameter* p : layer.parameters()) s.borrow_param(p);
    s.set_build([&layer](Tape& t, const std::vector<int>& ids) {
      return t.sum(t.mul(t.kan_linear(ids[0], layer), ids[1]));
    });
    out.push_back(s.run());
  }

  return out;
}

}  // namespace kan
