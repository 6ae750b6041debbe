#include "kan/tape.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace kan {

double silu_scalar(double z) { return z / (1.0 + std::exp(-z)); }

double silu_derivative_scalar(double z) {
  const double s = 1.0 / (1.0 + std::exp(-z));
  return s + z * s * (1.0 - s);
}

Tensor softmax(const Tensor& logits) {
  if (logits.ndim() != 2) {
    throw std::invalid_argument("softmax: expected [batch, classes], got " + shape_str(logits.shape));
  }
  const int batch = logits.dim(0);
  const int classes = logits.dim(1);
  Tensor out(logits.shape);
  for (int b = 0; b < batch; ++b) {
    const double* row = &logits.data[static_cast<std::size_t>(b) * classes];
    double* orow = &out.data[static_cast<std::size_t>(b) * classes];
    double mx = row[0];
    for (int c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
    double denom = 0.0;
    for (int c = 0; c < classes; ++c) {
      orow[c] = std::exp(row[c] - mx);
      denom += orow[c];
    }
    for (int c = 0; c < classes; ++c) orow[c] /= denom;
  }
  return out;
}

void Tape::check_same_shape(const char* prim, const Tensor& a, const Tensor& b) {
  if (!same_shape(a, b)) {
    throw std::invalid_argument(std::string(prim) + ": shape mismatch " + shape_str(a.shape) +
                                " vs " + shape_str(b.shape));
  }
}

int Tape::push(Node n, bool is_op) {
  if (is_op) ++op_count_;
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Tensor& Tape::ensure_grad(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.grad_live) {
    n.grad = Tensor(n.out.shape);
    n.grad_live = true;
  }
  return n.grad;
}

int Tape::input(Tensor x) {
  Node n;
  n.op = Op::kLeafInput;
  n.out = std::move(x);
  return push(std::move(n), false);
}

int Tape::param(Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return it->second;
  Node n;
  n.op = Op::kLeafParam;
  n.out = p.value;
  n.bound = &p;
  const int id = push(std::move(n), false);
  param_nodes_.emplace(&p, id);
  return id;
}

int Tape::add(int a, int b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  check_same_shape("add", ta, tb);
  Node n;
  n.op = Op::kAdd;
  n.inputs = {a, b};
  n.out = Tensor(ta.shape);
  for (std::int64_t i = 0; i < ta.numel(); ++i) n.out[i] = ta[i] + tb[i];
  return push(std::move(n), true);
}

int Tape::mul(int a, int b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  check_same_shape("mul", ta, tb);
  Node n;
  n.op = Op::kMul;
  n.inputs = {a, b};
  n.out = Tensor(ta.shape);
  for (std::int64_t i = 0; i < ta.numel(); ++i) n.out[i] = ta[i] * tb[i];
  return push(std::move(n), true);
}

int Tape::scale(int a, double alpha) {
  const Tensor& ta = value(a);
  Node n;
  n.op = Op::kScale;
  n.inputs = {a};
  n.alpha = alpha;
  n.out = Tensor(ta.shape);
  for (std::int64_t i = 0; i < ta.numel(); ++i) n.out[i] = alpha * ta[i];
  return push(std::move(n), true);
}

int Tape::relu(int a) {
  const Tensor& ta = value(a);
  Node n;
  n.op = Op::kRelu;
  n.inputs = {a};
  n.out = Tensor(ta.shape);
  for (std::int64_t i = 0; i < ta.numel(); ++i) n.out[i] = ta[i] > 0.0 ? ta[i] : 0.0;
  return push(std::move(n), true);
}

int Tape::silu(int a) {
  const Tensor& ta = value(a);
  Node n;
  n.op = Op::kSilu;
  n.inputs = {a};
  n.out = Tensor(ta.shape);
  for (std::int64_t i = 0; i < ta.numel(); ++i) n.out[i] = silu_scalar(ta[i]);
  return push(std::move(n), true);
}

int Tape::matmul(int a, int b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (ta.ndim() != 2 || tb.ndim() != 2 || ta.dim(1) != tb.dim(0)) {
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(ta.shape) + " x " +
                                shape_str(tb.shape));
  }
  const int m = ta.dim(0), k = ta.dim(1), p = tb.dim(1);
  Node n;
  n.op = Op::kMatmul;
  n.inputs = {a, b};
  n.out = Tensor({m, p});
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < p; ++j) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t) acc += ta[static_cast<std::int64_t>(i) * k + t] * tb[static_cast<std::int64_t>(t) * p + j];
      n.out[static_cast<std::int64_t>(i) * p + j] = acc;
    }
  }
  return push(std::move(n), true);
}

int Tape::linear(int x, Parameter& weight, Parameter& bias) {
  // Register params first: param() may grow nodes_ and would invalidate tx.
  const int wid = param(weight);
  const int bid = param(bias);
  const Tensor& tx = value(x);
  const Tensor& tw = weight.value;
  const Tensor& tb = bias.value;
  if (tx.ndim() != 2 || tw.ndim() != 2 || tx.dim(1) != tw.dim(1)) {
    throw std::invalid_argument("linear: input " + shape_str(tx.shape) + " incompatible with weight " +
                                shape_str(tw.shape));
  }
  if (tb.ndim() != 1 || tb.dim(0) != tw.dim(0)) {
    throw std::invalid_argument("linear: bias " + shape_str(tb.shape) + " incompatible with weight " +
                                shape_str(tw.shape));
  }
  const int batch = tx.dim(0), n_in = tx.dim(1), n_out = tw.dim(0);
  Node n;
  n.op = Op::kLinear;
  n.inputs = {x, wid, bid};
  n.out = Tensor({batch, n_out});
  for (int b = 0; b < batch; ++b) {
    for (int o = 0; o < n_out; ++o) {
      double acc = tb[o];
      for (int i = 0; i < n_in; ++i) {
        acc += tx[static_cast<std::int64_t>(b) * n_in + i] * tw[static_cast<std::int64_t>(o) * n_in + i];
      }
      n.out[static_cast<std::int64_t>(b) * n_out + o] = acc;
    }
  }
  return push(std::move(n), true);
}

int Tape::conv2d(int x, Parameter& weight, Parameter& bias) {
  // Register params first: param() may grow nodes_ and would invalidate tx.
  const int wid = param(weight);
  const int bid = param(bias);
  const Tensor& tx = value(x);
  const Tensor& tw = weight.value;
  const Tensor& tb = bias.value;
  if (tx.ndim() != 4) {
    throw std::invalid_argument("conv2d: input must be [batch,c,H,W], got " + shape_str(tx.shape));
  }
  if (tw.ndim() != 4 || tw.dim(2) != 3 || tw.dim(3) != 3) {
    throw std::invalid_argument("conv2d: weight must be [c_out,c_in,3,3], got " + shape_str(tw.shape));
  }
  if (tx.dim(1) != tw.dim(1)) {
    throw std::invalid_argument("conv2d: input channels " + std::to_string(tx.dim(1)) +
                                " != weight channels " + std::to_string(tw.dim(1)));
  }
  const int batch = tx.dim(0), c_in = tx.dim(1), H = tx.dim(2), W = tx.dim(3);
  const int c_out = tw.dim(0);
  if (tb.ndim() != 1 || tb.dim(0) != c_out) {
    throw std::invalid_argument("conv2d: bias " + shape_str(tb.shape) + " incompatible with weight " +
                                shape_str(tw.shape));
  }
  Node n;
  n.op = Op::kConv2d;
  n.inputs = {x, wid, bid};
  n.out = Tensor({batch, c_out, H, W});
  for (int b = 0; b < batch; ++b) {
    for (int co = 0; co < c_out; ++co) {
      const double bv = tb[co];
      for (int y = 0; y < H; ++y) {
        for (int xx = 0; xx < W; ++xx) {
          double acc = bv;
          for (int ci = 0; ci < c_in; ++ci) {
            const std::int64_t xoff = ((static_cast<std::int64_t>(b) * c_in + ci) * H) * W;
            const std::int64_t woff = ((static_cast<std::int64_t>(co) * c_in + ci) * 3) * 3;
            for (int ky = 0; ky < 3; ++ky) {
              const int sy = y + ky - 1;
              if (sy < 0 || sy >= H) continue;
              for (int kx = 0; kx < 3; ++kx) {
                const int sx = xx + kx - 1;
                if (sx < 0 || sx >= W) continue;
                acc += tx[xoff + static_cast<std::int64_t>(sy) * W + sx] * tw[woff + ky * 3 + kx];
              }
            }
          }
          n.out[((static_cast<std::int64_t>(b) * c_out + co) * H + y) * W + xx] = acc;
        }
      }
    }
  }
  return push(std::move(n), true);
}

int Tape::maxpool2(int x) {
  const Tensor& tx = value(x);
  if (tx.ndim() != 4) {
    throw std::invalid_argument("maxpool2: input must be [batch,c,H,W], got " + shape_str(tx.shape));
  }
  const int batch = tx.dim(0), c = tx.dim(1), H = tx.dim(2), W = tx.dim(3);
  if (H % 2 != 0 || W % 2 != 0) {
    throw std::invalid_argument("maxpool2: odd spatial size " + std::to_string(H) + "x" +
                                std::to_string(W));
  }
  const int Ho = H / 2, Wo = W / 2;
  Node n;
  n.op = Op::kMaxpool2;
  n.inputs = {x};
  n.out = Tensor({batch, c, Ho, Wo});
  PoolCtx ctx;
  ctx.argmax.resize(static_cast<std::size_t>(n.out.numel()));
  std::int64_t oi = 0;
  for (int b = 0; b < batch; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const std::int64_t base = (static_cast<std::int64_t>(b) * c + ch) * H * W;
      for (int y = 0; y < Ho; ++y) {
        for (int xx = 0; xx < Wo; ++xx) {
          double best = -1.0;
          std::int64_t besti = -1;
          // Strict > keeps the first element on ties (row-major window order).
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const std::int64_t idx = base + static_cast<std::int64_t>(2 * y + dy) * W + (2 * xx + dx);
              if (besti < 0 || tx[idx] > best) {
                best = tx[idx];
                besti = idx;
              }
            }
          }
          n.out[oi] = best;
          ctx.argmax[static_cast<std::size_t>(oi)] = besti;
          ++oi;
        }
      }
    }
  }
  n.ctx = std::move(ctx);
  return push(std::move(n), true);
}

int Tape::flatten(int x) {
  const Tensor& tx = value(x);
  if (tx.ndim() < 2) {
    throw std::invalid_argument("flatten: input must have a batch dimension, got " + shape_str(tx.shape));
  }
  int rest = 1;
  for (int i = 1; i < tx.ndim(); ++i) rest *= tx.dim(i);
  Node n;
  n.op = Op::kFlatten;
  n.inputs = {x};
  n.out = Tensor({tx.dim(0), rest}, tx.data);
  return push(std::move(n), true);
}

int Tape::softmax_cross_entropy(int logits, std::vector<int> labels) {
  const Tensor& tl = value(logits);
  if (tl.ndim() != 2) {
    throw std::invalid_argument("softmax_cross_entropy: logits must be [batch,classes], got " +
                                shape_str(tl.shape));
  }
  const int batch = tl.dim(0), classes = tl.dim(1);
  if (static_cast<int>(labels.size()) != batch) {
    throw std::invalid_argument("softmax_cross_entropy: label count " + std::to_string(labels.size()) +
                                " != batch " + std::to_string(batch));
  }
  for (int b = 0; b < batch; ++b) {
    if (labels[static_cast<std::size_t>(b)] < 0 || labels[static_cast<std::size_t>(b)] >= classes) {
      throw std::invalid_argument("softmax_cross_entropy: label " +
                                  std::to_string(labels[static_cast<std::size_t>(b)]) +
                                  " out of range [0," + std::to_string(classes) + ")");
    }
  }
  Node n;
  n.op = Op::kSoftmaxXent;
  n.inputs = {logits};
  XentCtx ctx;
  ctx.labels = std::move(labels);
  ctx.probs = softmax(tl);
  double loss = 0.0;
  for (int b = 0; b < batch; ++b) {
    const double* row = &tl.data[static_cast<std::size_t>(b) * classes];
    double mx = row[0];
    for (int c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
    double denom = 0.0;
    for (int c = 0; c < classes; ++c) denom += std::exp(row[c] - mx);
    loss += std::log(denom) - (row[ctx.labels[static_cast<std::size_t>(b)]] - mx);
  }
  n.out = Tensor::scalar(loss / batch);
  n.ctx = std::move(ctx);
  return push(std::move(n), true);
}

int Tape::sum(int a) {
  const Tensor& ta = value(a);
  double acc = 0.0;
  for (std::int64_t i = 0; i < ta.numel(); ++i) acc += ta[i];
  Node n;
  n.op = Op::kSum;
  n.inputs = {a};
  n.out = Tensor::scalar(acc);
  return push(std::move(n), true);
}

int Tape::mean(int a) {
  const Tensor& ta = value(a);
  double acc = 0.0;
  for (std::int64_t i = 0; i < ta.numel(); ++i) acc += ta[i];
  Node n;
  n.op = Op::kMean;
  n.inputs = {a};
  n.out = Tensor::scalar(acc / static_cast<double>(ta.numel()));
  return push(std::move(n), true);
}

void Tape::backward(int loss) {
  if (op_count_ == 0) throw std::runtime_error("backward: empty tape");
  if (loss < 0 || loss >= static_cast<int>(nodes_.size())) {
    throw std::invalid_argument("backward: unknown node id");
  }
  if (!nodes_[static_cast<std::size_t>(loss)].out.is_scalar()) {
    throw std::invalid_argument("backward: loss is not scalar, shape " +
                                shape_str(nodes_[static_cast<std::size_t>(loss)].out.shape));
  }
  ensure_grad(loss).data[0] += 1.0;
  for (int id = loss; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.grad_live) continue;
    backward_node(n);
  }
}

void Tape::backward_node(Node& n) {
  const Tensor& g = n.grad;
  switch (n.op) {
    case Op::kLeafInput:
      break;
    case Op::kLeafParam: {
      Tensor& pg = n.bound->grad;
      for (std::int64_t i = 0; i < g.numel(); ++i) pg[i] += g[i];
      break;
    }
    case Op::kAdd: {
      Tensor& ga = ensure_grad(n.inputs[0]);
      Tensor& gb = ensure_grad(n.inputs[1]);
      for (std::int64_t i = 0; i < g.numel(); ++i) {
        ga[i] += g[i];
        gb[i] += g[i];
      }
      break;
    }
    case Op::kMul: {
      const Tensor& ta = value(n.inputs[0]);
      const Tensor& tb = value(n.inputs[1]);
      Tensor& ga = ensure_grad(n.inputs[0]);
      Tensor& gb = ensure_grad(n.inputs[1]);
      for (std::int64_t i = 0; i < g.numel(); ++i) {
        ga[i] += g[i] * tb[i];
        gb[i] += g[i] * ta[i];
      }
      break;
    }
    case Op::kScale: {
      Tensor& ga = ensure_grad(n.inputs[0]);
      for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += n.alpha * g[i];
      break;
    }
    case Op::kRelu: {
      const Tensor& ta = value(n.inputs[0]);
      Tensor& ga = ensure_grad(n.inputs[0]);
      for (std::int64_t i = 0; i < g.numel(); ++i) {
        if (ta[i] > 0.0) ga[i] += g[i];
      }
      break;
    }
    case Op::kSilu: {
      const Tensor& ta = value(n.inputs[0]);
      Tensor& ga = ensure_grad(n.inputs[0]);
      for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * silu_derivative_scalar(ta[i]);
      break;
    }
    case Op::kMatmul: {
      const Tensor& ta = value(n.inputs[0]);
      const Tensor& tb = value(n.inputs[1]);
      Tensor& ga = ensure_grad(n.inputs[0]);
      Tensor& gb = ensure_grad(n.inputs[1]);
      const int m = ta.dim(0), k = ta.dim(1), p = tb.dim(1);
      for (int i = 0; i < m; ++i) {
        for (int t = 0; t < k; ++t) {
          double acc = 0.0;
          for (int j = 0; j < p; ++j) acc += g[static_cast<std::int64_t>(i) * p + j] * tb[static_cast<std::int64_t>(t) * p + j];
          ga[static_cast<std::int64_t>(i) * k + t] += acc;
        }
      }
      for (int t = 0; t < k; ++t) {
        for (int j = 0; j < p; ++j) {
          double acc = 0.0;
          for (int i = 0; i < m; ++i) acc += ta[static_cast<std::int64_t>(i) * k + t] * g[static_cast<std::int64_t>(i) * p + j];
          gb[static_cast<std::int64_t>(t) * p + j] += acc;
        }
      }
      break;
    }
    case Op::kLinear: {
      const Tensor& tx = value(n.inputs[0]);
      const Tensor& tw = value(n.inputs[1]);
      Tensor& gx = ensure_grad(n.inputs[0]);
      Tensor& gw = ensure_grad(n.inputs[1]);
      Tensor& gb = ensure_grad(n.inputs[2]);
      const int batch = tx.dim(0), n_in = tx.dim(1), n_out = tw.dim(0);
      for (int b = 0; b < batch; ++b) {
        for (int o = 0; o < n_out; ++o) {
          const double gv = g[static_cast<std::int64_t>(b) * n_out + o];
          gb[o] += gv;
          for (int i = 0; i < n_in; ++i) {
            gx[static_cast<std::int64_t>(b) * n_in + i] += gv * tw[static_cast<std::int64_t>(o) * n_in + i];
            gw[static_cast<std::int64_t>(o) * n_in + i] += gv * tx[static_cast<std::int64_t>(b) * n_in + i];
          }
        }
      }
      break;
    }
    case Op::kConv2d: {
      const Tensor& tx = value(n.inputs[0]);
      const Tensor& tw = value(n.inputs[1]);
      Tensor& gx = ensure_grad(n.inputs[0]);
      Tensor& gw = ensure_grad(n.inputs[1]);
      Tensor& gb = ensure_grad(n.inputs[2]);
      const int batch = tx.dim(0), c_in = tx.dim(1), H = tx.dim(2), W = tx.dim(3);
      const int c_out = tw.dim(0);
      for (int b = 0; b < batch; ++b) {
        for (int co = 0; co < c_out; ++co) {
          for (int y = 0; y < H; ++y) {
            for (int xx = 0; xx < W; ++xx) {
              const double gv = g[((static_cast<std::int64_t>(b) * c_out + co) * H + y) * W + xx];
              gb[co] += gv;
              for (int ci = 0; ci < c_in; ++ci) {
                const std::int64_t xoff = ((static_cast<std::int64_t>(b) * c_in + ci) * H) * W;
                const std::int64_t woff = ((static_cast<std::int64_t>(co) * c_in + ci) * 3) * 3;
                for (int ky = 0; ky < 3; ++ky) {
                  const int sy = y + ky - 1;
                  if (sy < 0 || sy >= H) continue;
                  for (int kx = 0; kx < 3; ++kx) {
                    const int sx = xx + kx - 1;
                    if (sx < 0 || sx >= W) continue;
                    const std::int64_t xi = xoff + static_cast<std::int64_t>(sy) * W + sx;
                    gx[xi] += gv * tw[woff + ky * 3 + kx];
                    gw[woff + ky * 3 + kx] += gv * tx[xi];
                  }
                }
              }
            }
          }
        }
      }
      break;
    }
    case Op::kMaxpool2: {
      Tensor& gx = ensure_grad(n.inputs[0]);
      const auto& ctx = std::get<PoolCtx>(n.ctx);
      for (std::int64_t i = 0; i < g.numel(); ++i) gx[ctx.argmax[static_cast<std::size_t>(i)]] += g[i];
      break;
    }
    case Op::kFlatten: {
      Tensor& gx = ensure_grad(n.inputs[0]);
      for (std::int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
      break;
    }
    case Op::kSoftmaxXent: {
      Tensor& gl = ensure_grad(n.inputs[0]);
      const auto& ctx = std::get<XentCtx>(n.ctx);
      const int batch = ctx.probs.dim(0), classes = ctx.probs.dim(1);
      const double gv = g.data[0] / batch;
      for (int b = 0; b < batch; ++b) {
        for (int c = 0; c < classes; ++c) {
          const double onehot = c == ctx.labels[static_cast<std::size_t>(b)] ? 1.0 : 0.0;
          gl[static_cast<std::int64_t>(b) * classes + c] +=
              gv * (ctx.probs[static_cast<std::int64_t>(b) * classes + c] - onehot);
        }
      }
      break;
    }
    case Op::kSum: {
      Tensor& ga = ensure_grad(n.inputs[0]);
      const double gv = g.data[0];
      for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] += gv;
      break;
    }
    case Op::kMean: {
      Tensor& ga = ensure_grad(n.inputs[0]);
      const double gv = g.data[0] / static_cast<double>(ga.numel());
      for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] += gv;
      break;
    }
    case Op::kKanLinear:
      kan_backward(n);
      break;
  }
}

}  // namespace kan
