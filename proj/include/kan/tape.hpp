#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "kan/tensor.hpp"

namespace kan {

class KanLinearLayer;

/// A learnable tensor with a persistent gradient buffer. Gradients accumulate
/// across backward passes and are zeroed explicitly (never implicitly).
struct Parameter {
  Tensor value;
  Tensor grad;
  std::string name;

  Parameter() = default;
  explicit Parameter(Tensor v, std::string n = "")
      : value(std::move(v)), grad(value.shape), name(std::move(n)) {}

  void zero_grad() { grad.fill(0.0); }
};

/// Reverse-mode gradient tape. Every op records its output and saved context
/// in order; backward() replays the list in exact reverse, accumulating
/// gradients with a fixed left-to-right summation order so results are
/// bit-deterministic. A tape is single-owner and rebuilt per step.
class Tape {
 public:
  /// Leaf holding input data (no gradient routed to a Parameter).
  int input(Tensor x);

  /// Leaf bound to a Parameter; repeated calls with the same Parameter reuse
  /// one node. After backward(), the node's gradient is added into p.grad.
  int param(Parameter& p);

  // Elementwise primitives (shapes must match exactly).
  int add(int a, int b);
  int mul(int a, int b);
  int scale(int a, double alpha);
  int relu(int a);
  int silu(int a);

  /// [m,k] x [k,n] -> [m,n].
  int matmul(int a, int b);

  /// x:[batch,n_in], weight:[n_out,n_in], bias:[n_out] -> [batch,n_out].
  int linear(int x, Parameter& weight, Parameter& bias);

  /// x:[batch,c_in,H,W], weight:[c_out,c_in,3,3], bias:[c_out]; stride 1,
  /// zero padding 1, so spatial dims are preserved.
  int conv2d(int x, Parameter& weight, Parameter& bias);

  /// 2x2 window max, stride 2. H and W must be even. Gradient goes to the
  /// first max element in row-major window order.
  int maxpool2(int x);

  /// [batch, c, H, W] -> [batch, c*H*W] view copy.
  int flatten(int x);

  /// Mean over batch of -log softmax(logits)[label]; scalar output.
  int softmax_cross_entropy(int logits, std::vector<int> labels);

  int sum(int a);
  int mean(int a);

  /// Spline-edge layer application; defined in kan_linear.cpp.
  int kan_linear(int x, KanLinearLayer& layer);

  /// Reverse sweep from a scalar loss node. Accumulates into Parameter grad
  /// buffers; parameters that did not influence the loss are left untouched.
  void backward(int loss);

  const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].out; }

  /// d loss / d node value; zeros (in the node's shape) if the node is off
  /// the loss path.
  const Tensor& grad(int id) { return ensure_grad(id); }

  /// Number of recorded primitive operations (leaves excluded).
  int op_count() const { return op_count_; }

 private:
  friend class KanLinearLayer;

  enum class Op {
    kLeafInput,
    kLeafParam,
    kAdd,
    kMul,
    kScale,
    kRelu,
    kSilu,
    kMatmul,
    kLinear,
    kConv2d,
    kMaxpool2,
    kFlatten,
    kSoftmaxXent,
    kSum,
    kMean,
    kKanLinear,
  };

  struct XentCtx {
    std::vector<int> labels;
    Tensor probs;  // [batch, C]
  };

  struct PoolCtx {
    std::vector<std::int64_t> argmax;  // flat input index per output element
  };

  struct KanCtx {
    KanLinearLayer* layer = nullptr;
    std::vector<int> spans;      // first nonzero basis index per (sample, input)
    std::vector<double> basis;   // (degree+1) nonzero values per (sample, input)
  };

  struct Node {
    Op op;
    std::vector<int> inputs;
    Tensor out;
    Tensor grad;
    bool grad_live = false;  // true once touched by the sweep
    double alpha = 0.0;      // kScale
    Parameter* bound = nullptr;
    std::variant<std::monostate, XentCtx, PoolCtx, KanCtx> ctx;
  };

  int push(Node n, bool is_op);
  Tensor& ensure_grad(int id);
  void backward_node(Node& n);
  void kan_backward(Node& n);  // defined in kan_linear.cpp

  static void check_same_shape(const char* prim, const Tensor& a, const Tensor& b);

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_nodes_;
  int op_count_ = 0;
};

/// Row-wise softmax with max subtraction; rows sum to 1.
Tensor softmax(const Tensor& logits);

double silu_scalar(double z);
double silu_derivative_scalar(double z);

}  // namespace kan
