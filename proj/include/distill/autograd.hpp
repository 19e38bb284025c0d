#pragma once

// Reverse-mode differentiation over a recorded computation (a Tape).
//
// A Tape owns every value produced while it is alive; Var is a cheap handle
// into it. Operations are appended in evaluation order, so reverse index
// order is a valid topological order for the backward sweep. backward() may
// run once per tape; a second call throws ContractError.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <vector>

#include "distill/sparse.hpp"
#include "distill/tensor.hpp"

namespace distill {

class Tape;

class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  /// Gradient of the loss w.r.t. this value; zeros if nothing flowed here.
  const Tensor& grad() const;
  bool requires_grad() const;
  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Receives the gradient flowing into the node; accumulates into parents.
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Tracked leaf (a parameter).
  Var variable(Tensor value);
  /// Untracked leaf; no gradient is ever computed for it.
  Var constant(Tensor value);
  /// Appends an operation result. The node is tracked iff any parent is.
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn);
  Var record(Tensor value, const std::vector<Var>& parents, BackwardFn fn);

  void backward(Var loss);
  bool backward_done() const noexcept { return backward_done_; }

  const Tensor& value(const Var& v) const { return nodes_[v.id()].value; }
  const Tensor& grad(const Var& v);
  bool requires_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }

  /// grad(v) += g, if v is tracked. Shapes must agree.
  void accumulate(const Var& v, const Tensor& g);
  /// Mutable gradient buffer of a tracked node, allocated on first use.
  Tensor& grad_buffer(const Var& v);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;  // references stay valid while the tape grows
  bool backward_done_ = false;
};

// ---- operations ----------------------------------------------------------
// All binary operations require both operands on the same tape.

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
/// Elementwise product.
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
/// x[N x C] + bias[1 x C] broadcast over rows.
Var add_row_bias(const Var& x, const Var& bias);
/// Elementwise product with a constant tensor (dropout masks, selectors).
Var mul_constant(const Var& a, const Tensor& c);

Var relu(const Var& x);
Var leaky_relu(const Var& x, double slope);
/// tanh-approximation GELU; smooth, so finite differences are reliable.
Var gelu(const Var& x);

/// Sum of all entries as a shape-[1] scalar.
Var sum(const Var& x);
Var mean(const Var& x);

Var softmax_rows(const Var& x);
Var log_softmax_rows(const Var& x);

/// s * dense with s a constant sparse matrix.
Var spmm(std::shared_ptr<const CsrMatrix> s, const Var& dense);

/// Row-wise layer normalization with learned scale and offset (each 1 x cols).
Var layer_norm(const Var& x, const Var& gain, const Var& offset, double eps = 1e-5);

Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(const Var& x, std::size_t start, std::size_t width);

/// Inverted dropout: zero each entry with probability p, scale survivors by
/// 1/(1-p). The mask is a pure function of (seed, entry index).
Var dropout(const Var& x, double p, std::uint64_t seed);

struct AttentionDropout {
  double p = 0.0;
  std::uint64_t seed = 0;
};

/// softmax(Q K^T / sqrt(d_k)) V with row-wise softmax over keys. Optional
/// inverted dropout on the attention weights. When `weights_out` is given,
/// the (pre-dropout) attention matrix is copied into it.
Var scaled_dot_attention(const Var& q, const Var& k, const Var& v, AttentionDropout drop = {},
                         Tensor* weights_out = nullptr);

/// Dropout settings for a training-mode forward; p = 0 disables it.
struct ForwardDropout {
  double p = 0.0;
  std::uint64_t seed = 0;
};

/// Layer input: either a tracked dense matrix or a constant sparse one
/// (raw features), so the first layer can use sparse products.
class LayerInput {
 public:
  LayerInput(Var dense) : dense_(dense) {}  // NOLINT(google-explicit-constructor)
  LayerInput(Tape& tape, std::shared_ptr<const CsrMatrix> sparse) : tape_(&tape), sparse_(std::move(sparse)) {}

  /// input * w
  Var project(const Var& w) const;
  std::size_t cols() const;

 private:
  Var dense_;
  Tape* tape_ = nullptr;
  std::shared_ptr<const CsrMatrix> sparse_;
};

}  // namespace distill
