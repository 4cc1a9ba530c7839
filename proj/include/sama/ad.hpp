#pragma once

// Tensor-level reverse-mode differentiation. Every differentiable operation
// appends a node holding its value and a vector-Jacobian product closure;
// Tape::backward walks the nodes once in reverse order.

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "sama/core.hpp"

namespace sama::ad {

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const;
  std::size_t size() const { return value().size(); }
};

class Tape {
 public:
  /// Closure run during backward. `out_grad` is the cotangent of this node.
  using Vjp = std::function<void(Tape& tape, const Tensor& out_grad)>;

  Var constant(Tensor value);
  /// Differentiable leaf not tied to a Param (grad readable via grad()).
  Var variable(Tensor value);
  /// Leaf bound to a Param; backward accumulates into p.grad.
  Var param(Param& p);
  /// With gradients disabled, params become constants and no closures are kept.
  void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
  bool grad_enabled() const { return grad_enabled_; }
  /// Appends an operation node. `vjp` may be empty when no input needs grad.
  Var record(Tensor value, std::initializer_list<Var> inputs, Vjp vjp);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }
  /// Gradient slot of an input, allocated on first use; nullptr when the node
  /// does not need a gradient (constants and anything derived only from them).
  Tensor* grad_slot(Var v);
  /// Gradient after backward (zeros if nothing flowed into v).
  Tensor grad(Var v) const;

  /// Seeds `output` with `cotangent` and propagates to every leaf.
  void backward(Var output, const Tensor& cotangent);
  /// Scalar output, cotangent 1.
  void backward(Var output);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool needs_grad = false;
    Param* param = nullptr;
    Vjp vjp;
  };
  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
};

/// Multiply-accumulate counter for matrix-like kernels on this thread.
std::uint64_t& mac_counter();

// ---------------------------------------------------------------------------
// elementwise and shape ops

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
/// x[..., d] + v[d]
Var add_last(Var x, Var v);
/// x[..., d] * v[d]
Var mul_last(Var x, Var v);
Var softplus(Var x);
Var exp(Var x);
/// tanh-approximation GELU
Var gelu(Var x);
Var sum(Var x);
Var mean(Var x);
Var reshape(Var x, Shape shape);
/// [A][B][C][D] -> [A][C][B][D]
Var swap_axes12(Var x);
/// y[s][t] = x[s][t-1] along axis 1 of [S][L][d], zero at t = 0.
Var shift_prev(Var x);

// ---------------------------------------------------------------------------
// linear algebra

/// x[..., in] * w[in][out] (+ b[out])
Var affine(Var x, Var w, std::optional<Var> b = std::nullopt);
/// y[s][a] = sum_k m[a][k] * x[s][k] for x [S][L][d], m [L][L].
Var mix_rows(Var x, Var m);
/// Softmax over the last axis (max-shifted; the shift carries no gradient).
Var softmax_last(Var x);
/// Per-token normalisation over the last axis followed by gamma/beta.
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);

/// Softplus on a plain double, stable for large |x|.
double softplus_value(double x);
double sigmoid_value(double x);

}  // namespace sama::ad
