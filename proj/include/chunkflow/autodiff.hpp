// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "chunkflow/tensor.hpp"

namespace chunkflow {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode gradient tape. One tape per training step; with gradients
// disabled it only records values (inference rollouts).
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& grad_out)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var constant(Tensor value);
  // Leaf that receives a gradient (a constant when gradients are disabled).
  Var leaf(Tensor value);

  // Records an op result; the backward closure is kept only when some input
  // requires a gradient.
  Var record(Tensor value, std::span<const Var> inputs, Backward backward);

  // Seeds d(root)/d(root) = 1 for a single-element root.
  void backward(Var root);
  // Gradient of the last backward() root with respect to v (zeros if none flowed).
  Tensor grad(Var v) const;
  void accumulate(std::size_t id, const Tensor& g);
  void accumulate(std::size_t id, std::size_t offset, std::span<const double> g);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Backward backward;
    bool requires_grad = false;
  };
  bool grad_enabled_;
  std::deque<Node> nodes_;  // deque keeps value references stable
};

// Differentiable operations. All shapes are checked; "matrix" means the
// rows() x cols() view of a tensor.
namespace ad {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var matmul(Var a, Var b);
Var add_bias(Var x, Var bias);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var gelu(Var x);
// Multi-head attention over row-major q [Lq x D], k/v [Lk x D]. `bias` holds
// [heads x Lq x Lk] additive logits; -inf entries are masked out.
Var attention(Var q, Var k, Var v, const Tensor& bias, std::size_t heads);
Var sum(Var x);
Var sum_squares(Var x);
Var stop_gradient(Var x);
Var concat_rows(std::span<const Var> parts);
Var gather_rows(Var x, std::span<const std::size_t> rows);
Var reshape(Var x, Shape shape);
// sum_i weights[i] * scalars[i] for single-element inputs.
Var weighted_sum(std::span<const Var> scalars, std::span<const double> weights);
// Selects rows of `a` where take_b[r] is false and rows of `b` otherwise.
Var select_rows(Var a, Var b, const std::vector<bool>& take_b);

}  // namespace ad

using DiffValue = Var;

inline DiffValue stop_gradient(DiffValue v) { return ad::stop_gradient(v); }

}  // namespace chunkflow
