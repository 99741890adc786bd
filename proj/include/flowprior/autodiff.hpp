#pragma once

// Reverse-mode differentiation over a fixed vocabulary of tensor operations.
//
// A Tape records every operation of one forward pass. Nodes are appended in
// evaluation order, so node ids are already a topological order and backprop
// simply walks them backwards. A tape is rebuilt for each forward pass and
// must stay on the thread that created it.

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <unordered_map>
#include <vector>

#include "flowprior/tensor.hpp"

namespace flowprior {

class Tape;

// Handle to a node on a tape.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  int id() const { return id_; }
  Tape& tape() const { return *tape_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Gradients of a scalar loss with respect to every requires_grad leaf.
class GradientMap {
 public:
  const Tensor& at(Var leaf) const;
  bool contains(Var leaf) const { return grads_.count(leaf.id()) != 0; }
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Tape;
  std::map<int, Tensor> grads_;
};

// Parent gradient accumulators handed to an op's backward function. Entries
// for parents that need no gradient are null.
class GradSink {
 public:
  explicit GradSink(std::vector<Tensor*> slots) : slots_(std::move(slots)) {}
  Tensor* operator[](std::size_t parent) const { return slots_[parent]; }

 private:
  std::vector<Tensor*> slots_;
};

// Receives the node's own output value and the gradient flowing into it.
using BackwardFn =
    std::function<void(const Tape&, const Tensor& out, const Tensor& grad_out, GradSink&)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value, bool requires_grad = true);

  // Model parameter. The same tensor object always maps to the same node, so
  // a parameter used on several paths accumulates one gradient.
  Var param(const Tensor& parameter);
  void set_trainable_params(bool trainable) { trainable_params_ = trainable; }
  bool trainable_params() const { return trainable_params_; }

  // Leaf node already registered for `parameter`, if any.
  Var find_param(const Tensor& parameter);

  Var record(Tensor value, const std::vector<Var>& parents, BackwardFn backward);

  GradientMap backprop(Var loss) const;

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

 private:
  struct Node {
    Tensor value;
    std::vector<int> parents;
    BackwardFn backward;
    bool requires_grad = false;
    bool leaf = false;
  };

  Var push(Node node);

  std::deque<Node> nodes_;  // stable references: values stay valid while recording
  std::unordered_map<const Tensor*, int> params_;
  bool trainable_params_ = false;
};

namespace ops {

enum class ElementwiseOp { add, sub, mul, exp, log, relu, scale };
enum class ReduceOp { sum, mean, l2_norm };

// Binary ops accept equal shapes or a single-element operand on either side.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
Var neg(Var a);
Var exp(Var a);
Var log(Var a);  // throws DomainError on non-positive input
Var relu(Var a);
Var square(Var a);

// Dispatch by tag; `scale` reads its factor from `factor`.
Var elementwise(ElementwiseOp op, Var a, Var b = {}, double factor = 1.0);

Var sum(Var a);
Var mean(Var a);
Var l2_norm(Var a);  // gradient at the origin is taken as zero
Var reduce(ReduceOp op, Var a);

// Reductions over all axes but the first; result has shape (N).
Var sum_per_sample(Var a);
Var l2_norm_per_sample(Var a);

// 2-D convolution, stride 1. kernel 3 zero-pads by one so H and W are kept.
// weight (C_out, C_in, k, k); bias (C_out) or an invalid Var for no bias.
Var conv2d(Var input, Var weight, Var bias, int kernel);

// Per-channel broadcast over an (N, C, H, W) tensor; `v` has shape (C).
Var mul_channel(Var x, Var v);
Var add_channel(Var x, Var v);

// Repeats a (1, ...) tensor `n` times along the first axis.
Var tile_batch(Var x, int n);

Var slice_channels(Var x, int begin, int end);
Var concat_channels(Var a, Var b);
Var reshape(Var x, Shape shape);

// Space-to-depth by 2: (N, C, H, W) -> (N, 4C, H/2, W/2). Output channel
// c*4 + k holds tile position k of input channel c, tiles read row-major.
Var squeeze2(Var x);
Var unsqueeze2(Var x);

// Square matrices.
Var mat_inverse(Var m);
Var log_abs_det(Var m);

// Multiplies by a fixed 0/1 keep mask and rescales by 1/(1-p).
Var dropout(Var x, const Tensor& keep_mask, double p);

}  // namespace ops

// Max over coordinates of |analytic - central difference| / max(1, |central
// difference|) for a scalar-valued f.
double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double step);

// Plain-tensor versions of the space-to-depth permutation.
Tensor squeeze2(const Tensor& x);
Tensor unsqueeze2(const Tensor& x);

}  // namespace flowprior
