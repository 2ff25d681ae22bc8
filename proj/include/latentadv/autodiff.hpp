#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "latentadv/tensor.hpp"

namespace latentadv::ad {

class Tape;

// Handle to a value recorded on a tape. Cheap to copy; only valid while the
// owning tape is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Backward rule of a recorded op: given dL/d(output), add dL/d(parent_k) into
// parent_grads[k]. parent_grads entries arrive zero-initialized with the
// parent's shape.
using BackwardFn = std::function<void(const Tensor& out_grad, std::span<Tensor> parent_grads)>;

class Gradients {
 public:
  // Gradient of the differentiated output w.r.t. a variable of the tape.
  const Tensor& operator[](Var v) const;

 private:
  friend class Tape;
  std::vector<Tensor> by_node_;
  std::vector<bool> is_variable_;
};

// Linear record of primitive ops. Nodes are appended in evaluation order, so
// the record is already topologically sorted and the reverse pass simply walks
// it backwards.
//
// A tape supports exactly one backward pass; a second call throws
// ErrorCode::tape_consumed.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Borrows `value` without copying; it must outlive the tape.
  Var constant_ref(const Tensor& value);
  Var variable(Tensor value);

  // Appends a custom op. Ops with no grad-requiring parent become constants.
  Var record(Tensor value, std::span<const Var> parents, BackwardFn backward);
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward) {
    return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(backward));
  }

  const Tensor& value(Var v) const {
    const Node& node = nodes_[v.id()];
    return node.borrowed ? *node.borrowed : node.value;
  }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Gradients backward(Var output);

 private:
  struct Node {
    Tensor value;
    const Tensor* borrowed = nullptr;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_variable = false;
  };

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// --- differentiable ops -------------------------------------------------------

Var matmul(Var a, Var b);
// Binary elementwise ops accept equal shapes or a scalar on either side.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double alpha);
Var add_scalar(Var a, double alpha);
Var add_bias(Var x, Var bias);  // x[m×n] + bias[n] on every row

inline constexpr double kLeakySlope = 0.2;
inline constexpr double kLogFloor = 1e-30;
inline constexpr double kExpCeiling = 700.0;

Var relu(Var a);
Var leaky_relu(Var a, double slope = kLeakySlope);
Var sigmoid(Var a);
Var log(Var a);  // log(max(a, 1e-30))
Var exp(Var a);  // exp(min(a, 700))
Var sqrt(Var a);  // derivative at 0 is taken as 0
Var square(Var a);
Var clamp01(Var a);

Var sum(Var a);
Var mean(Var a);
Var softmax(Var logits);      // along the last axis
Var log_softmax(Var logits);  // along the last axis
Var reshape(Var a, Tensor::Shape shape);
Var normalize_sum(Var a);  // a / Σa

// Plain-value helpers so forward-only code can share the activation math.
double sigmoid_value(double x);

}  // namespace latentadv::ad
