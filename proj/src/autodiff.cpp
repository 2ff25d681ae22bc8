#include "latentadv/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "latentadv/errors.hpp"

namespace latentadv::ad {

const Tensor& Var::value() const { return tape_->value(*this); }

const Tensor& Gradients::operator[](Var v) const {
  require(v.id() < by_node_.size() && is_variable_[v.id()], ErrorCode::invalid_argument,
          "gradient requested for a node that is not a tape variable");
  return by_node_[v.id()];
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), nullptr, {}, {}, false, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant_ref(const Tensor& value) {
  nodes_.push_back(Node{Tensor(), &value, {}, {}, false, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), nullptr, {}, {}, true, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::span<const Var> parents, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  for (const Var& p : parents) {
    require(&p.tape() == this, ErrorCode::invalid_argument, "op mixes variables from different tapes");
    node.parents.push_back(p.id());
    node.requires_grad = node.requires_grad || nodes_[p.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(Var output) {
  require(!consumed_, ErrorCode::tape_consumed, "backward() already ran on this tape");
  require(&output.tape() == this, ErrorCode::invalid_argument, "output belongs to another tape");
  require(value(output).size() == 1, ErrorCode::shape_mismatch,
          "backward() needs a scalar output, got " + shape_string(value(output).shape()));
  consumed_ = true;

  Gradients result;
  result.by_node_.resize(nodes_.size());
  result.is_variable_.resize(nodes_.size());
  auto& grads = result.by_node_;
  grads[output.id()] = Tensor(value(output).shape(), 1.0);

  std::vector<Tensor> parent_grads;
  for (std::size_t id = output.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    result.is_variable_[id] = node.is_variable;
    if (!node.backward || grads[id].empty()) continue;
    parent_grads.clear();
    for (std::size_t pid : node.parents) parent_grads.emplace_back(value(Var(this, pid)).shape());
    node.backward(grads[id], parent_grads);
    for (std::size_t k = 0; k < node.parents.size(); ++k) {
      const std::size_t pid = node.parents[k];
      if (!nodes_[pid].requires_grad) continue;
      if (grads[pid].empty()) {
        grads[pid] = std::move(parent_grads[k]);
      } else {
        auto dst = grads[pid].data();
        auto src = parent_grads[k].data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
      }
    }
    if (!node.is_variable) grads[id] = Tensor();
  }
  // Variables the output does not depend on get an explicit zero gradient.
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    if (nodes_[id].is_variable) {
      result.is_variable_[id] = true;
      if (grads[id].empty()) grads[id] = Tensor(nodes_[id].value.shape(), 0.0);
    }
  }
  return result;
}

double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

enum class Broadcast { same, left_scalar, right_scalar };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::same;
  if (a.is_scalar()) return Broadcast::left_scalar;
  if (b.is_scalar()) return Broadcast::right_scalar;
  throw Error(ErrorCode::shape_mismatch, std::string(op) + ": incompatible shapes " + shape_string(a.shape()) +
                                             " and " + shape_string(b.shape()));
}

template <class F>
Tensor zip(const Tensor& a, const Tensor& b, Broadcast kind, F f) {
  const Tensor& like = kind == Broadcast::left_scalar ? b : a;
  Tensor out(like.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = kind == Broadcast::left_scalar ? a[0] : a[i];
    const double y = kind == Broadcast::right_scalar ? b[0] : b[i];
    out[i] = f(x, y);
  }
  return out;
}

// Reduces a full-size gradient onto an operand that may have been broadcast.
void accumulate(Tensor& dst, std::size_t i, double g) {
  if (dst.is_scalar()) dst[0] += g;
  else dst[i] += g;
}

template <class F, class D>
Var unary(Var a, F f, D derivative) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return a.tape().record(std::move(out), {a}, [a, derivative](const Tensor& g, std::span<Tensor> grads) {
    const Tensor& x = a.value();
    for (std::size_t i = 0; i < x.size(); ++i) grads[0][i] = g[i] * derivative(x[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  Tensor out = kernels::matmul(a.value(), b.value());
  if (a.value().rank() == 1 && b.value().rank() == 2) out = out.reshaped({b.value().cols()});
  return a.tape().record(std::move(out), {a, b}, [a, b](const Tensor& g, std::span<Tensor> grads) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const Tensor g2 = g.reshaped({av.rows(), bv.cols()});
    grads[0] = kernels::matmul_nt(g2, bv).reshaped(av.shape());
    grads[1] = kernels::matmul_tn(av.reshaped({av.rows(), av.cols()}), g2).reshaped(bv.shape());
  });
}

Var add(Var a, Var b) {
  const auto kind = broadcast_kind(a.value(), b.value(), "add");
  return a.tape().record(zip(a.value(), b.value(), kind, [](double x, double y) { return x + y; }), {a, b},
                         [](const Tensor& g, std::span<Tensor> grads) {
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             accumulate(grads[0], i, g[i]);
                             accumulate(grads[1], i, g[i]);
                           }
                         });
}

Var sub(Var a, Var b) {
  const auto kind = broadcast_kind(a.value(), b.value(), "sub");
  return a.tape().record(zip(a.value(), b.value(), kind, [](double x, double y) { return x - y; }), {a, b},
                         [](const Tensor& g, std::span<Tensor> grads) {
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             accumulate(grads[0], i, g[i]);
                             accumulate(grads[1], i, -g[i]);
                           }
                         });
}

Var mul(Var a, Var b) {
  const auto kind = broadcast_kind(a.value(), b.value(), "mul");
  return a.tape().record(zip(a.value(), b.value(), kind, [](double x, double y) { return x * y; }), {a, b},
                         [a, b, kind](const Tensor& g, std::span<Tensor> grads) {
                           const Tensor& av = a.value();
                           const Tensor& bv = b.value();
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             const double x = kind == Broadcast::left_scalar ? av[0] : av[i];
                             const double y = kind == Broadcast::right_scalar ? bv[0] : bv[i];
                             accumulate(grads[0], i, g[i] * y);
                             accumulate(grads[1], i, g[i] * x);
                           }
                         });
}

Var div(Var a, Var b) {
  const auto kind = broadcast_kind(a.value(), b.value(), "div");
  return a.tape().record(zip(a.value(), b.value(), kind, [](double x, double y) { return x / y; }), {a, b},
                         [a, b, kind](const Tensor& g, std::span<Tensor> grads) {
                           const Tensor& av = a.value();
                           const Tensor& bv = b.value();
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             const double x = kind == Broadcast::left_scalar ? av[0] : av[i];
                             const double y = kind == Broadcast::right_scalar ? bv[0] : bv[i];
                             accumulate(grads[0], i, g[i] / y);
                             accumulate(grads[1], i, -g[i] * x / (y * y));
                           }
                         });
}

Var scale(Var a, double alpha) {
  return unary(a, [alpha](double x) { return alpha * x; }, [alpha](double) { return alpha; });
}

Var add_scalar(Var a, double alpha) {
  return unary(a, [alpha](double x) { return x + alpha; }, [](double) { return 1.0; });
}

Var add_bias(Var x, Var bias) {
  return x.tape().record(kernels::add_bias(x.value(), bias.value()), {x, bias},
                         [](const Tensor& g, std::span<Tensor> grads) {
                           const std::size_t n = grads[1].size();
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             grads[0][i] = g[i];
                             grads[1][i % n] += g[i];
                           }
                         });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0 ? x : 0.0; }, [](double x) { return x > 0 ? 1.0 : 0.0; });
}

Var leaky_relu(Var a, double slope) {
  return unary(a, [slope](double x) { return x > 0 ? x : slope * x; },
               [slope](double x) { return x > 0 ? 1.0 : slope; });
}

Var sigmoid(Var a) {
  return unary(a, sigmoid_value, [](double x) {
    const double s = sigmoid_value(x);
    return s * (1.0 - s);
  });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(std::max(x, kLogFloor)); },
               [](double x) { return x > kLogFloor ? 1.0 / x : 0.0; });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(std::min(x, kExpCeiling)); },
               [](double x) { return x < kExpCeiling ? std::exp(x) : 0.0; });
}

Var sqrt(Var a) {
  return unary(a, [](double x) { return std::sqrt(std::max(x, 0.0)); },
               [](double x) { return x > 0 ? 0.5 / std::sqrt(x) : 0.0; });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var clamp01(Var a) {
  return unary(a, [](double x) { return std::clamp(x, 0.0, 1.0); },
               [](double x) { return x > 0.0 && x < 1.0 ? 1.0 : 0.0; });
}

Var sum(Var a) {
  return a.tape().record(Tensor::scalar(kernels::sum(a.value())), {a}, [](const Tensor& g, std::span<Tensor> grads) {
    for (double& v : grads[0].data()) v = g[0];
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return a.tape().record(Tensor::scalar(kernels::sum(a.value()) / n), {a},
                         [n](const Tensor& g, std::span<Tensor> grads) {
                           for (double& v : grads[0].data()) v = g[0] / n;
                         });
}

Var softmax(Var logits) {
  Tensor out = kernels::softmax_rows(logits.value());
  Tensor saved = out;
  return logits.tape().record(std::move(out), {logits},
                              [saved = std::move(saved)](const Tensor& g, std::span<Tensor> grads) {
                                const std::size_t m = saved.rows(), n = saved.cols();
                                for (std::size_t r = 0; r < m; ++r) {
                                  double inner = 0.0;
                                  for (std::size_t j = 0; j < n; ++j) inner += g[r * n + j] * saved[r * n + j];
                                  for (std::size_t j = 0; j < n; ++j)
                                    grads[0][r * n + j] = saved[r * n + j] * (g[r * n + j] - inner);
                                }
                              });
}

Var log_softmax(Var logits) {
  Tensor out = kernels::log_softmax_rows(logits.value());
  Tensor probs = kernels::softmax_rows(logits.value());
  return logits.tape().record(std::move(out), {logits},
                              [probs = std::move(probs)](const Tensor& g, std::span<Tensor> grads) {
                                const std::size_t m = probs.rows(), n = probs.cols();
                                for (std::size_t r = 0; r < m; ++r) {
                                  double total = 0.0;
                                  for (std::size_t j = 0; j < n; ++j) total += g[r * n + j];
                                  for (std::size_t j = 0; j < n; ++j)
                                    grads[0][r * n + j] = g[r * n + j] - probs[r * n + j] * total;
                                }
                              });
}

Var reshape(Var a, Tensor::Shape shape) {
  return a.tape().record(a.value().reshaped(std::move(shape)), {a}, [](const Tensor& g, std::span<Tensor> grads) {
    std::copy(g.data().begin(), g.data().end(), grads[0].data().begin());
  });
}

Var normalize_sum(Var a) {
  const double total = kernels::sum(a.value());
  require(total > 0.0, ErrorCode::invalid_argument, "normalize_sum needs a positive total");
  Tensor out = kernels::scale(a.value(), 1.0 / total);
  Tensor saved = out;
  return a.tape().record(std::move(out), {a},
                         [saved = std::move(saved), total](const Tensor& g, std::span<Tensor> grads) {
                           const double inner = kernels::dot(g, saved);
                           for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] = (g[i] - inner) / total;
                         });
}

}  // namespace latentadv::ad
