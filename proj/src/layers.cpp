#include "latentadv/layers.hpp"

#include <algorithm>
#include <cmath>

#include "latentadv/errors.hpp"

namespace latentadv {

std::string_view to_string(Activation activation) {
  switch (activation) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::sigmoid: return "sigmoid";
  }
  return "identity";
}

Activation activation_from_string(std::string_view tag) {
  if (tag == "identity") return Activation::identity;
  if (tag == "relu") return Activation::relu;
  if (tag == "leaky_relu") return Activation::leaky_relu;
  if (tag == "sigmoid") return Activation::sigmoid;
  throw Error(ErrorCode::invalid_argument, "unknown activation tag '" + std::string(tag) + "'");
}

bool operator==(const DenseLayer& a, const DenseLayer& b) {
  return a.activation == b.activation && a.weight == b.weight && a.bias == b.bias;
}

bool operator==(const LayerStack& a, const LayerStack& b) { return a.layers_ == b.layers_; }

LayerStack::LayerStack(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  require(!layers_.empty(), ErrorCode::invalid_argument, "layer stack needs at least one layer");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& layer = layers_[i];
    require(layer.weight.rank() == 2 && layer.bias.size() == layer.out_dim(), ErrorCode::shape_mismatch,
            "layer " + std::to_string(i) + ": bias " + shape_string(layer.bias.shape()) + " vs weight " +
                shape_string(layer.weight.shape()));
    if (i > 0) {
      require(layers_[i - 1].out_dim() == layer.in_dim(), ErrorCode::shape_mismatch,
              "layer " + std::to_string(i) + " expects width " + std::to_string(layer.in_dim()) +
                  " but previous layer produces " + std::to_string(layers_[i - 1].out_dim()));
    }
  }
}

LayerStack LayerStack::random(std::span<const std::size_t> widths, std::span<const Activation> activations,
                              std::mt19937_64& rng) {
  require(widths.size() == activations.size() + 1, ErrorCode::invalid_argument,
          "need one activation per layer (widths.size() - 1)");
  std::vector<DenseLayer> layers;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const std::size_t in = widths[i], out = widths[i + 1];
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(in)));
    Tensor weight({in, out});
    for (double& w : weight.data()) w = normal(rng);
    layers.push_back(DenseLayer{std::move(weight), Tensor({out}, 0.0), activations[i]});
  }
  return LayerStack(std::move(layers));
}

std::size_t LayerStack::width_after(std::size_t count) const {
  require(count <= layers_.size(), ErrorCode::invalid_argument, "layer index out of range");
  return count == 0 ? in_dim() : layers_[count - 1].out_dim();
}

std::size_t LayerStack::parameter_count() const {
  std::size_t total = 0;
  for (const auto& layer : layers_) total += layer.weight.size() + layer.bias.size();
  return total;
}

Tensor apply_activation(const Tensor& x, Activation activation) {
  Tensor out = x;
  switch (activation) {
    case Activation::identity: break;
    case Activation::relu:
      for (double& v : out.data()) v = v > 0 ? v : 0.0;
      break;
    case Activation::leaky_relu:
      for (double& v : out.data()) v = v > 0 ? v : ad::kLeakySlope * v;
      break;
    case Activation::sigmoid:
      for (double& v : out.data()) v = ad::sigmoid_value(v);
      break;
  }
  return out;
}

ad::Var apply_activation(ad::Var x, Activation activation) {
  switch (activation) {
    case Activation::identity: return x;
    case Activation::relu: return ad::relu(x);
    case Activation::leaky_relu: return ad::leaky_relu(x);
    case Activation::sigmoid: return ad::sigmoid(x);
  }
  return x;
}

Tensor LayerStack::forward(const Tensor& x, std::size_t first, std::size_t last) const {
  require(first <= last && last <= layers_.size(), ErrorCode::invalid_argument, "layer range out of bounds");
  if (first == last) return x;
  require(x.cols() == layers_[first].in_dim(), ErrorCode::shape_mismatch,
          "input " + shape_string(x.shape()) + " does not match layer width " +
              std::to_string(layers_[first].in_dim()));
  const bool single = x.rank() == 1;
  Tensor h = x;
  for (std::size_t i = first; i < last; ++i) {
    const auto& layer = layers_[i];
    h = apply_activation(kernels::add_bias(kernels::matmul(h, layer.weight), layer.bias), layer.activation);
  }
  return single ? h.reshaped({h.size()}) : h;
}

std::vector<LayerParams> LayerStack::bind(ad::Tape& tape, bool trainable) const {
  std::vector<LayerParams> params;
  params.reserve(layers_.size());
  for (const auto& layer : layers_) {
    if (trainable) params.push_back({tape.variable(layer.weight), tape.variable(layer.bias)});
    else params.push_back({tape.constant_ref(layer.weight), tape.constant_ref(layer.bias)});
  }
  return params;
}

ad::Var LayerStack::forward(std::span<const LayerParams> params, ad::Var x, std::size_t first,
                            std::size_t last) const {
  require(params.size() == layers_.size(), ErrorCode::invalid_argument, "parameter binding size mismatch");
  require(first <= last && last <= layers_.size(), ErrorCode::invalid_argument, "layer range out of bounds");
  ad::Var h = x;
  for (std::size_t i = first; i < last; ++i) {
    h = apply_activation(ad::add_bias(ad::matmul(h, params[i].weight), params[i].bias), layers_[i].activation);
  }
  return h;
}

SplitDecoder::SplitDecoder(LayerStack decoder, std::size_t split_index)
    : decoder_(std::move(decoder)), split_(split_index) {
  require(decoder_.size() > 0, ErrorCode::invalid_argument, "decoder needs at least one layer");
  require(split_ <= decoder_.size(), ErrorCode::invalid_argument,
          "split index " + std::to_string(split_) + " exceeds decoder layer count " +
              std::to_string(decoder_.size()));
  require(decoder_.layers().back().activation == Activation::sigmoid, ErrorCode::invalid_argument,
          "decoder output layer must be sigmoid");
}

Tensor SplitDecoder::decode_first(const Tensor& z) const { return decoder_.forward(z, 0, split_); }

Tensor SplitDecoder::decode_second(const Tensor& h) const {
  return decoder_.forward(h, split_, decoder_.size());
}

ad::Var SplitDecoder::decode_second(std::span<const LayerParams> params, ad::Var h) const {
  return decoder_.forward(params, h, split_, decoder_.size());
}

Classifier::Classifier(LayerStack logits) : stack_(std::move(logits)) {
  require(stack_.out_dim() >= 2, ErrorCode::invalid_argument, "classifier needs at least two classes");
}

Tensor Classifier::logits(const Tensor& x) const { return stack_.forward(x); }

Tensor Classifier::classify(const Tensor& x) const {
  Tensor probs = kernels::softmax_rows(logits(x));
  return x.rank() == 1 ? probs.reshaped({probs.size()}) : probs;
}

std::size_t Classifier::predict(const Tensor& x) const {
  const Tensor probs = classify(x);
  require(probs.rank() == 1, ErrorCode::shape_mismatch, "predict() takes a single image");
  return static_cast<std::size_t>(std::max_element(probs.data().begin(), probs.data().end()) -
                                  probs.data().begin());
}

ad::Var Classifier::classify(std::span<const LayerParams> params, ad::Var x) const {
  return ad::softmax(stack_.forward(params, x));
}

Tensor Encoder::encode(const Tensor& x) const { return stack_.forward(x); }

}  // namespace latentadv
