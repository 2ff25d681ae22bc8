#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "latentadv/autodiff.hpp"
#include "latentadv/tensor.hpp"

namespace latentadv {

enum class Activation { identity, relu, leaky_relu, sigmoid };

std::string_view to_string(Activation activation);
Activation activation_from_string(std::string_view tag);

// y = act(x·W + b) with W stored as [in × out].
struct DenseLayer {
  Tensor weight;
  Tensor bias;
  Activation activation = Activation::identity;

  std::size_t in_dim() const { return weight.rows(); }
  std::size_t out_dim() const { return weight.cols(); }
};

struct LayerParams {
  ad::Var weight;
  ad::Var bias;
};

class LayerStack {
 public:
  LayerStack() = default;
  explicit LayerStack(std::vector<DenseLayer> layers);

  // He-style initialization, deterministic in the generator state.
  static LayerStack random(std::span<const std::size_t> widths, std::span<const Activation> activations,
                           std::mt19937_64& rng);

  std::size_t size() const noexcept { return layers_.size(); }
  std::size_t in_dim() const { return layers_.front().in_dim(); }
  std::size_t out_dim() const { return layers_.back().out_dim(); }
  // Width after `count` layers; width_after(0) is the input width.
  std::size_t width_after(std::size_t count) const;

  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  std::vector<DenseLayer>& layers() noexcept { return layers_; }

  // Applies layers [first, last). Accepts a single vector [n] or a batch [B×n].
  Tensor forward(const Tensor& x, std::size_t first, std::size_t last) const;
  Tensor forward(const Tensor& x) const { return forward(x, 0, layers_.size()); }

  std::vector<LayerParams> bind(ad::Tape& tape, bool trainable) const;
  ad::Var forward(std::span<const LayerParams> params, ad::Var x, std::size_t first, std::size_t last) const;
  ad::Var forward(std::span<const LayerParams> params, ad::Var x) const {
    return forward(params, x, 0, layers_.size());
  }

  std::size_t parameter_count() const;

  friend bool operator==(const LayerStack&, const LayerStack&);

 private:
  std::vector<DenseLayer> layers_;
};

bool operator==(const DenseLayer& a, const DenseLayer& b);

Tensor apply_activation(const Tensor& x, Activation activation);
ad::Var apply_activation(ad::Var x, Activation activation);

// Decoder D = D₂∘D₁ split after `split_index` layers. split 0 makes D₁ the
// identity (latent perturbation), split == layer count makes D₂ the identity
// (pixel perturbation).
class SplitDecoder {
 public:
  SplitDecoder(LayerStack decoder, std::size_t split_index);

  const LayerStack& decoder() const noexcept { return decoder_; }
  std::size_t split_index() const noexcept { return split_; }
  std::size_t layer_count() const noexcept { return decoder_.size(); }
  bool is_pixel_split() const noexcept { return split_ == decoder_.size(); }
  std::size_t latent_dim() const { return decoder_.in_dim(); }
  std::size_t intermediate_dim() const { return decoder_.width_after(split_); }
  std::size_t image_dim() const { return decoder_.out_dim(); }

  SplitDecoder with_split(std::size_t split_index) const { return SplitDecoder(decoder_, split_index); }

  Tensor decode(const Tensor& z) const { return decoder_.forward(z); }
  Tensor decode_first(const Tensor& z) const;
  Tensor decode_second(const Tensor& h) const;
  ad::Var decode_second(std::span<const LayerParams> params, ad::Var h) const;

 private:
  LayerStack decoder_;
  std::size_t split_;
};

// Logit stack followed by a softmax.
class Classifier {
 public:
  Classifier() = default;
  explicit Classifier(LayerStack logits);

  const LayerStack& stack() const noexcept { return stack_; }
  std::size_t class_count() const { return stack_.out_dim(); }
  std::size_t input_dim() const { return stack_.in_dim(); }

  Tensor logits(const Tensor& x) const;
  Tensor classify(const Tensor& x) const;  // probabilities, per row for batches
  std::size_t predict(const Tensor& x) const;
  ad::Var classify(std::span<const LayerParams> params, ad::Var x) const;

  friend bool operator==(const Classifier&, const Classifier&) = default;

 private:
  LayerStack stack_;
};

class Encoder {
 public:
  Encoder() = default;
  explicit Encoder(LayerStack stack) : stack_(std::move(stack)) {}

  const LayerStack& stack() const noexcept { return stack_; }
  Tensor encode(const Tensor& x) const;

  friend bool operator==(const Encoder&, const Encoder&) = default;

 private:
  LayerStack stack_;
};

}  // namespace latentadv
