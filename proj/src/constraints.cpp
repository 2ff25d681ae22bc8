#include "latentadv/constraints.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "latentadv/errors.hpp"

namespace latentadv {

std::string_view to_string(AttackMode::Kind kind) {
  return kind == AttackMode::Kind::targeted ? "targeted" : "untargeted";
}

AttackMode::Kind attack_kind_from_string(std::string_view tag) {
  if (tag == "targeted") return AttackMode::Kind::targeted;
  if (tag == "untargeted") return AttackMode::Kind::untargeted;
  throw Error(ErrorCode::invalid_argument, "unknown attack mode '" + std::string(tag) + "'");
}

std::string_view to_string(DistanceKind kind) { return kind == DistanceKind::l2 ? "l2" : "sinkhorn"; }

DistanceKind distance_kind_from_string(std::string_view tag) {
  if (tag == "l2") return DistanceKind::l2;
  if (tag == "sinkhorn" || tag == "wasserstein") return DistanceKind::sinkhorn;
  throw Error(ErrorCode::invalid_argument, "unknown distance '" + std::string(tag) + "'");
}

namespace {

void check_margin_args(std::size_t classes, std::size_t k) {
  require(classes >= 2, ErrorCode::invalid_argument, "margin needs at least two classes");
  require(k < classes, ErrorCode::invalid_argument,
          "class index " + std::to_string(k) + " out of range for " + std::to_string(classes) + " classes");
}

// Lowest index attaining max_{i≠k} probs_i.
std::size_t best_rival(std::span<const double> probs, std::size_t k) {
  std::size_t best = k == 0 ? 1 : 0;
  for (std::size_t i = 0; i < probs.size(); ++i)
    if (i != k && probs[i] > probs[best]) best = i;
  return best;
}

std::size_t argmax(std::span<const double> values) {
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

}  // namespace

double margin(std::span<const double> probs, std::size_t k) {
  check_margin_args(probs.size(), k);
  return probs[best_rival(probs, k)] - probs[k];
}

ad::Var margin(ad::Var probs, std::size_t k) {
  const Tensor& p = probs.value();
  require(p.rank() == 1, ErrorCode::shape_mismatch, "margin takes a single probability vector");
  check_margin_args(p.size(), k);
  const std::size_t rival = best_rival(p.data(), k);
  return probs.tape().record(Tensor::scalar(p[rival] - p[k]), {probs},
                             [rival, k](const Tensor& g, std::span<Tensor> grads) {
                               grads[0][rival] += g[0];
                               grads[0][k] -= g[0];
                             });
}

double constraint_value(const Classifier& classifier, const Tensor& image, AttackMode mode,
                        std::size_t original_label, bool literal_untargeted) {
  const Tensor probs = classifier.classify(image);
  if (mode.is_targeted()) return margin(probs.data(), mode.target());
  const std::size_t k = literal_untargeted ? argmax(probs.data()) : original_label;
  return -margin(probs.data(), k);
}

ConstraintContext::ConstraintContext(std::shared_ptr<const Classifier> classifier, SplitDecoder decoder, Tensor z0,
                                     AttackMode mode, DistanceSpec distance, ContextOptions options,
                                     std::shared_ptr<const GibbsKernel> kernel)
    : classifier_(std::move(classifier)),
      decoder_(std::move(decoder)),
      z0_(std::move(z0)),
      mode_(mode),
      distance_(distance),
      options_(options),
      kernel_(std::move(kernel)) {
  require(classifier_ != nullptr, ErrorCode::invalid_argument, "context needs a classifier");
  require(z0_.rank() == 1 && z0_.size() == decoder_.latent_dim(), ErrorCode::shape_mismatch,
          "z0 " + shape_string(z0_.shape()) + " does not match latent width " + std::to_string(decoder_.latent_dim()));
  require(classifier_->input_dim() == decoder_.image_dim(), ErrorCode::shape_mismatch,
          "classifier input width differs from decoder output width");
  if (mode_.is_targeted())
    require(mode_.target() < classifier_->class_count(), ErrorCode::invalid_argument,
            "target class " + std::to_string(mode_.target()) + " out of range");

  h0_ = decoder_.decode_first(z0_);
  x0_ = decoder_.decode_second(h0_);
  const Tensor probs = classifier_->classify(x0_);
  original_label_ = argmax(probs.data());
  original_confidence_ = probs[original_label_];
  require(original_confidence_ >= options_.min_confidence, ErrorCode::precondition,
          "original image confidence " + std::to_string(original_confidence_) + " is below " +
              std::to_string(options_.min_confidence));
  const double g0 = g(x0_);
  require(g0 > 0.0 || (!mode_.is_targeted() && options_.literal_untargeted), ErrorCode::precondition,
          "original image already satisfies the attack constraint (g(x0) = " + std::to_string(g0) + ")");

  const auto kernel_for = [&](double lambda) {
    if (kernel_ && kernel_->lambda() == lambda) return kernel_;
    const std::size_t side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(x0_.size()))));
    require(side * side == x0_.size(), ErrorCode::invalid_argument,
            "Sinkhorn distances need a square image or an explicit kernel");
    return std::make_shared<const GibbsKernel>(cost_matrix(side, side), lambda);
  };
  if (distance_.kind == DistanceKind::sinkhorn) {
    kernel_ = kernel_for(distance_.sinkhorn.lambda);
    divergence_ = std::make_shared<const SinkhornDivergence>(x0_, kernel_, distance_.sinkhorn);
  }
  const auto metric_kernel = kernel_for(options_.metric.lambda);
  if (!kernel_) kernel_ = metric_kernel;
  metric_ = std::make_shared<const SinkhornDivergence>(x0_, metric_kernel, options_.metric);
}

ConstraintContext ConstraintContext::with_split(std::size_t split_index) const {
  return ConstraintContext(classifier_, decoder_.with_split(split_index), z0_, mode_, distance_, options_, kernel_);
}

ConstraintContext ConstraintContext::with_distance(DistanceSpec distance) const {
  return ConstraintContext(classifier_, decoder_, z0_, mode_, distance, options_, kernel_);
}

void ConstraintContext::check_perturbation(const Tensor& p) const {
  require(p.same_shape(h0_), ErrorCode::shape_mismatch,
          "perturbation " + shape_string(p.shape()) + " does not match intermediate shape " +
              shape_string(h0_.shape()));
}

Tensor ConstraintContext::image(const Tensor& p) const {
  check_perturbation(p);
  Tensor x = decoder_.decode_second(kernels::add(h0_, p));
  if (decoder_.is_pixel_split())
    for (double& v : x.data()) v = std::clamp(v, 0.0, 1.0);
  return x;
}

ad::Var ConstraintContext::image(ad::Tape& tape, ad::Var p, std::span<const LayerParams> decoder_params) const {
  const ad::Var h = ad::add(tape.constant_ref(h0_), p);
  if (decoder_.is_pixel_split()) return ad::clamp01(h);
  return decoder_.decode_second(decoder_params, h);
}

double ConstraintContext::g(const Tensor& x) const {
  return constraint_value(*classifier_, x, mode_, original_label_, options_.literal_untargeted);
}

double ConstraintContext::g_hat(const Tensor& p) const { return g(image(p)); }

double ConstraintContext::f_hat(const Tensor& p) const {
  const Tensor x = image(p);
  return distance_.kind == DistanceKind::l2 ? l2_distance(x, x0_) : divergence_->value(x);
}

Evaluation ConstraintContext::g_hat_with_gradient(const Tensor& p) const {
  check_perturbation(p);
  ad::Tape tape;
  const ad::Var pv = tape.variable(p);
  const auto dec = decoder_.decoder().bind(tape, false);
  const auto cls = classifier_->stack().bind(tape, false);
  const ad::Var probs = classifier_->classify(cls, image(tape, pv, dec));
  ad::Var out;
  if (mode_.is_targeted()) {
    out = margin(probs, mode_.target());
  } else {
    const std::size_t k = options_.literal_untargeted ? argmax(probs.value().data()) : original_label_;
    out = ad::scale(margin(probs, k), -1.0);
  }
  const double value = out.value().item();
  return {value, tape.backward(out)[pv]};
}

Evaluation ConstraintContext::f_hat_with_gradient(const Tensor& p) const {
  check_perturbation(p);
  ad::Tape tape;
  const ad::Var pv = tape.variable(p);
  const auto dec = decoder_.decoder().bind(tape, false);
  const ad::Var x = image(tape, pv, dec);
  const ad::Var out = distance_.kind == DistanceKind::l2 ? l2_distance(x, x0_) : divergence_->value(x);
  const double value = out.value().item();
  return {value, tape.backward(out)[pv]};
}

double ConstraintContext::l2_to_original(const Tensor& image) const { return l2_distance(image, x0_); }

double ConstraintContext::wasserstein_to_original(const Tensor& image) const { return metric_->value(image); }

}  // namespace latentadv
