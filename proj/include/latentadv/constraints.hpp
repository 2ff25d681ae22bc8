#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string_view>

#include "latentadv/autodiff.hpp"
#include "latentadv/distances.hpp"
#include "latentadv/layers.hpp"
#include "latentadv/tensor.hpp"

namespace latentadv {

class AttackMode {
 public:
  enum class Kind { targeted, untargeted };

  static AttackMode targeted(std::size_t k) { return AttackMode(Kind::targeted, k); }
  static AttackMode untargeted() { return AttackMode(Kind::untargeted, 0); }

  Kind kind() const noexcept { return kind_; }
  bool is_targeted() const noexcept { return kind_ == Kind::targeted; }
  // Only meaningful for targeted attacks.
  std::size_t target() const noexcept { return target_; }

  friend bool operator==(const AttackMode&, const AttackMode&) = default;

 private:
  AttackMode(Kind kind, std::size_t target) : kind_(kind), target_(target) {}
  Kind kind_;
  std::size_t target_;
};

std::string_view to_string(AttackMode::Kind kind);
AttackMode::Kind attack_kind_from_string(std::string_view tag);

enum class DistanceKind { l2, sinkhorn };

std::string_view to_string(DistanceKind kind);
DistanceKind distance_kind_from_string(std::string_view tag);

struct DistanceSpec {
  DistanceKind kind = DistanceKind::l2;
  SinkhornOptions sinkhorn;
};

// m(x, k) = max_{i≠k} F_i − F_k on class probabilities.
double margin(std::span<const double> probs, std::size_t k);
ad::Var margin(ad::Var probs, std::size_t k);

// Constraint on an image. Targeted: m(F(x), k). Untargeted: −m(F(x), k₀)
// with k₀ frozen from the original image, or −m(F(x), argmax F(x)) when
// `literal_untargeted` is set (never negative; kept for comparison).
double constraint_value(const Classifier& classifier, const Tensor& image, AttackMode mode,
                        std::size_t original_label, bool literal_untargeted = false);

struct Evaluation {
  double value = 0.0;
  Tensor gradient;
};

struct ContextOptions {
  bool literal_untargeted = false;
  // Minimum probability of the original class at x₀; 0 disables the check.
  double min_confidence = 0.99;
  // Solver settings of the reported Wasserstein metric, kept apart from the
  // objective's so that metrics compare across objectives.
  SinkhornOptions metric;
};

// Everything needed to evaluate ĝ(p) = g(D₂(h₀ + p)) and f(p) = d(D₂(h₀ + p), x₀)
// for one original image. Immutable after construction; safe to share.
//
// With the pixel split (D₂ = identity) the decoded image is clamped to [0,1].
class ConstraintContext {
 public:
  ConstraintContext(std::shared_ptr<const Classifier> classifier, SplitDecoder decoder, Tensor z0, AttackMode mode,
                    DistanceSpec distance, ContextOptions options = {},
                    std::shared_ptr<const GibbsKernel> kernel = nullptr);

  // Same original, classifier and mode, perturbation added at another layer.
  ConstraintContext with_split(std::size_t split_index) const;
  ConstraintContext with_distance(DistanceSpec distance) const;

  const Classifier& classifier() const noexcept { return *classifier_; }
  const std::shared_ptr<const Classifier>& classifier_ptr() const noexcept { return classifier_; }
  const SplitDecoder& decoder() const noexcept { return decoder_; }
  const Tensor& z0() const noexcept { return z0_; }
  const Tensor& h0() const noexcept { return h0_; }
  const Tensor& x0() const noexcept { return x0_; }
  AttackMode mode() const noexcept { return mode_; }
  const DistanceSpec& distance() const noexcept { return distance_; }
  const ContextOptions& options() const noexcept { return options_; }
  std::size_t original_label() const noexcept { return original_label_; }
  double original_confidence() const noexcept { return original_confidence_; }
  const std::shared_ptr<const GibbsKernel>& kernel() const noexcept { return kernel_; }

  Tensor image(const Tensor& p) const;
  double g(const Tensor& image) const;
  double g_hat(const Tensor& p) const;
  double f_hat(const Tensor& p) const;
  Evaluation g_hat_with_gradient(const Tensor& p) const;
  Evaluation f_hat_with_gradient(const Tensor& p) const;

  // Both metrics between an image and x₀.
  double l2_to_original(const Tensor& image) const;
  double wasserstein_to_original(const Tensor& image) const;

 private:
  void check_perturbation(const Tensor& p) const;
  ad::Var image(ad::Tape& tape, ad::Var p, std::span<const LayerParams> decoder_params) const;

  std::shared_ptr<const Classifier> classifier_;
  SplitDecoder decoder_;
  Tensor z0_, h0_, x0_;
  AttackMode mode_;
  DistanceSpec distance_;
  ContextOptions options_;
  std::shared_ptr<const GibbsKernel> kernel_;
  std::shared_ptr<const SinkhornDivergence> divergence_;
  std::shared_ptr<const SinkhornDivergence> metric_;
  std::size_t original_label_ = 0;
  double original_confidence_ = 0.0;
};

}  // namespace latentadv
