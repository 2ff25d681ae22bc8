#pragma once

#include <cstdint>
#include <vector>

#include "latentadv/dataset.hpp"
#include "latentadv/layers.hpp"

namespace latentadv {

struct Architecture {
  std::vector<std::size_t> encoder_widths{kImagePixels, 128, 16};
  std::vector<std::size_t> decoder_widths{16, 32, 64, 128, kImagePixels};
  std::vector<std::size_t> classifier_widths{kImagePixels, 128, 64, kClassCount};
};

struct TrainOptions {
  std::size_t epochs = 20;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  // Weight of the latent-norm penalty in the autoencoder loss; keeps encoded
  // latents in a compact region that a fitted Gaussian can sample from.
  double latent_penalty = 1e-3;
};

// ℓ∞ projected gradient attack on pixels, random start inside the ε-ball.
struct PgdOptions {
  double epsilon = 0.2;
  std::size_t steps = 7;
  double step_fraction = 0.25;  // step = step_fraction · ε
};

struct ClassifierTraining {
  Classifier model;
  std::vector<double> epoch_loss;
};

struct AutoencoderTraining {
  Encoder encoder;
  LayerStack decoder;
  std::vector<double> epoch_loss;
  Tensor latent_mean;  // per-dimension moments of the encoded training set
  Tensor latent_std;
};

ClassifierTraining train_classifier(const Dataset& data, const TrainOptions& options,
                                    const Architecture& arch = {});
AutoencoderTraining train_autoencoder(const Dataset& data, const TrainOptions& options,
                                      const Architecture& arch = {});
// ε = 0 runs exactly the plain classifier training.
ClassifierTraining adversarial_train(const Dataset& data, const TrainOptions& options, const PgdOptions& pgd,
                                     const Architecture& arch = {});

Tensor pgd_attack(const Classifier& classifier, const Tensor& batch, std::span<const std::size_t> labels,
                  const PgdOptions& pgd, std::mt19937_64& rng);

double accuracy(const Classifier& classifier, const Dataset& data);
double robust_accuracy(const Classifier& classifier, const Dataset& data, const PgdOptions& pgd,
                       std::uint64_t seed);
// Mean per-image ℓ₂ reconstruction error ‖D(E(x)) − x‖.
double reconstruction_error(const Encoder& encoder, const LayerStack& decoder, const Dataset& data);

}  // namespace latentadv
