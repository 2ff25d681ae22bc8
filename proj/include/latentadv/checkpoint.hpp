#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "latentadv/layers.hpp"
#include "latentadv/tensor.hpp"

namespace latentadv {

// Trained models of one experiment: autoencoder, latent moments and the two
// classifier variants.
struct ModelBundle {
  Encoder encoder;
  LayerStack decoder;
  Tensor latent_mean;
  Tensor latent_std;
  Classifier classifier;
  std::optional<Classifier> robust_classifier;
  std::size_t split_index = 2;  // decoder layer the attacks perturb
  std::uint64_t seed = 0;
  std::string data_provenance;

  friend bool operator==(const ModelBundle&, const ModelBundle&) = default;
};

// JSON with shortest round-trip decimal doubles; reloads bit-exactly.
void save_checkpoint(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_checkpoint(const std::filesystem::path& path);

}  // namespace latentadv
