#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "latentadv/tensor.hpp"

namespace latentadv {

inline constexpr std::size_t kImageRows = 16;
inline constexpr std::size_t kImageCols = 16;
inline constexpr std::size_t kImagePixels = kImageRows * kImageCols;
inline constexpr std::size_t kClassCount = 10;

// Environment variable naming a directory with the four standard MNIST IDX files.
inline constexpr const char* kDataDirEnv = "LATENTADV_DATA_DIR";

struct Dataset {
  std::vector<Tensor> images;  // each [rows·cols], pixels in [0,1]
  std::vector<std::size_t> labels;
  std::size_t rows = kImageRows;
  std::size_t cols = kImageCols;
  std::size_t class_count = kClassCount;
  std::string provenance;  // "idx-file" or "synthetic(seed=N)"

  std::size_t size() const noexcept { return images.size(); }
  bool empty() const noexcept { return images.empty(); }
  // Selected images stacked into a [count × pixels] batch.
  Tensor batch(std::span<const std::size_t> indices) const;
  void validate() const;
};

struct IdxImages {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::vector<std::uint8_t>> images;
};

IdxImages parse_idx_images(const std::filesystem::path& path);
std::vector<std::uint8_t> parse_idx_labels(const std::filesystem::path& path);

// Decodes an IDX image/label pair, scales pixels by 1/255 and area-resamples
// them to rows × cols.
Dataset parse_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                  std::size_t rows = kImageRows, std::size_t cols = kImageCols);

// Exact area-weighted resampling of a row-major image.
std::vector<double> area_resample(std::span<const double> pixels, std::size_t in_rows, std::size_t in_cols,
                                  std::size_t out_rows, std::size_t out_cols);

// Deterministic 10-class glyph images: fixed stroke skeletons rendered with
// random shift, scale and stroke width plus additive noise.
Dataset synthetic_dataset(std::uint64_t seed, std::size_t per_class);

struct DataSplit {
  Dataset train;
  Dataset test;
};

// MNIST from `data_dir` (or $LATENTADV_DATA_DIR) when the IDX files exist,
// otherwise the synthetic generator.
DataSplit load_data(std::uint64_t seed, std::size_t train_per_class, std::size_t test_per_class,
                    const std::optional<std::filesystem::path>& data_dir = std::nullopt);

}  // namespace latentadv
