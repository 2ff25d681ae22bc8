#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "latentadv/tensor.hpp"

namespace latentadv {

struct GrayImage {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Tensor pixels;  // [rows·cols], values k/255
};

// Plain PGM ("P2", maxval 255), one image row per text line, each pixel
// written as round(255x) with ties away from zero.
std::string format_pgm(const Tensor& image, std::size_t rows, std::size_t cols);
void write_pgm(const Tensor& image, std::size_t rows, std::size_t cols, const std::filesystem::path& path);
GrayImage parse_pgm(const std::string& text);
GrayImage read_pgm(const std::filesystem::path& path);

// Places equally sized images side by side, separated by `gap` columns of
// `fill`.
GrayImage compose_strip(const std::vector<Tensor>& images, std::size_t rows, std::size_t cols, std::size_t gap = 1,
                        double fill = 1.0);

}  // namespace latentadv
