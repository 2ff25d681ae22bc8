#pragma once

#include "latentadv/tensor.hpp"

namespace latentadv {

// 8-bit quantization used by lsb() and the PGM writer: round(255x) with ties
// rounded away from zero.
int quantize_pixel(double x);

// mod(round(255x), 2) per pixel; entries must lie in [0,1].
Tensor lsb(const Tensor& image);

// Fraction of pixels whose least significant bit differs.
double lsb_change_rate(const Tensor& x0, const Tensor& x);

// |x − x₀| scaled so the largest entry is 1; all zeros for identical images.
Tensor diff_map(const Tensor& x0, const Tensor& x);

}  // namespace latentadv
