#include "latentadv/steganalysis.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "latentadv/errors.hpp"

namespace latentadv {

int quantize_pixel(double x) {
  require(x >= 0.0 && x <= 1.0, ErrorCode::invalid_argument, "pixel value " + std::to_string(x) + " outside [0,1]");
  return static_cast<int>(std::round(255.0 * x));
}

Tensor lsb(const Tensor& image) {
  Tensor bits(image.shape());
  for (std::size_t i = 0; i < image.size(); ++i) bits[i] = quantize_pixel(image[i]) % 2;
  return bits;
}

double lsb_change_rate(const Tensor& x0, const Tensor& x) {
  require(x0.same_shape(x), ErrorCode::shape_mismatch,
          "lsb_change_rate shapes differ: " + shape_string(x0.shape()) + " vs " + shape_string(x.shape()));
  const Tensor a = lsb(x0), b = lsb(x);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < a.size(); ++i) changed += a[i] != b[i];
  return static_cast<double>(changed) / static_cast<double>(a.size());
}

Tensor diff_map(const Tensor& x0, const Tensor& x) {
  require(x0.same_shape(x), ErrorCode::shape_mismatch,
          "diff_map shapes differ: " + shape_string(x0.shape()) + " vs " + shape_string(x.shape()));
  Tensor d(x.shape());
  double top = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    d[i] = std::abs(x[i] - x0[i]);
    top = std::max(top, d[i]);
  }
  if (top > 0)
    for (double& v : d.data()) v /= top;
  return d;
}

}  // namespace latentadv
