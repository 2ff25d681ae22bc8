#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <string>

#include "latentadv/constraints.hpp"
#include "latentadv/layers.hpp"
#include "latentadv/tensor.hpp"

namespace testing {

using latentadv::Tensor;

inline Tensor random_tensor(Tensor::Shape shape, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.data()) v = u(rng);
  return t;
}

// Central differences of a scalar function, step h.
inline Tensor finite_difference(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-5) {
  Tensor g(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// ‖a − b‖ / max(‖b‖, floor)
inline double relative_error(const Tensor& a, const Tensor& b, double floor = 1e-8) {
  double diff = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    ref += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(ref), floor);
}

// Small decoder (4 layers, 4×4 images) and classifier used where trained
// models would be too slow.
struct ToyModels {
  latentadv::LayerStack decoder;
  std::shared_ptr<const latentadv::Classifier> classifier;
};

inline ToyModels toy_models(std::uint64_t seed, std::size_t classes = 3) {
  using latentadv::Activation;
  std::mt19937_64 rng(seed);
  const std::size_t dec_w[] = {4, 6, 8, 12, 16};
  const Activation dec_a[] = {Activation::leaky_relu, Activation::leaky_relu, Activation::leaky_relu,
                              Activation::sigmoid};
  const std::size_t cls_w[] = {16, 10, classes};
  const Activation cls_a[] = {Activation::leaky_relu, Activation::identity};
  ToyModels m{latentadv::LayerStack::random(dec_w, dec_a, rng), nullptr};
  latentadv::LayerStack cls = latentadv::LayerStack::random(cls_w, cls_a, rng);
  // Larger logits so that classes separate clearly on decoded images.
  for (auto& layer : cls.layers())
    for (double& w : layer.weight.data()) w *= 3.0;
  m.classifier = std::make_shared<const latentadv::Classifier>(std::move(cls));
  return m;
}

inline latentadv::ConstraintContext toy_context(const ToyModels& m, std::size_t split, const Tensor& z0,
                                                latentadv::AttackMode mode, latentadv::DistanceSpec distance = {}) {
  latentadv::ContextOptions opts;
  opts.min_confidence = 0.0;
  opts.metric.max_iters = 100;
  return latentadv::ConstraintContext(m.classifier, latentadv::SplitDecoder(m.decoder, split), z0, mode, distance,
                                      opts);
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("latentadv_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
