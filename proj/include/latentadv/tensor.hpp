#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace latentadv {

// Dense row-major tensor of doubles. Scalars are tensors of shape {1}.
class Tensor {
 public:
  using Shape = std::vector<std::size_t>;

  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value) { return Tensor({1}, {value}); }
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  bool is_scalar() const noexcept { return data_.size() == 1; }

  // Extents of a rank-2 tensor; a rank-1 tensor is treated as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double item() const;

  Tensor reshaped(Shape shape) const;
  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
  bool all_finite() const noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::size_t shape_size(const Tensor::Shape& shape);
std::string shape_string(const Tensor::Shape& shape);

// Value-only kernels shared by the autodiff ops and the fast evaluation paths.
namespace kernels {

Tensor matmul(const Tensor& a, const Tensor& b);     // a[m×k]·b[k×n]
Tensor matmul_tn(const Tensor& a, const Tensor& b);  // aᵀ[k×m]ᵀ·b[k×n] → [m×n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a[m×k]·bᵀ, b[n×k] → [m×n]
Tensor transpose(const Tensor& a);
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor softmax_rows(const Tensor& logits);
Tensor log_softmax_rows(const Tensor& logits);

double sum(const Tensor& a);
double dot(const Tensor& a, const Tensor& b);
double norm(const Tensor& a);
Tensor axpy(double alpha, const Tensor& x, const Tensor& y);  // alpha·x + y
Tensor scale(const Tensor& x, double alpha);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor lerp(const Tensor& from, const Tensor& to, double c);  // (1−c)·from + c·to

}  // namespace kernels

}  // namespace latentadv
