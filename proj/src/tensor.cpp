#include "latentadv/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <Eigen/Core>

#include "latentadv/errors.hpp"

namespace latentadv {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::shape_mismatch: return "shape_mismatch";
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::precondition: return "precondition";
    case ErrorCode::infeasible_init: return "infeasible_init";
    case ErrorCode::no_feasible_init: return "no_feasible_init";
    case ErrorCode::bad_magic: return "bad_magic";
    case ErrorCode::truncated: return "truncated";
    case ErrorCode::count_mismatch: return "count_mismatch";
    case ErrorCode::io: return "io";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::tape_consumed: return "tape_consumed";
  }
  return "unknown";
}

std::size_t shape_size(const Tensor::Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string shape_string(const Tensor::Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "x" : "") << shape[i];
  out << ']';
  return out.str();
}

namespace {

void check_extents(const Tensor::Shape& shape) {
  require(!shape.empty(), ErrorCode::invalid_argument, "tensor shape must have at least one extent");
  for (auto extent : shape) {
    require(extent > 0, ErrorCode::invalid_argument,
            "tensor extents must be positive, got " + shape_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  require(data_.size() == shape_size(shape_), ErrorCode::shape_mismatch,
          "data length " + std::to_string(data_.size()) + " does not match shape " + shape_string(shape_));
}

Tensor Tensor::vector(std::vector<double> values) {
  const auto n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    require(row.size() == c, ErrorCode::shape_mismatch, "ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

std::size_t Tensor::rows() const {
  if (shape_.size() == 1) return 1;
  require(shape_.size() == 2, ErrorCode::shape_mismatch, "rows() needs rank ≤ 2, got " + shape_string(shape_));
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.size() == 1) return shape_[0];
  require(shape_.size() == 2, ErrorCode::shape_mismatch, "cols() needs rank ≤ 2, got " + shape_string(shape_));
  return shape_[1];
}

double Tensor::item() const {
  require(data_.size() == 1, ErrorCode::shape_mismatch, "item() on non-scalar tensor " + shape_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  require(shape_size(shape) == data_.size(), ErrorCode::shape_mismatch,
          "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

namespace kernels {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using Map = Eigen::Map<RowMajor>;

ConstMap view(const Tensor& t) {
  return ConstMap(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  require(b.rows() == k, ErrorCode::shape_mismatch,
          "matmul inner extents differ: " + shape_string(a.shape()) + " · " + shape_string(b.shape()));
  Tensor out({m, n});
  Map(out.data().data(), m, n).noalias() = view(a) * view(b);
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  require(b.rows() == k, ErrorCode::shape_mismatch,
          "matmul_tn leading extents differ: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  Tensor out({m, n});
  Map(out.data().data(), m, n).noalias() = view(a).transpose() * view(b);
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  require(b.cols() == k, ErrorCode::shape_mismatch,
          "matmul_nt trailing extents differ: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  Tensor out({m, n});
  Map(out.data().data(), m, n).noalias() = view(a) * view(b).transpose();
  return out;
}

Tensor transpose(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t n = x.cols();
  require(bias.size() == n, ErrorCode::shape_mismatch,
          "bias " + shape_string(bias.shape()) + " does not match columns of " + shape_string(x.shape()));
  Tensor out = x;
  auto d = out.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += bias[i % n];
  return out;
}

Tensor softmax_rows(const Tensor& logits) {
  const std::size_t m = logits.rows(), n = logits.cols();
  Tensor out(logits.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const double* in = logits.data().data() + i * n;
    double* o = out.data().data() + i * n;
    const double top = *std::max_element(in, in + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += (o[j] = std::exp(in[j] - top));
    for (std::size_t j = 0; j < n; ++j) o[j] /= total;
  }
  return out;
}

Tensor log_softmax_rows(const Tensor& logits) {
  const std::size_t m = logits.rows(), n = logits.cols();
  Tensor out(logits.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const double* in = logits.data().data() + i * n;
    double* o = out.data().data() + i * n;
    const double top = *std::max_element(in, in + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(in[j] - top);
    const double lse = top + std::log(total);
    for (std::size_t j = 0; j < n; ++j) o[j] = in[j] - lse;
  }
  return out;
}

double sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return total;
}

double dot(const Tensor& a, const Tensor& b) {
  require(a.size() == b.size(), ErrorCode::shape_mismatch, "dot of differently sized tensors");
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += a[i] * b[i];
  return total;
}

double norm(const Tensor& a) { return std::sqrt(dot(a, a)); }

Tensor axpy(double alpha, const Tensor& x, const Tensor& y) {
  require(x.same_shape(y), ErrorCode::shape_mismatch,
          "axpy shapes differ: " + shape_string(x.shape()) + " vs " + shape_string(y.shape()));
  Tensor out = y;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += alpha * x[i];
  return out;
}

Tensor scale(const Tensor& x, double alpha) {
  Tensor out = x;
  for (double& v : out.data()) v *= alpha;
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return axpy(1.0, b, a); }
Tensor sub(const Tensor& a, const Tensor& b) { return axpy(-1.0, b, a); }

Tensor lerp(const Tensor& from, const Tensor& to, double c) {
  require(from.same_shape(to), ErrorCode::shape_mismatch, "lerp shapes differ");
  Tensor out(from.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - c) * from[i] + c * to[i];
  return out;
}

}  // namespace kernels

}  // namespace latentadv
