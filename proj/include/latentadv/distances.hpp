#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "latentadv/autodiff.hpp"
#include "latentadv/tensor.hpp"

namespace latentadv {

// ---------------------------------------------------------------------------
// ℓ₂

double l2_distance(const Tensor& x, const Tensor& x0);
ad::Var l2_distance(ad::Var x, const Tensor& x0);
Tensor l2_gradient(const Tensor& x, const Tensor& x0);

// ---------------------------------------------------------------------------
// Entropic optimal transport
//
// The pixel ground cost is the Euclidean distance between grid coordinates,
// each axis normalized to [0,1]. Transport problems are solved by alternating
// Sinkhorn scaling written on log-domain potentials:
//
//   F_i ← log a_i − LSE_j(G_j − C_ij/λ)
//   G_j ← log b_j − LSE_i(F_i − C_ij/λ)
//
// and the reported value is ⟨C,W⟩ + λ⟨W, log W⟩ of the plan
// W_ij = exp(F_i + G_j − C_ij/λ). Gradients differentiate through the unrolled
// scaling iterations.

struct CostMatrix {
  Tensor matrix;  // [n×n], n = height·width
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t size() const noexcept { return height * width; }
};

CostMatrix cost_matrix(std::size_t height, std::size_t width);
// Wraps an arbitrary square non-negative cost (tests, small brute-force checks).
CostMatrix cost_matrix_from(Tensor matrix);

// Pixel intensities normalized to a probability vector.
struct ProbImage {
  Tensor probabilities;
  double pixel_sum = 1.0;

  static ProbImage from_pixels(const Tensor& pixels);
  // Validates an existing probability vector (entries ≥ 0, sum 1 within 1e-9).
  static ProbImage from_probabilities(Tensor probabilities);
};

struct SinkhornOptions {
  double lambda = 0.01;
  std::size_t max_iters = 200;
  double tol = 1e-6;
};

struct TransportPlan {
  Tensor plan;       // W [n×n]; left empty when not requested
  Tensor row_potential;  // f = λF
  Tensor col_potential;  // g = λG
  std::size_t iterations = 0;
  double residual = 0.0;  // ℓ₁ distance of W's row sums to the first marginal
  bool converged = false;
};

struct SinkhornResult {
  double value = 0.0;
  TransportPlan plan;
};

// Precomputed Gibbs kernel exp(−C/λ) shared by every solve with the same cost
// and λ. Immutable after construction.
class GibbsKernel {
 public:
  GibbsKernel(const CostMatrix& cost, double lambda);

  std::size_t size() const noexcept { return n_; }
  double lambda() const noexcept { return lambda_; }
  const Tensor& cost() const noexcept { return cost_; }
  // True when exp(−C/λ) is representable and kernel products run as mat-vecs.
  bool uses_matvec() const noexcept { return matvec_; }

  // out_i = LSE_j(u_j − C_ij/λ)
  void lse_rows(std::span<const double> u, std::span<double> out) const;
  // out_j = LSE_i(u_i − C_ij/λ)
  void lse_cols(std::span<const double> u, std::span<double> out) const;
  // With P_ij = exp(u_j − C_ij/λ − s_i) (s = lse_rows(u)):
  //   rows_apply:   out_i = Σ_j P_ij w_j
  //   rows_apply_t: out_j = Σ_i P_ij w_i
  void rows_apply(std::span<const double> u, std::span<const double> s, std::span<const double> w,
                  std::span<double> out) const;
  void rows_apply_t(std::span<const double> u, std::span<const double> s, std::span<const double> w,
                    std::span<double> out) const;
  // With Q_ij = exp(u_i − C_ij/λ − s_j) (s = lse_cols(u)):
  //   cols_apply_t: out_i = Σ_j Q_ij w_j
  void cols_apply_t(std::span<const double> u, std::span<const double> s, std::span<const double> w,
                    std::span<double> out) const;

 private:
  void lse(const std::vector<double>& scaled, const std::vector<double>& kernel, std::span<const double> u,
           std::span<double> out) const;
  void apply(const std::vector<double>& scaled, const std::vector<double>& kernel, std::span<const double> u,
             std::span<const double> s, std::span<const double> w, std::span<double> out) const;
  void apply_t(const std::vector<double>& scaled_t, const std::vector<double>& kernel_t,
               std::span<const double> u, std::span<const double> s, std::span<const double> w,
               std::span<double> out) const;

  std::size_t n_ = 0;
  double lambda_ = 0.0;
  Tensor cost_;
  bool matvec_ = false;
  std::vector<double> scaled_, scaled_t_;  // C/λ and its transpose
  std::vector<double> kernel_, kernel_t_;  // exp(−C/λ) and its transpose (matvec mode)
};

SinkhornResult sinkhorn_distance(const ProbImage& x0, const ProbImage& x, const CostMatrix& cost,
                                 const SinkhornOptions& options, bool keep_plan = true);
SinkhornResult sinkhorn_distance(const ProbImage& x0, const ProbImage& x, const GibbsKernel& kernel,
                                 const SinkhornOptions& options, bool keep_plan = true);

// Differentiable entropic-OT value between probability vectors a (rows) and b
// (columns). `report`, when given, receives the plan record.
ad::Var sinkhorn(ad::Var a, ad::Var b, std::shared_ptr<const GibbsKernel> kernel, const SinkhornOptions& options,
                 TransportPlan* report = nullptr);

// ∂/∂x of sinkhorn_distance(normalize(x0), normalize(x)) w.r.t. the raw pixels x.
Tensor sinkhorn_gradient(const Tensor& x0, const Tensor& x, const CostMatrix& cost, const SinkhornOptions& options);

// Debiased Sinkhorn divergence on raw images:
//   S(x̂₀, x̂) − ½S(x̂₀, x̂₀) − ½S(x̂, x̂),  x̂ = x / Σx.
// Zero when x = x₀, used as the Wasserstein objective and metric.
class SinkhornDivergence {
 public:
  SinkhornDivergence(const Tensor& x0, std::shared_ptr<const GibbsKernel> kernel, SinkhornOptions options);

  double value(const Tensor& x) const;
  ad::Var value(ad::Var x) const;
  const SinkhornOptions& options() const noexcept { return options_; }
  double self_term() const noexcept { return self_x0_; }

 private:
  Tensor x0_prob_;
  std::shared_ptr<const GibbsKernel> kernel_;
  SinkhornOptions options_;
  double self_x0_ = 0.0;
};

double sinkhorn_divergence(const Tensor& x0, const Tensor& x, const CostMatrix& cost, const SinkhornOptions& options);

}  // namespace latentadv
