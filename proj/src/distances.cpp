#include "latentadv/distances.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

#include "latentadv/errors.hpp"
#include "latentadv/logging.hpp"

namespace latentadv {

// ---------------------------------------------------------------------------
// ℓ₂

double l2_distance(const Tensor& x, const Tensor& x0) {
  require(x.same_shape(x0), ErrorCode::shape_mismatch,
          "l2_distance shapes differ: " + shape_string(x.shape()) + " vs " + shape_string(x0.shape()));
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - x0[i];
    total += d * d;
  }
  return std::sqrt(total);
}

ad::Var l2_distance(ad::Var x, const Tensor& x0) {
  require(x.value().same_shape(x0), ErrorCode::shape_mismatch,
          "l2_distance shapes differ: " + shape_string(x.value().shape()) + " vs " + shape_string(x0.shape()));
  return ad::sqrt(ad::sum(ad::square(ad::sub(x, x.tape().constant(x0)))));
}

Tensor l2_gradient(const Tensor& x, const Tensor& x0) {
  ad::Tape tape;
  const ad::Var v = tape.variable(x);
  return tape.backward(l2_distance(v, x0))[v];
}

// ---------------------------------------------------------------------------
// Cost matrix and probability images

CostMatrix cost_matrix(std::size_t height, std::size_t width) {
  require(height >= 1 && width >= 1, ErrorCode::invalid_argument, "cost_matrix needs a non-empty grid");
  const std::size_t n = height * width;
  const double sy = height > 1 ? 1.0 / static_cast<double>(height - 1) : 0.0;
  const double sx = width > 1 ? 1.0 / static_cast<double>(width - 1) : 0.0;
  Tensor c({n, n});
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      const double dy = (static_cast<double>(a / width) - static_cast<double>(b / width)) * sy;
      const double dx = (static_cast<double>(a % width) - static_cast<double>(b % width)) * sx;
      c.at(a, b) = std::sqrt(dy * dy + dx * dx);
    }
  }
  return {std::move(c), height, width};
}

CostMatrix cost_matrix_from(Tensor matrix) {
  require(matrix.rank() == 2 && matrix.rows() == matrix.cols(), ErrorCode::shape_mismatch,
          "cost matrix must be square");
  for (double v : matrix.data()) require(v >= 0 && std::isfinite(v), ErrorCode::invalid_argument, "cost must be finite and ≥ 0");
  const std::size_t n = matrix.rows();
  return {std::move(matrix), 1, n};
}

ProbImage ProbImage::from_pixels(const Tensor& pixels) {
  double total = 0.0;
  for (double v : pixels.data()) {
    require(v >= 0.0, ErrorCode::invalid_argument, "pixel intensities must be non-negative");
    total += v;
  }
  require(total > 0.0, ErrorCode::invalid_argument, "image has zero total intensity");
  return {kernels::scale(pixels, 1.0 / total), total};
}

ProbImage ProbImage::from_probabilities(Tensor probabilities) {
  double total = 0.0;
  for (double v : probabilities.data()) {
    require(v >= 0.0, ErrorCode::invalid_argument, "probabilities must be non-negative");
    total += v;
  }
  require(std::abs(total - 1.0) <= 1e-9, ErrorCode::invalid_argument, "probabilities must sum to 1");
  return {std::move(probabilities), 1.0};
}

// ---------------------------------------------------------------------------
// Gibbs kernel

namespace {

// exp(−C/λ) stays well above the double underflow threshold for every entry
// and every potential spread met in practice.
constexpr double kMatvecLimit = 200.0;

Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> square_view(
    const std::vector<double>& m, std::size_t n) {
  return {m.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)};
}

}  // namespace

GibbsKernel::GibbsKernel(const CostMatrix& cost, double lambda) : n_(cost.size()), lambda_(lambda), cost_(cost.matrix) {
  require(lambda > 0 && std::isfinite(lambda), ErrorCode::invalid_argument, "Sinkhorn λ must be positive");
  require(cost_.rank() == 2 && cost_.rows() == n_ && cost_.cols() == n_, ErrorCode::shape_mismatch,
          "cost matrix does not match its grid");
  scaled_.resize(n_ * n_);
  scaled_t_.resize(n_ * n_);
  double top = 0.0;
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t j = 0; j < n_; ++j) {
      const double v = cost_.at(i, j) / lambda;
      scaled_[i * n_ + j] = v;
      scaled_t_[j * n_ + i] = v;
      top = std::max(top, v);
    }
  matvec_ = top <= kMatvecLimit;
  if (matvec_) {
    kernel_.resize(n_ * n_);
    kernel_t_.resize(n_ * n_);
    for (std::size_t k = 0; k < n_ * n_; ++k) {
      kernel_[k] = std::exp(-scaled_[k]);
      kernel_t_[k] = std::exp(-scaled_t_[k]);
    }
  }
}

void GibbsKernel::lse(const std::vector<double>& scaled, const std::vector<double>& kernel,
                      std::span<const double> u, std::span<double> out) const {
  const std::size_t n = n_;
  if (matvec_) {
    const double top = *std::max_element(u.begin(), u.end());
    Eigen::VectorXd e(n);
    for (std::size_t j = 0; j < n; ++j) e[j] = std::exp(u[j] - top);
    const Eigen::VectorXd acc = square_view(kernel, n) * e;
    for (std::size_t i = 0; i < n; ++i) out[i] = top + std::log(acc[i]);
    return;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double* c = scaled.data() + i * n;
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) top = std::max(top, u[j] - c[j]);
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += std::exp(u[j] - c[j] - top);
    out[i] = top + std::log(acc);
  }
}

void GibbsKernel::apply(const std::vector<double>& scaled, const std::vector<double>& kernel,
                        std::span<const double> u, std::span<const double> s, std::span<const double> w,
                        std::span<double> out) const {
  const std::size_t n = n_;
  if (matvec_) {
    const double top = *std::max_element(u.begin(), u.end());
    Eigen::VectorXd ew(n);
    for (std::size_t j = 0; j < n; ++j) ew[j] = std::exp(u[j] - top) * w[j];
    const Eigen::VectorXd acc = square_view(kernel, n) * ew;
    for (std::size_t i = 0; i < n; ++i) out[i] = acc[i] * std::exp(top - s[i]);
    return;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double* c = scaled.data() + i * n;
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += std::exp(u[j] - c[j] - s[i]) * w[j];
    out[i] = acc;
  }
}

void GibbsKernel::apply_t(const std::vector<double>& scaled_t, const std::vector<double>& kernel_t,
                          std::span<const double> u, std::span<const double> s, std::span<const double> w,
                          std::span<double> out) const {
  // out_j = Σ_i exp(u_j − C_ij/λ − s_i) w_i, reading C_ij from row j of the transpose.
  const std::size_t n = n_;
  if (matvec_) {
    const double top = *std::max_element(u.begin(), u.end());
    Eigen::VectorXd ws(n);
    for (std::size_t i = 0; i < n; ++i) ws[i] = w[i] * std::exp(top - s[i]);
    const Eigen::VectorXd acc = square_view(kernel_t, n) * ws;
    for (std::size_t j = 0; j < n; ++j) out[j] = acc[j] * std::exp(u[j] - top);
    return;
  }
  for (std::size_t j = 0; j < n; ++j) {
    const double* c = scaled_t.data() + j * n;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += std::exp(u[j] - c[i] - s[i]) * w[i];
    out[j] = acc;
  }
}

void GibbsKernel::lse_rows(std::span<const double> u, std::span<double> out) const { lse(scaled_, kernel_, u, out); }
void GibbsKernel::lse_cols(std::span<const double> u, std::span<double> out) const {
  lse(scaled_t_, kernel_t_, u, out);
}
void GibbsKernel::rows_apply(std::span<const double> u, std::span<const double> s, std::span<const double> w,
                             std::span<double> out) const {
  apply(scaled_, kernel_, u, s, w, out);
}
void GibbsKernel::rows_apply_t(std::span<const double> u, std::span<const double> s, std::span<const double> w,
                               std::span<double> out) const {
  apply_t(scaled_t_, kernel_t_, u, s, w, out);
}
void GibbsKernel::cols_apply_t(std::span<const double> u, std::span<const double> s, std::span<const double> w,
                               std::span<double> out) const {
  // Q for C is P for Cᵀ, whose transpose is C itself.
  apply_t(scaled_, kernel_, u, s, w, out);
}

// ---------------------------------------------------------------------------
// Sinkhorn solve

namespace {

using Vec = std::vector<double>;

// Everything the reverse pass needs: per iteration t the incoming G^{t−1},
// s^t = lse_rows(G^{t−1}), F^t and q^t = lse_cols(F^t).
struct SinkhornHistory {
  std::vector<Vec> g_prev, s, f, q;
};

struct SinkhornState {
  Vec log_a, log_b;
  Vec f, g;        // scaled potentials F, G (λ units)
  Vec s_final;     // lse_rows(G_final)
  Vec q_final;     // lse_cols(F_final)
  Vec row_mass;    // r_i = Σ_j W_ij
  Vec col_mass;    // c_j = Σ_i W_ij
  double value = 0.0;
  std::size_t iterations = 0;
  double residual = 0.0;
  bool converged = false;
};

Vec floored_log(std::span<const double> p) {
  Vec out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = std::log(std::max(p[i], ad::kLogFloor));
  return out;
}

SinkhornState solve(std::span<const double> a, std::span<const double> b, const GibbsKernel& kernel,
                    const SinkhornOptions& options, SinkhornHistory* history) {
  const std::size_t n = kernel.size();
  require(a.size() == n && b.size() == n, ErrorCode::shape_mismatch,
          "Sinkhorn marginals of size " + std::to_string(a.size()) + "/" + std::to_string(b.size()) +
              " do not match a " + std::to_string(n) + "-point cost");
  require(options.max_iters >= 1, ErrorCode::invalid_argument, "Sinkhorn needs max_iters ≥ 1");
  SinkhornState st;
  st.log_a = floored_log(a);
  st.log_b = floored_log(b);
  st.f.assign(n, 0.0);
  st.g.assign(n, 0.0);
  st.s_final.assign(n, 0.0);
  st.q_final.assign(n, 0.0);
  Vec s(n);

  for (std::size_t t = 0;; ++t) {
    kernel.lse_rows(st.g, s);
    if (t > 0) {
      double residual = 0.0;
      for (std::size_t i = 0; i < n; ++i) residual += std::abs(std::exp(st.f[i] + s[i]) - a[i]);
      st.residual = residual;
      if (residual <= options.tol) {
        st.converged = true;
        break;
      }
      if (t == options.max_iters) break;
    }
    if (history) {
      history->g_prev.push_back(st.g);
      history->s.push_back(s);
    }
    for (std::size_t i = 0; i < n; ++i) st.f[i] = st.log_a[i] - s[i];
    kernel.lse_cols(st.f, st.q_final);
    for (std::size_t j = 0; j < n; ++j) st.g[j] = st.log_b[j] - st.q_final[j];
    if (history) {
      history->f.push_back(st.f);
      history->q.push_back(st.q_final);
    }
    st.iterations = t + 1;
  }
  st.s_final = s;

  // value = λ Σ_ij W_ij (F_i + G_j) = λ (Σ_i F_i r_i + Σ_j G_j c_j)
  st.row_mass.resize(n);
  st.col_mass.resize(n);
  double value = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    st.row_mass[i] = std::exp(st.f[i] + st.s_final[i]);
    st.col_mass[i] = std::exp(st.g[i] + st.q_final[i]);
    value += st.f[i] * st.row_mass[i] + st.g[i] * st.col_mass[i];
  }
  st.value = kernel.lambda() * value;
  if (!st.converged) {
    log_debug("Sinkhorn stopped after " + std::to_string(st.iterations) + " iterations with marginal residual " +
              std::to_string(st.residual));
  }
  return st;
}

TransportPlan make_plan(const SinkhornState& st, const GibbsKernel& kernel, bool keep_plan) {
  const std::size_t n = kernel.size();
  TransportPlan plan;
  plan.iterations = st.iterations;
  plan.residual = st.residual;
  plan.converged = st.converged;
  plan.row_potential = kernels::scale(Tensor::vector(st.f), kernel.lambda());
  plan.col_potential = kernels::scale(Tensor::vector(st.g), kernel.lambda());
  if (keep_plan) {
    plan.plan = Tensor({n, n});
    const Tensor& c = kernel.cost();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        plan.plan.at(i, j) = std::exp(st.f[i] + st.g[j] - c.at(i, j) / kernel.lambda());
  }
  return plan;
}

// Reverse pass: adjoints of the value w.r.t. the marginals a and b.
void backprop(const SinkhornState& st, const SinkhornHistory& h, const GibbsKernel& kernel,
              std::span<const double> a, std::span<const double> b, double out_grad, std::span<double> grad_a,
              std::span<double> grad_b) {
  const std::size_t n = kernel.size();
  const double lambda = kernel.lambda();
  Vec fbar(n), gbar(n), tmp(n), work(n);
  Vec la_bar(n, 0.0), lb_bar(n, 0.0);

  // ∂value/∂F_i = λ r_i (1 + F_i + (P G)_i),  ∂value/∂G_j = λ (c_j (1 + G_j) + (Pᵀ (r⊙F))_j)
  kernel.rows_apply(st.g, st.s_final, st.g, tmp);
  for (std::size_t i = 0; i < n; ++i) fbar[i] = out_grad * lambda * st.row_mass[i] * (1.0 + st.f[i] + tmp[i]);
  for (std::size_t i = 0; i < n; ++i) work[i] = st.row_mass[i] * st.f[i];
  kernel.rows_apply_t(st.g, st.s_final, work, tmp);
  for (std::size_t j = 0; j < n; ++j) gbar[j] = out_grad * lambda * (st.col_mass[j] * (1.0 + st.g[j]) + tmp[j]);

  for (std::size_t t = h.f.size(); t-- > 0;) {
    // G^t = log b − lse_cols(F^t)
    for (std::size_t j = 0; j < n; ++j) lb_bar[j] += gbar[j];
    kernel.cols_apply_t(h.f[t], h.q[t], gbar, tmp);
    for (std::size_t i = 0; i < n; ++i) fbar[i] -= tmp[i];
    // F^t = log a − lse_rows(G^{t−1})
    for (std::size_t i = 0; i < n; ++i) la_bar[i] += fbar[i];
    if (t > 0) {
      kernel.rows_apply_t(h.g_prev[t], h.s[t], fbar, tmp);
      for (std::size_t j = 0; j < n; ++j) gbar[j] = -tmp[j];
    }
    std::fill(fbar.begin(), fbar.end(), 0.0);
  }
  for (std::size_t i = 0; i < n; ++i) {
    grad_a[i] += a[i] > ad::kLogFloor ? la_bar[i] / a[i] : 0.0;
    grad_b[i] += b[i] > ad::kLogFloor ? lb_bar[i] / b[i] : 0.0;
  }
}

}  // namespace

SinkhornResult sinkhorn_distance(const ProbImage& x0, const ProbImage& x, const GibbsKernel& kernel,
                                 const SinkhornOptions& options, bool keep_plan) {
  require(options.lambda == kernel.lambda(), ErrorCode::invalid_argument, "kernel λ differs from options λ");
  const auto st = solve(x0.probabilities.data(), x.probabilities.data(), kernel, options, nullptr);
  return {st.value, make_plan(st, kernel, keep_plan)};
}

SinkhornResult sinkhorn_distance(const ProbImage& x0, const ProbImage& x, const CostMatrix& cost,
                                 const SinkhornOptions& options, bool keep_plan) {
  return sinkhorn_distance(x0, x, GibbsKernel(cost, options.lambda), options, keep_plan);
}

ad::Var sinkhorn(ad::Var a, ad::Var b, std::shared_ptr<const GibbsKernel> kernel, const SinkhornOptions& options,
                 TransportPlan* report) {
  require(kernel != nullptr, ErrorCode::invalid_argument, "sinkhorn needs a kernel");
  require(options.lambda == kernel->lambda(), ErrorCode::invalid_argument, "kernel λ differs from options λ");
  ad::Tape& tape = a.tape();
  const bool needs_grad = tape.requires_grad(a) || tape.requires_grad(b);
  auto history = needs_grad ? std::make_shared<SinkhornHistory>() : nullptr;
  auto state = std::make_shared<SinkhornState>(
      solve(a.value().data(), b.value().data(), *kernel, options, history.get()));
  if (report) *report = make_plan(*state, *kernel, false);
  return tape.record(Tensor::scalar(state->value), {a, b},
                     [a, b, kernel, state, history](const Tensor& g, std::span<Tensor> grads) {
                       backprop(*state, *history, *kernel, a.value().data(), b.value().data(), g[0],
                                grads[0].data(), grads[1].data());
                     });
}

Tensor sinkhorn_gradient(const Tensor& x0, const Tensor& x, const CostMatrix& cost, const SinkhornOptions& options) {
  require(x0.size() == x.size(), ErrorCode::shape_mismatch, "sinkhorn_gradient images differ in size");
  auto kernel = std::make_shared<const GibbsKernel>(cost, options.lambda);
  ad::Tape tape;
  const ad::Var raw = tape.variable(x);
  const ad::Var a = tape.constant(ProbImage::from_pixels(x0).probabilities);
  const ad::Var value = sinkhorn(a, ad::normalize_sum(raw), kernel, options);
  return tape.backward(value)[raw];
}

SinkhornDivergence::SinkhornDivergence(const Tensor& x0, std::shared_ptr<const GibbsKernel> kernel,
                                       SinkhornOptions options)
    : x0_prob_(ProbImage::from_pixels(x0).probabilities), kernel_(std::move(kernel)), options_(options) {
  require(kernel_ && kernel_->size() == x0.size(), ErrorCode::shape_mismatch, "kernel does not match image size");
  const ProbImage p{x0_prob_, 1.0};
  self_x0_ = sinkhorn_distance(p, p, *kernel_, options_, false).value;
}

double SinkhornDivergence::value(const Tensor& x) const {
  const ProbImage p0{x0_prob_, 1.0};
  const ProbImage p = ProbImage::from_pixels(x);
  const double cross = sinkhorn_distance(p0, p, *kernel_, options_, false).value;
  const double self = sinkhorn_distance(p, p, *kernel_, options_, false).value;
  return cross - 0.5 * self_x0_ - 0.5 * self;
}

ad::Var SinkhornDivergence::value(ad::Var x) const {
  ad::Tape& tape = x.tape();
  const ad::Var p = ad::normalize_sum(x);
  const ad::Var cross = sinkhorn(tape.constant(x0_prob_), p, kernel_, options_);
  const ad::Var self = sinkhorn(p, p, kernel_, options_);
  return ad::add_scalar(ad::sub(cross, ad::scale(self, 0.5)), -0.5 * self_x0_);
}

double sinkhorn_divergence(const Tensor& x0, const Tensor& x, const CostMatrix& cost, const SinkhornOptions& options) {
  return SinkhornDivergence(x0, std::make_shared<const GibbsKernel>(cost, options.lambda), options).value(x);
}

}  // namespace latentadv
