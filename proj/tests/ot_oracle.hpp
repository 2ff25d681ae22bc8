#pragma once

// Reference entropic optimal transport by direct minimization over the plan
// polytope {W ≥ 0 : W1 = a, Wᵀ1 = b} of the strictly convex primal objective
// ⟨C,W⟩ + λΣ W log W. Starts from the feasible plan abᵀ and takes damped
// equality-constrained Newton steps (the step is the Hessian-metric
// projection of the negative gradient onto the marginal constraints), with a
// fraction-to-boundary rule that keeps every entry strictly positive.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

namespace testing {

struct OracleResult {
  double value = 0.0;
  double transport_cost = 0.0;  // ⟨C,W⟩
  std::size_t iterations = 0;
  double decrement = 0.0;  // final Newton decrement
};

inline OracleResult entropic_ot_oracle(const std::vector<double>& a, const std::vector<double>& b,
                                       const std::vector<double>& cost, double lambda, double tol = 1e-18) {
  const auto n = static_cast<Eigen::Index>(a.size());
  const Eigen::Index m = n * n;
  const Eigen::Index rows = 2 * n - 1;  // one column-sum constraint is redundant
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(rows, m);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      A(i, i * n + j) = 1.0;
      if (j + 1 < n) A(n + j, i * n + j) = 1.0;
    }
  Eigen::VectorXd w(m), c(m);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      w(i * n + j) = a[static_cast<std::size_t>(i)] * b[static_cast<std::size_t>(j)];
      c(i * n + j) = cost[static_cast<std::size_t>(i * n + j)];
    }

  const auto objective = [&](const Eigen::VectorXd& v) {
    double s = 0.0;
    for (Eigen::Index k = 0; k < m; ++k) s += c(k) * v(k) + lambda * v(k) * std::log(v(k));
    return s;
  };

  OracleResult out;
  for (std::size_t it = 0; it < 1000; ++it) {
    const Eigen::VectorXd grad = c.array() + lambda * (1.0 + w.array().log());
    const Eigen::VectorXd dinv = w / lambda;  // inverse Hessian diagonal
    const Eigen::MatrixXd schur = A * dinv.asDiagonal() * A.transpose();
    const Eigen::VectorXd nu = schur.ldlt().solve(A * dinv.cwiseProduct(grad));
    const Eigen::VectorXd dw = -dinv.cwiseProduct(grad - A.transpose() * nu);
    const double decrement = (lambda * dw.array().square() / w.array()).sum();
    out.iterations = it + 1;
    out.decrement = decrement;
    if (!std::isfinite(decrement) || decrement < tol) break;

    double t = 1.0;
    for (Eigen::Index k = 0; k < m; ++k)
      if (dw(k) < 0) t = std::min(t, -0.99 * w(k) / dw(k));
    const double f0 = objective(w);
    bool accepted = false;
    for (; t > 1e-20; t *= 0.5) {
      const Eigen::VectorXd trial = w + t * dw;
      if ((trial.array() > 0).all() && objective(trial) <= f0 - 0.25 * t * decrement) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    w += t * dw;
  }
  out.value = objective(w);
  out.transport_cost = c.dot(w);
  return out;
}

}  // namespace testing
