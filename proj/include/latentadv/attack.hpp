#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string_view>
#include <vector>

#include "latentadv/constraints.hpp"
#include "latentadv/dataset.hpp"
#include "latentadv/tensor.hpp"

namespace latentadv {

enum class InitStrategy { donor, random_search };

std::string_view to_string(InitStrategy strategy);
InitStrategy init_strategy_from_string(std::string_view tag);

struct AttackConfig {
  std::size_t max_iter = 1000;
  double alpha = 1.0;
  double beta0 = 1.0;
  double beta_decay = 0.99;  // βᵢ = β₀·decayⁱ
  double delta = 1.0;
  AttackMode mode = AttackMode::untargeted();
  DistanceSpec distance;
  InitStrategy init = InitStrategy::donor;
  std::uint64_t seed = 1;
  bool literal_untargeted = false;

  // Random-search init: trial t samples a Gaussian direction at radius t·step.
  std::size_t init_trials = 200;
  double init_radius_step = 0.25;
  // Donor init: the donor must already satisfy margin < −donor_margin.
  double donor_margin = 0.1;

  // Iterations after which the current image is stored (0 = the init).
  std::vector<std::size_t> snapshot_iters;
  // When set, every projection is checked against ⌈log₂(L̂‖p_next−p‖/δ)⌉.
  std::optional<double> lipschitz;

  double beta(std::size_t i) const;
  void validate() const;
};

struct IterationRecord {
  std::size_t iter = 0;
  double f = 0.0;           // objective at the stored iterate
  double g = 0.0;           // ĝ at the stored iterate
  std::size_t bisections = 0;
  double beta = 0.0;        // step of the bounce-away, 0 when it did not fire
  bool bounced = false;
  bool projected = false;   // the projection moved p_next
  double step_norm = 0.0;   // ‖p_next − p‖
  double c = 1.0;           // segment parameter of the stored iterate
  int bound = -1;           // ⌈log₂(L̂·step_norm/δ)⌉, −1 without L̂
};

struct Snapshot {
  std::size_t iter = 0;
  Tensor image;
};

struct AttackResult {
  Tensor p;
  Tensor image;
  double objective = 0.0;
  double initial_objective = 0.0;
  double l2 = 0.0;
  double wasserstein = 0.0;
  double g = 0.0;
  bool success = false;
  std::size_t predicted_class = 0;
  std::size_t iterations = 0;
  std::vector<IterationRecord> trace;
  std::vector<Snapshot> snapshots;
};

using ConstraintFn = std::function<double(const Tensor&)>;

struct ProjectionOutcome {
  Tensor point;
  double g = 0.0;             // ĝ(point)
  double c = 1.0;             // point = (1−c)p + c·p_next
  std::size_t bisections = 0; // halvings: rejected midpoints
  bool unchanged = true;      // p_next was already strictly feasible
};

// Inexact projection of p_next onto {ĝ < 0} along the segment from the
// strictly feasible p. Accepts a midpoint once ĝ ∈ [−δ, 0).
ProjectionOutcome inexact_project(const Tensor& p_next, const Tensor& p, double delta, const ConstraintFn& g_hat);
ProjectionOutcome inexact_project(const Tensor& p_next, const Tensor& p, double delta, const ConstraintFn& g_hat,
                                  double g_p);

struct BounceOutcome {
  Tensor point;
  double g = 0.0;
  double beta = 0.0;
  std::size_t halvings = 0;
  bool degenerate = false;  // floor reached or zero gradient; point == p
};

inline constexpr double kBetaFloor = 1e-12;

// Steps from p along −∇ĝ/‖∇ĝ‖, halving β until the result is strictly feasible.
BounceOutcome bounce_away(const Tensor& p, double beta, const Tensor& grad_g, const ConstraintFn& g_hat);

// ⌈log₂(L·step/δ)⌉, clamped at 0.
int bisection_bound(double lipschitz, double step, double delta);

AttackResult run_attack(const ConstraintContext& ctx, const AttackConfig& config, const Tensor& p_init);

struct DonorPool {
  const Dataset* data = nullptr;
  const Encoder* encoder = nullptr;
};

Tensor find_feasible_init(const ConstraintContext& ctx, const AttackConfig& config, const DonorPool& donors = {});

// Same image and budget, perturbation in pixel space (split = layer count).
AttackResult pixel_baseline_attack(const ConstraintContext& ctx, const AttackConfig& config,
                                   const DonorPool& donors = {});

// max |ĝ(a) − ĝ(b)| / ‖a − b‖ over random segments around `center`, of length
// up to `max_length`. The engine uses twice this value.
double estimate_lipschitz(const ConstraintContext& ctx, const Tensor& center, double max_length,
                          std::size_t samples, std::uint64_t seed);

// Lipschitz slopes for several constraints evaluated on one shared sample.
std::vector<double> estimate_lipschitz(const ConstraintContext& ctx, std::span<const AttackMode> modes,
                                       const Tensor& center, double max_length, std::size_t samples,
                                       std::uint64_t seed);

void write_trace_csv(const AttackResult& result, const std::filesystem::path& path);
void write_result_json(const AttackResult& result, const AttackConfig& config, const std::filesystem::path& path);

}  // namespace latentadv
