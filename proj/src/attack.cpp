#include "latentadv/attack.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>

#include "json.hpp"

#include "latentadv/errors.hpp"
#include "latentadv/logging.hpp"

namespace latentadv {

std::string_view to_string(InitStrategy strategy) {
  return strategy == InitStrategy::donor ? "donor" : "random_search";
}

InitStrategy init_strategy_from_string(std::string_view tag) {
  if (tag == "donor") return InitStrategy::donor;
  if (tag == "random_search" || tag == "random-search") return InitStrategy::random_search;
  throw Error(ErrorCode::invalid_argument, "unknown init strategy '" + std::string(tag) + "'");
}

double AttackConfig::beta(std::size_t i) const { return beta0 * std::pow(beta_decay, static_cast<double>(i)); }

void AttackConfig::validate() const {
  require(alpha > 0 && std::isfinite(alpha), ErrorCode::invalid_argument, "alpha must be positive");
  require(beta0 > 0 && std::isfinite(beta0), ErrorCode::invalid_argument, "beta0 must be positive");
  require(beta_decay > 0 && beta_decay <= 1, ErrorCode::invalid_argument, "beta_decay must lie in (0, 1]");
  require(delta > 0 && std::isfinite(delta), ErrorCode::invalid_argument, "delta must be positive");
  require(init_radius_step >= 0, ErrorCode::invalid_argument, "init_radius_step must be non-negative");
  if (distance.kind == DistanceKind::sinkhorn)
    require(distance.sinkhorn.lambda > 0, ErrorCode::invalid_argument, "Sinkhorn lambda must be positive");
  if (lipschitz) require(*lipschitz >= 0, ErrorCode::invalid_argument, "Lipschitz estimate must be non-negative");
}

int bisection_bound(double lipschitz, double step, double delta) {
  const double ratio = lipschitz * step / delta;
  if (!(ratio > 1.0)) return 0;
  return static_cast<int>(std::ceil(std::log2(ratio)));
}

// ---------------------------------------------------------------------------
// Projection and bounce-away

ProjectionOutcome inexact_project(const Tensor& p_next, const Tensor& p, double delta, const ConstraintFn& g_hat) {
  return inexact_project(p_next, p, delta, g_hat, g_hat(p));
}

ProjectionOutcome inexact_project(const Tensor& p_next, const Tensor& p, double delta, const ConstraintFn& g_hat,
                                  double g_p) {
  require(p.same_shape(p_next), ErrorCode::shape_mismatch, "projection endpoints differ in shape");
  require(delta > 0, ErrorCode::invalid_argument, "delta must be positive");
  require(g_p < 0, ErrorCode::precondition, "projection start is not strictly feasible (g = " + std::to_string(g_p) + ")");

  ProjectionOutcome out;
  const double g_next = g_hat(p_next);
  if (g_next < 0) {
    out.point = p_next;
    out.g = g_next;
    return out;
  }
  out.unchanged = false;
  double a = 0.0, b = 1.0, c = 0.5;
  // Enough halvings to exhaust double precision on [0,1].
  constexpr std::size_t kMaxHalvings = 1100;
  for (;;) {
    Tensor q = kernels::lerp(p, p_next, c);
    const double gq = g_hat(q);
    require(std::isfinite(gq), ErrorCode::non_finite, "constraint evaluated to a non-finite value");
    if (gq >= -delta && gq < 0) {
      out.point = std::move(q);
      out.g = gq;
      out.c = c;
      return out;
    }
    if (gq < -delta) a = c;
    else b = c;
    const double next = 0.5 * (a + b);
    if (next == a || next == b || out.bisections == kMaxHalvings) {
      // Interval exhausted: fall back to the feasible end.
      log_warning("projection interval collapsed after " + std::to_string(out.bisections) + " halvings");
      out.point = kernels::lerp(p, p_next, a);
      out.g = a == 0.0 ? g_p : g_hat(out.point);
      out.c = a;
      return out;
    }
    c = next;
    ++out.bisections;
  }
}

BounceOutcome bounce_away(const Tensor& p, double beta, const Tensor& grad_g, const ConstraintFn& g_hat) {
  require(p.same_shape(grad_g), ErrorCode::shape_mismatch, "gradient shape differs from the point");
  require(beta > 0, ErrorCode::invalid_argument, "beta must be positive");
  BounceOutcome out;
  const double norm = kernels::norm(grad_g);
  if (!(norm > 0) || !std::isfinite(norm)) {
    log_debug("bounce-away skipped: degenerate constraint gradient");
    out.point = p;
    out.g = g_hat(p);
    out.degenerate = true;
    return out;
  }
  const Tensor direction = kernels::scale(grad_g, 1.0 / norm);
  for (double b = beta; b >= kBetaFloor; b *= 0.5) {
    Tensor q = kernels::axpy(-b, direction, p);
    const double gq = g_hat(q);
    if (gq < 0) {
      out.point = std::move(q);
      out.g = gq;
      out.beta = b;
      return out;
    }
    ++out.halvings;
  }
  log_debug("bounce-away reached the step floor without a strictly feasible point");
  out.point = p;
  out.g = g_hat(p);
  out.degenerate = true;
  return out;
}

// ---------------------------------------------------------------------------
// Algorithm loop

namespace {

bool misclassified(const ConstraintContext& ctx, std::size_t predicted) {
  return ctx.mode().is_targeted() ? predicted == ctx.mode().target() : predicted != ctx.original_label();
}

}  // namespace

AttackResult run_attack(const ConstraintContext& ctx, const AttackConfig& config, const Tensor& p_init) {
  config.validate();
  require(p_init.same_shape(ctx.h0()), ErrorCode::shape_mismatch,
          "initial perturbation " + shape_string(p_init.shape()) + " does not match " + shape_string(ctx.h0().shape()));
  const ConstraintFn g_fn = [&ctx](const Tensor& q) { return ctx.g_hat(q); };

  Tensor p = p_init;
  double g_p = ctx.g_hat(p);
  require(g_p < 0, ErrorCode::infeasible_init, "initial perturbation is not strictly feasible (g = " + std::to_string(g_p) + ")");

  AttackResult result;
  std::vector<std::size_t> snaps = config.snapshot_iters;
  std::sort(snaps.begin(), snaps.end());
  auto take_snapshot = [&](std::size_t iter) {
    if (std::binary_search(snaps.begin(), snaps.end(), iter)) result.snapshots.push_back({iter, ctx.image(p)});
  };
  take_snapshot(0);
  result.initial_objective = ctx.f_hat(p);
  result.trace.reserve(config.max_iter);

  bool moved = false;
  for (std::size_t i = 0; i < config.max_iter; ++i) {
    IterationRecord rec;
    rec.iter = i + 1;
    if (i > 0 && moved) {
      const Evaluation ge = ctx.g_hat_with_gradient(p);
      const BounceOutcome bounce = bounce_away(p, config.beta(i), ge.gradient, g_fn);
      rec.bounced = true;
      rec.beta = bounce.beta;
      p = bounce.point;
      g_p = bounce.g;
    }

    const Evaluation fe = ctx.f_hat_with_gradient(p);
    if (!std::isfinite(fe.value) || !fe.gradient.all_finite()) {
      result.trace.push_back(rec);
      throw Error(ErrorCode::non_finite, "objective or gradient became non-finite at iteration " + std::to_string(i + 1));
    }
    rec.f = fe.value;
    const double norm = kernels::norm(fe.gradient);
    const Tensor p_next = norm > 0 ? kernels::axpy(-config.alpha / norm, fe.gradient, p) : p;
    rec.step_norm = kernels::norm(kernels::sub(p_next, p));

    const ProjectionOutcome proj = inexact_project(p_next, p, config.delta, g_fn, g_p);
    moved = !proj.unchanged;
    rec.projected = moved;
    rec.bisections = proj.bisections;
    rec.c = proj.c;
    if (config.lipschitz) rec.bound = bisection_bound(*config.lipschitz, rec.step_norm, config.delta);
    p = proj.point;
    g_p = proj.g;
    rec.g = g_p;
    require(g_p < 0, ErrorCode::precondition, "iterate left the strictly feasible set");
    result.trace.push_back(rec);
    take_snapshot(i + 1);
  }

  result.iterations = config.max_iter;
  result.p = p;
  result.image = ctx.image(p);
  result.g = g_p;
  result.objective = ctx.f_hat(p);
  result.l2 = ctx.l2_to_original(result.image);
  result.wasserstein = ctx.wasserstein_to_original(result.image);
  result.predicted_class = ctx.classifier().predict(result.image);
  result.success = g_p < 0 && misclassified(ctx, result.predicted_class);
  return result;
}

// ---------------------------------------------------------------------------
// Initialization

namespace {

Tensor donor_init(const ConstraintContext& ctx, const AttackConfig& config, const DonorPool& donors) {
  require(donors.data != nullptr && donors.encoder != nullptr, ErrorCode::invalid_argument,
          "donor initialization needs a dataset and an encoder");
  const Dataset& data = *donors.data;
  const Classifier& classifier = ctx.classifier();
  const AttackMode mode = ctx.mode();

  struct Candidate {
    double distance;
    std::size_t index;
    Tensor code;
  };
  std::vector<Candidate> candidates;
  constexpr std::size_t kChunk = 512;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    std::vector<std::size_t> idx(std::min(kChunk, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const Tensor batch = data.batch(idx);
    const Tensor probs = classifier.classify(batch);
    const Tensor codes = donors.encoder->encode(batch);
    const Tensor recon = ctx.decoder().decode(codes);
    const std::size_t classes = probs.cols();
    const std::size_t latent = codes.cols();
    const std::size_t pixels = recon.cols();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      std::span<const double> row(probs.data().data() + r * classes, classes);
      const std::size_t predicted = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      bool wanted = false;
      if (mode.is_targeted()) wanted = margin(row, mode.target()) < -config.donor_margin;
      else wanted = predicted != ctx.original_label() && margin(row, predicted) < -config.donor_margin;
      if (!wanted) continue;
      double d = 0.0;
      for (std::size_t j = 0; j < pixels; ++j) {
        const double diff = recon.data()[r * pixels + j] - ctx.x0()[j];
        d += diff * diff;
      }
      std::vector<double> code(codes.data().begin() + static_cast<std::ptrdiff_t>(r * latent),
                               codes.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * latent));
      candidates.push_back({d, idx[r], Tensor::vector(std::move(code))});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.index < b.index;
  });
  for (const auto& cand : candidates) {
    Tensor p = kernels::sub(ctx.decoder().decode_first(cand.code), ctx.h0());
    if (ctx.g_hat(p) < 0) return p;
  }
  throw Error(ErrorCode::no_feasible_init, "no donor image yields a strictly feasible start (" +
                                               std::to_string(candidates.size()) + " candidates checked)");
}

Tensor random_search_init(const ConstraintContext& ctx, const AttackConfig& config) {
  std::mt19937_64 rng(config.seed ^ 0x9E3779B97F4A7C15ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t n = ctx.h0().size();
  for (std::size_t t = 1; t <= config.init_trials; ++t) {
    Tensor u({n});
    for (double& v : u.data()) v = normal(rng);
    const double norm = kernels::norm(u);
    const double radius = config.init_radius_step * static_cast<double>(t);
    Tensor p = norm > 0 ? kernels::scale(u, radius / norm) : Tensor({n}, 0.0);
    if (ctx.g_hat(p) < 0) return p;
  }
  throw Error(ErrorCode::no_feasible_init,
              "random search found no feasible perturbation in " + std::to_string(config.init_trials) + " trials");
}

}  // namespace

Tensor find_feasible_init(const ConstraintContext& ctx, const AttackConfig& config, const DonorPool& donors) {
  Tensor p = config.init == InitStrategy::donor ? donor_init(ctx, config, donors) : random_search_init(ctx, config);
  require(ctx.g_hat(p) < 0, ErrorCode::no_feasible_init, "initial perturbation failed verification");
  return p;
}

AttackResult pixel_baseline_attack(const ConstraintContext& ctx, const AttackConfig& config, const DonorPool& donors) {
  const ConstraintContext pixel = ctx.with_split(ctx.decoder().layer_count());
  return run_attack(pixel, config, find_feasible_init(pixel, config, donors));
}

// ---------------------------------------------------------------------------
// Lipschitz estimate

std::vector<double> estimate_lipschitz(const ConstraintContext& ctx, std::span<const AttackMode> modes,
                                       const Tensor& center, double max_length, std::size_t samples,
                                       std::uint64_t seed) {
  require(center.same_shape(ctx.h0()), ErrorCode::shape_mismatch, "Lipschitz center does not match h0");
  require(max_length > 0, ErrorCode::invalid_argument, "segment length must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t n = center.size();
  const bool pixel = ctx.decoder().is_pixel_split();

  auto random_direction = [&]() {
    Tensor u({n});
    for (double& v : u.data()) v = normal(rng);
    return kernels::scale(u, 1.0 / kernels::norm(u));
  };

  std::vector<double> best(modes.size(), 0.0);
  constexpr std::size_t kChunk = 500;
  for (std::size_t start = 0; start < samples; start += kChunk) {
    const std::size_t count = std::min(kChunk, samples - start);
    Tensor points({2 * count, n});
    std::vector<double> lengths(count);
    for (std::size_t s = 0; s < count; ++s) {
      // a on the segment [0, center] plus a random offset, b a random step away.
      const Tensor a = kernels::axpy(max_length * unit(rng), random_direction(), kernels::scale(center, unit(rng)));
      const double len = max_length * (1.0 - unit(rng));
      const Tensor b = kernels::axpy(len, random_direction(), a);
      lengths[s] = kernels::norm(kernels::sub(a, b));
      for (std::size_t j = 0; j < n; ++j) {
        points.data()[(2 * s) * n + j] = ctx.h0()[j] + a[j];
        points.data()[(2 * s + 1) * n + j] = ctx.h0()[j] + b[j];
      }
    }
    Tensor images = ctx.decoder().decode_second(points);
    if (pixel)
      for (double& v : images.data()) v = std::clamp(v, 0.0, 1.0);
    const Tensor probs = ctx.classifier().classify(images);
    const std::size_t classes = probs.cols();
    for (std::size_t s = 0; s < count; ++s) {
      if (!(lengths[s] > 0)) continue;
      std::span<const double> pa(probs.data().data() + (2 * s) * classes, classes);
      std::span<const double> pb(probs.data().data() + (2 * s + 1) * classes, classes);
      for (std::size_t m = 0; m < modes.size(); ++m) {
        double ga, gb;
        if (modes[m].is_targeted()) {
          ga = margin(pa, modes[m].target());
          gb = margin(pb, modes[m].target());
        } else {
          ga = -margin(pa, ctx.original_label());
          gb = -margin(pb, ctx.original_label());
        }
        best[m] = std::max(best[m], std::abs(ga - gb) / lengths[s]);
      }
    }
  }
  return best;
}

double estimate_lipschitz(const ConstraintContext& ctx, const Tensor& center, double max_length, std::size_t samples,
                          std::uint64_t seed) {
  const AttackMode mode = ctx.mode();
  return estimate_lipschitz(ctx, std::span<const AttackMode>(&mode, 1), center, max_length, samples, seed)[0];
}

// ---------------------------------------------------------------------------
// Export

void write_trace_csv(const AttackResult& result, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path.string());
  out << "iter,f,g,bisection_count,beta,bounced,projected,step_norm,c,bound\n";
  out << std::setprecision(17);
  for (const auto& r : result.trace) {
    out << r.iter << ',' << r.f << ',' << r.g << ',' << r.bisections << ',' << r.beta << ',' << (r.bounced ? 1 : 0)
        << ',' << (r.projected ? 1 : 0) << ',' << r.step_norm << ',' << r.c << ',' << r.bound << '\n';
  }
  require(static_cast<bool>(out), ErrorCode::io, "failed writing " + path.string());
}

void write_result_json(const AttackResult& result, const AttackConfig& config, const std::filesystem::path& path) {
  nlohmann::json j;
  j["success"] = result.success;
  j["objective"] = result.objective;
  j["initial_objective"] = result.initial_objective;
  j["l2"] = result.l2;
  j["wasserstein"] = result.wasserstein;
  j["g"] = result.g;
  j["predicted_class"] = result.predicted_class;
  j["iterations"] = result.iterations;
  j["config"] = {{"max_iter", config.max_iter},
                 {"alpha", config.alpha},
                 {"beta0", config.beta0},
                 {"beta_decay", config.beta_decay},
                 {"delta", config.delta},
                 {"mode", to_string(config.mode.kind())},
                 {"target", config.mode.target()},
                 {"distance", to_string(config.distance.kind)},
                 {"sinkhorn_lambda", config.distance.sinkhorn.lambda},
                 {"sinkhorn_iters", config.distance.sinkhorn.max_iters},
                 {"sinkhorn_tol", config.distance.sinkhorn.tol},
                 {"init", to_string(config.init)},
                 {"seed", config.seed}};
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace latentadv
