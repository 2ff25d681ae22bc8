#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <random>
#include <vector>

#include "latentadv/attack.hpp"
#include "latentadv/errors.hpp"
#include "latentadv/steganalysis.hpp"
#include "support.hpp"

using namespace latentadv;
using testing::random_tensor;

namespace {

Tensor scalar(double v) { return Tensor({1}, {v}); }

ConstraintFn line(double root) {
  return [root](const Tensor& q) { return q[0] - root; };
}

ErrorCode error_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error raised");
  return ErrorCode::io;
}

AttackConfig toy_config(AttackMode mode, std::size_t iters = 60) {
  AttackConfig c;
  c.max_iter = iters;
  c.alpha = 0.2;
  c.delta = 0.2;
  c.mode = mode;
  c.init = InitStrategy::random_search;
  c.init_radius_step = 0.5;
  c.seed = 3;
  return c;
}

struct ToyCase {
  ConstraintContext ctx;
  Tensor init;
};

// Draws originals until random search finds a feasible start. Targeted cases
// take the first other class that random search can reach.
std::vector<ToyCase> toy_cases(const testing::ToyModels& m, std::size_t split, bool targeted, std::size_t count,
                               std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<ToyCase> out;
  const std::size_t classes = m.classifier->class_count();
  for (int draws = 0; out.size() < count; ++draws) {
    REQUIRE(draws < 50 * static_cast<int>(count));
    const Tensor z0 = random_tensor({4}, rng, -1, 1);
    const std::size_t pred = m.classifier->predict(SplitDecoder(m.decoder, 0).decode(z0));
    for (std::size_t shift = 1; shift < (targeted ? classes : 2); ++shift) {
      const AttackMode mode = targeted ? AttackMode::targeted((pred + shift) % classes) : AttackMode::untargeted();
      auto ctx = testing::toy_context(m, split, z0, mode);
      AttackConfig cfg = toy_config(mode);
      cfg.seed = seed + out.size();
      try {
        Tensor init = find_feasible_init(ctx, cfg);
        out.push_back({std::move(ctx), std::move(init)});
        break;
      } catch (const Error& e) {
        REQUIRE(e.code() == ErrorCode::no_feasible_init);
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("projection returns a feasible candidate unchanged") {
  const auto out = inexact_project(scalar(0.3), scalar(0.0), 0.1, line(0.6));
  CHECK(out.unchanged);
  CHECK(out.point == scalar(0.3));
  CHECK(out.bisections == 0);
  CHECK(out.g == doctest::Approx(-0.3));
}

TEST_CASE("projection hand traces on q - 0.6") {
  // δ = 0.1: the first midpoint 0.5 has ĝ = −0.1 and is accepted.
  const auto coarse = inexact_project(scalar(1.0), scalar(0.0), 0.1, line(0.6));
  CHECK_FALSE(coarse.unchanged);
  CHECK(coarse.c == 0.5);
  CHECK(coarse.point[0] == 0.5);
  CHECK(coarse.bisections == 0);

  // δ = 0.01: midpoints 0.5, 0.75, 0.625, 0.5625 rejected, 0.59375 accepted.
  const auto fine = inexact_project(scalar(1.0), scalar(0.0), 0.01, line(0.6));
  CHECK(fine.c == 0.59375);
  CHECK(fine.c >= 0.59);
  CHECK(fine.c <= 0.6);
  CHECK(fine.bisections == 4);
  CHECK(static_cast<int>(fine.bisections) <= bisection_bound(1.0, 1.0, 0.01));
  CHECK(bisection_bound(1.0, 1.0, 0.01) == 7);
}

TEST_CASE("projection treats a zero constraint value as infeasible") {
  const auto out = inexact_project(scalar(0.6), scalar(0.0), 0.5, line(0.6));
  CHECK_FALSE(out.unchanged);
  CHECK(out.c == 0.5);
}

TEST_CASE("projection rejects an infeasible start") {
  CHECK(error_of([] { inexact_project(scalar(1.0), scalar(0.7), 0.1, line(0.6)); }) == ErrorCode::precondition);
  CHECK(error_of([] { inexact_project(scalar(1.0), scalar(0.6), 0.1, line(0.6)); }) == ErrorCode::precondition);
  CHECK(error_of([] { inexact_project(scalar(1.0), scalar(0.0), 0.0, line(0.6)); }) == ErrorCode::invalid_argument);
  CHECK(error_of([] { inexact_project(Tensor({2}), scalar(0.0), 0.1, line(0.6)); }) == ErrorCode::shape_mismatch);
}

TEST_CASE("projection contract on 10^4 synthetic 1-D instances") {
  // ĝ(q) = s·(q − r) + A·sin(ωq): continuous, Lipschitz with L = |s| + |A|ω.
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> pos(0.05, 3.0);
  int projected = 0, bound_checked = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const double s = pos(rng) * (u(rng) < 0 ? -1 : 1), r = u(rng), amp = 0.3 * pos(rng) * u(rng), w = 4 * pos(rng);
    const ConstraintFn g = [=](const Tensor& q) { return s * (q[0] - r) + amp * std::sin(w * q[0]); };
    const double lipschitz = std::abs(s) + std::abs(amp) * w;
    Tensor p = scalar(2 * u(rng));
    for (int retry = 0; retry < 100 && g(p) >= 0; ++retry) p = scalar(3 * u(rng));
    if (g(p) >= 0) continue;
    const Tensor p_next = scalar(3 * u(rng));
    const double delta = std::pow(10.0, -3 * pos(rng) / 3.0);
    CAPTURE(trial);

    const auto out = inexact_project(p_next, p, delta, g);
    if (g(p_next) < 0) {
      CHECK(out.unchanged);
      CHECK(out.point == p_next);
      CHECK(out.bisections == 0);
      continue;
    }
    ++projected;
    CHECK_FALSE(out.unchanged);
    CHECK(out.g >= -delta);
    CHECK(out.g < 0);
    CHECK(out.g == g(out.point));
    CHECK(out.c >= 0.0);
    CHECK(out.c <= 1.0);
    CHECK(out.point == kernels::lerp(p, p_next, out.c));
    // The halving argument needs ĝ(p) < −δ at the feasible end.
    if (g(p) < -delta) {
      ++bound_checked;
      CHECK(static_cast<int>(out.bisections) <= bisection_bound(lipschitz, std::abs(p_next[0] - p[0]), delta));
    }
  }
  CHECK(projected > 3000);
  CHECK(bound_checked > 1000);
}

TEST_CASE("a shallow feasible start can exceed the halving bound") {
  // ĝ(0) = −1e-9 > −δ, so the feasible end never certifies a drop of δ and
  // the midpoints crowd toward p.
  const ConstraintFn g = [](const Tensor& q) { return q[0] < 1e-6 ? q[0] - 1e-9 : 0.5; };
  const auto out = inexact_project(scalar(1.0), scalar(0.0), 0.1, g);
  CHECK(out.g < 0);
  CHECK(out.g >= -0.1);
  CHECK(static_cast<int>(out.bisections) > bisection_bound(1.0, 1.0, 0.1));
}

TEST_CASE("with delta >= 1 and a margin-bounded constraint, only infeasible midpoints are rejected") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 2000; ++trial) {
    const double r = u(rng);
    const ConstraintFn g = [r](const Tensor& q) { return std::clamp(std::tanh(3 * (q[0] - r)), -1.0, 1.0); };
    Tensor p = scalar(u(rng) - 1.5);
    if (g(p) >= 0) continue;
    const Tensor p_next = scalar(u(rng) + 1.5);
    const auto out = inexact_project(p_next, p, 1.0, g);
    if (out.unchanged) continue;
    // The feasible end never moves, so c halves once per rejection.
    CHECK(out.c == std::ldexp(1.0, -static_cast<int>(out.bisections) - 1));
    for (std::size_t k = 0; k < out.bisections; ++k)
      CHECK(g(kernels::lerp(p, p_next, std::ldexp(1.0, -static_cast<int>(k) - 1))) >= 0.0);
  }
}

TEST_CASE("bisection bound") {
  CHECK(bisection_bound(1.0, 1.0, 0.01) == 7);
  CHECK(bisection_bound(1.0, 1.0, 1.0) == 0);
  CHECK(bisection_bound(0.0, 1.0, 0.1) == 0);
  CHECK(bisection_bound(4.0, 1.0, 0.5) == 3);
  CHECK(bisection_bound(4.0, 1.0, 0.4) == 4);
}

TEST_CASE("bounce-away examples") {
  // ĝ(q) = q − 0.05 at 0 with ∇ĝ = 1: −1 is accepted immediately.
  const auto first = bounce_away(scalar(0.0), 1.0, scalar(1.0), line(0.05));
  CHECK(first.point[0] == -1.0);
  CHECK(first.g == doctest::Approx(-1.05));
  CHECK(first.beta == 1.0);
  CHECK(first.halvings == 0);
  CHECK_FALSE(first.degenerate);

  // Gradient is normalized before the step.
  const auto tiny = bounce_away(scalar(-3.0), 1e-6, scalar(250.0), line(0.05));
  CHECK(tiny.point[0] == doctest::Approx(-3.0 - 1e-6).epsilon(1e-15));
  CHECK(tiny.halvings == 0);

  const auto flat = bounce_away(scalar(-0.5), 1.0, scalar(0.0), line(0.05));
  CHECK(flat.degenerate);
  CHECK(flat.point == scalar(-0.5));

  // Every step along −∇ĝ lands in the infeasible region: the floor returns p.
  const ConstraintFn wall = [](const Tensor& q) { return q[0] < 0.05 ? 1.0 : -1.0; };
  const auto stuck = bounce_away(scalar(0.05), 1.0, scalar(1.0), wall);
  CHECK(stuck.degenerate);
  CHECK(stuck.point == scalar(0.05));
  CHECK(stuck.halvings > 30);

  CHECK_THROWS_AS(bounce_away(scalar(0.0), 0.0, scalar(1.0), line(0.05)), Error);
}

TEST_CASE("beta schedule") {
  AttackConfig c;
  CHECK(c.beta(0) == 1.0);
  CHECK(c.beta(1) == doctest::Approx(0.99));
  CHECK(c.beta(100) == doctest::Approx(std::pow(0.99, 100)));
  c.beta_decay = 0.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = {};
  c.alpha = -1;
  CHECK_THROWS_AS(c.validate(), Error);
  c = {};
  c.delta = 0;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("zero iterations return the initial point") {
  const auto m = testing::toy_models(31);
  const auto cases = toy_cases(m, 2, false, 1, 32);
  AttackConfig cfg = toy_config(AttackMode::untargeted(), 0);
  const AttackResult r = run_attack(cases[0].ctx, cfg, cases[0].init);
  CHECK(r.p == cases[0].init);
  CHECK(r.success);
  CHECK(r.trace.empty());
  CHECK(r.objective == r.initial_objective);
}

TEST_CASE("infeasible initial perturbations are rejected") {
  const auto m = testing::toy_models(33);
  std::mt19937_64 rng(34);
  const auto ctx = testing::toy_context(m, 2, random_tensor({4}, rng, -1, 1), AttackMode::untargeted());
  const Tensor zero(ctx.h0().shape(), 0.0);
  CHECK(error_of([&] { run_attack(ctx, toy_config(AttackMode::untargeted()), zero); }) == ErrorCode::infeasible_init);
  CHECK(error_of([&] { run_attack(ctx, toy_config(AttackMode::untargeted()), Tensor({3})); }) ==
        ErrorCode::shape_mismatch);
}

TEST_CASE("random search with zero radius finds nothing") {
  const auto m = testing::toy_models(35);
  std::mt19937_64 rng(36);
  const auto ctx = testing::toy_context(m, 2, random_tensor({4}, rng, -1, 1), AttackMode::untargeted());
  AttackConfig cfg = toy_config(AttackMode::untargeted());
  cfg.init_radius_step = 0.0;
  cfg.init_trials = 20;
  CHECK(error_of([&] { find_feasible_init(ctx, cfg); }) == ErrorCode::no_feasible_init);
  // Donor initialization without a pool is a usage error.
  cfg.init = InitStrategy::donor;
  CHECK(error_of([&] { find_feasible_init(ctx, cfg); }) == ErrorCode::invalid_argument);
}

TEST_CASE("random search returns a strictly feasible start") {
  const auto m = testing::toy_models(37);
  for (bool targeted : {false, true})
    for (const auto& c : toy_cases(m, 2, targeted, 10, 38)) CHECK(c.ctx.g_hat(c.init) < 0.0);
}

TEST_CASE("attack trace properties") {
  const auto m = testing::toy_models(41);
  for (std::size_t split : {0u, 2u, 4u}) {
    CAPTURE(split);
    for (bool targeted : {false, true}) {
      for (const auto& c : toy_cases(m, split, targeted, 5, 42 + split)) {
        const AttackConfig cfg = toy_config(c.ctx.mode());
        const AttackResult r = run_attack(c.ctx, cfg, c.init);
        CHECK(r.success);
        CHECK(r.g < 0.0);
        REQUIRE(r.trace.size() == cfg.max_iter);
        for (std::size_t i = 0; i < r.trace.size(); ++i) {
          const IterationRecord& rec = r.trace[i];
          CHECK(rec.iter == i + 1);
          CHECK(rec.g < 0.0);
          // Bounce-away fires exactly after a projection that moved p_next.
          const bool expect_bounce = i > 0 && r.trace[i - 1].projected;
          CHECK(rec.bounced == expect_bounce);
          if (rec.projected) {
            CHECK(rec.g >= -cfg.delta);
          } else {
            CHECK(rec.bisections == 0);
            CHECK(rec.c == 1.0);
          }
        }
        for (double v : r.image.data()) {
          CHECK(v >= 0.0);
          CHECK(v <= 1.0);
        }
        if (c.ctx.mode().is_targeted()) CHECK(r.predicted_class == c.ctx.mode().target());
        else CHECK(r.predicted_class != c.ctx.original_label());
      }
    }
  }
}

TEST_CASE("projection contract on model instances") {
  const auto m = testing::toy_models(51);
  int checked = 0;
  for (std::size_t split = 0; split <= m.decoder.size(); ++split) {
    for (const auto& c : toy_cases(m, split, split % 2 == 1, 20, 52 + split)) {
      const ConstraintFn g = [&](const Tensor& q) { return c.ctx.g_hat(q); };
      // The original (p = 0) is infeasible by construction.
      const Tensor p_next(c.init.shape(), 0.0);
      for (double delta : {1.0, 0.1, 0.01}) {
        const auto out = inexact_project(p_next, c.init, delta, g);
        CHECK_FALSE(out.unchanged);
        CHECK(out.g >= -delta);
        CHECK(out.g < 0.0);
        CHECK(out.point == kernels::lerp(c.init, p_next, out.c));
        ++checked;
      }
    }
  }
  CHECK(checked >= 100);
}

TEST_CASE("targeted attacks mostly reduce the objective") {
  const auto m = testing::toy_models(61);
  int improved = 0, runs = 0;
  for (const auto& c : toy_cases(m, 2, true, 90, 62)) {
    const AttackResult r = run_attack(c.ctx, toy_config(c.ctx.mode()), c.init);
    CHECK(r.success);
    if (r.objective <= r.initial_objective) ++improved;
    ++runs;
  }
  MESSAGE(improved << " of " << runs << " runs reduced f");
  CHECK(improved >= 0.95 * runs);
}

TEST_CASE("attacks are deterministic") {
  const auto m = testing::toy_models(71);
  const auto cases = toy_cases(m, 2, false, 3, 72);
  for (const auto& c : cases) {
    AttackConfig cfg = toy_config(c.ctx.mode());
    cfg.snapshot_iters = {0, 5, 60};
    const AttackResult a = run_attack(c.ctx, cfg, c.init);
    const AttackResult b = run_attack(c.ctx, cfg, c.init);
    CHECK(a.p == b.p);
    CHECK(a.image == b.image);
    REQUIRE(a.trace.size() == b.trace.size());
    for (std::size_t i = 0; i < a.trace.size(); ++i) {
      CHECK(a.trace[i].f == b.trace[i].f);
      CHECK(a.trace[i].g == b.trace[i].g);
      CHECK(a.trace[i].bisections == b.trace[i].bisections);
    }
    REQUIRE(a.snapshots.size() == 3);
    CHECK(a.snapshots[2].image == a.image);
    CHECK(find_feasible_init(c.ctx, cfg) == find_feasible_init(c.ctx, cfg));
  }
}

TEST_CASE("pixel baseline attack") {
  const auto m = testing::toy_models(81);
  for (const auto& c : toy_cases(m, 2, false, 5, 82)) {
    AttackConfig cfg = toy_config(c.ctx.mode());
    const AttackResult r = pixel_baseline_attack(c.ctx, cfg);
    CHECK(r.success);
    CHECK(r.p.size() == 16);
    for (const auto& rec : r.trace) CHECK(rec.g < 0.0);
    for (double v : r.image.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    cfg.max_iter = 0;
    const AttackResult zero = pixel_baseline_attack(c.ctx, cfg);
    CHECK(zero.success);
  }
}

TEST_CASE("lipschitz estimate") {
  const auto m = testing::toy_models(91);
  std::mt19937_64 rng(92);
  const auto ctx = testing::toy_context(m, 2, random_tensor({4}, rng, -1, 1), AttackMode::untargeted());
  const Tensor center(ctx.h0().shape(), 0.0);
  const double a = estimate_lipschitz(ctx, center, 1.0, 500, 7);
  CHECK(a > 0.0);
  CHECK(a == estimate_lipschitz(ctx, center, 1.0, 500, 7));
  const AttackMode modes[] = {AttackMode::untargeted()};
  CHECK(estimate_lipschitz(ctx, modes, center, 1.0, 500, 7)[0] == a);
}

TEST_CASE("trace and result export") {
  const auto m = testing::toy_models(95);
  const auto cases = toy_cases(m, 2, false, 1, 96);
  AttackConfig cfg = toy_config(AttackMode::untargeted(), 5);
  const AttackResult r = run_attack(cases[0].ctx, cfg, cases[0].init);
  testing::TempDir dir("trace");
  write_trace_csv(r, dir.path() / "trace.csv");
  write_result_json(r, cfg, dir.path() / "result.json");
  std::ifstream in(dir.path() / "trace.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header.rfind("iter,f,g,bisection_count,beta,bounced", 0) == 0);
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  CHECK(rows == 5);
  CHECK(std::filesystem::file_size(dir.path() / "result.json") > 0);
}
