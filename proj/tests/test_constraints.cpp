#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "latentadv/constraints.hpp"
#include "latentadv/errors.hpp"
#include "support.hpp"

using namespace latentadv;
using testing::finite_difference;
using testing::random_tensor;
using testing::relative_error;

namespace {

// A class other than the current prediction of x₀.
std::size_t other_class(const Classifier& c, const Tensor& x, std::mt19937_64& rng) {
  const std::size_t pred = c.predict(x);
  std::uniform_int_distribution<std::size_t> pick(1, c.class_count() - 1);
  return (pred + pick(rng)) % c.class_count();
}

}  // namespace

TEST_CASE("margin examples") {
  const std::vector<double> f = {0.1, 0.7, 0.2};
  CHECK(margin(f, 1) == doctest::Approx(-0.5).epsilon(1e-15));
  CHECK(margin(f, 0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(margin(std::vector<double>{0, 0, 1, 0}, 2) == -1.0);
  const std::vector<double> uniform(5, 0.2);
  for (std::size_t k = 0; k < 5; ++k) CHECK(margin(uniform, k) == 0.0);

  CHECK_THROWS_AS(margin(std::vector<double>{1.0}, 0), Error);
  CHECK_THROWS_AS(margin(f, 3), Error);
}

TEST_CASE("margin on the tape matches the plain evaluation") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 50; ++i) {
    const Tensor probs = kernels::softmax_rows(random_tensor({6}, rng, -3, 3));
    for (std::size_t k = 0; k < 6; ++k) {
      ad::Tape tape;
      const ad::Var v = margin(tape.variable(probs), k);
      CHECK(v.value()[0] == doctest::Approx(margin(probs.data(), k)).epsilon(1e-15));
    }
  }
}

TEST_CASE("margin lies in [-1,1] and is negative iff k is the strict argmax") {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 1000; ++i) {
    const Tensor probs = kernels::softmax_rows(random_tensor({4}, rng, -5, 5));
    std::size_t best = 0;
    for (std::size_t j = 1; j < 4; ++j)
      if (probs[j] > probs[best]) best = j;
    for (std::size_t k = 0; k < 4; ++k) {
      const double m = margin(probs.data(), k);
      CHECK(m >= -1.0);
      CHECK(m <= 1.0);
      CHECK((m < 0.0) == (k == best));
    }
  }
}

TEST_CASE("constraint examples") {
  // A single identity layer over logits log F reproduces F exactly enough.
  const std::vector<double> f = {0.1, 0.7, 0.2};
  Tensor w({3, 3}), b({3});
  for (std::size_t i = 0; i < 3; ++i) {
    w.at(i, i) = 1.0;
    b[i] = 0.0;
  }
  const Classifier c{LayerStack(std::vector<DenseLayer>{{w, b, Activation::identity}})};
  const Tensor x({3}, {std::log(0.1), std::log(0.7), std::log(0.2)});
  CHECK(constraint_value(c, x, AttackMode::targeted(0), 1) == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(constraint_value(c, x, AttackMode::targeted(1), 1) < 0.0);
  // Frozen label 1 is the prediction: not adversarial.
  CHECK(constraint_value(c, x, AttackMode::untargeted(), 1) == doctest::Approx(0.5).epsilon(1e-12));
  // Frozen label 0 is not the prediction: adversarial.
  CHECK(constraint_value(c, x, AttackMode::untargeted(), 0) == doctest::Approx(-0.6).epsilon(1e-12));
  // Literal form measures the running argmax and never goes negative.
  CHECK(constraint_value(c, x, AttackMode::untargeted(), 0, true) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("literal untargeted constraint is never negative") {
  const auto m = testing::toy_models(3, 4);
  std::mt19937_64 rng(4);
  for (int i = 0; i < 500; ++i) {
    const Tensor x = random_tensor({16}, rng, 0, 1);
    for (std::size_t k = 0; k < 4; ++k) CHECK(constraint_value(*m.classifier, x, AttackMode::untargeted(), k, true) >= 0.0);
  }
}

TEST_CASE("sign semantics") {
  const auto m = testing::toy_models(5, 4);
  std::mt19937_64 rng(6);
  for (int i = 0; i < 2000; ++i) {
    const Tensor x = random_tensor({16}, rng, 0, 1);
    const std::size_t pred = m.classifier->predict(x);
    for (std::size_t k = 0; k < 4; ++k) {
      const double gu = constraint_value(*m.classifier, x, AttackMode::untargeted(), k);
      CHECK((pred != k) == (gu <= 0.0));
      const double gt = constraint_value(*m.classifier, x, AttackMode::targeted(k), k);
      if (pred == k) CHECK(gt <= 0.0);
      if (gt < 0.0) CHECK(pred == k);
    }
  }
}

TEST_CASE("margin is invariant under a logit shift") {
  auto m = testing::toy_models(7, 5);
  LayerStack shifted = m.classifier->stack();
  for (double& v : shifted.layers().back().bias.data()) v += 37.5;
  const Classifier c2{shifted};
  std::mt19937_64 rng(8);
  for (int i = 0; i < 200; ++i) {
    const Tensor x = random_tensor({16}, rng, 0, 1);
    const Tensor p1 = m.classifier->classify(x), p2 = c2.classify(x);
    for (std::size_t k = 0; k < 5; ++k) CHECK(std::abs(margin(p1.data(), k) - margin(p2.data(), k)) < 1e-12);
  }
}

TEST_CASE("context invariants") {
  const auto m = testing::toy_models(9);
  std::mt19937_64 rng(10);
  for (int i = 0; i < 20; ++i) {
    const Tensor z0 = random_tensor({4}, rng, -1, 1);
    const auto ctx = testing::toy_context(m, 2, z0, AttackMode::untargeted());
    CHECK(ctx.original_label() == m.classifier->predict(ctx.x0()));
    CHECK(ctx.g(ctx.x0()) > 0.0);
    CHECK(ctx.h0() == SplitDecoder(m.decoder, 2).decode_first(z0));
    const Tensor zero(ctx.h0().shape(), 0.0);
    CHECK(ctx.image(zero) == ctx.x0());
    CHECK(ctx.l2_to_original(ctx.x0()) == 0.0);

    const std::size_t k = other_class(*m.classifier, ctx.x0(), rng);
    const auto t = ctx.with_split(3);
    CHECK(t.x0() == ctx.x0());
    CHECK(t.h0().size() == 12);
    const auto targeted = testing::toy_context(m, 1, z0, AttackMode::targeted(k));
    CHECK(targeted.g_hat(Tensor(targeted.h0().shape(), 0.0)) > 0.0);
  }
}

TEST_CASE("context preconditions") {
  const auto m = testing::toy_models(11);
  std::mt19937_64 rng(12);
  const Tensor z0 = random_tensor({4}, rng, -1, 1);
  const auto ctx = testing::toy_context(m, 2, z0, AttackMode::untargeted());
  const std::size_t pred = ctx.original_label();

  // Targeting the current prediction: g(x₀) < 0.
  CHECK_THROWS_AS(testing::toy_context(m, 2, z0, AttackMode::targeted(pred)), Error);
  CHECK_THROWS_AS(testing::toy_context(m, 2, z0, AttackMode::targeted(3)), Error);
  CHECK_THROWS_AS(testing::toy_context(m, 2, Tensor({5}, 0.0), AttackMode::untargeted()), Error);
  CHECK_THROWS_AS(ctx.g_hat(Tensor({7}, 0.0)), Error);
  CHECK_THROWS_AS(ctx.f_hat_with_gradient(Tensor({7}, 0.0)), Error);

  // Confidence gate.
  ContextOptions strict;
  strict.min_confidence = 1.0;
  CHECK_THROWS_AS(ConstraintContext(m.classifier, SplitDecoder(m.decoder, 2), z0, AttackMode::untargeted(), {}, strict),
                  Error);
}

TEST_CASE("f_hat and g_hat gradients match finite differences") {
  auto m = testing::toy_models(13);
  LayerStack mild = m.classifier->stack();
  for (double& w : mild.layers().back().weight.data()) w /= 9.0;
  m.classifier = std::make_shared<const Classifier>(std::move(mild));
  std::mt19937_64 rng(14);
  const DistanceSpec l2{};
  const DistanceSpec sk{DistanceKind::sinkhorn, {.lambda = 0.05, .max_iters = 50, .tol = 0.0}};
  int instances = 0, sinkhorn_instances = 0;
  double worst_f = 0, worst_g = 0, worst_sk = 0;
  for (int trial = 0; trial < 30; ++trial) {
    // Saturated softmax leaves gradients near the finite-difference noise floor.
    Tensor z0;
    int draws = 0;
    do {
      z0 = random_tensor({4}, rng, -1, 1);
      REQUIRE(++draws < 10000);
    } while (std::ranges::max(m.classifier->classify(SplitDecoder(m.decoder, 0).decode(z0)).values()) > 0.9);
    for (std::size_t split = 0; split <= m.decoder.size(); ++split) {
      CAPTURE(split);
      for (const auto& spec : {l2, sk}) {
        const AttackMode mode = trial % 2 == 0 ? AttackMode::untargeted()
                                               : AttackMode::targeted(other_class(*m.classifier,
                                                                                  SplitDecoder(m.decoder, 0).decode(z0), rng));
        const auto ctx = testing::toy_context(m, split, z0, mode, spec);
        // Keep pixel-space perturbations inside the clamp.
        const double scale = split == m.decoder.size() ? 0.01 : 0.3;
        const Tensor p = random_tensor(ctx.h0().shape(), rng, -scale, scale);

        const Evaluation g = ctx.g_hat_with_gradient(p);
        CHECK(g.value == doctest::Approx(ctx.g_hat(p)).epsilon(1e-13));
        const double eg = relative_error(g.gradient, finite_difference([&](const Tensor& v) { return ctx.g_hat(v); }, p));
        CHECK(eg < 1e-4);
        worst_g = std::max(worst_g, eg);

        const Evaluation f = ctx.f_hat_with_gradient(p);
        CHECK(f.value == doctest::Approx(ctx.f_hat(p)).epsilon(1e-12));
        const double ef = relative_error(f.gradient, finite_difference([&](const Tensor& v) { return ctx.f_hat(v); }, p));
        if (spec.kind == DistanceKind::sinkhorn) {
          CHECK(ef < 1e-3);
          worst_sk = std::max(worst_sk, ef);
          ++sinkhorn_instances;
        } else {
          CHECK(ef < 1e-4);
          worst_f = std::max(worst_f, ef);
        }
        ++instances;
      }
    }
  }
  MESSAGE("worst rel. err: g_hat " << worst_g << ", f_hat l2 " << worst_f << ", f_hat sinkhorn " << worst_sk);
  CHECK(instances >= 200);
  CHECK(sinkhorn_instances >= 100);
}

TEST_CASE("g_hat is continuous along segments") {
  const auto m = testing::toy_models(15);
  std::mt19937_64 rng(16);
  for (int trial = 0; trial < 20; ++trial) {
    const auto ctx = testing::toy_context(m, 2, random_tensor({4}, rng, -1, 1), AttackMode::untargeted());
    const Tensor a = random_tensor(ctx.h0().shape(), rng), b = random_tensor(ctx.h0().shape(), rng);
    double prev = ctx.g_hat(a);
    for (int s = 1; s <= 1000; ++s) {
      const double t = s / 1000.0;
      const double v = ctx.g_hat(kernels::add(kernels::scale(a, 1 - t), kernels::scale(b, t)));
      CHECK(std::abs(v - prev) < 0.05);
      prev = v;
    }
  }
}
