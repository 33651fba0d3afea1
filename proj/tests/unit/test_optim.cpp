#include <doctest.h>

#include <cmath>
#include <random>

#include "circuit_lab/errors.hpp"
#include "circuit_lab/optim.hpp"

using namespace circuit_lab;
using doctest::Approx;

namespace {

const ModelConfig kCfg{2, 3, 2, 3};

ModelParams filled(double value) {
  auto p = ModelParams::zeros(kCfg);
  p.for_each([&](std::string_view, Tensor& t) { t.fill(value); });
  return p;
}

/// Textbook scalar Adam, written out independently of adam_step.
double scalar_adam(double theta, const std::vector<double>& grads, double lr, double b1, double b2,
                   double eps) {
  double m = 0.0, v = 0.0;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const double g = grads[i];
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double t = static_cast<double>(i + 1);
    theta -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
  }
  return theta;
}

}  // namespace

TEST_CASE("zero gradient leaves parameters and moments unchanged") {
  auto params = init_params(kCfg, 1);
  const auto before = params;
  auto state = AdamState::fresh(kCfg);
  adam_step(params, ModelParams::zeros(kCfg), state, AdamHyper{});
  CHECK(params == before);
  CHECK(state.m == ModelParams::zeros(kCfg));
  CHECK(state.v == ModelParams::zeros(kCfg));
  CHECK(state.step_count == 1);
}

TEST_CASE("first step moves each coordinate by lr |g| / (|g| + eps)") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto params = init_params(kCfg, 3);
  const auto before = params.flatten();
  auto grads = ModelParams::zeros(kCfg);
  grads.for_each([&](std::string_view, Tensor& t) {
    for (auto& x : t.values()) x = normal(rng);
  });
  auto state = AdamState::fresh(kCfg);
  const AdamHyper hyper;
  adam_step(params, grads, state, hyper);

  const auto after = params.flatten();
  const auto g = grads.flatten();
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double delta = after[i] - before[i];
    CHECK(std::abs(delta) == Approx(hyper.lr * std::abs(g[i]) / (std::abs(g[i]) + hyper.eps)).epsilon(1e-9));
    if (std::abs(g[i]) > hyper.eps * 1e3) {
      CHECK(std::signbit(delta) != std::signbit(g[i]));
      CHECK(std::abs(std::abs(delta) - hyper.lr) <= 1e-3 * hyper.lr);
    }
  }
}

TEST_CASE("two steps with constant unit gradient match the scalar recurrence") {
  auto params = filled(0.0);
  auto state = AdamState::fresh(kCfg);
  const AdamHyper hyper;
  for (int i = 0; i < 2; ++i) adam_step(params, filled(1.0), state, hyper);
  const double expected = scalar_adam(0.0, {1.0, 1.0}, 1e-3, 0.9, 0.999, 1e-8);
  for (double x : params.flatten()) CHECK(x == Approx(expected).epsilon(1e-13));
  CHECK(expected == Approx(-2e-3).epsilon(1e-6));
}

TEST_CASE("long random gradient sequences match the scalar recurrence") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> normal(0.0, 2.0);
  const AdamHyper hyper{3e-3, 0.8, 0.99, 1e-6};
  std::vector<double> seq;
  auto params = filled(0.5);
  auto state = AdamState::fresh(kCfg);
  for (int i = 0; i < 50; ++i) {
    const double g = normal(rng);
    seq.push_back(g);
    adam_step(params, filled(g), state, hyper);
  }
  const double expected = scalar_adam(0.5, seq, hyper.lr, hyper.beta1, hyper.beta2, hyper.eps);
  for (double x : params.flatten()) CHECK(x == Approx(expected).epsilon(1e-12));
  for (double v : state.v.flatten()) CHECK(v >= 0.0);
}

TEST_CASE("adam_step acts elementwise on disjoint partitions") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto joint = init_params(kCfg, 6);
  auto split = joint;
  auto grads = ModelParams::zeros(kCfg);
  grads.for_each([&](std::string_view, Tensor& t) {
    for (auto& x : t.values()) x = normal(rng);
  });
  auto state_joint = AdamState::fresh(kCfg);
  adam_step(joint, grads, state_joint, AdamHyper{});

  // Update W_E alone, then everything else with W_E's gradient zeroed and
  // its value restored.
  auto grads_a = ModelParams::zeros(kCfg);
  grads_a.W_E = grads.W_E;
  auto grads_b = grads;
  grads_b.W_E.fill(0.0);
  auto part_a = split;
  auto state_a = AdamState::fresh(kCfg);
  adam_step(part_a, grads_a, state_a, AdamHyper{});
  auto part_b = split;
  auto state_b = AdamState::fresh(kCfg);
  adam_step(part_b, grads_b, state_b, AdamHyper{});
  part_b.W_E = part_a.W_E;
  CHECK(part_b == joint);
}

TEST_CASE("adam_step is deterministic and rejects shape mismatches") {
  auto a = init_params(kCfg, 7);
  auto b = a;
  const auto g = init_params(kCfg, 8);
  auto sa = AdamState::fresh(kCfg), sb = AdamState::fresh(kCfg);
  adam_step(a, g, sa, AdamHyper{});
  adam_step(b, g, sb, AdamHyper{});
  CHECK(a == b);

  auto wrong = init_params({2, 3, 3, 3}, 0);
  CHECK_THROWS_AS(adam_step(a, wrong, sa, AdamHyper{}), InvalidInput);
}

TEST_CASE("hyperparameter validation") {
  CHECK_NOTHROW(AdamHyper{}.validate());
  CHECK_THROWS_AS((AdamHyper{0.0, 0.9, 0.999, 1e-8}.validate()), ConfigError);
  CHECK_THROWS_AS((AdamHyper{1e-3, 1.0, 0.999, 1e-8}.validate()), ConfigError);
  CHECK_THROWS_AS((AdamHyper{1e-3, 0.9, 0.999, 0.0}.validate()), ConfigError);
}
