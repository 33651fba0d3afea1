#include <doctest.h>

#include <boost/math/special_functions/erf.hpp>
#include <cmath>
#include <numeric>
#include <random>

#include "circuit_lab/errors.hpp"
#include "circuit_lab/nn_core.hpp"

using namespace circuit_lab;
using doctest::Approx;

namespace {

// Independent reference: boost's erf rather than libm's erfc.
double reference_gelu(double x) {
  return x * 0.5 * (1.0 + boost::math::erf(x / std::sqrt(2.0)));
}

double mean_square(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s / static_cast<double>(v.size());
}

}  // namespace

TEST_CASE("tensor shape and storage") {
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  t.at(1, 2) = 5.0;
  CHECK(t[5] == 5.0);
  CHECK(t.row(1)[2] == 5.0);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1.0}), InvalidInput);
}

TEST_CASE("rms_norm examples") {
  const std::vector<double> c(7, 2.5);
  for (double y : rms_norm(c, 1e-12)) CHECK(y == Approx(1.0).epsilon(1e-10));

  for (double y : rms_norm(std::vector<double>(5, 0.0))) CHECK(y == 0.0);

  // (3,4) / sqrt(12.5), evaluated by hand.
  const auto y = rms_norm(std::vector<double>{3.0, 4.0}, 0.0);
  CHECK(y[0] == Approx(0.848528137423857).epsilon(1e-14));
  CHECK(y[1] == Approx(1.131370849898476).epsilon(1e-14));

  CHECK_THROWS_AS(rms_norm(std::vector<double>{}), InvalidInput);
}

TEST_CASE("rms_norm output has unit mean square") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal(0.0, 3.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(1 + rng() % 40);
    for (auto& x : v) x = normal(rng);
    if (mean_square(v) < 1e-3) continue;
    CHECK(std::abs(mean_square(rms_norm(v)) - 1.0) < 1e-4);
  }
}

TEST_CASE("softmax examples") {
  for (double p : softmax(std::vector<double>{0, 0, 0, 0})) CHECK(p == 0.25);

  const auto big = softmax(std::vector<double>{1000.0, 0.0});
  CHECK(std::isfinite(big[0]));
  CHECK(big[0] == Approx(1.0));
  CHECK(big[1] < 1e-300);

  const std::vector<double> v{0.3, -1.2, 2.0, 0.0};
  std::vector<double> shifted = v;
  for (auto& x : shifted) x += 17.3;
  const auto a = softmax(v);
  const auto b = softmax(shifted);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == Approx(b[i]).epsilon(1e-14));

  CHECK_THROWS_AS(softmax(std::vector<double>{0.0, NAN}), InvalidInput);
  CHECK_THROWS_AS(softmax(std::vector<double>{INFINITY, 0.0}), InvalidInput);
}

TEST_CASE("softmax sums to one on [-1e3, 1e3]") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1e3, 1e3);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> v(1 + rng() % 20);
    for (auto& x : v) x = u(rng);
    const auto p = softmax(v);
    const double sum = std::accumulate(p.begin(), p.end(), 0.0);
    CHECK(std::abs(sum - 1.0) <= 1e-12);
    for (double x : p) CHECK(x >= 0.0);
  }
}

TEST_CASE("gelu examples and limits") {
  CHECK(gelu(0.0) == 0.0);
  CHECK(gelu(1.0) == Approx(0.841344746068542948).epsilon(1e-15));
  CHECK(std::abs(gelu(20.0) - 20.0) < 1e-9);
  CHECK(std::abs(gelu(-20.0)) < 1e-9);
}

TEST_CASE("gelu matches an independent erf at random points") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-8.0, 8.0);
  for (int i = 0; i < 1000; ++i) {
    const double x = u(rng);
    CHECK(std::abs(gelu(x) - reference_gelu(x)) <= 1e-12);
  }
}

TEST_CASE("gelu is monotone on x >= 0 and its derivative matches differences") {
  double prev = gelu(0.0);
  for (double x = 0.01; x < 10.0; x += 0.01) {
    const double g = gelu(x);
    CHECK(g >= prev);
    prev = g;
  }
  for (double x = -5.0; x <= 5.0; x += 0.37) {
    const double h = 1e-6;
    const double numeric = (gelu(x + h) - gelu(x - h)) / (2 * h);
    CHECK(gelu_derivative(x) == Approx(numeric).epsilon(1e-7));
  }
}

TEST_CASE("cross_entropy examples") {
  CHECK(cross_entropy(std::vector<double>{0, 0, 0, 0}, 2) == Approx(std::log(4.0)).epsilon(1e-15));
  CHECK(cross_entropy(std::vector<double>{50, 0, 0, 0}, 0) < 1e-20);
  CHECK_THROWS_AS(cross_entropy(std::vector<double>{0, 0}, 2), InvalidInput);

  const auto g = cross_entropy_grad(std::vector<double>{0, 0, 0, 0}, 1);
  CHECK(g == std::vector<double>{0.25, -0.75, 0.25, 0.25});
}

TEST_CASE("cross_entropy is non-negative and equals -log softmax") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> normal(0.0, 5.0);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> v(2 + rng() % 6);
    for (auto& x : v) x = normal(rng);
    const std::size_t y = rng() % v.size();
    const double ce = cross_entropy(v, y);
    CHECK(ce >= 0.0);
    CHECK(ce == Approx(-std::log(softmax(v)[y])).epsilon(1e-10));
  }
}

TEST_CASE("cross_entropy gradient matches finite differences") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> logits(4);
  for (auto& x : logits) x = normal(rng);
  const std::size_t label = 2;
  const auto analytic = cross_entropy_grad(logits, label);
  const auto result = grad_check(
      [&](std::span<const double> x) { return cross_entropy(x, label); }, logits, analytic, 1e-5);
  CHECK(result.passed(1e-6));
}

TEST_CASE("grad_check on trivial functions") {
  const std::vector<double> theta{3.0};
  const std::vector<double> analytic{6.0};
  const auto quad = grad_check([](std::span<const double> x) { return x[0] * x[0]; }, theta,
                               analytic, 1e-5);
  CHECK(quad.max_rel_error < 1e-9);

  const std::vector<double> zero{0.0, 0.0};
  const auto constant =
      grad_check([](std::span<const double>) { return 4.2; }, std::vector<double>{1.0, 2.0}, zero, 1e-5);
  CHECK(constant.max_rel_error == 0.0);

  // Wrong analytic gradient is caught.
  const std::vector<double> wrong{5.0};
  const auto bad = grad_check([](std::span<const double> x) { return x[0] * x[0]; }, theta, wrong, 1e-5);
  CHECK(bad.max_rel_error > 1e-3);
}

TEST_CASE("grad_check flags a non-deterministic loss") {
  int calls = 0;
  const auto result = grad_check(
      [&](std::span<const double> x) { return x[0] + 1e-3 * (calls++); }, std::vector<double>{1.0},
      std::vector<double>{1.0}, 1e-5);
  CHECK_FALSE(result.deterministic);
  CHECK_FALSE(result.passed(1.0));
}

TEST_CASE("grad_check rejects steps outside [1e-7, 1e-3]") {
  const std::vector<double> x{1.0};
  auto f = [](std::span<const double> v) { return v[0]; };
  CHECK_THROWS_AS(grad_check(f, x, x, 1e-2), InvalidInput);
  CHECK_THROWS_AS(grad_check(f, x, x, 1e-9), InvalidInput);
}
