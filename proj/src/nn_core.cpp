#include "circuit_lab/nn_core.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "circuit_lab/errors.hpp"

namespace circuit_lab {

std::size_t shape_product(std::span<const std::size_t> shape) noexcept {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_product(shape_) != data_.size()) {
    throw InvalidInput("tensor shape product " + std::to_string(shape_product(shape_)) +
                       " does not match value count " + std::to_string(data_.size()));
  }
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

std::vector<double> rms_norm(std::span<const double> v, double eps) {
  if (v.empty()) throw InvalidInput("rms_norm of an empty vector");
  double ms = 0.0;
  for (double x : v) ms += x * x;
  ms /= static_cast<double>(v.size());
  const double inv = 1.0 / std::sqrt(ms + eps);
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * inv;
  return out;
}

void rms_norm_backward(std::span<const double> x, std::span<const double> y,
                       std::span<const double> dy, std::span<double> dx, double eps) {
  const std::size_t n = x.size();
  double ms = 0.0;
  double dot = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ms += x[i] * x[i];
    dot += dy[i] * y[i];
  }
  ms /= static_cast<double>(n);
  dot /= static_cast<double>(n);
  const double inv = 1.0 / std::sqrt(ms + eps);
  for (std::size_t i = 0; i < n; ++i) dx[i] = (dy[i] - y[i] * dot) * inv;
}

void softmax_into(std::span<const double> v, std::span<double> out) {
  double mx = -INFINITY;
  for (double x : v) {
    if (!std::isfinite(x)) throw InvalidInput("softmax of a non-finite entry");
    mx = std::max(mx, x);
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    sum += out[i];
  }
  const double inv = 1.0 / sum;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] *= inv;
}

std::vector<double> softmax(std::span<const double> v) {
  std::vector<double> out(v.size());
  softmax_into(v, out);
  return out;
}

double normal_cdf(double x) noexcept { return 0.5 * std::erfc(-x * std::numbers::sqrt2 / 2.0); }

double gelu(double x) noexcept { return x * normal_cdf(x); }

double gelu_derivative(double x) noexcept {
  constexpr double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
  return normal_cdf(x) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

namespace {

double log_sum_exp(std::span<const double> logits) {
  double mx = -INFINITY;
  for (double x : logits) mx = std::max(mx, x);
  double sum = 0.0;
  for (double x : logits) sum += std::exp(x - mx);
  return mx + std::log(sum);
}

void check_label(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) {
    throw InvalidInput("label " + std::to_string(label) + " out of range for " +
                       std::to_string(logits.size()) + " logits");
  }
}

}  // namespace

double cross_entropy(std::span<const double> logits, std::size_t label) {
  check_label(logits, label);
  // lse >= logits[label] mathematically; clamp rounding noise at the near-one-hot end.
  return std::max(0.0, log_sum_exp(logits) - logits[label]);
}

std::vector<double> cross_entropy_grad(std::span<const double> logits, std::size_t label) {
  check_label(logits, label);
  auto g = softmax(logits);
  g[label] -= 1.0;
  return g;
}

GradCheckResult grad_check(const std::function<double(std::span<const double>)>& loss,
                           std::span<const double> point, std::span<const double> analytic,
                           double h) {
  if (point.size() != analytic.size()) {
    throw InvalidInput("grad_check: point and analytic gradient differ in size");
  }
  if (!(h >= 1e-7 && h <= 1e-3)) throw InvalidInput("grad_check: step must lie in [1e-7, 1e-3]");

  GradCheckResult result;
  std::vector<double> x(point.begin(), point.end());
  result.deterministic = loss(x) == loss(x);

  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = loss(x);
    x[i] = orig - h;
    const double down = loss(x);
    x[i] = orig;

    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic[i];
    const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
    if (rel > result.max_rel_error || !std::isfinite(rel)) {
      result.max_rel_error = std::isfinite(rel) ? rel : INFINITY;
      result.worst_index = i;
      result.worst_analytic = a;
      result.worst_numeric = numeric;
    }
  }
  return result;
}

}  // namespace circuit_lab
