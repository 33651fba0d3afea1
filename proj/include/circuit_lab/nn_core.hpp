#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

namespace circuit_lab {

/// Dense row-major tensor of doubles. Value semantic.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  // 2-D access; row-major.
  double& at(std::size_t row, std::size_t col) noexcept { return data_[row * shape_[1] + col]; }
  double at(std::size_t row, std::size_t col) const noexcept { return data_[row * shape_[1] + col]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * shape_[1], shape_[1]}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * shape_[1], shape_[1]};
  }

  void fill(double value);
  bool all_finite() const noexcept;

  bool operator==(const Tensor&) const = default;

private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::size_t shape_product(std::span<const std::size_t> shape) noexcept;

/// Guard used inside every RMS normalization of the model.
inline constexpr double kRmsEps = 1e-8;

/// v / sqrt(mean(v^2) + eps). No learnable gain.
std::vector<double> rms_norm(std::span<const double> v, double eps = kRmsEps);

/// Backward of rms_norm: given input x, output y = rms_norm(x) and upstream dy,
/// writes dx. All spans have the same length.
void rms_norm_backward(std::span<const double> x, std::span<const double> y,
                       std::span<const double> dy, std::span<double> dx, double eps = kRmsEps);

/// Max-subtracted softmax. Throws InvalidInput on non-finite entries.
std::vector<double> softmax(std::span<const double> v);
void softmax_into(std::span<const double> v, std::span<double> out);

/// Standard normal CDF via erfc.
double normal_cdf(double x) noexcept;
/// x * Phi(x), exact (not the tanh approximation).
double gelu(double x) noexcept;
/// d/dx gelu(x) = Phi(x) + x * phi(x).
double gelu_derivative(double x) noexcept;

/// log-sum-exp(logits) - logits[label].
double cross_entropy(std::span<const double> logits, std::size_t label);
/// softmax(logits) - onehot(label).
std::vector<double> cross_entropy_grad(std::span<const double> logits, std::size_t label);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool deterministic = true;

  /// True when the loss was deterministic and the error is within tolerance.
  bool passed(double tolerance) const noexcept {
    return deterministic && max_rel_error <= tolerance;
  }
};

/// Compares an analytic gradient against central differences
/// (loss(x + h e_i) - loss(x - h e_i)) / 2h for every coordinate.
/// Relative error per coordinate is |a - n| / max(1e-8, |a| + |n|).
/// A loss that returns different values for the same point is reported as
/// non-deterministic (and fails regardless of the error).
GradCheckResult grad_check(const std::function<double(std::span<const double>)>& loss,
                           std::span<const double> point, std::span<const double> analytic,
                           double h);

}  // namespace circuit_lab
