#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "circuit_lab/nn_core.hpp"
#include "circuit_lab/task_data.hpp"

namespace circuit_lab {

struct ModelConfig {
  std::uint32_t p_max = 4;
  std::uint32_t T = 12;
  std::uint32_t d = 32;
  std::uint32_t h = 128;

  /// Config with the default hidden width h = 4d.
  static ModelConfig with_default_hidden(std::uint32_t p_max, std::uint32_t T, std::uint32_t d) {
    return {p_max, T, d, 4 * d};
  }

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Names of the trainable tensors, in the order used for flattening,
/// checkpoints and snapshot columns.
inline constexpr std::array<std::string_view, 7> kTensorNames = {"W_E", "pos", "W_Q", "W_V",
                                                                 "W_1", "W_2", "W_U"};

/// The seven trainable tensors of the one-layer cross-attention transformer.
///
///   W_E  d x p_max   token embedding, column x is the embedding of token x
///   pos  T x d       positional embedding, row t is p_t
///   W_Q  d           query vector (there is no key projection)
///   W_V  d x d       value matrix
///   W_1  h x d       MLP input weights
///   W_2  h x d       MLP output weights (applied transposed)
///   W_U  p_max x d   unembedding
struct ModelParams {
  Tensor W_E, pos, W_Q, W_V, W_1, W_2, W_U;

  /// Zero-filled tensors with the shapes implied by cfg.
  static ModelParams zeros(const ModelConfig& cfg);

  ModelConfig config() const;

  template <typename F>
  void for_each(F&& f) {
    f(kTensorNames[0], W_E), f(kTensorNames[1], pos), f(kTensorNames[2], W_Q),
        f(kTensorNames[3], W_V), f(kTensorNames[4], W_1), f(kTensorNames[5], W_2),
        f(kTensorNames[6], W_U);
  }
  template <typename F>
  void for_each(F&& f) const {
    f(kTensorNames[0], W_E), f(kTensorNames[1], pos), f(kTensorNames[2], W_Q),
        f(kTensorNames[3], W_V), f(kTensorNames[4], W_1), f(kTensorNames[5], W_2),
        f(kTensorNames[6], W_U);
  }

  Tensor& tensor(std::string_view name);
  const Tensor& tensor(std::string_view name) const;

  std::size_t total_size() const;
  /// Concatenation of all tensors in kTensorNames order.
  std::vector<double> flatten() const;
  /// Inverse of flatten; throws InvalidInput on a size mismatch.
  void assign_flat(std::span<const double> flat);

  bool same_shapes(const ModelParams& other) const;
  bool all_finite() const;

  bool operator==(const ModelParams&) const = default;
};

/// (1 - t) * a + t * b, tensor by tensor.
ModelParams lerp(const ModelParams& a, const ModelParams& b, double t);

/// Every intermediate of one forward pass.
struct ForwardTrace {
  Tensor z;          // d x T; column t is RMS(W_E[:, x_t] + p_t)
  std::vector<double> s;         // attention over positions
  std::vector<double> z_A;       // (W_V z) s
  std::vector<double> z_bar_A;   // RMS(z_A)
  std::vector<double> z_O;       // z_bar_A + W_2^T GELU(W_1 z_bar_A)
  std::vector<double> logits;    // W_U z_O
  std::vector<double> probs;     // softmax(logits)
};

/// I.i.d. N(0, 1/d) entries; deterministic for a given seed.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

/// Throws InvalidInput on a wrong length or a token >= p_max.
ForwardTrace forward(const ModelParams& params, std::span<const Token> tokens);

/// Attention probabilities only (cheaper than a full forward).
std::vector<double> attention_weights(const ModelParams& params, std::span<const Token> tokens);

struct LossAndGrads {
  double loss = 0.0;        // mean cross-entropy over the batch
  std::size_t correct = 0;  // argmax hits, ties to the lowest index
  ModelParams grads;
};

/// Mean cross-entropy over the batch and its exact gradient.
/// Throws InvalidInput on an empty batch.
LossAndGrads loss_and_grads(const ModelParams& params, std::span<const Example> batch);
LossAndGrads loss_and_grads(const ModelParams& params, std::span<const Example* const> batch);

struct BatchStats {
  double loss = 0.0;        // mean cross-entropy
  std::size_t correct = 0;  // argmax hits, ties to the lowest index
};

/// Forward-only loss and hit count.
BatchStats batch_stats(const ModelParams& params, std::span<const Example> batch);

/// Mean cross-entropy only.
double batch_loss(const ModelParams& params, std::span<const Example> batch);

/// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> v);

/// d*p_max + T*d + d + d*d + 2*h*d + p_max*d.
std::size_t param_count(const ModelConfig& cfg);

/// grad_check over every coordinate of all seven tensors for the mean loss
/// on batch.
GradCheckResult grad_check_model(const ModelParams& params, std::span<const Example> batch,
                                 double h);

}  // namespace circuit_lab
