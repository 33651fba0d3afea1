#pragma once

#include <cstdint>

#include "circuit_lab/model.hpp"

namespace circuit_lab {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
  bool operator==(const AdamHyper&) const = default;
};

/// First and second moments, shaped like the parameters.
struct AdamState {
  ModelParams m;
  ModelParams v;
  std::uint64_t step_count = 0;

  static AdamState fresh(const ModelConfig& cfg);
};

/// One bias-corrected Adam update, in place:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
///   theta <- theta - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
/// Throws InvalidInput when params, grads and state disagree in shape.
void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state,
               const AdamHyper& hyper);

}  // namespace circuit_lab
