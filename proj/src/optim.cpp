#include "circuit_lab/optim.hpp"

#include <cmath>

#include "circuit_lab/errors.hpp"

namespace circuit_lab {

void AdamHyper::validate() const {
  if (!(lr > 0.0)) throw ConfigError("Adam lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("Adam eps must be positive");
}

AdamState AdamState::fresh(const ModelConfig& cfg) {
  return AdamState{ModelParams::zeros(cfg), ModelParams::zeros(cfg), 0};
}

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state,
               const AdamHyper& hyper) {
  if (!params.same_shapes(grads) || !params.same_shapes(state.m) ||
      !params.same_shapes(state.v)) {
    throw InvalidInput("adam_step: parameter, gradient and moment shapes differ");
  }
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);

  params.for_each([&](std::string_view name, Tensor& theta) {
    const Tensor& g = grads.tensor(name);
    Tensor& m = state.m.tensor(name);
    Tensor& v = state.v.tensor(name);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
      v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      theta[i] -= hyper.lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
    }
  });
}

}  // namespace circuit_lab
