#include "circuit_lab/model.hpp"

#include <cmath>
#include <random>
#include <string>

#include "circuit_lab/errors.hpp"

namespace circuit_lab {

void ModelConfig::validate() const {
  if (p_max < 2) throw ConfigError("model p_max must be at least 2");
  if (T < 1 || d < 1 || h < 1) throw ConfigError("model T, d and h must be positive");
}

ModelParams ModelParams::zeros(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t P = cfg.p_max, T = cfg.T, d = cfg.d, h = cfg.h;
  return ModelParams{Tensor({d, P}), Tensor({T, d}), Tensor({d}),    Tensor({d, d}),
                     Tensor({h, d}), Tensor({h, d}), Tensor({P, d})};
}

ModelConfig ModelParams::config() const {
  return ModelConfig{static_cast<std::uint32_t>(W_U.dim(0)), static_cast<std::uint32_t>(pos.dim(0)),
                     static_cast<std::uint32_t>(W_Q.dim(0)), static_cast<std::uint32_t>(W_1.dim(0))};
}

Tensor& ModelParams::tensor(std::string_view name) {
  return const_cast<Tensor&>(static_cast<const ModelParams&>(*this).tensor(name));
}

const Tensor& ModelParams::tensor(std::string_view name) const {
  if (name == "W_E") return W_E;
  if (name == "pos") return pos;
  if (name == "W_Q") return W_Q;
  if (name == "W_V") return W_V;
  if (name == "W_1") return W_1;
  if (name == "W_2") return W_2;
  if (name == "W_U") return W_U;
  throw InvalidInput("unknown tensor '" + std::string(name) + "'");
}

std::size_t ModelParams::total_size() const {
  std::size_t n = 0;
  for_each([&](std::string_view, const Tensor& t) { n += t.size(); });
  return n;
}

std::vector<double> ModelParams::flatten() const {
  std::vector<double> flat;
  flat.reserve(total_size());
  for_each([&](std::string_view, const Tensor& t) {
    flat.insert(flat.end(), t.values().begin(), t.values().end());
  });
  return flat;
}

void ModelParams::assign_flat(std::span<const double> flat) {
  if (flat.size() != total_size()) {
    throw InvalidInput("flat parameter vector has " + std::to_string(flat.size()) +
                       " entries, expected " + std::to_string(total_size()));
  }
  std::size_t offset = 0;
  for_each([&](std::string_view, Tensor& t) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), t.size(), t.data());
    offset += t.size();
  });
}

bool ModelParams::same_shapes(const ModelParams& other) const {
  bool same = true;
  for_each([&](std::string_view name, const Tensor& t) {
    same = same && t.shape() == other.tensor(name).shape();
  });
  return same;
}

bool ModelParams::all_finite() const {
  bool finite = true;
  for_each([&](std::string_view, const Tensor& t) { finite = finite && t.all_finite(); });
  return finite;
}

ModelParams lerp(const ModelParams& a, const ModelParams& b, double t) {
  if (!a.same_shapes(b)) throw InvalidInput("cannot interpolate parameters of different shapes");
  ModelParams out = a;
  out.for_each([&](std::string_view name, Tensor& dst) {
    const Tensor& src_b = b.tensor(name);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = (1.0 - t) * dst[i] + t * src_b[i];
  });
  return out;
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams params = ModelParams::zeros(cfg);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x1417u};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(cfg.d)));
  params.for_each([&](std::string_view, Tensor& t) {
    for (auto& x : t.values()) x = normal(rng);
  });
  return params;
}

std::size_t param_count(const ModelConfig& cfg) {
  const std::size_t P = cfg.p_max, T = cfg.T, d = cfg.d, h = cfg.h;
  return d * P + T * d + d + d * d + 2 * h * d + P * d;
}

std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

namespace {

/// Per-example activations, laid out for the backward pass. Rows of e and z
/// are positions.
struct Activations {
  std::size_t T, d, h, P;
  std::vector<double> e, z, scores, s, c, z_A, z_bar, u, g, z_O, logits, probs;

  explicit Activations(const ModelConfig& cfg)
      : T(cfg.T), d(cfg.d), h(cfg.h), P(cfg.p_max),
        e(T * d), z(T * d), scores(T), s(T), c(d), z_A(d), z_bar(d), u(h), g(h), z_O(d),
        logits(P), probs(P) {}
};

struct Gradients {
  std::vector<double> dz_O, dg, dz_bar, dz_A, dc, ds, dscores, dz, de;

  explicit Gradients(const ModelConfig& cfg)
      : dz_O(cfg.d), dg(cfg.h), dz_bar(cfg.d), dz_A(cfg.d), dc(cfg.d), ds(cfg.T),
        dscores(cfg.T), dz(static_cast<std::size_t>(cfg.T) * cfg.d), de(cfg.d) {}
};

void check_tokens(const ModelParams& params, std::span<const Token> tokens) {
  const std::size_t T = params.pos.dim(0);
  const std::size_t P = params.W_U.dim(0);
  if (tokens.size() != T) {
    throw InvalidInput("model expects " + std::to_string(T) + " tokens, got " +
                       std::to_string(tokens.size()));
  }
  for (Token x : tokens) {
    if (x >= P) {
      throw InvalidInput("token " + std::to_string(x) + " is not below p_max=" + std::to_string(P));
    }
  }
}

double rms_scale(std::span<const double> v) {
  double ms = 0.0;
  for (double x : v) ms += x * x;
  return 1.0 / std::sqrt(ms / static_cast<double>(v.size()) + kRmsEps);
}

/// Runs the attention half of the network (through s). Returns nothing;
/// fills e, z, scores, s.
void attend(const ModelParams& p, std::span<const Token> tokens, Activations& a) {
  const std::size_t T = a.T, d = a.d, P = a.P;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t t = 0; t < T; ++t) {
    double* e = &a.e[t * d];
    double* z = &a.z[t * d];
    const double* pos = p.pos.data() + t * d;
    const double* emb = p.W_E.data() + tokens[t];
    for (std::size_t i = 0; i < d; ++i) e[i] = emb[i * P] + pos[i];
    const double scale = rms_scale({e, d});
    double score = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      z[i] = e[i] * scale;
      score += z[i] * p.W_Q[i];
    }
    a.scores[t] = score * inv_sqrt_d;
  }
  softmax_into(a.scores, a.s);
}

void forward_cached(const ModelParams& p, std::span<const Token> tokens, Activations& a) {
  const std::size_t T = a.T, d = a.d, h = a.h, P = a.P;
  attend(p, tokens, a);

  // z_A = (W_V z) s = W_V (z s)
  std::fill(a.c.begin(), a.c.end(), 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    const double st = a.s[t];
    const double* z = &a.z[t * d];
    for (std::size_t i = 0; i < d; ++i) a.c[i] += st * z[i];
  }
  for (std::size_t i = 0; i < d; ++i) {
    const double* row = p.W_V.data() + i * d;
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += row[j] * a.c[j];
    a.z_A[i] = acc;
  }
  const double scale = rms_scale(a.z_A);
  for (std::size_t i = 0; i < d; ++i) a.z_bar[i] = a.z_A[i] * scale;

  // MLP with residual.
  std::copy(a.z_bar.begin(), a.z_bar.end(), a.z_O.begin());
  for (std::size_t j = 0; j < h; ++j) {
    const double* w1 = p.W_1.data() + j * d;
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) acc += w1[i] * a.z_bar[i];
    a.u[j] = acc;
    a.g[j] = gelu(acc);
    const double* w2 = p.W_2.data() + j * d;
    const double gj = a.g[j];
    for (std::size_t i = 0; i < d; ++i) a.z_O[i] += gj * w2[i];
  }

  for (std::size_t c = 0; c < P; ++c) {
    const double* wu = p.W_U.data() + c * d;
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) acc += wu[i] * a.z_O[i];
    a.logits[c] = acc;
  }
  softmax_into(a.logits, a.probs);
}

double example_loss(const Activations& a, Token label) {
  return cross_entropy(a.logits, label);
}

/// Accumulates weight * dLoss/dparams for one example into grads.
void backward_accumulate(const ModelParams& p, std::span<const Token> tokens, Token label,
                         double weight, const Activations& a, Gradients& w, ModelParams& grads) {
  const std::size_t T = a.T, d = a.d, h = a.h, P = a.P;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  // Unembedding.
  std::fill(w.dz_O.begin(), w.dz_O.end(), 0.0);
  for (std::size_t c = 0; c < P; ++c) {
    const double dl = weight * (a.probs[c] - (c == label ? 1.0 : 0.0));
    double* gu = grads.W_U.data() + c * d;
    const double* wu = p.W_U.data() + c * d;
    for (std::size_t i = 0; i < d; ++i) {
      gu[i] += dl * a.z_O[i];
      w.dz_O[i] += dl * wu[i];
    }
  }

  // MLP and residual.
  std::copy(w.dz_O.begin(), w.dz_O.end(), w.dz_bar.begin());
  for (std::size_t j = 0; j < h; ++j) {
    const double* w2 = p.W_2.data() + j * d;
    double* g2 = grads.W_2.data() + j * d;
    const double gj = a.g[j];
    double dg = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      g2[i] += gj * w.dz_O[i];
      dg += w2[i] * w.dz_O[i];
    }
    const double du = dg * gelu_derivative(a.u[j]);
    const double* w1 = p.W_1.data() + j * d;
    double* g1 = grads.W_1.data() + j * d;
    for (std::size_t i = 0; i < d; ++i) {
      g1[i] += du * a.z_bar[i];
      w.dz_bar[i] += du * w1[i];
    }
  }

  rms_norm_backward(a.z_A, a.z_bar, w.dz_bar, w.dz_A);

  // z_A = W_V c
  std::fill(w.dc.begin(), w.dc.end(), 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    const double dzi = w.dz_A[i];
    double* gv = grads.W_V.data() + i * d;
    const double* wv = p.W_V.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) {
      gv[j] += dzi * a.c[j];
      w.dc[j] += dzi * wv[j];
    }
  }

  // c = sum_t s_t z_t
  double s_dot = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    const double* z = &a.z[t * d];
    double* dz = &w.dz[t * d];
    double ds = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      dz[i] = a.s[t] * w.dc[i];
      ds += z[i] * w.dc[i];
    }
    w.ds[t] = ds;
    s_dot += a.s[t] * ds;
  }

  for (std::size_t t = 0; t < T; ++t) {
    const double dscore = a.s[t] * (w.ds[t] - s_dot) * inv_sqrt_d;
    const double* z = &a.z[t * d];
    double* dz = &w.dz[t * d];
    for (std::size_t i = 0; i < d; ++i) {
      grads.W_Q[i] += dscore * z[i];
      dz[i] += dscore * p.W_Q[i];
    }
    rms_norm_backward({&a.e[t * d], d}, {z, d}, {dz, d}, w.de);
    double* gp = grads.pos.data() + t * d;
    double* ge = grads.W_E.data() + tokens[t];
    for (std::size_t i = 0; i < d; ++i) {
      gp[i] += w.de[i];
      ge[i * P] += w.de[i];
    }
  }
}

ForwardTrace to_trace(const Activations& a) {
  ForwardTrace trace;
  trace.z = Tensor({a.d, a.T});
  for (std::size_t t = 0; t < a.T; ++t) {
    for (std::size_t i = 0; i < a.d; ++i) trace.z.at(i, t) = a.z[t * a.d + i];
  }
  trace.s = a.s;
  trace.z_A = a.z_A;
  trace.z_bar_A = a.z_bar;
  trace.z_O = a.z_O;
  trace.logits = a.logits;
  trace.probs = a.probs;
  return trace;
}

template <typename Deref>
LossAndGrads loss_and_grads_impl(const ModelParams& params, std::size_t n, Deref&& at) {
  if (n == 0) throw InvalidInput("loss_and_grads on an empty batch");
  const ModelConfig cfg = params.config();
  Activations act(cfg);
  Gradients work(cfg);
  LossAndGrads out{0.0, 0, ModelParams::zeros(cfg)};
  const double weight = 1.0 / static_cast<double>(n);
  for (std::size_t b = 0; b < n; ++b) {
    const Example& ex = at(b);
    check_tokens(params, ex.tokens);
    if (ex.label >= cfg.p_max) throw InvalidInput("label is not below p_max");
    forward_cached(params, ex.tokens, act);
    out.loss += example_loss(act, ex.label);
    if (argmax(act.logits) == ex.label) ++out.correct;
    backward_accumulate(params, ex.tokens, ex.label, weight, act, work, out.grads);
  }
  out.loss *= weight;
  return out;
}

}  // namespace

ForwardTrace forward(const ModelParams& params, std::span<const Token> tokens) {
  check_tokens(params, tokens);
  Activations act(params.config());
  forward_cached(params, tokens, act);
  return to_trace(act);
}

std::vector<double> attention_weights(const ModelParams& params, std::span<const Token> tokens) {
  check_tokens(params, tokens);
  Activations act(params.config());
  attend(params, tokens, act);
  return act.s;
}

LossAndGrads loss_and_grads(const ModelParams& params, std::span<const Example> batch) {
  return loss_and_grads_impl(params, batch.size(),
                             [&](std::size_t i) -> const Example& { return batch[i]; });
}

LossAndGrads loss_and_grads(const ModelParams& params, std::span<const Example* const> batch) {
  return loss_and_grads_impl(params, batch.size(),
                             [&](std::size_t i) -> const Example& { return *batch[i]; });
}

BatchStats batch_stats(const ModelParams& params, std::span<const Example> batch) {
  if (batch.empty()) throw InvalidInput("cannot evaluate an empty batch");
  Activations act(params.config());
  BatchStats stats;
  for (const auto& ex : batch) {
    check_tokens(params, ex.tokens);
    forward_cached(params, ex.tokens, act);
    stats.loss += example_loss(act, ex.label);
    if (argmax(act.logits) == ex.label) ++stats.correct;
  }
  stats.loss /= static_cast<double>(batch.size());
  return stats;
}

double batch_loss(const ModelParams& params, std::span<const Example> batch) {
  return batch_stats(params, batch).loss;
}

GradCheckResult grad_check_model(const ModelParams& params, std::span<const Example> batch,
                                 double h) {
  const auto analytic = loss_and_grads(params, batch).grads.flatten();
  ModelParams probe = params;
  auto loss = [&](std::span<const double> flat) {
    probe.assign_flat(flat);
    return batch_loss(probe, batch);
  };
  return grad_check(loss, params.flatten(), analytic, h);
}

}  // namespace circuit_lab
