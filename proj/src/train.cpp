#include "circuit_lab/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "circuit_lab/errors.hpp"

namespace circuit_lab {

std::string to_string(PhaseName name) {
  switch (name) {
    case PhaseName::scratch: return "scratch";
    case PhaseName::pretrain: return "pretrain";
    case PhaseName::finetune: return "finetune";
  }
  return "scratch";
}

PhaseName phase_name_from_string(const std::string& s) {
  if (s == "scratch") return PhaseName::scratch;
  if (s == "pretrain") return PhaseName::pretrain;
  if (s == "finetune") return PhaseName::finetune;
  throw ConfigError("unknown phase name '" + s + "'");
}

void PhaseConfig::validate() const {
  if (epochs < 1) throw ConfigError("phase epochs must be at least 1");
  if (eval_every < 1 || trace_every < 1 || snapshot_every < 1) {
    throw ConfigError("recording cadences must be at least 1");
  }
  try {
    task.validate();
  } catch (const InvalidInput& e) {
    throw ConfigError(e.what());
  }
  if (task.n_train == 0) throw ConfigError("phase needs a non-empty train split");
}

std::uint64_t steps_per_epoch(std::size_t n, std::size_t batch_size) {
  if (batch_size == kFullBatch || batch_size >= n) return 1;
  return (n + batch_size - 1) / batch_size;
}

void ExperimentConfig::validate() const {
  model.validate();
  optimizer.validate();
  if (phases.empty()) throw ConfigError("experiment needs at least one phase");
  for (std::size_t i = 0; i < phases.size(); ++i) {
    const auto& task = phases[i].task;
    if (task.T != model.T) {
      throw ConfigError("phase " + std::to_string(i) + " has T=" + std::to_string(task.T) +
                        " but the model has T=" + std::to_string(model.T));
    }
    if (task.p_max != model.p_max) {
      throw ConfigError("phase " + std::to_string(i) + " has p_max=" +
                        std::to_string(task.p_max) + " but the model has p_max=" +
                        std::to_string(model.p_max));
    }
    phases[i].validate();
  }
  for (const auto& probe : probes.extra) {
    if (probe.tokens.size() != model.T) {
      throw ConfigError("probe '" + probe.id + "' does not have T tokens");
    }
    for (Token x : probe.tokens) {
      if (x >= model.p_max) throw ConfigError("probe '" + probe.id + "' has a token >= p_max");
    }
  }
}

TaskConfig ExperimentConfig::task_for(std::size_t phase_index) const {
  const auto& phase = phases.at(phase_index);
  TaskConfig task = phase.task;
  task.seed = phase.data_seed.value_or(seed);
  return task;
}

std::vector<Probe> ExperimentConfig::probe_sequences() const {
  std::vector<Probe> out;
  if (probes.constant) {
    std::uint32_t p = 0;
    for (const auto& phase : phases) p = std::max(p, phase.task.p);
    for (Token v = 0; v < p; ++v) {
      out.push_back(Probe{"const" + std::to_string(v), std::vector<Token>(model.T, v)});
    }
  }
  out.insert(out.end(), probes.extra.begin(), probes.extra.end());
  return out;
}

EvalResult evaluate(const ModelParams& params, const Dataset& dataset) {
  if (dataset.empty()) throw InvalidInput("cannot evaluate on an empty dataset");
  const auto stats = batch_stats(params, dataset.examples());
  return {stats.loss, static_cast<double>(stats.correct) / static_cast<double>(dataset.size())};
}

std::vector<AttentionTraceRow> record_attention(const ModelParams& params,
                                                std::span<const Probe> probes,
                                                std::uint64_t step) {
  std::vector<AttentionTraceRow> rows;
  for (const auto& probe : probes) {
    const auto s = attention_weights(params, probe.tokens);
    for (std::uint32_t t = 0; t < s.size(); ++t) {
      rows.push_back({step, probe.id, t, static_cast<std::int64_t>(probe.tokens[t]), s[t]});
    }
  }
  return rows;
}

std::vector<double> mean_attention(const ModelParams& params, const Dataset& dataset) {
  if (dataset.empty()) throw InvalidInput("cannot average attention over an empty dataset");
  std::vector<double> mean(params.pos.dim(0), 0.0);
  for (const auto& ex : dataset) {
    const auto s = attention_weights(params, ex.tokens);
    for (std::size_t t = 0; t < s.size(); ++t) mean[t] += s[t];
  }
  for (auto& m : mean) m /= static_cast<double>(dataset.size());
  return mean;
}

void MemoryRecorder::on_metric(const MetricRow& row) { artifacts_.metrics.push_back(row); }

void MemoryRecorder::on_attention(std::span<const AttentionTraceRow> rows) {
  artifacts_.attention.insert(artifacts_.attention.end(), rows.begin(), rows.end());
}

void MemoryRecorder::on_snapshot(std::uint64_t step, const ModelParams& params) {
  artifacts_.snapshots.push_back({step, params.flatten()});
}

void MemoryRecorder::on_phase_end(std::uint64_t step, std::size_t phase_index,
                                  const PhaseConfig& phase, const ModelParams& params) {
  artifacts_.checkpoints.push_back({step, phase_index, phase.name, params});
}

void TeeRecorder::on_metric(const MetricRow& row) {
  for (auto* s : sinks_) s->on_metric(row);
}
void TeeRecorder::on_attention(std::span<const AttentionTraceRow> rows) {
  for (auto* s : sinks_) s->on_attention(rows);
}
void TeeRecorder::on_snapshot(std::uint64_t step, const ModelParams& params) {
  for (auto* s : sinks_) s->on_snapshot(step, params);
}
void TeeRecorder::on_phase_end(std::uint64_t step, std::size_t phase_index,
                               const PhaseConfig& phase, const ModelParams& params) {
  for (auto* s : sinks_) s->on_phase_end(step, phase_index, phase, params);
}

Trainer::Trainer(AdamHyper hyper, std::vector<Probe> probes, bool trace_test_mean,
                 std::uint64_t seed, Recorder& recorder)
    : hyper_(hyper),
      probes_(std::move(probes)),
      trace_test_mean_(trace_test_mean),
      recorder_(recorder) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    0x5b0ffu};
  rng_.seed(seq);
}

MetricRow Trainer::measure(const ModelParams& params, const PhaseConfig& phase,
                           const DatasetSplit& data, std::uint64_t epoch) const {
  MetricRow row;
  row.step = step_;
  row.epoch = epoch;
  row.phase = phase.name;
  const auto train = evaluate(params, data.train);
  row.train_loss = train.loss;
  row.train_acc = train.accuracy;
  if (data.test.empty()) {
    row.test_loss = row.test_acc = std::nan("");
  } else {
    const auto test = evaluate(params, data.test);
    row.test_loss = test.loss;
    row.test_acc = test.accuracy;
  }
  return row;
}

void Trainer::trace(const ModelParams& params, const DatasetSplit& data) {
  auto rows = record_attention(params, probes_, step_);
  if (trace_test_mean_ && !data.test.empty()) {
    const auto mean = mean_attention(params, data.test);
    for (std::uint32_t t = 0; t < mean.size(); ++t) {
      rows.push_back({step_, kTestMeanProbe, t, -1, mean[t]});
    }
  }
  if (!rows.empty()) recorder_.on_attention(rows);
}

std::vector<MetricRow> Trainer::run_phase(ModelParams& params, AdamState& state,
                                          const PhaseConfig& phase, const DatasetSplit& data,
                                          std::size_t phase_index) {
  phase.validate();
  if (data.train.empty()) throw InvalidInput("run_phase needs a non-empty train split");

  std::vector<MetricRow> metrics;
  auto emit_metric = [&](std::uint64_t epoch) {
    metrics.push_back(measure(params, phase, data, epoch));
    recorder_.on_metric(metrics.back());
  };

  if (step_ == 0) {
    emit_metric(0);
    trace(params, data);
    recorder_.on_snapshot(step_, params);
  }

  const auto& examples = data.train.examples();
  const std::size_t n = examples.size();
  const bool full = phase.batch_size == kFullBatch || phase.batch_size >= n;
  std::vector<const Example*> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = &examples[i];

  std::uint64_t last_metric_step = step_;
  for (std::uint64_t epoch = 1; epoch <= phase.epochs; ++epoch) {
    if (!full) std::shuffle(order.begin(), order.end(), rng_);
    const std::size_t batch = full ? n : phase.batch_size;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t len = std::min(batch, n - start);
      const auto lg = full ? loss_and_grads(params, examples)
                           : loss_and_grads(params, std::span(order).subspan(start, len));
      if (!std::isfinite(lg.loss)) throw DivergenceError(static_cast<long>(step_ + 1), lg.loss);
      adam_step(params, lg.grads, state, hyper_);
      ++step_;

      if (step_ % phase.eval_every == 0) {
        emit_metric(epoch);
        last_metric_step = step_;
      }
      if (step_ % phase.trace_every == 0) trace(params, data);
      if (step_ % phase.snapshot_every == 0) recorder_.on_snapshot(step_, params);
    }
  }
  if (last_metric_step != step_) emit_metric(phase.epochs);
  recorder_.on_phase_end(step_, phase_index, phase, params);
  return metrics;
}

RunArtifacts run_curriculum(const ExperimentConfig& cfg, Recorder* extra) {
  cfg.validate();
  MemoryRecorder memory;
  std::vector<Recorder*> sinks{&memory};
  if (extra != nullptr) sinks.push_back(extra);
  TeeRecorder tee(std::move(sinks));

  ModelParams params = init_params(cfg.model, cfg.seed);
  AdamState state = AdamState::fresh(cfg.model);
  Trainer trainer(cfg.optimizer, cfg.probe_sequences(), cfg.probes.test_mean, cfg.seed, tee);

  for (std::size_t i = 0; i < cfg.phases.size(); ++i) {
    if (i > 0 && cfg.reset_optimizer_on_phase) state = AdamState::fresh(cfg.model);
    const auto data = generate_dataset(cfg.task_for(i));
    trainer.run_phase(params, state, cfg.phases[i], data, i);
  }

  RunArtifacts out = std::move(memory.artifacts());
  out.final_params = std::move(params);
  out.total_steps = trainer.step();
  return out;
}

}  // namespace circuit_lab
