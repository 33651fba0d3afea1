#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "circuit_lab/model.hpp"
#include "circuit_lab/optim.hpp"
#include "circuit_lab/task_data.hpp"

namespace circuit_lab {

enum class PhaseName { scratch, pretrain, finetune };

std::string to_string(PhaseName name);
PhaseName phase_name_from_string(const std::string& s);

/// batch_size value meaning "the whole train set in one step".
inline constexpr std::size_t kFullBatch = 0;

struct PhaseConfig {
  PhaseName name = PhaseName::scratch;
  TaskConfig task;
  /// When unset the run seed is used for data generation.
  std::optional<std::uint64_t> data_seed;
  std::uint64_t epochs = 1;
  std::size_t batch_size = kFullBatch;
  std::uint64_t eval_every = 10;
  std::uint64_t trace_every = 10;
  std::uint64_t snapshot_every = 100;

  void validate() const;
  bool operator==(const PhaseConfig&) const = default;
};

/// Optimizer steps one epoch takes for a train set of size n.
std::uint64_t steps_per_epoch(std::size_t n, std::size_t batch_size);

struct MetricRow {
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  PhaseName phase = PhaseName::scratch;
  double train_loss = 0.0;
  double train_acc = 0.0;
  // NaN when the phase has no test split.
  double test_loss = 0.0;
  double test_acc = 0.0;
};

struct AttentionTraceRow {
  std::uint64_t step = 0;
  std::string probe_id;
  std::uint32_t position = 0;
  std::int64_t token = 0;  // -1 for aggregate probes
  double weight = 0.0;
};

struct Probe {
  std::string id;
  std::vector<Token> tokens;

  bool operator==(const Probe&) const = default;
};

/// Which sequences get their attention recorded during training.
struct ProbeSpec {
  /// One constant sequence (v, v, ..., v) per token value v below the
  /// largest modulus among the phases.
  bool constant = true;
  /// Per-position attention averaged over the current phase's test split,
  /// recorded under probe id "test_mean".
  bool test_mean = true;
  std::vector<Probe> extra;

  bool operator==(const ProbeSpec&) const = default;
};

inline constexpr const char* kTestMeanProbe = "test_mean";

struct ExperimentConfig {
  ModelConfig model;
  AdamHyper optimizer;
  std::vector<PhaseConfig> phases;
  ProbeSpec probes;
  std::uint64_t seed = 0;
  std::string output_dir;
  bool reset_optimizer_on_phase = true;

  /// Throws ConfigError when phases disagree with the model.
  void validate() const;
  /// The phase's task with p_max, T and the data seed filled in.
  TaskConfig task_for(std::size_t phase_index) const;
  /// Probe sequences implied by the spec (not including test_mean).
  std::vector<Probe> probe_sequences() const;

  bool operator==(const ExperimentConfig&) const = default;
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Mean cross-entropy and argmax accuracy. Throws InvalidInput when empty.
EvalResult evaluate(const ModelParams& params, const Dataset& dataset);

/// One row per (probe, position) holding the current attention weight.
std::vector<AttentionTraceRow> record_attention(const ModelParams& params,
                                                std::span<const Probe> probes,
                                                std::uint64_t step = 0);

/// Attention over positions averaged across a dataset.
std::vector<double> mean_attention(const ModelParams& params, const Dataset& dataset);

/// Sinks for everything a run produces. Default implementations ignore the event.
class Recorder {
public:
  virtual ~Recorder() = default;
  virtual void on_metric(const MetricRow&) {}
  virtual void on_attention(std::span<const AttentionTraceRow>) {}
  virtual void on_snapshot(std::uint64_t /*step*/, const ModelParams&) {}
  virtual void on_phase_end(std::uint64_t /*step*/, std::size_t /*phase_index*/,
                            const PhaseConfig&, const ModelParams&) {}
};

struct Snapshot {
  std::uint64_t step = 0;
  std::vector<double> values;
};

struct PhaseCheckpoint {
  std::uint64_t step = 0;
  std::size_t phase_index = 0;
  PhaseName phase = PhaseName::scratch;
  ModelParams params;
};

/// Everything a run produced, kept in memory.
struct RunArtifacts {
  std::vector<MetricRow> metrics;
  std::vector<AttentionTraceRow> attention;
  std::vector<Snapshot> snapshots;
  std::vector<PhaseCheckpoint> checkpoints;
  ModelParams final_params;
  std::uint64_t total_steps = 0;
};

/// Collects every event into a RunArtifacts.
class MemoryRecorder : public Recorder {
public:
  void on_metric(const MetricRow& row) override;
  void on_attention(std::span<const AttentionTraceRow> rows) override;
  void on_snapshot(std::uint64_t step, const ModelParams& params) override;
  void on_phase_end(std::uint64_t step, std::size_t phase_index, const PhaseConfig& phase,
                    const ModelParams& params) override;

  RunArtifacts& artifacts() noexcept { return artifacts_; }

private:
  RunArtifacts artifacts_;
};

/// Forwards each event to several recorders in order.
class TeeRecorder : public Recorder {
public:
  explicit TeeRecorder(std::vector<Recorder*> sinks) : sinks_(std::move(sinks)) {}
  void on_metric(const MetricRow& row) override;
  void on_attention(std::span<const AttentionTraceRow> rows) override;
  void on_snapshot(std::uint64_t step, const ModelParams& params) override;
  void on_phase_end(std::uint64_t step, std::size_t phase_index, const PhaseConfig& phase,
                    const ModelParams& params) override;

private:
  std::vector<Recorder*> sinks_;
};

/// Drives optimizer steps across one or more phases, keeping a global step
/// counter and the shuffling RNG. Strictly sequential.
class Trainer {
public:
  Trainer(AdamHyper hyper, std::vector<Probe> probes, bool trace_test_mean, std::uint64_t seed,
          Recorder& recorder);

  /// Runs phase.epochs epochs on data; returns the metric rows recorded.
  /// Throws DivergenceError on a non-finite loss.
  std::vector<MetricRow> run_phase(ModelParams& params, AdamState& state,
                                   const PhaseConfig& phase, const DatasetSplit& data,
                                   std::size_t phase_index = 0);

  std::uint64_t step() const noexcept { return step_; }

private:
  MetricRow measure(const ModelParams& params, const PhaseConfig& phase, const DatasetSplit& data,
                    std::uint64_t epoch) const;
  void trace(const ModelParams& params, const DatasetSplit& data);

  AdamHyper hyper_;
  std::vector<Probe> probes_;
  bool trace_test_mean_;
  std::mt19937_64 rng_;
  Recorder& recorder_;
  std::uint64_t step_ = 0;
};

/// Runs every phase of cfg in order on one parameter set, starting from
/// init_params(cfg.model, cfg.seed). The extra recorder (if any) sees every
/// event as it happens.
RunArtifacts run_curriculum(const ExperimentConfig& cfg, Recorder* extra = nullptr);

}  // namespace circuit_lab
