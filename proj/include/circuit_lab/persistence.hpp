#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>

#include "circuit_lab/model.hpp"
#include "circuit_lab/train.hpp"

namespace circuit_lab {

// ---------------------------------------------------------------------------
// Experiment configuration
//
// Flat "key = value" lines, '#' starts a comment. Keys:
//
//   seed, output_dir, reset_optimizer_on_phase
//   model.{p_max, T, d, h}                  h defaults to 4d
//   optim.{lr, beta1, beta2, eps}
//   probes.{constant, test_mean}            booleans
//   probes.extra.<id> = <T space-separated tokens>
//   phase.<i>.{name, p, k, n_train, n_test, sampling, data_seed, epochs,
//              batch_size, eval_every, trace_every, snapshot_every}
//
// Phases are numbered from 0 without gaps. batch_size accepts "full".
// ---------------------------------------------------------------------------

struct ParsedConfig {
  ExperimentConfig config;
  bool seed_present = false;
};

/// Throws ConfigError naming the offending line.
ParsedConfig parse_config(std::string_view text);
ParsedConfig load_config(const std::filesystem::path& path);

/// Canonical text: every key, fixed order. parse_config(serialize_config(c)) == c.
std::string serialize_config(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct Checkpoint {
  std::uint32_t format_version = kCheckpointFormatVersion;
  ExperimentConfig config;  // output_dir is not written
  std::uint64_t step = 0;
  PhaseName phase = PhaseName::scratch;
  ModelParams params;
};

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt);
/// Throws IncompatibleVersion, CorruptionError or ParseError.
Checkpoint read_checkpoint(std::istream& is);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Run directory
// ---------------------------------------------------------------------------

inline constexpr const char* kMetricsHeader = "step,epoch,phase,train_loss,train_acc,test_loss,test_acc";
inline constexpr const char* kAttentionHeader = "step,probe_id,position,token,weight";

/// Creates dir for a new run. Throws Error if it already holds files, unless
/// force is set, in which case its contents are removed first.
void prepare_run_directory(const std::filesystem::path& dir, bool force);

std::string phase_checkpoint_name(std::size_t phase_index, PhaseName phase);
inline constexpr const char* kFinalCheckpoint = "final.ckpt";

/// Streams metrics.csv, attention.csv and snapshots.csv into a run
/// directory and writes a checkpoint at every phase boundary.
class RunDirectoryRecorder : public Recorder {
public:
  RunDirectoryRecorder(std::filesystem::path dir, ExperimentConfig config);

  void on_metric(const MetricRow& row) override;
  void on_attention(std::span<const AttentionTraceRow> rows) override;
  void on_snapshot(std::uint64_t step, const ModelParams& params) override;
  void on_phase_end(std::uint64_t step, std::size_t phase_index, const PhaseConfig& phase,
                    const ModelParams& params) override;

  /// Flushes every stream and writes final.ckpt.
  void finish(std::uint64_t step, PhaseName phase, const ModelParams& params);

private:
  void check(std::ostream& os, const char* what) const;

  std::filesystem::path dir_;
  ExperimentConfig config_;
  std::ofstream metrics_;
  std::ofstream attention_;
  std::ofstream snapshots_;
};

void write_metric_row(std::ostream& os, const MetricRow& row);
void write_attention_row(std::ostream& os, const AttentionTraceRow& row);

}  // namespace circuit_lab
