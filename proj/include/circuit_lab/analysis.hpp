#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "circuit_lab/model.hpp"
#include "circuit_lab/task_data.hpp"

namespace circuit_lab {

/// Losses along the straight segment between two parameter sets.
struct InterpolationProfile {
  std::vector<double> ts;
  std::vector<double> train_losses;
  std::vector<double> test_losses;  // empty when no test set was given
};

inline constexpr std::size_t kDefaultInterpolationPoints = 101;

/// Evaluates (1 - t) a + t b on a uniform grid of n_points values of t in [0, 1].
InterpolationProfile interpolate_losses(const ModelParams& theta_a, const ModelParams& theta_b,
                                        const Dataset& train, const Dataset& test,
                                        std::size_t n_points = kDefaultInterpolationPoints);

/// Max interior loss over max endpoint loss.
double barrier_ratio(std::span<const double> losses);

/// s_curr - s_prev per position: positive means the edge was thickened.
std::vector<double> attention_delta(std::span<const double> s_prev, std::span<const double> s_curr);

struct ClusterRow {
  std::size_t example_id = 0;
  std::uint32_t label = 0;  // (x_1 + ... + x_k) mod m
  std::vector<double> z_A;
};

/// One row per example: its post-attention vector z_A and partial-sum label mod m.
std::vector<ClusterRow> export_clusters(const ModelParams& params, const Dataset& dataset,
                                        std::uint32_t modulus);

struct PurityResult {
  double purity = 0.0;
  /// Labels below the modulus with no rows; they get no centroid.
  std::vector<std::uint32_t> missing_labels;
};

/// Fraction of rows whose nearest label centroid (Euclidean, ties to the
/// lowest label) is their own label's centroid.
PurityResult cluster_purity(std::span<const ClusterRow> rows, std::uint32_t modulus);

/// Parameter snapshots as a dense steps x param_count matrix.
struct Trajectory {
  std::vector<std::uint64_t> steps;
  std::vector<std::string> columns;
  Tensor matrix;
};

/// Header for snapshots.csv: "step" then "<tensor>.<flat index>" per coordinate.
std::vector<std::string> snapshot_columns(const ModelConfig& cfg);

Trajectory read_trajectory(std::istream& is);
/// Throws ParseError with the offending line number.
Trajectory assemble_trajectory(const std::string& snapshot_file);

void write_interpolation_csv(std::ostream& os, const InterpolationProfile& profile);
void write_clusters_csv(std::ostream& os, std::span<const ClusterRow> rows);

}  // namespace circuit_lab
