#include "circuit_lab/analysis.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include "circuit_lab/errors.hpp"
#include "circuit_lab/text_format.hpp"
#include "circuit_lab/train.hpp"

namespace circuit_lab {

InterpolationProfile interpolate_losses(const ModelParams& theta_a, const ModelParams& theta_b,
                                        const Dataset& train, const Dataset& test,
                                        std::size_t n_points) {
  if (!theta_a.same_shapes(theta_b)) {
    throw InvalidInput("interpolate_losses: parameter shapes differ");
  }
  if (n_points < 2) throw InvalidInput("interpolate_losses needs at least two grid points");
  if (train.empty()) throw InvalidInput("interpolate_losses needs a non-empty train set");

  InterpolationProfile profile;
  for (std::size_t i = 0; i < n_points; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(n_points - 1);
    const ModelParams theta = lerp(theta_a, theta_b, t);
    profile.ts.push_back(t);
    profile.train_losses.push_back(evaluate(theta, train).loss);
    if (!test.empty()) profile.test_losses.push_back(evaluate(theta, test).loss);
  }
  return profile;
}

double barrier_ratio(std::span<const double> losses) {
  if (losses.size() < 3) throw InvalidInput("barrier_ratio needs interior points");
  const double endpoint = std::max(losses.front(), losses.back());
  const double interior = *std::max_element(losses.begin() + 1, losses.end() - 1);
  return interior / endpoint;
}

std::vector<double> attention_delta(std::span<const double> s_prev,
                                    std::span<const double> s_curr) {
  if (s_prev.size() != s_curr.size()) {
    throw InvalidInput("attention_delta: weight vectors differ in length");
  }
  std::vector<double> delta(s_curr.size());
  for (std::size_t t = 0; t < delta.size(); ++t) delta[t] = s_curr[t] - s_prev[t];
  return delta;
}

std::vector<ClusterRow> export_clusters(const ModelParams& params, const Dataset& dataset,
                                        std::uint32_t modulus) {
  if (modulus < 2) throw InvalidInput("cluster modulus must be at least 2");
  std::vector<ClusterRow> rows;
  rows.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& ex = dataset[i];
    std::uint64_t sum = 0;
    for (std::uint32_t t = 0; t < dataset.k(); ++t) sum += ex.tokens[t];
    auto trace = forward(params, ex.tokens);
    rows.push_back({i, static_cast<std::uint32_t>(sum % modulus), std::move(trace.z_A)});
  }
  return rows;
}

PurityResult cluster_purity(std::span<const ClusterRow> rows, std::uint32_t modulus) {
  if (rows.empty()) throw InvalidInput("cluster_purity needs at least one row");
  const std::size_t dim = rows.front().z_A.size();
  std::vector<std::vector<double>> centroid(modulus, std::vector<double>(dim, 0.0));
  std::vector<std::size_t> count(modulus, 0);
  for (const auto& row : rows) {
    if (row.label >= modulus) throw InvalidInput("cluster row label is not below the modulus");
    if (row.z_A.size() != dim) throw InvalidInput("cluster rows differ in dimension");
    for (std::size_t i = 0; i < dim; ++i) centroid[row.label][i] += row.z_A[i];
    ++count[row.label];
  }

  PurityResult result;
  std::vector<std::uint32_t> present;
  for (std::uint32_t c = 0; c < modulus; ++c) {
    if (count[c] == 0) {
      result.missing_labels.push_back(c);
      continue;
    }
    for (auto& x : centroid[c]) x /= static_cast<double>(count[c]);
    present.push_back(c);
  }

  std::size_t hits = 0;
  for (const auto& row : rows) {
    std::uint32_t best = present.front();
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::uint32_t c : present) {
      double dist = 0.0;
      for (std::size_t i = 0; i < dim; ++i) {
        const double diff = row.z_A[i] - centroid[c][i];
        dist += diff * diff;
      }
      if (dist < best_dist) {
        best_dist = dist;
        best = c;
      }
    }
    if (best == row.label) ++hits;
  }
  result.purity = static_cast<double>(hits) / static_cast<double>(rows.size());
  return result;
}

std::vector<std::string> snapshot_columns(const ModelConfig& cfg) {
  std::vector<std::string> columns{"step"};
  ModelParams::zeros(cfg).for_each([&](std::string_view name, const Tensor& t) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      columns.push_back(std::string(name) + "." + std::to_string(i));
    }
  });
  return columns;
}

Trajectory read_trajectory(std::istream& is) {
  Trajectory traj;
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(is, line)) throw ParseError("missing snapshot header", line_no);
  for (auto field : split(trim(line), ',')) traj.columns.emplace_back(trim(field));
  if (traj.columns.size() < 2 || traj.columns.front() != "step") {
    throw ParseError("snapshot header must start with 'step' followed by parameter columns",
                     line_no);
  }
  const std::size_t width = traj.columns.size() - 1;

  std::vector<double> values;
  while (std::getline(is, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split(trim(line), ',');
    if (fields.size() != traj.columns.size()) {
      throw ParseError("expected " + std::to_string(traj.columns.size()) + " fields, found " +
                           std::to_string(fields.size()), line_no);
    }
    std::uint64_t step = 0;
    if (!parse_u64(fields[0], step)) throw ParseError("malformed step", line_no);
    if (!traj.steps.empty() && step <= traj.steps.back()) {
      throw ParseError("snapshot steps must be strictly increasing", line_no);
    }
    traj.steps.push_back(step);
    for (std::size_t i = 1; i < fields.size(); ++i) {
      double x = 0.0;
      if (!parse_double(fields[i], x)) {
        throw ParseError("malformed value in column '" + traj.columns[i] + "'", line_no);
      }
      values.push_back(x);
    }
  }
  traj.matrix = Tensor({traj.steps.size(), width}, std::move(values));
  return traj;
}

Trajectory assemble_trajectory(const std::string& snapshot_file) {
  std::ifstream is(snapshot_file);
  if (!is) throw Error("cannot open '" + snapshot_file + "'");
  return read_trajectory(is);
}

void write_interpolation_csv(std::ostream& os, const InterpolationProfile& profile) {
  os << "t,train_loss,test_loss\n";
  for (std::size_t i = 0; i < profile.ts.size(); ++i) {
    os << format_double(profile.ts[i]) << ',' << format_double(profile.train_losses[i]) << ',';
    if (i < profile.test_losses.size()) os << format_double(profile.test_losses[i]);
    os << '\n';
  }
}

void write_clusters_csv(std::ostream& os, std::span<const ClusterRow> rows) {
  const std::size_t dim = rows.empty() ? 0 : rows.front().z_A.size();
  os << "example_id,label";
  for (std::size_t i = 0; i < dim; ++i) os << ",z" << i;
  os << '\n';
  for (const auto& row : rows) {
    os << row.example_id << ',' << row.label;
    for (double x : row.z_A) os << ',' << format_double(x);
    os << '\n';
  }
}

}  // namespace circuit_lab
