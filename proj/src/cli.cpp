#include "circuit_lab/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "circuit_lab/analysis.hpp"
#include "circuit_lab/errors.hpp"
#include "circuit_lab/persistence.hpp"
#include "circuit_lab/text_format.hpp"
#include "circuit_lab/train.hpp"

namespace circuit_lab {

namespace {

std::optional<std::uint64_t> env_seed() {
  const char* raw = std::getenv(kSeedEnvVar);
  if (raw == nullptr) return std::nullopt;
  std::uint64_t seed = 0;
  if (!parse_u64(raw, seed)) {
    throw ConfigError(std::string(kSeedEnvVar) + " must be a non-negative integer");
  }
  return seed;
}

/// --seed flag, then config, then environment, then 0.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag,
                           const std::optional<std::uint64_t>& config) {
  if (flag) return *flag;
  if (config) return *config;
  if (auto env = env_seed()) return *env;
  return 0;
}

std::vector<Token> parse_probe(const std::string& text) {
  std::vector<Token> tokens;
  std::string normalized = text;
  for (auto& c : normalized) {
    if (c == ',') c = ' ';
  }
  for (auto f : split(normalized, ' ')) {
    if (trim(f).empty()) continue;
    std::uint64_t x = 0;
    if (!parse_u64(f, x)) throw InvalidInput("malformed probe token '" + std::string(f) + "'");
    tokens.push_back(static_cast<Token>(x));
  }
  return tokens;
}

/// Either loads --data or regenerates a split of the final phase recorded in
/// the checkpoint's config.
Dataset dataset_for(const Checkpoint& ckpt, const std::string& data_path, const std::string& split_name) {
  if (!data_path.empty()) return load_dataset(data_path);
  const auto& cfg = ckpt.config;
  const auto split = generate_dataset(cfg.task_for(cfg.phases.size() - 1));
  if (split_name == "train") return split.train;
  if (split.test.empty()) throw InvalidInput("the final phase has no test split; pass --data");
  return split.test;
}

std::ostream& open_or(std::ofstream& file, const std::string& path, std::ostream& fallback) {
  if (path.empty() || path == "-") return fallback;
  file.open(path);
  if (!file) throw Error("cannot open '" + path + "' for writing");
  return file;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Training-dynamics lab for a one-layer cross-attention transformer on sparse modular addition"};
  app.name("circuit_lab");
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Sample train/test datasets to text files");
  TaskConfig task;
  std::optional<std::uint32_t> gen_p_max;
  std::optional<std::uint64_t> gen_seed;
  std::string sampling = "without_replacement";
  std::string train_out, test_out;
  gen->add_option("--p", task.p, "Modulus / vocabulary of the data")->required();
  gen->add_option("--p-max", gen_p_max, "Model vocabulary (defaults to p)");
  gen->add_option("--T", task.T, "Sequence length")->required();
  gen->add_option("--k", task.k, "Number of summed tokens")->required();
  gen->add_option("--n-train", task.n_train, "Train examples")->capture_default_str();
  gen->add_option("--n-test", task.n_test, "Test examples")->capture_default_str();
  gen->add_option("--sampling", sampling)
      ->check(CLI::IsMember({"with_replacement", "without_replacement"}))
      ->capture_default_str();
  gen->add_option("--seed", gen_seed, "RNG seed");
  gen->add_option("--train-out", train_out, "Train dataset file")->required();
  gen->add_option("--test-out", test_out, "Test dataset file");

  // train
  auto* train = app.add_subcommand("train", "Run an experiment config and write a run directory");
  std::string config_path, out_dir;
  std::optional<std::uint64_t> train_seed;
  bool force = false;
  train->add_option("--config", config_path, "Experiment config file")->required();
  train->add_option("--seed", train_seed, "Overrides the config seed");
  train->add_option("--out", out_dir, "Run directory (overrides output_dir)");
  train->add_flag("--force", force, "Replace an existing run directory");

  // eval
  auto* eval = app.add_subcommand("eval", "Loss and accuracy of a checkpoint on a dataset");
  std::string ckpt_path, data_path, split_name = "test";
  eval->add_option("--ckpt", ckpt_path, "Checkpoint file")->required();
  eval->add_option("--data", data_path, "Dataset file (default: regenerate from the checkpoint config)");
  eval->add_option("--split", split_name, "Regenerated split")
      ->check(CLI::IsMember({"train", "test"}))
      ->capture_default_str();

  // interpolate
  auto* interp = app.add_subcommand("interpolate", "Loss profile along the segment between two checkpoints");
  std::string ckpt_a, ckpt_b, interp_train, interp_test, interp_out = "interpolation.csv";
  std::size_t points = kDefaultInterpolationPoints;
  interp->add_option("--a", ckpt_a, "Checkpoint at t = 0")->required();
  interp->add_option("--b", ckpt_b, "Checkpoint at t = 1")->required();
  interp->add_option("--points", points, "Grid size")->check(CLI::Range(2, 1000000))->capture_default_str();
  interp->add_option("--train", interp_train, "Train dataset file (default: regenerate from --a)");
  interp->add_option("--test", interp_test, "Test dataset file (default: regenerate from --a)");
  interp->add_option("--out", interp_out, "Output CSV")->capture_default_str();

  // clusters
  auto* clusters = app.add_subcommand("clusters", "Export post-attention vectors with partial-sum labels");
  std::string cl_ckpt, cl_data, cl_split = "test", cl_out = "clusters.csv";
  std::optional<std::uint32_t> modulus;
  clusters->add_option("--ckpt", cl_ckpt, "Checkpoint file")->required();
  clusters->add_option("--data", cl_data, "Dataset file (default: regenerate from the checkpoint config)");
  clusters->add_option("--split", cl_split, "Regenerated split")
      ->check(CLI::IsMember({"train", "test"}))
      ->capture_default_str();
  clusters->add_option("--modulus", modulus, "Label modulus (default k+1)");
  clusters->add_option("--out", cl_out, "Output CSV")->capture_default_str();

  // trace
  auto* trace = app.add_subcommand("trace", "Attention weights of a checkpoint on probe sequences");
  std::string tr_ckpt, tr_out;
  std::vector<std::string> probe_args;
  trace->add_option("--ckpt", tr_ckpt, "Checkpoint file")->required();
  trace->add_option("--probe", probe_args, "Probe tokens, comma or space separated (repeatable)");
  trace->add_option("--out", tr_out, "Output CSV (default: stdout)");

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      task.p_max = gen_p_max.value_or(task.p);
      task.sampling = sampling_from_string(sampling);
      task.seed = resolve_seed(gen_seed, std::nullopt);
      const auto split = generate_dataset(task);
      save_dataset(train_out, split.train);
      if (!test_out.empty()) save_dataset(test_out, split.test);
      out << "wrote " << split.train.size() << " train and " << split.test.size()
          << " test examples\n";
    } else if (*train) {
      auto parsed = load_config(config_path);
      ExperimentConfig cfg = parsed.config;
      cfg.seed = resolve_seed(train_seed, parsed.seed_present ? std::optional(cfg.seed) : std::nullopt);
      if (!out_dir.empty()) cfg.output_dir = out_dir;
      if (cfg.output_dir.empty()) throw ConfigError("no run directory: pass --out or set output_dir");
      prepare_run_directory(cfg.output_dir, force);
      RunDirectoryRecorder recorder(cfg.output_dir, cfg);
      const auto artifacts = run_curriculum(cfg, &recorder);
      recorder.finish(artifacts.total_steps, cfg.phases.back().name, artifacts.final_params);
      const auto& last = artifacts.metrics.back();
      out << "steps=" << artifacts.total_steps << " train_acc=" << format_double(last.train_acc)
          << " test_acc=" << format_double(last.test_acc) << " dir=" << cfg.output_dir << '\n';
    } else if (*eval) {
      const auto ckpt = load_checkpoint(ckpt_path);
      const auto ds = dataset_for(ckpt, data_path, split_name);
      const auto result = evaluate(ckpt.params, ds);
      out << "loss=" << format_double(result.loss) << " accuracy=" << format_double(result.accuracy)
          << " n=" << ds.size() << '\n';
    } else if (*interp) {
      const auto a = load_checkpoint(ckpt_a);
      const auto b = load_checkpoint(ckpt_b);
      const auto& cfg = a.config;
      Dataset train_ds, test_ds;
      if (interp_train.empty() || interp_test.empty()) {
        const auto split = generate_dataset(cfg.task_for(cfg.phases.size() - 1));
        train_ds = split.train;
        test_ds = split.test;
      }
      if (!interp_train.empty()) train_ds = load_dataset(interp_train);
      if (!interp_test.empty()) test_ds = load_dataset(interp_test);
      const auto profile = interpolate_losses(a.params, b.params, train_ds, test_ds, points);
      std::ofstream file;
      write_interpolation_csv(open_or(file, interp_out, out), profile);
      if (points >= 3) {
        out << "train_barrier_ratio=" << format_double(barrier_ratio(profile.train_losses)) << '\n';
      }
    } else if (*clusters) {
      const auto ckpt = load_checkpoint(cl_ckpt);
      const auto ds = dataset_for(ckpt, cl_data, cl_split);
      const std::uint32_t m = modulus.value_or(ds.k() + 1);
      const auto rows = export_clusters(ckpt.params, ds, m);
      std::ofstream file;
      write_clusters_csv(open_or(file, cl_out, out), rows);
      const auto purity = cluster_purity(rows, m);
      out << "purity=" << format_double(purity.purity);
      if (!purity.missing_labels.empty()) {
        out << " missing_labels=";
        for (std::size_t i = 0; i < purity.missing_labels.size(); ++i) {
          out << (i ? "," : "") << purity.missing_labels[i];
        }
      }
      out << '\n';
    } else if (*trace) {
      const auto ckpt = load_checkpoint(tr_ckpt);
      std::vector<Probe> probes;
      for (std::size_t i = 0; i < probe_args.size(); ++i) {
        probes.push_back({"probe" + std::to_string(i), parse_probe(probe_args[i])});
      }
      if (probes.empty()) probes = ckpt.config.probe_sequences();
      const auto rows = record_attention(ckpt.params, probes, ckpt.step);
      std::ofstream file;
      auto& os = open_or(file, tr_out, out);
      os << kAttentionHeader << '\n';
      for (const auto& row : rows) write_attention_row(os, row);
    }
  } catch (const std::exception& e) {
    err << "circuit_lab: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace circuit_lab
