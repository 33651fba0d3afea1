#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "circuit_lab/analysis.hpp"
#include "circuit_lab/errors.hpp"
#include "circuit_lab/persistence.hpp"

using namespace circuit_lab;
namespace fs = std::filesystem;

namespace {

const char* kCurriculumConfig = R"(# two-phase curriculum
seed = 3
model.p_max = 4
model.T = 12
model.d = 32
optim.lr = 0.001
phase.0.name = pretrain
phase.0.p = 2
phase.0.k = 5
phase.0.n_train = 2048
phase.0.n_test = 2048
phase.0.epochs = 3000
phase.0.batch_size = full
phase.1.name = finetune
phase.1.p = 4
phase.1.k = 5
phase.1.n_train = 2048
phase.1.n_test = 2048
phase.1.epochs = 7000
probes.extra.mixed = 0 1 2 3 0 1 2 3 0 1 2 3
)";

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("circuit_lab_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ExperimentConfig tiny_config() {
  auto cfg = parse_config(kCurriculumConfig).config;
  cfg.model = {4, 12, 3, 5};
  return cfg;
}

}  // namespace

TEST_CASE("config parsing fills defaults and reads phases") {
  const auto parsed = parse_config(kCurriculumConfig);
  const auto& cfg = parsed.config;
  CHECK(parsed.seed_present);
  CHECK(cfg.seed == 3);
  CHECK(cfg.model == ModelConfig{4, 12, 32, 128});
  CHECK(cfg.optimizer == AdamHyper{});
  REQUIRE(cfg.phases.size() == 2);
  CHECK(cfg.phases[0].name == PhaseName::pretrain);
  CHECK(cfg.phases[0].task.p == 2);
  CHECK(cfg.phases[0].task.p_max == 4);
  CHECK(cfg.phases[0].task.T == 12);
  CHECK(cfg.phases[0].batch_size == kFullBatch);
  CHECK(cfg.phases[1].epochs == 7000);
  CHECK(cfg.phases[1].eval_every == 10);
  CHECK(cfg.phases[1].snapshot_every == 100);
  CHECK(cfg.reset_optimizer_on_phase);
  REQUIRE(cfg.probes.extra.size() == 1);
  CHECK(cfg.probes.extra[0].tokens.size() == 12);
  CHECK(cfg.task_for(1).seed == 3);
}

TEST_CASE("config canonicalization round-trips") {
  const auto cfg = parse_config(kCurriculumConfig).config;
  const auto text = serialize_config(cfg);
  const auto again = parse_config(text).config;
  CHECK(again == cfg);
  CHECK(serialize_config(again) == text);

  auto odd = cfg;
  odd.optimizer.lr = 0.1;
  odd.phases[0].data_seed = 77;
  odd.phases[0].batch_size = 32;
  odd.phases[0].task.sampling = Sampling::with_replacement;
  odd.reset_optimizer_on_phase = false;
  odd.output_dir = "runs/x";
  CHECK(parse_config(serialize_config(odd)).config == odd);
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(parse_config("seed = 1\nmodel.d = 2\n"), ConfigError);  // no phases
  CHECK_THROWS_AS(parse_config(std::string(kCurriculumConfig) + "bogus = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config(std::string(kCurriculumConfig) + "seed = 4\n"), ConfigError);
  CHECK_THROWS_AS(parse_config(std::string(kCurriculumConfig) + "phase.1.T = 8\n"), ConfigError);
  CHECK_THROWS_AS(parse_config(std::string(kCurriculumConfig) + "phase.2.p = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_config(std::string(kCurriculumConfig) + "no equals sign\n"), ConfigError);

  std::string bad_p = kCurriculumConfig;
  bad_p.replace(bad_p.find("phase.1.p = 4"), 13, "phase.1.p = 5");
  CHECK_THROWS_AS(parse_config(bad_p), ConfigError);

  std::string bad_lr = kCurriculumConfig;
  bad_lr.replace(bad_lr.find("optim.lr = 0.001"), 16, "optim.lr = fast");
  try {
    parse_config(bad_lr);
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 6") != std::string::npos);
  }
}

TEST_CASE("checkpoint save and load are bit-identical") {
  const auto dir = temp_dir("ckpt");
  Checkpoint ckpt;
  ckpt.config = tiny_config();
  ckpt.step = 3000;
  ckpt.phase = PhaseName::pretrain;
  ckpt.params = init_params(ckpt.config.model, 99);
  ckpt.params.W_Q[0] = 1.0 / 3.0;
  ckpt.params.W_V[1] = -0.0;
  ckpt.params.W_U[2] = 5e-310;  // subnormal
  save_checkpoint(dir / "a.ckpt", ckpt);
  const auto back = load_checkpoint(dir / "a.ckpt");
  CHECK(back.params == ckpt.params);
  CHECK(std::signbit(back.params.W_V[1]));
  CHECK(back.config == ckpt.config);
  CHECK(back.step == 3000);
  CHECK(back.phase == PhaseName::pretrain);
}

TEST_CASE("checkpoint bytes do not depend on the run directory") {
  Checkpoint a;
  a.config = tiny_config();
  a.params = init_params(a.config.model, 5);
  auto b = a;
  a.config.output_dir = "runs/one";
  b.config.output_dir = "elsewhere/two";
  std::ostringstream sa, sb;
  write_checkpoint(sa, a);
  write_checkpoint(sb, b);
  CHECK(sa.str() == sb.str());
}

TEST_CASE("checkpoint version and corruption errors") {
  Checkpoint ckpt;
  ckpt.config = tiny_config();
  ckpt.params = init_params(ckpt.config.model, 1);
  std::ostringstream os;
  write_checkpoint(os, ckpt);
  const std::string text = os.str();

  {
    std::string v999 = text;
    v999.replace(0, v999.find('\n'), "format_version = 999");
    std::istringstream is(v999);
    CHECK_THROWS_AS(read_checkpoint(is), IncompatibleVersion);
  }
  {
    std::string missing;
    std::istringstream lines(text);
    for (std::string line; std::getline(lines, line);) {
      if (line.rfind("tensor.W_V.", 0) != 0) missing += line + "\n";
    }
    std::istringstream is(missing);
    CHECK_THROWS_AS(read_checkpoint(is), CorruptionError);
  }
  {
    std::string truncated = text;
    const auto pos = truncated.find("tensor.W_Q.values = ");
    const auto eol = truncated.find('\n', pos);
    truncated.replace(pos, eol - pos, "tensor.W_Q.values = 1 2");
    std::istringstream is(truncated);
    CHECK_THROWS_AS(read_checkpoint(is), CorruptionError);
  }
  {
    std::istringstream is("step = 3\n");
    CHECK_THROWS_AS(read_checkpoint(is), CorruptionError);
  }
}

TEST_CASE("a p=2 checkpoint at p_max=4 feeds p=4 training unchanged") {
  auto cfg = tiny_config();
  cfg.phases[0].epochs = 2;
  cfg.phases[0].task.n_train = 64;
  cfg.phases[0].task.n_test = 16;
  cfg.phases.resize(1);
  const auto art = run_curriculum(cfg);
  Checkpoint ckpt{kCheckpointFormatVersion, cfg, art.total_steps, PhaseName::pretrain, art.final_params};
  std::stringstream ss;
  write_checkpoint(ss, ckpt);
  auto loaded = read_checkpoint(ss);

  PhaseConfig fine;
  fine.name = PhaseName::finetune;
  fine.task = {4, 4, 12, 5, 64, 16, Sampling::without_replacement, 1};
  fine.epochs = 2;
  MemoryRecorder rec;
  Trainer trainer(AdamHyper{}, {}, false, 0, rec);
  auto state = AdamState::fresh(loaded.params.config());
  CHECK_NOTHROW(trainer.run_phase(loaded.params, state, fine, generate_dataset(fine.task)));
}

TEST_CASE("run directory preparation refuses to overwrite") {
  const auto dir = temp_dir("rundir");
  prepare_run_directory(dir / "run", false);
  std::ofstream(dir / "run" / "metrics.csv") << "x\n";
  CHECK_THROWS_AS(prepare_run_directory(dir / "run", false), Error);
  CHECK_NOTHROW(prepare_run_directory(dir / "run", true));
  CHECK(fs::is_empty(dir / "run"));
}

TEST_CASE("run directory recorder writes documented files") {
  const auto dir = temp_dir("recorder") / "run";
  auto cfg = tiny_config();
  cfg.model = {4, 12, 2, 3};
  for (auto& ph : cfg.phases) {
    ph.epochs = 3;
    ph.task.n_train = 32;
    ph.task.n_test = 8;
    ph.snapshot_every = 2;
  }
  prepare_run_directory(dir, false);
  RunDirectoryRecorder rec(dir, cfg);
  const auto art = run_curriculum(cfg, &rec);
  rec.finish(art.total_steps, PhaseName::finetune, art.final_params);

  for (const char* f : {"metrics.csv", "attention.csv", "snapshots.csv", "config.cfg",
                        "phase0_pretrain.ckpt", "phase1_finetune.ckpt", "final.ckpt"}) {
    CHECK(fs::exists(dir / f));
  }
  std::ifstream metrics(dir / "metrics.csv");
  std::string header;
  std::getline(metrics, header);
  CHECK(header == kMetricsHeader);
  std::ifstream attention(dir / "attention.csv");
  std::getline(attention, header);
  CHECK(header == kAttentionHeader);

  const auto traj = assemble_trajectory((dir / "snapshots.csv").string());
  CHECK(traj.steps == std::vector<std::uint64_t>{0, 2, 4, 6});
  CHECK(traj.matrix.dim(1) == param_count(cfg.model));
  const auto flat = art.final_params.flatten();
  for (std::size_t i = 0; i < flat.size(); ++i) CHECK(traj.matrix.at(3, i) == flat[i]);

  CHECK(load_checkpoint(dir / "final.ckpt").params == art.final_params);
  CHECK(load_checkpoint(dir / "phase0_pretrain.ckpt").step == 3);
  CHECK(parse_config(serialize_config(cfg)).config == load_config(dir / "config.cfg").config);
}
