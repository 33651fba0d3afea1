#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "circuit_lab/cli.hpp"
#include "circuit_lab/persistence.hpp"
#include "circuit_lab/text_format.hpp"

using namespace circuit_lab;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli_main(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("circuit_lab_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

const char* kTinyConfig = R"(model.p_max = 4
model.T = 6
model.d = 4
phase.0.name = pretrain
phase.0.p = 2
phase.0.k = 3
phase.0.n_train = 32
phase.0.n_test = 16
phase.0.epochs = 6
phase.0.eval_every = 2
phase.0.snapshot_every = 3
phase.1.name = finetune
phase.1.p = 4
phase.1.k = 3
phase.1.n_train = 32
phase.1.n_test = 16
phase.1.epochs = 4
)";

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::size_t line_count(const fs::path& p) {
  std::ifstream is(p);
  std::size_t n = 0;
  for (std::string line; std::getline(is, line);) ++n;
  return n;
}

}  // namespace

TEST_CASE("usage errors exit nonzero") {
  CHECK(run({}).code != 0);
  CHECK(run({"frobnicate"}).code != 0);
  CHECK(run({"train", "--nope"}).code != 0);
  CHECK(run({"eval"}).code != 0);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("gen-data writes loadable datasets") {
  const auto dir = fresh_dir("gen");
  const auto r = run({"gen-data", "--p", "2", "--T", "8", "--k", "5", "--n-train", "100",
                      "--n-test", "50", "--seed", "4", "--train-out", (dir / "train.txt").string(),
                      "--test-out", (dir / "test.txt").string()});
  REQUIRE(r.code == 0);
  const auto train = load_dataset((dir / "train.txt").string());
  CHECK(train.size() == 100);
  CHECK(load_dataset((dir / "test.txt").string()).size() == 50);

  const auto bad = run({"gen-data", "--p", "2", "--T", "2", "--k", "1", "--n-train", "5",
                        "--train-out", (dir / "x.txt").string()});
  CHECK(bad.code == 1);
  CHECK(bad.err.find("cannot draw") != std::string::npos);
}

TEST_CASE("train, eval, interpolate, clusters and trace end to end") {
  const auto dir = fresh_dir("e2e");
  std::ofstream(dir / "tiny.cfg") << kTinyConfig;
  const auto run_a = dir / "a";
  const auto t = run({"train", "--config", (dir / "tiny.cfg").string(), "--seed", "1", "--out",
                      run_a.string()});
  INFO(t.err);
  REQUIRE(t.code == 0);
  for (const char* f : {"metrics.csv", "attention.csv", "snapshots.csv", "final.ckpt",
                        "phase0_pretrain.ckpt", "phase1_finetune.ckpt", "config.cfg"}) {
    CHECK(fs::exists(run_a / f));
  }
  // Re-running into the same directory is refused without --force.
  CHECK(run({"train", "--config", (dir / "tiny.cfg").string(), "--out", run_a.string()}).code == 1);
  CHECK(run({"train", "--config", (dir / "tiny.cfg").string(), "--seed", "1", "--out",
             run_a.string(), "--force"}).code == 0);

  const auto run_b = dir / "b";
  REQUIRE(run({"train", "--config", (dir / "tiny.cfg").string(), "--seed", "2", "--out",
               run_b.string()}).code == 0);

  const auto e = run({"eval", "--ckpt", (run_a / "final.ckpt").string()});
  REQUIRE(e.code == 0);
  CHECK(e.out.rfind("loss=", 0) == 0);

  const auto csv = dir / "interp.csv";
  const auto i = run({"interpolate", "--a", (run_a / "final.ckpt").string(), "--b",
                      (run_b / "final.ckpt").string(), "--points", "101", "--out", csv.string()});
  REQUIRE(i.code == 0);
  CHECK(line_count(csv) == 102);
  CHECK(slurp(csv).rfind("t,train_loss,test_loss\n", 0) == 0);

  const auto ccsv = dir / "clusters.csv";
  const auto c = run({"clusters", "--ckpt", (run_a / "final.ckpt").string(), "--modulus", "4",
                      "--out", ccsv.string()});
  REQUIRE(c.code == 0);
  CHECK(c.out.rfind("purity=", 0) == 0);
  CHECK(line_count(ccsv) == 17);
  CHECK(slurp(ccsv).rfind("example_id,label,z0,z1,z2,z3\n", 0) == 0);

  const auto tr = run({"trace", "--ckpt", (run_a / "final.ckpt").string(), "--probe",
                       "0,1,2,3,0,1"});
  REQUIRE(tr.code == 0);
  CHECK(tr.out.rfind("step,probe_id,position,token,weight\n", 0) == 0);
  CHECK(std::count(tr.out.begin(), tr.out.end(), '\n') == 7);

  const auto bad_probe = run({"trace", "--ckpt", (run_a / "final.ckpt").string(), "--probe", "0,1"});
  CHECK(bad_probe.code == 1);
}

TEST_CASE("eval on an all-zero checkpoint prints ln 4") {
  const auto dir = fresh_dir("zero");
  std::ofstream(dir / "tiny.cfg") << kTinyConfig;
  Checkpoint ckpt;
  ckpt.config = load_config(dir / "tiny.cfg").config;
  ckpt.params = ModelParams::zeros(ckpt.config.model);
  save_checkpoint(dir / "zero.ckpt", ckpt);
  const auto r = run({"eval", "--ckpt", (dir / "zero.ckpt").string()});
  REQUIRE(r.code == 0);
  const auto start = r.out.find('=') + 1;
  double loss = 0.0;
  REQUIRE(parse_double(r.out.substr(start, r.out.find(' ') - start), loss));
  CHECK(loss == doctest::Approx(std::log(4.0)).epsilon(1e-15));
}

TEST_CASE("seed precedence: flag over config over environment") {
  const auto dir = fresh_dir("seed");
  std::ofstream(dir / "noseed.cfg") << kTinyConfig;
  std::ofstream(dir / "seeded.cfg") << "seed = 8\n" << kTinyConfig;

  ::setenv(kSeedEnvVar, "5", 1);
  REQUIRE(run({"train", "--config", (dir / "noseed.cfg").string(), "--out", (dir / "env").string()}).code == 0);
  CHECK(load_checkpoint(dir / "env" / "final.ckpt").config.seed == 5);

  REQUIRE(run({"train", "--config", (dir / "seeded.cfg").string(), "--out", (dir / "cfg").string()}).code == 0);
  CHECK(load_checkpoint(dir / "cfg" / "final.ckpt").config.seed == 8);

  REQUIRE(run({"train", "--config", (dir / "seeded.cfg").string(), "--seed", "9", "--out",
               (dir / "flag").string()}).code == 0);
  CHECK(load_checkpoint(dir / "flag" / "final.ckpt").config.seed == 9);

  ::unsetenv(kSeedEnvVar);
  REQUIRE(run({"train", "--config", (dir / "noseed.cfg").string(), "--out", (dir / "none").string()}).code == 0);
  CHECK(load_checkpoint(dir / "none" / "final.ckpt").config.seed == 0);
}

TEST_CASE("the installed binary runs") {
  const std::string cmd = std::string(CIRCUIT_LAB_CLI) + " --help > /dev/null";
  CHECK(std::system(cmd.c_str()) == 0);
}
