#include "circuit_lab/persistence.hpp"

#include <limits>
#include <map>
#include <sstream>

#include "circuit_lab/analysis.hpp"
#include "circuit_lab/errors.hpp"
#include "circuit_lab/text_format.hpp"

namespace circuit_lab {

namespace {

struct Entry {
  std::string value;
  std::size_t line = 0;
  bool used = false;
};

/// key -> value table with usage tracking so unknown keys can be reported.
class KeyValues {
public:
  KeyValues(std::string_view text, const std::string& prefix = "") {
    std::size_t line_no = 0;
    for (auto raw : split(text, '\n')) {
      ++line_no;
      const auto hash = raw.find('#');
      auto line = trim(hash == std::string_view::npos ? raw : raw.substr(0, hash));
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) {
        throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
      }
      std::string key(trim(line.substr(0, eq)));
      if (!prefix.empty()) {
        if (key.rfind(prefix, 0) != 0) continue;
        key = key.substr(prefix.size());
      }
      if (entries_.count(key) != 0) {
        throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
      }
      entries_[key] = Entry{std::string(trim(line.substr(eq + 1))), line_no};
    }
  }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  const std::string* raw(const std::string& key) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return nullptr;
    it->second.used = true;
    return &it->second.value;
  }

  template <typename U>
  void get_uint(const std::string& key, U& out) {
    if (const auto* v = raw(key)) {
      std::uint64_t x = 0;
      if (!parse_u64(*v, x) || x > std::numeric_limits<U>::max()) fail(key, "a non-negative integer");
      out = static_cast<U>(x);
    }
  }

  void get_double(const std::string& key, double& out) {
    if (const auto* v = raw(key)) {
      if (!parse_double(*v, out)) fail(key, "a number");
    }
  }

  void get_bool(const std::string& key, bool& out) {
    if (const auto* v = raw(key)) {
      if (*v == "true") out = true;
      else if (*v == "false") out = false;
      else fail(key, "'true' or 'false'");
    }
  }

  void get_string(const std::string& key, std::string& out) {
    if (const auto* v = raw(key)) out = *v;
  }

  std::vector<std::string> keys_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [key, entry] : entries_) {
      if (key.rfind(prefix, 0) == 0) out.push_back(key);
    }
    return out;
  }

  std::size_t line_of(const std::string& key) const { return entries_.at(key).line; }

  void reject_unused() const {
    for (const auto& [key, entry] : entries_) {
      if (!entry.used) {
        throw ConfigError("line " + std::to_string(entry.line) + ": unknown key '" + key + "'");
      }
    }
  }

  [[noreturn]] void fail(const std::string& key, const std::string& expected) const {
    const auto& e = entries_.at(key);
    throw ConfigError("line " + std::to_string(e.line) + ": '" + key + "' must be " + expected +
                      ", got '" + e.value + "'");
  }

private:
  std::map<std::string, Entry> entries_;
};

std::vector<Token> parse_tokens(std::string_view text) {
  std::vector<Token> tokens;
  for (auto field : split(trim(text), ' ')) {
    if (trim(field).empty()) continue;
    std::uint64_t x = 0;
    if (!parse_u64(field, x)) throw ConfigError("malformed token '" + std::string(field) + "'");
    tokens.push_back(static_cast<Token>(x));
  }
  return tokens;
}

ParsedConfig parse_config_table(KeyValues& kv) {
  ParsedConfig parsed;
  ExperimentConfig& cfg = parsed.config;
  parsed.seed_present = kv.has("seed");
  kv.get_uint("seed", cfg.seed);
  kv.get_string("output_dir", cfg.output_dir);
  kv.get_bool("reset_optimizer_on_phase", cfg.reset_optimizer_on_phase);

  kv.get_uint("model.p_max", cfg.model.p_max);
  kv.get_uint("model.T", cfg.model.T);
  kv.get_uint("model.d", cfg.model.d);
  cfg.model.h = 4 * cfg.model.d;
  kv.get_uint("model.h", cfg.model.h);

  kv.get_double("optim.lr", cfg.optimizer.lr);
  kv.get_double("optim.beta1", cfg.optimizer.beta1);
  kv.get_double("optim.beta2", cfg.optimizer.beta2);
  kv.get_double("optim.eps", cfg.optimizer.eps);

  kv.get_bool("probes.constant", cfg.probes.constant);
  kv.get_bool("probes.test_mean", cfg.probes.test_mean);
  for (const auto& key : kv.keys_with_prefix("probes.extra.")) {
    const std::string id = key.substr(std::string("probes.extra.").size());
    if (id.empty()) throw ConfigError("line " + std::to_string(kv.line_of(key)) + ": empty probe id");
    cfg.probes.extra.push_back(Probe{id, parse_tokens(*kv.raw(key))});
  }

  for (std::size_t i = 0;; ++i) {
    const std::string prefix = "phase." + std::to_string(i) + ".";
    if (kv.keys_with_prefix(prefix).empty()) break;
    PhaseConfig phase;
    std::string text;
    if (kv.raw(prefix + "name") == nullptr) {
      throw ConfigError("phase " + std::to_string(i) + " has no name");
    }
    phase.name = phase_name_from_string(*kv.raw(prefix + "name"));
    phase.task.p_max = cfg.model.p_max;
    phase.task.T = cfg.model.T;
    kv.get_uint(prefix + "T", phase.task.T);
    kv.get_uint(prefix + "p", phase.task.p);
    kv.get_uint(prefix + "k", phase.task.k);
    kv.get_uint(prefix + "n_train", phase.task.n_train);
    kv.get_uint(prefix + "n_test", phase.task.n_test);
    if (const auto* s = kv.raw(prefix + "sampling")) {
      try {
        phase.task.sampling = sampling_from_string(*s);
      } catch (const InvalidInput& e) {
        throw ConfigError(e.what());
      }
    }
    if (kv.has(prefix + "data_seed")) {
      std::uint64_t seed = 0;
      kv.get_uint(prefix + "data_seed", seed);
      phase.data_seed = seed;
    }
    kv.get_uint(prefix + "epochs", phase.epochs);
    if (const auto* b = kv.raw(prefix + "batch_size")) {
      if (*b == "full") {
        phase.batch_size = kFullBatch;
      } else {
        std::uint64_t x = 0;
        if (!parse_u64(*b, x) || x == 0) kv.fail(prefix + "batch_size", "'full' or a positive integer");
        phase.batch_size = x;
      }
    }
    kv.get_uint(prefix + "eval_every", phase.eval_every);
    kv.get_uint(prefix + "trace_every", phase.trace_every);
    kv.get_uint(prefix + "snapshot_every", phase.snapshot_every);
    cfg.phases.push_back(phase);
  }
  kv.reject_unused();
  cfg.validate();
  return parsed;
}

}  // namespace

ParsedConfig parse_config(std::string_view text) {
  KeyValues kv(text);
  return parse_config_table(kv);
}

ParsedConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config '" + path.string() + "'");
  std::stringstream buf;
  buf << is.rdbuf();
  return parse_config(buf.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::ostringstream os;
  auto b = [](bool v) { return v ? "true" : "false"; };
  os << "seed = " << cfg.seed << '\n';
  if (!cfg.output_dir.empty()) os << "output_dir = " << cfg.output_dir << '\n';
  os << "reset_optimizer_on_phase = " << b(cfg.reset_optimizer_on_phase) << '\n';
  os << "model.p_max = " << cfg.model.p_max << '\n'
     << "model.T = " << cfg.model.T << '\n'
     << "model.d = " << cfg.model.d << '\n'
     << "model.h = " << cfg.model.h << '\n';
  os << "optim.lr = " << format_double(cfg.optimizer.lr) << '\n'
     << "optim.beta1 = " << format_double(cfg.optimizer.beta1) << '\n'
     << "optim.beta2 = " << format_double(cfg.optimizer.beta2) << '\n'
     << "optim.eps = " << format_double(cfg.optimizer.eps) << '\n';
  os << "probes.constant = " << b(cfg.probes.constant) << '\n'
     << "probes.test_mean = " << b(cfg.probes.test_mean) << '\n';
  // The parser reads extra probes back in key order.
  std::map<std::string, const Probe*> extras;
  for (const auto& probe : cfg.probes.extra) extras[probe.id] = &probe;
  for (const auto& [id, probe] : extras) {
    os << "probes.extra." << id << " =";
    for (Token x : probe->tokens) os << ' ' << x;
    os << '\n';
  }
  for (std::size_t i = 0; i < cfg.phases.size(); ++i) {
    const auto& ph = cfg.phases[i];
    const std::string prefix = "phase." + std::to_string(i) + ".";
    os << prefix << "name = " << to_string(ph.name) << '\n'
       << prefix << "p = " << ph.task.p << '\n'
       << prefix << "k = " << ph.task.k << '\n'
       << prefix << "n_train = " << ph.task.n_train << '\n'
       << prefix << "n_test = " << ph.task.n_test << '\n'
       << prefix << "sampling = " << to_string(ph.task.sampling) << '\n';
    if (ph.data_seed) os << prefix << "data_seed = " << *ph.data_seed << '\n';
    os << prefix << "epochs = " << ph.epochs << '\n' << prefix << "batch_size = ";
    if (ph.batch_size == kFullBatch) os << "full";
    else os << ph.batch_size;
    os << '\n'
       << prefix << "eval_every = " << ph.eval_every << '\n'
       << prefix << "trace_every = " << ph.trace_every << '\n'
       << prefix << "snapshot_every = " << ph.snapshot_every << '\n';
  }
  return os.str();
}

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
  os << "format_version = " << ckpt.format_version << '\n'
     << "step = " << ckpt.step << '\n'
     << "phase = " << to_string(ckpt.phase) << '\n';
  // The run location is not part of a checkpoint's identity.
  auto embedded = ckpt.config;
  embedded.output_dir.clear();
  std::istringstream cfg(serialize_config(embedded));
  for (std::string line; std::getline(cfg, line);) os << "config." << line << '\n';
  ckpt.params.for_each([&](std::string_view name, const Tensor& t) {
    os << "tensor." << name << ".shape =";
    for (auto s : t.shape()) os << ' ' << s;
    os << "\ntensor." << name << ".values =";
    for (double x : t.values()) os << ' ' << format_double(x);
    os << '\n';
  });
}

Checkpoint read_checkpoint(std::istream& is) {
  std::stringstream buf;
  buf << is.rdbuf();
  const std::string text = buf.str();

  // The version line is checked before anything else is interpreted.
  const auto first = trim(std::string_view(text).substr(0, text.find('\n')));
  const std::string_view version_key = "format_version";
  if (first.rfind(version_key, 0) != 0) {
    throw CorruptionError("checkpoint does not start with format_version");
  }
  const auto eq = first.find('=');
  std::uint64_t version = 0;
  if (eq == std::string_view::npos || !parse_u64(first.substr(eq + 1), version)) {
    throw ParseError("malformed format_version", 1);
  }
  if (version != kCheckpointFormatVersion) {
    throw IncompatibleVersion("checkpoint format_version " + std::to_string(version) +
                              " is not supported (expected " +
                              std::to_string(kCheckpointFormatVersion) + ")");
  }

  Checkpoint ckpt;
  ckpt.format_version = static_cast<std::uint32_t>(version);

  KeyValues config_kv(text, "config.");
  ckpt.config = parse_config_table(config_kv).config;

  std::map<std::string, std::pair<std::string, std::size_t>> fields;
  std::size_t line_no = 0;
  for (auto raw : split(text, '\n')) {
    ++line_no;
    auto line = trim(raw);
    if (line.empty() || line.rfind("config.", 0) == 0) continue;
    const auto pos = line.find('=');
    if (pos == std::string_view::npos) throw ParseError("expected 'key = value'", line_no);
    fields[std::string(trim(line.substr(0, pos)))] = {std::string(trim(line.substr(pos + 1))),
                                                       line_no};
  }

  auto field = [&](const std::string& key) -> const std::pair<std::string, std::size_t>& {
    auto it = fields.find(key);
    if (it == fields.end()) throw CorruptionError("checkpoint is missing '" + key + "'");
    return it->second;
  };
  if (!parse_u64(field("step").first, ckpt.step)) throw ParseError("malformed step", field("step").second);
  try {
    ckpt.phase = phase_name_from_string(field("phase").first);
  } catch (const ConfigError&) {
    throw ParseError("unknown phase name", field("phase").second);
  }

  ckpt.params = ModelParams::zeros(ckpt.config.model);
  ckpt.params.for_each([&](std::string_view name, Tensor& t) {
    const std::string base = "tensor." + std::string(name);
    const auto& shape_field = field(base + ".shape");
    const auto& values_field = field(base + ".values");
    std::vector<std::size_t> shape;
    for (auto f : split(shape_field.first, ' ')) {
      if (trim(f).empty()) continue;
      std::uint64_t x = 0;
      if (!parse_u64(f, x)) throw ParseError("malformed shape for " + std::string(name), shape_field.second);
      shape.push_back(x);
    }
    if (shape != t.shape()) {
      throw CorruptionError("tensor " + std::string(name) + " shape disagrees with the model config");
    }
    std::vector<double> values;
    values.reserve(t.size());
    for (auto f : split(values_field.first, ' ')) {
      if (trim(f).empty()) continue;
      double x = 0.0;
      if (!parse_double(f, x)) throw ParseError("malformed value in " + std::string(name), values_field.second);
      values.push_back(x);
    }
    if (values.size() != t.size()) {
      throw CorruptionError("tensor " + std::string(name) + " has " + std::to_string(values.size()) +
                            " values, shape needs " + std::to_string(t.size()));
    }
    t = Tensor(shape, std::move(values));
  });
  for (const auto& [key, value] : fields) {
    const bool known = key == "format_version" || key == "step" || key == "phase" ||
                       key.rfind("tensor.", 0) == 0;
    if (!known) throw ParseError("unknown checkpoint key '" + key + "'", value.second);
    if (key.rfind("tensor.", 0) == 0) {
      const auto rest = key.substr(7);
      const auto dot = rest.find('.');
      const auto name = rest.substr(0, dot);
      const auto suffix = dot == std::string::npos ? std::string() : rest.substr(dot);
      bool known_tensor = false;
      for (auto n : kTensorNames) known_tensor = known_tensor || n == name;
      if (!known_tensor || (suffix != ".shape" && suffix != ".values")) {
        throw ParseError("unknown checkpoint key '" + key + "'", value.second);
      }
    }
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open '" + path.string() + "' for writing");
  write_checkpoint(os, ckpt);
  os.flush();
  if (!os) throw Error("failed writing '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open '" + path.string() + "'");
  return read_checkpoint(is);
}

void prepare_run_directory(const std::filesystem::path& dir, bool force) {
  namespace fs = std::filesystem;
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw Error("'" + dir.string() + "' exists and is not a directory");
    if (!fs::is_empty(dir)) {
      if (!force) {
        throw Error("run directory '" + dir.string() + "' is not empty (use --force to replace it)");
      }
      fs::remove_all(dir);
    }
  }
  fs::create_directories(dir);
}

std::string phase_checkpoint_name(std::size_t phase_index, PhaseName phase) {
  return "phase" + std::to_string(phase_index) + "_" + to_string(phase) + ".ckpt";
}

void write_metric_row(std::ostream& os, const MetricRow& row) {
  os << row.step << ',' << row.epoch << ',' << to_string(row.phase) << ','
     << format_double(row.train_loss) << ',' << format_double(row.train_acc) << ','
     << format_double(row.test_loss) << ',' << format_double(row.test_acc) << '\n';
}

void write_attention_row(std::ostream& os, const AttentionTraceRow& row) {
  os << row.step << ',' << row.probe_id << ',' << row.position << ',' << row.token << ','
     << format_double(row.weight) << '\n';
}

RunDirectoryRecorder::RunDirectoryRecorder(std::filesystem::path dir, ExperimentConfig config)
    : dir_(std::move(dir)),
      config_(std::move(config)),
      metrics_(dir_ / "metrics.csv"),
      attention_(dir_ / "attention.csv"),
      snapshots_(dir_ / "snapshots.csv") {
  {
    std::ofstream cfg(dir_ / "config.cfg");
    cfg << serialize_config(config_);
    check(cfg, "config.cfg");
  }
  metrics_ << kMetricsHeader << '\n';
  attention_ << kAttentionHeader << '\n';
  const auto columns = snapshot_columns(config_.model);
  for (std::size_t i = 0; i < columns.size(); ++i) snapshots_ << (i ? "," : "") << columns[i];
  snapshots_ << '\n';
  check(metrics_, "metrics.csv");
  check(attention_, "attention.csv");
  check(snapshots_, "snapshots.csv");
}

void RunDirectoryRecorder::check(std::ostream& os, const char* what) const {
  if (!os) throw Error("I/O failure writing " + (dir_ / what).string());
}

void RunDirectoryRecorder::on_metric(const MetricRow& row) {
  write_metric_row(metrics_, row);
  check(metrics_, "metrics.csv");
}

void RunDirectoryRecorder::on_attention(std::span<const AttentionTraceRow> rows) {
  for (const auto& row : rows) write_attention_row(attention_, row);
  check(attention_, "attention.csv");
}

void RunDirectoryRecorder::on_snapshot(std::uint64_t step, const ModelParams& params) {
  snapshots_ << step;
  params.for_each([&](std::string_view, const Tensor& t) {
    for (double x : t.values()) snapshots_ << ',' << format_double(x);
  });
  snapshots_ << '\n';
  check(snapshots_, "snapshots.csv");
}

void RunDirectoryRecorder::on_phase_end(std::uint64_t step, std::size_t phase_index,
                                        const PhaseConfig& phase, const ModelParams& params) {
  save_checkpoint(dir_ / phase_checkpoint_name(phase_index, phase.name),
                  Checkpoint{kCheckpointFormatVersion, config_, step, phase.name, params});
}

void RunDirectoryRecorder::finish(std::uint64_t step, PhaseName phase, const ModelParams& params) {
  metrics_.flush();
  attention_.flush();
  snapshots_.flush();
  check(metrics_, "metrics.csv");
  check(attention_, "attention.csv");
  check(snapshots_, "snapshots.csv");
  save_checkpoint(dir_ / kFinalCheckpoint, Checkpoint{kCheckpointFormatVersion, config_, step, phase, params});
}

}  // namespace circuit_lab
