#include "circuit_lab/task_data.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <unordered_set>

#include "circuit_lab/errors.hpp"

namespace circuit_lab {

std::string to_string(Sampling s) {
  return s == Sampling::with_replacement ? "with_replacement" : "without_replacement";
}

Sampling sampling_from_string(const std::string& s) {
  if (s == "with_replacement") return Sampling::with_replacement;
  if (s == "without_replacement") return Sampling::without_replacement;
  throw InvalidInput("unknown sampling mode '" + s + "'");
}

std::optional<std::uint64_t> sequence_space_size(std::uint32_t p, std::uint32_t T) {
  std::uint64_t n = 1;
  for (std::uint32_t t = 0; t < T; ++t) {
    if (p != 0 && n > UINT64_MAX / p) return std::nullopt;
    n *= p;
  }
  return n;
}

void TaskConfig::validate() const {
  if (k < 1 || k > T) {
    throw InvalidInput("task requires 1 <= k <= T (k=" + std::to_string(k) +
                       ", T=" + std::to_string(T) + ")");
  }
  if (p < 2 || p > p_max) {
    throw InvalidInput("task requires 2 <= p <= p_max (p=" + std::to_string(p) +
                       ", p_max=" + std::to_string(p_max) + ")");
  }
  if (sampling == Sampling::without_replacement) {
    const auto space = sequence_space_size(p, T);
    if (space && n_train + n_test > *space) {
      throw CapacityError("cannot draw " + std::to_string(n_train + n_test) +
                          " distinct sequences from a space of " + std::to_string(*space));
    }
  }
}

Token oracle_label(std::span<const Token> tokens, std::uint32_t k, std::uint32_t p) {
  if (p == 0) throw InvalidInput("modulus must be positive");
  if (tokens.size() < k) {
    throw InvalidInput("sequence of length " + std::to_string(tokens.size()) +
                       " is shorter than k=" + std::to_string(k));
  }
  for (Token x : tokens) {
    if (x >= p) {
      throw InvalidInput("token " + std::to_string(x) + " is not below p=" + std::to_string(p));
    }
  }
  std::uint64_t sum = 0;
  for (std::uint32_t t = 0; t < k; ++t) sum += tokens[t];
  return static_cast<Token>(sum % p);
}

Dataset::Dataset(std::uint32_t p, std::uint32_t T, std::uint32_t k, std::vector<Example> examples)
    : p_(p), T_(T), k_(k), examples_(std::move(examples)) {
  for (const auto& ex : examples_) {
    if (ex.tokens.size() != T_) {
      throw InvalidInput("example has " + std::to_string(ex.tokens.size()) +
                         " tokens, expected " + std::to_string(T_));
    }
    if (oracle_label(ex.tokens, k_, p_) != ex.label) {
      throw InvalidInput("example label disagrees with the oracle");
    }
  }
}

void sequence_from_index(std::uint64_t index, std::uint32_t p, std::span<Token> out) {
  for (std::size_t t = out.size(); t-- > 0;) {
    out[t] = static_cast<Token>(index % p);
    index /= p;
  }
}

namespace {

Example make_example(std::vector<Token> tokens, std::uint32_t k, std::uint32_t p) {
  const Token label = oracle_label(tokens, k, p);
  return Example{std::move(tokens), label};
}

std::mt19937_64 data_rng(const TaskConfig& cfg) {
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    cfg.p, cfg.T, cfg.k, 0xda7au};
  return std::mt19937_64(seq);
}

std::vector<std::uint64_t> sample_distinct(std::uint64_t space, std::size_t count,
                                           std::mt19937_64& rng) {
  std::vector<std::uint64_t> picked;
  picked.reserve(count);
  if (space <= (std::uint64_t{1} << 20) || space <= 4 * static_cast<std::uint64_t>(count)) {
    // Partial Fisher-Yates over the whole index space.
    std::vector<std::uint64_t> pool(space);
    for (std::uint64_t i = 0; i < space; ++i) pool[i] = i;
    for (std::size_t i = 0; i < count; ++i) {
      std::uniform_int_distribution<std::uint64_t> pick(i, space - 1);
      std::swap(pool[i], pool[pick(rng)]);
      picked.push_back(pool[i]);
    }
    return picked;
  }
  std::unordered_set<std::uint64_t> seen;
  std::uniform_int_distribution<std::uint64_t> pick(0, space - 1);
  while (picked.size() < count) {
    const auto idx = pick(rng);
    if (seen.insert(idx).second) picked.push_back(idx);
  }
  return picked;
}

}  // namespace

DatasetSplit generate_dataset(const TaskConfig& cfg) {
  cfg.validate();
  auto rng = data_rng(cfg);
  const std::size_t total = cfg.n_train + cfg.n_test;
  std::vector<Example> all;
  all.reserve(total);

  if (cfg.sampling == Sampling::without_replacement) {
    const auto space = sequence_space_size(cfg.p, cfg.T);
    if (!space) throw CapacityError("sequence space does not fit in 64 bits");
    for (auto idx : sample_distinct(*space, total, rng)) {
      std::vector<Token> tokens(cfg.T);
      sequence_from_index(idx, cfg.p, tokens);
      all.push_back(make_example(std::move(tokens), cfg.k, cfg.p));
    }
  } else {
    std::uniform_int_distribution<Token> tok(0, cfg.p - 1);
    for (std::size_t i = 0; i < total; ++i) {
      std::vector<Token> tokens(cfg.T);
      for (auto& x : tokens) x = tok(rng);
      all.push_back(make_example(std::move(tokens), cfg.k, cfg.p));
    }
  }

  std::vector<Example> test(std::make_move_iterator(all.begin() + static_cast<std::ptrdiff_t>(cfg.n_train)),
                            std::make_move_iterator(all.end()));
  all.resize(cfg.n_train);
  return {Dataset(cfg.p, cfg.T, cfg.k, std::move(all)), Dataset(cfg.p, cfg.T, cfg.k, std::move(test))};
}

SequenceEnumerator::SequenceEnumerator(std::uint32_t p, std::uint32_t T) : p_(p), current_(T, 0) {
  if (p == 0) throw InvalidInput("modulus must be positive");
  const auto space = sequence_space_size(p, T);
  if (!space || *space > kEnumerationCap) {
    throw CapacityError("p^T exceeds the enumeration cap of " + std::to_string(kEnumerationCap));
  }
  count_ = *space;
}

const std::vector<Token>* SequenceEnumerator::next() {
  if (emitted_ == count_) return nullptr;
  if (emitted_ > 0) {
    // Odometer increment, last position fastest.
    for (std::size_t t = current_.size(); t-- > 0;) {
      if (++current_[t] < p_) break;
      current_[t] = 0;
    }
  }
  ++emitted_;
  return &current_;
}

std::vector<std::vector<Token>> enumerate_sequences(std::uint32_t p, std::uint32_t T) {
  SequenceEnumerator it(p, T);
  std::vector<std::vector<Token>> out;
  out.reserve(it.count());
  while (const auto* seq = it.next()) out.push_back(*seq);
  return out;
}

Dataset enumerate_dataset(std::uint32_t p, std::uint32_t T, std::uint32_t k) {
  SequenceEnumerator it(p, T);
  std::vector<Example> out;
  out.reserve(it.count());
  while (const auto* seq = it.next()) out.push_back(make_example(*seq, k, p));
  return Dataset(p, T, k, std::move(out));
}

void write_dataset(std::ostream& os, const Dataset& ds) {
  os << ds.p() << ' ' << ds.T() << ' ' << ds.k() << ' ' << ds.size() << '\n';
  for (const auto& ex : ds) {
    for (Token x : ex.tokens) os << x << ' ';
    os << ex.label << '\n';
  }
}

Dataset read_dataset(std::istream& is) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(is, line)) throw ParseError("missing dataset header", line_no);
  std::istringstream header(line);
  std::uint32_t p = 0, T = 0, k = 0;
  std::size_t n = 0;
  std::string extra;
  if (!(header >> p >> T >> k >> n) || (header >> extra)) {
    throw ParseError("dataset header must be 'p T k n'", line_no);
  }

  std::vector<Example> examples;
  examples.reserve(n);
  while (examples.size() < n) {
    ++line_no;
    if (!std::getline(is, line)) {
      throw ParseError("expected " + std::to_string(n) + " examples, found " +
                           std::to_string(examples.size()), line_no);
    }
    std::istringstream fields(line);
    Example ex;
    ex.tokens.resize(T);
    for (auto& x : ex.tokens) {
      if (!(fields >> x)) throw ParseError("expected " + std::to_string(T) + " tokens", line_no);
    }
    if (!(fields >> ex.label) || (fields >> extra)) {
      throw ParseError("expected a single label after the tokens", line_no);
    }
    try {
      if (oracle_label(ex.tokens, k, p) != ex.label) {
        throw ParseError("label disagrees with the oracle", line_no);
      }
    } catch (const InvalidInput& e) {
      throw ParseError(e.what(), line_no);
    }
    examples.push_back(std::move(ex));
  }
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") != std::string::npos) {
      throw ParseError("trailing content after the declared examples", line_no);
    }
  }
  return Dataset(p, T, k, std::move(examples));
}

void save_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  write_dataset(os, ds);
  if (!os) throw Error("failed writing '" + path + "'");
}

Dataset load_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open '" + path + "'");
  return read_dataset(is);
}

}  // namespace circuit_lab
