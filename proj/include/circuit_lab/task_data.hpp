#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace circuit_lab {

using Token = std::uint32_t;

/// One input sequence together with its label (sum of the first k tokens mod p).
struct Example {
  std::vector<Token> tokens;
  Token label = 0;

  bool operator==(const Example&) const = default;
};

enum class Sampling { with_replacement, without_replacement };

std::string to_string(Sampling s);
Sampling sampling_from_string(const std::string& s);

struct TaskConfig {
  std::uint32_t p = 2;      // data modulus
  std::uint32_t p_max = 2;  // vocabulary allocated by the model
  std::uint32_t T = 8;
  std::uint32_t k = 5;
  std::size_t n_train = 2048;
  std::size_t n_test = 2048;
  Sampling sampling = Sampling::without_replacement;
  std::uint64_t seed = 0;

  /// Throws InvalidInput / CapacityError when the invariants do not hold.
  void validate() const;

  bool operator==(const TaskConfig&) const = default;
};

/// An immutable collection of examples sharing (p, T, k).
class Dataset {
public:
  Dataset() = default;
  Dataset(std::uint32_t p, std::uint32_t T, std::uint32_t k, std::vector<Example> examples);

  std::uint32_t p() const noexcept { return p_; }
  std::uint32_t T() const noexcept { return T_; }
  std::uint32_t k() const noexcept { return k_; }
  std::size_t size() const noexcept { return examples_.size(); }
  bool empty() const noexcept { return examples_.empty(); }

  const Example& operator[](std::size_t i) const noexcept { return examples_[i]; }
  std::span<const Example> examples() const noexcept { return examples_; }
  auto begin() const noexcept { return examples_.begin(); }
  auto end() const noexcept { return examples_.end(); }

  bool operator==(const Dataset&) const = default;

private:
  std::uint32_t p_ = 0;
  std::uint32_t T_ = 0;
  std::uint32_t k_ = 0;
  std::vector<Example> examples_;
};

struct DatasetSplit {
  Dataset train;
  Dataset test;
};

/// (x_1 + ... + x_k) mod p. Throws InvalidInput when the sequence is
/// shorter than k or holds a token >= p.
Token oracle_label(std::span<const Token> tokens, std::uint32_t k, std::uint32_t p);

/// Samples train and test sets. Under without_replacement every sequence
/// appears at most once across both splits. Pure function of cfg.
DatasetSplit generate_dataset(const TaskConfig& cfg);

/// Largest p^T the enumerator will walk (4^12).
inline constexpr std::uint64_t kEnumerationCap = std::uint64_t{1} << 24;

/// Number of sequences p^T, or nullopt if it overflows 64 bits.
std::optional<std::uint64_t> sequence_space_size(std::uint32_t p, std::uint32_t T);

/// Writes the base-p digits of index (most significant first) into out.
void sequence_from_index(std::uint64_t index, std::uint32_t p, std::span<Token> out);

/// Lexicographic walk over all p^T sequences.
///
///   SequenceEnumerator it(2, 3);
///   while (auto seq = it.next()) { ... }
class SequenceEnumerator {
public:
  /// Throws CapacityError when p^T exceeds kEnumerationCap.
  SequenceEnumerator(std::uint32_t p, std::uint32_t T);

  std::uint64_t count() const noexcept { return count_; }

  /// Next sequence, or nullptr once exhausted. The pointee is overwritten by
  /// the following call.
  const std::vector<Token>* next();

private:
  std::uint32_t p_;
  std::vector<Token> current_;
  std::uint64_t count_;
  std::uint64_t emitted_ = 0;
};

/// All p^T sequences in lexicographic order.
std::vector<std::vector<Token>> enumerate_sequences(std::uint32_t p, std::uint32_t T);

/// Every sequence of length T over [0,p) labelled by the oracle.
Dataset enumerate_dataset(std::uint32_t p, std::uint32_t T, std::uint32_t k);

/// Text format: header line "p T k n", then one line per example with T
/// tokens followed by the label, all space separated.
void write_dataset(std::ostream& os, const Dataset& ds);
Dataset read_dataset(std::istream& is);
void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

}  // namespace circuit_lab
