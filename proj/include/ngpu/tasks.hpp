// SPDX-License-Identifier: Apache-2.0
#ifndef NGPU_TASKS_HPP
#define NGPU_TASKS_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ngpu/tensor.hpp"

namespace ngpu {

// Reserved token ids shared by every task vocabulary.
struct Reserved {
  static constexpr int PAD = 0;
  static constexpr int GO = 1;
  static constexpr int EOS = 2;
  static constexpr int SPACE = 3;
  static constexpr int COUNT = 4;
};

struct TaskSample {
  std::vector<int> input;
  std::vector<int> target;
  std::vector<int> latent;  // hidden random choice (e.g. the mask), for oracles
};

// Parsed task description, e.g. "copy:len=8,alphabet=16",
// "addition:digits=8,base=2", "masked_copy:len=8,period=1".
struct TaskSpec {
  std::string name;
  int length = 8;
  int alphabet = 2;
  int period = 1;
  int digits = 8;
  int base = 2;

  static TaskSpec parse(const std::string& text);
  std::string to_string() const;

  int vocab_size() const;
  bool variable_length() const;  // variable-length tasks carry an EOS in the target
  // Deterministic sample for (seed, index) at the given instance size
  // (sequence length or digit count, depending on the task).
  TaskSample sample(uint64_t seed, uint64_t index, int size) const;
  int max_size() const;  // the configured length/digits cap
};

TaskSample gen_copy(int len, int alphabet, uint64_t seed, uint64_t index);
TaskSample gen_reverse(int len, int alphabet, uint64_t seed, uint64_t index);
// Operands have exactly `digits` digits drawn uniformly (leading zeros
// allowed); tokens are most-significant-digit first with a '+' separator.
TaskSample gen_addition(int digits, int base, uint64_t seed, uint64_t index);

struct MaskedCopySpec {
  int period = 1;  // 1 or 2
  int length = 8;
};
TaskSample gen_masked_copy(const MaskedCopySpec& spec, uint64_t seed, uint64_t index);

enum class ModelClass { independent, markov1, full };

// Analytic per-symbol optimal log-perplexity on the masked-copy family.
double optimal_log_perplexity(int period, ModelClass cls, int n);

// --- spell-out vocabulary ---

class Vocabulary {
 public:
  Vocabulary();  // reserved symbols only

  int add(const std::string& tok);  // idempotent
  std::optional<int> id_of(const std::string& tok) const;
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(toks_.size()); }
  bool is_word(int id) const;  // multi-character entry
  bool is_char(int id) const;

 private:
  std::vector<std::string> toks_;
  std::unordered_map<std::string, int> index_;
};

// Reserved symbols + every character of the corpus + the most frequent words
// up to size_cap total entries.
Vocabulary build_vocab(const std::vector<std::string>& corpus_lines, int size_cap);

// In-vocab words map to single ids; out-of-vocab words are spelled out
// letter-by-letter with a SPACE token at each word boundary adjacent to the
// spelled-out word.
std::vector<int> encode_text(const Vocabulary& v, const std::string& line);
std::string decode_text(const Vocabulary& v, const std::vector<int>& ids);

// --- dataset files: header line, then "input<TAB>target" with ids space-separated ---

void write_dataset(const std::string& path, const std::string& header,
                   const std::vector<TaskSample>& samples);
std::vector<TaskSample> read_dataset(const std::string& path, std::string* header_out = nullptr);

uint64_t splitmix64(uint64_t x);

}  // namespace ngpu

#endif  // NGPU_TASKS_HPP
