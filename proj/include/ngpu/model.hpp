// SPDX-License-Identifier: Apache-2.0
#ifndef NGPU_MODEL_HPP
#define NGPU_MODEL_HPP

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ngpu/nn.hpp"
#include "ngpu/tasks.hpp"

namespace ngpu {

enum class Variant { baseline, markovian, extended, attention };

Variant variant_from_string(const std::string& s);
std::string to_string(Variant v);

struct ModelConfig {
  Variant variant = Variant::baseline;
  int layers = 2;    // l
  int width = 4;     // w
  int channels = 32; // m
  int kw = 3, kh = 3;
  int vocab_in = 8;
  int vocab_out = 8;
  int hidden = 32;   // attention baseline GRU width
  int att_dim = 32;  // attention scoring width
  double dropout = 0.0;

  void validate() const;
  std::string fingerprint_text() const;
  uint64_t fingerprint() const;  // FNV-1a of fingerprint_text
};

// Fills the store with freshly initialized trainables for the variant.
void build_params(const ModelConfig& cfg, ParameterStore& params, std::mt19937_64& rng);

// Closed-form trainable count implied by the configured shapes.
long long expected_param_count(const ModelConfig& cfg);

// One leaf per parameter, in store order.
std::map<std::string, Tape::Id> make_leaves(Tape& tape, const ParameterStore& params);

struct ForwardResult {
  Tape::Id loss;                 // mean NLL over the first |target| positions
  std::vector<Tape::Id> logits;  // one [V_out] vector per target position
};

// Teacher-forced training graph. mem_len is the active-memory size n and
// must cover both the input and the target; it is ignored by the attention
// variant. Dropout draws from `drop_rng` when the rate is nonzero.
ForwardResult forward_loss(Tape& tape, const ModelConfig& cfg,
                           const std::map<std::string, Tape::Id>& vars,
                           const std::vector<int>& input, const std::vector<int>& target,
                           int mem_len, std::mt19937_64* drop_rng = nullptr,
                           bool training = true);

// Encoder-only plain forward: s_n after mem_len passes of the CGRU stack.
Tensor encode_plain(const ModelConfig& cfg, const ParameterStore& params,
                    const std::vector<int>& input, int mem_len);

/// Incremental inference interface shared by greedy decoding, beam search
/// and teacher-forced scoring. next_log_probs() gives the distribution for
/// the current output position; feed() advances with the chosen (or forced)
/// symbol.
class StepDecoder {
 public:
  virtual ~StepDecoder() = default;
  virtual std::unique_ptr<StepDecoder> clone() const = 0;
  virtual std::vector<double> next_log_probs() = 0;
  virtual void feed(int symbol) = 0;
};

std::unique_ptr<StepDecoder> make_decoder(const ModelConfig& cfg, const ParameterStore& params,
                                          const std::vector<int>& input, int out_len);

// log p(target_k) for every k under teacher forcing; decoder-based, shares
// no code with the tape loss.
std::vector<double> teacher_forced_log_probs(const ModelConfig& cfg, const ParameterStore& params,
                                             const std::vector<int>& input,
                                             const std::vector<int>& target);

}  // namespace ngpu

#endif  // NGPU_MODEL_HPP
