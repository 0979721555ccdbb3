// SPDX-License-Identifier: Apache-2.0
#ifndef NGPU_DECODE_HPP
#define NGPU_DECODE_HPP

#include "ngpu/model.hpp"

namespace ngpu {

struct DecodeResult {
  std::vector<int> tokens;
  double total_log_prob = 0.0;
  int out_len = 0;  // the memory/output size the decode ran at
  std::vector<double> step_log_probs;

  // Mean negative log-probability per emitted symbol.
  double per_symbol_log_ppl() const;
};

// Emits argmax symbols (ties broken toward the lowest id); the emitted
// symbol, not the ground truth, feeds the decoder state. Stops at eos_id
// (included in the output) or after out_len symbols. eos_id < 0 disables
// the stop.
DecodeResult greedy_decode(const ModelConfig& cfg, const ParameterStore& params,
                           const std::vector<int>& input, int out_len, int eos_id = -1);

// Beam search over total log-probability, no length normalization.
// beam == 1 is exactly greedy_decode.
DecodeResult beam_decode(const ModelConfig& cfg, const ParameterStore& params,
                         const std::vector<int>& input, int out_len, int beam, int eos_id = -1);

// Greedy-decodes every output size in [|input|, 2|input|] and keeps the
// decode with the smallest per-symbol log-perplexity; ties go to the
// shorter length.
DecodeResult length_search(const ModelConfig& cfg, const ParameterStore& params,
                           const std::vector<int>& input, int eos_id = -1);

struct PerplexityReport {
  double perplexity = 0.0;
  double log_perplexity = 0.0;
  long long symbols = 0;
};

// Teacher-forced; never invokes a decoder. Samples' targets are scored as
// given (the caller appends EOS for variable-length tasks).
PerplexityReport per_word_perplexity(const ModelConfig& cfg, const ParameterStore& params,
                                     const std::vector<TaskSample>& samples);

// Corpus BLEU-4: geometric mean of modified 1..4-gram precisions times the
// brevity penalty, no smoothing. Returns a score in [0, 100].
double bleu(const std::vector<std::vector<int>>& candidates,
            const std::vector<std::vector<int>>& references);

struct LengthBucketReport {
  int bucket_width = 10;
  std::vector<double> values;      // one per bucket (0,10], (10,20], ...
  std::vector<long long> counts;
  std::string to_csv() const;      // bucket_lo,bucket_hi,value,count
};

// Buckets samples by source length with half-open (lo, hi] buckets and
// averages `metric` per bucket.
LengthBucketReport length_bucket_report(
    const std::vector<int>& source_lengths, const std::vector<double>& metric_values,
    int bucket_width = 10);

}  // namespace ngpu

#endif  // NGPU_DECODE_HPP
