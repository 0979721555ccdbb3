// SPDX-License-Identifier: Apache-2.0
#include "ngpu/decode.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace ngpu {

double DecodeResult::per_symbol_log_ppl() const {
  if (tokens.empty()) return 0.0;
  return -total_log_prob / static_cast<double>(tokens.size());
}

DecodeResult greedy_decode(const ModelConfig& cfg, const ParameterStore& params,
                           const std::vector<int>& input, int out_len, int eos_id) {
  auto dec = make_decoder(cfg, params, input, out_len);
  DecodeResult res;
  res.out_len = out_len;
  for (int k = 0; k < out_len; ++k) {
    const std::vector<double> lp = dec->next_log_probs();
    int best = 0;
    for (size_t i = 1; i < lp.size(); ++i)
      if (lp[i] > lp[best]) best = static_cast<int>(i);  // ties keep the lowest id
    res.tokens.push_back(best);
    res.step_log_probs.push_back(lp[best]);
    res.total_log_prob += lp[best];
    if (best == eos_id) break;
    dec->feed(best);
  }
  return res;
}

namespace {
struct Hypothesis {
  std::vector<int> tokens;
  std::vector<double> step_log_probs;
  double score = 0.0;
  std::unique_ptr<StepDecoder> dec;  // null once finished
  bool finished = false;
};
}  // namespace

DecodeResult beam_decode(const ModelConfig& cfg, const ParameterStore& params,
                         const std::vector<int>& input, int out_len, int beam, int eos_id) {
  if (beam < 1) throw std::invalid_argument("beam_decode: beam must be >= 1");
  std::vector<Hypothesis> live(1);
  live[0].dec = make_decoder(cfg, params, input, out_len);
  std::vector<Hypothesis> finished;

  for (int k = 0; k < out_len && !live.empty(); ++k) {
    // (score, parent, symbol, log_prob) candidates from every live hypothesis
    struct Cand {
      double score;
      size_t parent;
      int symbol;
      double lp;
    };
    std::vector<Cand> cands;
    for (size_t h = 0; h < live.size(); ++h) {
      const std::vector<double> lp = live[h].dec->next_log_probs();
      for (size_t v = 0; v < lp.size(); ++v)
        cands.push_back({live[h].score + lp[v], h, static_cast<int>(v), lp[v]});
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      return a.score > b.score;  // stable: ties keep parent order, then lower symbol id
    });
    const size_t keep = std::min<size_t>(beam, cands.size());
    std::vector<Hypothesis> next;
    for (size_t i = 0; i < keep; ++i) {
      const Cand& c = cands[i];
      Hypothesis h;
      h.tokens = live[c.parent].tokens;
      h.step_log_probs = live[c.parent].step_log_probs;
      h.tokens.push_back(c.symbol);
      h.step_log_probs.push_back(c.lp);
      h.score = c.score;
      if (c.symbol == eos_id || k + 1 == out_len) {
        h.finished = true;
        finished.push_back(std::move(h));
      } else {
        h.dec = live[c.parent].dec->clone();
        h.dec->feed(c.symbol);
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
  }
  for (auto& h : live) finished.push_back(std::move(h));

  const Hypothesis* best = nullptr;
  for (const auto& h : finished)
    if (!best || h.score > best->score) best = &h;
  if (!best) throw std::runtime_error("beam_decode: no hypothesis produced");
  DecodeResult res;
  res.tokens = best->tokens;
  res.step_log_probs = best->step_log_probs;
  res.total_log_prob = best->score;
  res.out_len = out_len;
  return res;
}

DecodeResult length_search(const ModelConfig& cfg, const ParameterStore& params,
                           const std::vector<int>& input, int eos_id) {
  if (input.empty()) throw std::invalid_argument("length_search: empty input");
  const int n = static_cast<int>(input.size());
  DecodeResult best;
  bool have = false;
  for (int len = n; len <= 2 * n; ++len) {
    DecodeResult r = greedy_decode(cfg, params, input, len, eos_id);
    if (!have || r.per_symbol_log_ppl() < best.per_symbol_log_ppl()) {
      best = std::move(r);
      have = true;
    }
  }
  return best;
}

PerplexityReport per_word_perplexity(const ModelConfig& cfg, const ParameterStore& params,
                                     const std::vector<TaskSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("per_word_perplexity: empty sample set");
  double nll = 0.0;
  long long count = 0;
  for (const auto& s : samples) {
    for (double lp : teacher_forced_log_probs(cfg, params, s.input, s.target)) {
      nll -= lp;
      ++count;
    }
  }
  PerplexityReport rep;
  rep.symbols = count;
  rep.log_perplexity = nll / static_cast<double>(count);
  rep.perplexity = std::exp(rep.log_perplexity);
  return rep;
}

double bleu(const std::vector<std::vector<int>>& candidates,
            const std::vector<std::vector<int>>& references) {
  if (candidates.empty() || candidates.size() != references.size())
    throw std::invalid_argument("bleu: corpus size mismatch or empty corpus");
  constexpr int kMaxOrder = 4;
  long long matches[kMaxOrder] = {0};
  long long totals[kMaxOrder] = {0};
  long long cand_len = 0, ref_len = 0;

  using Ngram = std::vector<int>;
  for (size_t s = 0; s < candidates.size(); ++s) {
    const auto& cand = candidates[s];
    const auto& ref = references[s];
    if (cand.empty()) throw std::invalid_argument("bleu: empty candidate");
    cand_len += static_cast<long long>(cand.size());
    ref_len += static_cast<long long>(ref.size());
    for (int order = 1; order <= kMaxOrder; ++order) {
      std::map<Ngram, long long> ref_counts;
      for (size_t i = 0; i + order <= ref.size(); ++i)
        ++ref_counts[Ngram(ref.begin() + i, ref.begin() + i + order)];
      std::map<Ngram, long long> cand_counts;
      for (size_t i = 0; i + order <= cand.size(); ++i)
        ++cand_counts[Ngram(cand.begin() + i, cand.begin() + i + order)];
      for (const auto& [gram, cnt] : cand_counts) {
        totals[order - 1] += cnt;
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matches[order - 1] += std::min(cnt, it->second);
      }
    }
  }

  double log_prec_sum = 0.0;
  for (int o = 0; o < kMaxOrder; ++o) {
    if (totals[o] == 0 || matches[o] == 0) return 0.0;
    log_prec_sum += std::log(static_cast<double>(matches[o]) / totals[o]);
  }
  double bp = 1.0;
  if (cand_len < ref_len)
    bp = std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
  return 100.0 * bp * std::exp(log_prec_sum / kMaxOrder);
}

LengthBucketReport length_bucket_report(const std::vector<int>& source_lengths,
                                        const std::vector<double>& metric_values,
                                        int bucket_width) {
  if (source_lengths.size() != metric_values.size())
    throw std::invalid_argument("length_bucket_report: size mismatch");
  if (bucket_width < 1) throw std::invalid_argument("length_bucket_report: bad bucket width");
  LengthBucketReport rep;
  rep.bucket_width = bucket_width;
  int max_len = 0;
  for (int l : source_lengths) max_len = std::max(max_len, l);
  const int buckets = std::max(1, (max_len + bucket_width - 1) / bucket_width);
  rep.values.assign(buckets, 0.0);
  rep.counts.assign(buckets, 0);
  for (size_t i = 0; i < source_lengths.size(); ++i) {
    // half-open (lo, hi]: length==hi lands in the bucket ending at hi
    const int b = std::max(0, (source_lengths[i] - 1) / bucket_width);
    rep.values[b] += metric_values[i];
    ++rep.counts[b];
  }
  for (int b = 0; b < buckets; ++b)
    if (rep.counts[b] > 0) rep.values[b] /= static_cast<double>(rep.counts[b]);
  return rep;
}

std::string LengthBucketReport::to_csv() const {
  std::ostringstream os;
  os << "bucket_lo,bucket_hi,value,count\n";
  for (size_t b = 0; b < values.size(); ++b)
    os << b * bucket_width << ',' << (b + 1) * bucket_width << ',' << values[b] << ','
       << counts[b] << '\n';
  return os.str();
}

}  // namespace ngpu
