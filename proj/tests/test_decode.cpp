// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "ngpu/decode.hpp"

using namespace ngpu;

namespace {

ModelConfig small_config(Variant v, int vocab = 6) {
  ModelConfig cfg;
  cfg.variant = v;
  cfg.layers = 1;
  cfg.width = 2;
  cfg.channels = 3;
  cfg.kw = cfg.kh = 3;
  cfg.vocab_in = cfg.vocab_out = vocab;
  cfg.hidden = 4;
  cfg.att_dim = 3;
  return cfg;
}

ParameterStore fresh_params(const ModelConfig& cfg, uint64_t seed) {
  ParameterStore ps;
  std::mt19937_64 rng(seed);
  build_params(cfg, ps, rng);
  return ps;
}

// Sequence score by teacher forcing; independent of the decode implementations.
double score_sequence(const ModelConfig& cfg, const ParameterStore& ps,
                      const std::vector<int>& input, const std::vector<int>& out) {
  double total = 0.0;
  for (double lp : teacher_forced_log_probs(cfg, ps, input, out)) total += lp;
  return total;
}

}  // namespace

TEST_CASE("beam width 1 reproduces greedy on 100 random models") {
  const Variant variants[] = {Variant::baseline, Variant::markovian, Variant::extended,
                              Variant::attention};
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const ModelConfig cfg = small_config(variants[trial % 4]);
    ParameterStore ps = fresh_params(cfg, 1000 + trial);
    std::uniform_int_distribution<int> len_d(2, 4), tok_d(4, 5);
    std::vector<int> input(len_d(rng));
    for (int& t : input) t = tok_d(rng);
    const int out_len = len_d(rng);

    const DecodeResult g = greedy_decode(cfg, ps, input, out_len);
    const DecodeResult b = beam_decode(cfg, ps, input, out_len, 1);
    CAPTURE(trial);
    REQUIRE(g.tokens == b.tokens);
    CHECK(g.total_log_prob == b.total_log_prob);
    CHECK(g.out_len == b.out_len);
    // decode scores must agree with teacher-forced rescoring
    CHECK(std::abs(g.total_log_prob - score_sequence(cfg, ps, input, g.tokens)) < 1e-9);
  }
}

TEST_CASE("a full-width beam finds the global optimum for short outputs") {
  for (Variant v : {Variant::markovian, Variant::extended, Variant::attention}) {
    CAPTURE(to_string(v));
    const ModelConfig cfg = small_config(v);
    ParameterStore ps = fresh_params(cfg, 77);
    const std::vector<int> input = {4, 5};
    const int L = 2, V = cfg.vocab_out;

    // brute force over all V^L output sequences
    double best = -1e300;
    std::vector<int> best_seq;
    for (int a = 0; a < V; ++a)
      for (int b = 0; b < V; ++b) {
        const std::vector<int> seq = {a, b};
        const double s = score_sequence(cfg, ps, input, seq);
        if (s > best) {
          best = s;
          best_seq = seq;
        }
      }

    const DecodeResult r = beam_decode(cfg, ps, input, L, V);
    CHECK(r.tokens == best_seq);
    CHECK(std::abs(r.total_log_prob - best) < 1e-9);
  }
}

TEST_CASE("greedy with uniform logits emits the lowest id and scores -ln V per step") {
  ModelConfig cfg = small_config(Variant::baseline);
  ParameterStore ps = fresh_params(cfg, 5);
  ps.get("O").fill(0.0);
  const std::vector<int> input = {4, 5, 4};
  const DecodeResult r = greedy_decode(cfg, ps, input, 3);
  CHECK(r.tokens == std::vector<int>{0, 0, 0});
  CHECK(std::abs(r.total_log_prob + 3.0 * std::log(6.0)) < 1e-12);
  CHECK(std::abs(r.per_symbol_log_ppl() - std::log(6.0)) < 1e-12);
  REQUIRE(r.step_log_probs.size() == 3);
  for (double lp : r.step_log_probs) CHECK(std::abs(lp + std::log(6.0)) < 1e-12);
}

TEST_CASE("greedy stops at the EOS symbol when enabled") {
  // zero encoder, one-hot output embeddings: the logits depend only on the
  // previous symbol, so the emissions follow a hand-built transition table
  ModelConfig cfg = small_config(Variant::markovian);
  cfg.channels = cfg.vocab_out;  // room for one-hot rows
  ParameterStore ps = fresh_params(cfg, 6);
  for (const auto& n : ps.names()) ps.get(n).fill(0.0);
  const int m = cfg.channels, V = cfg.vocab_out;
  Tensor& Eo = ps.get("Eo");
  for (int i = 0; i < V; ++i) Eo.at({i, i}) = 1.0;
  Tensor& O = ps.get("O");          // [V, 2m]; right half reads Eo[prev]
  O.at({Reserved::EOS, m + Reserved::GO}) = 5.0;  // GO -> EOS
  O.at({4, m + Reserved::EOS}) = 5.0;             // EOS -> 4
  O.at({4, m + 4}) = 5.0;                         // 4 -> 4

  const DecodeResult stop = greedy_decode(cfg, ps, {4, 4}, 5, Reserved::EOS);
  CHECK(stop.tokens == std::vector<int>{Reserved::EOS});

  const DecodeResult nostop = greedy_decode(cfg, ps, {4, 4}, 5);
  CHECK(nostop.tokens == std::vector<int>{Reserved::EOS, 4, 4, 4, 4});
}

TEST_CASE("length_search matches an exhaustive scan over candidate sizes") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const ModelConfig cfg = small_config(trial % 2 ? Variant::extended : Variant::baseline);
    ParameterStore ps = fresh_params(cfg, 2000 + trial);
    std::uniform_int_distribution<int> len_d(2, 4), tok_d(4, 5);
    std::vector<int> input(len_d(rng));
    for (int& t : input) t = tok_d(rng);

    const int n = static_cast<int>(input.size());
    double best = 1e300;
    int best_len = -1;
    std::vector<int> best_tokens;
    for (int L = n; L <= 2 * n; ++L) {
      const DecodeResult r = greedy_decode(cfg, ps, input, L);
      if (r.per_symbol_log_ppl() < best) {  // strict: ties keep the shorter length
        best = r.per_symbol_log_ppl();
        best_len = L;
        best_tokens = r.tokens;
      }
    }
    const DecodeResult got = length_search(cfg, ps, input);
    CAPTURE(trial);
    CHECK(got.out_len == best_len);
    CHECK(got.tokens == best_tokens);
    CHECK(std::abs(got.per_symbol_log_ppl() - best) < 1e-12);
  }
}

TEST_CASE("per_word_perplexity of the uniform predictor equals the vocabulary size") {
  ModelConfig cfg = small_config(Variant::baseline);
  ParameterStore ps = fresh_params(cfg, 9);
  ps.get("O").fill(0.0);
  std::vector<TaskSample> samples;
  for (int i = 0; i < 5; ++i) samples.push_back({{4, 5, 4}, {5, 4, 5}, {}});
  const PerplexityReport rep = per_word_perplexity(cfg, ps, samples);
  CHECK(rep.symbols == 15);
  CHECK(std::abs(rep.perplexity - 6.0) < 1e-9);
  CHECK(std::abs(rep.log_perplexity - std::log(6.0)) < 1e-9);
}

TEST_CASE("per_word_perplexity agrees with teacher-forced rescoring") {
  ModelConfig cfg = small_config(Variant::markovian);
  ParameterStore ps = fresh_params(cfg, 10);
  std::vector<TaskSample> samples = {{{4, 5}, {5, 4}, {}}, {{5, 5, 4}, {4, 4, 5}, {}}};
  double nll = 0.0;
  long long syms = 0;
  for (const auto& s : samples) {
    nll -= score_sequence(cfg, ps, s.input, s.target);
    syms += static_cast<long long>(s.target.size());
  }
  const PerplexityReport rep = per_word_perplexity(cfg, ps, samples);
  CHECK(rep.symbols == syms);
  CHECK(std::abs(rep.log_perplexity - nll / syms) < 1e-12);
  CHECK(std::abs(rep.perplexity - std::exp(nll / syms)) < 1e-9);
}

TEST_CASE("bleu is 100 on identity and has closed-form values on toy pairs") {
  const std::vector<std::vector<int>> ref = {{4, 5, 4, 5, 4}, {5, 5, 4}};
  CHECK(bleu(ref, ref) == doctest::Approx(100.0).epsilon(1e-12));

  // one candidate, one mismatched tail token:
  // p1=4/5, p2=3/4, p3=2/3, p4=1/2, BP=1
  const std::vector<std::vector<int>> cand1 = {{4, 5, 6, 7, 8}};
  const std::vector<std::vector<int>> ref1 = {{4, 5, 7, 8, 9}};
  // recompute by hand for this pair: unigrams 4,5,7,8 match (4/5), bigram
  // "4 5" and "7 8" match (2/4), trigrams 0/3 -> zero precision, BLEU=0
  CHECK(bleu(cand1, ref1) == doctest::Approx(0.0));

  const std::vector<std::vector<int>> cand2 = {{1, 2, 3, 4, 5}};
  const std::vector<std::vector<int>> ref2 = {{1, 2, 3, 4, 6}};
  const double want2 =
      100.0 * std::pow((4.0 / 5.0) * (3.0 / 4.0) * (2.0 / 3.0) * (1.0 / 2.0), 0.25);
  CHECK(bleu(cand2, ref2) == doctest::Approx(want2).epsilon(1e-6));

  // brevity penalty: perfect prefix, candidate shorter than the reference
  const std::vector<std::vector<int>> cand3 = {{1, 2, 3, 4}};
  const std::vector<std::vector<int>> ref3 = {{1, 2, 3, 4, 5}};
  const double want3 = 100.0 * std::exp(1.0 - 5.0 / 4.0);
  CHECK(bleu(cand3, ref3) == doctest::Approx(want3).epsilon(1e-6));

  // corpus aggregation pools n-gram counts before the geometric mean
  const std::vector<std::vector<int>> candc = {{1, 2, 3, 4, 5}, {1, 2, 3, 4}};
  const std::vector<std::vector<int>> refc = {{1, 2, 3, 4, 6}, {1, 2, 3, 4}};
  // unigrams 8/9, bigrams 6/7, trigrams 4/5, 4-grams 2/3, c=9 > r=9 -> BP=1
  const double wantc =
      100.0 * std::pow((8.0 / 9.0) * (6.0 / 7.0) * (4.0 / 5.0) * (2.0 / 3.0), 0.25);
  CHECK(bleu(candc, refc) == doctest::Approx(wantc).epsilon(1e-6));

  // clipping: repeated candidate tokens only count up to the reference count
  const std::vector<std::vector<int>> cand4 = {{7, 7, 7, 7, 7}};
  const std::vector<std::vector<int>> ref4 = {{7, 7, 9, 9, 9}};
  // p1 = 2/5 after clipping; higher n-grams miss -> BLEU 0, but the clipped
  // unigram count is observable through a 1-gram-only corpus? keep the zero check
  CHECK(bleu(cand4, ref4) == doctest::Approx(0.0));
}

TEST_CASE("length buckets use half-open (lo, hi] boundaries") {
  const std::vector<int> lens = {10, 11, 1, 20, 21, 5};
  const std::vector<double> vals = {1.0, 2.0, 3.0, 4.0, 5.0, 7.0};
  const LengthBucketReport rep = length_bucket_report(lens, vals, 10);
  REQUIRE(rep.counts.size() == 3);
  CHECK(rep.counts[0] == 3);  // lengths 10, 1, 5
  CHECK(rep.counts[1] == 2);  // lengths 11, 20
  CHECK(rep.counts[2] == 1);  // length 21
  CHECK(rep.values[0] == doctest::Approx((1.0 + 3.0 + 7.0) / 3.0));
  CHECK(rep.values[1] == doctest::Approx((2.0 + 4.0) / 2.0));
  CHECK(rep.values[2] == doctest::Approx(5.0));

  const std::string csv = rep.to_csv();
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);
  CHECK(line == "bucket_lo,bucket_hi,value,count");
  std::getline(is, line);
  CHECK(line.rfind("0,10,", 0) == 0);
  std::getline(is, line);
  CHECK(line.rfind("10,20,", 0) == 0);
}
