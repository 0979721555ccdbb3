// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <map>
#include <random>
#include <set>

#include "ngpu/tasks.hpp"

using namespace ngpu;

namespace {

// Reads a digit token sequence (MSD first) back into an integer.
unsigned long long parse_number(const std::vector<int>& toks, size_t from, size_t to, int base) {
  unsigned long long v = 0;
  for (size_t i = from; i < to; ++i) {
    const int d = toks[i] - Reserved::COUNT;
    REQUIRE(d >= 0);
    REQUIRE(d < base);
    v = v * base + static_cast<unsigned long long>(d);
  }
  return v;
}

}  // namespace

TEST_CASE("task spec parse and round trip") {
  TaskSpec s = TaskSpec::parse("copy:len=12,alphabet=16");
  CHECK(s.name == "copy");
  CHECK(s.length == 12);
  CHECK(s.alphabet == 16);
  CHECK(s.to_string() == "copy:len=12,alphabet=16");
  CHECK(s.vocab_size() == Reserved::COUNT + 16);
  CHECK_FALSE(s.variable_length());
  CHECK(s.max_size() == 12);

  TaskSpec a = TaskSpec::parse("addition:digits=8,base=2");
  CHECK(a.vocab_size() == Reserved::COUNT + 3);  // 0, 1, '+'
  CHECK(a.variable_length());
  CHECK(a.max_size() == 8);

  TaskSpec m = TaskSpec::parse("masked_copy:len=8,period=2");
  CHECK(m.vocab_size() == Reserved::COUNT + 2);
  CHECK(m.to_string() == "masked_copy:len=8,period=2");

  CHECK(TaskSpec::parse("reverse").name == "reverse");  // defaults apply
  CHECK_THROWS_AS(TaskSpec::parse("sorting:len=4"), std::invalid_argument);
  CHECK_THROWS_AS(TaskSpec::parse("copy:len"), std::invalid_argument);
  CHECK_THROWS_AS(TaskSpec::parse("copy:size=4"), std::invalid_argument);
}

TEST_CASE("generators are pure functions of (seed, index)") {
  const TaskSpec specs[] = {
      TaskSpec::parse("copy:len=8,alphabet=16"),
      TaskSpec::parse("reverse:len=8,alphabet=16"),
      TaskSpec::parse("addition:digits=8,base=2"),
      TaskSpec::parse("masked_copy:len=8,period=2"),
  };
  for (const auto& spec : specs) {
    for (uint64_t i = 0; i < 10; ++i) {
      const TaskSample x = spec.sample(5, i, 8);
      const TaskSample y = spec.sample(5, i, 8);
      CHECK(x.input == y.input);
      CHECK(x.target == y.target);
      CHECK(x.latent == y.latent);
    }
    CHECK(spec.sample(5, 0, 8).input != spec.sample(6, 0, 8).input);
  }
}

TEST_CASE("copy targets equal inputs; reverse targets are reversed inputs") {
  for (uint64_t i = 0; i < 50; ++i) {
    const TaskSample c = gen_copy(8, 16, 1, i);
    CHECK(c.target == c.input);
    for (int tok : c.input) {
      CHECK(tok >= Reserved::COUNT);
      CHECK(tok < Reserved::COUNT + 16);
    }
    const TaskSample r = gen_reverse(8, 16, 1, i);
    CHECK(r.input == c.input);  // same underlying draw
    std::vector<int> rev(r.input.rbegin(), r.input.rend());
    CHECK(r.target == rev);
  }
}

TEST_CASE("addition samples satisfy the integer oracle") {
  for (int base : {2, 10}) {
    const int plus = Reserved::COUNT + base;
    for (uint64_t i = 0; i < 200; ++i) {
      const TaskSample s = gen_addition(8, base, 3, i);
      // input layout: 8 digits, '+', 8 digits
      REQUIRE(s.input.size() == 17);
      CHECK(s.input[8] == plus);
      const unsigned long long a = parse_number(s.input, 0, 8, base);
      const unsigned long long b = parse_number(s.input, 9, 17, base);
      const unsigned long long sum = parse_number(s.target, 0, s.target.size(), base);
      CHECK(a + b == sum);
      // most-significant digit first: no leading zero unless the sum is zero
      if (s.target.size() > 1) CHECK(s.target[0] != Reserved::COUNT);
    }
  }
  CHECK_THROWS_AS(gen_addition(4, 3, 1, 1), std::invalid_argument);
}

TEST_CASE("the paper's decimal example is representable") {
  // 1250 + 2315 = 3565 in the task encoding
  std::vector<int> input;
  for (int d : {1, 2, 5, 0}) input.push_back(Reserved::COUNT + d);
  input.push_back(Reserved::COUNT + 10);  // '+'
  for (int d : {2, 3, 1, 5}) input.push_back(Reserved::COUNT + d);
  const unsigned long long a = parse_number(input, 0, 4, 10);
  const unsigned long long b = parse_number(input, 5, 9, 10);
  CHECK(a == 1250);
  CHECK(b == 2315);
  CHECK(a + b == 3565);
}

TEST_CASE("masked copy applies a periodic mask consistently") {
  for (int period : {1, 2}) {
    for (uint64_t i = 0; i < 100; ++i) {
      const TaskSample s = gen_masked_copy({period, 8}, 7, i);
      REQUIRE(s.latent.size() == static_cast<size_t>(period));
      REQUIRE(s.input.size() == 8);
      REQUIRE(s.target.size() == 8);
      for (int k = 0; k < 8; ++k) {
        const int in = s.input[k] - Reserved::COUNT;
        const int out = s.target[k] - Reserved::COUNT;
        CHECK((in == 0 || in == 1));
        CHECK(out == (in ^ s.latent[k % period]));
      }
    }
  }
  // both mask values occur
  std::set<int> seen;
  for (uint64_t i = 0; i < 50; ++i) seen.insert(gen_masked_copy({1, 4}, 7, i).latent[0]);
  CHECK(seen.size() == 2);
  CHECK_THROWS_AS(gen_masked_copy({3, 8}, 1, 1), std::invalid_argument);
}

TEST_CASE("analytic optimal log-perplexities") {
  const double ln2 = std::log(2.0);
  // period 1: the mask bit is revealed by the first (input, output) pair, so
  // a model with full output history pays ln2 once over n symbols; a model
  // that cannot see its own outputs pays ln2 every symbol.
  for (int n : {1, 4, 8}) {
    CHECK(optimal_log_perplexity(1, ModelClass::independent, n) == doctest::Approx(ln2));
    CHECK(optimal_log_perplexity(1, ModelClass::markov1, n) == doctest::Approx(ln2 / n));
    CHECK(optimal_log_perplexity(1, ModelClass::full, n) == doctest::Approx(ln2 / n));
  }
  // period 2: the previous output alone is about the other mask phase, so a
  // Markov-1 output model is as blind as an independent one; full history
  // pays 2·ln2 over n symbols.
  for (int n : {2, 4, 8}) {
    CHECK(optimal_log_perplexity(2, ModelClass::independent, n) == doctest::Approx(ln2));
    CHECK(optimal_log_perplexity(2, ModelClass::markov1, n) == doctest::Approx(ln2));
    CHECK(optimal_log_perplexity(2, ModelClass::full, n) == doctest::Approx(2.0 * ln2 / n));
  }
  CHECK(optimal_log_perplexity(2, ModelClass::full, 1) == doctest::Approx(ln2));
  CHECK_THROWS_AS(optimal_log_perplexity(3, ModelClass::full, 8), std::invalid_argument);
  CHECK_THROWS_AS(optimal_log_perplexity(1, ModelClass::full, 0), std::invalid_argument);
}

TEST_CASE("a revealed-mask predictor attains the full-history oracle") {
  // Simulate the ideal full-history predictor on real samples: position 0 is
  // a fair coin, afterwards the mask is input[0] xor target[0] and every
  // prediction must be exact. Its NLL is then ln2/n by construction, which
  // is only the oracle value if the mask really is uniform and consistent.
  const int n = 4, N = 4000;
  double nll = 0.0;
  long long count = 0, mask_ones = 0;
  for (uint64_t i = 0; i < N; ++i) {
    const TaskSample s = gen_masked_copy({1, n}, 13, i);
    const int mask = (s.input[0] ^ s.target[0]) & 1;
    mask_ones += mask;
    nll += std::log(2.0);  // position 0: mask unknown
    for (int k = 1; k < n; ++k) {
      const int predicted = Reserved::COUNT + (((s.input[k] - Reserved::COUNT) ^ mask) & 1);
      REQUIRE(predicted == s.target[k]);  // certain, so zero NLL
    }
    count += n;
  }
  CHECK(nll / count ==
        doctest::Approx(optimal_log_perplexity(1, ModelClass::full, n)).epsilon(1e-12));
  // the latent coin is close to fair
  CHECK(std::abs(static_cast<double>(mask_ones) / N - 0.5) < 0.03);
}

TEST_CASE("vocabulary reserves pad, go, eos, space") {
  Vocabulary v;
  CHECK(v.size() == Reserved::COUNT);
  CHECK(v.token(Reserved::PAD) == "<pad>");
  CHECK(v.token(Reserved::GO) == "<go>");
  CHECK(v.token(Reserved::EOS) == "<eos>");
  CHECK(v.token(Reserved::SPACE) == "<space>");
  const int id = v.add("hello");
  CHECK(id == Reserved::COUNT);
  CHECK(v.add("hello") == id);  // idempotent
  CHECK(v.is_word(id));
  CHECK_FALSE(v.is_char(id));
  CHECK_THROWS_AS(v.token(99), std::out_of_range);
}

TEST_CASE("build_vocab keeps characters and the most frequent words") {
  const std::vector<std::string> corpus = {"the cat sat", "the cat ran", "the dog sat"};
  Vocabulary v = build_vocab(corpus, Reserved::COUNT + 32);
  // every character of the corpus is present
  for (char c : std::string("thecasrndog")) CHECK(v.id_of(std::string(1, c)).has_value());
  CHECK(v.id_of("the").has_value());
  CHECK(v.id_of("cat").has_value());
  // frequency order: "the" (3) before "cat" (2) before "dog"/"ran" (1)
  CHECK(*v.id_of("the") < *v.id_of("cat"));
  CHECK(*v.id_of("cat") < *v.id_of("dog"));
  // ties break lexicographically
  CHECK(*v.id_of("dog") < *v.id_of("ran"));

  // a tight cap drops the rarest words but never characters
  Vocabulary small = build_vocab(corpus, Reserved::COUNT + 12);
  CHECK(small.id_of("t").has_value());
  CHECK_FALSE(small.id_of("ran").has_value());
}

TEST_CASE("encode spells out OOV words letter by letter and round-trips") {
  const std::vector<std::string> corpus = {"the cat sat on the mat"};
  Vocabulary v = build_vocab(corpus, Reserved::COUNT + 64);
  const std::string line = "the cat sat";
  const std::vector<int> ids = encode_text(v, line);
  CHECK(decode_text(v, ids) == line);

  // an OOV word made of in-vocab characters is spelled out
  const std::string oov = "the tams sat";
  const std::vector<int> ids2 = encode_text(v, oov);
  CHECK(decode_text(v, ids2) == oov);
  bool has_space = false;
  for (int id : ids2) has_space = has_space || id == Reserved::SPACE;
  CHECK(has_space);

  CHECK_THROWS_AS(encode_text(v, "zebra"), std::invalid_argument);  // 'z','b','r' unknown
}

TEST_CASE("1000 generated sentences round-trip exactly") {
  const std::vector<std::string> words = {"the",  "cat",  "dog", "house", "ran",  "sat",
                                          "on",   "a",    "big", "small", "tree", "bird",
                                          "flew", "over", "and", "then",  "fast", "slow"};
  // build the vocabulary from a corpus that contains every character but
  // caps out before every word, forcing some spell-outs
  std::vector<std::string> corpus;
  for (const auto& w : words) corpus.push_back(w);
  Vocabulary v = build_vocab(corpus, Reserved::COUNT + 30);

  std::mt19937_64 rng(17);
  for (int s = 0; s < 1000; ++s) {
    std::string line;
    const int len = 3 + static_cast<int>(rng() % 8);
    for (int i = 0; i < len; ++i) {
      if (i) line += ' ';
      line += words[rng() % words.size()];
    }
    const std::vector<int> ids = encode_text(v, line);
    CHECK(decode_text(v, ids) == line);
  }
}

TEST_CASE("dataset files round-trip and validate") {
  const std::string path = "test_tasks_dataset.tmp";
  TaskSpec spec = TaskSpec::parse("addition:digits=4,base=10");
  std::vector<TaskSample> samples;
  for (uint64_t i = 0; i < 20; ++i) samples.push_back(spec.sample(9, i, 4));
  write_dataset(path, "hdr text", samples);
  std::string header;
  const std::vector<TaskSample> back = read_dataset(path, &header);
  CHECK(header == "hdr text");
  REQUIRE(back.size() == samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    CHECK(back[i].input == samples[i].input);
    CHECK(back[i].target == samples[i].target);
  }

  write_dataset(path, "empty", {});
  CHECK(read_dataset(path).empty());

  // corrupt: no header
  {
    std::FILE* f = std::fopen(path.c_str(), "w");
    std::fputs("1 2\t3 4\n", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(read_dataset(path), IntegrityError);
  // corrupt: missing tab
  {
    std::FILE* f = std::fopen(path.c_str(), "w");
    std::fputs("# h\n1 2 3 4\n", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(read_dataset(path), IntegrityError);
  std::remove(path.c_str());
}

TEST_CASE("splitmix64 avalanche: single-bit input flips change many output bits") {
  // regression pin plus a weak avalanche property
  CHECK(splitmix64(0) == splitmix64(0));
  CHECK(splitmix64(1) != splitmix64(0));
  int total = 0;
  for (int b = 0; b < 64; ++b) {
    const uint64_t d = splitmix64(0x1234) ^ splitmix64(0x1234ULL ^ (1ULL << b));
    total += __builtin_popcountll(d);
  }
  CHECK(total > 64 * 20);  // far more than trivial mixing
}
