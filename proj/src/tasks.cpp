// SPDX-License-Identifier: Apache-2.0
#include "ngpu/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace ngpu {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

namespace {
std::mt19937_64 sample_rng(uint64_t seed, uint64_t index) {
  return std::mt19937_64(splitmix64(seed ^ splitmix64(index + 0x51ed270b)));
}
}  // namespace

TaskSample gen_copy(int len, int alphabet, uint64_t seed, uint64_t index) {
  if (len < 1 || alphabet < 1) throw std::invalid_argument("gen_copy: bad spec");
  auto rng = sample_rng(seed, index);
  std::uniform_int_distribution<int> sym(0, alphabet - 1);
  TaskSample s;
  s.input.reserve(len);
  for (int i = 0; i < len; ++i) s.input.push_back(Reserved::COUNT + sym(rng));
  s.target = s.input;
  return s;
}

TaskSample gen_reverse(int len, int alphabet, uint64_t seed, uint64_t index) {
  TaskSample s = gen_copy(len, alphabet, seed, index);
  s.target.assign(s.input.rbegin(), s.input.rend());
  return s;
}

TaskSample gen_addition(int digits, int base, uint64_t seed, uint64_t index) {
  if (digits < 1 || (base != 2 && base != 10)) throw std::invalid_argument("gen_addition: bad spec");
  auto rng = sample_rng(seed, index);
  std::uniform_int_distribution<int> dig(0, base - 1);
  std::vector<int> a(digits), b(digits);
  unsigned long long va = 0, vb = 0;
  for (int i = 0; i < digits; ++i) {
    a[i] = dig(rng);
    b[i] = dig(rng);
    va = va * base + a[i];
    vb = vb * base + b[i];
  }
  unsigned long long sum = va + vb;
  std::vector<int> out;
  if (sum == 0) out.push_back(0);
  while (sum > 0) {
    out.push_back(static_cast<int>(sum % base));
    sum /= base;
  }
  std::reverse(out.begin(), out.end());
  TaskSample s;
  const int plus = Reserved::COUNT + base;
  for (int d : a) s.input.push_back(Reserved::COUNT + d);
  s.input.push_back(plus);
  for (int d : b) s.input.push_back(Reserved::COUNT + d);
  for (int d : out) s.target.push_back(Reserved::COUNT + d);
  return s;
}

TaskSample gen_masked_copy(const MaskedCopySpec& spec, uint64_t seed, uint64_t index) {
  if (spec.period != 1 && spec.period != 2) throw std::invalid_argument("gen_masked_copy: period must be 1 or 2");
  if (spec.length < 1) throw std::invalid_argument("gen_masked_copy: bad length");
  auto rng = sample_rng(seed, index);
  std::uniform_int_distribution<int> bit(0, 1);
  TaskSample s;
  s.latent.resize(spec.period);
  for (int i = 0; i < spec.period; ++i) s.latent[i] = bit(rng);
  for (int k = 0; k < spec.length; ++k) {
    const int in = bit(rng);
    s.input.push_back(Reserved::COUNT + in);
    s.target.push_back(Reserved::COUNT + (in ^ s.latent[k % spec.period]));
  }
  return s;
}

double optimal_log_perplexity(int period, ModelClass cls, int n) {
  if (n < 1) throw std::invalid_argument("optimal_log_perplexity: n must be positive");
  const double ln2 = std::log(2.0);
  if (period == 1) {
    switch (cls) {
      case ModelClass::independent: return ln2;
      case ModelClass::markov1: return ln2 / n;
      case ModelClass::full: return ln2 / n;
    }
  } else if (period == 2) {
    switch (cls) {
      case ModelClass::independent: return ln2;
      case ModelClass::markov1: return ln2;
      case ModelClass::full: return std::min(2, n) * ln2 / n;
    }
  }
  throw std::invalid_argument("optimal_log_perplexity: unsupported task period");
}

TaskSpec TaskSpec::parse(const std::string& text) {
  TaskSpec spec;
  const auto colon = text.find(':');
  spec.name = text.substr(0, colon);
  if (spec.name != "copy" && spec.name != "reverse" && spec.name != "addition" &&
      spec.name != "masked_copy")
    throw std::invalid_argument("unknown task '" + spec.name + "'");
  if (colon != std::string::npos) {
    std::stringstream ss(text.substr(colon + 1));
    std::string kv;
    while (std::getline(ss, kv, ',')) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw std::invalid_argument("bad task option '" + kv + "'");
      const std::string key = kv.substr(0, eq);
      const int val = std::stoi(kv.substr(eq + 1));
      if (key == "len") spec.length = val;
      else if (key == "alphabet") spec.alphabet = val;
      else if (key == "period") spec.period = val;
      else if (key == "digits") spec.digits = val;
      else if (key == "base") spec.base = val;
      else throw std::invalid_argument("unknown task option '" + key + "'");
    }
  }
  return spec;
}

std::string TaskSpec::to_string() const {
  std::ostringstream os;
  os << name << ':';
  if (name == "copy" || name == "reverse")
    os << "len=" << length << ",alphabet=" << alphabet;
  else if (name == "addition")
    os << "digits=" << digits << ",base=" << base;
  else
    os << "len=" << length << ",period=" << period;
  return os.str();
}

int TaskSpec::vocab_size() const {
  if (name == "copy" || name == "reverse") return Reserved::COUNT + alphabet;
  if (name == "addition") return Reserved::COUNT + base + 1;
  return Reserved::COUNT + 2;
}

bool TaskSpec::variable_length() const { return name == "addition"; }

int TaskSpec::max_size() const { return name == "addition" ? digits : length; }

TaskSample TaskSpec::sample(uint64_t seed, uint64_t index, int size) const {
  if (name == "copy") return gen_copy(size, alphabet, seed, index);
  if (name == "reverse") return gen_reverse(size, alphabet, seed, index);
  if (name == "addition") return gen_addition(size, base, seed, index);
  return gen_masked_copy({period, size}, seed, index);
}

Vocabulary::Vocabulary() {
  add("<pad>");
  add("<go>");
  add("<eos>");
  add("<space>");
}

int Vocabulary::add(const std::string& tok) {
  auto it = index_.find(tok);
  if (it != index_.end()) return it->second;
  toks_.push_back(tok);
  index_[tok] = static_cast<int>(toks_.size()) - 1;
  return index_[tok];
}

std::optional<int> Vocabulary::id_of(const std::string& tok) const {
  auto it = index_.find(tok);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("Vocabulary: id out of range");
  return toks_[id];
}

bool Vocabulary::is_word(int id) const { return id >= Reserved::COUNT && token(id).size() > 1; }
bool Vocabulary::is_char(int id) const { return id >= Reserved::COUNT && token(id).size() == 1; }

Vocabulary build_vocab(const std::vector<std::string>& corpus_lines, int size_cap) {
  Vocabulary v;
  std::vector<std::string> word_order;
  std::unordered_map<std::string, long long> freq;
  for (const auto& line : corpus_lines) {
    std::istringstream ss(line);
    std::string w;
    while (ss >> w) {
      for (char c : w) v.add(std::string(1, c));
      if (freq.emplace(w, 0).second) word_order.push_back(w);
      ++freq[w];
    }
  }
  std::stable_sort(word_order.begin(), word_order.end(), [&](const auto& a, const auto& b) {
    if (freq[a] != freq[b]) return freq[a] > freq[b];
    return a < b;
  });
  for (const auto& w : word_order) {
    if (v.size() >= size_cap) break;
    if (w.size() > 1) v.add(w);
  }
  return v;
}

namespace {
// Single-letter words are encoded like spelled-out words: they are
// indistinguishable from a spelled character, so they get the same SPACE
// delimiting to keep decode unambiguous.
bool spelled_out(const Vocabulary& v, const std::string& w) {
  return w.size() == 1 || !v.id_of(w).has_value();
}
}  // namespace

std::vector<int> encode_text(const Vocabulary& v, const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> words;
  std::string w;
  while (ss >> w) words.push_back(w);
  std::vector<int> out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (!spelled_out(v, words[i])) {
      out.push_back(*v.id_of(words[i]));
      continue;
    }
    if (!out.empty() && out.back() != Reserved::SPACE) out.push_back(Reserved::SPACE);
    for (char c : words[i]) {
      auto id = v.id_of(std::string(1, c));
      if (!id) throw std::invalid_argument(std::string("encode_text: character '") + c +
                                           "' not in vocabulary");
      out.push_back(*id);
    }
    if (i + 1 < words.size()) out.push_back(Reserved::SPACE);
  }
  return out;
}

std::string decode_text(const Vocabulary& v, const std::vector<int>& ids) {
  std::vector<std::string> words;
  std::string buf;
  auto flush = [&] {
    if (!buf.empty()) {
      words.push_back(buf);
      buf.clear();
    }
  };
  for (int id : ids) {
    if (id == Reserved::SPACE) {
      flush();
    } else if (v.is_word(id)) {
      flush();
      words.push_back(v.token(id));
    } else if (v.is_char(id)) {
      buf += v.token(id);
    } else {
      throw std::invalid_argument("decode_text: unexpected reserved token id " + std::to_string(id));
    }
  }
  flush();
  std::string out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

void write_dataset(const std::string& path, const std::string& header,
                   const std::vector<TaskSample>& samples) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_dataset: cannot open " + path);
  f << "# " << header << "\n";
  for (const auto& s : samples) {
    for (size_t i = 0; i < s.input.size(); ++i) f << (i ? " " : "") << s.input[i];
    f << '\t';
    for (size_t i = 0; i < s.target.size(); ++i) f << (i ? " " : "") << s.target[i];
    f << '\n';
  }
  if (!f) throw std::runtime_error("write_dataset: write failed for " + path);
}

std::vector<TaskSample> read_dataset(const std::string& path, std::string* header_out) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("read_dataset: cannot open " + path);
  std::string line;
  if (!std::getline(f, line) || line.rfind("# ", 0) != 0)
    throw IntegrityError("read_dataset: missing header line in " + path);
  if (header_out) *header_out = line.substr(2);
  std::vector<TaskSample> samples;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw IntegrityError("read_dataset: malformed line in " + path);
    TaskSample s;
    std::istringstream in(line.substr(0, tab)), tg(line.substr(tab + 1));
    int id;
    while (in >> id) s.input.push_back(id);
    while (tg >> id) s.target.push_back(id);
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace ngpu
