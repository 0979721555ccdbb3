// SPDX-License-Identifier: Apache-2.0
#include "ngpu/model.hpp"

#include <sstream>

namespace ngpu {

Variant variant_from_string(const std::string& s) {
  if (s == "baseline") return Variant::baseline;
  if (s == "markovian") return Variant::markovian;
  if (s == "extended") return Variant::extended;
  if (s == "attention") return Variant::attention;
  throw std::invalid_argument("unknown model variant '" + s + "'");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::markovian: return "markovian";
    case Variant::extended: return "extended";
    case Variant::attention: return "attention";
  }
  return "?";
}

void ModelConfig::validate() const {
  if (layers < 1 || width < 1 || channels < 1) throw std::invalid_argument("ModelConfig: l, w, m must be >= 1");
  if (kw % 2 == 0 || kh % 2 == 0) throw std::invalid_argument("ModelConfig: kernel extents must be odd");
  if (vocab_in <= Reserved::SPACE || vocab_out <= Reserved::SPACE)
    throw std::invalid_argument("ModelConfig: vocabularies must include the reserved symbols");
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("ModelConfig: dropout out of range");
}

std::string ModelConfig::fingerprint_text() const {
  std::ostringstream os;
  os << "variant=" << to_string(variant) << " layers=" << layers << " width=" << width
     << " channels=" << channels << " kw=" << kw << " kh=" << kh << " vocab_in=" << vocab_in
     << " vocab_out=" << vocab_out << " hidden=" << hidden << " att_dim=" << att_dim
     << " dropout=" << dropout;
  return os.str();
}

uint64_t ModelConfig::fingerprint() const {
  const std::string text = fingerprint_text();
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

void add_gru_params(ParameterStore& p, const std::string& prefix, int in_dim, int h,
                    std::mt19937_64& rng) {
  p.add(prefix + "Wu", init_matrix(h, in_dim, rng));
  p.add(prefix + "Uu", init_matrix(h, h, rng));
  Tensor bu({h});
  bu.fill(1.0);
  p.add(prefix + "bu", std::move(bu));
  p.add(prefix + "Wr", init_matrix(h, in_dim, rng));
  p.add(prefix + "Ur", init_matrix(h, h, rng));
  p.add(prefix + "br", Tensor({h}));
  p.add(prefix + "Wc", init_matrix(h, in_dim, rng));
  p.add(prefix + "Uc", init_matrix(h, h, rng));
  p.add(prefix + "bc", Tensor({h}));
}

struct GruVars {
  Tape::Id Wu, Uu, bu, Wr, Ur, br, Wc, Uc, bc;
};

GruVars gru_vars(const std::map<std::string, Tape::Id>& vars, const std::string& prefix) {
  auto g = [&](const std::string& n) {
    auto it = vars.find(prefix + n);
    if (it == vars.end()) throw std::invalid_argument("missing graph variable " + prefix + n);
    return it->second;
  };
  return {g("Wu"), g("Uu"), g("bu"), g("Wr"), g("Ur"), g("br"), g("Wc"), g("Uc"), g("bc")};
}

Tape::Id gru_step(Tape& t, const GruVars& g, Tape::Id h, Tape::Id x) {
  Tape::Id u = t.sigmoid(t.add(t.add(t.matvec(g.Wu, x), t.matvec(g.Uu, h)), g.bu));
  Tape::Id r = t.sigmoid(t.add(t.add(t.matvec(g.Wr, x), t.matvec(g.Ur, h)), g.br));
  Tape::Id cand = t.tanh(t.add(t.add(t.matvec(g.Wc, x), t.matvec(g.Uc, t.mul(r, h))), g.bc));
  return t.add(t.mul(u, h), t.mul(t.affine(u, -1.0, 1.0), cand));
}

struct GruTensors {
  const Tensor *Wu, *Uu, *bu, *Wr, *Ur, *br, *Wc, *Uc, *bc;
};

GruTensors gru_tensors(const ParameterStore& p, const std::string& prefix) {
  return {&p.get(prefix + "Wu"), &p.get(prefix + "Uu"), &p.get(prefix + "bu"),
          &p.get(prefix + "Wr"), &p.get(prefix + "Ur"), &p.get(prefix + "br"),
          &p.get(prefix + "Wc"), &p.get(prefix + "Uc"), &p.get(prefix + "bc")};
}

Tensor gru_step(const GruTensors& g, const Tensor& h, const Tensor& x) {
  Tensor u = sigmoid(add(add(matvec(*g.Wu, x), matvec(*g.Uu, h)), *g.bu));
  Tensor r = sigmoid(add(add(matvec(*g.Wr, x), matvec(*g.Ur, h)), *g.br));
  Tensor cand = tanh_ew(add(add(matvec(*g.Wc, x), matvec(*g.Uc, mul(r, h))), *g.bc));
  return add(mul(u, h), mul(affine(u, -1.0, 1.0), cand));
}

}  // namespace

void build_params(const ModelConfig& cfg, ParameterStore& params, std::mt19937_64& rng) {
  cfg.validate();
  const int m = cfg.channels;
  if (cfg.variant == Variant::attention) {
    const int h = cfg.hidden, a = cfg.att_dim;
    params.add("E", init_matrix(cfg.vocab_in, m, rng));
    params.add("Eo", init_matrix(cfg.vocab_out, m, rng));
    add_gru_params(params, "enc.", m, h, rng);
    add_gru_params(params, "dec.", m, h, rng);
    params.add("att.A", init_matrix(h, a, rng));
    params.add("att.C", init_matrix(h, a, rng));
    params.add("att.v", init_matrix(1, a, rng));
    params.add("O", init_matrix(cfg.vocab_out, 2 * h, rng));
    return;
  }
  params.add("E", init_matrix(cfg.vocab_in, m, rng));
  for (int i = 0; i < cfg.layers; ++i)
    add_cgru_params(params, "enc" + std::to_string(i) + ".", cfg.kw, cfg.kh, m, rng);
  switch (cfg.variant) {
    case Variant::baseline:
      params.add("O", init_matrix(cfg.vocab_out, m, rng));
      break;
    case Variant::markovian:
      params.add("Eo", init_matrix(cfg.vocab_out, m, rng));
      params.add("O", init_matrix(cfg.vocab_out, 2 * m, rng));
      break;
    case Variant::extended:
      params.add("Eo", init_matrix(cfg.vocab_out, m, rng));
      for (int i = 0; i < cfg.layers; ++i)
        add_dcgru_params(params, "dec" + std::to_string(i) + ".", cfg.kw, cfg.kh, m, rng);
      params.add("O", init_matrix(cfg.vocab_out, m, rng));
      break;
    default: break;
  }
}

long long expected_param_count(const ModelConfig& cfg) {
  const long long m = cfg.channels;
  const long long bank = static_cast<long long>(cfg.kw) * cfg.kh * m * m;
  const long long cgru = 3 * bank + 3 * m;
  if (cfg.variant == Variant::attention) {
    const long long h = cfg.hidden, a = cfg.att_dim;
    const long long gru = 3 * (h * m + h * h + h);
    return cfg.vocab_in * m + cfg.vocab_out * m + 2 * gru + 2 * h * a + a +
           static_cast<long long>(cfg.vocab_out) * 2 * h;
  }
  long long count = cfg.vocab_in * m + cfg.layers * cgru;
  switch (cfg.variant) {
    case Variant::baseline: count += static_cast<long long>(cfg.vocab_out) * m; break;
    case Variant::markovian:
      count += cfg.vocab_out * m + static_cast<long long>(cfg.vocab_out) * 2 * m;
      break;
    case Variant::extended:
      // decoder cells carry a second bank per gate for the output tape
      count += cfg.vocab_out * m + cfg.layers * (cgru + 3 * bank) +
               static_cast<long long>(cfg.vocab_out) * m;
      break;
    default: break;
  }
  return count;
}

std::map<std::string, Tape::Id> make_leaves(Tape& tape, const ParameterStore& params) {
  std::map<std::string, Tape::Id> vars;
  for (const auto& name : params.names()) vars[name] = tape.leaf(params.get(name), "param");
  return vars;
}

namespace {

Tape::Id encode_graph(Tape& t, const ModelConfig& cfg, const std::map<std::string, Tape::Id>& vars,
                      const std::vector<int>& input, int mem_len, const DropoutSpec& drop) {
  Tape::Id s = t.embed_state(vars.at("E"), input, cfg.width, mem_len);
  for (int step = 0; step < mem_len; ++step)
    for (int l = 0; l < cfg.layers; ++l)
      s = cgru_step(t, cgru_vars(vars, "enc" + std::to_string(l) + "."), s, drop);
  return s;
}

Tape::Id mean_nll(Tape& t, const std::vector<Tape::Id>& logits, const std::vector<int>& target) {
  std::vector<Tape::Id> nlls;
  nlls.reserve(target.size());
  for (size_t k = 0; k < target.size(); ++k) nlls.push_back(t.nll(logits[k], target[k]));
  return t.affine(t.add_n(nlls), 1.0 / static_cast<double>(target.size()), 0.0);
}

ForwardResult forward_attention(Tape& t, const ModelConfig& cfg,
                                const std::map<std::string, Tape::Id>& vars,
                                const std::vector<int>& input, const std::vector<int>& target) {
  const GruVars enc = gru_vars(vars, "enc.");
  const GruVars dec = gru_vars(vars, "dec.");
  Tape::Id h = t.leaf(Tensor({cfg.hidden}), "h0");
  std::vector<Tape::Id> rows;
  for (int tok : input) {
    h = gru_step(t, enc, h, t.embed_row(vars.at("E"), tok));
    rows.push_back(h);
  }
  Tape::Id H = t.stack_rows(rows);
  Tape::Id M = t.matmul(H, vars.at("att.C"));  // [n, att]
  // att.v is stored as a [1, att] matrix; lift it to a vector once
  Tape::Id v = t.matvec_t(vars.at("att.v"), t.leaf(Tensor({1}, {1.0}), "one"));
  ForwardResult out;
  Tape::Id hd = h;  // decoder starts from the final encoder state
  int prev = Reserved::GO;
  for (size_t k = 0; k < target.size(); ++k) {
    hd = gru_step(t, dec, hd, t.embed_row(vars.at("Eo"), prev));
    Tape::Id q = t.matvec_t(vars.at("att.A"), hd);  // [att]
    Tape::Id scores = t.matvec(t.tanh(t.add_row_broadcast(M, q)), v);
    Tape::Id a = t.softmax_vec(scores);
    Tape::Id ctx = t.matvec_t(H, a);
    out.logits.push_back(t.matvec(vars.at("O"), t.concat(hd, ctx)));
    prev = target[k];
  }
  out.loss = mean_nll(t, out.logits, target);
  return out;
}

}  // namespace

ForwardResult forward_loss(Tape& t, const ModelConfig& cfg,
                           const std::map<std::string, Tape::Id>& vars,
                           const std::vector<int>& input, const std::vector<int>& target,
                           int mem_len, std::mt19937_64* drop_rng, bool training) {
  cfg.validate();
  if (target.empty()) throw std::invalid_argument("forward_loss: empty target");
  for (int tok : target)
    if (tok < 0 || tok >= cfg.vocab_out) throw std::out_of_range("forward_loss: target id out of vocabulary");
  DropoutSpec drop{cfg.dropout, drop_rng, training};

  if (cfg.variant == Variant::attention) return forward_attention(t, cfg, vars, input, target);

  if (mem_len < static_cast<int>(input.size()) || mem_len < static_cast<int>(target.size()))
    throw std::invalid_argument("forward_loss: memory length too small");

  Tape::Id s_fin = encode_graph(t, cfg, vars, input, mem_len, drop);
  ForwardResult out;

  switch (cfg.variant) {
    case Variant::baseline: {
      for (size_t k = 0; k < target.size(); ++k)
        out.logits.push_back(t.matvec(vars.at("O"), t.slice_column(s_fin, static_cast<int>(k))));
      break;
    }
    case Variant::markovian: {
      int prev = Reserved::GO;
      for (size_t k = 0; k < target.size(); ++k) {
        Tape::Id feat = t.concat(t.slice_column(s_fin, static_cast<int>(k)),
                                 t.embed_row(vars.at("Eo"), prev));
        out.logits.push_back(t.matvec(vars.at("O"), feat));
        prev = target[k];
      }
      break;
    }
    case Variant::extended: {
      Tape::Id d = s_fin;
      Tape::Id p = t.leaf(Tensor({cfg.width, mem_len, cfg.channels}), "p0");
      for (size_t k = 0; k < target.size(); ++k) {
        for (int l = 0; l < cfg.layers; ++l)
          d = dcgru_step(t, dcgru_vars(vars, "dec" + std::to_string(l) + "."), d, p, drop);
        out.logits.push_back(t.matvec(vars.at("O"), t.slice_column(d, static_cast<int>(k))));
        p = t.overwrite_column(p, static_cast<int>(k), t.embed_row(vars.at("Eo"), target[k]));
      }
      break;
    }
    default: break;
  }
  out.loss = mean_nll(t, out.logits, target);
  return out;
}

Tensor encode_plain(const ModelConfig& cfg, const ParameterStore& params,
                    const std::vector<int>& input, int mem_len) {
  Tensor s = embed_input(params.get("E"), input, mem_len, cfg.width);
  std::vector<CgruTensors> cells;
  for (int l = 0; l < cfg.layers; ++l)
    cells.push_back(cgru_tensors(params, "enc" + std::to_string(l) + "."));
  for (int step = 0; step < mem_len; ++step)
    for (const auto& c : cells) s = cgru_step(c, s);
  return s;
}

namespace {

std::vector<double> logits_to_logprobs(const Tensor& logits) {
  std::vector<double> v(logits.data(), logits.data() + logits.size());
  return log_softmax_vec(v);
}

class BaselineDecoder : public StepDecoder {
 public:
  BaselineDecoder(const ModelConfig& cfg, const ParameterStore& params,
                  const std::vector<int>& input, int out_len) {
    const int mem = std::max<int>(out_len, static_cast<int>(input.size()));
    Tensor s = encode_plain(cfg, params, input, mem);
    const Tensor& O = params.get("O");
    for (int k = 0; k < out_len; ++k) rows_.push_back(matvec(O, slice_column(s, k)));
  }
  std::unique_ptr<StepDecoder> clone() const override {
    return std::make_unique<BaselineDecoder>(*this);
  }
  std::vector<double> next_log_probs() override { return logits_to_logprobs(rows_.at(k_)); }
  void feed(int) override { ++k_; }

 private:
  std::vector<Tensor> rows_;
  size_t k_ = 0;
};

class MarkovianDecoder : public StepDecoder {
 public:
  MarkovianDecoder(const ModelConfig& cfg, const ParameterStore& params,
                   const std::vector<int>& input, int out_len)
      : params_(&params) {
    const int mem = std::max<int>(out_len, static_cast<int>(input.size()));
    s_fin_ = encode_plain(cfg, params, input, mem);
  }
  std::unique_ptr<StepDecoder> clone() const override {
    return std::make_unique<MarkovianDecoder>(*this);
  }
  std::vector<double> next_log_probs() override {
    const Tensor& Eo = params_->get("Eo");
    const int m = Eo.dim(1);
    Tensor feat({2 * m});
    Tensor col = slice_column(s_fin_, k_);
    for (int c = 0; c < m; ++c) {
      feat[c] = col[c];
      feat[m + c] = Eo.at({prev_, c});
    }
    return logits_to_logprobs(matvec(params_->get("O"), feat));
  }
  void feed(int symbol) override {
    prev_ = symbol;
    ++k_;
  }

 private:
  const ParameterStore* params_;
  Tensor s_fin_;
  int prev_ = Reserved::GO;
  int k_ = 0;
};

class ExtendedDecoder : public StepDecoder {
 public:
  ExtendedDecoder(const ModelConfig& cfg, const ParameterStore& params,
                  const std::vector<int>& input, int out_len)
      : cfg_(cfg), params_(&params) {
    const int mem = std::max<int>(out_len, static_cast<int>(input.size()));
    d_ = encode_plain(cfg, params, input, mem);
    p_ = Tensor({cfg.width, mem, cfg.channels});
  }
  std::unique_ptr<StepDecoder> clone() const override {
    return std::make_unique<ExtendedDecoder>(*this);
  }
  std::vector<double> next_log_probs() override {
    if (!have_next_) {
      next_d_ = d_;
      for (int l = 0; l < cfg_.layers; ++l)
        next_d_ = dcgru_step(dcgru_tensors(*params_, "dec" + std::to_string(l) + "."), next_d_, p_);
      have_next_ = true;
    }
    return logits_to_logprobs(matvec(params_->get("O"), slice_column(next_d_, k_)));
  }
  void feed(int symbol) override {
    if (!have_next_) next_log_probs();
    d_ = next_d_;
    have_next_ = false;
    const Tensor& Eo = params_->get("Eo");
    const int m = Eo.dim(1);
    Tensor emb({m});
    for (int c = 0; c < m; ++c) emb[c] = Eo.at({symbol, c});
    write_column(p_, k_, emb);
    ++k_;
  }

 private:
  ModelConfig cfg_;
  const ParameterStore* params_;
  Tensor d_, p_, next_d_;
  bool have_next_ = false;
  int k_ = 0;
};

class AttentionDecoder : public StepDecoder {
 public:
  AttentionDecoder(const ModelConfig& cfg, const ParameterStore& params,
                   const std::vector<int>& input)
      : cfg_(cfg), params_(&params) {
    const GruTensors enc = gru_tensors(params, "enc.");
    const Tensor& E = params.get("E");
    Tensor h({cfg.hidden});
    H_ = Tensor({static_cast<int>(input.size()), cfg.hidden});
    for (size_t i = 0; i < input.size(); ++i) {
      Tensor x({E.dim(1)});
      for (int c = 0; c < E.dim(1); ++c) x[c] = E.at({input[i], c});
      h = gru_step(enc, h, x);
      for (int c = 0; c < cfg.hidden; ++c) H_.at({static_cast<int>(i), c}) = h[c];
    }
    h_ = h;
  }
  std::unique_ptr<StepDecoder> clone() const override {
    return std::make_unique<AttentionDecoder>(*this);
  }
  std::vector<double> next_log_probs() override {
    if (!have_next_) {
      const Tensor& Eo = params_->get("Eo");
      Tensor x({Eo.dim(1)});
      for (int c = 0; c < Eo.dim(1); ++c) x[c] = Eo.at({prev_, c});
      next_h_ = gru_step(gru_tensors(*params_, "dec."), h_, x);
      have_next_ = true;
    }
    Tensor q = matvec_t(params_->get("att.A"), next_h_);
    Tensor M = matmul(H_, params_->get("att.C"));
    const Tensor& vrow = params_->get("att.v");
    Tensor v({vrow.dim(1)});
    for (int i = 0; i < v.size(); ++i) v[i] = vrow.at({0, i});
    Tensor scores({H_.dim(0)});
    for (int j = 0; j < H_.dim(0); ++j) {
      double acc = 0.0;
      for (int a = 0; a < v.size(); ++a) acc += v[a] * std::tanh(M.at({j, a}) + q[a]);
      scores[j] = acc;
    }
    Tensor att = softmax_lastdim(scores);
    Tensor ctx = matvec_t(H_, att);
    Tensor feat({2 * cfg_.hidden});
    for (int c = 0; c < cfg_.hidden; ++c) {
      feat[c] = next_h_[c];
      feat[cfg_.hidden + c] = ctx[c];
    }
    return logits_to_logprobs(matvec(params_->get("O"), feat));
  }
  void feed(int symbol) override {
    if (!have_next_) next_log_probs();
    h_ = next_h_;
    have_next_ = false;
    prev_ = symbol;
  }

 private:
  ModelConfig cfg_;
  const ParameterStore* params_;
  Tensor H_, h_, next_h_;
  bool have_next_ = false;
  int prev_ = Reserved::GO;
};

}  // namespace

std::unique_ptr<StepDecoder> make_decoder(const ModelConfig& cfg, const ParameterStore& params,
                                          const std::vector<int>& input, int out_len) {
  cfg.validate();
  switch (cfg.variant) {
    case Variant::baseline: return std::make_unique<BaselineDecoder>(cfg, params, input, out_len);
    case Variant::markovian: return std::make_unique<MarkovianDecoder>(cfg, params, input, out_len);
    case Variant::extended: return std::make_unique<ExtendedDecoder>(cfg, params, input, out_len);
    case Variant::attention: return std::make_unique<AttentionDecoder>(cfg, params, input);
  }
  throw std::invalid_argument("make_decoder: bad variant");
}

std::vector<double> teacher_forced_log_probs(const ModelConfig& cfg, const ParameterStore& params,
                                             const std::vector<int>& input,
                                             const std::vector<int>& target) {
  auto dec = make_decoder(cfg, params, input, static_cast<int>(target.size()));
  std::vector<double> lps;
  lps.reserve(target.size());
  for (int tok : target) {
    lps.push_back(dec->next_log_probs().at(tok));
    dec->feed(tok);
  }
  return lps;
}

}  // namespace ngpu
