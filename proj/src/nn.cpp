// SPDX-License-Identifier: Apache-2.0
#include "ngpu/nn.hpp"

#include <cmath>

namespace ngpu {

namespace {
Tape::Id lookup(const std::map<std::string, Tape::Id>& vars, const std::string& name) {
  auto it = vars.find(name);
  if (it == vars.end()) throw std::invalid_argument("missing graph variable " + name);
  return it->second;
}
}  // namespace

CgruVars cgru_vars(const std::map<std::string, Tape::Id>& vars, const std::string& prefix) {
  return {lookup(vars, prefix + "U"),  lookup(vars, prefix + "Uu"), lookup(vars, prefix + "Ur"),
          lookup(vars, prefix + "B"),  lookup(vars, prefix + "Bu"), lookup(vars, prefix + "Br")};
}

DcgruVars dcgru_vars(const std::map<std::string, Tape::Id>& vars, const std::string& prefix) {
  return {cgru_vars(vars, prefix), lookup(vars, prefix + "W"), lookup(vars, prefix + "Wu"),
          lookup(vars, prefix + "Wr")};
}

CgruTensors cgru_tensors(const ParameterStore& params, const std::string& prefix) {
  return {&params.get(prefix + "U"),  &params.get(prefix + "Uu"), &params.get(prefix + "Ur"),
          &params.get(prefix + "B"),  &params.get(prefix + "Bu"), &params.get(prefix + "Br")};
}

DcgruTensors dcgru_tensors(const ParameterStore& params, const std::string& prefix) {
  return {cgru_tensors(params, prefix), &params.get(prefix + "W"), &params.get(prefix + "Wu"),
          &params.get(prefix + "Wr")};
}

Tensor init_kernel_bank(int kw, int kh, int m, std::mt19937_64& rng) {
  const double d = 1.0 / std::sqrt(static_cast<double>(kw) * kh * m);
  Tensor t({kw, kh, m, m});
  std::uniform_real_distribution<double> unif(-d, d);
  for (int i = 0; i < t.size(); ++i) t.data()[i] = unif(rng);
  return t;
}

Tensor init_matrix(int rows, int cols, std::mt19937_64& rng) {
  const double d = 1.0 / std::sqrt(static_cast<double>(cols));
  Tensor t({rows, cols});
  std::uniform_real_distribution<double> unif(-d, d);
  for (int i = 0; i < t.size(); ++i) t.data()[i] = unif(rng);
  return t;
}

void add_cgru_params(ParameterStore& params, const std::string& prefix, int kw, int kh, int m,
                     std::mt19937_64& rng) {
  params.add(prefix + "U", init_kernel_bank(kw, kh, m, rng));
  params.add(prefix + "Uu", init_kernel_bank(kw, kh, m, rng));
  params.add(prefix + "Ur", init_kernel_bank(kw, kh, m, rng));
  params.add(prefix + "B", Tensor({m}));
  Tensor bu({m});
  bu.fill(1.0);  // update gate starts mostly open so state survives n steps
  params.add(prefix + "Bu", std::move(bu));
  params.add(prefix + "Br", Tensor({m}));
}

void add_dcgru_params(ParameterStore& params, const std::string& prefix, int kw, int kh, int m,
                      std::mt19937_64& rng) {
  add_cgru_params(params, prefix, kw, kh, m, rng);
  params.add(prefix + "W", init_kernel_bank(kw, kh, m, rng));
  params.add(prefix + "Wu", init_kernel_bank(kw, kh, m, rng));
  params.add(prefix + "Wr", init_kernel_bank(kw, kh, m, rng));
}

Tape::Id cgru_step(Tape& t, const CgruVars& c, Tape::Id s, const DropoutSpec& drop) {
  Tape::Id u = t.sigmoid(t.add_channel_bias(t.conv_same(c.Uu, s), c.Bu));
  Tape::Id r = t.sigmoid(t.add_channel_bias(t.conv_same(c.Ur, s), c.Br));
  Tape::Id cand = t.tanh(t.add_channel_bias(t.conv_same(c.U, t.mul(r, s)), c.B));
  if (drop.rate > 0.0 && drop.rng) cand = t.dropout(cand, drop.rate, *drop.rng, drop.training);
  return t.add(t.mul(u, s), t.mul(t.affine(u, -1.0, 1.0), cand));
}

Tape::Id dcgru_step(Tape& t, const DcgruVars& c, Tape::Id s, Tape::Id p,
                    const DropoutSpec& drop) {
  Tape::Id u = t.sigmoid(
      t.add_channel_bias(t.add(t.conv_same(c.g.Uu, s), t.conv_same(c.Wu, p)), c.g.Bu));
  Tape::Id r = t.sigmoid(
      t.add_channel_bias(t.add(t.conv_same(c.g.Ur, s), t.conv_same(c.Wr, p)), c.g.Br));
  Tape::Id cand = t.tanh(t.add_channel_bias(
      t.add(t.conv_same(c.g.U, t.mul(r, s)), t.conv_same(c.W, p)), c.g.B));
  if (drop.rate > 0.0 && drop.rng) cand = t.dropout(cand, drop.rate, *drop.rng, drop.training);
  return t.add(t.mul(u, s), t.mul(t.affine(u, -1.0, 1.0), cand));
}

Tape::Id residual_step(Tape& t, Tape::Id U, Tape::Id s) {
  return t.add(s, t.conv_same(U, s));
}

Tensor cgru_step(const CgruTensors& c, const Tensor& s) {
  Tensor u = sigmoid(add_channel_bias(conv_same(*c.Uu, s), *c.Bu));
  Tensor r = sigmoid(add_channel_bias(conv_same(*c.Ur, s), *c.Br));
  Tensor cand = tanh_ew(add_channel_bias(conv_same(*c.U, mul(r, s)), *c.B));
  return add(mul(u, s), mul(affine(u, -1.0, 1.0), cand));
}

Tensor dcgru_step(const DcgruTensors& c, const Tensor& s, const Tensor& p) {
  if (!s.same_shape(p)) throw ShapeError("dcgru_step: state and tape shapes differ");
  Tensor u = sigmoid(add_channel_bias(add(conv_same(*c.g.Uu, s), conv_same(*c.Wu, p)), *c.g.Bu));
  Tensor r = sigmoid(add_channel_bias(add(conv_same(*c.g.Ur, s), conv_same(*c.Wr, p)), *c.g.Br));
  Tensor cand =
      tanh_ew(add_channel_bias(add(conv_same(*c.g.U, mul(r, s)), conv_same(*c.W, p)), *c.g.B));
  return add(mul(u, s), mul(affine(u, -1.0, 1.0), cand));
}

Tensor residual_step(const Tensor& U, const Tensor& s) { return add(s, conv_same(U, s)); }

Tensor embed_input(const Tensor& E, const std::vector<int>& tokens, int n_cols, int w) {
  if (E.rank() != 2) throw ShapeError("embed_input: embedding table must be rank 2");
  if (static_cast<int>(tokens.size()) > n_cols)
    throw ShapeError("embed_input: input longer than the memory");
  const int m = E.dim(1);
  Tensor s0({w, n_cols, m});
  for (size_t k = 0; k < tokens.size(); ++k) {
    if (tokens[k] < 0 || tokens[k] >= E.dim(0))
      throw std::out_of_range("embed_input: token id out of vocabulary");
    for (int c = 0; c < m; ++c) s0.data()[k * m + c] = E.data()[tokens[k] * m + c];
  }
  return s0;
}

Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
  if (!training || rate == 0.0) return x;
  Tensor out(x.shape());
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double keep = 1.0 / (1.0 - rate);
  for (int i = 0; i < x.size(); ++i)
    out.data()[i] = unif(rng) < rate ? 0.0 : x.data()[i] * keep;
  out.round_to_mode();
  return out;
}

}  // namespace ngpu
