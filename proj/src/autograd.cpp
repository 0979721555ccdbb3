// SPDX-License-Identifier: Apache-2.0
#include "ngpu/autograd.hpp"

#include <cmath>

namespace ngpu {

Tensor& ParameterStore::add(const std::string& name, Tensor t) {
  if (has(name)) throw std::invalid_argument("ParameterStore: duplicate name " + name);
  names_.push_back(name);
  return index_.emplace(name, std::move(t)).first->second;
}

Tensor& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("ParameterStore: unknown name " + name);
  return it->second;
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("ParameterStore: unknown name " + name);
  return it->second;
}

long long ParameterStore::total_elements() const {
  long long n = 0;
  for (const auto& name : names_) n += get(name).size();
  return n;
}

int Tape::check(Id id) const {
  if (id < 0 || id >= static_cast<int>(nodes_.size()))
    throw std::out_of_range("Tape: invalid node id");
  return id;
}

Tape::Id Tape::push(Tensor value, const char* tag, std::function<void(Tape&, const Tensor&)> back) {
  Node n;
  n.grad = Tensor::zeros_like(value);
  n.value = std::move(value);
  n.tag = tag;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size() - 1);
}

void Tape::add_grad(Id id, const Tensor& g) {
  Tensor& acc = nodes_[check(id)].grad;
  if (!acc.same_shape(g)) throw ShapeError("Tape: gradient shape mismatch");
  for (int i = 0; i < acc.size(); ++i) acc.data()[i] += g.data()[i];
}

Tape::Id Tape::leaf(const Tensor& value, const char* tag) { return push(value, tag, nullptr); }

void Tape::backward(Id loss) {
  check(loss);
  if (nodes_[loss].value.size() != 1) throw ShapeError("backward: loss must be scalar");
  add_grad(loss, Tensor::scalar(1.0));
  for (int id = loss; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.back) continue;
    if (!n.grad.all_finite())
      throw NumericError(std::string("backward: non-finite gradient at op '") + n.tag + "'");
    n.back(*this, n.grad);
  }
}

Tape::Id Tape::add(Id a, Id b) {
  return push(ngpu::add(value(a), value(b)), "add", [a, b](Tape& t, const Tensor& g) {
    t.add_grad(a, g);
    t.add_grad(b, g);
  });
}

Tape::Id Tape::sub(Id a, Id b) {
  return push(ngpu::sub(value(a), value(b)), "sub", [a, b](Tape& t, const Tensor& g) {
    t.add_grad(a, g);
    Tensor neg = ngpu::affine(g, -1.0, 0.0);
    t.add_grad(b, neg);
  });
}

Tape::Id Tape::mul(Id a, Id b) {
  return push(ngpu::mul(value(a), value(b)), "mul", [a, b](Tape& t, const Tensor& g) {
    t.add_grad(a, ngpu::mul(g, t.value(b)));
    t.add_grad(b, ngpu::mul(g, t.value(a)));
  });
}

Tape::Id Tape::square(Id a) {
  return push(ngpu::mul(value(a), value(a)), "square", [a](Tape& t, const Tensor& g) {
    Tensor d = ngpu::mul(g, t.value(a));
    t.add_grad(a, ngpu::affine(d, 2.0, 0.0));
  });
}

Tape::Id Tape::affine(Id a, double scale, double shift) {
  return push(ngpu::affine(value(a), scale, shift), "affine",
              [a, scale](Tape& t, const Tensor& g) { t.add_grad(a, ngpu::affine(g, scale, 0.0)); });
}

Tape::Id Tape::sigmoid(Id a) {
  Id id = push(ngpu::sigmoid(value(a)), "sigmoid", nullptr);
  nodes_[id].back = [a, id](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(id);
    Tensor d(y.shape());
    for (int i = 0; i < y.size(); ++i) d.data()[i] = g.data()[i] * y.data()[i] * (1.0 - y.data()[i]);
    t.add_grad(a, d);
  };
  return id;
}

Tape::Id Tape::tanh(Id a) {
  Id id = push(ngpu::tanh_ew(value(a)), "tanh", nullptr);
  nodes_[id].back = [a, id](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(id);
    Tensor d(y.shape());
    for (int i = 0; i < y.size(); ++i) d.data()[i] = g.data()[i] * (1.0 - y.data()[i] * y.data()[i]);
    t.add_grad(a, d);
  };
  return id;
}

Tape::Id Tape::dropout(Id a, double rate, std::mt19937_64& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
  const Tensor& x = value(a);
  if (!training || rate == 0.0)
    return push(x, "dropout", [a](Tape& t, const Tensor& g) { t.add_grad(a, g); });
  Tensor mask(x.shape());
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double keep = 1.0 / (1.0 - rate);
  for (int i = 0; i < mask.size(); ++i) mask.data()[i] = unif(rng) < rate ? 0.0 : keep;
  return push(ngpu::mul(x, mask), "dropout",
              [a, mask](Tape& t, const Tensor& g) { t.add_grad(a, ngpu::mul(g, mask)); });
}

Tape::Id Tape::conv_same(Id U, Id s) {
  return push(ngpu::conv_same(value(U), value(s)), "conv_same", [U, s](Tape& t, const Tensor& g) {
    Tensor gU = Tensor::zeros_like(t.value(U));
    Tensor gs = Tensor::zeros_like(t.value(s));
    conv_same_grad_kernel(t.value(s), g, gU);
    conv_same_grad_input(t.value(U), g, gs);
    t.add_grad(U, gU);
    t.add_grad(s, gs);
  });
}

Tape::Id Tape::matmul(Id A, Id B) {
  return push(ngpu::matmul(value(A), value(B)), "matmul", [A, B](Tape& t, const Tensor& g) {
    const Tensor& a = t.value(A);
    const Tensor& b = t.value(B);
    const int p = a.dim(0), q = a.dim(1), r = b.dim(1);
    Tensor gA({p, q});
    Tensor gB({q, r});
    for (int i = 0; i < p; ++i)
      for (int k = 0; k < q; ++k) {
        double acc = 0.0;
        for (int j = 0; j < r; ++j) acc += g.data()[i * r + j] * b.data()[k * r + j];
        gA.data()[i * q + k] = acc;
      }
    for (int k = 0; k < q; ++k)
      for (int j = 0; j < r; ++j) {
        double acc = 0.0;
        for (int i = 0; i < p; ++i) acc += a.data()[i * q + k] * g.data()[i * r + j];
        gB.data()[k * r + j] = acc;
      }
    t.add_grad(A, gA);
    t.add_grad(B, gB);
  });
}

Tape::Id Tape::matvec(Id M, Id x) {
  return push(ngpu::matvec(value(M), value(x)), "matvec", [M, x](Tape& t, const Tensor& g) {
    const Tensor& m = t.value(M);
    const Tensor& v = t.value(x);
    const int p = m.dim(0), q = m.dim(1);
    Tensor gM({p, q});
    Tensor gx({q});
    for (int i = 0; i < p; ++i)
      for (int k = 0; k < q; ++k) {
        gM.data()[i * q + k] = g.data()[i] * v.data()[k];
        gx.data()[k] += g.data()[i] * m.data()[i * q + k];
      }
    t.add_grad(M, gM);
    t.add_grad(x, gx);
  });
}

Tape::Id Tape::matvec_t(Id M, Id x) {
  return push(ngpu::matvec_t(value(M), value(x)), "matvec_t", [M, x](Tape& t, const Tensor& g) {
    const Tensor& m = t.value(M);
    const Tensor& v = t.value(x);
    const int p = m.dim(0), q = m.dim(1);
    Tensor gM({p, q});
    Tensor gx({p});
    for (int i = 0; i < p; ++i)
      for (int k = 0; k < q; ++k) {
        gM.data()[i * q + k] = v.data()[i] * g.data()[k];
        gx.data()[i] += m.data()[i * q + k] * g.data()[k];
      }
    t.add_grad(M, gM);
    t.add_grad(x, gx);
  });
}

Tape::Id Tape::add_channel_bias(Id s, Id b) {
  return push(ngpu::add_channel_bias(value(s), value(b)), "add_channel_bias",
              [s, b](Tape& t, const Tensor& g) {
                t.add_grad(s, g);
                const int m = t.value(b).dim(0);
                Tensor gb({m});
                for (int i = 0; i < g.size(); ++i) gb.data()[i % m] += g.data()[i];
                t.add_grad(b, gb);
              });
}

Tape::Id Tape::add_row_broadcast(Id M, Id v) {
  const Tensor& m = value(M);
  const Tensor& x = value(v);
  if (m.rank() != 2 || x.rank() != 1 || m.dim(1) != x.dim(0))
    throw ShapeError("add_row_broadcast: shape mismatch");
  Tensor out(m.shape());
  const int rows = m.dim(0), q = m.dim(1);
  for (int i = 0; i < rows; ++i)
    for (int k = 0; k < q; ++k)
      out.data()[i * q + k] = round_prec(m.data()[i * q + k] + x.data()[k], precision_mode());
  return push(std::move(out), "add_row_broadcast", [M, v, rows, q](Tape& t, const Tensor& g) {
    t.add_grad(M, g);
    Tensor gv({q});
    for (int i = 0; i < rows; ++i)
      for (int k = 0; k < q; ++k) gv.data()[k] += g.data()[i * q + k];
    t.add_grad(v, gv);
  });
}

Tape::Id Tape::slice_column(Id s, int k) {
  return push(ngpu::slice_column(value(s), k), "slice_column", [s, k](Tape& t, const Tensor& g) {
    Tensor gs = Tensor::zeros_like(t.value(s));
    const int n = gs.dim(1), m = gs.dim(2);
    for (int c = 0; c < m; ++c) gs.data()[k * m + c] = g.data()[c];
    (void)n;
    t.add_grad(s, gs);
  });
}

Tape::Id Tape::overwrite_column(Id s, int k, Id v) {
  Tensor out = value(s);
  write_column(out, k, value(v));
  return push(std::move(out), "overwrite_column", [s, k, v](Tape& t, const Tensor& g) {
    const int m = t.value(v).dim(0);
    Tensor gs = g;
    Tensor gv({m});
    for (int c = 0; c < m; ++c) {
      gv.data()[c] = g.data()[k * m + c];
      gs.data()[k * m + c] = 0.0;  // the written column does not flow to the old state
    }
    t.add_grad(s, gs);
    t.add_grad(v, gv);
  });
}

Tape::Id Tape::embed_row(Id E, int row) {
  const Tensor& e = value(E);
  if (e.rank() != 2) throw ShapeError("embed_row: table must be rank 2");
  if (row < 0 || row >= e.dim(0)) throw std::out_of_range("embed_row: row out of range");
  const int m = e.dim(1);
  Tensor out({m});
  for (int c = 0; c < m; ++c) out[c] = e.data()[row * m + c];
  return push(std::move(out), "embed_row", [E, row, m](Tape& t, const Tensor& g) {
    Tensor gE = Tensor::zeros_like(t.value(E));
    for (int c = 0; c < m; ++c) gE.data()[row * m + c] = g.data()[c];
    t.add_grad(E, gE);
  });
}

Tape::Id Tape::embed_state(Id E, const std::vector<int>& tokens, int w, int n) {
  const Tensor& e = value(E);
  if (e.rank() != 2) throw ShapeError("embed_state: table must be rank 2");
  if (static_cast<int>(tokens.size()) > n)
    throw ShapeError("embed_state: more tokens than columns");
  const int m = e.dim(1);
  Tensor out({w, n, m});
  for (size_t k = 0; k < tokens.size(); ++k) {
    if (tokens[k] < 0 || tokens[k] >= e.dim(0))
      throw std::out_of_range("embed_state: token id out of vocabulary");
    for (int c = 0; c < m; ++c) out.data()[k * m + c] = e.data()[tokens[k] * m + c];
  }
  std::vector<int> toks = tokens;
  return push(std::move(out), "embed_state", [E, toks, m](Tape& t, const Tensor& g) {
    Tensor gE = Tensor::zeros_like(t.value(E));
    for (size_t k = 0; k < toks.size(); ++k)
      for (int c = 0; c < m; ++c) gE.data()[toks[k] * m + c] += g.data()[k * m + c];
    t.add_grad(E, gE);
  });
}

Tape::Id Tape::concat(Id a, Id b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  if (x.rank() != 1 || y.rank() != 1) throw ShapeError("concat: vectors only");
  Tensor out({x.dim(0) + y.dim(0)});
  for (int i = 0; i < x.size(); ++i) out[i] = x.data()[i];
  for (int i = 0; i < y.size(); ++i) out[x.size() + i] = y.data()[i];
  const int na = x.size(), nb = y.size();
  return push(std::move(out), "concat", [a, b, na, nb](Tape& t, const Tensor& g) {
    Tensor ga({na});
    Tensor gb({nb});
    for (int i = 0; i < na; ++i) ga.data()[i] = g.data()[i];
    for (int i = 0; i < nb; ++i) gb.data()[i] = g.data()[na + i];
    t.add_grad(a, ga);
    t.add_grad(b, gb);
  });
}

Tape::Id Tape::stack_rows(const std::vector<Id>& rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no rows");
  const int q = value(rows[0]).dim(0);
  Tensor out({static_cast<int>(rows.size()), q});
  for (size_t i = 0; i < rows.size(); ++i) {
    const Tensor& r = value(rows[i]);
    if (r.rank() != 1 || r.dim(0) != q) throw ShapeError("stack_rows: row shape mismatch");
    for (int k = 0; k < q; ++k) out.data()[i * q + k] = r.data()[k];
  }
  std::vector<Id> ids = rows;
  return push(std::move(out), "stack_rows", [ids, q](Tape& t, const Tensor& g) {
    for (size_t i = 0; i < ids.size(); ++i) {
      Tensor gr({q});
      for (int k = 0; k < q; ++k) gr.data()[k] = g.data()[i * q + k];
      t.add_grad(ids[i], gr);
    }
  });
}

Tape::Id Tape::softmax_vec(Id x) {
  const Tensor& v = value(x);
  if (v.rank() != 1) throw ShapeError("softmax_vec: vector expected");
  Id id = push(softmax_lastdim(v), "softmax_vec", nullptr);
  nodes_[id].back = [x, id](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(id);
    double dot = 0.0;
    for (int i = 0; i < y.size(); ++i) dot += g.data()[i] * y.data()[i];
    Tensor d(y.shape());
    for (int i = 0; i < y.size(); ++i) d.data()[i] = y.data()[i] * (g.data()[i] - dot);
    t.add_grad(x, d);
  };
  return id;
}

Tape::Id Tape::sum(Id a) {
  double acc = 0.0;
  const Tensor& x = value(a);
  for (int i = 0; i < x.size(); ++i) acc += x.data()[i];
  return push(Tensor::scalar(round_prec(acc, precision_mode())), "sum",
              [a](Tape& t, const Tensor& g) {
                Tensor ga(t.value(a).shape());
                ga.fill(g.data()[0]);
                t.add_grad(a, ga);
              });
}

Tape::Id Tape::add_n(const std::vector<Id>& xs) {
  if (xs.empty()) throw ShapeError("add_n: no inputs");
  Tensor acc = value(xs[0]);
  for (size_t i = 1; i < xs.size(); ++i) acc = ngpu::add(acc, value(xs[i]));
  std::vector<Id> ids = xs;
  return push(std::move(acc), "add_n", [ids](Tape& t, const Tensor& g) {
    for (Id id : ids) t.add_grad(id, g);
  });
}

Tape::Id Tape::nll(Id logits, int target) {
  const Tensor& l = value(logits);
  if (l.rank() != 1) throw ShapeError("nll: logits must be a vector");
  if (target < 0 || target >= l.dim(0)) throw std::out_of_range("nll: target id out of range");
  std::vector<double> lv(l.data(), l.data() + l.size());
  std::vector<double> lp = log_softmax_vec(lv);
  Id id = push(Tensor::scalar(round_prec(-lp[target], precision_mode())), "nll", nullptr);
  nodes_[id].back = [logits, target, id](Tape& t, const Tensor& g) {
    const Tensor& l2 = t.value(logits);
    Tensor p = softmax_lastdim(l2);
    Tensor d(l2.shape());
    for (int i = 0; i < l2.size(); ++i)
      d.data()[i] = g.data()[0] * (p.data()[i] - (i == target ? 1.0 : 0.0));
    t.add_grad(logits, d);
    (void)id;
  };
  return id;
}

double gradcheck(const GraphBuilder& build, const std::map<std::string, Tensor>& point,
                 double eps) {
  auto eval = [&](const std::map<std::string, Tensor>& p) {
    Tape tape;
    std::map<std::string, Tape::Id> leaves;
    for (const auto& [name, t] : p) leaves[name] = tape.leaf(t, "gradcheck_leaf");
    Tape::Id loss = build(tape, leaves);
    const double v = tape.value(loss)[0];
    if (!std::isfinite(v)) throw NumericError("gradcheck: non-finite loss at probe point");
    return v;
  };

  // analytic gradients
  Tape tape;
  std::map<std::string, Tape::Id> leaves;
  for (const auto& [name, t] : point) leaves[name] = tape.leaf(t, "gradcheck_leaf");
  Tape::Id loss = build(tape, leaves);
  tape.backward(loss);

  double max_err = 0.0;
  for (const auto& [name, t] : point) {
    const Tensor& g = tape.grad(leaves[name]);
    std::map<std::string, Tensor> probe = point;
    Tensor& pt = probe[name];
    for (int i = 0; i < t.size(); ++i) {
      const double orig = pt.data()[i];
      pt.data()[i] = orig + eps;
      const double fp = eval(probe);
      pt.data()[i] = orig - eps;
      const double fm = eval(probe);
      pt.data()[i] = orig;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double analytic = g.data()[i];
      const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
      max_err = std::max(max_err, std::abs(analytic - numeric) / denom);
    }
  }
  return max_err;
}

}  // namespace ngpu
