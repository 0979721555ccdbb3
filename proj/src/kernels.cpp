// SPDX-License-Identifier: Apache-2.0
#include "ngpu/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace ngpu {

void check_kernel_bank(const Tensor& U, const Tensor& s) {
  if (U.rank() != 4) throw ShapeError("conv_same: kernel bank must be rank 4, got " + U.shape_str());
  if (s.rank() != 3) throw ShapeError("conv_same: state must be rank 3, got " + s.shape_str());
  if (U.dim(0) % 2 == 0 || U.dim(1) % 2 == 0)
    throw ShapeError("conv_same: even kernel extents are rejected, got " + U.shape_str());
  if (U.dim(2) != U.dim(3) || U.dim(2) != s.dim(2))
    throw ShapeError("conv_same: channel mismatch between kernel " + U.shape_str() +
                     " and state " + s.shape_str());
}

namespace {

// Inner body shared by both paths: one output position (x,y), all channels.
// Summation order over (u,v,c) is fixed so serial and OpenMP results match.
inline void conv_position(const double* sd, const double* ud, double* acc, int x, int y,
                          int w, int n, int m, int kw, int kh) {
  const int hw = kw / 2, hh = kh / 2;
  for (int u = -hw; u <= hw; ++u) {
    const int sx = x + u;
    if (sx < 0 || sx >= w) continue;
    for (int v = -hh; v <= hh; ++v) {
      const int sy = y + v;
      if (sy < 0 || sy >= n) continue;
      const double* srow = sd + (static_cast<long long>(sx) * n + sy) * m;
      const double* urow = ud + ((static_cast<long long>(u + hw) * kh + (v + hh)) * m) * m;
      for (int c = 0; c < m; ++c) {
        const double sv = srow[c];
        if (sv == 0.0) continue;
        const double* uc = urow + static_cast<long long>(c) * m;
        for (int i = 0; i < m; ++i) acc[i] += sv * uc[i];
      }
    }
  }
}

}  // namespace

Tensor conv_same_serial(const Tensor& U, const Tensor& s) {
  check_kernel_bank(U, s);
  const int w = s.dim(0), n = s.dim(1), m = s.dim(2);
  const int kw = U.dim(0), kh = U.dim(1);
  Tensor out(s.shape());
  const Precision prec = precision_mode();
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < n; ++y) {
      double* acc = out.data() + (static_cast<long long>(x) * n + y) * m;
      conv_position(s.data(), U.data(), acc, x, y, w, n, m, kw, kh);
      if (prec == Precision::f32)
        for (int i = 0; i < m; ++i) acc[i] = round_prec(acc[i], prec);
    }
  }
  return out;
}

Tensor conv_same(const Tensor& U, const Tensor& s) {
  check_kernel_bank(U, s);
  const int w = s.dim(0), n = s.dim(1), m = s.dim(2);
  const int kw = U.dim(0), kh = U.dim(1);
  Tensor out(s.shape());
  const Precision prec = precision_mode();
#pragma omp parallel for collapse(2) schedule(static)
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < n; ++y) {
      double* acc = out.data() + (static_cast<long long>(x) * n + y) * m;
      conv_position(s.data(), U.data(), acc, x, y, w, n, m, kw, kh);
      if (prec == Precision::f32)
        for (int i = 0; i < m; ++i) acc[i] = round_prec(acc[i], prec);
    }
  }
  return out;
}

void conv_same_grad_input(const Tensor& U, const Tensor& grad_out, Tensor& grad_s) {
  check_kernel_bank(U, grad_s);
  if (!grad_out.same_shape(grad_s))
    throw ShapeError("conv_same_grad_input: gradient shape mismatch");
  const int w = grad_s.dim(0), n = grad_s.dim(1), m = grad_s.dim(2);
  const int kw = U.dim(0), kh = U.dim(1), hw = kw / 2, hh = kh / 2;
  const double* gd = grad_out.data();
  const double* ud = U.data();
#pragma omp parallel for collapse(2) schedule(static)
  for (int sx = 0; sx < w; ++sx) {
    for (int sy = 0; sy < n; ++sy) {
      double* gs = grad_s.data() + (static_cast<long long>(sx) * n + sy) * m;
      for (int u = -hw; u <= hw; ++u) {
        const int x = sx - u;
        if (x < 0 || x >= w) continue;
        for (int v = -hh; v <= hh; ++v) {
          const int y = sy - v;
          if (y < 0 || y >= n) continue;
          const double* grow = gd + (static_cast<long long>(x) * n + y) * m;
          const double* urow = ud + ((static_cast<long long>(u + hw) * kh + (v + hh)) * m) * m;
          for (int c = 0; c < m; ++c) {
            const double* uc = urow + static_cast<long long>(c) * m;
            double acc = 0.0;
            for (int i = 0; i < m; ++i) acc += grow[i] * uc[i];
            gs[c] += acc;
          }
        }
      }
    }
  }
}

void conv_same_grad_kernel(const Tensor& s, const Tensor& grad_out, Tensor& grad_U) {
  check_kernel_bank(grad_U, s);
  if (!grad_out.same_shape(s)) throw ShapeError("conv_same_grad_kernel: gradient shape mismatch");
  const int w = s.dim(0), n = s.dim(1), m = s.dim(2);
  const int kw = grad_U.dim(0), kh = grad_U.dim(1), hw = kw / 2, hh = kh / 2;
  const double* sd = s.data();
  const double* gd = grad_out.data();
#pragma omp parallel for collapse(2) schedule(static)
  for (int u = 0; u < kw; ++u) {
    for (int v = 0; v < kh; ++v) {
      const int du = u - hw, dv = v - hh;
      double* gu = grad_U.data() + ((static_cast<long long>(u) * kh + v) * m) * m;
      for (int x = 0; x < w; ++x) {
        const int sx = x + du;
        if (sx < 0 || sx >= w) continue;
        for (int y = 0; y < n; ++y) {
          const int sy = y + dv;
          if (sy < 0 || sy >= n) continue;
          const double* srow = sd + (static_cast<long long>(sx) * n + sy) * m;
          const double* grow = gd + (static_cast<long long>(x) * n + y) * m;
          for (int c = 0; c < m; ++c) {
            const double sv = srow[c];
            if (sv == 0.0) continue;
            double* guc = gu + static_cast<long long>(c) * m;
            for (int i = 0; i < m; ++i) guc[i] += sv * grow[i];
          }
        }
      }
    }
  }
}

Tensor matmul_serial(const Tensor& A, const Tensor& B) {
  if (A.rank() != 2 || B.rank() != 2)
    throw ShapeError("matmul: operands must be rank 2");
  if (A.dim(1) != B.dim(0))
    throw ShapeError("matmul: inner dimensions disagree, " + A.shape_str() + " x " + B.shape_str());
  const int p = A.dim(0), q = A.dim(1), r = B.dim(1);
  Tensor C({p, r});
  const Precision prec = precision_mode();
  for (int i = 0; i < p; ++i) {
    double* crow = C.data() + static_cast<long long>(i) * r;
    const double* arow = A.data() + static_cast<long long>(i) * q;
    for (int k = 0; k < q; ++k) {
      const double a = arow[k];
      if (a == 0.0) continue;
      const double* brow = B.data() + static_cast<long long>(k) * r;
      for (int j = 0; j < r; ++j) crow[j] += a * brow[j];
    }
    if (prec == Precision::f32)
      for (int j = 0; j < r; ++j) crow[j] = round_prec(crow[j], prec);
  }
  return C;
}

Tensor matmul(const Tensor& A, const Tensor& B) {
  if (A.rank() != 2 || B.rank() != 2)
    throw ShapeError("matmul: operands must be rank 2");
  if (A.dim(1) != B.dim(0))
    throw ShapeError("matmul: inner dimensions disagree, " + A.shape_str() + " x " + B.shape_str());
  const int p = A.dim(0), q = A.dim(1), r = B.dim(1);
  Tensor C({p, r});
  const Precision prec = precision_mode();
#pragma omp parallel for schedule(static)
  for (int i = 0; i < p; ++i) {
    double* crow = C.data() + static_cast<long long>(i) * r;
    const double* arow = A.data() + static_cast<long long>(i) * q;
    for (int k = 0; k < q; ++k) {
      const double a = arow[k];
      if (a == 0.0) continue;
      const double* brow = B.data() + static_cast<long long>(k) * r;
      for (int j = 0; j < r; ++j) crow[j] += a * brow[j];
    }
    if (prec == Precision::f32)
      for (int j = 0; j < r; ++j) crow[j] = round_prec(crow[j], prec);
  }
  return C;
}

Tensor matvec(const Tensor& M, const Tensor& x) {
  if (M.rank() != 2 || x.rank() != 1 || M.dim(1) != x.dim(0))
    throw ShapeError("matvec: shape mismatch, " + M.shape_str() + " x " + x.shape_str());
  const int p = M.dim(0), q = M.dim(1);
  Tensor y({p});
  const Precision prec = precision_mode();
  for (int i = 0; i < p; ++i) {
    const double* row = M.data() + static_cast<long long>(i) * q;
    double acc = 0.0;
    for (int k = 0; k < q; ++k) acc += row[k] * x.data()[k];
    y[i] = round_prec(acc, prec);
  }
  return y;
}

Tensor matvec_t(const Tensor& M, const Tensor& x) {
  if (M.rank() != 2 || x.rank() != 1 || M.dim(0) != x.dim(0))
    throw ShapeError("matvec_t: shape mismatch, " + M.shape_str() + " x " + x.shape_str());
  const int p = M.dim(0), q = M.dim(1);
  Tensor y({q});
  for (int i = 0; i < p; ++i) {
    const double* row = M.data() + static_cast<long long>(i) * q;
    const double xv = x.data()[i];
    for (int k = 0; k < q; ++k) y.data()[k] += xv * row[k];
  }
  y.round_to_mode();
  return y;
}

namespace {
template <class F>
Tensor binary_ew(const Tensor& a, const Tensor& b, F f, const char* name) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(name) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  Tensor out(a.shape());
  const Precision prec = precision_mode();
  for (int i = 0; i < a.size(); ++i) out.data()[i] = round_prec(f(a.data()[i], b.data()[i]), prec);
  return out;
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_ew(a, b, [](double x, double y) { return x + y; }, "add");
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_ew(a, b, [](double x, double y) { return x - y; }, "sub");
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_ew(a, b, [](double x, double y) { return x * y; }, "mul");
}

Tensor sigmoid(const Tensor& x) {
  Tensor out(x.shape());
  const Precision prec = precision_mode();
  for (int i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    // split by sign to avoid overflow of exp for large |v|
    const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    out.data()[i] = round_prec(s, prec);
  }
  return out;
}

Tensor tanh_ew(const Tensor& x) {
  Tensor out(x.shape());
  const Precision prec = precision_mode();
  for (int i = 0; i < x.size(); ++i) out.data()[i] = round_prec(std::tanh(x.data()[i]), prec);
  return out;
}

Tensor affine(const Tensor& x, double scale, double shift) {
  Tensor out(x.shape());
  const Precision prec = precision_mode();
  for (int i = 0; i < x.size(); ++i) out.data()[i] = round_prec(scale * x.data()[i] + shift, prec);
  return out;
}

Tensor add_channel_bias(const Tensor& s, const Tensor& b) {
  if (b.rank() != 1 || s.rank() < 1 || s.dim(s.rank() - 1) != b.dim(0))
    throw ShapeError("add_channel_bias: bias " + b.shape_str() + " does not match state " + s.shape_str());
  const int m = b.dim(0);
  Tensor out(s.shape());
  const Precision prec = precision_mode();
  for (int i = 0; i < s.size(); ++i) out.data()[i] = round_prec(s.data()[i] + b.data()[i % m], prec);
  return out;
}

Tensor softmax_lastdim(const Tensor& logits) {
  if (!logits.all_finite()) throw NumericError("softmax: non-finite input");
  const int V = logits.dim(logits.rank() - 1);
  const int rows = logits.size() / V;
  Tensor out(logits.shape());
  for (int r = 0; r < rows; ++r) {
    const double* in = logits.data() + static_cast<long long>(r) * V;
    double* o = out.data() + static_cast<long long>(r) * V;
    double mx = in[0];
    for (int i = 1; i < V; ++i) mx = std::max(mx, in[i]);
    double z = 0.0;
    for (int i = 0; i < V; ++i) {
      o[i] = std::exp(in[i] - mx);
      z += o[i];
    }
    for (int i = 0; i < V; ++i) o[i] /= z;
  }
  out.round_to_mode();
  return out;
}

std::vector<double> log_softmax_vec(const std::vector<double>& logits) {
  if (logits.empty()) throw ShapeError("log_softmax_vec: empty input");
  double mx = logits[0];
  for (double v : logits) {
    if (!std::isfinite(v)) throw NumericError("log_softmax_vec: non-finite input");
    mx = std::max(mx, v);
  }
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  const double lz = std::log(z) + mx;
  std::vector<double> out(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lz;
  return out;
}

Tensor slice_column(const Tensor& s, int k) {
  if (s.rank() != 3) throw ShapeError("slice_column: state must be rank 3");
  if (k < 0 || k >= s.dim(1)) throw std::out_of_range("slice_column: column index out of range");
  const int m = s.dim(2);
  Tensor v({m});
  for (int c = 0; c < m; ++c) v[c] = s.at({0, k, c});
  return v;
}

void write_column(Tensor& s, int k, const Tensor& v) {
  if (s.rank() != 3) throw ShapeError("write_column: state must be rank 3");
  if (k < 0 || k >= s.dim(1)) throw std::out_of_range("write_column: column index out of range");
  if (v.rank() != 1 || v.dim(0) != s.dim(2))
    throw ShapeError("write_column: vector length does not match channel count");
  for (int c = 0; c < s.dim(2); ++c) s.at({0, k, c}) = v[c];
}

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (int i = 0; i < t.size(); ++i) m = std::max(m, std::abs(t.data()[i]));
  return m;
}

}  // namespace ngpu
