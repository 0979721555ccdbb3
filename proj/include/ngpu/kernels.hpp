// SPDX-License-Identifier: Apache-2.0
//
// Numeric kernels used by the autograd tape and the plain-tensor forward
// paths. Every kernel has a serial reference implementation; the hot ones
// (convolution, matmul) also have an OpenMP path that parallelizes over
// independent output elements while keeping each element's summation order
// fixed, so the two paths are bit-identical.
#ifndef NGPU_KERNELS_HPP
#define NGPU_KERNELS_HPP

#include <vector>

#include "ngpu/tensor.hpp"

namespace ngpu {

// --- convolution (state [w,n,m], kernel bank [kw,kh,m,m], same padding) ---

void check_kernel_bank(const Tensor& U, const Tensor& s);

// Serial reference: simple loop nest.
Tensor conv_same_serial(const Tensor& U, const Tensor& s);
// OpenMP path; bit-compatible with the serial reference.
Tensor conv_same(const Tensor& U, const Tensor& s);

// Accumulating backward kernels (gradients are added into the outputs).
void conv_same_grad_input(const Tensor& U, const Tensor& grad_out, Tensor& grad_s);
void conv_same_grad_kernel(const Tensor& s, const Tensor& grad_out, Tensor& grad_U);

// --- dense linear algebra ---

Tensor matmul_serial(const Tensor& A, const Tensor& B);  // [p,q]x[q,r]
Tensor matmul(const Tensor& A, const Tensor& B);
Tensor matvec(const Tensor& M, const Tensor& x);    // [p,q]x[q] -> [p]
Tensor matvec_t(const Tensor& M, const Tensor& x);  // [p,q]x[p] -> [q]

// --- elementwise ---

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor sigmoid(const Tensor& x);
Tensor tanh_ew(const Tensor& x);
Tensor affine(const Tensor& x, double scale, double shift);  // scale*x + shift

// Per-channel bias: b has length equal to the last dimension of s.
Tensor add_channel_bias(const Tensor& s, const Tensor& b);

// --- softmax / log-softmax over the last dimension ---

Tensor softmax_lastdim(const Tensor& logits);
std::vector<double> log_softmax_vec(const std::vector<double>& logits);

// --- state column access, s shape [w,n,m], column k at [0,k,:] ---

Tensor slice_column(const Tensor& s, int k);
void write_column(Tensor& s, int k, const Tensor& v);

double max_abs(const Tensor& t);

}  // namespace ngpu

#endif  // NGPU_KERNELS_HPP
