// SPDX-License-Identifier: Apache-2.0
//
// The gated convolutional cells and embedding/projection pieces. Every cell
// exists twice: a tape version used for training and a plain-tensor version
// used by the step decoders. A test pins the two to each other.
#ifndef NGPU_NN_HPP
#define NGPU_NN_HPP

#include <map>
#include <random>
#include <string>

#include "ngpu/autograd.hpp"

namespace ngpu {

// Parameter names of one CGRU cell under a prefix, e.g. "enc0.".
// U/B: candidate, Uu/Bu: update gate, Ur/Br: reset gate.
struct CgruVars {
  Tape::Id U, Uu, Ur, B, Bu, Br;
};

// DCGRU adds one kernel bank per pre-activation for the output tape.
struct DcgruVars {
  CgruVars g;
  Tape::Id W, Wu, Wr;
};

struct CgruTensors {
  const Tensor *U, *Uu, *Ur, *B, *Bu, *Br;
};

struct DcgruTensors {
  CgruTensors g;
  const Tensor *W, *Wu, *Wr;
};

CgruVars cgru_vars(const std::map<std::string, Tape::Id>& vars, const std::string& prefix);
DcgruVars dcgru_vars(const std::map<std::string, Tape::Id>& vars, const std::string& prefix);
CgruTensors cgru_tensors(const ParameterStore& params, const std::string& prefix);
DcgruTensors dcgru_tensors(const ParameterStore& params, const std::string& prefix);

// Adds the six (nine for DCGRU) cell parameters to the store.
void add_cgru_params(ParameterStore& params, const std::string& prefix, int kw, int kh, int m,
                     std::mt19937_64& rng);
void add_dcgru_params(ParameterStore& params, const std::string& prefix, int kw, int kh, int m,
                      std::mt19937_64& rng);

// Kernel bank entries are drawn uniformly from [-d, d], d = 1/sqrt(kw*kh*m).
Tensor init_kernel_bank(int kw, int kh, int m, std::mt19937_64& rng);
Tensor init_matrix(int rows, int cols, std::mt19937_64& rng);  // d = 1/sqrt(cols)

struct DropoutSpec {
  double rate = 0.0;
  std::mt19937_64* rng = nullptr;
  bool training = false;
};

// u o s + (1-u) o tanh(U*(r o s) + B); dropout, when active, is applied to
// the tanh candidate so the gated memory path is never dropped.
Tape::Id cgru_step(Tape& t, const CgruVars& c, Tape::Id s, const DropoutSpec& drop = {});
Tape::Id dcgru_step(Tape& t, const DcgruVars& c, Tape::Id s, Tape::Id p,
                    const DropoutSpec& drop = {});
Tape::Id residual_step(Tape& t, Tape::Id U, Tape::Id s);

Tensor cgru_step(const CgruTensors& c, const Tensor& s);
Tensor dcgru_step(const DcgruTensors& c, const Tensor& s, const Tensor& p);
Tensor residual_step(const Tensor& U, const Tensor& s);

// s0 of shape [w, n_cols, m] with E[tokens[k]] in column k and zeros elsewhere.
Tensor embed_input(const Tensor& E, const std::vector<int>& tokens, int n_cols, int w);

// Plain-tensor dropout (training mode zeroes with probability `rate` and
// rescales survivors; eval mode is the identity).
Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng, bool training);

}  // namespace ngpu

#endif  // NGPU_NN_HPP
