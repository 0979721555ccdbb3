// SPDX-License-Identifier: Apache-2.0
#ifndef NGPU_AUTOGRAD_HPP
#define NGPU_AUTOGRAD_HPP

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "ngpu/kernels.hpp"
#include "ngpu/tensor.hpp"

namespace ngpu {

/// Ordered collection of named trainable tensors. Iteration order is the
/// insertion order, so runs with the same construction sequence are
/// deterministic.
class ParameterStore {
 public:
  Tensor& add(const std::string& name, Tensor t);
  bool has(const std::string& name) const { return index_.count(name) != 0; }
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  const std::vector<std::string>& names() const { return names_; }
  int count() const { return static_cast<int>(names_.size()); }
  long long total_elements() const;

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, Tensor> index_;
};

/// Reverse-mode tape. Ops are recorded during the forward pass and replayed
/// in reverse creation order by backward(). One tape is single-threaded;
/// independent tapes may run concurrently.
class Tape {
 public:
  using Id = int;

  Id leaf(const Tensor& value, const char* tag = "leaf");

  const Tensor& value(Id id) const { return nodes_[check(id)].value; }
  const Tensor& grad(Id id) const { return nodes_[check(id)].grad; }
  int node_count() const { return static_cast<int>(nodes_.size()); }

  // Accumulates d(loss)/d(node) into every node's grad. loss must be scalar.
  void backward(Id loss);

  // elementwise
  Id add(Id a, Id b);
  Id sub(Id a, Id b);
  Id mul(Id a, Id b);
  Id square(Id a);
  Id affine(Id a, double scale, double shift);  // scale*x + shift
  Id sigmoid(Id a);
  Id tanh(Id a);
  Id dropout(Id a, double rate, std::mt19937_64& rng, bool training);

  // linear algebra
  Id conv_same(Id U, Id s);
  Id matmul(Id A, Id B);
  Id matvec(Id M, Id x);
  Id matvec_t(Id M, Id x);
  Id add_channel_bias(Id s, Id b);
  Id add_row_broadcast(Id M, Id v);

  // structure
  Id slice_column(Id s, int k);
  Id overwrite_column(Id s, int k, Id v);
  Id embed_row(Id E, int row);
  Id embed_state(Id E, const std::vector<int>& tokens, int w, int n);
  Id concat(Id a, Id b);
  Id stack_rows(const std::vector<Id>& rows);
  Id softmax_vec(Id x);

  // reductions
  Id sum(Id a);
  Id add_n(const std::vector<Id>& xs);
  // -log softmax(logits)[target]; logits is a vector
  Id nll(Id logits, int target);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    const char* tag;
    std::function<void(Tape&, const Tensor&)> back;  // adds into parents' grads
  };

  int check(Id id) const;
  Id push(Tensor value, const char* tag, std::function<void(Tape&, const Tensor&)> back);
  void add_grad(Id id, const Tensor& g);

  std::vector<Node> nodes_;
};

/// Max relative error between tape gradients and central finite differences.
/// The builder constructs the scalar loss from named leaves; `point` gives
/// the evaluation point for every named tensor.
using GraphBuilder = std::function<Tape::Id(Tape&, const std::map<std::string, Tape::Id>&)>;

double gradcheck(const GraphBuilder& build, const std::map<std::string, Tensor>& point,
                 double eps = 1e-5);

}  // namespace ngpu

#endif  // NGPU_AUTOGRAD_HPP
