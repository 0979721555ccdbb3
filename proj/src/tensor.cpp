// SPDX-License-Identifier: Apache-2.0
#include "ngpu/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

namespace ngpu {

namespace {
std::atomic<Precision> g_precision{Precision::f64};
}

Precision precision_mode() { return g_precision.load(std::memory_order_relaxed); }
void set_precision_mode(Precision p) { g_precision.store(p, std::memory_order_relaxed); }

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  long long n = 1;
  for (int d : shape_) {
    if (d <= 0) throw ShapeError("Tensor: dimensions must be positive, got " + shape_to_string(shape_));
    n *= d;
  }
  data_.assign(static_cast<size_t>(n), 0.0);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data) : Tensor(std::move(shape)) {
  if (data.size() != data_.size())
    throw ShapeError("Tensor: data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_to_string(shape_));
  data_ = std::move(data);
}

int Tensor::offset(std::initializer_list<int> idx) const {
  if (static_cast<int>(idx.size()) != rank())
    throw std::out_of_range("Tensor: index rank mismatch");
  long long off = 0;
  int i = 0;
  for (int v : idx) {
    if (v < 0 || v >= shape_[i]) throw std::out_of_range("Tensor: index out of range");
    off = off * shape_[i] + v;
    ++i;
  }
  return static_cast<int>(off);
}

void Tensor::fill(double v) {
  for (auto& x : data_) x = v;
}

void Tensor::round_to_mode() {
  if (precision_mode() == Precision::f32) {
    for (auto& x : data_) x = static_cast<double>(static_cast<float>(x));
  }
}

bool Tensor::all_finite() const {
  for (double x : data_)
    if (!std::isfinite(x)) return false;
  return true;
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

std::string shape_to_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

}  // namespace ngpu
