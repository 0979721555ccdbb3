// SPDX-License-Identifier: Apache-2.0
#ifndef NGPU_TENSOR_HPP
#define NGPU_TENSOR_HPP

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace ngpu {

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IntegrityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Run-wide precision switch. Values are always stored as double; in f32 mode
// every kernel rounds each result element through float, so a run behaves
// like a single-precision one while sharing one code path.
enum class Precision { f64, f32 };

Precision precision_mode();
void set_precision_mode(Precision p);

// Rounds x according to the current precision mode.
inline double round_prec(double x, Precision p) {
  return p == Precision::f32 ? static_cast<double>(static_cast<float>(x)) : x;
}

/// Dense row-major tensor of doubles with an explicit shape.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, std::vector<double> data);

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(i); }
  int size() const { return static_cast<int>(data_.size()); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](int i) { return data_[check_flat(i)]; }
  double operator[](int i) const { return data_[check_flat(i)]; }

  double& at(std::initializer_list<int> idx) { return data_[offset(idx)]; }
  double at(std::initializer_list<int> idx) const { return data_[offset(idx)]; }

  void fill(double v);
  void round_to_mode();  // applies the current precision mode in place

  bool all_finite() const;
  std::string shape_str() const;

 private:
  int check_flat(int i) const {
    if (i < 0 || i >= size()) throw std::out_of_range("Tensor: flat index out of range");
    return i;
  }
  int offset(std::initializer_list<int> idx) const;

  std::vector<int> shape_;
  std::vector<double> data_;
};

std::string shape_to_string(const std::vector<int>& shape);

}  // namespace ngpu

#endif  // NGPU_TENSOR_HPP
