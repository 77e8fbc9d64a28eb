#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "anyglyph/errors.hpp"

namespace anyglyph {

/// Dense row-major n-d array backed by an Eigen vector.
///
/// Images and latents use channel-first layout {C, H, W}; token sequences are
/// {N, d}; conv weights are {Cout, Cin, k, k}.
template <class Scalar>
class BasicTensor {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;

  BasicTensor() = default;

  explicit BasicTensor(std::vector<int> dims, Scalar fill = Scalar(0))
      : dims_(std::move(dims)), data_(Vector::Constant(count(dims_), fill)) {}

  BasicTensor(std::vector<int> dims, Vector data) : dims_(std::move(dims)), data_(std::move(data)) {
    if (data_.size() != count(dims_)) {
      throw ShapeMismatch("tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                          shape_string(dims_));
    }
  }

  static Eigen::Index count(const std::vector<int>& dims) {
    return std::accumulate(dims.begin(), dims.end(), Eigen::Index{1},
                           [](Eigen::Index a, int b) { return a * b; });
  }

  static std::string shape_string(const std::vector<int>& dims) {
    std::string s = "[";
    for (std::size_t i = 0; i < dims.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(dims[i]);
    }
    return s + "]";
  }

  const std::vector<int>& dims() const { return dims_; }
  int dim(std::size_t i) const { return dims_.at(i); }
  std::size_t rank() const { return dims_.size(); }
  Eigen::Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }
  std::string shape() const { return shape_string(dims_); }

  Vector& data() { return data_; }
  const Vector& data() const { return data_; }
  Scalar* ptr() { return data_.data(); }
  const Scalar* ptr() const { return data_.data(); }

  auto array() { return data_.array(); }
  auto array() const { return data_.array(); }

  Scalar& operator[](Eigen::Index i) { return data_[i]; }
  Scalar operator[](Eigen::Index i) const { return data_[i]; }

  Scalar& at(int c, int y, int x) { return data_[(Eigen::Index(c) * dims_[1] + y) * dims_[2] + x]; }
  Scalar at(int c, int y, int x) const { return data_[(Eigen::Index(c) * dims_[1] + y) * dims_[2] + x]; }

  /// Views the buffer as a rows x cols row-major matrix (rows * cols == size()).
  MatrixMap matrix(Eigen::Index rows, Eigen::Index cols) { return MatrixMap(data_.data(), rows, cols); }
  ConstMatrixMap matrix(Eigen::Index rows, Eigen::Index cols) const {
    return ConstMatrixMap(data_.data(), rows, cols);
  }
  /// First dimension as rows, remaining dimensions flattened as columns.
  MatrixMap matrix() { return matrix(dims_.at(0), size() / dims_.at(0)); }
  ConstMatrixMap matrix() const { return matrix(dims_.at(0), size() / dims_.at(0)); }

  bool same_shape(const BasicTensor& other) const { return dims_ == other.dims_; }

  BasicTensor reshaped(std::vector<int> dims) const {
    if (count(dims) != size()) {
      throw ShapeMismatch("cannot reshape " + shape() + " to " + shape_string(dims));
    }
    return BasicTensor(std::move(dims), data_);
  }

  bool all_finite() const { return data_.allFinite(); }

 private:
  std::vector<int> dims_;
  Vector data_;
};

using Tensor = BasicTensor<double>;

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeMismatch(std::string(what) + ": shape " + a.shape() + " vs " + b.shape());
  }
}

}  // namespace anyglyph
