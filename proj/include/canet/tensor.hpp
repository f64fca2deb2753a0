#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace canet {

// Thrown on any operand-shape violation; the message names the offending
// shapes.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string shape_str(const std::vector<std::size_t>& shape);

// Dense row-major array of 64-bit floats. Storage is rank-agnostic, but all
// tape operations work on rank-2 tensors; scalars are 1x1.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::size_t rows, std::size_t cols);

  static Tensor scalar(double v);
  static Tensor full(std::size_t rows, std::size_t cols, double v);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor row(std::initializer_list<double> v);
  static Tensor column(std::initializer_list<double> v);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  bool is_scalar() const { return data_.size() == 1; }

  std::size_t rows() const;
  std::size_t cols() const;

  double& at(std::size_t i, std::size_t j) { return data_[i * cols() + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * cols() + j]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  void fill(double v);
  // Reallocates as needed; existing contents are not preserved.
  void resize(std::size_t rows, std::size_t cols);
  // Size-preserving change of extents.
  void reshape(std::size_t rows, std::size_t cols);

  bool all_finite() const;
  double item() const;

  bool operator==(const Tensor& other) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// Exact representation equality (distinguishes -0.0 from 0.0, unlike ==).
bool bitwise_equal(const Tensor& a, const Tensor& b);
bool approx_equal(const Tensor& a, const Tensor& b, double tol);

}  // namespace canet
