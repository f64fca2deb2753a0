#include "canet/tensor.hpp"

#include <cmath>
#include <cstring>
#include <numeric>

namespace canet {

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
  std::size_t n = 1;
  for (std::size_t e : shape_) {
    if (e == 0) throw ShapeError("zero extent in shape " + shape_str(shape_));
    n *= e;
  }
  data_.assign(n, 0.0);
}

Tensor::Tensor(std::size_t rows, std::size_t cols)
    : Tensor(std::vector<std::size_t>{rows, cols}) {}

Tensor Tensor::scalar(double v) {
  Tensor t(1, 1);
  t.data_[0] = v;
  return t;
}

Tensor Tensor::full(std::size_t rows, std::size_t cols, double v) {
  Tensor t(rows, cols);
  t.fill(v);
  return t;
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  std::size_t r = rows.size();
  std::size_t c = rows.begin()->size();
  Tensor t(r, c);
  std::size_t i = 0;
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged matrix literal");
    for (double v : row) t.data_[i++] = v;
  }
  return t;
}

Tensor Tensor::row(std::initializer_list<double> v) {
  Tensor t(1, v.size());
  std::size_t i = 0;
  for (double x : v) t.data_[i++] = x;
  return t;
}

Tensor Tensor::column(std::initializer_list<double> v) {
  Tensor t(v.size(), 1);
  std::size_t i = 0;
  for (double x : v) t.data_[i++] = x;
  return t;
}

std::size_t Tensor::rows() const {
  if (shape_.size() != 2) throw ShapeError("expected rank-2 tensor, got " + shape_str(shape_));
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.size() != 2) throw ShapeError("expected rank-2 tensor, got " + shape_str(shape_));
  return shape_[1];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::resize(std::size_t rows, std::size_t cols) {
  shape_ = {rows, cols};
  data_.resize(rows * cols);
}

void Tensor::reshape(std::size_t rows, std::size_t cols) {
  if (rows * cols != data_.size())
    throw ShapeError("reshape to " + shape_str({rows, cols}) + " changes size of " +
                     shape_str(shape_));
  shape_ = {rows, cols};
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

double Tensor::item() const {
  if (!is_scalar()) throw ShapeError("item() on non-scalar " + shape_str(shape_));
  return data_[0];
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

bool approx_equal(const Tensor& a, const Tensor& b, double tol) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::abs(a[i] - b[i]) > tol) return false;
  return true;
}

}  // namespace canet
