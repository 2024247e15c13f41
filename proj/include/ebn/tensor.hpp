#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ebn/error.hpp"

namespace ebn {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) {
    if (d <= 0) throw shape_error("extent must be positive, got " + shape_str(s));
    n *= d;
  }
  return n;
}

// Dense n-dimensional array, row-major, backed by an Eigen array.
// Scalar is float in training mode and double in verification mode; the two
// never mix inside one graph.
template <typename S>
class Tensor {
 public:
  using Scalar = S;
  using Array = Eigen::Array<S, Eigen::Dynamic, 1>;
  using MatrixRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), values_(Array::Zero(shape_numel(shape_))) {}
  Tensor(Shape shape, Array values) : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != shape_numel(shape_))
      throw shape_error("value count " + std::to_string(values_.size()) + " does not fill shape " + shape_str(shape_));
  }
  Tensor(Shape shape, std::initializer_list<S> values) : shape_(std::move(shape)) {
    values_.resize(static_cast<Eigen::Index>(values.size()));
    Eigen::Index i = 0;
    for (S v : values) values_[i++] = v;
    if (values_.size() != shape_numel(shape_))
      throw shape_error("value count " + std::to_string(values_.size()) + " does not fill shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, S v) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.values_ = Array::Constant(shape_numel(t.shape_), v);
    return t;
  }
  static Tensor ones(Shape shape) { return full(std::move(shape), S(1)); }

  static Tensor uniform(Shape shape, std::mt19937_64& rng, S lo = S(0), S hi = S(1)) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
    for (Eigen::Index i = 0; i < t.values_.size(); ++i) t.values_[i] = static_cast<S>(dist(rng));
    return t;
  }
  static Tensor normal(Shape shape, std::mt19937_64& rng, S mean = S(0), S stddev = S(1)) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(static_cast<double>(mean), static_cast<double>(stddev));
    for (Eigen::Index i = 0; i < t.values_.size(); ++i) t.values_[i] = static_cast<S>(dist(rng));
    return t;
  }

  const Shape& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  std::int64_t numel() const { return values_.size(); }

  Array& array() { return values_; }
  const Array& array() const { return values_; }
  S* data() { return values_.data(); }
  const S* data() const { return values_.data(); }

  S& operator[](std::int64_t i) { return values_[i]; }
  S operator[](std::int64_t i) const { return values_[i]; }

  std::int64_t offset(int n, int c, int h, int w) const {
    return ((static_cast<std::int64_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }
  S& at(int n, int c, int h, int w) { return values_[offset(n, c, h, w)]; }
  S at(int n, int c, int h, int w) const { return values_[offset(n, c, h, w)]; }
  S& at(int i, int j) { return values_[static_cast<std::int64_t>(i) * shape_[1] + j]; }
  S at(int i, int j) const { return values_[static_cast<std::int64_t>(i) * shape_[1] + j]; }

  // 2-D matrix view of the flat storage; rows*cols must equal numel().
  Eigen::Map<MatrixRM> as_matrix(Eigen::Index rows, Eigen::Index cols) {
    if (rows * cols != values_.size()) throw shape_error("matrix view does not cover tensor of shape " + shape_str(shape_));
    return Eigen::Map<MatrixRM>(values_.data(), rows, cols);
  }
  Eigen::Map<const MatrixRM> as_matrix(Eigen::Index rows, Eigen::Index cols) const {
    if (rows * cols != values_.size()) throw shape_error("matrix view does not cover tensor of shape " + shape_str(shape_));
    return Eigen::Map<const MatrixRM>(values_.data(), rows, cols);
  }

  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != numel()) throw shape_error("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), values_);
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const { return values_.isFinite().all(); }

  // Optional gradient buffer mirroring the value shape.
  bool has_grad() const { return grad_.has_value(); }
  Array& grad() {
    if (!grad_) grad_.emplace(Array::Zero(values_.size()));
    return *grad_;
  }
  const Array& grad() const {
    if (!grad_) throw usage_error("tensor has no gradient buffer");
    return *grad_;
  }
  void set_grad(Array g) {
    if (g.size() != values_.size()) throw shape_error("gradient length does not match tensor");
    grad_ = std::move(g);
  }
  void clear_grad() { grad_.reset(); }

 private:
  Shape shape_;
  Array values_;
  std::optional<Array> grad_;
};

template <typename S>
bool bitwise_equal(const Tensor<S>& a, const Tensor<S>& b) {
  if (!a.same_shape(b)) return false;
  return std::memcmp(a.data(), b.data(), sizeof(S) * static_cast<size_t>(a.numel())) == 0;
}

template <typename S>
S max_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
  if (!a.same_shape(b)) throw shape_error("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  if (a.numel() == 0) return S(0);
  return (a.array() - b.array()).abs().maxCoeff();
}

}  // namespace ebn
