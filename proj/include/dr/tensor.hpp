#pragma once

#include <Eigen/Core>
#include <cmath>
#include <initializer_list>
#include <span>
#include <type_traits>
#include <utility>
#include <vector>

#include "dr/common.hpp"

namespace dr {

/// Dense row-major n-dimensional array. The carrier of all data, parameters
/// and gradients; scalar type is float or double.
template <typename Scalar>
class Tensor {
  static_assert(std::is_floating_point_v<Scalar>);

 public:
  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), data_(numel(shape_), Scalar{0}) {}

  Tensor(Shape shape, std::vector<Scalar> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (numel(shape_) != data_.size())
      throw ShapeError("Tensor: shape " + shape_str(shape_) + " needs " +
                       std::to_string(numel(shape_)) + " values, got " +
                       std::to_string(data_.size()));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, Scalar v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  static Tensor ones(Shape shape) { return full(std::move(shape), Scalar{1}); }

  /// Rank-0 tensor holding a single value.
  static Tensor scalar(Scalar v) { return Tensor({}, {v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> values() { return data_; }
  std::span<const Scalar> values() const { return data_; }

  Scalar& operator[](std::size_t i) { return data_[i]; }
  Scalar operator[](std::size_t i) const { return data_[i]; }

  /// Value of a rank-0 / single-element tensor.
  Scalar item() const {
    if (data_.size() != 1)
      throw ContractError("Tensor::item on tensor of size " +
                          std::to_string(data_.size()));
    return data_[0];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  /// Same data, new shape (element count must match).
  Tensor reshaped(Shape shape) const {
    if (numel(shape) != data_.size())
      throw ShapeError("reshape: " + shape_str(shape_) + " -> " +
                       shape_str(shape) + " changes element count");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

  bool all_finite() const {
    for (Scalar v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool operator==(const Tensor& o) const {
    return shape_ == o.shape_ && data_ == o.data_;
  }

  template <typename Other>
  Tensor<Other> cast() const {
    std::vector<Other> d(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i)
      d[i] = static_cast<Other>(data_[i]);
    return Tensor<Other>(shape_, std::move(d));
  }

 private:
  Shape shape_;
  std::vector<Scalar> data_;
};

template <typename Scalar>
using MatrixMap =
    Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic,
                             Eigen::RowMajor>>;
template <typename Scalar>
using ConstMatrixMap =
    Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic,
                                   Eigen::RowMajor>>;
template <typename Scalar>
using ArrayMap = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
template <typename Scalar>
using ConstArrayMap = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;

/// View a rank-2 tensor as an Eigen row-major matrix.
template <typename Scalar>
MatrixMap<Scalar> as_matrix(Tensor<Scalar>& t) {
  return MatrixMap<Scalar>(t.data(), static_cast<Eigen::Index>(t.dim(0)),
                           static_cast<Eigen::Index>(t.dim(1)));
}

template <typename Scalar>
ConstMatrixMap<Scalar> as_matrix(const Tensor<Scalar>& t) {
  return ConstMatrixMap<Scalar>(t.data(), static_cast<Eigen::Index>(t.dim(0)),
                                static_cast<Eigen::Index>(t.dim(1)));
}

template <typename Scalar>
ArrayMap<Scalar> as_array(Tensor<Scalar>& t) {
  return ArrayMap<Scalar>(t.data(), static_cast<Eigen::Index>(t.size()));
}

template <typename Scalar>
ConstArrayMap<Scalar> as_array(const Tensor<Scalar>& t) {
  return ConstArrayMap<Scalar>(t.data(), static_cast<Eigen::Index>(t.size()));
}

}  // namespace dr
