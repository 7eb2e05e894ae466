#pragma once

#include <Eigen/Dense>

#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

namespace xai {

using Index = Eigen::Index;

template <typename Scalar>
using RowMatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using RowMatrix = RowMatrixT<double>;
using Vector = VectorT<double>;

using Shape = std::vector<Index>;

Index shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major n-d array of doubles. Images are (H, W, C), channels last.
///
/// The optional gradient buffer always mirrors the data shape; it is used for
/// parameter accumulation during training.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, Vector data);
  Tensor(std::initializer_list<Index> shape) : Tensor(Shape(shape)) {}

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor filled(Shape shape, double value);

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return data_.size(); }

  Vector& data() { return data_; }
  const Vector& data() const { return data_; }

  double& operator[](Index flat) { return data_[flat]; }
  double operator[](Index flat) const { return data_[flat]; }

  /// Element access for rank-3 (H, W, C) tensors.
  double& at(Index h, Index w, Index c) { return data_[(h * shape_[1] + w) * shape_[2] + c]; }
  double at(Index h, Index w, Index c) const { return data_[(h * shape_[1] + w) * shape_[2] + c]; }

  /// Row-major matrix view with the given dimensions; rows * cols must equal size().
  Eigen::Map<RowMatrix> matrix(Index rows, Index cols);
  Eigen::Map<const RowMatrix> matrix(Index rows, Index cols) const;

  /// Same data, new shape of identical element count.
  Tensor reshaped(Shape shape) const;

  bool has_grad() const { return grad_.has_value(); }
  Vector& grad();
  const Vector& grad() const;
  void zero_grad();
  void drop_grad() { grad_.reset(); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  Vector data_;
  std::optional<Vector> grad_;
};

}  // namespace xai
