#include "xai/core/tensor.hpp"

#include "xai/error.hpp"

#include <numeric>
#include <sstream>

namespace xai {

Index shape_size(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) {
    if (e < 0) throw ShapeError("negative extent in shape " + shape_string(shape));
    n *= e;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(Vector::Zero(shape_size(shape_))) {}

Tensor::Tensor(Shape shape, Vector data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_size(shape_)) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_string(shape_));
  }
}

Tensor Tensor::filled(Shape shape, double value) {
  Tensor t(std::move(shape));
  t.data_.setConstant(value);
  return t;
}

Eigen::Map<RowMatrix> Tensor::matrix(Index rows, Index cols) {
  if (rows * cols != size()) throw ShapeError("matrix view does not match tensor size");
  return {data_.data(), rows, cols};
}

Eigen::Map<const RowMatrix> Tensor::matrix(Index rows, Index cols) const {
  if (rows * cols != size()) throw ShapeError("matrix view does not match tensor size");
  return {data_.data(), rows, cols};
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != size()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

Vector& Tensor::grad() {
  if (!grad_) grad_ = Vector::Zero(data_.size());
  return *grad_;
}

const Vector& Tensor::grad() const {
  if (!grad_) throw Error("tensor has no gradient buffer");
  return *grad_;
}

void Tensor::zero_grad() {
  if (grad_) {
    grad_->setZero();
  } else {
    grad_ = Vector::Zero(data_.size());
  }
}

}  // namespace xai
