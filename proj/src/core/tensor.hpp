#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace medssl {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;

/// Extent of a C x H x W x S array.
struct Shape4 {
  int c = 0;
  int h = 0;
  int w = 0;
  int s = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(c) * h * w * s;
  }
  bool operator==(const Shape4&) const = default;
  std::string str() const;
};

/// Dense row-major rank-4 array indexed (c, h, w, s), s fastest.
class Tensor4 {
 public:
  Tensor4() = default;
  explicit Tensor4(Shape4 shape, double fill = 0.0)
      : shape_(shape), data_(shape.size(), fill) {}
  Tensor4(Shape4 shape, std::vector<double> data);

  const Shape4& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t index(int c, int h, int w, int s) const {
    return ((static_cast<std::size_t>(c) * shape_.h + h) * shape_.w + w) * shape_.s + s;
  }
  double& operator()(int c, int h, int w, int s) { return data_[index(c, h, w, s)]; }
  double operator()(int c, int h, int w, int s) const { return data_[index(c, h, w, s)]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool operator==(const Tensor4&) const = default;

 private:
  Shape4 shape_{};
  std::vector<double> data_;
};

}  // namespace medssl
