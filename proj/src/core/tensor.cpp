#include "tensor.hpp"

#include "error.hpp"

namespace medssl {

std::string Shape4::str() const {
  return std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w) + "x" +
         std::to_string(s);
}

Tensor4::Tensor4(Shape4 shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.size()) {
    throw ShapeError("tensor data has " + std::to_string(data_.size()) +
                     " values, shape " + shape_.str() + " needs " + std::to_string(shape_.size()));
  }
}

}  // namespace medssl
