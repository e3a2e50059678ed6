#pragma once

#include <string>
#include <vector>

#include "tensor.hpp"

namespace medssl {

struct ParamBlock {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t size = 0;

  int rows() const { return shape.size() == 1 ? 1 : shape[0]; }
  int cols() const { return shape.size() == 1 ? shape[0] : static_cast<int>(size / static_cast<std::size_t>(shape[0])); }
  bool operator==(const ParamBlock&) const = default;
};

/// Every trainable value of a model lives in one flat buffer; blocks are
/// named views into it. Gradients and optimizer moments share the layout.
class ParamStore {
 public:
  int add(std::string name, std::vector<int> shape);

  std::size_t size() const { return values_.size(); }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  const ParamBlock& block(int id) const { return blocks_.at(static_cast<std::size_t>(id)); }
  int find(const std::string& name) const;

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  MatrixMap matrix(int id) { return view(values_, block(id)); }
  ConstMatrixMap matrix(int id) const { return view(values_, block(id)); }

  bool same_layout(const ParamStore& other) const { return blocks_ == other.blocks_; }

  static MatrixMap view(std::vector<double>& buf, const ParamBlock& b) {
    return MatrixMap(buf.data() + b.offset, b.rows(), b.cols());
  }
  static ConstMatrixMap view(const std::vector<double>& buf, const ParamBlock& b) {
    return ConstMatrixMap(buf.data() + b.offset, b.rows(), b.cols());
  }

 private:
  std::vector<ParamBlock> blocks_;
  std::vector<double> values_;
};

/// Gradient buffer with the same layout as a ParamStore.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(const ParamStore& p) : layout_(&p), values_(p.size(), 0.0) {}

  MatrixMap matrix(int id) { return ParamStore::view(values_, layout_->block(id)); }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }
  void zero() { std::fill(values_.begin(), values_.end(), 0.0); }

 private:
  const ParamStore* layout_ = nullptr;
  std::vector<double> values_;
};

}  // namespace medssl
