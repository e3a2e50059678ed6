#include "params.hpp"

#include "error.hpp"

namespace medssl {

int ParamStore::add(std::string name, std::vector<int> shape) {
  if (find(name) >= 0) throw ConfigError("duplicate parameter block '" + name + "'");
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ConfigError("parameter block '" + name + "' has a non-positive dimension");
    n *= static_cast<std::size_t>(d);
  }
  ParamBlock b{std::move(name), std::move(shape), values_.size(), n};
  values_.resize(values_.size() + n, 0.0);
  blocks_.push_back(std::move(b));
  return static_cast<int>(blocks_.size() - 1);
}

int ParamStore::find(const std::string& name) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    if (blocks_[i].name == name) return static_cast<int>(i);
  return -1;
}

}  // namespace medssl
