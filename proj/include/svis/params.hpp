#pragma once

// Named parameter registry shared by the model, the optimizer and the
// checkpoint writer. Iteration order is the lexicographic name order, which
// keeps optimizer updates and serialization deterministic.

#include <map>
#include <string>

#include "svis/tensor.hpp"

namespace svis {

class ParamStore {
 public:
  Tensor create_gaussian(const std::string& name, const Shape& shape,
                         double stddev, Rng& rng) {
    Tensor t = Tensor::gaussian(shape, stddev, rng, /*requires_grad=*/true);
    insert(name, t);
    return t;
  }
  Tensor create_full(const std::string& name, const Shape& shape, double v) {
    Tensor t = Tensor::full(shape, v, /*requires_grad=*/true);
    insert(name, t);
    return t;
  }

  void insert(const std::string& name, const Tensor& t) {
    require(!params_.count(name), "duplicate parameter name: " + name);
    params_.emplace(name, t);
  }

  const Tensor& get(const std::string& name) const {
    auto it = params_.find(name);
    require(it != params_.end(), "unknown parameter: " + name);
    return it->second;
  }
  bool has(const std::string& name) const { return params_.count(name) > 0; }

  std::map<std::string, Tensor>& all() { return params_; }
  const std::map<std::string, Tensor>& all() const { return params_; }
  size_t size() const { return params_.size(); }

 private:
  std::map<std::string, Tensor> params_;
};

}  // namespace svis
