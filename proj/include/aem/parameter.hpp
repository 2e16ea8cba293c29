#pragma once

#include <map>
#include <string>
#include <vector>

#include "aem/tensor.hpp"

namespace aem {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
  bool trainable = true;
};

/// Named parameters in registration order. Names are unique.
template <typename T>
class ParameterSet {
 public:
  Tensor<T> add(const std::string& name, Tensor<T> tensor, bool trainable = true) {
    if (by_name_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    tensor.set_requires_grad(trainable);
    by_name_[name] = params_.size();
    params_.push_back(Parameter<T>{name, tensor, trainable});
    return tensor;
  }

  bool contains(const std::string& name) const { return by_name_.count(name) > 0; }
  const Parameter<T>& get(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw std::out_of_range("no parameter named " + name);
    return params_[it->second];
  }
  Parameter<T>& get(const std::string& name) {
    return const_cast<Parameter<T>&>(static_cast<const ParameterSet&>(*this).get(name));
  }

  std::vector<Parameter<T>>& items() { return params_; }
  const std::vector<Parameter<T>>& items() const { return params_; }
  std::size_t size() const { return params_.size(); }
  bool empty() const { return params_.empty(); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.name);
    return out;
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

 private:
  std::vector<Parameter<T>> params_;
  std::map<std::string, std::size_t> by_name_;
};

template <typename T>
Index count_parameters(const ParameterSet<T>& params) {
  Index n = 0;
  for (const auto& p : params.items()) n += p.tensor.numel();
  return n;
}

}  // namespace aem
