#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "sslf/rng.hpp"
#include "sslf/tensor.hpp"

namespace sslf {

enum class NormKind { kBatch, kGroup };

// Ordered, uniquely named tensor registry. `params` are trainable (gradient
// tracked, visited by the optimizer); `buffers` hold auxiliary state such as
// batch-norm running statistics and are persisted but never stepped.
template <class T>
struct ParamSet {
  std::vector<std::pair<std::string, TensorT<T>>> params;
  std::vector<std::pair<std::string, TensorT<T>>> buffers;

  TensorT<T>& add(const std::string& name, TensorT<T> t) {
    require(!contains(name), ErrorKind::Config, "duplicate parameter name: ", name);
    t.set_requires_grad(true);
    params.emplace_back(name, std::move(t));
    return params.back().second;
  }

  TensorT<T>& add_buffer(const std::string& name, TensorT<T> t) {
    require(!contains(name), ErrorKind::Config, "duplicate buffer name: ", name);
    buffers.emplace_back(name, std::move(t));
    return buffers.back().second;
  }

  bool contains(const std::string& name) const {
    for (const auto& [n, t] : params)
      if (n == name) return true;
    for (const auto& [n, t] : buffers)
      if (n == name) return true;
    return false;
  }

  TensorT<T>& get(const std::string& name) {
    for (auto& [n, t] : params)
      if (n == name) return t;
    for (auto& [n, t] : buffers)
      if (n == name) return t;
    fail(ErrorKind::Config, "unknown parameter: ", name);
  }

  const TensorT<T>& get(const std::string& name) const {
    return const_cast<ParamSet*>(this)->get(name);
  }

  void set_requires_grad(bool on) {
    for (auto& [n, t] : params) t.set_requires_grad(on);
  }

  void zero_grad() {
    for (auto& [n, t] : params) t.zero_grad();
  }

  std::size_t count_elements() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params) n += t.size();
    return n;
  }
};

// He-uniform init: U(-limit, limit) with limit = sqrt(6 / fan_in).
template <class T>
TensorT<T> he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  TensorT<T> t = TensorT<T>::zeros(std::move(shape));
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (std::size_t i = 0; i < t.size(); ++i)
    t.at(i) = static_cast<T>(rng.uniform(-limit, limit));
  return t;
}

}  // namespace sslf
