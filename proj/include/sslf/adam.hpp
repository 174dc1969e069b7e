#pragma once

#include <cmath>
#include <vector>

#include "sslf/model.hpp"

namespace sslf {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    require(learning_rate > 0, ErrorKind::Config, "learning_rate must be > 0");
    require(beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1, ErrorKind::Config,
            "adam betas must lie in (0,1)");
  }
};

// First/second moment buffers, one slot per parameter in registration order.
template <class T>
struct AdamStateT {
  std::vector<std::vector<T>> m, v;
  std::size_t t = 0;

  static AdamStateT for_params(const ParamSet<T>& params) {
    AdamStateT s;
    for (const auto& [name, p] : params.params) {
      s.m.emplace_back(p.size(), T(0));
      s.v.emplace_back(p.size(), T(0));
    }
    return s;
  }
};
using AdamState = AdamStateT<float>;

// One Adam update over every trainable parameter; frozen parameters
// (requires_grad off) are skipped. Gradients are read from each tensor's
// grad buffer:
//   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
//   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
template <class T>
void adam_step(ParamSet<T>& params, AdamStateT<T>& state, const AdamConfig& config) {
  config.validate();
  require(state.m.size() == params.params.size(), ErrorKind::Shape,
          "adam state holds ", state.m.size(), " slots for ", params.params.size(),
          " parameters");
  state.t += 1;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));
  for (std::size_t pi = 0; pi < params.params.size(); ++pi) {
    auto& p = params.params[pi].second;
    if (!p.requires_grad()) continue;
    require(state.m[pi].size() == p.size(), ErrorKind::Shape, "adam state slot ", pi,
            " has stale size");
    const auto& g = p.grad();
    auto& m = state.m[pi];
    auto& v = state.v[pi];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = static_cast<T>(config.beta1 * m[i] + (1.0 - config.beta1) * g[i]);
      v[i] = static_cast<T>(config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i]);
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p.at(i) -= static_cast<T>(config.learning_rate * m_hat / (std::sqrt(v_hat) + config.eps));
    }
  }
}

}  // namespace sslf
