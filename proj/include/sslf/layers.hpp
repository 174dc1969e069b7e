#pragma once

#include <numeric>
#include <string>

#include "sslf/model.hpp"
#include "sslf/norm.hpp"
#include "sslf/ops.hpp"

// Parameter-set-backed layer helpers shared by the model builders. A layer is
// a naming convention over a ParamSet: `add_*` registers tensors at build
// time, `apply_*` fetches them by the same name at forward time.

namespace sslf {

template <class T>
void add_conv(ParamSet<T>& ps, const std::string& name, std::size_t filters,
              std::size_t in_per_group, std::size_t kh, std::size_t kw, Rng& rng,
              bool bias = true) {
  ps.add(name + ".w", he_uniform<T>({filters, in_per_group, kh, kw}, in_per_group * kh * kw, rng));
  if (bias) ps.add(name + ".b", TensorT<T>::zeros({filters}));
}

template <class T>
TensorT<T> apply_conv(ParamSet<T>& ps, const std::string& name, const TensorT<T>& x,
                      std::size_t stride, Padding padding, Tape<T>* tape,
                      std::size_t groups = 1) {
  const TensorT<T>& w = ps.get(name + ".w");
  TensorT<T> b = ps.contains(name + ".b") ? ps.get(name + ".b") : TensorT<T>();
  return conv2d(x, w, b, stride, padding, tape, groups);
}

template <class T>
void add_norm(ParamSet<T>& ps, const std::string& name, std::size_t channels) {
  ps.add(name + ".gamma", TensorT<T>::filled({channels}, T(1)));
  ps.add(name + ".beta", TensorT<T>::zeros({channels}));
  ps.add_buffer(name + ".running_mean", TensorT<T>::zeros({channels}));
  ps.add_buffer(name + ".running_var", TensorT<T>::filled({channels}, T(1)));
}

// Largest divisor of `channels` that is <= requested group count.
inline std::size_t fit_groups(std::size_t channels, std::size_t requested) {
  std::size_t g = std::min(channels, requested);
  while (channels % g != 0) --g;
  return g;
}

template <class T>
TensorT<T> apply_norm(ParamSet<T>& ps, const std::string& name, const TensorT<T>& x,
                      NormKind kind, bool training, Tape<T>* tape) {
  const TensorT<T>& gamma = ps.get(name + ".gamma");
  const TensorT<T>& beta = ps.get(name + ".beta");
  if (kind == NormKind::kBatch) {
    TensorT<T>& rm = ps.get(name + ".running_mean");
    TensorT<T>& rv = ps.get(name + ".running_var");
    return batch_norm2d(x, gamma, beta, rm, rv, training, T(0.9), T(1e-5), tape);
  }
  return group_norm2d(x, gamma, beta, fit_groups(x.dim(1), 8), T(1e-5), tape);
}

template <class T>
void add_dense(ParamSet<T>& ps, const std::string& name, std::size_t in, std::size_t out,
               Rng& rng, bool bias = true) {
  ps.add(name + ".w", he_uniform<T>({in, out}, in, rng));
  if (bias) ps.add(name + ".b", TensorT<T>::zeros({out}));
}

template <class T>
TensorT<T> apply_dense(ParamSet<T>& ps, const std::string& name, const TensorT<T>& x,
                       Tape<T>* tape) {
  const TensorT<T>& w = ps.get(name + ".w");
  TensorT<T> b = ps.contains(name + ".b") ? ps.get(name + ".b") : TensorT<T>();
  return linear(x, w, b, tape);
}

}  // namespace sslf
