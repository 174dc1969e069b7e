#pragma once

#include <cmath>
#include <vector>

#include "sslf/ops.hpp"
#include "sslf/tensor.hpp"

namespace sslf {

namespace detail {

// Shared backward for normalization over a contiguous-index set of M elements:
// dx = invstd/M * (M*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat)).
template <class T>
void norm_set_backward(const std::vector<std::size_t>& idx, T invstd, const std::vector<T>& xhat,
                       const std::vector<T>& dxhat, std::vector<T>& dx) {
  const T m = static_cast<T>(idx.size());
  T sum_d = T(0), sum_dx = T(0);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    sum_d += dxhat[i];
    sum_dx += dxhat[i] * xhat[idx[i]];
  }
  for (std::size_t i = 0; i < idx.size(); ++i)
    dx[idx[i]] += invstd / m * (m * dxhat[i] - sum_d - xhat[idx[i]] * sum_dx);
}

}  // namespace detail

// Batch normalization over [N,C,H,W] with per-channel gamma/beta. In training
// mode statistics come from the batch and the running buffers are updated in
// place: running <- momentum*running + (1-momentum)*batch. Eval mode
// normalizes with the running buffers.
template <class T>
TensorT<T> batch_norm2d(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                        TensorT<T>& running_mean, TensorT<T>& running_var, bool training,
                        T momentum, T eps, Tape<T>* tape = nullptr) {
  require(x.rank() == 4, ErrorKind::Shape, "batch_norm2d: input must be [N,C,H,W], got ",
          shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  require(gamma.size() == c && beta.size() == c && running_mean.size() == c &&
              running_var.size() == c,
          ErrorKind::Shape, "batch_norm2d: parameter size must equal channel count ", c);
  const std::size_t m = n * hw;

  std::vector<T> mean(c), invstd(c);
  if (training) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      T mu = T(0);
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t i = 0; i < hw; ++i) mu += x.at((s * c + ch) * hw + i);
      mu /= static_cast<T>(m);
      T var = T(0);
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t i = 0; i < hw; ++i) {
          const T d = x.at((s * c + ch) * hw + i) - mu;
          var += d * d;
        }
      var /= static_cast<T>(m);
      mean[ch] = mu;
      invstd[ch] = T(1) / std::sqrt(var + eps);
      running_mean.at(ch) = momentum * running_mean.at(ch) + (T(1) - momentum) * mu;
      running_var.at(ch) = momentum * running_var.at(ch) + (T(1) - momentum) * var;
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = running_mean.at(ch);
      invstd[ch] = T(1) / std::sqrt(running_var.at(ch) + eps);
    }
  }

  const bool tracked = tape != nullptr && (x.requires_grad() || gamma.requires_grad() ||
                                           beta.requires_grad());
  TensorT<T> out = detail::op_output<T>(x.shape(), tracked);
  std::vector<T> xhat(x.size());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t i = 0; i < hw; ++i) {
        const std::size_t idx = (s * c + ch) * hw + i;
        xhat[idx] = (x.at(idx) - mean[ch]) * invstd[ch];
        out.at(idx) = gamma.at(ch) * xhat[idx] + beta.at(ch);
      }

  if (tracked) {
    auto xo = x.storage(), go = gamma.storage(), bo = beta.storage(), oo = out.storage();
    tape->record(out, [xo, go, bo, oo, xhat = std::move(xhat), mean, invstd, n, c, hw, m,
                       training] {
      for (std::size_t ch = 0; ch < c; ++ch) {
        T dgamma = T(0), dbeta = T(0), sum_d = T(0), sum_dx = T(0);
        for (std::size_t s = 0; s < n; ++s)
          for (std::size_t i = 0; i < hw; ++i) {
            const std::size_t idx = (s * c + ch) * hw + i;
            const T dy = oo->grad[idx];
            dgamma += dy * xhat[idx];
            dbeta += dy;
            const T dxh = dy * go->values[ch];
            sum_d += dxh;
            sum_dx += dxh * xhat[idx];
          }
        if (go->requires_grad) go->grad[ch] += dgamma;
        if (bo->requires_grad) bo->grad[ch] += dbeta;
        if (xo->requires_grad) {
          const T mm = static_cast<T>(m);
          for (std::size_t s = 0; s < n; ++s)
            for (std::size_t i = 0; i < hw; ++i) {
              const std::size_t idx = (s * c + ch) * hw + i;
              const T dxh = oo->grad[idx] * go->values[ch];
              if (training)
                xo->grad[idx] += invstd[ch] / mm * (mm * dxh - sum_d - xhat[idx] * sum_dx);
              else
                xo->grad[idx] += dxh * invstd[ch];
            }
        }
      }
    });
  }
  return out;
}

// Group normalization over [N,C,H,W]; statistics per (sample, group),
// gamma/beta per channel. Batch-size independent.
template <class T>
TensorT<T> group_norm2d(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                        std::size_t groups, T eps, Tape<T>* tape = nullptr) {
  require(x.rank() == 4, ErrorKind::Shape, "group_norm2d: input must be [N,C,H,W], got ",
          shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  require(groups >= 1 && c % groups == 0, ErrorKind::Shape, "group_norm2d: groups ", groups,
          " must divide channels ", c);
  require(gamma.size() == c && beta.size() == c, ErrorKind::Shape,
          "group_norm2d: parameter size must equal channel count ", c);
  const std::size_t cg = c / groups, m = cg * hw;

  const bool tracked = tape != nullptr && (x.requires_grad() || gamma.requires_grad() ||
                                           beta.requires_grad());
  TensorT<T> out = detail::op_output<T>(x.shape(), tracked);
  std::vector<T> xhat(x.size()), invstd(n * groups);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t g = 0; g < groups; ++g) {
      T mu = T(0);
      for (std::size_t cc = 0; cc < cg; ++cc)
        for (std::size_t i = 0; i < hw; ++i) mu += x.at((s * c + g * cg + cc) * hw + i);
      mu /= static_cast<T>(m);
      T var = T(0);
      for (std::size_t cc = 0; cc < cg; ++cc)
        for (std::size_t i = 0; i < hw; ++i) {
          const T d = x.at((s * c + g * cg + cc) * hw + i) - mu;
          var += d * d;
        }
      var /= static_cast<T>(m);
      const T is = T(1) / std::sqrt(var + eps);
      invstd[s * groups + g] = is;
      for (std::size_t cc = 0; cc < cg; ++cc)
        for (std::size_t i = 0; i < hw; ++i) {
          const std::size_t idx = (s * c + g * cg + cc) * hw + i;
          xhat[idx] = (x.at(idx) - mu) * is;
          out.at(idx) = gamma.at(g * cg + cc) * xhat[idx] + beta.at(g * cg + cc);
        }
    }

  if (tracked) {
    auto xo = x.storage(), go = gamma.storage(), bo = beta.storage(), oo = out.storage();
    tape->record(out, [xo, go, bo, oo, xhat = std::move(xhat), invstd, n, c, hw, groups, cg, m] {
      // gamma/beta reductions run over all samples per channel.
      for (std::size_t ch = 0; ch < c; ++ch) {
        T dgamma = T(0), dbeta = T(0);
        for (std::size_t s = 0; s < n; ++s)
          for (std::size_t i = 0; i < hw; ++i) {
            const std::size_t idx = (s * c + ch) * hw + i;
            dgamma += oo->grad[idx] * xhat[idx];
            dbeta += oo->grad[idx];
          }
        if (go->requires_grad) go->grad[ch] += dgamma;
        if (bo->requires_grad) bo->grad[ch] += dbeta;
      }
      if (xo->requires_grad) {
        const T mm = static_cast<T>(m);
        for (std::size_t s = 0; s < n; ++s)
          for (std::size_t g = 0; g < groups; ++g) {
            T sum_d = T(0), sum_dx = T(0);
            for (std::size_t cc = 0; cc < cg; ++cc)
              for (std::size_t i = 0; i < hw; ++i) {
                const std::size_t idx = (s * c + g * cg + cc) * hw + i;
                const T dxh = oo->grad[idx] * go->values[g * cg + cc];
                sum_d += dxh;
                sum_dx += dxh * xhat[idx];
              }
            const T is = invstd[s * groups + g];
            for (std::size_t cc = 0; cc < cg; ++cc)
              for (std::size_t i = 0; i < hw; ++i) {
                const std::size_t idx = (s * c + g * cg + cc) * hw + i;
                const T dxh = oo->grad[idx] * go->values[g * cg + cc];
                xo->grad[idx] += is / mm * (mm * dxh - sum_d - xhat[idx] * sum_dx);
              }
          }
      }
    });
  }
  return out;
}

}  // namespace sslf
