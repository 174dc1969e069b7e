#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "sslf/rng.hpp"
#include "sslf/tensor.hpp"

// Differentiable tensor operations. Every op takes an optional Tape*; when a
// tape is supplied and an operand tracks gradients, a backward closure is
// recorded. With a null tape the op is a pure forward computation.

namespace sslf {

enum class Padding { kValid, kSame };
enum class PoolKind { kMax, kAvg };

namespace detail {

template <class T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using EMap = Eigen::Map<EMat<T>>;
template <class T>
using ECMap = Eigen::Map<const EMat<T>>;

template <class T>
bool track(const Tape<T>* tape, const TensorT<T>& a) {
  return tape != nullptr && a.requires_grad();
}
template <class T>
bool track(const Tape<T>* tape, const TensorT<T>& a, const TensorT<T>& b) {
  return tape != nullptr && (a.requires_grad() || b.requires_grad());
}

template <class T>
TensorT<T> op_output(Shape shape, bool tracked) {
  TensorT<T> out = TensorT<T>::zeros(std::move(shape), tracked);
  if (tracked) out.mark_produced();
  return out;
}

template <class T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
  require(a.shape() == b.shape(), ErrorKind::Shape, op, ": shapes differ, ", shape_str(a.shape()),
          " vs ", shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b, Tape<T>* tape = nullptr) {
  detail::check_same_shape(a, b, "add");
  const bool tracked = detail::track(tape, a, b);
  TensorT<T> out = detail::op_output<T>(a.shape(), tracked);
  for (std::size_t i = 0; i < a.size(); ++i) out.at(i) = a.at(i) + b.at(i);
  if (tracked) {
    auto ao = a.storage(), bo = b.storage(), oo = out.storage();
    tape->record(out, [ao, bo, oo] {
      for (std::size_t i = 0; i < oo->grad.size(); ++i) {
        if (ao->requires_grad) ao->grad[i] += oo->grad[i];
        if (bo->requires_grad) bo->grad[i] += oo->grad[i];
      }
    });
  }
  return out;
}

template <class T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b, Tape<T>* tape = nullptr) {
  detail::check_same_shape(a, b, "sub");
  const bool tracked = detail::track(tape, a, b);
  TensorT<T> out = detail::op_output<T>(a.shape(), tracked);
  for (std::size_t i = 0; i < a.size(); ++i) out.at(i) = a.at(i) - b.at(i);
  if (tracked) {
    auto ao = a.storage(), bo = b.storage(), oo = out.storage();
    tape->record(out, [ao, bo, oo] {
      for (std::size_t i = 0; i < oo->grad.size(); ++i) {
        if (ao->requires_grad) ao->grad[i] += oo->grad[i];
        if (bo->requires_grad) bo->grad[i] -= oo->grad[i];
      }
    });
  }
  return out;
}

template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b, Tape<T>* tape = nullptr) {
  detail::check_same_shape(a, b, "mul");
  const bool tracked = detail::track(tape, a, b);
  TensorT<T> out = detail::op_output<T>(a.shape(), tracked);
  for (std::size_t i = 0; i < a.size(); ++i) out.at(i) = a.at(i) * b.at(i);
  if (tracked) {
    auto ao = a.storage(), bo = b.storage(), oo = out.storage();
    tape->record(out, [ao, bo, oo] {
      for (std::size_t i = 0; i < oo->grad.size(); ++i) {
        if (ao->requires_grad) ao->grad[i] += oo->grad[i] * bo->values[i];
        if (bo->requires_grad) bo->grad[i] += oo->grad[i] * ao->values[i];
      }
    });
  }
  return out;
}

template <class T>
TensorT<T> div(const TensorT<T>& a, const TensorT<T>& b, Tape<T>* tape = nullptr) {
  detail::check_same_shape(a, b, "div");
  for (std::size_t i = 0; i < b.size(); ++i)
    require(b.at(i) != T(0), ErrorKind::Domain, "div: divisor element ", i, " is zero");
  const bool tracked = detail::track(tape, a, b);
  TensorT<T> out = detail::op_output<T>(a.shape(), tracked);
  for (std::size_t i = 0; i < a.size(); ++i) out.at(i) = a.at(i) / b.at(i);
  if (tracked) {
    auto ao = a.storage(), bo = b.storage(), oo = out.storage();
    tape->record(out, [ao, bo, oo] {
      for (std::size_t i = 0; i < oo->grad.size(); ++i) {
        const T inv = T(1) / bo->values[i];
        if (ao->requires_grad) ao->grad[i] += oo->grad[i] * inv;
        if (bo->requires_grad) bo->grad[i] -= oo->grad[i] * ao->values[i] * inv * inv;
      }
    });
  }
  return out;
}

// Scalar variants.
template <class T>
TensorT<T> add_scalar(const TensorT<T>& a, T c, Tape<T>* tape = nullptr) {
  const bool tracked = detail::track(tape, a);
  TensorT<T> out = detail::op_output<T>(a.shape(), tracked);
  for (std::size_t i = 0; i < a.size(); ++i) out.at(i) = a.at(i) + c;
  if (tracked) {
    auto ao = a.storage(), oo = out.storage();
    tape->record(out, [ao, oo] {
      for (std::size_t i = 0; i < oo->grad.size(); ++i) ao->grad[i] += oo->grad[i];
    });
  }
  return out;
}

template <class T>
TensorT<T> mul_scalar(const TensorT<T>& a, T c, Tape<T>* tape = nullptr) {
  const bool tracked = detail::track(tape, a);
  TensorT<T> out = detail::op_output<T>(a.shape(), tracked);
  for (std::size_t i = 0; i < a.size(); ++i) out.at(i) = a.at(i) * c;
  if (tracked) {
    auto ao = a.storage(), oo = out.storage();
    tape->record(out, [ao, oo, c] {
      for (std::size_t i = 0; i < oo->grad.size(); ++i) ao->grad[i] += oo->grad[i] * c;
    });
  }
  return out;
}

template <class T>
TensorT<T> relu(const TensorT<T>& a, Tape<T>* tape = nullptr) {
  const bool tracked = detail::track(tape, a);
  TensorT<T> out = detail::op_output<T>(a.shape(), tracked);
  for (std::size_t i = 0; i < a.size(); ++i) out.at(i) = a.at(i) > T(0) ? a.at(i) : T(0);
  if (tracked) {
    auto ao = a.storage(), oo = out.storage();
    tape->record(out, [ao, oo] {
      for (std::size_t i = 0; i < oo->grad.size(); ++i)
        if (ao->values[i] > T(0)) ao->grad[i] += oo->grad[i];
    });
  }
  return out;
}

template <class T>
TensorT<T> sigmoid(const TensorT<T>& a, Tape<T>* tape = nullptr) {
  const bool tracked = detail::track(tape, a);
  TensorT<T> out = detail::op_output<T>(a.shape(), tracked);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T x = a.at(i);
    out.at(i) = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                          : std::exp(x) / (T(1) + std::exp(x));
  }
  if (tracked) {
    auto ao = a.storage(), oo = out.storage();
    tape->record(out, [ao, oo] {
      for (std::size_t i = 0; i < oo->grad.size(); ++i) {
        const T y = oo->values[i];
        ao->grad[i] += oo->grad[i] * y * (T(1) - y);
      }
    });
  }
  return out;
}

template <class T>
TensorT<T> exp(const TensorT<T>& a, Tape<T>* tape = nullptr) {
  const bool tracked = detail::track(tape, a);
  TensorT<T> out = detail::op_output<T>(a.shape(), tracked);
  for (std::size_t i = 0; i < a.size(); ++i) out.at(i) = std::exp(a.at(i));
  if (tracked) {
    auto ao = a.storage(), oo = out.storage();
    tape->record(out, [ao, oo] {
      for (std::size_t i = 0; i < oo->grad.size(); ++i) ao->grad[i] += oo->grad[i] * oo->values[i];
    });
  }
  return out;
}

template <class T>
TensorT<T> log(const TensorT<T>& a, Tape<T>* tape = nullptr) {
  for (std::size_t i = 0; i < a.size(); ++i)
    require(a.at(i) > T(0), ErrorKind::Domain, "log: element ", i, " is non-positive (", a.at(i), ")");
  const bool tracked = detail::track(tape, a);
  TensorT<T> out = detail::op_output<T>(a.shape(), tracked);
  for (std::size_t i = 0; i < a.size(); ++i) out.at(i) = std::log(a.at(i));
  if (tracked) {
    auto ao = a.storage(), oo = out.storage();
    tape->record(out, [ao, oo] {
      for (std::size_t i = 0; i < oo->grad.size(); ++i) ao->grad[i] += oo->grad[i] / ao->values[i];
    });
  }
  return out;
}

template <class T>
TensorT<T> square(const TensorT<T>& a, Tape<T>* tape = nullptr) {
  const bool tracked = detail::track(tape, a);
  TensorT<T> out = detail::op_output<T>(a.shape(), tracked);
  for (std::size_t i = 0; i < a.size(); ++i) out.at(i) = a.at(i) * a.at(i);
  if (tracked) {
    auto ao = a.storage(), oo = out.storage();
    tape->record(out, [ao, oo] {
      for (std::size_t i = 0; i < oo->grad.size(); ++i)
        ao->grad[i] += oo->grad[i] * T(2) * ao->values[i];
    });
  }
  return out;
}

// x * sigmoid(x), the backbone activation.
template <class T>
TensorT<T> silu(const TensorT<T>& a, Tape<T>* tape = nullptr) {
  return mul(a, sigmoid(a, tape), tape);
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b, Tape<T>* tape = nullptr) {
  require(a.rank() == 2 && b.rank() == 2, ErrorKind::Shape, "matmul expects rank-2 tensors, got ",
          shape_str(a.shape()), " and ", shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, ErrorKind::Shape, "matmul: inner dimensions differ, ",
          shape_str(a.shape()), " x ", shape_str(b.shape()));
  const bool tracked = detail::track(tape, a, b);
  TensorT<T> out = detail::op_output<T>({m, n}, tracked);
  detail::ECMap<T> A(a.data(), m, k), B(b.data(), k, n);
  detail::EMap<T>(out.data(), m, n).noalias() = A * B;
  if (tracked) {
    auto ao = a.storage(), bo = b.storage(), oo = out.storage();
    tape->record(out, [ao, bo, oo, m, k, n] {
      detail::ECMap<T> A(ao->values.data(), m, k), B(bo->values.data(), k, n);
      detail::ECMap<T> G(oo->grad.data(), m, n);
      if (ao->requires_grad) detail::EMap<T>(ao->grad.data(), m, k).noalias() += G * B.transpose();
      if (bo->requires_grad) detail::EMap<T>(bo->grad.data(), k, n).noalias() += A.transpose() * G;
    });
  }
  return out;
}

// y = x * w + b with b broadcast over rows. b may be undefined for no bias.
template <class T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                  Tape<T>* tape = nullptr) {
  require(x.rank() == 2 && w.rank() == 2 && x.dim(1) == w.dim(0), ErrorKind::Shape,
          "linear: incompatible shapes ", shape_str(x.shape()), " x ", shape_str(w.shape()));
  const std::size_t n = x.dim(0), d = x.dim(1), m = w.dim(1);
  const bool has_bias = b.defined();
  if (has_bias)
    require(b.rank() == 1 && b.dim(0) == m, ErrorKind::Shape, "linear: bias shape ",
            shape_str(b.shape()), " does not match output width ", m);
  bool tracked = detail::track(tape, x, w) || (has_bias && detail::track(tape, b));
  TensorT<T> out = detail::op_output<T>({n, m}, tracked);
  detail::ECMap<T> X(x.data(), n, d), W(w.data(), d, m);
  detail::EMap<T> O(out.data(), n, m);
  O.noalias() = X * W;
  if (has_bias) O.rowwise() += Eigen::Map<const Eigen::RowVectorX<T>>(b.data(), m);
  if (tracked) {
    auto xo = x.storage(), wo = w.storage(), oo = out.storage();
    auto bo = has_bias ? b.storage() : nullptr;
    tape->record(out, [xo, wo, bo, oo, n, d, m] {
      detail::ECMap<T> X(xo->values.data(), n, d), W(wo->values.data(), d, m);
      detail::ECMap<T> G(oo->grad.data(), n, m);
      if (xo->requires_grad) detail::EMap<T>(xo->grad.data(), n, d).noalias() += G * W.transpose();
      if (wo->requires_grad) detail::EMap<T>(wo->grad.data(), d, m).noalias() += X.transpose() * G;
      if (bo && bo->requires_grad)
        Eigen::Map<Eigen::RowVectorX<T>>(bo->grad.data(), m) += G.colwise().sum();
    });
  }
  return out;
}

template <class T>
TensorT<T> transpose(const TensorT<T>& a, Tape<T>* tape = nullptr) {
  require(a.rank() == 2, ErrorKind::Shape, "transpose expects rank-2, got ", shape_str(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  const bool tracked = detail::track(tape, a);
  TensorT<T> out = detail::op_output<T>({n, m}, tracked);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j * m + i) = a.at(i * n + j);
  if (tracked) {
    auto ao = a.storage(), oo = out.storage();
    tape->record(out, [ao, oo, m, n] {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ao->grad[i * n + j] += oo->grad[j * m + i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> reshape(const TensorT<T>& a, Shape new_shape, Tape<T>* tape = nullptr) {
  require(shape_numel(new_shape) == a.size(), ErrorKind::Shape, "reshape: cannot view ",
          shape_str(a.shape()), " as ", shape_str(new_shape));
  const bool tracked = detail::track(tape, a);
  TensorT<T> out = detail::op_output<T>(std::move(new_shape), tracked);
  out.values() = a.values();
  if (tracked) {
    auto ao = a.storage(), oo = out.storage();
    tape->record(out, [ao, oo] {
      for (std::size_t i = 0; i < oo->grad.size(); ++i) ao->grad[i] += oo->grad[i];
    });
  }
  return out;
}

template <class T>
TensorT<T> concat(const std::vector<TensorT<T>>& parts, std::size_t axis, Tape<T>* tape = nullptr) {
  require(!parts.empty(), ErrorKind::Shape, "concat: no inputs");
  const Shape& s0 = parts[0].shape();
  require(axis < s0.size(), ErrorKind::Shape, "concat: axis ", axis, " out of range for rank ",
          s0.size());
  std::size_t axis_total = 0;
  for (const auto& p : parts) {
    require(p.rank() == s0.size(), ErrorKind::Shape, "concat: rank mismatch");
    for (std::size_t d = 0; d < s0.size(); ++d)
      require(d == axis || p.dim(d) == s0[d], ErrorKind::Shape,
              "concat: shape mismatch off the concat axis: ", shape_str(p.shape()), " vs ",
              shape_str(s0));
    axis_total += p.dim(axis);
  }
  Shape out_shape = s0;
  out_shape[axis] = axis_total;
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s0[d];
  for (std::size_t d = axis + 1; d < s0.size(); ++d) inner *= s0[d];

  bool tracked = false;
  for (const auto& p : parts) tracked = tracked || detail::track(tape, p);
  TensorT<T> out = detail::op_output<T>(out_shape, tracked);
  const std::size_t out_stride = axis_total * inner;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t block = p.dim(axis) * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p.data() + o * block, block, out.data() + o * out_stride + offset);
    offset += block;
  }
  if (tracked) {
    std::vector<std::shared_ptr<TensorStorage<T>>> srcs;
    std::vector<std::size_t> blocks;
    for (const auto& p : parts) {
      srcs.push_back(p.storage());
      blocks.push_back(p.dim(axis) * inner);
    }
    auto oo = out.storage();
    tape->record(out, [srcs, blocks, oo, outer, out_stride] {
      std::size_t offset = 0;
      for (std::size_t pi = 0; pi < srcs.size(); ++pi) {
        if (srcs[pi]->requires_grad)
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < blocks[pi]; ++i)
              srcs[pi]->grad[o * blocks[pi] + i] += oo->grad[o * out_stride + offset + i];
        offset += blocks[pi];
      }
    });
  }
  return out;
}

template <class T>
TensorT<T> slice(const TensorT<T>& a, std::size_t axis, std::size_t start, std::size_t len,
                 Tape<T>* tape = nullptr) {
  require(axis < a.rank(), ErrorKind::Shape, "slice: axis out of range");
  require(start + len <= a.dim(axis) && len > 0, ErrorKind::Shape, "slice: range [", start, ",",
          start + len, ") exceeds dim ", a.dim(axis));
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= a.dim(d);
  for (std::size_t d = axis + 1; d < a.rank(); ++d) inner *= a.dim(d);
  Shape out_shape = a.shape();
  out_shape[axis] = len;
  const bool tracked = detail::track(tape, a);
  TensorT<T> out = detail::op_output<T>(out_shape, tracked);
  const std::size_t in_stride = a.dim(axis) * inner, block = len * inner;
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(a.data() + o * in_stride + start * inner, block, out.data() + o * block);
  if (tracked) {
    auto ao = a.storage(), oo = out.storage();
    tape->record(out, [ao, oo, outer, inner, in_stride, block, start] {
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < block; ++i)
          ao->grad[o * in_stride + start * inner + i] += oo->grad[o * block + i];
    });
  }
  return out;
}

template <class T>
TensorT<T> sum_all(const TensorT<T>& a, Tape<T>* tape = nullptr) {
  const bool tracked = detail::track(tape, a);
  TensorT<T> out = detail::op_output<T>({1}, tracked);
  T acc = T(0);
  for (std::size_t i = 0; i < a.size(); ++i) acc += a.at(i);
  out.at(0) = acc;
  if (tracked) {
    auto ao = a.storage(), oo = out.storage();
    tape->record(out, [ao, oo] {
      for (std::size_t i = 0; i < ao->grad.size(); ++i) ao->grad[i] += oo->grad[0];
    });
  }
  return out;
}

template <class T>
TensorT<T> mean_all(const TensorT<T>& a, Tape<T>* tape = nullptr) {
  return mul_scalar(sum_all(a, tape), T(1) / static_cast<T>(a.size()), tape);
}

// ---------------------------------------------------------------------------
// Convolution / pooling / upsampling
// ---------------------------------------------------------------------------

namespace detail {

struct ConvGeom {
  std::size_t out_h, out_w;
  std::size_t pad_top, pad_left;
};

inline ConvGeom conv_geometry(std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
                              std::size_t stride, Padding padding) {
  ConvGeom g{};
  if (padding == Padding::kValid) {
    require(kh <= h && kw <= w, ErrorKind::Shape, "conv2d: kernel ", kh, "x", kw,
            " larger than input ", h, "x", w, " with valid padding");
    g.out_h = (h - kh) / stride + 1;
    g.out_w = (w - kw) / stride + 1;
    g.pad_top = g.pad_left = 0;
  } else {
    g.out_h = (h + stride - 1) / stride;
    g.out_w = (w + stride - 1) / stride;
    const std::size_t need_h = (g.out_h - 1) * stride + kh;
    const std::size_t need_w = (g.out_w - 1) * stride + kw;
    const std::size_t pad_h = need_h > h ? need_h - h : 0;
    const std::size_t pad_w = need_w > w ? need_w - w : 0;
    g.pad_top = pad_h / 2;
    g.pad_left = pad_w / 2;
  }
  return g;
}

// Gather one sample's group into a [cg*kh*kw, out_h*out_w] column matrix.
template <class T>
void im2col(const T* src, std::size_t h, std::size_t w, std::size_t cg, std::size_t kh,
            std::size_t kw, std::size_t stride, const ConvGeom& g, T* cols) {
  const std::size_t ohw = g.out_h * g.out_w;
  for (std::size_t c = 0; c < cg; ++c)
    for (std::size_t ki = 0; ki < kh; ++ki)
      for (std::size_t kj = 0; kj < kw; ++kj) {
        T* row = cols + ((c * kh + ki) * kw + kj) * ohw;
        for (std::size_t oi = 0; oi < g.out_h; ++oi) {
          const long yi = static_cast<long>(oi * stride + ki) - static_cast<long>(g.pad_top);
          for (std::size_t oj = 0; oj < g.out_w; ++oj) {
            const long xj = static_cast<long>(oj * stride + kj) - static_cast<long>(g.pad_left);
            const bool in = yi >= 0 && yi < static_cast<long>(h) && xj >= 0 && xj < static_cast<long>(w);
            row[oi * g.out_w + oj] = in ? src[c * h * w + yi * w + xj] : T(0);
          }
        }
      }
}

// Scatter-add of a column matrix back onto the input plane.
template <class T>
void col2im_add(const T* cols, std::size_t h, std::size_t w, std::size_t cg, std::size_t kh,
                std::size_t kw, std::size_t stride, const ConvGeom& g, T* dst) {
  const std::size_t ohw = g.out_h * g.out_w;
  for (std::size_t c = 0; c < cg; ++c)
    for (std::size_t ki = 0; ki < kh; ++ki)
      for (std::size_t kj = 0; kj < kw; ++kj) {
        const T* row = cols + ((c * kh + ki) * kw + kj) * ohw;
        for (std::size_t oi = 0; oi < g.out_h; ++oi) {
          const long yi = static_cast<long>(oi * stride + ki) - static_cast<long>(g.pad_top);
          if (yi < 0 || yi >= static_cast<long>(h)) continue;
          for (std::size_t oj = 0; oj < g.out_w; ++oj) {
            const long xj = static_cast<long>(oj * stride + kj) - static_cast<long>(g.pad_left);
            if (xj < 0 || xj >= static_cast<long>(w)) continue;
            dst[c * h * w + yi * w + xj] += row[oi * g.out_w + oj];
          }
        }
      }
}

}  // namespace detail

// 2-D cross-correlation. input [N,C,H,W], kernel [F,C/groups,kh,kw], optional
// bias [F]. groups = C gives a depthwise convolution.
template <class T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& kernel, const TensorT<T>& bias,
                  std::size_t stride, Padding padding, Tape<T>* tape = nullptr,
                  std::size_t groups = 1) {
  require(input.rank() == 4, ErrorKind::Shape, "conv2d: input must be [N,C,H,W], got ",
          shape_str(input.shape()));
  require(kernel.rank() == 4, ErrorKind::Shape, "conv2d: kernel must be [F,C/g,kh,kw], got ",
          shape_str(kernel.shape()));
  require(stride >= 1, ErrorKind::Shape, "conv2d: stride must be >= 1");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t f = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  require(groups >= 1 && c % groups == 0 && f % groups == 0, ErrorKind::Shape,
          "conv2d: groups ", groups, " must divide channels ", c, " and filters ", f);
  const std::size_t cg = c / groups, fg = f / groups;
  require(kernel.dim(1) == cg, ErrorKind::Shape, "conv2d: kernel expects ", kernel.dim(1),
          " input channels per group, input provides ", cg);
  const bool has_bias = bias.defined();
  if (has_bias)
    require(bias.rank() == 1 && bias.dim(0) == f, ErrorKind::Shape, "conv2d: bias shape ",
            shape_str(bias.shape()), " does not match filter count ", f);
  const auto geom = detail::conv_geometry(h, w, kh, kw, stride, padding);
  const std::size_t ohw = geom.out_h * geom.out_w, krows = cg * kh * kw;

  bool tracked = detail::track(tape, input, kernel) || (has_bias && detail::track(tape, bias));
  TensorT<T> out = detail::op_output<T>({n, f, geom.out_h, geom.out_w}, tracked);
  std::vector<T> cols(krows * ohw);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t g = 0; g < groups; ++g) {
      detail::im2col(input.data() + (s * c + g * cg) * h * w, h, w, cg, kh, kw, stride, geom,
                     cols.data());
      detail::ECMap<T> K(kernel.data() + g * fg * krows, fg, krows);
      detail::ECMap<T> C(cols.data(), krows, ohw);
      detail::EMap<T> O(out.data() + (s * f + g * fg) * ohw, fg, ohw);
      O.noalias() = K * C;
      if (has_bias)
        for (std::size_t ff = 0; ff < fg; ++ff) O.row(ff).array() += bias.at(g * fg + ff);
    }

  if (tracked) {
    auto io = input.storage(), ko = kernel.storage(), oo = out.storage();
    auto bo = has_bias ? bias.storage() : nullptr;
    tape->record(out, [io, ko, bo, oo, n, c, h, w, f, kh, kw, stride, geom, groups, cg, fg, krows,
                       ohw] {
      std::vector<T> cols(krows * ohw), dcols(krows * ohw);
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t g = 0; g < groups; ++g) {
          detail::ECMap<T> G(oo->grad.data() + (s * f + g * fg) * ohw, fg, ohw);
          if (ko->requires_grad || io->requires_grad)
            detail::im2col(io->values.data() + (s * c + g * cg) * h * w, h, w, cg, kh, kw, stride,
                           geom, cols.data());
          if (ko->requires_grad) {
            detail::ECMap<T> C(cols.data(), krows, ohw);
            detail::EMap<T>(ko->grad.data() + g * fg * krows, fg, krows).noalias() +=
                G * C.transpose();
          }
          if (io->requires_grad) {
            detail::ECMap<T> K(ko->values.data() + g * fg * krows, fg, krows);
            detail::EMap<T>(dcols.data(), krows, ohw).noalias() = K.transpose() * G;
            detail::col2im_add(dcols.data(), h, w, cg, kh, kw, stride, geom,
                               io->grad.data() + (s * c + g * cg) * h * w);
          }
          if (bo && bo->requires_grad)
            for (std::size_t ff = 0; ff < fg; ++ff) bo->grad[g * fg + ff] += G.row(ff).sum();
        }
    });
  }
  return out;
}

template <class T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& kernel, std::size_t stride,
                  Padding padding, Tape<T>* tape = nullptr) {
  return conv2d(input, kernel, TensorT<T>(), stride, padding, tape);
}

template <class T>
TensorT<T> pool2d(const TensorT<T>& input, PoolKind kind, std::size_t window, std::size_t stride,
                  Tape<T>* tape = nullptr) {
  require(input.rank() == 4, ErrorKind::Shape, "pool2d: input must be [N,C,H,W], got ",
          shape_str(input.shape()));
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  require(window >= 1 && window <= h && window <= w, ErrorKind::Shape, "pool2d: window ", window,
          " exceeds input ", h, "x", w);
  require(stride >= 1, ErrorKind::Shape, "pool2d: stride must be >= 1");
  const std::size_t oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;
  const bool tracked = detail::track(tape, input);
  TensorT<T> out = detail::op_output<T>({n, c, oh, ow}, tracked);
  // For max pooling record the winning input offset; ties go to the first
  // element in row-major scan order.
  std::vector<std::size_t> argmax(kind == PoolKind::kMax ? out.size() : 0);
  const T inv_area = T(1) / static_cast<T>(window * window);
  for (std::size_t s = 0; s < n * c; ++s) {
    const T* plane = input.data() + s * h * w;
    for (std::size_t oi = 0; oi < oh; ++oi)
      for (std::size_t oj = 0; oj < ow; ++oj) {
        const std::size_t oidx = s * oh * ow + oi * ow + oj;
        if (kind == PoolKind::kMax) {
          T best = plane[oi * stride * w + oj * stride];
          std::size_t best_idx = oi * stride * w + oj * stride;
          for (std::size_t ki = 0; ki < window; ++ki)
            for (std::size_t kj = 0; kj < window; ++kj) {
              const std::size_t idx = (oi * stride + ki) * w + oj * stride + kj;
              if (plane[idx] > best) {
                best = plane[idx];
                best_idx = idx;
              }
            }
          out.at(oidx) = best;
          if (tracked) argmax[oidx] = s * h * w + best_idx;
        } else {
          T acc = T(0);
          for (std::size_t ki = 0; ki < window; ++ki)
            for (std::size_t kj = 0; kj < window; ++kj)
              acc += plane[(oi * stride + ki) * w + oj * stride + kj];
          out.at(oidx) = acc * inv_area;
        }
      }
  }
  if (tracked) {
    auto io = input.storage(), oo = out.storage();
    if (kind == PoolKind::kMax) {
      tape->record(out, [io, oo, argmax] {
        for (std::size_t i = 0; i < oo->grad.size(); ++i) io->grad[argmax[i]] += oo->grad[i];
      });
    } else {
      tape->record(out, [io, oo, n, c, h, w, oh, ow, window, stride, inv_area] {
        for (std::size_t s = 0; s < n * c; ++s)
          for (std::size_t oi = 0; oi < oh; ++oi)
            for (std::size_t oj = 0; oj < ow; ++oj) {
              const T g = oo->grad[s * oh * ow + oi * ow + oj] * inv_area;
              for (std::size_t ki = 0; ki < window; ++ki)
                for (std::size_t kj = 0; kj < window; ++kj)
                  io->grad[s * h * w + (oi * stride + ki) * w + oj * stride + kj] += g;
            }
      });
    }
  }
  return out;
}

// Nearest-neighbor upsampling; backward sums the gradient over each
// replicated block.
template <class T>
TensorT<T> upsample2d(const TensorT<T>& input, std::size_t factor, Tape<T>* tape = nullptr) {
  require(input.rank() == 4, ErrorKind::Shape, "upsample2d: input must be [N,C,H,W], got ",
          shape_str(input.shape()));
  require(factor >= 1, ErrorKind::Shape, "upsample2d: factor must be >= 1, got ", factor);
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t oh = h * factor, ow = w * factor;
  const bool tracked = detail::track(tape, input);
  TensorT<T> out = detail::op_output<T>({n, c, oh, ow}, tracked);
  for (std::size_t s = 0; s < n * c; ++s)
    for (std::size_t oi = 0; oi < oh; ++oi)
      for (std::size_t oj = 0; oj < ow; ++oj)
        out.at(s * oh * ow + oi * ow + oj) = input.at(s * h * w + (oi / factor) * w + oj / factor);
  if (tracked) {
    auto io = input.storage(), oo = out.storage();
    tape->record(out, [io, oo, n, c, h, w, oh, ow, factor] {
      for (std::size_t s = 0; s < n * c; ++s)
        for (std::size_t oi = 0; oi < oh; ++oi)
          for (std::size_t oj = 0; oj < ow; ++oj)
            io->grad[s * h * w + (oi / factor) * w + oj / factor] +=
                oo->grad[s * oh * ow + oi * ow + oj];
    });
  }
  return out;
}

// Collapse [N,C,H,W] spatial dims to their mean, giving [N,C].
template <class T>
TensorT<T> global_avg_pool(const TensorT<T>& input, Tape<T>* tape = nullptr) {
  require(input.rank() == 4, ErrorKind::Shape, "global_avg_pool: input must be [N,C,H,W], got ",
          shape_str(input.shape()));
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  const bool tracked = detail::track(tape, input);
  TensorT<T> out = detail::op_output<T>({n, c}, tracked);
  const T inv = T(1) / static_cast<T>(hw);
  for (std::size_t s = 0; s < n * c; ++s) {
    T acc = T(0);
    for (std::size_t i = 0; i < hw; ++i) acc += input.at(s * hw + i);
    out.at(s) = acc * inv;
  }
  if (tracked) {
    auto io = input.storage(), oo = out.storage();
    tape->record(out, [io, oo, n, c, hw, inv] {
      for (std::size_t s = 0; s < n * c; ++s)
        for (std::size_t i = 0; i < hw; ++i) io->grad[s * hw + i] += oo->grad[s] * inv;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Softmax / losses
// ---------------------------------------------------------------------------

// Row-wise softmax over the last dimension of a rank-2 tensor.
template <class T>
TensorT<T> softmax_rows(const TensorT<T>& a, Tape<T>* tape = nullptr) {
  require(a.rank() == 2, ErrorKind::Shape, "softmax_rows expects rank-2, got ",
          shape_str(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  const bool tracked = detail::track(tape, a);
  TensorT<T> out = detail::op_output<T>(a.shape(), tracked);
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = a.data() + i * c;
    T mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    T denom = T(0);
    for (std::size_t j = 0; j < c; ++j) {
      out.at(i * c + j) = std::exp(row[j] - mx);
      denom += out.at(i * c + j);
    }
    for (std::size_t j = 0; j < c; ++j) out.at(i * c + j) /= denom;
  }
  if (tracked) {
    auto ao = a.storage(), oo = out.storage();
    tape->record(out, [ao, oo, r, c] {
      for (std::size_t i = 0; i < r; ++i) {
        T dot = T(0);
        for (std::size_t j = 0; j < c; ++j) dot += oo->grad[i * c + j] * oo->values[i * c + j];
        for (std::size_t j = 0; j < c; ++j)
          ao->grad[i * c + j] += oo->values[i * c + j] * (oo->grad[i * c + j] - dot);
      }
    });
  }
  return out;
}

// Mean (optionally class-weighted) cross-entropy over a batch of logits.
// Stabilized by per-row max subtraction. Gradient: (softmax - onehot),
// weighted and normalized by the total weight.
template <class T>
TensorT<T> softmax_cross_entropy(const TensorT<T>& logits, const std::vector<std::size_t>& labels,
                                 Tape<T>* tape = nullptr,
                                 const std::vector<T>& class_weights = {}) {
  require(logits.rank() == 2, ErrorKind::Shape, "softmax_cross_entropy expects [N,K] logits, got ",
          shape_str(logits.shape()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  require(labels.size() == n, ErrorKind::Shape, "softmax_cross_entropy: ", labels.size(),
          " labels for ", n, " rows");
  for (std::size_t i = 0; i < n; ++i)
    require(labels[i] < k, ErrorKind::Domain, "label ", labels[i], " out of range [0,", k,
            ") at row ", i);
  if (!class_weights.empty())
    require(class_weights.size() == k, ErrorKind::Shape, "class_weights size ",
            class_weights.size(), " != ", k);

  std::vector<T> probs(n * k);
  T loss = T(0), weight_total = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = logits.data() + i * k;
    T mx = row[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    T denom = T(0);
    for (std::size_t j = 0; j < k; ++j) {
      probs[i * k + j] = std::exp(row[j] - mx);
      denom += probs[i * k + j];
    }
    const T log_denom = std::log(denom);
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] /= denom;
    const T wi = class_weights.empty() ? T(1) : class_weights[labels[i]];
    loss += wi * (log_denom - (row[labels[i]] - mx));
    weight_total += wi;
  }
  loss /= weight_total;

  const bool tracked = detail::track(tape, logits);
  TensorT<T> out = detail::op_output<T>({1}, tracked);
  out.at(0) = loss;
  if (tracked) {
    auto lo = logits.storage(), oo = out.storage();
    tape->record(out, [lo, oo, probs, labels, class_weights, n, k, weight_total] {
      const T g = oo->grad[0] / weight_total;
      for (std::size_t i = 0; i < n; ++i) {
        const T wi = class_weights.empty() ? T(1) : class_weights[labels[i]];
        for (std::size_t j = 0; j < k; ++j) {
          T d = probs[i * k + j] - (j == labels[i] ? T(1) : T(0));
          lo->grad[i * k + j] += g * wi * d;
        }
      }
    });
  }
  return out;
}

// Per-channel scaling: out[n,c,h,w] = x[n,c,h,w] * gate[n,c].
template <class T>
TensorT<T> scale_channels(const TensorT<T>& x, const TensorT<T>& gate, Tape<T>* tape = nullptr) {
  require(x.rank() == 4, ErrorKind::Shape, "scale_channels: input must be [N,C,H,W], got ",
          shape_str(x.shape()));
  require(gate.rank() == 2 && gate.dim(0) == x.dim(0) && gate.dim(1) == x.dim(1),
          ErrorKind::Shape, "scale_channels: gate ", shape_str(gate.shape()),
          " does not match input ", shape_str(x.shape()));
  const std::size_t nc = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  const bool tracked = detail::track(tape, x, gate);
  TensorT<T> out = detail::op_output<T>(x.shape(), tracked);
  for (std::size_t s = 0; s < nc; ++s)
    for (std::size_t i = 0; i < hw; ++i) out.at(s * hw + i) = x.at(s * hw + i) * gate.at(s);
  if (tracked) {
    auto xo = x.storage(), go = gate.storage(), oo = out.storage();
    tape->record(out, [xo, go, oo, nc, hw] {
      for (std::size_t s = 0; s < nc; ++s) {
        T acc = T(0);
        for (std::size_t i = 0; i < hw; ++i) {
          if (xo->requires_grad) xo->grad[s * hw + i] += oo->grad[s * hw + i] * go->values[s];
          acc += oo->grad[s * hw + i] * xo->values[s * hw + i];
        }
        if (go->requires_grad) go->grad[s] += acc;
      }
    });
  }
  return out;
}

// Inverted dropout; mask elements are 0 or 1/(1-p). p = 0 is the identity.
template <class T>
TensorT<T> dropout(const TensorT<T>& a, double p, Rng& rng, Tape<T>* tape = nullptr) {
  require(p >= 0.0 && p < 1.0, ErrorKind::Config, "dropout rate must be in [0,1), got ", p);
  if (p == 0.0) return a;
  TensorT<T> mask = TensorT<T>::zeros(a.shape());
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  for (std::size_t i = 0; i < mask.size(); ++i)
    mask.at(i) = rng.next_double() >= p ? keep_scale : T(0);
  return mul(a, mask, tape);
}

}  // namespace sslf
