#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "sslf/error.hpp"

namespace sslf {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

template <class T>
struct TensorStorage {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;          // allocated lazily, same length as values
  bool requires_grad = false;
  bool produced_by_op = false;  // set by tape-recorded ops; leaves stay false
};

// Dense row-major tensor with shared storage. Copies are shallow; two copies
// of a Tensor alias the same values and gradient.
template <class T>
class TensorT {
 public:
  using Scalar = T;

  TensorT() = default;

  static TensorT zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), T(0), requires_grad);
  }

  static TensorT filled(Shape shape, T value, bool requires_grad = false) {
    for (auto d : shape)
      require(d > 0, ErrorKind::Shape, "tensor dimensions must be positive, got ", shape_str(shape));
    TensorT t;
    t.s_ = std::make_shared<TensorStorage<T>>();
    t.s_->shape = std::move(shape);
    t.s_->values.assign(shape_numel(t.s_->shape), value);
    if (requires_grad) t.set_requires_grad(true);
    return t;
  }

  static TensorT from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    require(shape_numel(shape) == values.size(), ErrorKind::Shape, "value count ", values.size(),
            " does not match shape ", shape_str(shape));
    TensorT t = zeros(std::move(shape), false);
    t.s_->values = std::move(values);
    if (requires_grad) t.set_requires_grad(true);
    return t;
  }

  static TensorT scalar(T value, bool requires_grad = false) {
    return from({1}, {value}, requires_grad);
  }

  bool defined() const { return s_ != nullptr; }
  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t size() const { return s_->values.size(); }
  std::size_t dim(std::size_t i) const { return s_->shape[i]; }

  T* data() { return s_->values.data(); }
  const T* data() const { return s_->values.data(); }
  std::vector<T>& values() { return s_->values; }
  const std::vector<T>& values() const { return s_->values; }
  T& at(std::size_t i) { return s_->values[i]; }
  T at(std::size_t i) const { return s_->values[i]; }

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool on) {
    s_->requires_grad = on;
    if (on)
      s_->grad.assign(s_->values.size(), T(0));
    else
      s_->grad.clear();
  }

  bool is_leaf() const { return !s_->produced_by_op; }
  void mark_produced() { s_->produced_by_op = true; }

  std::vector<T>& grad() { return s_->grad; }
  const std::vector<T>& grad() const { return s_->grad; }
  void zero_grad() {
    if (!s_->grad.empty()) s_->grad.assign(s_->grad.size(), T(0));
  }

  // Deep copy, detached from any tape.
  TensorT clone() const {
    TensorT t = from(s_->shape, s_->values, false);
    return t;
  }

  std::shared_ptr<TensorStorage<T>> storage() const { return s_; }
  bool same_storage(const TensorT& o) const { return s_ == o.s_; }

 private:
  std::shared_ptr<TensorStorage<T>> s_;
};

// Reverse-mode tape. Every differentiable op appends one record holding its
// output and a closure that pushes the output gradient into the operands.
// Records are appended in execution order, so operands of record i were
// produced by some record j < i or are leaves; replaying in reverse visits
// each record once.
template <class T>
class Tape {
 public:
  struct Record {
    std::shared_ptr<TensorStorage<T>> out;
    std::function<void()> backward;
  };

  void record(const TensorT<T>& out, std::function<void()> backward) {
    records_.push_back({out.storage(), std::move(backward)});
  }

  std::size_t size() const { return records_.size(); }
  void clear() { records_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Gradients of
  // intermediate (op-produced) tensors are reset first; leaf gradients
  // accumulate across calls.
  void backward(const TensorT<T>& loss) {
    require(loss.size() == 1, ErrorKind::Shape, "backward requires a scalar loss, got shape ",
            shape_str(loss.shape()));
    bool reachable = loss.is_leaf();
    for (auto& r : records_) {
      if (r.out == loss.storage()) reachable = true;
      if (r.out->requires_grad && r.out->grad.size() != r.out->values.size())
        r.out->grad.assign(r.out->values.size(), T(0));
      if (r.out->produced_by_op) r.out->grad.assign(r.out->grad.size(), T(0));
    }
    require(reachable, ErrorKind::Shape, "loss tensor was not produced on this tape");
    if (loss.storage()->grad.size() != 1) loss.storage()->grad.assign(1, T(0));
    loss.storage()->grad[0] += T(1);
    for (auto it = records_.rbegin(); it != records_.rend(); ++it)
      if (it->backward) it->backward();
  }

 private:
  std::vector<Record> records_;
};

template <class T>
void backward(Tape<T>& tape, const TensorT<T>& loss) {
  tape.backward(loss);
}

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

}  // namespace sslf
