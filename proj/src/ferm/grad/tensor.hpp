#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "ferm/util/error.hpp"

namespace ferm::grad {

template <typename T>
class Tape;

template <typename T>
struct TensorImpl {
  std::vector<int> shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until needed; same length as data once allocated
  Tape<T>* tape = nullptr;
  int node = -1;
  bool requires_grad = false;
};

inline int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

// Value + shape handle with shared storage. Ops never mutate their inputs;
// gradients accumulate into `grad` and are cleared explicitly.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl<T>> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(std::vector<int> shape) {
    auto impl = std::make_shared<TensorImpl<T>>();
    int64_t n = shape_numel(shape);
    impl->shape = std::move(shape);
    impl->data.assign(static_cast<size_t>(n), T(0));
    return Tensor(std::move(impl));
  }

  static Tensor full(std::vector<int> shape, T v) {
    Tensor t = zeros(std::move(shape));
    for (auto& x : t.data()) x = v;
    return t;
  }

  static Tensor from_data(std::vector<int> shape, std::vector<T> data) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
      raise(ErrorKind::shape_mismatch, "tensor data length does not match shape");
    auto impl = std::make_shared<TensorImpl<T>>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    return Tensor(std::move(impl));
  }

  static Tensor scalar(T v) { return from_data({1}, {v}); }

  bool defined() const { return static_cast<bool>(impl_); }

  const std::vector<int>& shape() const { return impl_->shape; }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

  std::vector<T>& data() { return impl_->data; }
  const std::vector<T>& data() const { return impl_->data; }
  T* ptr() { return impl_->data.data(); }
  const T* ptr() const { return impl_->data.data(); }

  T item() const {
    if (numel() != 1) raise(ErrorKind::shape_mismatch, "item() on non-scalar tensor");
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    impl_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return !impl_->grad.empty(); }

  std::vector<T>& grad() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
    return impl_->grad;
  }

  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
  }

  // Copy of the values, detached from any tape.
  Tensor detach() const {
    auto impl = std::make_shared<TensorImpl<T>>();
    impl->shape = impl_->shape;
    impl->data = impl_->data;
    return Tensor(std::move(impl));
  }

  Tensor clone_shape() const { return zeros(impl_->shape); }

  const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

// Append-only record of operations. backward() replays recorded closures in
// reverse from the loss node. Gradients of intermediate (op-produced) values
// are reset at the start of each backward pass; leaf gradients accumulate
// across passes until zeroed by the caller.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  int record(std::shared_ptr<TensorImpl<T>> out, std::function<void()> back) {
    nodes_.push_back(Node{std::move(out), std::move(back)});
    int idx = static_cast<int>(nodes_.size()) - 1;
    nodes_.back().out->tape = this;
    nodes_.back().out->node = idx;
    return idx;
  }

  size_t size() const { return nodes_.size(); }

  void backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1)
      raise(ErrorKind::invalid_argument, "backward requires a defined scalar loss");
    auto& li = *loss.impl();
    if (li.tape != this || li.node < 0)
      raise(ErrorKind::state, "loss was not produced on this tape");
    for (auto& n : nodes_)
      if (!n.out->grad.empty()) std::fill(n.out->grad.begin(), n.out->grad.end(), T(0));
    loss.impl()->grad.assign(1, T(1));
    for (int i = li.node; i >= 0; --i) nodes_[static_cast<size_t>(i)].back();
  }

  void clear() {
    for (auto& n : nodes_) {
      n.out->tape = nullptr;
      n.out->node = -1;
    }
    nodes_.clear();
  }

  ~Tape() { clear(); }

 private:
  struct Node {
    std::shared_ptr<TensorImpl<T>> out;
    std::function<void()> back;
  };
  std::vector<Node> nodes_;
};

template <typename T>
inline Tape<T>*& active_tape_slot() {
  thread_local Tape<T>* slot = nullptr;
  return slot;
}

template <typename T>
inline Tape<T>* active_tape() {
  return active_tape_slot<T>();
}

// RAII: makes `tape` the active tape for ops executed in scope.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : prev_(active_tape_slot<T>()) {
    active_tape_slot<T>() = &tape;
  }
  ~TapeScope() { active_tape_slot<T>() = prev_; }
  TapeScope(const TapeScope&) = delete;

 private:
  Tape<T>* prev_;
};

// RAII: disables recording in scope (inference / target computations).
template <typename T>
class NoGradScope {
 public:
  NoGradScope() : prev_(active_tape_slot<T>()) { active_tape_slot<T>() = nullptr; }
  ~NoGradScope() { active_tape_slot<T>() = prev_; }
  NoGradScope(const NoGradScope&) = delete;

 private:
  Tape<T>* prev_;
};

// True when an op consuming t under the active tape must participate in
// backward: t is a parameter or was itself produced on the active tape.
template <typename T>
inline bool grad_relevant(const Tensor<T>& t) {
  Tape<T>* tp = active_tape<T>();
  if (!tp || !t.defined()) return false;
  const auto& i = *t.impl();
  return i.requires_grad || (i.tape == tp && i.node >= 0);
}

// grad += g over the whole tensor, allocating on first touch. No-op for
// tensors that don't participate (callers guard with grad_relevant at record
// time by capturing a flag).
template <typename T>
inline T* grad_buffer(const std::shared_ptr<TensorImpl<T>>& impl) {
  if (impl->grad.empty()) impl->grad.assign(impl->data.size(), T(0));
  return impl->grad.data();
}

}  // namespace ferm::grad
