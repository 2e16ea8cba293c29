#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace aem {

using Index = std::int64_t;
using Shape = std::vector<Index>;

Index shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

template <typename T>
class Tape;

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first touched by backward
  bool requires_grad = false;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

}  // namespace detail

/// Dense row-major tensor. Copies share storage; use clone() for a deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  Index dim(int axis) const;
  Index numel() const { return static_cast<Index>(node_->data.size()); }

  std::span<const T> data() const { return node_->data; }
  // Only parameters and freshly built constants should be written through this.
  std::span<T> mutable_data() { return node_->data; }
  T at(Index i) const { return node_->data[static_cast<std::size_t>(i)]; }
  T item() const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
  }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.assign(node_->data.size(), T(0)); }
  void clear_grad() { node_->grad.clear(); }

  // Gradient as a standalone tensor (zeros if never reached).
  Tensor grad_tensor() const;
  Tensor clone() const;
  bool shares_storage(const Tensor& other) const { return node_ == other.node_; }

  const detail::NodePtr<T>& node() const { return node_; }
  static Tensor wrap(detail::NodePtr<T> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  detail::NodePtr<T> node_;
};

/// Define-by-run record of differentiable operations, in forward order.
template <typename T>
class Tape {
 public:
  struct Entry {
    std::string_view op;
    std::vector<detail::NodePtr<T>> inputs;
    detail::NodePtr<T> output;
    // Reads output->grad, accumulates into inputs that require grad.
    std::function<void()> backward;
  };

  void record(std::string_view op, std::vector<detail::NodePtr<T>> inputs,
              detail::NodePtr<T> output, std::function<void()> backward);

  /// Seeds d(loss)/d(loss) = 1 and walks the entries in reverse. Leaf grads
  /// accumulate; call zero_grad on parameters between steps.
  void backward(const Tensor<T>& loss);

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

 private:
  std::vector<Entry> entries_;
};

template <typename T>
Tape<T>*& active_tape_slot() {
  thread_local Tape<T>* slot = nullptr;
  return slot;
}

template <typename T>
Tape<T>* active_tape() {
  return active_tape_slot<T>();
}

/// Makes `tape` the recording tape for this thread for the guard's lifetime.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : previous_(active_tape_slot<T>()) { active_tape_slot<T>() = &tape; }
  ~TapeScope() { active_tape_slot<T>() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

/// Suspends recording (inference, constant construction).
template <typename T>
class NoGradScope {
 public:
  NoGradScope() : previous_(active_tape_slot<T>()) { active_tape_slot<T>() = nullptr; }
  ~NoGradScope() { active_tape_slot<T>() = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<T>* previous_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace aem
