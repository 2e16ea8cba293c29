#include "aem/tensor.hpp"

#include <sstream>

namespace aem {

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : node_(std::make_shared<detail::Node<T>>()) {
  const Index n = shape_numel(shape);
  node_->shape = std::move(shape);
  node_->data.assign(static_cast<std::size_t>(n), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<detail::Node<T>>()) {
  const Index n = shape_numel(shape);
  if (static_cast<Index>(values.size()) != n) {
    throw ShapeError("tensor of shape " + shape_str(shape) + " given " + std::to_string(values.size()) +
                     " values");
  }
  node_->shape = std::move(shape);
  node_->data = std::move(values);
}

template <typename T>
Index Tensor<T>::dim(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("axis out of range for shape " + shape_str(shape()));
  return node_->shape[static_cast<std::size_t>(axis)];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

template <typename T>
Tensor<T> Tensor<T>::grad_tensor() const {
  if (node_->grad.empty()) return Tensor(node_->shape);
  return Tensor(node_->shape, node_->grad);
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor(node_->shape, node_->data);
}

template <typename T>
void Tape<T>::record(std::string_view op, std::vector<detail::NodePtr<T>> inputs, detail::NodePtr<T> output,
                     std::function<void()> backward) {
  entries_.push_back(Entry{op, std::move(inputs), std::move(output), std::move(backward)});
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward needs a scalar loss, got " + (loss.defined() ? shape_str(loss.shape()) : "undefined"));
  }
  auto& seed = loss.node()->grad_buffer();
  seed[0] += T(1);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;  // not on a path from the loss
    it->backward();
  }
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace aem
