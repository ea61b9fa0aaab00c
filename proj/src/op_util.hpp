#pragma once

// Internal helpers shared by op implementations.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "tunein/tensor.hpp"

namespace tunein::detail {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

template <typename T>
using BackwardFn = std::function<void(Node<T>&)>;

template <typename T>
void check_finite(const Node<T>& node) {
  for (const T v : node.value) {
    if (!std::isfinite(v)) {
      throw NumericalError(std::string("non-finite value produced by op '") + node.op + "'");
    }
  }
}

// Builds an op output. Inputs are retained and the backward closure stored
// only when recording is on and at least one input needs a gradient.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, Buffer<T> values,
                      std::vector<Tensor<T>> inputs, BackwardFn<T> backward,
                      std::size_t saved_elements = 0) {
  auto node = std::make_shared<Node<T>>();
  node->op = op;
  node->shape = std::move(shape);
  node->value = std::move(values);
  if (node->value.size() != numel_of(node->shape)) {
    throw std::logic_error(std::string("op '") + op + "' produced a buffer inconsistent with its shape");
  }
  record_activation(node->value.size() + saved_elements);
  if (finite_checks()) check_finite(*node);
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) {
      if (in.defined() && in.requires_grad()) needs = true;
    }
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.defined() ? in.node_ptr() : nullptr);
    node->backward_fn = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

// nullptr when the input does not take gradients.
template <typename T>
Buffer<T>* grad_target(Node<T>& self, std::size_t i) {
  auto& in = self.inputs[i];
  if (!in || !in->requires_grad) return nullptr;
  return &in->grad_buffer();
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace tunein::detail
