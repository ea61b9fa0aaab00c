#pragma once

// Dense row-major tensors with tape-free reverse-mode differentiation.
//
// Every op output keeps shared ownership of its inputs plus a closure that
// pushes the output gradient back into them, so a loss tensor owns the whole
// graph that produced it. Graphs are confined to one thread.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tunein {

using Shape = std::vector<std::size_t>;

// Tensor storage starts on a 64-byte boundary. Vectorized kernels peel loops
// by address, so a varying alignment would change rounding between runs.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, alignment); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Gradient recording is on by default; NoGradGuard disables it on the
// current thread for inference.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// When enabled, every op checks its output for NaN/Inf and throws
// NumericalError naming the op.
void set_finite_checks(bool enabled);
bool finite_checks();

// Counts elements of every op output (and op-internal saved buffers) created
// on this thread while a scope is active.
struct ActivationTrace {
  std::size_t elements = 0;
  std::size_t tensors = 0;
};

class ActivationTraceScope {
 public:
  explicit ActivationTraceScope(ActivationTrace& trace);
  ~ActivationTraceScope();
  ActivationTraceScope(const ActivationTraceScope&) = delete;
  ActivationTraceScope& operator=(const ActivationTraceScope&) = delete;

 private:
  ActivationTrace* previous_;
};

namespace detail {

void record_activation(std::size_t elements);

template <typename T>
struct Node {
  Shape shape;
  Buffer<T> value;
  Buffer<T> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  // Returns the gradient buffer, allocating zeros on first use.
  Buffer<T>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from_vector(Shape shape, const std::vector<T>& values, bool requires_grad = false);
  static Tensor from_buffer(Shape shape, Buffer<T> values, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node().shape; }
  std::size_t rank() const { return node().shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node().value.size(); }

  std::span<const T> data() const { return node().value; }
  // Direct write access; only meaningful for leaves (parameters, inputs).
  std::span<T> mutable_data() { return node().value; }
  const Buffer<T>& values() const { return node().value; }
  std::vector<T> to_vector() const { return {node().value.begin(), node().value.end()}; }

  bool has_grad() const { return node().grad.size() == node().value.size() && !node().value.empty(); }
  std::span<const T> grad() const { return node().grad; }
  std::span<T> mutable_grad() { return node().grad_buffer(); }
  void zero_grad();

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool flag) { node().requires_grad = flag; }
  const char* op_name() const { return node().op; }

  T item() const;
  T at(std::initializer_list<std::size_t> index) const;

  // Leaf copy cut off from the graph.
  Tensor detach() const;

  // Reverse-mode sweep from this scalar. Leaf gradients accumulate across
  // calls; intermediate gradients are recomputed each call and released
  // unless retain_intermediate is set.
  void backward(bool retain_intermediate = true) const;

  detail::Node<T>& node() const {
    if (!node_) throw std::logic_error("use of undefined tensor");
    return *node_;
  }
  const NodePtr& node_ptr() const { return node_; }
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  NodePtr node_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace tunein
