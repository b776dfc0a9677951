#pragma once

// Minimal reverse-mode autodiff over dense NCHW / row-major tensors.
// A Var owns a shared graph node; ops record a backward closure when any
// input requires a gradient and grad mode is enabled.

#include <cstdint>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace geco::nn {

using Shape = std::vector<std::int64_t>;

// 64-byte aligned storage. Eigen's small-product kernels peel loops by pointer alignment,
// so plain heap storage would make results depend on where the allocator put a buffer.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <class T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <class T>
struct Node {
  Shape shape;
  Buffer<T> value;
  Buffer<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var constant(Shape shape, std::vector<T> values);
  static Var zeros(Shape shape);
  static Var leaf(Shape shape, std::vector<T> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::int64_t size() const { return static_cast<std::int64_t>(node_->value.size()); }
  std::span<const T> data() const { return node_->value; }
  std::span<T> mutable_data() { return node_->value; }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  T item() const;
  bool requires_grad() const { return node_->requires_grad; }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Gradient recording switch (thread-local). Inference paths use NoGradGuard.
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

// Runs reverse accumulation from a scalar. Gradients accumulate into leaves.
template <class T>
void backward(const Var<T>& loss);

// Creates the result node of an op; wires parents when recording.
template <class T>
std::shared_ptr<Node<T>> make_result(Shape shape, std::initializer_list<const Var<T>*> inputs);

}  // namespace geco::nn
