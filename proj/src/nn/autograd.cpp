#include "geco/nn/autograd.hpp"

#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace geco::nn {

namespace {
thread_local bool g_grad_enabled = true;
}

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <class T>
Var<T> Var<T>::constant(Shape shape, std::vector<T> values) {
  if (numel(shape) != static_cast<std::int64_t>(values.size()))
    throw std::invalid_argument("Var: value count does not match shape " + shape_str(shape));
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value.assign(values.begin(), values.end());
  return Var(std::move(n));
}

template <class T>
Var<T> Var<T>::zeros(Shape shape) {
  auto count = static_cast<std::size_t>(numel(shape));
  return constant(std::move(shape), std::vector<T>(count, T(0)));
}

template <class T>
Var<T> Var<T>::leaf(Shape shape, std::vector<T> values) {
  auto v = constant(std::move(shape), std::move(values));
  v.node()->requires_grad = true;
  return v;
}

template <class T>
T Var<T>::item() const {
  if (node_->value.size() != 1) throw std::logic_error("item() on non-scalar " + shape_str(shape()));
  return node_->value[0];
}

template <class T>
std::shared_ptr<Node<T>> make_result(Shape shape, std::initializer_list<const Var<T>*> inputs) {
  auto n = std::make_shared<Node<T>>();
  n->value.assign(static_cast<std::size_t>(numel(shape)), T(0));
  n->shape = std::move(shape);
  if (!g_grad_enabled) return n;
  bool any = false;
  for (const auto* in : inputs)
    if (in && in->defined() && in->requires_grad()) any = true;
  if (!any) return n;
  n->requires_grad = true;
  for (const auto* in : inputs) n->parents.push_back(in && in->defined() ? in->ptr() : nullptr);
  return n;
}

template <class T>
void backward(const Var<T>& loss) {
  if (loss.size() != 1) throw std::logic_error("backward() expects a scalar loss");
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p && p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  loss.node()->ensure_grad();
  loss.node()->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward) {
      n->ensure_grad();
      n->backward(*n);
    }
  }
}

template class Var<float>;
template class Var<double>;
template void backward<float>(const Var<float>&);
template void backward<double>(const Var<double>&);
template std::shared_ptr<Node<float>> make_result<float>(Shape, std::initializer_list<const Var<float>*>);
template std::shared_ptr<Node<double>> make_result<double>(Shape, std::initializer_list<const Var<double>*>);

}  // namespace geco::nn
