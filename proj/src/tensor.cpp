#include "apss/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace apss {

namespace {
thread_local bool g_grad_enabled = true;
#ifdef NDEBUG
bool g_debug_checks = false;
#else
bool g_debug_checks = true;
#endif
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool debug_checks() { return g_debug_checks; }
void set_debug_checks(bool on) { g_debug_checks = on; }

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  auto node = std::make_shared<detail::Node<T>>();
  node->data.assign(shape_numel(shape), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("from_data: shape " + shape_str(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(data.size()));
  }
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return full({}, value, requires_grad);
}

template <typename T>
void Tensor<T>::check_defined() const {
  if (!node_) throw UsageError("operation on an undefined tensor");
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  check_defined();
  return node_->shape;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("dim: axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[axis];
}

template <typename T>
std::size_t Tensor<T>::numel() const {
  check_defined();
  return node_->data.size();
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  check_defined();
  return node_->data;
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  check_defined();
  return node_->data;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw UsageError("item: tensor has " + std::to_string(numel()) + " elements");
  return node_->data[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw ShapeError("at: index rank mismatch for " + shape_str(s));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= s[axis]) throw ShapeError("at: index out of range for " + shape_str(s));
    flat = flat * s[axis] + i;
    ++axis;
  }
  return node_->data[flat];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return node_ && node_->requires_grad;
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  check_defined();
  if (!node_->is_leaf()) throw UsageError("set_requires_grad on a non-leaf tensor");
  node_->requires_grad = on;
  return *this;
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return node_ && node_->grad.size() == node_->data.size() && !node_->data.empty();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  check_defined();
  return node_->grad;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
  check_defined();
  return node_->ensure_grad();
}

template <typename T>
void Tensor<T>::zero_grad() {
  check_defined();
  node_->grad.clear();
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  check_defined();
  return from_data(node_->shape, node_->data, false);
}

template <typename T>
void Tensor<T>::backward() const {
  check_defined();
  if (node_->data.size() != 1) {
    throw UsageError("backward: root must be a scalar, got shape " + shape_str(node_->shape));
  }
  if (!node_->requires_grad) throw UsageError("backward: root does not require grad");

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<detail::Node<T>*> order;
  std::unordered_set<detail::Node<T>*> visited;
  std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior grads are allocated on first contribution and freed once
  // propagated; a node that never receives one has zero gradient.
  for (auto* n : order) {
    if (!n->is_leaf()) n->grad.clear();
  }
  node_->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* n = *it;
    if (n->is_leaf() || n->grad.empty()) continue;
    n->backward(*n);
    if (n != node_.get()) {
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

namespace detail {

template <typename T>
bool any_requires_grad(const std::vector<Tensor<T>>& inputs) {
  if (!grad_enabled()) return false;
  for (const auto& t : inputs) {
    if (t.defined() && t.requires_grad()) return true;
  }
  return false;
}

template <typename T>
void check_finite(const Node<T>& node) {
  for (std::size_t i = 0; i < node.data.size(); ++i) {
    if (!std::isfinite(node.data[i])) {
      throw NumericalError(std::string("non-finite value produced by op '") + node.op +
                           "' at flat index " + std::to_string(i));
    }
  }
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::vector<Tensor<T>> inputs,
                      const char* op, std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  if (debug_checks()) check_finite(*node);
  if (any_requires_grad(inputs)) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (auto& t : inputs) {
      if (t.defined()) node->parents.push_back(t.node());
    }
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

template Tensor<float> make_result(Shape, std::vector<float>, std::vector<Tensor<float>>,
                                   const char*, std::function<void(Node<float>&)>);
template Tensor<double> make_result(Shape, std::vector<double>, std::vector<Tensor<double>>,
                                    const char*, std::function<void(Node<double>&)>);
template bool any_requires_grad(const std::vector<Tensor<float>>&);
template bool any_requires_grad(const std::vector<Tensor<double>>&);
template void check_finite(const Node<float>&);
template void check_finite(const Node<double>&);

}  // namespace detail

template class Tensor<float>;
template class Tensor<double>;

}  // namespace apss
