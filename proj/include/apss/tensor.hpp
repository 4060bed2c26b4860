#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "apss/errors.hpp"

namespace apss {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Propagates this->grad into the parents. Empty for leaves.
  std::function<void(Node&)> backward;
  const char* op = "leaf";

  bool is_leaf() const { return !backward; }
  std::vector<T>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

// Gradient tracking is enabled per thread; NoGradGuard disables it for a scope.
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

// When on, every op verifies its output is finite and division checks for
// exact zero denominators. Defaults to on in builds without NDEBUG.
bool debug_checks();
void set_debug_checks(bool on);

/// Dense row-major n-dimensional array participating in reverse-mode
/// differentiation. Copies share the underlying node; the graph is built
/// while ops execute and walked in reverse topological order by backward().
template <typename T>
class Tensor {
 public:
  using Scalar = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const T> data() const;
  // Direct write access; intended for leaves (parameters, inputs).
  std::span<T> mutable_data();
  T item() const;
  T at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const T> grad() const;
  std::span<T> mutable_grad();
  void zero_grad();

  // Same values, no history.
  Tensor detach() const;

  // Populates grad of every reachable leaf that requires grad. Leaf grads
  // accumulate across calls; interior grads are recomputed each call.
  void backward() const;

  const NodePtr& node() const { return node_; }

 private:
  void check_defined() const;
  NodePtr node_;
};

namespace detail {

// Builds an op result. If gradient tracking applies, parents and the
// backward closure are attached; otherwise the closure is dropped.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::vector<Tensor<T>> inputs,
                      const char* op, std::function<void(Node<T>&)> backward);

template <typename T>
bool any_requires_grad(const std::vector<Tensor<T>>& inputs);

template <typename T>
void check_finite(const Node<T>& node);

}  // namespace detail

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace apss
