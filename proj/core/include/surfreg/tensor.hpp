#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "surfreg/real.hpp"

namespace SURFREG_NAMESPACE {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// Reads `out.grad` and accumulates into the gradients of `out.parents`.
using BackwardFn = std::function<void(Node& out)>;

struct Node {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  BackwardFn backward;

  bool is_leaf() const { return parents.empty(); }
  std::vector<Real>& ensure_grad();
};

}  // namespace detail

/// Shared handle to a node of the differentiation graph.
///
/// Values are immutable once an operation has produced them. Only leaf
/// tensors (parameters, inputs) expose mutable storage, and only the
/// optimizer is expected to write through it.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<Real> values,
                            bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  // Matrix view; the tensor must have rank 2.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const Real> values() const;
  Real operator[](std::size_t i) const { return values()[i]; }
  Real at(std::size_t row, std::size_t col) const;
  Real item() const;

  /// Storage of a leaf tensor. Throws for non-leaf tensors.
  std::span<Real> mutable_values();

  bool requires_grad() const;
  bool is_leaf() const;
  Tensor& set_requires_grad(bool on);

  /// Accumulated gradient; empty when the tensor does not require grad.
  std::span<const Real> grad() const;
  std::span<Real> mutable_grad();
  void zero_grad();

  /// Reverse-mode sweep from this scalar. Gradients accumulate into every
  /// participating leaf that requires grad.
  void backward() const;

  /// Same values, cut from the graph.
  Tensor detach() const;

  const detail::Node* id() const { return node_.get(); }
  const detail::NodePtr& node() const { return node_; }

  static Tensor from_node(detail::NodePtr node);

 private:
  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}
  detail::NodePtr node_;
};

/// Whether operations currently record backward closures.
bool grad_enabled();

/// Disables graph recording for its lifetime (thread-local).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

/// Builds the result node of an operation. When no parent requires grad, or
/// recording is disabled, the backward closure and parents are dropped.
/// Throws NumericError if any value is non-finite.
Tensor make_result(Shape shape, std::vector<Real> values,
                   std::initializer_list<Tensor> parents, BackwardFn backward,
                   const char* op_name);
Tensor make_result(Shape shape, std::vector<Real> values,
                   const std::vector<Tensor>& parents, BackwardFn backward,
                   const char* op_name);

void check_finite(std::span<const Real> values, const char* what);

}  // namespace detail

}  // namespace surfreg
