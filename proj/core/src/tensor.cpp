#include "surfreg/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <type_traits>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "surfreg/error.hpp"

namespace SURFREG_NAMESPACE {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<Real>& detail::Node::ensure_grad() {
  if (grad.size() != value.size()) grad.assign(value.size(), Real{0});
  return grad;
}

void detail::check_finite(std::span<const Real> values, const char* what) {
  // Exponent bits all set means inf or NaN. Written branch-free so it vectorizes.
  using Bits = std::conditional_t<sizeof(Real) == 8, std::uint64_t, std::uint32_t>;
  constexpr Bits exponent = std::bit_cast<Bits>(std::numeric_limits<Real>::infinity());
  Bits bad = 0;
  for (Real v : values) bad |= static_cast<Bits>((std::bit_cast<Bits>(v) & exponent) == exponent);
  if (bad) throw NumericError(std::string("non-finite value produced by ") + what);
}

Tensor Tensor::from_node(detail::NodePtr node) { return Tensor(std::move(node)); }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), Real{0}, requires_grad);
}

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
  auto n = shape_size(shape);
  return from_values(std::move(shape), std::vector<Real>(n, value), requires_grad);
}

Tensor Tensor::from_values(Shape shape, std::vector<Real> values,
                           bool requires_grad) {
  if (shape_size(shape) != values.size()) {
    throw DimensionError("shape " + shape_string(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  }
  detail::check_finite(values, "tensor construction");
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  if (requires_grad) node->ensure_grad();
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(Real value, bool requires_grad) {
  return from_values({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::size() const { return node_->value.size(); }

std::size_t Tensor::rows() const {
  if (rank() != 2) throw DimensionError("expected a matrix, got " + shape_string(shape()));
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw DimensionError("expected a matrix, got " + shape_string(shape()));
  return node_->shape[1];
}

std::span<const Real> Tensor::values() const { return node_->value; }

Real Tensor::at(std::size_t row, std::size_t col) const {
  return node_->value[row * cols() + col];
}

Real Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

std::span<Real> Tensor::mutable_values() {
  if (!node_->is_leaf()) throw ContractError("mutable_values() on a non-leaf tensor");
  return node_->value;
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

bool Tensor::is_leaf() const { return node_->is_leaf(); }

Tensor& Tensor::set_requires_grad(bool on) {
  if (!node_->is_leaf()) throw ContractError("set_requires_grad() on a non-leaf tensor");
  node_->requires_grad = on;
  if (on) {
    node_->ensure_grad();
  } else {
    node_->grad.clear();
  }
  return *this;
}

std::span<const Real> Tensor::grad() const { return node_->grad; }

std::span<Real> Tensor::mutable_grad() {
  if (!node_->requires_grad) return {};
  return node_->ensure_grad();
}

void Tensor::zero_grad() {
  if (node_->requires_grad) std::fill(node_->grad.begin(), node_->grad.end(), Real{0});
}

void Tensor::backward() const {
  if (size() != 1) throw DimensionError("backward() needs a scalar root, got " + shape_string(shape()));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order in which every node
  // appears after all of its parents.
  std::vector<detail::Node*> order;
  std::unordered_set<const detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  for (detail::Node* node : order) {
    if (!node->is_leaf()) {
      auto& g = node->ensure_grad();
      std::fill(g.begin(), g.end(), Real{0});
    }
  }
  node_->grad[0] = Real{1};

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->is_leaf() || !node->backward) continue;
    node->backward(*node);
  }
  for (detail::Node* node : order) {
    if (node->is_leaf()) detail::check_finite(node->grad, "backward pass");
  }
}

Tensor Tensor::detach() const {
  return from_values(node_->shape, node_->value, false);
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace detail {

namespace {

template <typename Range>
Tensor make_result_impl(Shape shape, std::vector<Real> values, const Range& parents,
                        BackwardFn backward, const char* op_name) {
  check_finite(values, op_name);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  bool any = false;
  if (g_grad_enabled) {
    for (const Tensor& p : parents) any = any || p.requires_grad();
  }
  if (any) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (const Tensor& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward);
  }
  return Tensor::from_node(std::move(node));
}

}  // namespace

Tensor make_result(Shape shape, std::vector<Real> values,
                   std::initializer_list<Tensor> parents, BackwardFn backward,
                   const char* op_name) {
  return make_result_impl(std::move(shape), std::move(values), parents,
                          std::move(backward), op_name);
}

Tensor make_result(Shape shape, std::vector<Real> values,
                   const std::vector<Tensor>& parents, BackwardFn backward,
                   const char* op_name) {
  return make_result_impl(std::move(shape), std::move(values), parents,
                          std::move(backward), op_name);
}

}  // namespace detail

}  // namespace surfreg
