#include "surfreg/adam.hpp"

#include <cmath>
#include <string>

#include "surfreg/error.hpp"

namespace SURFREG_NAMESPACE {

Adam::Adam(std::vector<Tensor> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  if (!(options_.learning_rate > 0)) throw ConfigError("adam: learning rate must be positive");
  for (auto& p : params_) {
    if (!p.is_leaf()) throw ContractError("adam: parameters must be leaf tensors");
    p.set_requires_grad(true);
    first_moment_.emplace_back(p.size(), Real{0});
    second_moment_.emplace_back(p.size(), Real{0});
  }
}

void Adam::step() {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    for (Real g : params_[k].grad()) {
      if (!std::isfinite(g)) {
        throw NumericError("adam: non-finite gradient in parameter " + std::to_string(k) +
                           " at step " + std::to_string(step_ + 1));
      }
    }
  }
  ++step_;
  const double t = static_cast<double>(step_);
  const Real bc1 = Real(1.0 - std::pow(static_cast<double>(options_.beta1), t));
  const Real bc2 = Real(1.0 - std::pow(static_cast<double>(options_.beta2), t));
  const Real b1 = options_.beta1, b2 = options_.beta2;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto values = params_[k].mutable_values();
    auto grad = params_[k].grad();
    auto& m = first_moment_[k];
    auto& v = second_moment_[k];
    for (std::size_t i = 0; i < values.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * grad[i];
      v[i] = b2 * v[i] + (1 - b2) * grad[i] * grad[i];
      const Real m_hat = m[i] / bc1;
      const Real v_hat = v[i] / bc2;
      values[i] -= options_.learning_rate * m_hat / (std::sqrt(v_hat) + options_.epsilon);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace surfreg
