#pragma once

#include <cstdint>
#include <vector>

#include "surfreg/tensor.hpp"

namespace SURFREG_NAMESPACE {

struct AdamOptions {
  Real learning_rate = Real(1e-4);
  Real beta1 = Real(0.9);
  Real beta2 = Real(0.999);
  Real epsilon = Real(1e-8);
};

/// Adam with bias correction over a fixed list of leaf tensors.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options);

  /// Applies one update from the gradients currently accumulated in the
  /// parameters. Throws NumericError, leaving every parameter untouched, if
  /// any gradient is NaN or infinite.
  void step();
  void zero_grad();

  std::uint64_t step_count() const { return step_; }
  const AdamOptions& options() const { return options_; }
  void set_learning_rate(Real lr) { options_.learning_rate = lr; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<Real>> first_moment_;
  std::vector<std::vector<Real>> second_moment_;
  AdamOptions options_;
  std::uint64_t step_ = 0;
};

}  // namespace surfreg
