#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "surfreg/tensor.hpp"

// Differentiable operations over rank-2 tensors (plus scalar reductions).
// There is no implicit broadcasting: every binary op requires equal shapes,
// except add_rowwise which adds a 1 x m row to each row of an n x m matrix.
namespace SURFREG_NAMESPACE::ops {

Tensor matmul(const Tensor& a, const Tensor& b);
/// a * b^T without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real factor);
Tensor square(const Tensor& a);
Tensor add_rowwise(const Tensor& a, const Tensor& row);

Tensor relu(const Tensor& a);

/// Row-wise normalization with affine parameters gamma, beta of shape 1 x m.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Real eps = Real(1e-5));

Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count);
Tensor select_rows(const Tensor& a, std::span<const std::size_t> rows);

/// Sum / mean of every entry, as a rank-0 tensor.
Tensor reduce_sum(const Tensor& a);
Tensor reduce_mean(const Tensor& a);

Tensor softmax_rows(const Tensor& logits);

/// Row i, column j: exp(l_ij) w_j / sum_t exp(l_it) w_t. The weights are
/// constants; only the logits receive gradient. Throws DomainError unless
/// every weight is positive and finite.
Tensor weighted_softmax(const Tensor& logits, std::span<const Real> weights);

/// D_ij = |a_i - b_j|^2 for row sets a (n x k) and b (m x k).
Tensor sqdist_matrix(const Tensor& a, const Tensor& b);

/// Row minima as n x 1; gradient flows to the first minimal entry.
Tensor min_rows(const Tensor& a);
/// Column minima as 1 x m; gradient flows to the first minimal entry.
Tensor min_cols(const Tensor& a);

}  // namespace surfreg::ops
