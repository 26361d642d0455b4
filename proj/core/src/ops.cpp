#include "surfreg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "eigen_view.hpp"
#include "surfreg/error.hpp"

namespace SURFREG_NAMESPACE::ops {

using detail::make_result;
using detail::Node;
using detail::view;

namespace {

void require_matrix(const Tensor& a, const char* op) {
  if (a.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(a.shape()));
  }
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

// Gradient buffer of parent `k`, or nullptr when that parent needs none.
Real* parent_grad(Node& out, std::size_t k) {
  Node& p = *out.parents[k];
  if (!p.requires_grad) return nullptr;
  return p.ensure_grad().data();
}

std::span<Real> parent_grad_span(Node& out, std::size_t k) {
  Node& p = *out.parents[k];
  if (!p.requires_grad) return {};
  return p.ensure_grad();
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  std::vector<Real> out(m * n);
  view(std::span<Real>(out), m, n).noalias() = view(a.values(), m, k) * view(b.values(), k, n);
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& o) {
    auto g = view(std::span<const Real>(o.grad), m, n);
    if (auto ga = parent_grad_span(o, 0); !ga.empty()) {
      view(ga, m, k).noalias() += g * view(std::span<const Real>(o.parents[1]->value), k, n).transpose();
    }
    if (auto gb = parent_grad_span(o, 1); !gb.empty()) {
      view(gb, k, n).noalias() += view(std::span<const Real>(o.parents[0]->value), m, k).transpose() * g;
    }
  }, "matmul");
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw DimensionError("matmul_nt: inner dimensions differ " + shape_string(a.shape()) +
                         " x " + shape_string(b.shape()) + "^T");
  }
  std::vector<Real> out(m * n);
  view(std::span<Real>(out), m, n).noalias() =
      view(a.values(), m, k) * view(b.values(), n, k).transpose();
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& o) {
    auto g = view(std::span<const Real>(o.grad), m, n);
    if (auto ga = parent_grad_span(o, 0); !ga.empty()) {
      view(ga, m, k).noalias() += g * view(std::span<const Real>(o.parents[1]->value), n, k);
    }
    if (auto gb = parent_grad_span(o, 1); !gb.empty()) {
      view(gb, n, k).noalias() += g.transpose() * view(std::span<const Real>(o.parents[0]->value), m, k);
    }
  }, "matmul_nt");
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<Real> out(m * n);
  view(std::span<Real>(out), n, m) = view(a.values(), m, n).transpose();
  return make_result({n, m}, std::move(out), {a}, [m, n](Node& o) {
    if (auto ga = parent_grad_span(o, 0); !ga.empty()) {
      view(ga, m, n) += view(std::span<const Real>(o.grad), n, m).transpose();
    }
  }, "transpose");
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  std::vector<Real> out(a.size());
  auto x = a.values(), y = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& o) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (Real* g = parent_grad(o, k)) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
      }
    }
  }, "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  std::vector<Real> out(a.size());
  auto x = a.values(), y = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& o) {
    if (Real* g = parent_grad(o, 0)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    }
    if (Real* g = parent_grad(o, 1)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] -= o.grad[i];
    }
  }, "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  std::vector<Real> out(a.size());
  auto x = a.values(), y = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& o) {
    const auto& x = o.parents[0]->value;
    const auto& y = o.parents[1]->value;
    if (Real* g = parent_grad(o, 0)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * y[i];
    }
    if (Real* g = parent_grad(o, 1)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * x[i];
    }
  }, "mul");
}

Tensor scale(const Tensor& a, Real factor) {
  std::vector<Real> out(a.size());
  auto x = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return make_result(a.shape(), std::move(out), {a}, [factor](Node& o) {
    if (Real* g = parent_grad(o, 0)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * factor;
    }
  }, "scale");
}

Tensor square(const Tensor& a) {
  std::vector<Real> out(a.size());
  auto x = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * x[i];
  return make_result(a.shape(), std::move(out), {a}, [](Node& o) {
    const auto& x = o.parents[0]->value;
    if (Real* g = parent_grad(o, 0)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += 2 * x[i] * o.grad[i];
    }
  }, "square");
}

Tensor add_rowwise(const Tensor& a, const Tensor& row) {
  require_matrix(a, "add_rowwise");
  require_matrix(row, "add_rowwise");
  const std::size_t n = a.rows(), m = a.cols();
  if (row.rows() != 1 || row.cols() != m) {
    throw DimensionError("add_rowwise: row " + shape_string(row.shape()) + " does not fit " +
                         shape_string(a.shape()));
  }
  std::vector<Real> out(a.values().begin(), a.values().end());
  auto r = row.values();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] += r[j];
  }
  return make_result(a.shape(), std::move(out), {a, row}, [n, m](Node& o) {
    if (Real* g = parent_grad(o, 0)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    }
    if (Real* g = parent_grad(o, 1)) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) g[j] += o.grad[i * m + j];
      }
    }
  }, "add_rowwise");
}

Tensor relu(const Tensor& a) {
  std::vector<Real> out(a.size());
  auto x = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0 ? x[i] : Real{0};
  return make_result(a.shape(), std::move(out), {a}, [](Node& o) {
    const auto& x = o.parents[0]->value;
    if (Real* g = parent_grad(o, 0)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) {
        if (x[i] > 0) g[i] += o.grad[i];
      }
    }
  }, "relu");
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps) {
  require_matrix(x, "layer_norm");
  const std::size_t n = x.rows(), m = x.cols();
  if (gamma.shape() != Shape{1, m} || beta.shape() != Shape{1, m}) {
    throw DimensionError("layer_norm: affine parameters must be 1x" + std::to_string(m));
  }
  auto normed = std::make_shared<std::vector<Real>>(n * m);
  auto inv_std = std::make_shared<std::vector<Real>>(n);
  std::vector<Real> out(n * m);
  auto in = x.values();
  auto gm = gamma.values();
  auto bt = beta.values();
  for (std::size_t i = 0; i < n; ++i) {
    const Real* row = in.data() + i * m;
    Real mean = 0;
    for (std::size_t j = 0; j < m; ++j) mean += row[j];
    mean /= static_cast<Real>(m);
    Real var = 0;
    for (std::size_t j = 0; j < m; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<Real>(m);
    const Real is = Real{1} / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < m; ++j) {
      const Real h = (row[j] - mean) * is;
      (*normed)[i * m + j] = h;
      out[i * m + j] = h * gm[j] + bt[j];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gamma, beta}, [n, m, normed, inv_std](Node& o) {
    const auto& gm = o.parents[1]->value;
    const auto& h = *normed;
    if (Real* gx = parent_grad(o, 0)) {
      std::vector<Real> dh(m);
      for (std::size_t i = 0; i < n; ++i) {
        Real mean_dh = 0, mean_dh_h = 0;
        for (std::size_t j = 0; j < m; ++j) {
          dh[j] = o.grad[i * m + j] * gm[j];
          mean_dh += dh[j];
          mean_dh_h += dh[j] * h[i * m + j];
        }
        mean_dh /= static_cast<Real>(m);
        mean_dh_h /= static_cast<Real>(m);
        for (std::size_t j = 0; j < m; ++j) {
          gx[i * m + j] += (*inv_std)[i] * (dh[j] - mean_dh - h[i * m + j] * mean_dh_h);
        }
      }
    }
    if (Real* gg = parent_grad(o, 1)) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) gg[j] += o.grad[i * m + j] * h[i * m + j];
      }
    }
    if (Real* gb = parent_grad(o, 2)) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) gb[j] += o.grad[i * m + j];
      }
    }
  }, "layer_norm");
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  for (const auto& p : parts) require_matrix(p, "concat_cols");
  const std::size_t n = parts[0].rows();
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != n) throw DimensionError("concat_cols: row counts differ");
    offsets.push_back(total);
    total += p.cols();
  }
  std::vector<Real> out(n * total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t c = parts[k].cols();
    auto v = parts[k].values();
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(v.data() + i * c, c, out.data() + i * total + offsets[k]);
    }
  }
  return make_result({n, total}, std::move(out), parts, [n, total, offsets](Node& o) {
    for (std::size_t k = 0; k < o.parents.size(); ++k) {
      Real* g = parent_grad(o, k);
      if (!g) continue;
      const std::size_t c = o.parents[k]->shape[1];
      for (std::size_t i = 0; i < n; ++i) {
        const Real* src = o.grad.data() + i * total + offsets[k];
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += src[j];
      }
    }
  }, "concat_cols");
}

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count) {
  require_matrix(a, "slice_cols");
  const std::size_t n = a.rows(), m = a.cols();
  if (start + count > m) throw DimensionError("slice_cols: range exceeds column count");
  std::vector<Real> out(n * count);
  auto v = a.values();
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(v.data() + i * m + start, count, out.data() + i * count);
  }
  return make_result({n, count}, std::move(out), {a}, [n, m, start, count](Node& o) {
    if (Real* g = parent_grad(o, 0)) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < count; ++j) g[i * m + start + j] += o.grad[i * count + j];
      }
    }
  }, "slice_cols");
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  for (const auto& p : parts) require_matrix(p, "concat_rows");
  const std::size_t m = parts[0].cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.cols() != m) throw DimensionError("concat_rows: column counts differ");
    total += p.rows();
  }
  std::vector<Real> out;
  out.reserve(total * m);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  return make_result({total, m}, std::move(out), parts, [](Node& o) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < o.parents.size(); ++k) {
      const std::size_t len = o.parents[k]->value.size();
      if (Real* g = parent_grad(o, k)) {
        for (std::size_t i = 0; i < len; ++i) g[i] += o.grad[offset + i];
      }
      offset += len;
    }
  }, "concat_rows");
}

Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count) {
  require_matrix(a, "slice_rows");
  const std::size_t m = a.cols();
  if (start + count > a.rows()) throw DimensionError("slice_rows: range exceeds row count");
  auto v = a.values();
  std::vector<Real> out(v.begin() + static_cast<std::ptrdiff_t>(start * m),
                        v.begin() + static_cast<std::ptrdiff_t>((start + count) * m));
  return make_result({count, m}, std::move(out), {a}, [start, m](Node& o) {
    if (Real* g = parent_grad(o, 0)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[start * m + i] += o.grad[i];
    }
  }, "slice_rows");
}

Tensor select_rows(const Tensor& a, std::span<const std::size_t> rows) {
  require_matrix(a, "select_rows");
  const std::size_t n = a.rows(), m = a.cols();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<Real> out(idx.size() * m);
  auto v = a.values();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= n) throw DimensionError("select_rows: index out of range");
    std::copy_n(v.data() + idx[r] * m, m, out.data() + r * m);
  }
  const std::size_t k = idx.size();
  return make_result({k, m}, std::move(out), {a}, [idx = std::move(idx), m](Node& o) {
    if (Real* g = parent_grad(o, 0)) {
      for (std::size_t r = 0; r < idx.size(); ++r) {
        for (std::size_t j = 0; j < m; ++j) g[idx[r] * m + j] += o.grad[r * m + j];
      }
    }
  }, "select_rows");
}

Tensor reduce_sum(const Tensor& a) {
  Real s = 0;
  for (Real v : a.values()) s += v;
  return make_result({}, {s}, {a}, [](Node& o) {
    if (Real* g = parent_grad(o, 0)) {
      const std::size_t len = o.parents[0]->value.size();
      for (std::size_t i = 0; i < len; ++i) g[i] += o.grad[0];
    }
  }, "reduce_sum");
}

Tensor reduce_mean(const Tensor& a) {
  if (a.size() == 0) throw DimensionError("reduce_mean: empty tensor");
  const Real inv = Real{1} / static_cast<Real>(a.size());
  Real s = 0;
  for (Real v : a.values()) s += v;
  return make_result({}, {s * inv}, {a}, [inv](Node& o) {
    if (Real* g = parent_grad(o, 0)) {
      const std::size_t len = o.parents[0]->value.size();
      for (std::size_t i = 0; i < len; ++i) g[i] += o.grad[0] * inv;
    }
  }, "reduce_mean");
}

namespace {

// Backward shared by the plain and weighted row softmax: the weights are
// folded into the output probabilities, so dL/dl = y * (g - <g, y>).
void softmax_backward(Node& o) {
  Real* g = parent_grad(o, 0);
  if (!g) return;
  const std::size_t n = o.shape[0], m = o.shape[1];
  for (std::size_t i = 0; i < n; ++i) {
    const Real* y = o.value.data() + i * m;
    const Real* gy = o.grad.data() + i * m;
    Real dot = 0;
    for (std::size_t j = 0; j < m; ++j) dot += gy[j] * y[j];
    for (std::size_t j = 0; j < m; ++j) g[i * m + j] += y[j] * (gy[j] - dot);
  }
}

std::vector<Real> row_softmax(std::span<const Real> logits, std::size_t n, std::size_t m,
                              std::span<const Real> log_weights) {
  std::vector<Real> out(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    const Real* l = logits.data() + i * m;
    Real* y = out.data() + i * m;
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
      y[j] = log_weights.empty() ? l[j] : l[j] + log_weights[j];
      mx = std::max(mx, y[j]);
    }
    Real sum = 0;
    for (std::size_t j = 0; j < m; ++j) {
      y[j] = std::exp(y[j] - mx);
      sum += y[j];
    }
    const Real inv = Real{1} / sum;
    for (std::size_t j = 0; j < m; ++j) y[j] *= inv;
  }
  return out;
}

}  // namespace

Tensor softmax_rows(const Tensor& logits) {
  require_matrix(logits, "softmax_rows");
  const std::size_t n = logits.rows(), m = logits.cols();
  return make_result(logits.shape(), row_softmax(logits.values(), n, m, {}), {logits},
                     softmax_backward, "softmax_rows");
}

Tensor weighted_softmax(const Tensor& logits, std::span<const Real> weights) {
  require_matrix(logits, "weighted_softmax");
  const std::size_t n = logits.rows(), m = logits.cols();
  if (weights.size() != m) {
    throw DimensionError("weighted_softmax: " + std::to_string(weights.size()) +
                         " weights for " + std::to_string(m) + " columns");
  }
  std::vector<Real> log_w(m);
  for (std::size_t j = 0; j < m; ++j) {
    if (!(weights[j] > 0) || !std::isfinite(weights[j])) {
      throw DomainError("weighted_softmax: weight " + std::to_string(j) +
                        " is not positive and finite");
    }
    log_w[j] = std::log(weights[j]);
  }
  return make_result(logits.shape(), row_softmax(logits.values(), n, m, log_w), {logits},
                     softmax_backward, "weighted_softmax");
}

Tensor sqdist_matrix(const Tensor& a, const Tensor& b) {
  require_matrix(a, "sqdist_matrix");
  require_matrix(b, "sqdist_matrix");
  const std::size_t n = a.rows(), m = b.rows(), k = a.cols();
  if (b.cols() != k) throw DimensionError("sqdist_matrix: point dimensions differ");
  std::vector<Real> out(n * m);
  auto x = a.values(), y = b.values();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      Real s = 0;
      for (std::size_t c = 0; c < k; ++c) {
        const Real d = x[i * k + c] - y[j * k + c];
        s += d * d;
      }
      out[i * m + j] = s;
    }
  }
  return make_result({n, m}, std::move(out), {a, b}, [n, m, k](Node& o) {
    const auto& x = o.parents[0]->value;
    const auto& y = o.parents[1]->value;
    Real* ga = parent_grad(o, 0);
    Real* gb = parent_grad(o, 1);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        const Real g = o.grad[i * m + j];
        if (g == 0) continue;
        for (std::size_t c = 0; c < k; ++c) {
          const Real d = 2 * g * (x[i * k + c] - y[j * k + c]);
          if (ga) ga[i * k + c] += d;
          if (gb) gb[j * k + c] -= d;
        }
      }
    }
  }, "sqdist_matrix");
}

Tensor min_rows(const Tensor& a) {
  require_matrix(a, "min_rows");
  const std::size_t n = a.rows(), m = a.cols();
  if (m == 0) throw DimensionError("min_rows: no columns");
  std::vector<Real> out(n);
  std::vector<std::size_t> arg(n);
  auto v = a.values();
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < m; ++j) {
      if (v[i * m + j] < v[i * m + best]) best = j;
    }
    arg[i] = best;
    out[i] = v[i * m + best];
  }
  return make_result({n, 1}, std::move(out), {a}, [arg = std::move(arg), m](Node& o) {
    if (Real* g = parent_grad(o, 0)) {
      for (std::size_t i = 0; i < arg.size(); ++i) g[i * m + arg[i]] += o.grad[i];
    }
  }, "min_rows");
}

Tensor min_cols(const Tensor& a) {
  require_matrix(a, "min_cols");
  const std::size_t n = a.rows(), m = a.cols();
  if (n == 0) throw DimensionError("min_cols: no rows");
  std::vector<Real> out(a.values().begin(), a.values().begin() + static_cast<std::ptrdiff_t>(m));
  std::vector<std::size_t> arg(m, 0);
  auto v = a.values();
  for (std::size_t i = 1; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (v[i * m + j] < out[j]) {
        out[j] = v[i * m + j];
        arg[j] = i;
      }
    }
  }
  return make_result({1, m}, std::move(out), {a}, [arg = std::move(arg), m](Node& o) {
    if (Real* g = parent_grad(o, 0)) {
      for (std::size_t j = 0; j < m; ++j) g[arg[j] * m + j] += o.grad[j];
    }
  }, "min_cols");
}

}  // namespace surfreg::ops
