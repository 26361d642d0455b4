#include "surfreg/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "eigen_view.hpp"
#include "surfreg/error.hpp"
#include "surfreg/ops.hpp"

namespace SURFREG_NAMESPACE {

Tensor Linear::forward(const Tensor& x) const {
  Tensor y = ops::matmul(x, weight);
  return bias.defined() ? ops::add_rowwise(y, bias) : y;
}

void Linear::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

Linear Linear::init(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<Real> w(in * out);
  for (auto& v : w) v = static_cast<Real>(dist(rng));
  return {Tensor::from_values({in, out}, std::move(w), true), Tensor::zeros({1, out}, true)};
}

Tensor Mlp::forward(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i].forward(h);
    if (i + 1 < layers.size()) h = ops::relu(h);
  }
  return h;
}

void Mlp::collect(const std::string& prefix, ParamList& out) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].collect(prefix + "." + std::to_string(i), out);
  }
}

Mlp Mlp::init(const std::vector<std::size_t>& widths, Rng& rng) {
  Mlp mlp;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    mlp.layers.push_back(Linear::init(widths[i], widths[i + 1], rng));
  }
  return mlp;
}

Tensor LayerNormParams::forward(const Tensor& x) const { return ops::layer_norm(x, gamma, beta); }

void LayerNormParams::collect(const std::string& prefix, ParamList& out) const {
  if (!gamma.defined()) return;
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

LayerNormParams LayerNormParams::init(std::size_t dim) {
  return {Tensor::full({1, dim}, Real{1}, true), Tensor::zeros({1, dim}, true)};
}

const char* to_string(AttentionVariant v) {
  return v == AttentionVariant::kSurface ? "surface" : "classic";
}

AttentionVariant parse_attention_variant(const std::string& name) {
  if (name == "surface") return AttentionVariant::kSurface;
  if (name == "classic") return AttentionVariant::kClassic;
  throw ConfigError("unknown attention variant '" + name + "'");
}

void AttentionConfig::validate() const {
  if (embed_dim == 0 || heads == 0) throw ConfigError("attention: embed_dim and heads must be positive");
  if (embed_dim % heads != 0) {
    throw ConfigError("attention: embed_dim " + std::to_string(embed_dim) +
                      " is not divisible by heads " + std::to_string(heads));
  }
  if (ff_hidden == 0) throw ConfigError("attention: ff_hidden must be positive");
}

void AttentionParams::collect(const std::string& prefix, ParamList& out) const {
  query.collect(prefix + ".query", out);
  key.collect(prefix + ".key", out);
  value.collect(prefix + ".value", out);
  output.collect(prefix + ".output", out);
}

AttentionParams AttentionParams::init(const AttentionConfig& cfg, Rng& rng) {
  const std::size_t d = cfg.embed_dim;
  AttentionParams p;
  p.query = Linear::init(d, d, rng);
  p.key = Linear::init(d, d, rng);
  p.key.bias = Tensor();
  p.value = Linear::init(d, d, rng);
  p.output = Linear::init(d, d, rng);
  return p;
}

void AttentionBlockParams::collect(const std::string& prefix, ParamList& out) const {
  attention.collect(prefix + ".attn", out);
  feed_forward.collect(prefix + ".ff", out);
  norm_query.collect(prefix + ".norm_q", out);
  norm_context.collect(prefix + ".norm_kv", out);
  norm_ff.collect(prefix + ".norm_ff", out);
}

AttentionBlockParams AttentionBlockParams::init(const AttentionConfig& cfg, Rng& rng,
                                                bool cross) {
  cfg.validate();
  AttentionBlockParams p;
  p.attention = AttentionParams::init(cfg, rng);
  p.feed_forward = Mlp::init({cfg.embed_dim, cfg.ff_hidden, cfg.embed_dim}, rng);
  if (cfg.branch_init_gain != 1.0) {
    for (Tensor* w : {&p.attention.output.weight, &p.feed_forward.layers.back().weight}) {
      for (Real& v : w->mutable_values()) v *= static_cast<Real>(cfg.branch_init_gain);
    }
  }
  if (cfg.layer_norm) {
    p.norm_query = LayerNormParams::init(cfg.embed_dim);
    if (cross) p.norm_context = LayerNormParams::init(cfg.embed_dim);
    p.norm_ff = LayerNormParams::init(cfg.embed_dim);
  }
  return p;
}

namespace {

void check_inputs(const Tensor& x1, const Tensor& x2, std::span<const Real> areas,
                  const AttentionConfig& cfg) {
  cfg.validate();
  if (x1.rank() != 2 || x2.rank() != 2 || x1.cols() != cfg.embed_dim ||
      x2.cols() != cfg.embed_dim) {
    throw DimensionError("attend: inputs must be n x " + std::to_string(cfg.embed_dim) +
                         ", got " + shape_string(x1.shape()) + " and " + shape_string(x2.shape()));
  }
  if (x2.rows() == 0) throw DimensionError("attend: no keys");
  if (!areas.empty() && areas.size() != x2.rows()) {
    throw DimensionError("attend: " + std::to_string(areas.size()) + " area weights for " +
                         std::to_string(x2.rows()) + " keys");
  }
}

void check_norms(const AttentionBlockParams& params, bool self) {
  if (!params.norm_query.gamma.defined() || !params.norm_ff.gamma.defined() ||
      (!self && !params.norm_context.gamma.defined())) {
    throw ConfigError("layer normalization enabled but block has no normalization parameters");
  }
}

std::span<const Real> areas_for(AttentionVariant variant, std::span<const Real> areas) {
  if (variant == AttentionVariant::kClassic) return {};
  if (areas.empty()) throw ConfigError("surface attention requires area weights");
  return areas;
}

}  // namespace

Tensor attend(const Tensor& x1, const Tensor& x2, std::span<const Real> areas,
              const AttentionParams& params, const AttentionConfig& cfg,
              std::vector<Tensor>* maps) {
  check_inputs(x1, x2, areas, cfg);
  const std::size_t dh = cfg.head_dim();
  const Real score_scale = Real(1.0 / std::sqrt(static_cast<double>(dh)));

  const Tensor q = params.query.forward(x1);
  const Tensor k = params.key.forward(x2);
  const Tensor v = params.value.forward(x2);

  std::vector<Tensor> heads;
  heads.reserve(cfg.heads);
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const bool whole = cfg.heads == 1;
    const Tensor qh = whole ? q : ops::slice_cols(q, h * dh, dh);
    const Tensor kh = whole ? k : ops::slice_cols(k, h * dh, dh);
    const Tensor vh = whole ? v : ops::slice_cols(v, h * dh, dh);
    const Tensor scores = ops::scale(ops::matmul_nt(qh, kh), score_scale);
    const Tensor probs = areas.empty() ? ops::softmax_rows(scores) : ops::weighted_softmax(scores, areas);
    if (maps) maps->push_back(probs.detach());
    heads.push_back(ops::matmul(probs, vh));
  }
  const Tensor merged = heads.size() == 1 ? heads[0] : ops::concat_cols(heads);
  return params.output.forward(merged);
}

Tensor attend(const Tensor& x1, const Tensor& x2, std::span<const Real> areas,
              AttentionVariant variant, const AttentionParams& params,
              const AttentionConfig& cfg, std::vector<Tensor>* maps) {
  return attend(x1, x2, areas_for(variant, areas), params, cfg, maps);
}

Tensor layer(const Tensor& x1, const Tensor& x2, std::span<const Real> areas,
             AttentionVariant variant, const AttentionBlockParams& params,
             const AttentionConfig& cfg, std::vector<Tensor>* maps) {
  const bool self = x1.id() == x2.id();
  Tensor q_in = x1;
  Tensor kv_in = x2;
  if (cfg.layer_norm) {
    check_norms(params, self);
    q_in = params.norm_query.forward(x1);
    kv_in = self ? q_in : params.norm_context.forward(x2);
  }
  Tensor h = ops::add(x1, attend(q_in, kv_in, areas, variant, params.attention, cfg, maps));
  const Tensor ff_in = cfg.layer_norm ? params.norm_ff.forward(h) : h;
  return ops::add(h, params.feed_forward.forward(ff_in));
}

std::vector<Tensor> attention_maps(const Tensor& x1, const Tensor& x2,
                                   std::span<const Real> areas, AttentionVariant variant,
                                   const AttentionBlockParams& params,
                                   const AttentionConfig& cfg) {
  NoGradGuard no_grad;
  std::vector<Tensor> maps;
  const bool self = x1.id() == x2.id();
  Tensor q_in = x1;
  Tensor kv_in = x2;
  if (cfg.layer_norm) {
    check_norms(params, self);
    q_in = params.norm_query.forward(x1);
    kv_in = self ? q_in : params.norm_context.forward(x2);
  }
  attend(q_in, kv_in, areas, variant, params.attention, cfg, &maps);
  return maps;
}

namespace {

using detail::RowMatrix;
using detail::view;

RowMatrix project(const RowMatrix& x, const Linear& lin) {
  const std::size_t in = lin.weight.rows(), out = lin.weight.cols();
  RowMatrix y = x * view(lin.weight.values(), in, out);
  if (lin.bias.defined()) y.rowwise() += view(lin.bias.values(), 1, out).row(0);
  return y;
}

RowMatrix layer_norm_rows(const RowMatrix& x, const LayerNormParams& ln) {
  const auto m = x.cols();
  auto gamma = view(ln.gamma.values(), 1, static_cast<std::size_t>(m));
  auto beta = view(ln.beta.values(), 1, static_cast<std::size_t>(m));
  RowMatrix y(x.rows(), m);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Real mean = 0;
    for (Eigen::Index j = 0; j < m; ++j) mean += x(i, j);
    mean /= static_cast<Real>(m);
    Real var = 0;
    for (Eigen::Index j = 0; j < m; ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
    var /= static_cast<Real>(m);
    const Real is = Real{1} / std::sqrt(var + Real(1e-5));
    for (Eigen::Index j = 0; j < m; ++j) y(i, j) = (x(i, j) - mean) * is * gamma(0, j) + beta(0, j);
  }
  return y;
}

RowMatrix attend_chunked_matrix(const RowMatrix& x1, const RowMatrix& x2,
                                std::span<const Real> areas, const AttentionParams& params,
                                const AttentionConfig& cfg, std::size_t chunk) {
  const std::size_t dh = cfg.head_dim();
  const Real score_scale = Real(1.0 / std::sqrt(static_cast<double>(dh)));
  const auto n = x1.rows(), m = x2.rows();
  const RowMatrix q = project(x1, params.query);
  const RowMatrix k = project(x2, params.key);
  const RowMatrix v = project(x2, params.value);
  std::vector<Real> log_w;
  if (!areas.empty()) {
    log_w.resize(areas.size());
    for (std::size_t j = 0; j < areas.size(); ++j) {
      if (!(areas[j] > 0)) throw DomainError("attend_chunked: non-positive area weight");
      log_w[j] = std::log(areas[j]);
    }
  }
  const auto step = static_cast<Eigen::Index>(chunk);
  RowMatrix merged(n, static_cast<Eigen::Index>(cfg.embed_dim));
  RowMatrix scores;
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const auto c0 = static_cast<Eigen::Index>(h * dh);
    const auto w = static_cast<Eigen::Index>(dh);
    for (Eigen::Index r0 = 0; r0 < n; r0 += step) {
      const Eigen::Index rows = std::min(step, n - r0);
      RowMatrix acc = RowMatrix::Zero(rows, w);
      std::vector<Real> run_max(static_cast<std::size_t>(rows), -std::numeric_limits<Real>::infinity());
      std::vector<Real> run_sum(static_cast<std::size_t>(rows), Real{0});
      for (Eigen::Index k0 = 0; k0 < m; k0 += step) {
        const Eigen::Index cols = std::min(step, m - k0);
        scores.noalias() = q.block(r0, c0, rows, w) * k.block(k0, c0, cols, w).transpose();
        for (Eigen::Index i = 0; i < rows; ++i) {
          Real mx = run_max[static_cast<std::size_t>(i)];
          for (Eigen::Index j = 0; j < cols; ++j) {
            Real s = scores(i, j) * score_scale;
            if (!log_w.empty()) s += log_w[static_cast<std::size_t>(k0 + j)];
            scores(i, j) = s;
            mx = std::max(mx, s);
          }
          const Real rescale = std::exp(run_max[static_cast<std::size_t>(i)] - mx);
          Real sum = run_sum[static_cast<std::size_t>(i)] * rescale;
          for (Eigen::Index j = 0; j < cols; ++j) {
            scores(i, j) = std::exp(scores(i, j) - mx);
            sum += scores(i, j);
          }
          acc.row(i) *= rescale;
          run_max[static_cast<std::size_t>(i)] = mx;
          run_sum[static_cast<std::size_t>(i)] = sum;
        }
        acc.noalias() += scores * v.block(k0, c0, cols, w);
      }
      for (Eigen::Index i = 0; i < rows; ++i) {
        merged.block(r0 + i, c0, 1, w) = acc.row(i) / run_sum[static_cast<std::size_t>(i)];
      }
    }
  }
  return project(merged, params.output);
}

RowMatrix to_matrix(const Tensor& t) { return view(t.values(), t.rows(), t.cols()); }

Tensor to_tensor(const RowMatrix& m) {
  std::vector<Real> v(m.data(), m.data() + m.size());
  return Tensor::from_values({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                             std::move(v));
}

}  // namespace

Tensor attend_chunked(const Tensor& x1, const Tensor& x2, std::span<const Real> areas,
                      AttentionVariant variant, const AttentionParams& params,
                      const AttentionConfig& cfg, std::size_t chunk) {
  check_inputs(x1, x2, areas, cfg);
  if (chunk == 0) throw ConfigError("attend_chunked: chunk size must be positive");
  return to_tensor(attend_chunked_matrix(to_matrix(x1), to_matrix(x2), areas_for(variant, areas),
                                         params, cfg, chunk));
}

Tensor layer_chunked(const Tensor& x1, const Tensor& x2, std::span<const Real> areas,
                     AttentionVariant variant, const AttentionBlockParams& params,
                     const AttentionConfig& cfg, std::size_t chunk) {
  check_inputs(x1, x2, areas, cfg);
  if (chunk == 0) throw ConfigError("layer_chunked: chunk size must be positive");
  const bool self = x1.id() == x2.id();
  const RowMatrix a = to_matrix(x1);
  RowMatrix q_in = a;
  RowMatrix kv_in;
  if (cfg.layer_norm) {
    check_norms(params, self);
    q_in = layer_norm_rows(a, params.norm_query);
    kv_in = self ? q_in : layer_norm_rows(to_matrix(x2), params.norm_context);
  } else {
    kv_in = self ? a : to_matrix(x2);
  }
  RowMatrix h = a + attend_chunked_matrix(q_in, kv_in, areas_for(variant, areas), params.attention,
                                          cfg, chunk);
  RowMatrix f = cfg.layer_norm ? layer_norm_rows(h, params.norm_ff) : h;
  const auto& layers = params.feed_forward.layers;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    f = project(f, layers[i]);
    if (i + 1 < layers.size()) f = f.cwiseMax(Real{0});
  }
  h += f;
  return to_tensor(h);
}

}  // namespace SURFREG_NAMESPACE
