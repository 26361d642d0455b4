#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "surfreg/tensor.hpp"

namespace SURFREG_NAMESPACE {

/// A named learnable tensor, as stored in checkpoints.
struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedTensor>;

using Rng = std::mt19937_64;

/// Fully connected layer y = x W + b with W stored in x out. The bias may be
/// left undefined.
struct Linear {
  Tensor weight;
  Tensor bias;

  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
  /// He-style uniform fan-in initialization, zero bias.
  static Linear init(std::size_t in, std::size_t out, Rng& rng);
};

/// Linear layers with ReLU between consecutive layers (none after the last).
struct Mlp {
  std::vector<Linear> layers;

  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
  /// widths = {in, hidden..., out}.
  static Mlp init(const std::vector<std::size_t>& widths, Rng& rng);
};

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;

  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
  static LayerNormParams init(std::size_t dim);
};

enum class AttentionVariant { kClassic, kSurface };

const char* to_string(AttentionVariant v);
AttentionVariant parse_attention_variant(const std::string& name);

struct AttentionConfig {
  std::size_t embed_dim = 64;
  std::size_t heads = 4;
  std::size_t ff_hidden = 512;
  bool layer_norm = true;
  /// Extra factor on the initial weights of the last projection of each
  /// residual branch (attention output, second feed-forward layer).
  double branch_init_gain = 1.0;

  std::size_t head_dim() const { return embed_dim / heads; }
  /// Throws ConfigError unless embed_dim is positive and divisible by heads.
  void validate() const;
};

/// Query/key/value/output projections, each embed_dim x embed_dim; heads
/// use consecutive column blocks of the projected features. The key
/// projection has no bias: it would shift every score of a row equally.
struct AttentionParams {
  Linear query;
  Linear key;
  Linear value;
  Linear output;

  void collect(const std::string& prefix, ParamList& out) const;
  static AttentionParams init(const AttentionConfig& cfg, Rng& rng);
};

/// Attention sub-block plus feed-forward sub-block, each wrapped in a
/// residual connection with optional pre-normalization. Normalization
/// tensors are left undefined when the config disables it; norm_context only
/// exists for cross-attention blocks.
struct AttentionBlockParams {
  AttentionParams attention;
  Mlp feed_forward;
  LayerNormParams norm_query;
  LayerNormParams norm_context;
  LayerNormParams norm_ff;

  void collect(const std::string& prefix, ParamList& out) const;
  static AttentionBlockParams init(const AttentionConfig& cfg, Rng& rng, bool cross);
};

/// Multi-head attention of the rows of x1 (queries) over the rows of x2
/// (keys/values). With a non-empty `areas` (one positive weight per row of
/// x2) the per-head scores use the area-weighted softmax; otherwise plain
/// softmax. When `maps` is non-null the normalized per-head score matrices
/// are appended to it.
Tensor attend(const Tensor& x1, const Tensor& x2, std::span<const Real> areas,
              const AttentionParams& params, const AttentionConfig& cfg,
              std::vector<Tensor>* maps = nullptr);

/// Same as attend(...) for the variant: kSurface requires areas, kClassic
/// ignores them. Throws ConfigError when kSurface has no areas.
Tensor attend(const Tensor& x1, const Tensor& x2, std::span<const Real> areas,
              AttentionVariant variant, const AttentionParams& params,
              const AttentionConfig& cfg, std::vector<Tensor>* maps = nullptr);

/// One transformer layer: x1 + Attn(LN(x1), LN(x2)), then h + FF(LN(h)).
/// Self-attention is expressed by passing the same tensor as x1 and x2; the
/// query normalization is then shared by queries and keys.
Tensor layer(const Tensor& x1, const Tensor& x2, std::span<const Real> areas,
             AttentionVariant variant, const AttentionBlockParams& params,
             const AttentionConfig& cfg, std::vector<Tensor>* maps = nullptr);

/// Normalized per-head score matrices (n x m each) of the layer's attention
/// sub-block, computed without recording a graph.
std::vector<Tensor> attention_maps(const Tensor& x1, const Tensor& x2,
                                   std::span<const Real> areas, AttentionVariant variant,
                                   const AttentionBlockParams& params,
                                   const AttentionConfig& cfg);

/// Graph-free evaluation of attend(...) that processes keys in chunks with a
/// running log-sum-exp and queries in row blocks, so peak scratch memory is
/// O(chunk^2) per head instead of O(n m).
Tensor attend_chunked(const Tensor& x1, const Tensor& x2, std::span<const Real> areas,
                      AttentionVariant variant, const AttentionParams& params,
                      const AttentionConfig& cfg, std::size_t chunk);

/// Graph-free layer(...) built on attend_chunked.
Tensor layer_chunked(const Tensor& x1, const Tensor& x2, std::span<const Real> areas,
                     AttentionVariant variant, const AttentionBlockParams& params,
                     const AttentionConfig& cfg, std::size_t chunk);

}  // namespace surfreg
