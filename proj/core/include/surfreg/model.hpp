#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "surfreg/attention.hpp"
#include "surfreg/geometry.hpp"
#include "surfreg/tensor.hpp"

namespace SURFREG_NAMESPACE {

using KeyValues = std::map<std::string, std::string>;

struct ModelConfig {
  std::size_t num_probes = 32;
  std::size_t latent_dim = 64;
  std::size_t encoder_layers = 8;
  std::size_t decoder_layers = 8;
  std::size_t heads = 4;
  std::vector<std::size_t> embedder_widths{8, 16, 32, 64};
  std::size_t ff_hidden = 512;
  std::vector<std::size_t> final_mlp_widths{48, 24, 12, 6, 3};
  double area_radius = kDefaultAreaRadius;
  bool layer_norm = true;
  /// Attention used wherever keys are cloud points. Latent self-attention
  /// and decoder cross-attention (keys are latents) are always classic.
  AttentionVariant variant = AttentionVariant::kSurface;
  /// Decoder emits source + MLP output instead of absolute coordinates.
  bool residual_output = false;
  std::uint64_t init_seed = 0;
  /// Scales the initial output projection of every residual branch.
  double branch_init_gain = 0.1;

  void validate() const;
  AttentionConfig attention() const;

  /// Keys are prefixed with "model.".
  KeyValues to_key_values() const;
  /// Applies every "model.*" key present; unknown "model.*" keys throw.
  void apply(const KeyValues& kv);
};

struct EncoderLayerParams {
  Mlp embedder;
  AttentionBlockParams cross;
  AttentionBlockParams self;
};

struct DecoderLayerParams {
  AttentionBlockParams cross;
  AttentionBlockParams self;
};

struct ModelParams {
  Tensor probes;            // K x d latent probes
  Tensor probe_positions;   // K x d, added to the probes at encoder entry
  Tensor latent_positions;  // K x d, added to the latents at decoder entry
  std::vector<EncoderLayerParams> encoder;
  Mlp decoder_embedder;
  std::vector<DecoderLayerParams> decoder;
  LayerNormParams final_norm;
  Mlp final_mlp;

  /// Every learnable tensor with a stable hierarchical name, in a fixed order.
  ParamList named() const;
  std::vector<Tensor> tensors() const;
  std::size_t parameter_count() const;

  /// He-uniform linear layers, N(0, 0.02) probes and positional encodings.
  static ModelParams init(const ModelConfig& cfg);
  /// Independent copy of every tensor.
  ModelParams clone() const;
};

struct LatentState {
  Tensor vectors;  // K x d
  std::string provenance;
};

/// Per-layer, per-head normalized attention scores captured during a forward
/// pass: encoder cross-attention is K x n_target, decoder cross-attention is
/// n_source x K.
struct AttentionTrace {
  std::vector<std::vector<Tensor>> encoder_cross;
  std::vector<std::vector<Tensor>> decoder_cross;
};

struct InferenceOptions {
  /// Zero evaluates the recorded (differentiable) path; otherwise attention
  /// runs graph-free in chunks of this many rows and keys.
  std::size_t chunk = 0;
};

class Model {
 public:
  Model(ModelConfig config, ModelParams params);
  explicit Model(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const ModelParams& params() const { return params_; }
  ModelParams& mutable_params() { return params_; }

  /// Area weights of a cloud as used by the attention layers.
  std::vector<Real> areas(std::span<const Point3> points) const;

  /// Encoder on an n x 3 coordinate tensor with its area weights.
  Tensor encode(const Tensor& points, std::span<const Real> areas, AttentionTrace* trace = nullptr,
                const InferenceOptions& options = {}) const;
  /// Decoder on an n x 3 source tensor and K x d latents.
  Tensor decode(const Tensor& points, std::span<const Real> areas, const Tensor& latents,
                AttentionTrace* trace = nullptr, const InferenceOptions& options = {}) const;

  LatentState encode(const PointCloud& target, const InferenceOptions& options = {}) const;
  std::vector<Point3> decode(const PointCloud& source, const LatentState& latents,
                             const InferenceOptions& options = {}) const;
  /// decode(source, encode(target)).
  std::vector<Point3> register_cloud(const PointCloud& source, const PointCloud& target,
                                     const InferenceOptions& options = {}) const;

 private:
  void check_latents(const Tensor& latents) const;

  ModelConfig config_;
  ModelParams params_;
};

/// Writes the "MRGCKPT1" checkpoint format.
void save_checkpoint(const ModelParams& params, const ModelConfig& config, const std::string& path,
                     const KeyValues& extra_header = {});

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  KeyValues header;
};

/// Throws FormatError (bad magic or structure), TruncatedFileError,
/// VersionError, PrecisionError, or DimensionError (tensor shapes disagree
/// with the embedded configuration).
Checkpoint load_checkpoint(const std::string& path);

}  // namespace SURFREG_NAMESPACE
