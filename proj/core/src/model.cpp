#include "surfreg/model.hpp"

#include <charconv>
#include <optional>
#include <cmath>
#include <sstream>

#include "surfreg/error.hpp"
#include "surfreg/ops.hpp"
#include "text.hpp"

namespace SURFREG_NAMESPACE {

namespace {

std::string join_widths(const std::vector<std::size_t>& w) {
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(w[i]);
  }
  return s;
}

std::size_t parse_size(const std::string& key, const std::string& text) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + text + "'");
  }
  return v;
}

std::vector<std::size_t> parse_widths(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_size(key, item));
  if (out.empty()) throw ConfigError(key + ": empty width list");
  return out;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(key + ": expected true/false, got '" + text + "'");
}

double parse_double(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + text + "'");
  }
}

Tensor gaussian(std::size_t rows, std::size_t cols, double sigma, Rng& rng) {
  std::normal_distribution<double> dist(0.0, sigma);
  std::vector<Real> v(rows * cols);
  for (auto& x : v) x = static_cast<Real>(dist(rng));
  return Tensor::from_values({rows, cols}, std::move(v), true);
}

Tensor clone_tensor(const Tensor& t) {
  if (!t.defined()) return t;
  return Tensor::from_values(t.shape(), std::vector<Real>(t.values().begin(), t.values().end()),
                             t.requires_grad());
}

}  // namespace

void ModelConfig::validate() const {
  if (num_probes == 0 || latent_dim == 0 || encoder_layers == 0 || decoder_layers == 0 ||
      heads == 0 || ff_hidden == 0) {
    throw ConfigError("model: all sizes must be positive");
  }
  if (embedder_widths.empty() || embedder_widths.back() != latent_dim) {
    throw ConfigError("model: embedder must end at latent_dim " + std::to_string(latent_dim));
  }
  if (final_mlp_widths.empty() || final_mlp_widths.back() != 3) {
    throw ConfigError("model: final MLP must end with width 3");
  }
  for (auto w : embedder_widths) {
    if (w == 0) throw ConfigError("model: zero embedder width");
  }
  for (auto w : final_mlp_widths) {
    if (w == 0) throw ConfigError("model: zero final MLP width");
  }
  if (!(branch_init_gain >= 0) || !std::isfinite(branch_init_gain)) {
    throw ConfigError("model: branch_init_gain must be finite and non-negative");
  }
  if (!(area_radius > 0) || !std::isfinite(area_radius)) {
    throw ConfigError("model: area_radius must be positive");
  }
  attention().validate();
}

AttentionConfig ModelConfig::attention() const {
  return AttentionConfig{latent_dim, heads, ff_hidden, layer_norm, branch_init_gain};
}

KeyValues ModelConfig::to_key_values() const {
  return {
      {"model.num_probes", std::to_string(num_probes)},
      {"model.latent_dim", std::to_string(latent_dim)},
      {"model.encoder_layers", std::to_string(encoder_layers)},
      {"model.decoder_layers", std::to_string(decoder_layers)},
      {"model.heads", std::to_string(heads)},
      {"model.embedder_widths", join_widths(embedder_widths)},
      {"model.ff_hidden", std::to_string(ff_hidden)},
      {"model.final_mlp_widths", join_widths(final_mlp_widths)},
      {"model.area_radius", format_double(area_radius)},
      {"model.layer_norm", layer_norm ? "true" : "false"},
      {"model.variant", to_string(variant)},
      {"model.residual_output", residual_output ? "true" : "false"},
      {"model.init_seed", std::to_string(init_seed)},
      {"model.branch_init_gain", format_double(branch_init_gain)},
  };
}

void ModelConfig::apply(const KeyValues& kv) {
  for (const auto& [key, value] : kv) {
    if (key.rfind("model.", 0) != 0) continue;
    if (key == "model.num_probes") num_probes = parse_size(key, value);
    else if (key == "model.latent_dim") latent_dim = parse_size(key, value);
    else if (key == "model.encoder_layers") encoder_layers = parse_size(key, value);
    else if (key == "model.decoder_layers") decoder_layers = parse_size(key, value);
    else if (key == "model.heads") heads = parse_size(key, value);
    else if (key == "model.embedder_widths") embedder_widths = parse_widths(key, value);
    else if (key == "model.ff_hidden") ff_hidden = parse_size(key, value);
    else if (key == "model.final_mlp_widths") final_mlp_widths = parse_widths(key, value);
    else if (key == "model.area_radius") area_radius = parse_double(key, value);
    else if (key == "model.layer_norm") layer_norm = parse_bool(key, value);
    else if (key == "model.variant") variant = parse_attention_variant(value);
    else if (key == "model.residual_output") residual_output = parse_bool(key, value);
    else if (key == "model.init_seed") init_seed = parse_size(key, value);
    else if (key == "model.branch_init_gain") branch_init_gain = parse_double(key, value);
    else throw ConfigError("unknown configuration key '" + key + "'");
  }
}

ParamList ModelParams::named() const {
  ParamList out;
  out.push_back({"probes", probes});
  out.push_back({"probe_positions", probe_positions});
  out.push_back({"latent_positions", latent_positions});
  for (std::size_t l = 0; l < encoder.size(); ++l) {
    const std::string p = "encoder." + std::to_string(l);
    encoder[l].embedder.collect(p + ".embed", out);
    encoder[l].cross.collect(p + ".cross", out);
    encoder[l].self.collect(p + ".self", out);
  }
  decoder_embedder.collect("decoder.embed", out);
  for (std::size_t l = 0; l < decoder.size(); ++l) {
    const std::string p = "decoder." + std::to_string(l);
    decoder[l].cross.collect(p + ".cross", out);
    decoder[l].self.collect(p + ".self", out);
  }
  final_norm.collect("head.norm", out);
  final_mlp.collect("head.mlp", out);
  return out;
}

std::vector<Tensor> ModelParams::tensors() const {
  std::vector<Tensor> out;
  for (auto& nt : named()) out.push_back(nt.tensor);
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& nt : named()) n += nt.tensor.size();
  return n;
}

ModelParams ModelParams::init(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.init_seed);
  const auto att = cfg.attention();
  const std::size_t k = cfg.num_probes, d = cfg.latent_dim;

  ModelParams p;
  p.probes = gaussian(k, d, 0.02, rng);
  p.probe_positions = gaussian(k, d, 0.02, rng);
  p.latent_positions = gaussian(k, d, 0.02, rng);

  std::vector<std::size_t> embed{3};
  embed.insert(embed.end(), cfg.embedder_widths.begin(), cfg.embedder_widths.end());
  for (std::size_t l = 0; l < cfg.encoder_layers; ++l) {
    EncoderLayerParams layer;
    layer.embedder = Mlp::init(embed, rng);
    layer.cross = AttentionBlockParams::init(att, rng, true);
    layer.self = AttentionBlockParams::init(att, rng, false);
    p.encoder.push_back(std::move(layer));
  }
  p.decoder_embedder = Mlp::init(embed, rng);
  for (std::size_t l = 0; l < cfg.decoder_layers; ++l) {
    DecoderLayerParams layer;
    layer.cross = AttentionBlockParams::init(att, rng, true);
    layer.self = AttentionBlockParams::init(att, rng, false);
    p.decoder.push_back(std::move(layer));
  }
  if (cfg.layer_norm) p.final_norm = LayerNormParams::init(d);
  std::vector<std::size_t> head{d};
  head.insert(head.end(), cfg.final_mlp_widths.begin(), cfg.final_mlp_widths.end());
  p.final_mlp = Mlp::init(head, rng);
  return p;
}

ModelParams ModelParams::clone() const {
  ModelParams p = *this;
  // Rebind every tensor handle of the copy to fresh storage, in the same
  // order named() enumerates them.
  auto rebind_linear = [](Linear& l) {
    l.weight = clone_tensor(l.weight);
    if (l.bias.defined()) l.bias = clone_tensor(l.bias);
  };
  auto rebind_mlp = [&](Mlp& m) {
    for (auto& l : m.layers) rebind_linear(l);
  };
  auto rebind_ln = [](LayerNormParams& ln) {
    ln.gamma = clone_tensor(ln.gamma);
    ln.beta = clone_tensor(ln.beta);
  };
  auto rebind_block = [&](AttentionBlockParams& b) {
    rebind_linear(b.attention.query);
    rebind_linear(b.attention.key);
    rebind_linear(b.attention.value);
    rebind_linear(b.attention.output);
    rebind_mlp(b.feed_forward);
    rebind_ln(b.norm_query);
    rebind_ln(b.norm_context);
    rebind_ln(b.norm_ff);
  };
  p.probes = clone_tensor(probes);
  p.probe_positions = clone_tensor(probe_positions);
  p.latent_positions = clone_tensor(latent_positions);
  for (auto& l : p.encoder) {
    rebind_mlp(l.embedder);
    rebind_block(l.cross);
    rebind_block(l.self);
  }
  rebind_mlp(p.decoder_embedder);
  for (auto& l : p.decoder) {
    rebind_block(l.cross);
    rebind_block(l.self);
  }
  rebind_ln(p.final_norm);
  rebind_mlp(p.final_mlp);
  return p;
}

Model::Model(ModelConfig config, ModelParams params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
}

Model::Model(const ModelConfig& config) : Model(config, ModelParams::init(config)) {}

std::vector<Real> Model::areas(std::span<const Point3> points) const {
  const auto a = estimate_areas(points, config_.area_radius);
  return std::vector<Real>(a.values.begin(), a.values.end());
}

void Model::check_latents(const Tensor& latents) const {
  if (latents.rank() != 2 || latents.rows() != config_.num_probes ||
      latents.cols() != config_.latent_dim) {
    throw ConfigError("latents of shape " + shape_string(latents.shape()) +
                      " do not match the model (" + std::to_string(config_.num_probes) + "x" +
                      std::to_string(config_.latent_dim) + ")");
  }
}

Tensor Model::encode(const Tensor& points, std::span<const Real> areas, AttentionTrace* trace,
                     const InferenceOptions& options) const {
  if (points.rank() != 2 || points.cols() != 3 || points.rows() < 2) {
    throw GeometryError("encode: expected an n x 3 cloud with n >= 2, got " + shape_string(points.shape()));
  }
  if (trace && options.chunk > 0) throw ConfigError("attention traces need the unchunked path");
  const auto att = config_.attention();
  std::optional<NoGradGuard> no_grad;
  if (options.chunk > 0) no_grad.emplace();

  Tensor latents = ops::add(params_.probes, params_.probe_positions);
  for (const auto& enc : params_.encoder) {
    const Tensor embedded = enc.embedder.forward(points);
    if (options.chunk > 0) {
      latents = layer_chunked(latents, embedded, areas, config_.variant, enc.cross, att, options.chunk);
      latents = layer_chunked(latents, latents, {}, AttentionVariant::kClassic, enc.self, att, options.chunk);
      continue;
    }
    std::vector<Tensor> maps;
    latents = layer(latents, embedded, areas, config_.variant, enc.cross, att, trace ? &maps : nullptr);
    if (trace) trace->encoder_cross.push_back(std::move(maps));
    latents = layer(latents, latents, {}, AttentionVariant::kClassic, enc.self, att);
  }
  return latents;
}

Tensor Model::decode(const Tensor& points, std::span<const Real> areas, const Tensor& latents,
                     AttentionTrace* trace, const InferenceOptions& options) const {
  if (points.rank() != 2 || points.cols() != 3 || points.rows() == 0) {
    throw GeometryError("decode: expected an n x 3 cloud, got " + shape_string(points.shape()));
  }
  check_latents(latents);
  if (trace && options.chunk > 0) throw ConfigError("attention traces need the unchunked path");
  const auto att = config_.attention();
  std::optional<NoGradGuard> no_grad;
  if (options.chunk > 0) no_grad.emplace();

  const Tensor context = ops::add(latents, params_.latent_positions);
  Tensor h = params_.decoder_embedder.forward(points);
  for (const auto& dec : params_.decoder) {
    if (options.chunk > 0) {
      h = layer_chunked(h, context, {}, AttentionVariant::kClassic, dec.cross, att, options.chunk);
      h = layer_chunked(h, h, areas, config_.variant, dec.self, att, options.chunk);
      continue;
    }
    std::vector<Tensor> maps;
    h = layer(h, context, {}, AttentionVariant::kClassic, dec.cross, att, trace ? &maps : nullptr);
    if (trace) trace->decoder_cross.push_back(std::move(maps));
    h = layer(h, h, areas, config_.variant, dec.self, att);
  }
  if (config_.layer_norm) h = params_.final_norm.forward(h);
  Tensor out = params_.final_mlp.forward(h);
  if (config_.residual_output) out = ops::add(out, points);
  return out;
}

LatentState Model::encode(const PointCloud& target, const InferenceOptions& options) const {
  validate(target);
  const auto a = areas(target.points);
  NoGradGuard no_grad;
  return {encode(to_tensor(target), a, nullptr, options), "cloud:" + std::to_string(target.size())};
}

std::vector<Point3> Model::decode(const PointCloud& source, const LatentState& latents,
                                  const InferenceOptions& options) const {
  validate(source);
  const auto a = areas(source.points);
  NoGradGuard no_grad;
  return to_points(decode(to_tensor(source), a, latents.vectors, nullptr, options));
}

std::vector<Point3> Model::register_cloud(const PointCloud& source, const PointCloud& target,
                                          const InferenceOptions& options) const {
  return decode(source, encode(target, options), options);
}

}  // namespace SURFREG_NAMESPACE
