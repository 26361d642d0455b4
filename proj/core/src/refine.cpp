#include "surfreg/refine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "surfreg/adam.hpp"
#include "surfreg/error.hpp"
#include "surfreg/ops.hpp"
#include "text.hpp"

namespace SURFREG_NAMESPACE {

void RefineConfig::validate() const {
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) {
    throw ConfigError("refine.learning_rate must be positive and finite");
  }
}

KeyValues RefineConfig::to_key_values() const {
  return {{"refine.steps", std::to_string(steps)},
          {"refine.learning_rate", format_double(learning_rate)}};
}

void RefineConfig::apply(const KeyValues& kv) {
  for (const auto& [key, value] : kv) {
    if (key.rfind("refine.", 0) != 0) continue;
    try {
      if (key == "refine.steps") steps = std::stoull(value);
      else if (key == "refine.learning_rate") learning_rate = std::stod(value);
      else throw ConfigError("unknown key '" + key + "'");
    } catch (const std::logic_error&) {
      throw ConfigError("invalid value '" + value + "' for " + key);
    }
  }
  validate();
}

RefineResult refine(const Model& model, const PointCloud& source, const PointCloud& target,
                    const RefineConfig& config, const LatentState* initial) {
  config.validate();
  validate(source);
  validate(target);
  const LatentState start = initial ? *initial : model.encode(target);
  const Tensor src = to_tensor(source);
  const auto src_areas = model.areas(source.points);

  std::vector<Real> init(start.vectors.values().begin(), start.vectors.values().end());
  Tensor latents = Tensor::from_values(start.vectors.shape(), init, true);
  AdamOptions opts;
  opts.learning_rate = static_cast<Real>(config.learning_rate);
  Adam adam({latents}, opts);
  const Tensor tgt = to_tensor(target);

  RefineResult result;
  double best = 0;
  for (std::size_t step = 0;; ++step) {
    try {
      adam.zero_grad();
      Tensor out = model.decode(src, src_areas, latents);
      Tensor loss = chamfer(tgt, out);
      std::vector<Point3> points = to_points(out);
      const double value = chamfer_distance(target.points, points);
      result.trajectory.push_back(value);
      if (step == 0 || value < best) {
        best = value;
        result.best_step = step;
        result.latents = {latents.detach(), "refined:" + std::to_string(step)};
        result.points = points;
      }
      if (step == config.steps) {
        result.last_latents = {latents.detach(), "refined:" + std::to_string(step)};
        result.last_points = std::move(points);
        break;
      }
      loss.backward();
      adam.step();
    } catch (const NumericError& e) {
      throw NumericError("refinement diverged at step " + std::to_string(step) + ": " + e.what());
    }
  }
  // detach() shares storage with the leaf that Adam keeps updating.
  auto snapshot = [](const Tensor& t) {
    return Tensor::from_values(t.shape(), std::vector<Real>(t.values().begin(), t.values().end()));
  };
  result.latents.vectors = snapshot(result.latents.vectors);
  result.last_latents.vectors = snapshot(result.last_latents.vectors);
  return result;
}

MatchResult match(const Model& model, const PointCloud& a, const PointCloud& b, bool refine_first,
                  const RefineConfig& config) {
  auto registered = [&](const PointCloud& src, const PointCloud& tgt) {
    if (refine_first) return refine(model, src, tgt, config).points;
    return model.register_cloud(src, tgt);
  };
  const std::vector<Point3> ab = registered(a, b);
  const std::vector<Point3> ba = registered(b, a);
  MatchResult result;
  result.chamfer_ab = chamfer_distance(b.points, ab);
  result.chamfer_ba = chamfer_distance(a.points, ba);
  result.reversed = result.chamfer_ba < result.chamfer_ab;
  result.map = result.reversed ? nearest_neighbor_match(a.points, ba)
                               : nearest_neighbor_match(ab, b.points);
  return result;
}

LatentState interpolate_latents(const LatentState& a, const LatentState& b, double t,
                                std::span<const std::size_t> frozen) {
  if (a.vectors.shape() != b.vectors.shape() || a.vectors.rank() != 2) {
    throw DimensionError("latent shapes differ: " + shape_string(a.vectors.shape()) + " vs " +
                         shape_string(b.vectors.shape()));
  }
  if (!(t >= 0 && t <= 1)) throw ContractError("interpolation parameter must lie in [0, 1]");
  const std::size_t rows = a.vectors.rows(), cols = a.vectors.cols();
  std::vector<bool> keep(rows, false);
  for (std::size_t r : frozen) {
    if (r >= rows) {
      throw ContractError("frozen probe index " + std::to_string(r) + " out of range (K = " +
                          std::to_string(rows) + ")");
    }
    keep[r] = true;
  }
  auto va = a.vectors.values(), vb = b.vectors.values();
  std::vector<Real> out(va.size());
  const Real s = static_cast<Real>(t);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      out[i] = keep[r] ? va[i] : (1 - s) * va[i] + s * vb[i];
    }
  }
  return {Tensor::from_values(a.vectors.shape(), std::move(out)), "interpolated"};
}

std::vector<double> probe_masses(const Model& model, const PointCloud& source,
                                 const LatentState& latents,
                                 std::span<const std::size_t> region) {
  if (region.empty()) throw ContractError("probe region is empty");
  validate(source);
  for (std::size_t i : region) {
    if (i >= source.size()) {
      throw ContractError("region index " + std::to_string(i) + " out of range");
    }
  }
  AttentionTrace trace;
  {
    NoGradGuard no_grad;
    model.decode(to_tensor(source), model.areas(source.points), latents.vectors, &trace);
  }
  const auto& heads = trace.decoder_cross.back();
  const std::size_t k = heads.front().cols();
  std::vector<double> mass(k, 0.0);
  for (const Tensor& h : heads) {
    for (std::size_t i : region) {
      for (std::size_t j = 0; j < k; ++j) mass[j] += h.at(i, j);
    }
  }
  for (double& m : mass) m /= static_cast<double>(heads.size());
  return mass;
}

std::vector<std::size_t> probes_by_region(const Model& model, const PointCloud& source,
                                          const LatentState& latents,
                                          std::span<const std::size_t> region) {
  const std::vector<double> mass = probe_masses(model, source, latents, region);
  std::vector<std::size_t> order(mass.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return mass[x] > mass[y]; });
  return order;
}

}  // namespace SURFREG_NAMESPACE
