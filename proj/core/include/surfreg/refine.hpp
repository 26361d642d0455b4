#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "surfreg/geometry.hpp"
#include "surfreg/model.hpp"

namespace SURFREG_NAMESPACE {

struct RefineConfig {
  std::size_t steps = 100;
  double learning_rate = 5e-3;

  void validate() const;
  /// Keys are prefixed with "refine.".
  KeyValues to_key_values() const;
  void apply(const KeyValues& kv);
};

struct RefineResult {
  /// Lowest-Chamfer iterate (step 0 is the starting latents).
  LatentState latents;
  std::vector<Point3> points;
  std::size_t best_step = 0;
  /// Iterate after the final update.
  LatentState last_latents;
  std::vector<Point3> last_points;
  /// Chamfer(target, decode(source, latents_t)) for t = 0..steps.
  std::vector<double> trajectory;
};

/// Adam on the latents alone, minimizing Chamfer(target, decode(source, .)).
/// Starts from encode(target) unless initial latents are given. Throws
/// NumericError naming the step if the loss or gradient is not finite.
RefineResult refine(const Model& model, const PointCloud& source, const PointCloud& target,
                    const RefineConfig& config, const LatentState* initial = nullptr);

struct MatchResult {
  /// target[i] is the index in b matched to point i of a.
  CorrespondenceMap map;
  /// True when the b -> a registration was chosen and inverted.
  bool reversed = false;
  double chamfer_ab = 0;  // Chamfer(b, a registered onto b)
  double chamfer_ba = 0;  // Chamfer(a, b registered onto a)
};

/// Registers in both directions and keeps the one with lower Chamfer.
MatchResult match(const Model& model, const PointCloud& a, const PointCloud& b,
                  bool refine_first = false, const RefineConfig& config = {});

/// (1 - t) a + t b, except rows listed in `frozen`, which are copied from a.
LatentState interpolate_latents(const LatentState& a, const LatentState& b, double t,
                                std::span<const std::size_t> frozen = {});

/// Attention mass each probe receives from the region's source points in the
/// last decoder cross-attention layer, averaged over heads.
std::vector<double> probe_masses(const Model& model, const PointCloud& source,
                                 const LatentState& latents,
                                 std::span<const std::size_t> region);
/// Probe indices by descending mass; ties keep the lower index first.
std::vector<std::size_t> probes_by_region(const Model& model, const PointCloud& source,
                                          const LatentState& latents,
                                          std::span<const std::size_t> region);

}  // namespace SURFREG_NAMESPACE
