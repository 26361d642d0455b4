#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "surfreg/geometry.hpp"
#include "surfreg/model.hpp"

namespace SURFREG_NAMESPACE {

struct EvalReport {
  std::size_t points = 0;
  /// Mean graph geodesic distance between predicted and true target points.
  double mean_geodesic = 0;
  /// mean_geodesic divided by the graph diameter of the target.
  double mean_geodesic_relative = 0;
  double diameter = 0;
  double chamfer = 0;
  double max_euclidean = 0;
  double mean_euclidean = 0;
  /// Geodesic error of every point (Euclidean when falling back).
  std::vector<double> per_point;
  /// The target's kNN graph is disconnected; geodesics are Euclidean.
  bool euclidean_fallback = false;
};

/// Correspondence prediction: pred.target[i] and gt.target[i] index the
/// target cloud. Chamfer compares the predicted points with the target.
EvalReport evaluate(const CorrespondenceMap& pred, const CorrespondenceMap& gt,
                    const PointCloud& target, std::size_t graph_k = 8);

/// Registration prediction: registered[i] should land on target[gt.target[i]].
/// Euclidean errors are index-wise; geodesic errors use each registered
/// point's nearest target point.
EvalReport evaluate(std::span<const Point3> registered, const CorrespondenceMap& gt,
                    const PointCloud& target, std::size_t graph_k = 8);

/// "key<TAB>value" summary lines, then one "point<TAB>index<TAB>error" line per point.
void write_report(std::ostream& out, const EvalReport& report);
EvalReport read_report(std::istream& in);

/// Ground truth between two clouds carrying canonical labels: point i of
/// `source` maps to the point of `target` with the same label.
CorrespondenceMap correspondence_from_labels(const PointCloud& source, const PointCloud& target);

struct DriftOptions {
  SamplingStrategy strategy = SamplingStrategy::kDensityBiased;
  std::size_t trials = 20;
  /// Share of the cloud kept by every resampling.
  double fraction = 0.5;
  std::uint64_t seed = 0;
  ResampleOptions resample;
};

/// Per trial, the mean over probes of the L1 distance between the first
/// encoder layer's cross-attention (averaged over heads) on the resampled
/// cloud and on the full cloud, with the full-cloud mass moved to the
/// nearest resampled point. Values lie in [0, 2].
std::vector<double> attention_drift(const Model& model, const PointCloud& cloud,
                                    const DriftOptions& options);

/// L1 drift of one probe distribution; `nearest[j]` is the resampled point
/// closest to full-cloud point j.
double transported_l1(std::span<const double> full, std::span<const double> resampled,
                      std::span<const std::size_t> nearest);

struct StabilityReport {
  std::vector<double> surface;  // per-trial drift
  std::vector<double> classic;
  double surface_mean = 0;
  double classic_mean = 0;
  /// Mean of classic - surface over trials.
  double mean_difference = 0;
  /// One-sided paired sign-flip test of classic > surface.
  double p_value = 1;
};

StabilityReport attention_stability(const Model& surface, const Model& classic,
                                    const PointCloud& cloud, const DriftOptions& options);

/// One-sided p-value of mean(d) > 0 under random sign flips of d; exact up
/// to 20 pairs, otherwise estimated from `samples` seeded draws.
double paired_sign_flip_p(std::span<const double> d, std::uint64_t seed = 0,
                          std::size_t samples = 1 << 20);

void write_stability(std::ostream& out, const StabilityReport& report);

}  // namespace SURFREG_NAMESPACE
