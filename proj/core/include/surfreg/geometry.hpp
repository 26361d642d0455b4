#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "surfreg/tensor.hpp"

namespace SURFREG_NAMESPACE {

using Point3 = std::array<double, 3>;

/// Inverse of normalize(): original = normalized * scale + centroid.
struct NormMeta {
  Point3 centroid{0.0, 0.0, 0.0};
  double scale = 1.0;
};

struct PointCloud {
  std::vector<Point3> points;
  /// Per-point index into a canonical template ordering; empty when absent.
  std::vector<std::size_t> labels;
  NormMeta norm;

  std::size_t size() const { return points.size(); }
  bool has_labels() const { return !labels.empty(); }
};

/// Throws GeometryError unless the cloud has at least two points, finite
/// coordinates and, when present, one label per point.
void validate(const PointCloud& pc);

/// Centers the cloud on its centroid and scales it so the farthest point has
/// norm 1. The stored NormMeta composes with any previous normalization.
PointCloud normalize(const PointCloud& pc);
PointCloud denormalize(const PointCloud& pc);

struct AreaWeights {
  std::vector<double> values;
  double radius = 0.05;
};

inline constexpr double kDefaultAreaRadius = 0.05;

/// A_i = 1 / |{j : |x_j - x_i| < r}|, the count including i itself.
AreaWeights estimate_areas(std::span<const Point3> points, double radius = kDefaultAreaRadius);
inline AreaWeights estimate_areas(const PointCloud& pc, double radius = kDefaultAreaRadius) {
  return estimate_areas(std::span<const Point3>(pc.points), radius);
}

/// Differentiable symmetric Chamfer distance between row sets a (n x 3) and
/// b (m x 3): mean squared nearest-neighbor distance in each direction, summed.
Tensor chamfer(const Tensor& a, const Tensor& b);
double chamfer_distance(std::span<const Point3> a, std::span<const Point3> b);

struct CorrespondenceMap {
  /// target[i] is the reference index matched to query point i.
  std::vector<std::size_t> target;
  /// Euclidean distance of each pair; may be empty.
  std::vector<double> residual;

  std::size_t size() const { return target.size(); }
};

/// Euclidean nearest neighbor of every query point; ties go to the lowest
/// reference index.
CorrespondenceMap nearest_neighbor_match(std::span<const Point3> query,
                                         std::span<const Point3> reference);

/// Shortest paths on the symmetrized k-nearest-neighbor graph of a cloud,
/// weighted by Euclidean edge length.
class GeodesicGraph {
 public:
  /// Throws GeometryError if k is zero or the graph is disconnected.
  GeodesicGraph(std::span<const Point3> points, std::size_t k = 8);

  std::size_t size() const { return adjacency_.size(); }
  std::vector<double> distances_from(std::size_t source) const;
  double distance(std::size_t from, std::size_t to) const;
  /// Largest finite shortest-path distance over all pairs.
  double diameter() const;

  struct Edge {
    std::size_t to;
    double length;
  };
  const std::vector<std::vector<Edge>>& adjacency() const { return adjacency_; }

 private:
  std::vector<std::vector<Edge>> adjacency_;
};

GeodesicGraph graph_geodesics(const PointCloud& pc, std::size_t k = 8);

enum class SamplingStrategy { kUniformRandom, kDensityBiased, kFarthestPoint };

struct ResampleOptions {
  /// Neighborhood radius of the density estimate used by kDensityBiased.
  double density_radius = 0.15;
  /// Strength of the seeded directional tilt used by kDensityBiased.
  double directional_bias = 2.0;
};

/// Indices (into pc) of m points chosen by the strategy. Deterministic given
/// the seed. Throws ContractError unless 1 <= m <= n.
std::vector<std::size_t> resample_indices(const PointCloud& pc, SamplingStrategy strategy,
                                          std::size_t m, std::uint64_t seed,
                                          const ResampleOptions& options = {});
PointCloud resample(const PointCloud& pc, SamplingStrategy strategy, std::size_t m,
                    std::uint64_t seed, const ResampleOptions& options = {});
PointCloud subset(const PointCloud& pc, std::span<const std::size_t> indices);

SamplingStrategy parse_sampling_strategy(const std::string& name);
const char* to_string(SamplingStrategy strategy);

/// n x 3 tensor of the cloud's coordinates.
Tensor to_tensor(std::span<const Point3> points, bool requires_grad = false);
inline Tensor to_tensor(const PointCloud& pc, bool requires_grad = false) {
  return to_tensor(std::span<const Point3>(pc.points), requires_grad);
}
std::vector<Point3> to_points(const Tensor& t);

double distance(const Point3& a, const Point3& b);
double squared_distance(const Point3& a, const Point3& b);

}  // namespace surfreg
