#include "surfreg/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <random>
#include <string>
#include <unordered_map>

#include "surfreg/error.hpp"
#include "surfreg/ops.hpp"

namespace SURFREG_NAMESPACE {

double squared_distance(const Point3& a, const Point3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

double distance(const Point3& a, const Point3& b) { return std::sqrt(squared_distance(a, b)); }

void validate(const PointCloud& pc) {
  if (pc.size() < 2) {
    throw GeometryError("point cloud needs at least 2 points, got " + std::to_string(pc.size()));
  }
  for (std::size_t i = 0; i < pc.size(); ++i) {
    for (double c : pc.points[i]) {
      if (!std::isfinite(c)) throw GeometryError("non-finite coordinate at point " + std::to_string(i));
    }
  }
  if (pc.has_labels() && pc.labels.size() != pc.size()) {
    throw GeometryError("label count " + std::to_string(pc.labels.size()) +
                        " differs from point count " + std::to_string(pc.size()));
  }
}

PointCloud normalize(const PointCloud& pc) {
  validate(pc);
  Point3 c{0, 0, 0};
  for (const auto& p : pc.points) {
    for (int k = 0; k < 3; ++k) c[k] += p[k];
  }
  for (int k = 0; k < 3; ++k) c[k] /= static_cast<double>(pc.size());
  double radius = 0;
  for (const auto& p : pc.points) radius = std::max(radius, distance(p, c));
  if (!(radius > 0)) throw GeometryError("degenerate point cloud: all points coincide");

  PointCloud out;
  out.labels = pc.labels;
  out.points.reserve(pc.size());
  for (const auto& p : pc.points) {
    out.points.push_back({(p[0] - c[0]) / radius, (p[1] - c[1]) / radius, (p[2] - c[2]) / radius});
  }
  // original = (normalized * radius + c) * prev.scale + prev.centroid
  out.norm.scale = radius * pc.norm.scale;
  for (int k = 0; k < 3; ++k) out.norm.centroid[k] = c[k] * pc.norm.scale + pc.norm.centroid[k];
  return out;
}

PointCloud denormalize(const PointCloud& pc) {
  PointCloud out;
  out.labels = pc.labels;
  out.points.reserve(pc.size());
  for (const auto& p : pc.points) {
    Point3 q;
    for (int k = 0; k < 3; ++k) q[k] = p[k] * pc.norm.scale + pc.norm.centroid[k];
    out.points.push_back(q);
  }
  return out;
}

namespace {

// Bucket grid with cell edge equal to the query radius; a ball query only
// visits the 27 cells around the query point.
class UniformGrid {
 public:
  UniformGrid(std::span<const Point3> points, double cell) : points_(points), cell_(cell) {
    for (std::size_t i = 0; i < points.size(); ++i) cells_[key(cell_of(points[i]))].push_back(i);
  }

  template <typename Fn>
  void for_each_candidate(const Point3& q, Fn&& fn) const {
    const auto c = cell_of(q);
    for (std::int64_t dx = -1; dx <= 1; ++dx) {
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        for (std::int64_t dz = -1; dz <= 1; ++dz) {
          auto it = cells_.find(key({c[0] + dx, c[1] + dy, c[2] + dz}));
          if (it == cells_.end()) continue;
          for (std::size_t j : it->second) fn(j);
        }
      }
    }
  }

 private:
  using Cell = std::array<std::int64_t, 3>;

  Cell cell_of(const Point3& p) const {
    return {static_cast<std::int64_t>(std::floor(p[0] / cell_)),
            static_cast<std::int64_t>(std::floor(p[1] / cell_)),
            static_cast<std::int64_t>(std::floor(p[2] / cell_))};
  }

  static std::uint64_t key(const Cell& c) {
    // 21 bits per axis is ample for normalized clouds at any sane radius.
    auto part = [](std::int64_t v) { return static_cast<std::uint64_t>(v + (1 << 20)) & 0x1FFFFF; };
    return (part(c[0]) << 42) | (part(c[1]) << 21) | part(c[2]);
  }

  std::span<const Point3> points_;
  double cell_;
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> cells_;
};

std::vector<std::size_t> neighbor_counts(std::span<const Point3> points, double radius) {
  UniformGrid grid(points, radius);
  const double r2 = radius * radius;
  std::vector<std::size_t> counts(points.size(), 0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    grid.for_each_candidate(points[i], [&](std::size_t j) {
      if (squared_distance(points[i], points[j]) < r2) ++counts[i];
    });
  }
  return counts;
}

}  // namespace

AreaWeights estimate_areas(std::span<const Point3> points, double radius) {
  if (!(radius > 0) || !std::isfinite(radius)) {
    throw DomainError("area radius must be positive, got " + std::to_string(radius));
  }
  AreaWeights out;
  out.radius = radius;
  const auto counts = neighbor_counts(points, radius);
  out.values.reserve(counts.size());
  for (std::size_t c : counts) out.values.push_back(1.0 / static_cast<double>(c));
  return out;
}

Tensor chamfer(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.rows() == 0 || b.rows() == 0) {
    throw GeometryError("chamfer: both point sets must be non-empty n x 3 matrices");
  }
  const Tensor d = ops::sqdist_matrix(a, b);
  return ops::add(ops::reduce_mean(ops::min_rows(d)), ops::reduce_mean(ops::min_cols(d)));
}

double chamfer_distance(std::span<const Point3> a, std::span<const Point3> b) {
  if (a.empty() || b.empty()) throw GeometryError("chamfer: empty point set");
  std::vector<double> best_b(b.size(), std::numeric_limits<double>::infinity());
  double sum_a = 0;
  for (const auto& p : a) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < b.size(); ++j) {
      const double d = squared_distance(p, b[j]);
      best = std::min(best, d);
      best_b[j] = std::min(best_b[j], d);
    }
    sum_a += best;
  }
  const double sum_b = std::accumulate(best_b.begin(), best_b.end(), 0.0);
  return sum_a / static_cast<double>(a.size()) + sum_b / static_cast<double>(b.size());
}

CorrespondenceMap nearest_neighbor_match(std::span<const Point3> query,
                                         std::span<const Point3> reference) {
  if (query.empty() || reference.empty()) throw GeometryError("nearest_neighbor_match: empty point set");
  CorrespondenceMap out;
  out.target.resize(query.size());
  out.residual.resize(query.size());
  for (std::size_t i = 0; i < query.size(); ++i) {
    std::size_t best = 0;
    double best_d = squared_distance(query[i], reference[0]);
    for (std::size_t j = 1; j < reference.size(); ++j) {
      const double d = squared_distance(query[i], reference[j]);
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    out.target[i] = best;
    out.residual[i] = std::sqrt(best_d);
  }
  return out;
}

GeodesicGraph::GeodesicGraph(std::span<const Point3> points, std::size_t k) {
  const std::size_t n = points.size();
  if (k == 0) throw GeometryError("geodesic graph needs k >= 1");
  if (n < 2) throw GeometryError("geodesic graph needs at least 2 points");
  const std::size_t kk = std::min(k, n - 1);

  // Directed k-NN lists, then symmetrize.
  std::vector<std::vector<std::size_t>> nbrs(n);
  std::vector<std::pair<double, std::size_t>> cand;
  cand.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    cand.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) cand.emplace_back(squared_distance(points[i], points[j]), j);
    }
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(kk), cand.end());
    for (std::size_t t = 0; t < kk; ++t) nbrs[i].push_back(cand[t].second);
  }
  std::vector<std::vector<std::size_t>> sym(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j : nbrs[i]) {
      sym[i].push_back(j);
      sym[j].push_back(i);
    }
  }
  adjacency_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::sort(sym[i].begin(), sym[i].end());
    sym[i].erase(std::unique(sym[i].begin(), sym[i].end()), sym[i].end());
    for (std::size_t j : sym[i]) {
      adjacency_[i].push_back({j, std::sqrt(squared_distance(points[i], points[j]))});
    }
  }

  // Connected components by BFS.
  std::vector<int> comp(n, -1);
  std::vector<std::size_t> sizes;
  for (std::size_t s = 0; s < n; ++s) {
    if (comp[s] >= 0) continue;
    const int id = static_cast<int>(sizes.size());
    std::size_t count = 0;
    std::vector<std::size_t> queue{s};
    comp[s] = id;
    while (!queue.empty()) {
      const std::size_t u = queue.back();
      queue.pop_back();
      ++count;
      for (const auto& e : adjacency_[u]) {
        if (comp[e.to] < 0) {
          comp[e.to] = id;
          queue.push_back(e.to);
        }
      }
    }
    sizes.push_back(count);
  }
  if (sizes.size() > 1) {
    std::string msg = "geodesic graph is disconnected (k=" + std::to_string(k) + "), component sizes:";
    for (std::size_t s : sizes) msg += " " + std::to_string(s);
    throw GeometryError(msg);
  }
}

std::vector<double> GeodesicGraph::distances_from(std::size_t source) const {
  const std::size_t n = size();
  if (source >= n) throw ContractError("geodesic source index out of range");
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  dist[source] = 0;
  heap.emplace(0.0, source);
  while (!heap.empty()) {
    auto [d, u] = heap.top();
    heap.pop();
    if (d > dist[u]) continue;
    for (const auto& e : adjacency_[u]) {
      const double nd = d + e.length;
      if (nd < dist[e.to]) {
        dist[e.to] = nd;
        heap.emplace(nd, e.to);
      }
    }
  }
  return dist;
}

double GeodesicGraph::distance(std::size_t from, std::size_t to) const {
  if (to >= size()) throw ContractError("geodesic target index out of range");
  return distances_from(from)[to];
}

double GeodesicGraph::diameter() const {
  double best = 0;
  for (std::size_t s = 0; s < size(); ++s) {
    for (double d : distances_from(s)) best = std::max(best, d);
  }
  return best;
}

GeodesicGraph graph_geodesics(const PointCloud& pc, std::size_t k) {
  validate(pc);
  return GeodesicGraph(pc.points, k);
}

std::vector<std::size_t> resample_indices(const PointCloud& pc, SamplingStrategy strategy,
                                          std::size_t m, std::uint64_t seed,
                                          const ResampleOptions& options) {
  const std::size_t n = pc.size();
  if (m < 1 || m > n) {
    throw ContractError("resample: requested " + std::to_string(m) + " of " + std::to_string(n) +
                        " points");
  }
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> chosen;
  chosen.reserve(m);

  switch (strategy) {
    case SamplingStrategy::kUniformRandom: {
      std::vector<std::size_t> idx(n);
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      // Partial Fisher-Yates.
      for (std::size_t i = 0; i < m; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(idx[i], idx[pick(rng)]);
      }
      chosen.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(m));
      break;
    }
    case SamplingStrategy::kDensityBiased: {
      // Weighted sampling without replacement (exponential keys). Weight is
      // the local neighbor count times a tilt along a seeded direction, so
      // dense regions get denser and the result has a density gradient.
      const auto counts = neighbor_counts(pc.points, options.density_radius);
      std::normal_distribution<double> gauss(0.0, 1.0);
      Point3 dir{gauss(rng), gauss(rng), gauss(rng)};
      const double len = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
      for (double& c : dir) c /= (len > 0 ? len : 1.0);
      Point3 center{0, 0, 0};
      double radius = 0;
      for (const auto& p : pc.points) {
        for (int k = 0; k < 3; ++k) center[k] += p[k] / static_cast<double>(n);
      }
      for (const auto& p : pc.points) radius = std::max(radius, distance(p, center));
      if (!(radius > 0)) radius = 1;
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      std::vector<std::pair<double, std::size_t>> keys(n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto& p = pc.points[i];
        const double proj = ((p[0] - center[0]) * dir[0] + (p[1] - center[1]) * dir[1] +
                             (p[2] - center[2]) * dir[2]) / radius;
        const double w = static_cast<double>(counts[i]) * std::exp(options.directional_bias * proj);
        double u = unit(rng);
        if (u <= 0) u = std::numeric_limits<double>::min();
        keys[i] = {std::log(u) / w, i};
      }
      std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(m), keys.end(),
                        [](const auto& a, const auto& b) {
                          return a.first > b.first || (a.first == b.first && a.second < b.second);
                        });
      for (std::size_t i = 0; i < m; ++i) chosen.push_back(keys[i].second);
      break;
    }
    case SamplingStrategy::kFarthestPoint: {
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      std::size_t current = pick(rng);
      std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
      for (std::size_t s = 0; s < m; ++s) {
        chosen.push_back(current);
        nearest[current] = -1.0;
        std::size_t next = current;
        double best = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          if (nearest[i] < 0) continue;
          nearest[i] = std::min(nearest[i], squared_distance(pc.points[i], pc.points[current]));
          if (nearest[i] > best) {
            best = nearest[i];
            next = i;
          }
        }
        current = next;
      }
      break;
    }
  }
  return chosen;
}

PointCloud subset(const PointCloud& pc, std::span<const std::size_t> indices) {
  PointCloud out;
  out.norm = pc.norm;
  out.points.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= pc.size()) throw ContractError("subset index out of range");
    out.points.push_back(pc.points[i]);
    if (pc.has_labels()) out.labels.push_back(pc.labels[i]);
  }
  return out;
}

PointCloud resample(const PointCloud& pc, SamplingStrategy strategy, std::size_t m,
                    std::uint64_t seed, const ResampleOptions& options) {
  const auto idx = resample_indices(pc, strategy, m, seed, options);
  return subset(pc, idx);
}

SamplingStrategy parse_sampling_strategy(const std::string& name) {
  if (name == "uniform-random") return SamplingStrategy::kUniformRandom;
  if (name == "density-biased") return SamplingStrategy::kDensityBiased;
  if (name == "farthest-point") return SamplingStrategy::kFarthestPoint;
  throw ConfigError("unknown sampling strategy '" + name + "'");
}

const char* to_string(SamplingStrategy strategy) {
  switch (strategy) {
    case SamplingStrategy::kUniformRandom: return "uniform-random";
    case SamplingStrategy::kDensityBiased: return "density-biased";
    case SamplingStrategy::kFarthestPoint: return "farthest-point";
  }
  return "?";
}

Tensor to_tensor(std::span<const Point3> points, bool requires_grad) {
  std::vector<Real> v;
  v.reserve(points.size() * 3);
  for (const auto& p : points) {
    for (double c : p) v.push_back(static_cast<Real>(c));
  }
  return Tensor::from_values({points.size(), 3}, std::move(v), requires_grad);
}

std::vector<Point3> to_points(const Tensor& t) {
  if (t.rank() != 2 || t.cols() != 3) throw DimensionError("to_points: expected n x 3, got " + shape_string(t.shape()));
  std::vector<Point3> out(t.rows());
  auto v = t.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = {static_cast<double>(v[3 * i]), static_cast<double>(v[3 * i + 1]),
              static_cast<double>(v[3 * i + 2])};
  }
  return out;
}

}  // namespace surfreg
