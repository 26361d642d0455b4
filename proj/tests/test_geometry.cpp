#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <set>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "surfreg/error.hpp"
#include "surfreg/geometry.hpp"

namespace surfreg {
namespace {

PointCloud cloud(std::vector<Point3> pts) {
  PointCloud pc;
  pc.points = std::move(pts);
  return pc;
}

TEST(Normalize, TwoPoints) {
  auto n = normalize(cloud({{0, 0, 0}, {2, 0, 0}}));
  EXPECT_NEAR(n.points[0][0], -1, 1e-12);
  EXPECT_NEAR(n.points[1][0], 1, 1e-12);
  EXPECT_NEAR(n.norm.scale, 1, 1e-12);
  EXPECT_NEAR(n.norm.centroid[0], 1, 1e-12);
}

TEST(Normalize, CenteredUnitCloudUnchanged) {
  auto pc = cloud({{1, 0, 0}, {-1, 0, 0}, {0, 0.5, 0}, {0, -0.5, 0}});
  auto n = normalize(pc);
  for (std::size_t i = 0; i < pc.size(); ++i) {
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(n.points[i][k], pc.points[i][k], 1e-12);
  }
}

TEST(Normalize, CentroidMaxNormAndRoundTrip) {
  std::mt19937_64 rng(3);
  auto pts = oracle::random_ball(100, rng, 7.5);
  for (auto& p : pts) p[1] += 40;
  auto pc = cloud(pts);
  auto n = normalize(pc);
  Point3 c{0, 0, 0};
  double max_norm = 0;
  for (const auto& p : n.points) {
    for (int k = 0; k < 3; ++k) c[k] += p[k] / 100;
    max_norm = std::max(max_norm, std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]));
  }
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(c[k], 0, 1e-6);
  EXPECT_NEAR(max_norm, 1, 1e-6);
  auto back = denormalize(n);
  for (std::size_t i = 0; i < pc.size(); ++i) {
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(back.points[i][k], pc.points[i][k], 1e-6);
  }
}

TEST(Normalize, DegenerateCloudsThrow) {
  EXPECT_THROW(normalize(cloud({{1, 1, 1}, {1, 1, 1}})), GeometryError);
  EXPECT_THROW(normalize(cloud({{1, 1, 1}})), GeometryError);
  EXPECT_THROW(normalize(cloud({{0, 0, 0}, {NAN, 0, 0}})), GeometryError);
}

TEST(Areas, HandCases) {
  auto isolated = estimate_areas(std::vector<Point3>{{0, 0, 0}, {1, 0, 0}}, 0.05);
  EXPECT_EQ(isolated.values[0], 1);
  EXPECT_EQ(isolated.values[1], 1);
  auto pair = estimate_areas(std::vector<Point3>{{0, 0, 0}, {0.03, 0, 0}}, 0.05);
  EXPECT_EQ(pair.values[0], 0.5);
  EXPECT_EQ(pair.values[1], 0.5);
  // Strict inequality at exactly r.
  auto edge = estimate_areas(std::vector<Point3>{{0, 0, 0}, {0.5, 0, 0}}, 0.5);
  EXPECT_EQ(edge.values[0], 1);
}

TEST(Areas, MatchBruteForceCounts) {
  std::mt19937_64 rng(5);
  auto pts = oracle::random_ball(200, rng);
  for (double r : {0.05, 0.2, 0.5}) {
    auto a = estimate_areas(pts, r);
    auto expected = oracle::areas(pts, r);
    ASSERT_EQ(a.values.size(), pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
      EXPECT_EQ(a.values[i], expected[i]) << "r=" << r << " i=" << i;
      EXPECT_GT(a.values[i], 0);
      EXPECT_LE(a.values[i], 1);
    }
  }
}

TEST(Areas, PermutationEquivariant) {
  std::mt19937_64 rng(6);
  auto pts = oracle::random_ball(150, rng);
  std::vector<std::size_t> perm(pts.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<Point3> shuffled;
  for (auto i : perm) shuffled.push_back(pts[i]);
  auto a = estimate_areas(pts, 0.3);
  auto b = estimate_areas(shuffled, 0.3);
  for (std::size_t i = 0; i < perm.size(); ++i) EXPECT_EQ(b.values[i], a.values[perm[i]]);
}

TEST(Chamfer, HandCasesAndSymmetry) {
  std::vector<Point3> a{{0, 0, 0}}, b{{1, 0, 0}};
  EXPECT_DOUBLE_EQ(chamfer_distance(a, b), 2.0);
  EXPECT_DOUBLE_EQ(chamfer(to_tensor(a), to_tensor(b)).item(), 2.0);
  std::mt19937_64 rng(7);
  auto x = oracle::random_ball(30, rng), y = oracle::random_ball(40, rng);
  EXPECT_EQ(chamfer_distance(x, x), 0);
  EXPECT_EQ(chamfer_distance(x, y), chamfer_distance(y, x));
  EXPECT_EQ(chamfer(to_tensor(x), to_tensor(y)).item(), chamfer(to_tensor(y), to_tensor(x)).item());
  EXPECT_GT(chamfer_distance(x, y), 0);
  EXPECT_THROW(chamfer_distance(x, std::vector<Point3>{}), GeometryError);
}

TEST(Chamfer, ZeroForEqualSetsInAnyOrder) {
  std::mt19937_64 rng(8);
  auto x = oracle::random_ball(25, rng);
  auto y = x;
  std::shuffle(y.begin(), y.end(), rng);
  y.push_back(x[3]);
  EXPECT_EQ(chamfer_distance(x, y), 0);
}

TEST(Chamfer, MatchesDoubleLoop) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    auto x = oracle::random_ball(30, rng), y = oracle::random_ball(30, rng);
    EXPECT_NEAR(chamfer_distance(x, y), oracle::chamfer(x, y), 1e-12);
    EXPECT_NEAR(chamfer(to_tensor(x), to_tensor(y)).item(), oracle::chamfer(x, y), 1e-12);
  }
}

TEST(Chamfer, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(10);
  auto r = testing::check_gradients(
      [](const auto& in) { return chamfer(in[0], in[1]); },
      {to_tensor(oracle::random_ball(12, rng), true), to_tensor(oracle::random_ball(9, rng), true)});
  EXPECT_LE(r.max_relative, 1e-5);
}

TEST(NearestNeighbor, IdentityAndPermutation) {
  std::mt19937_64 rng(11);
  auto x = oracle::random_ball(50, rng);
  auto self = nearest_neighbor_match(x, x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(self.target[i], i);
    EXPECT_EQ(self.residual[i], 0);
  }
  std::vector<std::size_t> perm(x.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<Point3> q;
  for (auto i : perm) q.push_back(x[i]);
  auto m = nearest_neighbor_match(q, x);
  EXPECT_EQ(m.target, perm);
}

TEST(NearestNeighbor, TiesGoToLowestIndex) {
  std::vector<Point3> ref{{1, 0, 0}, {-1, 0, 0}, {1, 0, 0}};
  auto m = nearest_neighbor_match(std::vector<Point3>{{0, 0, 0}, {1, 0, 0}}, ref);
  EXPECT_EQ(m.target[0], 0u);
  EXPECT_EQ(m.target[1], 0u);
}

TEST(NearestNeighbor, MatchesBruteForceAndRigidMotion) {
  std::mt19937_64 rng(12);
  auto q = oracle::random_ball(80, rng), r = oracle::random_ball(120, rng);
  auto m = nearest_neighbor_match(q, r);
  EXPECT_EQ(m.target, oracle::nearest(q, r));
  const double c = std::cos(0.7), s = std::sin(0.7);
  auto move = [&](std::vector<Point3> pts) {
    for (auto& p : pts) p = {c * p[0] + s * p[2] + 0.3, p[1] - 2, -s * p[0] + c * p[2] + 5};
    return pts;
  };
  EXPECT_EQ(nearest_neighbor_match(move(q), move(r)).target, m.target);
}

TEST(Geodesics, HandCases) {
  std::vector<Point3> line{{0, 0, 0}, {0.1, 0, 0}, {0.2, 0, 0}};
  GeodesicGraph g(line, 1);
  EXPECT_EQ(g.distance(1, 1), 0);
  EXPECT_NEAR(g.distance(0, 2), 0.2, 1e-12);
  EXPECT_THROW(GeodesicGraph(line, 0), GeometryError);
  std::vector<Point3> split{{0, 0, 0}, {0.1, 0, 0}, {5, 0, 0}, {5.1, 0, 0}, {5.2, 0, 0}};
  try {
    GeodesicGraph bad(split, 1);
    FAIL() << "expected a disconnected graph";
  } catch (const GeometryError& e) {
    EXPECT_NE(std::string(e.what()).find("2"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("3"), std::string::npos);
  }
}

TEST(Geodesics, CircleArcLength) {
  const std::size_t n = 256;
  std::vector<Point3> circle;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = 2 * std::numbers::pi * i / n;
    circle.push_back({std::cos(t), std::sin(t), 0});
  }
  GeodesicGraph g(circle, 2);
  for (std::size_t j : {1u, 17u, 64u, 100u, 128u, 200u}) {
    const std::size_t steps = std::min(j, n - j);
    const double arc = 2 * std::numbers::pi * steps / n;
    EXPECT_NEAR(g.distance(0, j), arc, 0.05 * arc);
  }
}

TEST(Geodesics, MatchFloydWarshall) {
  std::mt19937_64 rng(13);
  auto pts = oracle::random_ball(120, rng);
  auto expected = oracle::geodesics(pts, 8);
  GeodesicGraph g(pts, 8);
  for (std::size_t i = 0; i < pts.size(); i += 7) {
    auto d = g.distances_from(i);
    for (std::size_t j = 0; j < pts.size(); ++j) EXPECT_NEAR(d[j], expected[i][j], 1e-9);
  }
  double diameter = 0;
  for (const auto& row : expected) diameter = std::max(diameter, *std::max_element(row.begin(), row.end()));
  EXPECT_NEAR(g.diameter(), diameter, 1e-9);
}

TEST(Resample, FarthestPointFullIsPermutation) {
  std::mt19937_64 rng(14);
  auto pc = cloud(oracle::random_ball(60, rng));
  auto idx = resample_indices(pc, SamplingStrategy::kFarthestPoint, 60, 3);
  std::set<std::size_t> unique(idx.begin(), idx.end());
  EXPECT_EQ(unique.size(), 60u);
  EXPECT_EQ(resample_indices(pc, SamplingStrategy::kFarthestPoint, 20, 3),
            resample_indices(pc, SamplingStrategy::kFarthestPoint, 20, 3));
}

TEST(Resample, DeterministicAndCarriesLabels) {
  std::mt19937_64 rng(15);
  auto pc = cloud(oracle::random_ball(100, rng));
  for (std::size_t i = 0; i < pc.size(); ++i) pc.labels.push_back(1000 + i);
  for (auto s : {SamplingStrategy::kUniformRandom, SamplingStrategy::kDensityBiased,
                 SamplingStrategy::kFarthestPoint}) {
    auto a = resample(pc, s, 40, 99);
    auto b = resample(pc, s, 40, 99);
    ASSERT_EQ(a.size(), 40u);
    EXPECT_EQ(a.labels, b.labels);
    auto idx = resample_indices(pc, s, 40, 99);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      EXPECT_EQ(a.labels[i], 1000 + idx[i]);
      EXPECT_EQ(a.points[i], pc.points[idx[i]]);
    }
    std::set<std::size_t> unique(idx.begin(), idx.end());
    EXPECT_EQ(unique.size(), idx.size()) << to_string(s);
  }
  EXPECT_THROW(resample(pc, SamplingStrategy::kUniformRandom, 0, 1), ContractError);
  EXPECT_THROW(resample(pc, SamplingStrategy::kUniformRandom, 101, 1), ContractError);
}

TEST(Resample, DensityBiasedFavoursDenseHalf) {
  // Two halves with 500 points each; the left half is a third as wide.
  std::mt19937_64 rng(16);
  std::uniform_real_distribution<double> u(0, 1);
  PointCloud pc;
  for (int i = 0; i < 500; ++i) pc.points.push_back({-u(rng) / 3, 2 * u(rng) - 1, 0});
  for (int i = 0; i < 500; ++i) pc.points.push_back({u(rng), 2 * u(rng) - 1, 0});
  double dense_share = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto idx = resample_indices(pc, SamplingStrategy::kDensityBiased, 500, seed);
    dense_share += std::count_if(idx.begin(), idx.end(), [](auto i) { return i < 500; }) / 500.0;
  }
  EXPECT_GE(dense_share / 20, 0.6);
}

}  // namespace
}  // namespace surfreg
