#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "gradcheck.hpp"
#include "surfreg/attention.hpp"
#include "surfreg/error.hpp"
#include "surfreg/ops.hpp"

namespace surfreg {
namespace {

using testing::random_tensor;

AttentionConfig small_config() {
  AttentionConfig cfg;
  cfg.embed_dim = 8;
  cfg.heads = 2;
  cfg.ff_hidden = 16;
  return cfg;
}

std::vector<Real> random_areas(std::size_t m, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::vector<Real> a(m);
  for (auto& x : a) x = static_cast<Real>(u(rng));
  return a;
}

void expect_close(const Tensor& a, const Tensor& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "entry " << i;
}

Tensor permute_rows(const Tensor& t, const std::vector<std::size_t>& perm) {
  return ops::select_rows(t, perm);
}

struct Fixture : ::testing::Test {
  std::mt19937_64 rng{21};
  Rng init_rng{22};
  AttentionConfig cfg = small_config();
  AttentionBlockParams block = AttentionBlockParams::init(cfg, init_rng, true);
  Tensor x1 = random_tensor({5, 8}, rng, -1, 1, false);
  Tensor x2 = random_tensor({7, 8}, rng, -1, 1, false);
  std::vector<Real> areas = random_areas(7, rng);
};

using Attend = Fixture;

TEST_F(Attend, UniformAreasEqualClassic) {
  std::vector<Real> uniform(7, Real(0.125));
  auto s = attend(x1, x2, uniform, AttentionVariant::kSurface, block.attention, cfg);
  auto c = attend(x1, x2, uniform, AttentionVariant::kClassic, block.attention, cfg);
  expect_close(s, c, 1e-6);
}

TEST_F(Attend, SingleKeyReturnsItsValue) {
  auto key = ops::slice_rows(x2, 2, 1);
  std::vector<Real> area{Real(0.3)};
  auto out = attend(x1, key, area, AttentionVariant::kSurface, block.attention, cfg);
  auto value = block.attention.output.forward(block.attention.value.forward(key));
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(out.at(i, j), value.at(0, j), 1e-12);
  }
  auto maps = attention_maps(x1, key, area, AttentionVariant::kSurface, block, cfg);
  for (const auto& m : maps) {
    for (Real v : m.values()) EXPECT_NEAR(v, 1, 1e-12);
  }
}

TEST_F(Attend, DuplicatedKeyWithHalvedAreaIsEquivalent) {
  auto dup = ops::concat_rows({x2, ops::slice_rows(x2, 3, 1)});
  std::vector<Real> dup_areas(areas);
  dup_areas[3] /= 2;
  dup_areas.push_back(dup_areas[3]);
  auto a = attend(x1, x2, areas, AttentionVariant::kSurface, block.attention, cfg);
  auto b = attend(x1, dup, dup_areas, AttentionVariant::kSurface, block.attention, cfg);
  expect_close(a, b, 1e-6);
}

TEST_F(Attend, AreaRescalingInvariant) {
  auto a = attend(x1, x2, areas, AttentionVariant::kSurface, block.attention, cfg);
  for (double c : {1e-3, 0.5, 40.0}) {
    std::vector<Real> scaled(areas);
    for (auto& x : scaled) x *= static_cast<Real>(c);
    expect_close(a, attend(x1, x2, scaled, AttentionVariant::kSurface, block.attention, cfg), 1e-6);
  }
}

TEST_F(Attend, QueryPermutationEquivariantKeyPermutationInvariant) {
  std::vector<std::size_t> qp{3, 0, 4, 1, 2};
  std::vector<std::size_t> kp{6, 2, 0, 5, 1, 3, 4};
  std::vector<Real> permuted_areas;
  for (auto i : kp) permuted_areas.push_back(areas[i]);
  auto a = attend(x1, x2, areas, AttentionVariant::kSurface, block.attention, cfg);
  auto b = attend(permute_rows(x1, qp), permute_rows(x2, kp), permuted_areas,
                  AttentionVariant::kSurface, block.attention, cfg);
  expect_close(permute_rows(a, qp), b, 1e-6);
}

TEST_F(Attend, SurfaceWithoutAreasIsConfigError) {
  EXPECT_THROW(attend(x1, x2, {}, AttentionVariant::kSurface, block.attention, cfg), ConfigError);
  std::vector<Real> wrong(3, 1);
  EXPECT_THROW(attend(x1, x2, wrong, AttentionVariant::kSurface, block.attention, cfg),
               DimensionError);
  AttentionConfig bad = cfg;
  bad.heads = 3;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST_F(Attend, ClassicIgnoresAreas) {
  auto a = attend(x1, x2, areas, AttentionVariant::kClassic, block.attention, cfg);
  auto b = attend(x1, x2, {}, AttentionVariant::kClassic, block.attention, cfg);
  expect_close(a, b, 0);
}

using Maps = Fixture;

TEST_F(Maps, RowsSumToOneAndMatchRecomputation) {
  AttentionConfig plain = cfg;
  plain.layer_norm = false;
  Rng r(5);
  auto params = AttentionBlockParams::init(plain, r, true);
  auto maps = attention_maps(x1, x2, areas, AttentionVariant::kSurface, params, plain);
  ASSERT_EQ(maps.size(), 2u);

  auto q = params.attention.query.forward(x1);
  auto k = params.attention.key.forward(x2);
  const std::size_t dh = plain.head_dim();
  for (std::size_t h = 0; h < 2; ++h) {
    for (std::size_t i = 0; i < 5; ++i) {
      std::vector<double> w(7);
      double total = 0;
      for (std::size_t j = 0; j < 7; ++j) {
        double s = 0;
        for (std::size_t c = 0; c < dh; ++c) s += q.at(i, h * dh + c) * k.at(j, h * dh + c);
        w[j] = std::exp(s / std::sqrt(double(dh))) * areas[j];
        total += w[j];
      }
      double row = 0;
      for (std::size_t j = 0; j < 7; ++j) {
        EXPECT_NEAR(maps[h].at(i, j), w[j] / total, 1e-12);
        row += maps[h].at(i, j);
      }
      EXPECT_NEAR(row, 1, 1e-6);
    }
  }
}

using Layer = Fixture;

TEST_F(Layer, ZeroBranchesActAsIdentity) {
  auto p = block;
  for (auto* t : {&p.attention.output.weight, &p.attention.output.bias,
                  &p.feed_forward.layers.back().weight, &p.feed_forward.layers.back().bias}) {
    *t = Tensor::zeros(t->shape(), true);
  }
  auto out = layer(x1, x2, areas, AttentionVariant::kSurface, p, cfg);
  expect_close(out, x1, 0);

  AttentionConfig gain = cfg;
  gain.branch_init_gain = 0;
  Rng r(3);
  auto zero = AttentionBlockParams::init(gain, r, false);
  expect_close(layer(x1, x1, {}, AttentionVariant::kClassic, zero, gain), x1, 0);
}

TEST_F(Layer, RowPermutationEquivariant) {
  std::vector<std::size_t> qp{4, 2, 0, 3, 1};
  auto a = layer(x1, x2, areas, AttentionVariant::kSurface, block, cfg);
  auto b = layer(permute_rows(x1, qp), x2, areas, AttentionVariant::kSurface, block, cfg);
  expect_close(permute_rows(a, qp), b, 1e-6);
}

TEST_F(Layer, ChunkedMatchesRecordedPath) {
  auto big1 = random_tensor({37, 8}, rng, -1, 1, false);
  auto big2 = random_tensor({53, 8}, rng, -1, 1, false);
  auto big_areas = random_areas(53, rng);
  for (auto variant : {AttentionVariant::kSurface, AttentionVariant::kClassic}) {
    auto full = layer(big1, big2, big_areas, variant, block, cfg);
    for (std::size_t chunk : {1u, 5u, 16u, 64u}) {
      expect_close(layer_chunked(big1, big2, big_areas, variant, block, cfg, chunk), full, 1e-9);
    }
    auto self_block = AttentionBlockParams::init(cfg, init_rng, false);
    auto self_full = layer(big2, big2, big_areas, variant, self_block, cfg);
    expect_close(layer_chunked(big2, big2, big_areas, variant, self_block, cfg, 7), self_full, 1e-9);
  }
}

TEST(LayerGradient, MatchesFiniteDifferencesAtFullWidth) {
  std::mt19937_64 rng(31);
  Rng init(32);
  AttentionConfig cfg;  // 64 wide, 4 heads, 512 hidden
  auto block = AttentionBlockParams::init(cfg, init, true);
  auto x1 = random_tensor({5, 64}, rng);
  auto x2 = random_tensor({3, 64}, rng);
  auto areas = random_areas(3, rng);
  std::vector<Tensor> inputs{x1, x2, block.attention.query.weight, block.attention.key.weight,
                             block.attention.value.weight, block.attention.output.weight,
                             block.feed_forward.layers[0].weight, block.norm_context.gamma};
  auto r = testing::check_gradients(
      [&](const auto&) {
        return testing::project(layer(x1, x2, areas, AttentionVariant::kSurface, block, cfg));
      },
      inputs, 1e-5, 256);
  EXPECT_LE(r.max_relative, 1e-5);
}

}  // namespace
}  // namespace surfreg
