#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "surfreg/config.hpp"
#include "surfreg/error.hpp"
#include "surfreg/io.hpp"
#include "surfreg/synth.hpp"

namespace surfreg {
namespace {

namespace fs = std::filesystem;

PointCloud random_labeled(std::size_t n, std::mt19937_64& rng, bool labels) {
  PointCloud pc;
  pc.points = oracle::random_ball(n, rng, 3.0);
  if (labels) {
    for (std::size_t i = 0; i < n; ++i) pc.labels.push_back((i * 7919) % 1000);
  }
  return pc;
}

PointCloud parse(const std::string& text, CloudFormat format) {
  std::istringstream in(text);
  return read_cloud(in, format, "test");
}

TEST(CloudIo, RoundTripEveryFormat) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    for (auto format : {CloudFormat::kXyz, CloudFormat::kOff, CloudFormat::kPly}) {
      const bool labels = format != CloudFormat::kOff && trial % 2 == 0;
      auto pc = random_labeled(5 + trial * 13, rng, labels);
      std::stringstream ss;
      write_cloud(ss, pc, format);
      auto back = read_cloud(ss, format);
      ASSERT_EQ(back.size(), pc.size()) << to_string(format);
      EXPECT_EQ(back.labels, pc.labels);
      for (std::size_t i = 0; i < pc.size(); ++i) {
        for (int k = 0; k < 3; ++k) EXPECT_NEAR(back.points[i][k], pc.points[i][k], 1e-7 * 3);
      }
    }
  }
}

TEST(CloudIo, OffFacesIgnored) {
  auto pc = parse("OFF\n# comment\n4 2 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 1 2\n3 0 2 3\n",
                  CloudFormat::kOff);
  ASSERT_EQ(pc.size(), 4u);
  EXPECT_EQ(pc.points[3], (Point3{0, 0, 1}));
  auto inline_counts = parse("OFF 2 0 0\n1 2 3\n4 5 6\n", CloudFormat::kOff);
  EXPECT_EQ(inline_counts.size(), 2u);
}

TEST(CloudIo, PlyWithLabelsAndExtraProperties) {
  auto pc = parse(
      "ply\nformat ascii 1.0\ncomment x\nelement vertex 2\nproperty float x\nproperty float y\n"
      "property float z\nproperty uchar red\nproperty int label\nelement face 0\n"
      "property list uchar int vertex_indices\nend_header\n1 2 3 255 7\n4 5 6 0 2\n",
      CloudFormat::kPly);
  ASSERT_EQ(pc.size(), 2u);
  EXPECT_EQ(pc.points[1], (Point3{4, 5, 6}));
  EXPECT_EQ(pc.labels, (std::vector<std::size_t>{7, 2}));
}

void expect_format_error(const std::string& text, CloudFormat format, const std::string& fragment) {
  try {
    parse(text, format);
    FAIL() << "expected a format error for: " << text;
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
  }
}

TEST(CloudIo, MalformedInputNamesTheLine) {
  expect_format_error("", CloudFormat::kXyz, "empty");
  expect_format_error("# only a comment\n\n", CloudFormat::kXyz, "empty");
  expect_format_error("1 2 3\n4 five 6\n", CloudFormat::kXyz, "test:2:");
  expect_format_error("1 2\n", CloudFormat::kXyz, "test:1:");
  expect_format_error("1 2 3 0\n1 2 3\n", CloudFormat::kXyz, "inconsistent");
  expect_format_error("1 2 nan\n", CloudFormat::kXyz, "invalid number");
  expect_format_error("", CloudFormat::kOff, "empty");
  expect_format_error("OFF\n3 0 0\n0 0 0\n1 1 1\n", CloudFormat::kOff, "expected 3 vertices");
  expect_format_error("NOFF\n1 0 0\n0 0 0\n", CloudFormat::kOff, "header");
  expect_format_error("", CloudFormat::kPly, "empty");
  expect_format_error("ply\nformat binary_little_endian 1.0\nend_header\n", CloudFormat::kPly,
                      "ASCII");
  expect_format_error(
      "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\n"
      "property float z\nend_header\n0 0 0\n1 1 1\n",
      CloudFormat::kPly, "expected 3 vertices");
}

TEST(CloudIo, FormatsFromNamesAndPaths) {
  EXPECT_EQ(format_from_path("a/b.xyz"), CloudFormat::kXyz);
  EXPECT_EQ(format_from_path("b.XYZ"), CloudFormat::kXyz);
  EXPECT_THROW(format_from_path("matches.txt"), FormatError);
  EXPECT_EQ(format_from_path("c.OFF"), CloudFormat::kOff);
  EXPECT_EQ(format_from_path("d.ply"), CloudFormat::kPly);
  EXPECT_THROW(format_from_path("e.obj"), FormatError);
  EXPECT_THROW(parse_cloud_format("stl"), FormatError);
  EXPECT_EQ(parse_cloud_format("ply"), CloudFormat::kPly);
}

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("surfreg_io_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  std::string path(const std::string& name) const { return (dir / name).string(); }
  fs::path dir;
};

using Files = TempDir;

TEST_F(Files, SaveLoadAndFolder) {
  std::mt19937_64 rng(2);
  auto a = random_labeled(10, rng, true), b = random_labeled(12, rng, false);
  save_cloud(a, path("b.ply"));
  save_cloud(b, path("a.xyz"));
  save_cloud(b, path("c.off"));
  { std::ofstream(path("notes.md")) << "ignored\n"; }
  auto folder = load_cloud_folder(dir.string());
  ASSERT_EQ(folder.size(), 3u);
  EXPECT_EQ(folder[0].size(), 12u);
  EXPECT_EQ(folder[1].labels, a.labels);
  EXPECT_THROW(load_cloud(path("missing.xyz")), FormatError);
  EXPECT_THROW(load_cloud_folder(path("nothing")), FormatError);
}

TEST_F(Files, Correspondences) {
  CorrespondenceMap m;
  m.target = {4, 0, 2};
  save_correspondence(m, path("m.txt"));
  EXPECT_EQ(load_correspondence(path("m.txt")).target, m.target);
  std::istringstream bad("0 1\n2 3\n");
  EXPECT_THROW(read_correspondence(bad), FormatError);
  std::istringstream empty("");
  EXPECT_THROW(read_correspondence(empty), FormatError);
}

TEST(KeyValues, ParseAndOverride) {
  std::istringstream in("# comment\nmodel.heads = 2\n\n  train.epochs=5  \n");
  auto kv = parse_key_values(in);
  EXPECT_EQ(kv.at("model.heads"), "2");
  EXPECT_EQ(kv.at("train.epochs"), "5");
  apply_override(kv, "train.epochs=7");
  EXPECT_EQ(kv.at("train.epochs"), "7");
  EXPECT_THROW(apply_override(kv, "novalue"), ConfigError);
  std::istringstream dup("a = 1\na = 2\n");
  try {
    parse_key_values(dup, "cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("2"), std::string::npos);
  }
  std::istringstream junk("just words\n");
  EXPECT_THROW(parse_key_values(junk), ConfigError);
}

TEST(RunConfig, RoundTripAndSeedFallback) {
  KeyValues kv{{"seed", "17"}, {"model.heads", "2"}, {"train.epochs", "3"},
               {"synth.shape", "torus"}, {"paths.output_dir", "out"}};
  auto cfg = RunConfig::from_key_values(kv);
  EXPECT_EQ(cfg.model.init_seed, 17u);
  EXPECT_EQ(cfg.train.seed, 17u);
  EXPECT_EQ(cfg.synth.seed, 17u);
  EXPECT_EQ(cfg.synth.shape, BaseShape::kTorus);
  EXPECT_EQ(cfg.output_dir, "out");
  kv["train.seed"] = "4";
  EXPECT_EQ(RunConfig::from_key_values(kv).train.seed, 4u);

  std::stringstream dumped;
  write_key_values(dumped, cfg.to_key_values());
  auto again = RunConfig::from_key_values(parse_key_values(dumped));
  EXPECT_EQ(again.to_key_values(), cfg.to_key_values());

  EXPECT_THROW(RunConfig::from_key_values({{"bogus", "1"}}), ConfigError);
  EXPECT_THROW(RunConfig::from_key_values({{"model.heads", "3"}}), ConfigError);
  EXPECT_THROW(RunConfig::from_key_values({{"seed", "minus"}}), ConfigError);
}

TEST(Synth, AmplitudeZeroGivesBaseSampling) {
  SynthFamilyConfig cfg;
  cfg.points = 200;
  cfg.size = 3;
  cfg.amplitude = 0;
  cfg.seed = 4;
  auto fam = generate_family(cfg);
  ASSERT_EQ(fam.size(), 3u);
  for (const auto& m : fam) {
    ASSERT_EQ(m.size(), 200u);
    for (std::size_t i = 0; i < 200; ++i) {
      EXPECT_EQ(m.labels[i], i);
      for (int k = 0; k < 3; ++k) EXPECT_NEAR(m.points[i][k], fam[0].points[i][k], 1e-12);
    }
  }
}

TEST(Synth, DeterministicPerSeed) {
  for (auto shape : {BaseShape::kSphere, BaseShape::kTorus, BaseShape::kCylinderFigure}) {
    SynthFamilyConfig cfg;
    cfg.shape = shape;
    cfg.points = 150;
    cfg.size = 4;
    cfg.seed = 11;
    auto a = generate_family(cfg), b = generate_family(cfg);
    for (std::size_t m = 0; m < a.size(); ++m) EXPECT_EQ(a[m].points, b[m].points) << to_string(shape);
    cfg.seed = 12;
    EXPECT_NE(generate_family(cfg)[1].points, a[1].points);
  }
}

TEST(Synth, MembersNormalizedAndDisplacementBounded) {
  SynthFamilyConfig cfg;
  cfg.points = 300;
  cfg.size = 10;
  cfg.amplitude = 0.3;
  auto base = sample_base_shape(cfg.shape, cfg.points, 0);
  for (const auto& p : base) {
    EXPECT_LE(std::hypot(p[0], p[1], p[2]), 1 + 1e-9);
  }
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> c(kDeformationModes);
    for (auto& x : c) x = u(rng);
    double mean = 0;
    for (const auto& p : base) {
      auto q = deform(p, c, cfg.amplitude);
      const double d = distance(p, q);
      EXPECT_LE(d, displacement_bound(cfg.amplitude));
      mean += d / base.size();
    }
    EXPECT_LE(mean, displacement_bound(cfg.amplitude));
  }
  for (const auto& m : generate_family(cfg)) {
    Point3 c{0, 0, 0};
    double max_norm = 0;
    for (const auto& p : m.points) {
      for (int k = 0; k < 3; ++k) c[k] += p[k] / m.size();
      max_norm = std::max(max_norm, std::hypot(p[0], p[1], p[2]));
    }
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(c[k], 0, 1e-6);
    EXPECT_NEAR(max_norm, 1, 1e-6);
  }
}

TEST(Synth, InjectivityFailureSuggestsLowerAmplitude) {
  SynthFamilyConfig cfg;
  cfg.points = 100;
  cfg.size = 20;
  cfg.amplitude = 5;
  try {
    generate_family(cfg);
    FAIL() << "expected the injectivity check to fail";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("lower amplitude"), std::string::npos);
  }
  EXPECT_THROW(parse_base_shape("cube"), ConfigError);
  SynthFamilyConfig back;
  back.apply(cfg.to_key_values());
  EXPECT_EQ(back.to_key_values(), cfg.to_key_values());
}

}  // namespace
}  // namespace surfreg
