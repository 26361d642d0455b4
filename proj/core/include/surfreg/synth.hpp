#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "surfreg/geometry.hpp"
#include "surfreg/model.hpp"

namespace SURFREG_NAMESPACE {

enum class BaseShape { kSphere, kTorus, kCylinderFigure };

BaseShape parse_base_shape(const std::string& name);
const char* to_string(BaseShape shape);

/// A family of smoothly deformed copies of one base sampling. Member i is
/// x + amplitude * sum_k c_ik * mode_k(x) with c_ik ~ U(-1, 1); the modes are
/// six symmetric linear maps (no rotation) and four quadratic bends.
struct SynthFamilyConfig {
  BaseShape shape = BaseShape::kCylinderFigure;
  std::size_t points = 1000;
  std::size_t size = 200;
  double amplitude = 0.25;
  std::uint64_t seed = 0;

  void validate() const;
  KeyValues to_key_values() const;
  void apply(const KeyValues& kv);
};

inline constexpr std::size_t kDeformationModes = 10;

/// Uniform surface samples of the base shape, deterministic in the seed.
std::vector<Point3> sample_base_shape(BaseShape shape, std::size_t n, std::uint64_t seed);

/// Applies the deformation with the given mode coefficients.
Point3 deform(const Point3& x, const std::vector<double>& coefficients, double amplitude);

/// Upper bound on |deform(x) - x| over the unit ball for coefficients in [-1, 1].
double displacement_bound(double amplitude);

/// Members are normalized independently and labeled with the base sample
/// index. Throws ConfigError when a deformation fails the sampled injectivity
/// check.
std::vector<PointCloud> generate_family(const SynthFamilyConfig& cfg);

}  // namespace SURFREG_NAMESPACE
