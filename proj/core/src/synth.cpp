#include "surfreg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "surfreg/error.hpp"
#include "seed.hpp"
#include "text.hpp"

namespace SURFREG_NAMESPACE {

namespace {

using Rng = std::mt19937_64;

struct Capsule {
  Point3 a, b;
  double radius;
};

// Torso, arms and legs of a rough human-like figure.
const std::vector<Capsule>& figure_parts() {
  static const std::vector<Capsule> parts{
      {{0.0, -0.55, 0.0}, {0.0, 0.55, 0.0}, 0.3},
      {{-1.0, 0.35, 0.0}, {1.0, 0.35, 0.0}, 0.13},
      {{-0.15, -0.6, 0.0}, {-0.25, -1.4, 0.0}, 0.12},
      {{0.15, -0.6, 0.0}, {0.25, -1.4, 0.0}, 0.12},
      {{0.0, 0.85, 0.0}, {0.0, 0.95, 0.0}, 0.2},
  };
  return parts;
}

double segment_distance(const Point3& p, const Capsule& c) {
  Point3 d{c.b[0] - c.a[0], c.b[1] - c.a[1], c.b[2] - c.a[2]};
  double len2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
  double t = ((p[0] - c.a[0]) * d[0] + (p[1] - c.a[1]) * d[1] + (p[2] - c.a[2]) * d[2]) / len2;
  t = std::clamp(t, 0.0, 1.0);
  return distance(p, {c.a[0] + t * d[0], c.a[1] + t * d[1], c.a[2] + t * d[2]});
}

Point3 random_direction(Rng& rng) {
  std::normal_distribution<double> g;
  for (;;) {
    Point3 v{g(rng), g(rng), g(rng)};
    double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (n > 1e-12) return {v[0] / n, v[1] / n, v[2] / n};
  }
}

Point3 sample_capsule(const Capsule& c, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Point3 axis{c.b[0] - c.a[0], c.b[1] - c.a[1], c.b[2] - c.a[2]};
  double len = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
  for (int k = 0; k < 3; ++k) axis[k] /= len;
  double side = 2 * std::numbers::pi * c.radius * len;
  double caps = 4 * std::numbers::pi * c.radius * c.radius;
  if (u(rng) * (side + caps) < caps) {
    Point3 v = random_direction(rng);
    double along = v[0] * axis[0] + v[1] * axis[1] + v[2] * axis[2];
    const Point3& end = along >= 0 ? c.b : c.a;
    return {end[0] + c.radius * v[0], end[1] + c.radius * v[1], end[2] + c.radius * v[2]};
  }
  // Radial direction: a random direction with its axial part removed.
  Point3 v;
  double n;
  do {
    v = random_direction(rng);
    double along = v[0] * axis[0] + v[1] * axis[1] + v[2] * axis[2];
    for (int k = 0; k < 3; ++k) v[k] -= along * axis[k];
    n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  } while (n < 1e-6);
  double t = u(rng) * len;
  Point3 p;
  for (int k = 0; k < 3; ++k) p[k] = c.a[k] + t * axis[k] + c.radius * v[k] / n;
  return p;
}

std::vector<Point3> sample_figure(std::size_t n, Rng& rng) {
  const auto& parts = figure_parts();
  std::vector<double> areas;
  for (const auto& c : parts) {
    double len = distance(c.a, c.b);
    areas.push_back(2 * std::numbers::pi * c.radius * len + 4 * std::numbers::pi * c.radius * c.radius);
  }
  std::discrete_distribution<std::size_t> pick(areas.begin(), areas.end());
  std::vector<Point3> out;
  out.reserve(n);
  while (out.size() < n) {
    std::size_t k = pick(rng);
    Point3 p = sample_capsule(parts[k], rng);
    bool inside = false;
    for (std::size_t j = 0; j < parts.size() && !inside; ++j) {
      if (j != k && segment_distance(p, parts[j]) < parts[j].radius) inside = true;
    }
    if (!inside) out.push_back(p);
  }
  return out;
}

std::vector<Point3> sample_torus(std::size_t n, Rng& rng) {
  const double big = 1.0, small = 0.4;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Point3> out;
  out.reserve(n);
  while (out.size() < n) {
    double theta = 2 * std::numbers::pi * u(rng);
    double phi = 2 * std::numbers::pi * u(rng);
    // The area element grows with the distance from the axis.
    if (u(rng) * (big + small) > big + small * std::cos(phi)) continue;
    double ring = big + small * std::cos(phi);
    out.push_back({ring * std::cos(theta), small * std::sin(phi), ring * std::sin(theta)});
  }
  return out;
}

double jacobian_determinant(const Point3& x, const std::vector<double>& c, double a) {
  const double j00 = 1 + a * c[0], j01 = a * (c[3] + 2 * c[8] * x[1]), j02 = a * c[5];
  const double j10 = a * (c[3] + 2 * c[6] * x[0]), j11 = 1 + a * c[1], j12 = a * (c[4] + 2 * c[7] * x[2]);
  const double j20 = a * c[5], j21 = a * (c[4] + 2 * c[9] * x[1]), j22 = 1 + a * c[2];
  return j00 * (j11 * j22 - j12 * j21) - j01 * (j10 * j22 - j12 * j20) + j02 * (j10 * j21 - j11 * j20);
}

void check_injective(const std::vector<Point3>& base, const std::vector<double>& coeffs,
                     double amplitude, std::size_t member, Rng& rng) {
  constexpr double kMinStretch = 0.1;
  constexpr double kMinDeterminant = 0.01;
  constexpr double kStep = 1e-3;
  auto fail = [&] {
    throw ConfigError("deformation of family member " + std::to_string(member) +
                      " is not injective at amplitude " + format_double(amplitude) +
                      "; use a lower amplitude");
  };
  // A fold shows up as a Jacobian whose determinant changes sign.
  for (const auto& x : base) {
    if (!(jacobian_determinant(x, coeffs, amplitude) > kMinDeterminant)) fail();
  }
  std::uniform_int_distribution<std::size_t> pick(0, base.size() - 1);
  std::size_t probes = std::min<std::size_t>(base.size(), 500);
  for (std::size_t s = 0; s < probes; ++s) {
    const Point3& x = base[pick(rng)];
    Point3 dir = random_direction(rng);
    Point3 near{x[0] + kStep * dir[0], x[1] + kStep * dir[1], x[2] + kStep * dir[2]};
    const Point3& far = base[pick(rng)];
    Point3 fx = deform(x, coeffs, amplitude);
    double local = distance(fx, deform(near, coeffs, amplitude)) / kStep;
    double d = distance(x, far);
    double global = d > 0 ? distance(fx, deform(far, coeffs, amplitude)) / d : 1.0;
    if (!(local > kMinStretch) || !(global > kMinStretch)) fail();
  }
}

}  // namespace

BaseShape parse_base_shape(const std::string& name) {
  if (name == "sphere") return BaseShape::kSphere;
  if (name == "torus") return BaseShape::kTorus;
  if (name == "cylinder-figure") return BaseShape::kCylinderFigure;
  throw ConfigError("unknown base shape '" + name + "' (expected sphere, torus or cylinder-figure)");
}

const char* to_string(BaseShape shape) {
  switch (shape) {
    case BaseShape::kSphere: return "sphere";
    case BaseShape::kTorus: return "torus";
    case BaseShape::kCylinderFigure: return "cylinder-figure";
  }
  return "?";
}

void SynthFamilyConfig::validate() const {
  if (points < 2) throw ConfigError("synth.points must be at least 2");
  if (size < 1) throw ConfigError("synth.size must be positive");
  if (!(amplitude >= 0) || !std::isfinite(amplitude)) {
    throw ConfigError("synth.amplitude must be finite and non-negative");
  }
}

KeyValues SynthFamilyConfig::to_key_values() const {
  return {{"synth.shape", to_string(shape)},
          {"synth.points", std::to_string(points)},
          {"synth.size", std::to_string(size)},
          {"synth.amplitude", format_double(amplitude)},
          {"synth.seed", std::to_string(seed)}};
}

void SynthFamilyConfig::apply(const KeyValues& kv) {
  for (const auto& [key, value] : kv) {
    if (key.rfind("synth.", 0) != 0) continue;
    try {
      if (key == "synth.shape") shape = parse_base_shape(value);
      else if (key == "synth.points") points = std::stoull(value);
      else if (key == "synth.size") size = std::stoull(value);
      else if (key == "synth.amplitude") amplitude = std::stod(value);
      else if (key == "synth.seed") seed = std::stoull(value);
      else throw ConfigError("unknown key '" + key + "'");
    } catch (const std::logic_error&) {
      throw ConfigError("invalid value '" + value + "' for " + key);
    }
  }
  validate();
}

std::vector<Point3> sample_base_shape(BaseShape shape, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Point3> pts;
  switch (shape) {
    case BaseShape::kSphere:
      for (std::size_t i = 0; i < n; ++i) pts.push_back(random_direction(rng));
      break;
    case BaseShape::kTorus: pts = sample_torus(n, rng); break;
    case BaseShape::kCylinderFigure: pts = sample_figure(n, rng); break;
  }
  PointCloud pc;
  pc.points = std::move(pts);
  return normalize(pc).points;
}

Point3 deform(const Point3& x, const std::vector<double>& c, double amplitude) {
  if (c.size() != kDeformationModes) {
    throw ContractError("deform expects " + std::to_string(kDeformationModes) + " coefficients");
  }
  const double px = x[0], py = x[1], pz = x[2];
  // Symmetric linear part.
  double dx = c[0] * px + c[3] * py + c[5] * pz;
  double dy = c[3] * px + c[1] * py + c[4] * pz;
  double dz = c[5] * px + c[4] * py + c[2] * pz;
  // Bends.
  dy += c[6] * px * px + c[7] * pz * pz;
  dx += c[8] * py * py;
  dz += c[9] * py * py;
  return {px + amplitude * dx, py + amplitude * dy, pz + amplitude * dz};
}

double displacement_bound(double amplitude) {
  // |S x| <= ||S||_F <= 3 on the unit ball; the bend vector has norm <= 2.
  return 5.0 * amplitude;
}

std::vector<PointCloud> generate_family(const SynthFamilyConfig& cfg) {
  cfg.validate();
  std::vector<Point3> base = sample_base_shape(cfg.shape, cfg.points, detail::derive_seed(cfg.seed, 0));
  std::vector<std::size_t> labels(cfg.points);
  for (std::size_t i = 0; i < cfg.points; ++i) labels[i] = i;

  std::vector<PointCloud> family;
  family.reserve(cfg.size);
  for (std::size_t m = 0; m < cfg.size; ++m) {
    Rng rng(detail::derive_seed(cfg.seed, m + 1));
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> coeffs(kDeformationModes);
    for (auto& c : coeffs) c = u(rng);
    check_injective(base, coeffs, cfg.amplitude, m, rng);
    PointCloud pc;
    pc.labels = labels;
    pc.points.reserve(cfg.points);
    for (const auto& x : base) pc.points.push_back(deform(x, coeffs, cfg.amplitude));
    family.push_back(normalize(pc));
  }
  return family;
}

}  // namespace SURFREG_NAMESPACE
