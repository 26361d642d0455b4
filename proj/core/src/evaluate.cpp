#include "surfreg/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <string>

#include "surfreg/error.hpp"
#include "seed.hpp"

namespace SURFREG_NAMESPACE {

namespace {

void check_indices(const CorrespondenceMap& map, std::size_t n, const char* what) {
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (map.target[i] >= n) {
      throw ContractError(std::string(what) + " index " + std::to_string(map.target[i]) +
                          " at row " + std::to_string(i) + " exceeds target size " +
                          std::to_string(n));
    }
  }
}

// Geodesic error of every row between target[predicted[i]] and target[truth[i]].
void fill_geodesics(EvalReport& report, std::span<const std::size_t> predicted,
                    const CorrespondenceMap& gt, const PointCloud& target, std::size_t k) {
  const std::size_t n = target.size();
  report.per_point.assign(predicted.size(), 0.0);
  try {
    GeodesicGraph graph(target.points, k);
    std::vector<std::vector<std::size_t>> rows_by_truth(n);
    for (std::size_t i = 0; i < gt.size(); ++i) rows_by_truth[gt.target[i]].push_back(i);
    double diameter = 0;
    for (std::size_t s = 0; s < n; ++s) {
      const std::vector<double> d = graph.distances_from(s);
      for (double v : d) diameter = std::max(diameter, v);
      for (std::size_t i : rows_by_truth[s]) report.per_point[i] = d[predicted[i]];
    }
    report.diameter = diameter;
  } catch (const GeometryError&) {
    report.euclidean_fallback = true;
    double diameter = 0;
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = a + 1; b < n; ++b) {
        diameter = std::max(diameter, distance(target.points[a], target.points[b]));
      }
    }
    report.diameter = diameter;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
      report.per_point[i] = distance(target.points[predicted[i]], target.points[gt.target[i]]);
    }
  }
  double sum = 0;
  for (double e : report.per_point) sum += e;
  report.mean_geodesic = report.per_point.empty() ? 0.0 : sum / static_cast<double>(report.per_point.size());
  report.mean_geodesic_relative = report.diameter > 0 ? report.mean_geodesic / report.diameter : 0.0;
}

void fill_euclidean(EvalReport& report, std::span<const double> errors) {
  double sum = 0, worst = 0;
  for (double e : errors) {
    sum += e;
    worst = std::max(worst, e);
  }
  report.mean_euclidean = errors.empty() ? 0.0 : sum / static_cast<double>(errors.size());
  report.max_euclidean = worst;
}

}  // namespace

EvalReport evaluate(const CorrespondenceMap& pred, const CorrespondenceMap& gt,
                    const PointCloud& target, std::size_t graph_k) {
  validate(target);
  if (pred.size() != gt.size()) {
    throw ContractError("prediction has " + std::to_string(pred.size()) +
                        " rows, ground truth " + std::to_string(gt.size()));
  }
  check_indices(pred, target.size(), "predicted");
  check_indices(gt, target.size(), "ground-truth");
  EvalReport report;
  report.points = pred.size();
  std::vector<double> euclid(pred.size());
  std::vector<Point3> predicted(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    predicted[i] = target.points[pred.target[i]];
    euclid[i] = distance(predicted[i], target.points[gt.target[i]]);
  }
  fill_euclidean(report, euclid);
  report.chamfer = chamfer_distance(predicted, target.points);
  fill_geodesics(report, pred.target, gt, target, graph_k);
  return report;
}

EvalReport evaluate(std::span<const Point3> registered, const CorrespondenceMap& gt,
                    const PointCloud& target, std::size_t graph_k) {
  validate(target);
  if (registered.size() != gt.size()) {
    throw ContractError("registration has " + std::to_string(registered.size()) +
                        " points, ground truth " + std::to_string(gt.size()));
  }
  check_indices(gt, target.size(), "ground-truth");
  EvalReport report;
  report.points = registered.size();
  std::vector<double> euclid(registered.size());
  for (std::size_t i = 0; i < registered.size(); ++i) {
    euclid[i] = distance(registered[i], target.points[gt.target[i]]);
  }
  fill_euclidean(report, euclid);
  report.chamfer = chamfer_distance(registered, target.points);
  const CorrespondenceMap nearest = nearest_neighbor_match(registered, target.points);
  fill_geodesics(report, nearest.target, gt, target, graph_k);
  return report;
}

void write_report(std::ostream& out, const EvalReport& r) {
  char buf[96];
  auto line = [&](const char* key, double v) {
    std::snprintf(buf, sizeof buf, "%s\t%.9g\n", key, v);
    out << buf;
  };
  out << "# key\tvalue\n";
  out << "points\t" << r.points << "\n";
  line("mean_geodesic", r.mean_geodesic);
  line("mean_geodesic_relative", r.mean_geodesic_relative);
  line("diameter", r.diameter);
  line("chamfer", r.chamfer);
  line("max_euclidean", r.max_euclidean);
  line("mean_euclidean", r.mean_euclidean);
  out << "euclidean_fallback\t" << (r.euclidean_fallback ? 1 : 0) << "\n";
  out << "# point\tindex\terror\n";
  for (std::size_t i = 0; i < r.per_point.size(); ++i) {
    std::snprintf(buf, sizeof buf, "point\t%zu\t%.9g\n", i, r.per_point[i]);
    out << buf;
  }
}

EvalReport read_report(std::istream& in) {
  EvalReport r;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string key;
    fields >> key;
    bool ok = true;
    if (key == "point") {
      std::size_t index;
      double err;
      ok = static_cast<bool>(fields >> index >> err) && index == r.per_point.size();
      if (ok) r.per_point.push_back(err);
    } else if (key == "points") ok = static_cast<bool>(fields >> r.points);
    else if (key == "mean_geodesic") ok = static_cast<bool>(fields >> r.mean_geodesic);
    else if (key == "mean_geodesic_relative") ok = static_cast<bool>(fields >> r.mean_geodesic_relative);
    else if (key == "diameter") ok = static_cast<bool>(fields >> r.diameter);
    else if (key == "chamfer") ok = static_cast<bool>(fields >> r.chamfer);
    else if (key == "max_euclidean") ok = static_cast<bool>(fields >> r.max_euclidean);
    else if (key == "mean_euclidean") ok = static_cast<bool>(fields >> r.mean_euclidean);
    else if (key == "euclidean_fallback") {
      int flag;
      ok = static_cast<bool>(fields >> flag);
      r.euclidean_fallback = flag != 0;
    } else ok = false;
    if (!ok) throw FormatError("report line " + std::to_string(lineno) + ": cannot parse '" + line + "'");
  }
  return r;
}

CorrespondenceMap correspondence_from_labels(const PointCloud& source, const PointCloud& target) {
  if (!source.has_labels() || !target.has_labels()) {
    throw ContractError("both clouds need canonical labels");
  }
  std::size_t top = 0;
  for (std::size_t l : target.labels) top = std::max(top, l);
  std::vector<std::size_t> row(top + 1, target.size());
  for (std::size_t r = 0; r < target.size(); ++r) row[target.labels[r]] = r;
  CorrespondenceMap map;
  map.target.reserve(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) {
    const std::size_t l = source.labels[i];
    if (l > top || row[l] == target.size()) {
      throw ContractError("label " + std::to_string(l) + " of source point " + std::to_string(i) +
                          " is absent from the target");
    }
    map.target.push_back(row[l]);
  }
  return map;
}

double transported_l1(std::span<const double> full, std::span<const double> resampled,
                      std::span<const std::size_t> nearest) {
  if (full.size() != nearest.size()) throw ContractError("transport map size mismatch");
  std::vector<double> moved(resampled.size(), 0.0);
  for (std::size_t j = 0; j < full.size(); ++j) {
    if (nearest[j] >= moved.size()) throw ContractError("transport index out of range");
    moved[nearest[j]] += full[j];
  }
  double l1 = 0;
  for (std::size_t s = 0; s < moved.size(); ++s) l1 += std::abs(moved[s] - resampled[s]);
  return l1;
}

namespace {

// First encoder layer cross-attention, K rows of n probabilities.
std::vector<std::vector<double>> first_layer_attention(const Model& model, const PointCloud& pc) {
  AttentionTrace trace;
  {
    NoGradGuard no_grad;
    model.encode(to_tensor(pc), model.areas(pc.points), &trace);
  }
  const auto& heads = trace.encoder_cross.front();
  const std::size_t k = heads.front().rows(), n = heads.front().cols();
  std::vector<std::vector<double>> out(k, std::vector<double>(n, 0.0));
  for (const Tensor& h : heads) {
    for (std::size_t p = 0; p < k; ++p) {
      for (std::size_t j = 0; j < n; ++j) out[p][j] += h.at(p, j);
    }
  }
  for (auto& row : out) {
    for (double& v : row) v /= static_cast<double>(heads.size());
  }
  return out;
}

}  // namespace

std::vector<double> attention_drift(const Model& model, const PointCloud& cloud,
                                    const DriftOptions& options) {
  validate(cloud);
  if (!(options.fraction > 0 && options.fraction <= 1)) {
    throw ContractError("resampling fraction must lie in (0, 1]");
  }
  const std::size_t m = std::max<std::size_t>(
      2, static_cast<std::size_t>(std::lround(options.fraction * static_cast<double>(cloud.size()))));
  const auto full = first_layer_attention(model, cloud);
  std::vector<double> drift;
  drift.reserve(options.trials);
  for (std::size_t t = 0; t < options.trials; ++t) {
    const auto idx = resample_indices(cloud, options.strategy, std::min(m, cloud.size()),
                                      detail::derive_seed(options.seed, t), options.resample);
    const PointCloud sub = subset(cloud, idx);
    const auto part = first_layer_attention(model, sub);
    const auto nearest = nearest_neighbor_match(cloud.points, sub.points).target;
    double sum = 0;
    for (std::size_t p = 0; p < full.size(); ++p) sum += transported_l1(full[p], part[p], nearest);
    drift.push_back(sum / static_cast<double>(full.size()));
  }
  return drift;
}

double paired_sign_flip_p(std::span<const double> d, std::uint64_t seed, std::size_t samples) {
  if (d.empty()) throw ContractError("paired test needs at least one pair");
  double observed = 0;
  for (double v : d) observed += v;
  const double tol = 1e-12 * (1 + std::abs(observed));
  if (d.size() <= 20) {
    const std::uint64_t total = std::uint64_t{1} << d.size();
    std::uint64_t hits = 0;
    for (std::uint64_t mask = 0; mask < total; ++mask) {
      double s = 0;
      for (std::size_t i = 0; i < d.size(); ++i) s += (mask >> i & 1) ? -d[i] : d[i];
      if (s >= observed - tol) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(total);
  }
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution flip(0.5);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < samples; ++r) {
    double s = 0;
    for (double v : d) s += flip(rng) ? -v : v;
    if (s >= observed - tol) ++hits;
  }
  return static_cast<double>(hits + 1) / static_cast<double>(samples + 1);
}

StabilityReport attention_stability(const Model& surface, const Model& classic,
                                    const PointCloud& cloud, const DriftOptions& options) {
  StabilityReport r;
  r.surface = attention_drift(surface, cloud, options);
  r.classic = attention_drift(classic, cloud, options);
  std::vector<double> diff(r.surface.size());
  for (std::size_t t = 0; t < diff.size(); ++t) {
    r.surface_mean += r.surface[t];
    r.classic_mean += r.classic[t];
    diff[t] = r.classic[t] - r.surface[t];
  }
  if (!diff.empty()) {
    const double n = static_cast<double>(diff.size());
    r.surface_mean /= n;
    r.classic_mean /= n;
    r.mean_difference = r.classic_mean - r.surface_mean;
    r.p_value = paired_sign_flip_p(diff, options.seed);
  }
  return r;
}

void write_stability(std::ostream& out, const StabilityReport& r) {
  char buf[128];
  out << "# trial\tsurface\tclassic\n";
  for (std::size_t t = 0; t < r.surface.size(); ++t) {
    std::snprintf(buf, sizeof buf, "%zu\t%.9g\t%.9g\n", t, r.surface[t], r.classic[t]);
    out << buf;
  }
  std::snprintf(buf, sizeof buf,
                "# surface_mean\t%.9g\n# classic_mean\t%.9g\n# mean_difference\t%.9g\n# p_value\t%.9g\n",
                r.surface_mean, r.classic_mean, r.mean_difference, r.p_value);
  out << buf;
}

}  // namespace SURFREG_NAMESPACE
