#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "surfreg/geometry.hpp"
#include "surfreg/model.hpp"

namespace SURFREG_NAMESPACE {

enum class LossRegime { kSupervised, kSparse, kUnsupervised };

LossRegime parse_loss_regime(const std::string& name);
const char* to_string(LossRegime regime);

struct TrainConfig {
  std::size_t epochs = 300;
  /// Optimizer steps per epoch; 0 means ceil(dataset size / batch size).
  std::size_t steps_per_epoch = 0;
  std::size_t batch_size = 8;
  double learning_rate = 1e-4;
  /// Independent random rotations about the y axis for source and target.
  bool augment = true;
  LossRegime regime = LossRegime::kSupervised;
  /// Share of canonical points with known correspondence (sparse regime).
  double sparse_fraction = 0.15;
  /// Weight of the Chamfer term in the sparse regime.
  double sparse_weight = 1.0;
  /// Points drawn from each cloud per training pair; 0 uses whole clouds.
  std::size_t train_points = 0;
  std::uint64_t seed = 0;
  /// Write a checkpoint every this many epochs into checkpoint_dir (0: never).
  std::size_t checkpoint_every = 0;
  std::string checkpoint_dir;

  void validate() const;
  /// Keys are prefixed with "train.".
  KeyValues to_key_values() const;
  void apply(const KeyValues& kv);
};

/// Uniform ordered pairs of distinct dataset members (a single-member
/// dataset pairs the cloud with itself).
class PairSampler {
 public:
  PairSampler(std::size_t dataset_size, std::uint64_t seed);
  std::pair<std::size_t, std::size_t> next();
  void reseed(std::uint64_t seed) { rng_.seed(seed); }

 private:
  std::size_t size_;
  std::mt19937_64 rng_;
};

/// Coordinates and area weights of a cloud, ready for the model.
struct PreparedCloud {
  Tensor points;
  std::vector<Real> areas;
};

PreparedCloud prepare(const Model& model, const PointCloud& pc);

/// decode(source, encode(target)).
Tensor reconstruct(const Model& model, const PreparedCloud& source, const PreparedCloud& target);

/// Mean over points of the squared distance between matching rows.
Tensor mean_squared_distance(const Tensor& predicted, const Tensor& expected);

/// Row i of source corresponds to row i of target.
Tensor supervised_loss(const Model& model, const PreparedCloud& source,
                       const PreparedCloud& target);
/// Supervised term over the labeled rows plus weight * Chamfer over all points.
Tensor sparse_loss(const Model& model, const PreparedCloud& source, const PreparedCloud& target,
                   std::span<const std::size_t> labeled_rows, double chamfer_weight = 1.0);
Tensor unsupervised_loss(const Model& model, const PreparedCloud& source,
                         const PreparedCloud& target);

PointCloud rotate_y(const PointCloud& pc, double angle);
/// Rotation about the y axis by an angle drawn uniformly from [0, 2 pi).
PointCloud augment(const PointCloud& pc, std::mt19937_64& rng);

struct MetricsRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;  // optimizer steps completed
  double loss = 0;       // mean batch loss over the epoch
  double wall_seconds = 0;
};

/// Tab-separated, one record per line after a "#"-prefixed header.
void write_metrics(std::ostream& out, const std::vector<MetricsRecord>& records);
std::vector<MetricsRecord> read_metrics(std::istream& in);

struct TrainResult {
  ModelParams params;
  std::vector<MetricsRecord> metrics;
};

using EpochCallback = std::function<void(const MetricsRecord&, const Model&)>;

/// Deterministic given the seeds of both configurations. Throws NumericError
/// naming the epoch, step and batch seed when a loss or gradient is not finite.
TrainResult train(const std::vector<PointCloud>& dataset, const ModelConfig& model_config,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

}  // namespace SURFREG_NAMESPACE
