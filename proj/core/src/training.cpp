#include "surfreg/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <istream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>

#include "surfreg/adam.hpp"
#include "surfreg/error.hpp"
#include "surfreg/ops.hpp"
#include "seed.hpp"
#include "text.hpp"

namespace SURFREG_NAMESPACE {

using Rng = std::mt19937_64;

LossRegime parse_loss_regime(const std::string& name) {
  if (name == "supervised") return LossRegime::kSupervised;
  if (name == "sparse") return LossRegime::kSparse;
  if (name == "unsupervised") return LossRegime::kUnsupervised;
  throw ConfigError("unknown loss regime '" + name + "' (expected supervised, sparse or unsupervised)");
}

const char* to_string(LossRegime regime) {
  switch (regime) {
    case LossRegime::kSupervised: return "supervised";
    case LossRegime::kSparse: return "sparse";
    case LossRegime::kUnsupervised: return "unsupervised";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) {
    throw ConfigError("train.learning_rate must be positive and finite");
  }
  if (!(sparse_fraction > 0 && sparse_fraction <= 1)) {
    throw ConfigError("train.sparse_fraction must lie in (0, 1]");
  }
  if (!(sparse_weight >= 0) || !std::isfinite(sparse_weight)) {
    throw ConfigError("train.sparse_weight must be finite and non-negative");
  }
  if (train_points == 1) throw ConfigError("train.train_points must be 0 or at least 2");
  if (checkpoint_every > 0 && checkpoint_dir.empty()) {
    throw ConfigError("train.checkpoint_every needs train.checkpoint_dir");
  }
}

namespace {

}  // namespace

KeyValues TrainConfig::to_key_values() const {
  return {{"train.epochs", std::to_string(epochs)},
          {"train.steps_per_epoch", std::to_string(steps_per_epoch)},
          {"train.batch_size", std::to_string(batch_size)},
          {"train.learning_rate", format_double(learning_rate)},
          {"train.augment", augment ? "true" : "false"},
          {"train.regime", to_string(regime)},
          {"train.sparse_fraction", format_double(sparse_fraction)},
          {"train.sparse_weight", format_double(sparse_weight)},
          {"train.train_points", std::to_string(train_points)},
          {"train.seed", std::to_string(seed)},
          {"train.checkpoint_every", std::to_string(checkpoint_every)},
          {"train.checkpoint_dir", checkpoint_dir}};
}

void TrainConfig::apply(const KeyValues& kv) {
  for (const auto& [key, value] : kv) {
    if (key.rfind("train.", 0) != 0) continue;
    try {
      if (key == "train.epochs") epochs = std::stoull(value);
      else if (key == "train.steps_per_epoch") steps_per_epoch = std::stoull(value);
      else if (key == "train.batch_size") batch_size = std::stoull(value);
      else if (key == "train.learning_rate") learning_rate = std::stod(value);
      else if (key == "train.augment") {
        if (value != "true" && value != "false") throw ConfigError("train.augment must be true or false");
        augment = value == "true";
      } else if (key == "train.regime") regime = parse_loss_regime(value);
      else if (key == "train.sparse_fraction") sparse_fraction = std::stod(value);
      else if (key == "train.sparse_weight") sparse_weight = std::stod(value);
      else if (key == "train.train_points") train_points = std::stoull(value);
      else if (key == "train.seed") seed = std::stoull(value);
      else if (key == "train.checkpoint_every") checkpoint_every = std::stoull(value);
      else if (key == "train.checkpoint_dir") checkpoint_dir = value;
      else throw ConfigError("unknown key '" + key + "'");
    } catch (const std::logic_error&) {
      throw ConfigError("invalid value '" + value + "' for " + key);
    }
  }
  validate();
}

PairSampler::PairSampler(std::size_t dataset_size, std::uint64_t seed)
    : size_(dataset_size), rng_(seed) {
  if (dataset_size == 0) throw ContractError("pair sampler needs a non-empty dataset");
}

std::pair<std::size_t, std::size_t> PairSampler::next() {
  if (size_ == 1) return {0, 0};
  std::size_t a = std::uniform_int_distribution<std::size_t>(0, size_ - 1)(rng_);
  std::size_t b = std::uniform_int_distribution<std::size_t>(0, size_ - 2)(rng_);
  if (b >= a) ++b;
  return {a, b};
}

PreparedCloud prepare(const Model& model, const PointCloud& pc) {
  validate(pc);
  return {to_tensor(pc), model.areas(pc.points)};
}

Tensor reconstruct(const Model& model, const PreparedCloud& source, const PreparedCloud& target) {
  Tensor latents = model.encode(target.points, target.areas);
  return model.decode(source.points, source.areas, latents);
}

Tensor mean_squared_distance(const Tensor& predicted, const Tensor& expected) {
  if (predicted.shape() != expected.shape() || predicted.rank() != 2) {
    throw ContractError("point sets differ in shape: " + shape_string(predicted.shape()) + " vs " +
                        shape_string(expected.shape()));
  }
  Tensor sq = ops::square(ops::sub(predicted, expected));
  return ops::scale(ops::reduce_sum(sq), Real(1) / static_cast<Real>(predicted.rows()));
}

Tensor supervised_loss(const Model& model, const PreparedCloud& source,
                       const PreparedCloud& target) {
  if (source.points.rows() != target.points.rows()) {
    throw ContractError("supervised loss needs equally sized clouds, got " +
                        std::to_string(source.points.rows()) + " and " +
                        std::to_string(target.points.rows()));
  }
  return mean_squared_distance(reconstruct(model, source, target), target.points);
}

Tensor sparse_loss(const Model& model, const PreparedCloud& source, const PreparedCloud& target,
                   std::span<const std::size_t> labeled_rows, double chamfer_weight) {
  if (labeled_rows.empty()) throw ContractError("sparse loss needs at least one labeled point");
  if (source.points.rows() != target.points.rows()) {
    throw ContractError("sparse loss needs equally sized clouds");
  }
  for (std::size_t r : labeled_rows) {
    if (r >= source.points.rows()) {
      throw ContractError("labeled row " + std::to_string(r) + " out of range");
    }
  }
  Tensor out = reconstruct(model, source, target);
  Tensor supervised = mean_squared_distance(ops::select_rows(out, labeled_rows),
                                            ops::select_rows(target.points, labeled_rows));
  if (chamfer_weight == 0) return supervised;
  return ops::add(supervised,
                  ops::scale(chamfer(target.points, out), static_cast<Real>(chamfer_weight)));
}

Tensor unsupervised_loss(const Model& model, const PreparedCloud& source,
                         const PreparedCloud& target) {
  return chamfer(target.points, reconstruct(model, source, target));
}

PointCloud rotate_y(const PointCloud& pc, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  PointCloud out = pc;
  for (auto& p : out.points) {
    const double x = p[0], z = p[2];
    p[0] = c * x + s * z;
    p[2] = -s * x + c * z;
  }
  return out;
}

PointCloud augment(const PointCloud& pc, Rng& rng) {
  std::uniform_real_distribution<double> angle(0.0, 2 * std::numbers::pi);
  return rotate_y(pc, angle(rng));
}

void write_metrics(std::ostream& out, const std::vector<MetricsRecord>& records) {
  out << "# epoch\tstep\tloss\twall_seconds\n";
  char buf[128];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%zu\t%zu\t%.9g\t%.3f\n", r.epoch, r.step, r.loss,
                  r.wall_seconds);
    out << buf;
  }
}

std::vector<MetricsRecord> read_metrics(std::istream& in) {
  std::vector<MetricsRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    MetricsRecord r;
    if (!(fields >> r.epoch >> r.step >> r.loss >> r.wall_seconds)) {
      throw FormatError("metrics line " + std::to_string(lineno) + ": expected 4 fields");
    }
    out.push_back(r);
  }
  return out;
}

namespace {

std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t m, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t j = std::uniform_int_distribution<std::size_t>(i, n - 1)(rng);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(m);
  return idx;
}

// Cloud with its area weights, computed once on the full cloud, and the row
// holding each canonical label.
struct Member {
  const PointCloud* cloud;
  std::vector<Real> areas;
  std::vector<std::size_t> row_of_label;
};

PreparedCloud pick_rows(const Member& m, std::span<const std::size_t> rows, bool rotate,
                        Rng& rng) {
  PointCloud pc;
  pc.points.reserve(rows.size());
  std::vector<Real> areas;
  areas.reserve(rows.size());
  for (std::size_t r : rows) {
    pc.points.push_back(m.cloud->points[r]);
    areas.push_back(m.areas[r]);
  }
  if (rotate) pc = augment(pc, rng);
  return {to_tensor(pc), std::move(areas)};
}

}  // namespace

TrainResult train(const std::vector<PointCloud>& dataset, const ModelConfig& model_config,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (dataset.empty()) throw ContractError("training dataset is empty");
  const bool labeled = config.regime != LossRegime::kUnsupervised;

  Model model(model_config);
  std::vector<Member> members;
  members.reserve(dataset.size());
  const std::size_t n = dataset.front().size();
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const PointCloud& pc = dataset[i];
    validate(pc);
    Member m{&pc, model.areas(pc.points), {}};
    if (labeled) {
      if (pc.size() != n || !pc.has_labels()) {
        throw ContractError("supervised training needs equally sized, labeled clouds (cloud " +
                            std::to_string(i) + ")");
      }
      m.row_of_label.assign(n, n);
      for (std::size_t r = 0; r < n; ++r) {
        std::size_t label = pc.labels[r];
        if (label >= n || m.row_of_label[label] != n) {
          throw ContractError("labels of cloud " + std::to_string(i) +
                              " are not a permutation of 0..n-1");
        }
        m.row_of_label[label] = r;
      }
    }
    members.push_back(std::move(m));
  }

  // Canonical points with known correspondence in the sparse regime, first
  // the labeled ones, then the rest.
  std::vector<std::size_t> canonical;
  std::size_t num_labeled = 0;
  if (labeled) {
    Rng rng(detail::derive_seed(config.seed, 0));
    canonical = sample_without_replacement(n, n, rng);
    num_labeled = config.regime == LossRegime::kSparse
                      ? std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(
                                                     config.sparse_fraction * static_cast<double>(n))))
                      : n;
  }

  std::vector<Tensor> params = model.params().tensors();
  AdamOptions opts;
  opts.learning_rate = static_cast<Real>(config.learning_rate);
  Adam adam(params, opts);
  PairSampler sampler(dataset.size(), 0);
  const std::size_t steps_per_epoch =
      config.steps_per_epoch > 0 ? config.steps_per_epoch
                                 : (dataset.size() + config.batch_size - 1) / config.batch_size;
  const Real batch_scale = Real(1) / static_cast<Real>(config.batch_size);

  TrainResult result;
  const auto start = std::chrono::steady_clock::now();
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    double epoch_loss = 0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
      const std::uint64_t batch_seed = detail::derive_seed(config.seed, step + 1);
      Rng rng(batch_seed);
      sampler.reseed(batch_seed);
      double batch_loss = 0;
      try {
        adam.zero_grad();
        for (std::size_t b = 0; b < config.batch_size; ++b) {
          auto [si, ti] = sampler.next();
          const Member& src = members[si];
          const Member& tgt = members[ti];
          PreparedCloud source, target;
          std::vector<std::size_t> labeled_rows;
          if (labeled) {
            std::vector<std::size_t> chosen;
            std::size_t m = config.train_points == 0 ? n : std::min(n, config.train_points);
            if (m == n) {
              chosen.resize(n);
              std::iota(chosen.begin(), chosen.end(), std::size_t{0});
            } else {
              // Keep the labeled share of the subset equal to the configured fraction.
              std::size_t k = std::min(num_labeled, std::max<std::size_t>(
                  1, static_cast<std::size_t>(std::lround(static_cast<double>(m) *
                                                          static_cast<double>(num_labeled) /
                                                          static_cast<double>(n)))));
              k = std::min(k, m);
              if (m - k > n - num_labeled) k = m - (n - num_labeled);
              for (std::size_t i : sample_without_replacement(num_labeled, k, rng)) {
                chosen.push_back(canonical[i]);
              }
              for (std::size_t i : sample_without_replacement(n - num_labeled, m - k, rng)) {
                chosen.push_back(canonical[num_labeled + i]);
              }
            }
            std::vector<std::size_t> src_rows, tgt_rows;
            for (std::size_t label : chosen) {
              src_rows.push_back(src.row_of_label[label]);
              tgt_rows.push_back(tgt.row_of_label[label]);
            }
            if (config.regime == LossRegime::kSparse) {
              std::vector<bool> is_labeled(n, false);
              for (std::size_t i = 0; i < num_labeled; ++i) is_labeled[canonical[i]] = true;
              for (std::size_t r = 0; r < chosen.size(); ++r) {
                if (is_labeled[chosen[r]]) labeled_rows.push_back(r);
              }
            }
            source = pick_rows(src, src_rows, config.augment, rng);
            target = pick_rows(tgt, tgt_rows, config.augment, rng);
          } else {
            auto rows_for = [&](const Member& mem) {
              std::size_t size = mem.cloud->size();
              std::size_t m = config.train_points == 0 ? size : std::min(size, config.train_points);
              return sample_without_replacement(size, m, rng);
            };
            auto src_rows = rows_for(src);
            auto tgt_rows = rows_for(tgt);
            source = pick_rows(src, src_rows, config.augment, rng);
            target = pick_rows(tgt, tgt_rows, config.augment, rng);
          }

          Tensor loss;
          switch (config.regime) {
            case LossRegime::kSupervised: loss = supervised_loss(model, source, target); break;
            case LossRegime::kSparse:
              loss = sparse_loss(model, source, target, labeled_rows, config.sparse_weight);
              break;
            case LossRegime::kUnsupervised: loss = unsupervised_loss(model, source, target); break;
          }
          batch_loss += loss.item();
          ops::scale(loss, batch_scale).backward();
        }
        adam.step();
      } catch (const NumericError& e) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "training diverged at epoch %zu step %zu (batch seed %llu): ",
                      epoch, step, static_cast<unsigned long long>(batch_seed));
        throw NumericError(buf + std::string(e.what()));
      }
      epoch_loss += batch_loss / static_cast<double>(config.batch_size);
    }

    MetricsRecord record;
    record.epoch = epoch;
    record.step = step;
    record.loss = steps_per_epoch > 0 ? epoch_loss / static_cast<double>(steps_per_epoch) : 0.0;
    record.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.metrics.push_back(record);
    if (on_epoch) on_epoch(record, model);
    if (config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0) {
      std::filesystem::create_directories(config.checkpoint_dir);
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04zu.ckpt", epoch);
      KeyValues extra = config.to_key_values();
      extra["train.completed_epochs"] = std::to_string(epoch);
      save_checkpoint(model.params(), model_config,
                      (std::filesystem::path(config.checkpoint_dir) / name).string(), extra);
    }
  }
  result.params = model.params();
  return result;
}

}  // namespace SURFREG_NAMESPACE
