// Acceptance run: one PASS/FAIL line per criterion A1-A8.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "criteria.hpp"
#include "surfreg/error.hpp"
#include "surfreg/evaluate.hpp"
#include "surfreg/io.hpp"
#include "surfreg/model.hpp"
#include "surfreg/refine.hpp"
#include "surfreg/synth.hpp"
#include "surfreg/training.hpp"
#include "surfreg_cli/cli.hpp"

namespace fs = std::filesystem;
using namespace surfreg;
using acceptance::Outcome;
using Clock = std::chrono::steady_clock;

namespace {

// Desk-scale experiment shared by A1-A3.
constexpr std::size_t kTrainClouds = 200;
constexpr std::size_t kHeldOutClouds = 20;
constexpr double kAmplitude = 0.25;
constexpr std::size_t kEpochs = 100;
constexpr std::size_t kStepsPerEpoch = 25;
constexpr std::size_t kBatch = 8;
constexpr double kLearningRate = 1e-3;
constexpr std::size_t kTrainPoints = 200;
constexpr double kTimeBudgetSeconds = 3600;

// A8.
constexpr std::size_t kLargeTarget = 100000;
constexpr std::size_t kChunk = 1024;
constexpr double kEnvelopeMiB = 256;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Peak resident set size since the last reset, in MiB.
double peak_rss_mib() {
  std::ifstream status("/proc/self/status");
  std::string line;
  while (std::getline(status, line)) {
    if (line.rfind("VmHWM:", 0) == 0) return std::stod(line.substr(6)) / 1024.0;
  }
  return 0;
}

double current_rss_mib() {
  std::ifstream status("/proc/self/status");
  std::string line;
  while (std::getline(status, line)) {
    if (line.rfind("VmRSS:", 0) == 0) return std::stod(line.substr(6)) / 1024.0;
  }
  return 0;
}

bool reset_peak_rss() {
  std::ofstream clear("/proc/self/clear_refs");
  clear << "5";
  return static_cast<bool>(clear.flush());
}

std::vector<PointCloud> desk_family() {
  SynthFamilyConfig fc;
  fc.points = 1000;
  fc.size = kTrainClouds + kHeldOutClouds;
  fc.amplitude = kAmplitude;
  fc.seed = 0;
  return generate_family(fc);
}

std::vector<std::pair<std::size_t, std::size_t>> held_out_pairs() {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < kHeldOutClouds; ++i) {
    pairs.push_back({kTrainClouds + i, kTrainClouds + (i + 1) % kHeldOutClouds});
  }
  return pairs;
}

TrainConfig desk_train_config() {
  TrainConfig tc;
  tc.epochs = kEpochs;
  tc.steps_per_epoch = kStepsPerEpoch;
  tc.batch_size = kBatch;
  tc.learning_rate = kLearningRate;
  tc.train_points = kTrainPoints;
  tc.augment = false;
  tc.seed = 0;
  return tc;
}

double mean_index_error(const std::vector<Point3>& a, const std::vector<Point3>& b) {
  double sum = 0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += distance(a[i], b[i]);
  return sum / a.size();
}

struct Trained {
  Model model;
  double seconds = 0;
  std::size_t epochs = 0;
};

// Trains one variant, or reloads it from `cache` when a previous run left a
// checkpoint there.
Trained train_variant(const std::vector<PointCloud>& family, AttentionVariant variant,
                      const std::optional<fs::path>& cache) {
  const std::string name = std::string(to_string(variant)) + ".ckpt";
  if (cache && fs::exists(*cache / name)) {
    auto ck = load_checkpoint((*cache / name).string());
    std::cerr << "  reusing " << (*cache / name).string() << "\n";
    return {Model(ck.config, std::move(ck.params)), std::stod(ck.header.at("train_seconds")),
            std::stoul(ck.header.at("epochs"))};
  }
  ModelConfig mc;
  mc.variant = variant;
  std::vector<PointCloud> train_set(family.begin(), family.begin() + kTrainClouds);
  const auto t0 = Clock::now();
  auto result = train(train_set, mc, desk_train_config(), [&](const MetricsRecord& r, const Model& m) {
    if (r.epoch % 10 != 0) return;
    // Progress on the first two held-out pairs.
    double error = 0;
    for (std::size_t i = 0; i < 2; ++i) {
      const auto [s, t] = held_out_pairs()[i];
      error += mean_index_error(m.register_cloud(family[s], family[t]), family[t].points) / 2;
    }
    std::cerr << "  " << to_string(variant) << " epoch " << r.epoch << " loss " << r.loss
              << " held_out " << fmt(error) << " wall " << fmt(r.wall_seconds, 5) << " s\n";
  });
  const double seconds = seconds_since(t0);
  if (cache) {
    fs::create_directories(*cache);
    save_checkpoint(result.params, mc, (*cache / name).string(),
                    {{"train_seconds", fmt(seconds, 10)}, {"epochs", std::to_string(kEpochs)}});
  }
  return {Model(mc, std::move(result.params)), seconds, kEpochs};
}

Outcome desk_registration(const std::vector<PointCloud>& family, const Trained& trained) {
  double error = 0, baseline = 0;
  for (auto [s, t] : held_out_pairs()) {
    error += mean_index_error(trained.model.register_cloud(family[s], family[t]), family[t].points);
    baseline += mean_index_error(family[s].points, family[t].points);
  }
  error /= kHeldOutClouds;
  baseline /= kHeldOutClouds;
  std::ostringstream d;
  d << "mean_error=" << fmt(error) << " identity_baseline=" << fmt(baseline)
    << " ratio=" << fmt(baseline / error) << " epochs=" << trained.epochs
    << " train_seconds=" << fmt(trained.seconds, 5) << " (thresholds: error<=0.05, ratio>=5, epochs<=300, "
    << "seconds<=" << kTimeBudgetSeconds << ")";
  const bool ok = error <= 0.05 && error * 5 <= baseline && trained.epochs <= 300 &&
                  trained.seconds <= kTimeBudgetSeconds;
  return {ok, d.str()};
}

Outcome refinement(const std::vector<PointCloud>& family, const Model& model) {
  std::vector<double> reductions;
  std::size_t improved = 0, worse = 0;
  for (auto [s, t] : held_out_pairs()) {
    const double before = chamfer_distance(family[t].points, model.register_cloud(family[s], family[t]));
    const RefineResult r = refine(model, family[s], family[t], RefineConfig{});
    const double after = chamfer_distance(family[t].points, r.points);
    improved += after < before;
    worse += after > before;
    reductions.push_back(1 - after / before);
    std::cerr << "  pair " << s << "->" << t << " chamfer " << fmt(before) << " -> " << fmt(after) << "\n";
  }
  std::sort(reductions.begin(), reductions.end());
  const double median = (reductions[9] + reductions[10]) / 2;
  std::ostringstream d;
  d << "improved=" << improved << "/" << reductions.size() << " worse=" << worse
    << " median_reduction=" << fmt(median) << " (thresholds: improved>=95%, median>=0.2, worse=0)";
  const bool ok = improved * 100 >= 95 * reductions.size() && median >= 0.2 && worse == 0;
  return {ok, d.str()};
}

Outcome stability(const std::vector<PointCloud>& family, const Model& surface, const Model& classic) {
  const StabilityReport r = attention_stability(surface, classic, family[kTrainClouds], DriftOptions{});
  std::ostringstream d;
  d << "trials=" << r.surface.size() << " surface_mean=" << fmt(r.surface_mean)
    << " classic_mean=" << fmt(r.classic_mean) << " p=" << fmt(r.p_value)
    << " (thresholds: surface<classic, p<0.05)";
  return {r.surface_mean < r.classic_mean && r.p_value < 0.05, d.str()};
}

// --- A7 -------------------------------------------------------------------

struct CliRun {
  int code = 0;
  std::string out, err;
};

CliRun cli_run(std::vector<std::string> args) {
  args.insert(args.begin(), "surfreg");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string metrics_without_wall(const fs::path& path) {
  std::ifstream in(path);
  std::ostringstream s;
  for (const auto& r : read_metrics(in)) s << r.epoch << ' ' << r.step << ' ' << fmt(r.loss, 17) << '\n';
  return s.str();
}

// Output paths differ between the two runs by construction.
std::string without_root(std::string text, const std::string& root) {
  for (auto at = text.find(root); at != std::string::npos; at = text.find(root, at)) {
    text.replace(at, root.size(), "@");
  }
  return text;
}

// Everything in a directory tree, keyed by relative path.
std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  if (!fs::exists(root)) return files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), root).string();
    files[rel] = without_root(
        e.path().filename() == "metrics.tsv" ? metrics_without_wall(e.path()) : slurp(e.path()),
        root.string());
  }
  return files;
}

Outcome determinism(const fs::path& work) {
  const fs::path dir = work / "determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::vector<std::string> failures;

  // Library-level training in every regime.
  SynthFamilyConfig fc;
  fc.shape = BaseShape::kSphere;
  fc.points = 60;
  fc.size = 6;
  const auto family = generate_family(fc);
  ModelConfig tiny;
  tiny.num_probes = 8;
  tiny.latent_dim = 16;
  tiny.encoder_layers = 1;
  tiny.decoder_layers = 1;
  tiny.heads = 2;
  tiny.embedder_widths = {8, 16};
  tiny.ff_hidden = 32;
  tiny.final_mlp_widths = {8, 3};
  for (LossRegime regime : {LossRegime::kSupervised, LossRegime::kSparse, LossRegime::kUnsupervised}) {
    TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 2;
    tc.learning_rate = 1e-3;
    tc.regime = regime;
    tc.seed = 5;
    auto a = train(family, tiny, tc), b = train(family, tiny, tc);
    bool same = a.metrics.size() == b.metrics.size();
    for (std::size_t i = 0; same && i < a.metrics.size(); ++i) {
      same = a.metrics[i].epoch == b.metrics[i].epoch && a.metrics[i].step == b.metrics[i].step &&
             a.metrics[i].loss == b.metrics[i].loss;
    }
    save_checkpoint(a.params, tiny, (dir / "a.ckpt").string());
    save_checkpoint(b.params, tiny, (dir / "b.ckpt").string());
    if (!same || slurp(dir / "a.ckpt") != slurp(dir / "b.ckpt")) {
      failures.push_back(std::string("train/") + to_string(regime));
    }
  }

  // Checkpoint round trip of the full-size model.
  {
    ModelConfig mc;
    mc.init_seed = 3;
    save_checkpoint(ModelParams::init(mc), mc, (dir / "full.ckpt").string());
    auto ck = load_checkpoint((dir / "full.ckpt").string());
    save_checkpoint(ck.params, ck.config, (dir / "full2.ckpt").string(), ck.header);
    if (slurp(dir / "full.ckpt") != slurp(dir / "full2.ckpt")) failures.push_back("checkpoint");
  }

  // Every CLI command, twice, into separate directories.
  std::ofstream(dir / "family.cfg") << "synth.shape = sphere\nsynth.points = 60\nsynth.size = 4\n";
  std::ofstream(dir / "run.cfg") << "model.num_probes = 8\nmodel.latent_dim = 16\nmodel.encoder_layers = 1\n"
                                 << "model.decoder_layers = 1\nmodel.heads = 2\nmodel.embedder_widths = 8,16\n"
                                 << "model.ff_hidden = 32\nmodel.final_mlp_widths = 8,3\n"
                                 << "train.epochs = 2\ntrain.batch_size = 2\ntrain.learning_rate = 0.001\n"
                                 << "synth.shape = sphere\nsynth.points = 60\nsynth.size = 4\n";
  std::ofstream(dir / "region.txt") << "0\n1\n2\n5\n";
  auto p = [&](const std::string& name) { return (dir / name).string(); };
  const std::string data = p("run1/data");
  const std::string ckpt = p("run1/train/model.ckpt");
  const std::string a = data + "/member_0000.xyz", b = data + "/member_0001.xyz",
                    c = data + "/member_0002.xyz";
  std::vector<std::pair<std::string, std::vector<std::string>>> commands{
      {"train", {"train", "--config", p("run.cfg"), "--seed", "3", "--override", "paths.output_dir=@/train"}},
      {"gen-data", {"gen-data", "--family-config", p("family.cfg"), "--out", "@/data", "--seed", "9"}},
      {"register", {"register", "--ckpt", ckpt, "--source", a, "--target", b, "--out", "@/reg.xyz"}},
      {"register-refine",
       {"register", "--ckpt", ckpt, "--source", a, "--target", b, "--out", "@/regr.xyz", "--refine",
        "--steps", "3"}},
      {"register-chunk",
       {"register", "--ckpt", ckpt, "--source", a, "--target", b, "--out", "@/regc.xyz", "--chunk", "16"}},
      {"match", {"match", "--ckpt", ckpt, "--a", a, "--b", b, "--out", "@/match.corr"}},
      {"eval", {"eval", "--pred", "@/reg.xyz", "--gt", "@/match.corr", "--target", b, "--out", "@/report.tsv"}},
      {"refine",
       {"refine", "--ckpt", ckpt, "--source", a, "--target", b, "--steps", "4", "--out", "@/ref.xyz",
        "--trajectory", "@/traj.tsv"}},
      {"interpolate",
       {"interpolate", "--ckpt", ckpt, "--source", a, "--t1", b, "--t2", c, "--steps", "3",
        "--freeze-region", p("region.txt"), "--freeze-count", "2", "--out", "@/interp"}},
      {"attn-export", {"attn-export", "--ckpt", ckpt, "--target", b, "--layer", "first", "--out", "@/fields"}},
      {"attn-stability",
       {"attn-stability", "--ckpt-surface", ckpt, "--ckpt-classic", ckpt, "--cloud", b, "--trials", "3",
        "--out", "@/stab.tsv"}},
  };
  std::vector<std::string> stdout_of[2];
  for (int run = 0; run < 2; ++run) {
    const std::string root = p("run" + std::to_string(run + 1));
    for (auto [name, args] : commands) {
      for (auto& arg : args) {
        const auto at = arg.find('@');
        if (at != std::string::npos) arg.replace(at, 1, root);
      }
      const CliRun r = cli_run(args);
      if (r.code != 0) failures.push_back(name + " exited " + std::to_string(r.code) + ": " + r.err);
      stdout_of[run].push_back(without_root(r.out, root));
    }
  }
  for (std::size_t i = 0; i < commands.size(); ++i) {
    if (stdout_of[0][i] != stdout_of[1][i]) failures.push_back(commands[i].first + " stdout");
  }
  const auto t1 = tree(p("run1")), t2 = tree(p("run2"));
  std::size_t compared = 0;
  for (const auto& [rel, bytes] : t1) {
    ++compared;
    auto it = t2.find(rel);
    if (it == t2.end() || it->second != bytes) failures.push_back("artifact " + rel);
  }
  if (t1.size() != t2.size()) failures.push_back("artifact count");

  std::ostringstream d;
  d << "training_regimes=3 checkpoint_roundtrip=1 cli_commands=" << commands.size()
    << " artifacts_compared=" << compared << " mismatches=" << failures.size();
  for (const auto& f : failures) d << " [" << f << "]";
  return {failures.empty(), d.str()};
}

// --- A8 -------------------------------------------------------------------

Outcome scalability() {
  SynthFamilyConfig big;
  big.points = kLargeTarget;
  big.size = 1;
  big.seed = 11;
  const PointCloud target = generate_family(big)[0];
  SynthFamilyConfig small;
  small.points = 1000;
  small.size = 1;
  small.seed = 12;
  const PointCloud source = generate_family(small)[0];
  const Model model{ModelConfig{}};

  const bool reset = reset_peak_rss();
  const double before = current_rss_mib();
  const auto t0 = Clock::now();
  const auto out = model.register_cloud(source, target, {.chunk = kChunk});
  const double seconds = seconds_since(t0);
  const double peak = peak_rss_mib() - before;
  bool finite = out.size() == source.size();
  for (const auto& p : out) finite &= std::isfinite(p[0]) && std::isfinite(p[1]) && std::isfinite(p[2]);

  // 32-bit agreement is informational; the 1e-6 criterion runs in 64-bit.
  SynthFamilyConfig pair;
  pair.points = 2000;
  pair.size = 2;
  pair.seed = 5;
  const auto clouds = generate_family(pair);
  const auto full = model.register_cloud(clouds[0], clouds[1]);
  const auto chunked = model.register_cloud(clouds[0], clouds[1], {.chunk = 128});
  double diff32 = 0;
  for (std::size_t i = 0; i < full.size(); ++i) {
    for (int k = 0; k < 3; ++k) diff32 = std::max(diff32, std::abs(full[i][k] - chunked[i][k]));
  }
  const Outcome exact = acceptance::chunked_equivalence();

  std::ostringstream d;
  d << "target=" << kLargeTarget << " source=" << source.size() << " chunk=" << kChunk
    << " seconds=" << fmt(seconds) << " peak_extra_mib=" << fmt(peak) << (reset ? "" : " (peak not reset)")
    << " envelope_mib=" << kEnvelopeMiB << " finite=" << finite << "; " << exact.detail
    << " max_abs_diff_32bit=" << diff32;
  return {reset && finite && peak <= kEnvelopeMiB && exact.pass, d.str()};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Runs the acceptance criteria and prints one line per criterion"};
  std::string work = (fs::temp_directory_path() / "surfreg_acceptance").string();
  std::string cache;
  std::vector<std::string> only;
  app.add_option("--work-dir", work, "Scratch directory");
  app.add_option("--reuse", cache, "Load trained models from, or save them to, this directory");
  app.add_option("--only", only, "Criteria to run, e.g. A4 A6")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);
  const std::optional<fs::path> cache_dir =
      cache.empty() ? std::nullopt : std::optional<fs::path>(fs::path(cache));

  auto wanted = [&](const std::string& id) {
    return only.empty() || std::find(only.begin(), only.end(), id) != only.end();
  };
  std::map<std::string, Outcome> results;
  auto run = [&](const std::string& id, const std::function<Outcome()>& check) {
    if (!wanted(id)) return;
    std::cerr << id << " running\n";
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    o.detail += " wall=" + fmt(seconds_since(t0), 5) + "s";
    std::cerr << id << (o.pass ? " PASS " : " FAIL ") << o.detail << "\n";
    results[id] = o;
  };

  // Memory-sensitive and fast checks first, then the long experiments.
  run("A8", scalability);
  run("A4", acceptance::gradient_checks);
  run("A5", acceptance::invariance_suite);
  run("A6", acceptance::oracle_equivalence);
  run("A7", [&] { return determinism(work); });

  if (wanted("A1") || wanted("A2") || wanted("A3")) {
    const auto family = desk_family();
    std::optional<Trained> surface;
    auto surface_model = [&]() -> const Trained& {
      if (!surface) surface = train_variant(family, AttentionVariant::kSurface, cache_dir);
      return *surface;
    };
    run("A1", [&] { return desk_registration(family, surface_model()); });
    run("A2", [&] { return refinement(family, surface_model().model); });
    run("A3", [&] {
      const Trained classic = train_variant(family, AttentionVariant::kClassic, cache_dir);
      return stability(family, surface_model().model, classic.model);
    });
  }

  bool all = true;
  for (const auto& [id, o] : results) {
    std::cout << id << (o.pass ? " PASS " : " FAIL ") << o.detail << "\n";
    all &= o.pass;
  }
  return all ? 0 : 1;
}
