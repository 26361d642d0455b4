#include "surfreg_cli/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include "surfreg/config.hpp"
#include "surfreg/error.hpp"
#include "surfreg/evaluate.hpp"
#include "surfreg/io.hpp"
#include "surfreg/model.hpp"
#include "surfreg/refine.hpp"
#include "surfreg/synth.hpp"
#include "surfreg/training.hpp"

namespace surfreg::cli {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError(path + ": cannot open file for writing");
  return out;
}

Model load_model(const std::string& path) {
  Checkpoint ckpt = load_checkpoint(path);
  return Model(ckpt.config, std::move(ckpt.params));
}

bool is_cloud_path(const std::string& path) {
  try {
    format_from_path(path);
    return true;
  } catch (const FormatError&) {
    return false;
  }
}

// One line per index; blank lines and "#" comments are skipped.
std::vector<std::size_t> load_index_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path + ": cannot open file");
  std::vector<std::size_t> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream fields(line);
    std::string token;
    if (!(fields >> token) || token[0] == '#') continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stoull(token, &used));
      if (used != token.size()) throw std::invalid_argument(token);
    } catch (const std::logic_error&) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": invalid index '" + token + "'");
    }
  }
  if (out.empty()) throw FormatError(path + ": no indices");
  return out;
}

struct Options {
  // train
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  // shared
  std::string ckpt, source, target, out;
  bool refine = false;
  std::size_t steps = 100;
  double lr = 5e-3;
  std::size_t chunk = 0;
  // match
  std::string a, b;
  // eval
  std::string pred, gt;
  // refine
  std::string trajectory;
  // interpolate
  std::string t1, t2, freeze_region;
  std::size_t freeze_count = 4;
  // attn-stability
  std::string ckpt_surface, ckpt_classic, cloud, strategy = "density-biased";
  std::size_t trials = 20;
  double fraction = 0.5;
  // gen-data
  std::string family_config;
  // attn-export
  std::string layer = "first";
};

int cmd_train(const Options& o, std::ostream& out) {
  KeyValues kv = load_key_values(o.config);
  for (const auto& assignment : o.overrides) apply_override(kv, assignment);
  if (o.seed) kv["seed"] = std::to_string(*o.seed);
  RunConfig cfg = RunConfig::from_key_values(kv);

  std::vector<PointCloud> dataset;
  if (cfg.data_dir.empty()) {
    dataset = generate_family(cfg.synth);
  } else {
    for (const auto& pc : load_cloud_folder(cfg.data_dir)) dataset.push_back(normalize(pc));
  }

  fs::create_directories(cfg.output_dir);
  const fs::path dir(cfg.output_dir);
  TrainConfig train_cfg = cfg.train;
  if (train_cfg.checkpoint_every > 0 && train_cfg.checkpoint_dir.empty()) {
    train_cfg.checkpoint_dir = (dir / "checkpoints").string();
  }
  {
    auto dump = open_output((dir / "config.txt").string());
    write_key_values(dump, cfg.to_key_values());
  }
  auto metrics = open_output((dir / "metrics.tsv").string());
  metrics << "# epoch\tstep\tloss\twall_seconds\n";
  TrainResult result = train(dataset, cfg.model, train_cfg, [&](const MetricsRecord& r, const Model&) {
    std::ostringstream line;
    write_metrics(line, {r});
    const std::string text = line.str();
    metrics << text.substr(text.find('\n') + 1) << std::flush;
  });
  const std::string ckpt = (dir / "model.ckpt").string();
  KeyValues extra = train_cfg.to_key_values();
  extra["train.completed_epochs"] = std::to_string(result.metrics.size());
  save_checkpoint(result.params, cfg.model, ckpt, extra);

  const double loss = result.metrics.empty() ? 0.0 : result.metrics.back().loss;
  const std::size_t steps = result.metrics.empty() ? 0 : result.metrics.back().step;
  out << "trained epochs=" << result.metrics.size() << " steps=" << steps
      << " final_loss=" << fmt(loss) << " checkpoint=" << ckpt << "\n";
  return kOk;
}

int cmd_register(const Options& o, std::ostream& out) {
  const Model model = load_model(o.ckpt);
  const PointCloud source = normalize(load_cloud(o.source));
  const PointCloud target = normalize(load_cloud(o.target));
  PointCloud registered;
  registered.labels = source.labels;
  if (o.refine) {
    RefineConfig rc;
    rc.steps = o.steps;
    rc.learning_rate = o.lr;
    registered.points = refine(model, source, target, rc).points;
  } else {
    InferenceOptions opts;
    opts.chunk = o.chunk;
    registered.points = model.register_cloud(source, target, opts);
  }
  const double ch = chamfer_distance(target.points, registered.points);
  // Back to the target's original frame.
  registered.norm = target.norm;
  save_cloud(denormalize(registered), o.out);
  out << "registered points=" << registered.size() << " chamfer=" << fmt(ch) << "\n";
  return kOk;
}

int cmd_match(const Options& o, std::ostream& out) {
  const Model model = load_model(o.ckpt);
  const PointCloud a = normalize(load_cloud(o.a));
  const PointCloud b = normalize(load_cloud(o.b));
  RefineConfig rc;
  rc.steps = o.steps;
  rc.learning_rate = o.lr;
  const MatchResult m = match(model, a, b, o.refine, rc);
  save_correspondence(m.map, o.out);
  out << "matched points=" << m.map.size() << " direction=" << (m.reversed ? "ba" : "ab")
      << " chamfer_ab=" << fmt(m.chamfer_ab) << " chamfer_ba=" << fmt(m.chamfer_ba) << "\n";
  return kOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const PointCloud target = load_cloud(o.target);
  const CorrespondenceMap gt = load_correspondence(o.gt);
  EvalReport report;
  if (is_cloud_path(o.pred)) {
    const PointCloud registered = load_cloud(o.pred);
    report = evaluate(registered.points, gt, target);
  } else {
    report = evaluate(load_correspondence(o.pred), gt, target);
  }
  auto file = open_output(o.out);
  write_report(file, report);
  out << "mean_geodesic=" << fmt(report.mean_geodesic)
      << " mean_geodesic_relative=" << fmt(report.mean_geodesic_relative)
      << " chamfer=" << fmt(report.chamfer) << " max_euclidean=" << fmt(report.max_euclidean)
      << " mean_euclidean=" << fmt(report.mean_euclidean)
      << (report.euclidean_fallback ? " warning=euclidean_fallback" : "") << "\n";
  return kOk;
}

int cmd_refine(const Options& o, std::ostream& out) {
  const Model model = load_model(o.ckpt);
  const PointCloud source = normalize(load_cloud(o.source));
  const PointCloud target = normalize(load_cloud(o.target));
  RefineConfig rc;
  rc.steps = o.steps;
  rc.learning_rate = o.lr;
  const RefineResult r = refine(model, source, target, rc);
  PointCloud refined;
  refined.points = r.points;
  refined.labels = source.labels;
  refined.norm = target.norm;
  save_cloud(denormalize(refined), o.out);
  if (!o.trajectory.empty()) {
    auto file = open_output(o.trajectory);
    file << "# step\tchamfer\n";
    char buf[64];
    for (std::size_t t = 0; t < r.trajectory.size(); ++t) {
      std::snprintf(buf, sizeof buf, "%zu\t%.9g\n", t, r.trajectory[t]);
      file << buf;
    }
  }
  out << "refined steps=" << rc.steps << " best_step=" << r.best_step
      << " initial_chamfer=" << fmt(r.trajectory.front())
      << " best_chamfer=" << fmt(r.trajectory[r.best_step])
      << " last_chamfer=" << fmt(r.trajectory.back()) << "\n";
  return kOk;
}

int cmd_interpolate(const Options& o, std::ostream& out) {
  if (o.steps < 2) throw ConfigError("--steps must be at least 2");
  const Model model = load_model(o.ckpt);
  const PointCloud source = normalize(load_cloud(o.source));
  const LatentState la = model.encode(normalize(load_cloud(o.t1)));
  const LatentState lb = model.encode(normalize(load_cloud(o.t2)));
  std::vector<std::size_t> frozen;
  if (!o.freeze_region.empty()) {
    const auto region = load_index_list(o.freeze_region);
    const auto ranking = probes_by_region(model, source, la, region);
    frozen.assign(ranking.begin(),
                  ranking.begin() + static_cast<std::ptrdiff_t>(std::min(o.freeze_count, ranking.size())));
  }
  fs::create_directories(o.out);
  for (std::size_t i = 0; i < o.steps; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(o.steps - 1);
    PointCloud frame;
    frame.points = model.decode(source, interpolate_latents(la, lb, t, frozen));
    frame.labels = source.labels;
    char name[32];
    std::snprintf(name, sizeof name, "frame_%03zu.xyz", i);
    save_cloud(frame, (fs::path(o.out) / name).string());
  }
  out << "interpolated frames=" << o.steps << " frozen_probes=" << frozen.size() << "\n";
  return kOk;
}

int cmd_attn_stability(const Options& o, std::ostream& out) {
  const Model surface = load_model(o.ckpt_surface);
  const Model classic = load_model(o.ckpt_classic);
  const PointCloud cloud = normalize(load_cloud(o.cloud));
  DriftOptions d;
  d.strategy = parse_sampling_strategy(o.strategy);
  d.trials = o.trials;
  d.fraction = o.fraction;
  d.seed = o.seed.value_or(0);
  const StabilityReport r = attention_stability(surface, classic, cloud, d);
  if (!o.out.empty()) {
    auto file = open_output(o.out);
    write_stability(file, r);
  }
  out << "surface_mean=" << fmt(r.surface_mean) << " classic_mean=" << fmt(r.classic_mean)
      << " mean_difference=" << fmt(r.mean_difference) << " p_value=" << fmt(r.p_value) << "\n";
  return kOk;
}

int cmd_gen_data(const Options& o, std::ostream& out) {
  KeyValues kv = load_key_values(o.family_config);
  if (o.seed) kv["synth.seed"] = std::to_string(*o.seed);
  for (const auto& [key, value] : kv) {
    if (key.rfind("synth.", 0) != 0) throw ConfigError("unknown family key '" + key + "'");
  }
  SynthFamilyConfig cfg;
  cfg.apply(kv);
  const auto family = generate_family(cfg);
  fs::create_directories(o.out);
  for (std::size_t i = 0; i < family.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "member_%04zu.xyz", i);
    save_cloud(family[i], (fs::path(o.out) / name).string());
  }
  out << "generated clouds=" << family.size() << " points=" << cfg.points << "\n";
  return kOk;
}

int cmd_attn_export(const Options& o, std::ostream& out) {
  const Model model = load_model(o.ckpt);
  const PointCloud target = normalize(load_cloud(o.target));
  if (o.layer != "first" && o.layer != "last") throw ConfigError("--layer must be first or last");
  AttentionTrace trace;
  {
    NoGradGuard no_grad;
    model.encode(to_tensor(target), model.areas(target.points), &trace);
  }
  const auto& heads = o.layer == "first" ? trace.encoder_cross.front() : trace.encoder_cross.back();
  const std::size_t k = heads.front().rows(), n = heads.front().cols();
  fs::create_directories(o.out);
  char buf[128];
  for (std::size_t p = 0; p < k; ++p) {
    std::snprintf(buf, sizeof buf, "probe_%02zu.field", p);
    auto file = open_output((fs::path(o.out) / buf).string());
    file << "# x y z attention\n";
    for (std::size_t j = 0; j < n; ++j) {
      double w = 0;
      for (const Tensor& h : heads) w += h.at(p, j);
      w /= static_cast<double>(heads.size());
      const Point3& x = target.points[j];
      std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g %.9g\n", x[0], x[1], x[2], w);
      file << buf;
    }
  }
  out << "exported probes=" << k << " points=" << n << " layer=" << o.layer << "\n";
  return kOk;
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Surface-attention point cloud registration", "surfreg"};
  app.require_subcommand(1);
  Options o;

  auto* train = app.add_subcommand("train", "Train a model from a run configuration");
  train->add_option("--config", o.config, "key = value configuration file")->required();
  train->add_option("--override", o.overrides, "key=value, applied after the file");
  train->add_option("--seed", o.seed, "Seed for initialization, sampling and data");

  auto* reg = app.add_subcommand("register", "Deform a source cloud onto a target");
  reg->add_option("--ckpt", o.ckpt)->required();
  reg->add_option("--source", o.source)->required();
  reg->add_option("--target", o.target)->required();
  reg->add_option("--out", o.out)->required();
  reg->add_flag("--refine", o.refine, "Refine the latents before decoding");
  reg->add_option("--steps", o.steps, "Refinement steps");
  reg->add_option("--lr", o.lr, "Refinement learning rate");
  reg->add_option("--chunk", o.chunk, "Graph-free chunked attention with this block size");

  auto* mat = app.add_subcommand("match", "Point correspondence from a to b");
  mat->add_option("--ckpt", o.ckpt)->required();
  mat->add_option("--a", o.a)->required();
  mat->add_option("--b", o.b)->required();
  mat->add_option("--out", o.out)->required();
  mat->add_flag("--refine", o.refine);
  mat->add_option("--steps", o.steps);
  mat->add_option("--lr", o.lr);

  auto* ev = app.add_subcommand("eval", "Evaluate a registration or correspondence");
  ev->add_option("--pred", o.pred, "Registered cloud or correspondence file")->required();
  ev->add_option("--gt", o.gt, "Ground-truth correspondence file")->required();
  ev->add_option("--target", o.target)->required();
  ev->add_option("--out", o.out)->required();

  auto* ref = app.add_subcommand("refine", "Latent refinement with a trajectory dump");
  ref->add_option("--ckpt", o.ckpt)->required();
  ref->add_option("--source", o.source)->required();
  ref->add_option("--target", o.target)->required();
  ref->add_option("--steps", o.steps);
  ref->add_option("--lr", o.lr);
  ref->add_option("--out", o.out)->required();
  ref->add_option("--trajectory", o.trajectory, "Per-step Chamfer values");

  auto* interp = app.add_subcommand("interpolate", "Decode a source along a latent path");
  interp->add_option("--ckpt", o.ckpt)->required();
  interp->add_option("--source", o.source)->required();
  interp->add_option("--t1", o.t1)->required();
  interp->add_option("--t2", o.t2)->required();
  interp->add_option("--steps", o.steps)->required();
  interp->add_option("--freeze-region", o.freeze_region, "Source point indices, one per line");
  interp->add_option("--freeze-count", o.freeze_count, "Probes frozen for the region");
  interp->add_option("--out", o.out)->required();

  auto* stab = app.add_subcommand("attn-stability", "Attention drift under resampling");
  stab->add_option("--ckpt-surface", o.ckpt_surface)->required();
  stab->add_option("--ckpt-classic", o.ckpt_classic)->required();
  stab->add_option("--cloud", o.cloud)->required();
  stab->add_option("--trials", o.trials);
  stab->add_option("--strategy", o.strategy);
  stab->add_option("--fraction", o.fraction);
  stab->add_option("--seed", o.seed);
  stab->add_option("--out", o.out);

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic family");
  gen->add_option("--family-config", o.family_config)->required();
  gen->add_option("--out", o.out)->required();
  gen->add_option("--seed", o.seed);

  auto* exp = app.add_subcommand("attn-export", "Per-probe encoder attention fields");
  exp->add_option("--ckpt", o.ckpt)->required();
  exp->add_option("--target", o.target)->required();
  exp->add_option("--layer", o.layer);
  exp->add_option("--out", o.out)->required();

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << one_line(e.what()) << "\n";
    return kUsage;
  }

  try {
    if (train->parsed()) return cmd_train(o, out);
    if (reg->parsed()) return cmd_register(o, out);
    if (mat->parsed()) return cmd_match(o, out);
    if (ev->parsed()) return cmd_eval(o, out);
    if (ref->parsed()) return cmd_refine(o, out);
    if (interp->parsed()) return cmd_interpolate(o, out);
    if (stab->parsed()) return cmd_attn_stability(o, out);
    if (gen->parsed()) return cmd_gen_data(o, out);
    if (exp->parsed()) return cmd_attn_export(o, out);
  } catch (const ConfigError& e) {
    err << "error: config: " << one_line(e.what()) << "\n";
    return kUsage;
  } catch (const NumericError& e) {
    err << "error: numeric: " << one_line(e.what()) << "\n";
    return kNumericError;
  } catch (const VersionError& e) {
    err << "error: version: " << one_line(e.what()) << "\n";
    return kVersionError;
  } catch (const PrecisionError& e) {
    err << "error: version: " << one_line(e.what()) << "\n";
    return kVersionError;
  } catch (const Error& e) {
    err << "error: data: " << one_line(e.what()) << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: data: " << one_line(e.what()) << "\n";
    return kDataError;
  }
  return kUsage;
}

}  // namespace surfreg::cli
