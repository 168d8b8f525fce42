// poser: command-line front end.
//
//   poser synth      procedural clip (+ observations) to a sequence file
//   poser tpose      synthetic T-pose capture: point cloud and 17 keypoints
//   poser fit-shape  shape from a T-pose skeleton, optionally with a cloud
//   poser train      staged network training
//   poser eval       held-out metrics under one or all noise modes
//   poser infer      streaming inference over a sequence with observations
//   poser bench      per-frame inference throughput
//   poser rerun      repeat a command from its manifest and compare metrics
//
// Exit codes: 0 success, 1 runtime failure, 2 usage.
// POSER_SEED replaces the default seed of every command (an explicit flag
// still wins); POSER_THREADS must be a positive integer.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "svi/errors.hpp"
#include "svi/io.hpp"
#include "svi/rng.hpp"
#include "svi/shape_fit.hpp"
#include "svi/text_io.hpp"
#include "svi/train_eval.hpp"

namespace {

using namespace svi;
namespace fs = std::filesystem;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Env {
  std::optional<std::uint64_t> seed;
  int threads = 1;
};

Env read_env() {
  Env env;
  if (const char* s = std::getenv("POSER_SEED"); s && *s) {
    try {
      env.seed = text::parse_u64(s);
    } catch (const std::exception&) {
      throw UsageError(std::string("POSER_SEED is not an unsigned integer: ") + s);
    }
  }
  if (const char* t = std::getenv("POSER_THREADS"); t && *t) {
    long long n = 0;
    try {
      n = text::parse_int(t);
    } catch (const std::exception&) {
      n = 0;
    }
    if (n < 1) throw UsageError(std::string("POSER_THREADS must be a positive integer: ") + t);
    env.threads = static_cast<int>(n);
  }
  return env;
}

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) throw UsageError(std::string(what) + " not found: " + path);
}

stereo::StereoCalib load_calib(const std::string& path) {
  if (path.empty()) return {};
  require_file(path, "calibration");
  return stereo::StereoCalib::load(path);
}

body::BodyShape shape_from_flags(const std::string& beta_csv, const std::string& shape_path) {
  if (!beta_csv.empty() && !shape_path.empty()) throw UsageError("give --beta or --shape, not both");
  if (!shape_path.empty()) {
    require_file(shape_path, "shape record");
    return io::ShapeRecord::parse(text::read_file(shape_path)).beta;
  }
  body::BodyShape b = body::BodyShape::Zero();
  if (beta_csv.empty()) return b;
  std::string s = beta_csv;
  for (char& c : s) {
    if (c == ',') c = ' ';
  }
  const auto tok = text::split_ws(s);
  if (tok.size() != body::kShapeDim) throw UsageError("--beta needs 10 comma-separated values");
  try {
    for (int i = 0; i < body::kShapeDim; ++i) b[i] = text::parse_double(tok[static_cast<std::size_t>(i)]);
  } catch (const std::exception& e) {
    throw UsageError(std::string("--beta: ") + e.what());
  }
  return b;
}

std::string config_hash(std::string_view serialized) { return text::hex64(text::fnv1a(serialized)); }

void add_checkpoint_hashes(io::RunManifest& m, const std::string& dir) {
  for (auto k : nets::kAllNets) {
    const auto path = (fs::path(dir) / (std::string(nets::net_name(k)) + ".ckpt")).string();
    if (fs::is_regular_file(path)) {
      m.checkpoints.emplace_back(std::string(nets::net_name(k)), text::hex64(text::fnv1a(text::read_file(path))));
    }
  }
}

void add_metrics(io::RunManifest& m, std::string_view mode, const metrics::MetricReport& r) {
  const std::string report = r.serialize();  // split_lines views into it
  for (const auto line : text::split_lines(report)) {
    const auto tok = text::split_ws(line);
    if (tok.size() == 2) m.outputs.emplace_back("metric." + std::string(mode) + "." + std::string(tok[0]), std::string(tok[1]));
  }
}

// What a command leaves behind for the caller.
struct Result {
  io::RunManifest manifest;
  std::string manifest_path;  // empty: none written
};

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string kind, beta, shape, noise = "ideal", calib, out;
  double duration = 10.0;
  std::optional<std::uint64_t> seed;
};

void cmd_synth(const SynthArgs& a, const Env& env) {
  const auto kind = synth::parse_kind(a.kind);
  if (!(a.duration > 0.0)) throw UsageError("--duration must be positive");
  const auto beta = shape_from_flags(a.beta, a.shape);
  const auto calib = load_calib(a.calib);
  const std::uint64_t seed = a.seed.value_or(env.seed.value_or(1));

  const auto motion = synth::generate_motion(kind, a.duration, beta, seed);
  auto file = io::SequenceFile::from_motion(motion);
  if (a.noise != "none") {
    const auto clip = train::observe(motion, train::parse_noise(a.noise), mix_seed(seed, 7), calib);
    file.stereo = clip.stereo;
    file.imu = clip.imu;
  }
  file.save(a.out);

  std::size_t in_contact = 0;
  for (const auto& c : motion.contacts) in_contact += static_cast<std::size_t>(c[0] + c[1]);
  const double ratio = motion.size() ? static_cast<double>(in_contact) / (2.0 * static_cast<double>(motion.size())) : 0.0;
  std::printf("frames %zu\ncontact_ratio %.4f\n", motion.size(), ratio);
}

struct TposeArgs {
  std::string beta, shape, cloud, skeleton;
  std::size_t points = 20000;
  double sigma = 0.0;
  std::optional<std::uint64_t> seed;
};

void cmd_tpose(const TposeArgs& a, const Env& env) {
  const auto beta = shape_from_flags(a.beta, a.shape);
  synth::NoiseSpec noise;
  noise.keypoint_sigma_world = a.sigma;
  noise.seed = a.seed.value_or(env.seed.value_or(1));
  const auto cap = synth::synth_tpose_cloud(beta, noise, a.points);
  if (!a.cloud.empty()) shape::save_cloud(a.cloud, cap.cloud);
  shape::save_cloud(a.skeleton, cap.skeleton);
  std::printf("points %zu\nkeypoints %d\n", cap.cloud.size(), body::kNumCoco);
}

struct FitArgs {
  std::string skeleton, cloud, out;
  int iterations = 500;
};

void cmd_fit_shape(const FitArgs& a) {
  require_file(a.skeleton, "skeleton");
  if (!a.cloud.empty()) require_file(a.cloud, "point cloud");
  if (a.iterations < 1) throw UsageError("--iterations must be at least 1");
  shape::FitProblem problem;
  const auto kp = shape::load_cloud(a.skeleton);
  if (kp.size() != body::kNumCoco) {
    throw UsageError("skeleton file needs 17 keypoints, found " + std::to_string(kp.size()));
  }
  std::copy(kp.begin(), kp.end(), problem.skeleton.begin());
  if (!a.cloud.empty()) problem.cloud = shape::load_cloud(a.cloud);
  // Without a cloud the Chamfer term has nothing to match.
  if (problem.cloud.empty()) problem.weights.cd = 0.0;
  shape::FitOptions options;
  options.iterations = a.iterations;

  const auto fit = shape::solve(problem, options);
  auto rec = io::ShapeRecord::make(fit.beta);
  rec.final_energy = fit.final_energy;
  rec.iterations = fit.iterations;
  rec.used_cloud = !problem.cloud.empty();
  const std::string s = rec.serialize();
  if (!a.out.empty()) text::write_file(a.out, s);
  std::fputs(s.c_str(), stdout);
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string ckpt, config, stage = "all", manifest;
  std::vector<std::pair<std::string, std::string>> overrides;  // key, value from flags
};

Result cmd_train(const TrainArgs& a, const Env& env, const std::vector<std::string>& argv) {
  std::string text;
  if (!a.config.empty()) {
    require_file(a.config, "config");
    text = svi::text::read_file(a.config) + "\n";
  }
  bool seed_given = text::parse_key_values(text).count("seed") > 0;
  for (const auto& [k, v] : a.overrides) seed_given = seed_given || k == "seed";
  if (env.seed && !seed_given) text += "seed = " + std::to_string(*env.seed) + "\n";
  for (const auto& [k, v] : a.overrides) text += k + " = " + v + "\n";
  auto cfg = train::TrainConfig::parse(text);

  std::vector<int> stages;
  if (a.stage == "all") {
    stages = {1, 2};
    if (!cfg.flags.no_refine) stages.push_back(3);
  } else if (a.stage == "1" || a.stage == "2" || a.stage == "3") {
    stages = {a.stage[0] - '0'};
  } else {
    throw UsageError("--stage must be 1, 2, 3 or all");
  }
  cfg.stage = stages.front();
  cfg.validate();

  const auto clips = train::training_clips(cfg);
  Result r;
  r.manifest.args = argv;
  for (int s : stages) {
    cfg.stage = s;
    const auto rep = train::train_stage(cfg, clips, a.ckpt);
    std::printf("stage %d steps %zu final_loss %s\n", s, rep.steps, text::format_double(rep.final_loss).c_str());
    r.manifest.outputs.emplace_back("metric.stage" + std::to_string(s) + ".final_loss",
                                    text::format_double(rep.final_loss));
  }
  r.manifest.config_hash = config_hash(cfg.serialize());
  r.manifest.seeds = {{"seed", cfg.seed}, {"data_seed", cfg.data_seed}};
  add_checkpoint_hashes(r.manifest, a.ckpt);
  r.manifest_path = a.manifest.empty() ? (fs::path(a.ckpt) / "train.manifest").string() : a.manifest;
  return r;
}

struct EvalArgs {
  std::string ckpt, noise = "ideal", out, manifest;
  std::vector<std::string> data;
  std::size_t clips = 8;
  double seconds = 12.0;
  std::optional<std::uint64_t> seed;
  std::uint64_t noise_seed = 77;
  bool no_refine = false;
  bool zero_shape = false;
};

Result cmd_eval(const EvalArgs& a, const Env& env, const std::vector<std::string>& argv) {
  for (const auto& d : a.data) require_file(d, "sequence");
  const auto cfg = train::load_run_config(a.ckpt);
  const bool use_refine = !a.no_refine && !cfg.flags.no_refine;
  const auto nets = train::load_nets(a.ckpt, use_refine);

  std::vector<train::NoiseMode> modes;
  if (a.noise == "all") {
    modes = {train::NoiseMode::kIdeal, train::NoiseMode::kSigma5, train::NoiseMode::kSigma15,
             train::NoiseMode::kVirtualStereo};
  } else {
    modes = {train::parse_noise(a.noise)};
  }

  const std::uint64_t seed = a.seed.value_or(env.seed.value_or(5000));
  std::vector<synth::MotionSequence> motions;
  if (a.data.empty()) {
    if (a.clips == 0) throw UsageError("--clips must be positive");
    motions = train::make_motions(a.clips, a.seconds, seed);
  } else {
    for (const auto& d : a.data) motions.push_back(io::SequenceFile::load(d).to_motion());
  }

  Result r;
  r.manifest.args = argv;
  std::string report;
  for (auto mode : modes) {
    train::EvalOptions o;
    o.mode = mode;
    o.noise_seed = a.noise_seed;
    o.use_refine = use_refine;
    o.zero_shape = a.zero_shape || cfg.flags.no_shape;
    const auto m = train::evaluate(nets, cfg.features(), motions, o);
    report += "[" + std::string(train::noise_name(mode)) + "]\n" + m.serialize();
    add_metrics(r.manifest, train::noise_name(mode), m);
  }
  std::fputs(report.c_str(), stdout);
  if (!a.out.empty()) text::write_file(a.out, report);

  r.manifest.config_hash = config_hash(cfg.serialize());
  r.manifest.seeds = {{"motion_seed", seed}, {"noise_seed", a.noise_seed}};
  add_checkpoint_hashes(r.manifest, a.ckpt);
  r.manifest_path = a.manifest.empty() ? (fs::path(a.ckpt) / "eval.manifest").string() : a.manifest;
  return r;
}

struct InferArgs {
  std::string ckpt, in, out, calib;
  bool no_refine = false;
  bool zero_shape = false;
};

void cmd_infer(const InferArgs& a) {
  require_file(a.in, "sequence");
  const auto seq = io::SequenceFile::load(a.in);
  if (!seq.has_observations()) throw UsageError(a.in + " carries no observation block; nothing to infer from");
  const auto calib = load_calib(a.calib);
  const auto cfg = train::load_run_config(a.ckpt);
  const bool use_refine = !a.no_refine && !cfg.flags.no_refine;
  const auto nets = train::load_nets(a.ckpt, use_refine);

  train::Clip clip;
  clip.gt = seq.to_motion();
  clip.stereo = seq.stereo;
  clip.imu = seq.imu;
  const auto pred = train::infer(nets, cfg.features(), clip, use_refine, a.zero_shape || cfg.flags.no_shape, calib);

  io::SequenceFile out;
  out.fps = seq.fps;
  out.beta = seq.beta;
  out.phi = pred.phi;
  out.T = pred.T;
  out.q = pred.q;
  out.save(a.out);
  std::printf("frames %zu\n", out.size());
}

struct BenchArgs {
  std::string ckpt, manifest;
  std::size_t frames = 2000, warmup = 100, hidden = 64, layers = 2;
  std::optional<std::uint64_t> seed;
};

Result cmd_bench(const BenchArgs& a, const Env& env, const std::vector<std::string>& argv) {
  if (a.frames == 0) throw UsageError("--frames must be positive");
  Result r;
  r.manifest.args = argv;
  train::TrainConfig cfg;
  nets::PoserNets nets;
  if (!a.ckpt.empty()) {
    cfg = train::load_run_config(a.ckpt);
    nets = train::load_nets(a.ckpt, !cfg.flags.no_refine);
    add_checkpoint_hashes(r.manifest, a.ckpt);
  } else {
    cfg.hidden = a.hidden;
    cfg.layers = a.layers;
    cfg.seed = a.seed.value_or(env.seed.value_or(1));
    cfg.validate();
    nets = nets::PoserNets::create(cfg.hidden, cfg.layers, cfg.features(), cfg.seed);
  }
  const auto res = train::bench_inference(nets, cfg.features(), a.frames, a.warmup, !cfg.flags.no_refine);
  std::printf("frames %zu\nseconds %.4f\nfps %.1f\n", res.frames, res.seconds, res.fps);
  std::printf("%s: %.1f frames/s %s 200 frames/s\n", res.fps > 200.0 ? "PASS" : "FAIL", res.fps,
              res.fps > 200.0 ? ">" : "<=");
  r.manifest.config_hash = config_hash(cfg.serialize());
  r.manifest.seeds = {{"seed", cfg.seed}};
  r.manifest.outputs.emplace_back("fps", text::format_double(res.fps));
  r.manifest.outputs.emplace_back("threads", std::to_string(env.threads));
  if (!a.manifest.empty()) r.manifest_path = a.manifest;
  return r;
}

// ---------------------------------------------------------------------------

int run(std::vector<std::string> argv, Result* result);

int cmd_rerun(const std::string& path, double tolerance) {
  require_file(path, "manifest");
  const auto before = io::RunManifest::parse(text::read_file(path));
  if (before.args.empty() || before.args[0] == "rerun") throw UsageError("manifest does not record a command");
  Result again;
  const int code = run(before.args, &again);
  if (code != 0) return code;
  double worst = 0.0;
  std::size_t compared = 0;
  for (const auto& [key, value] : before.outputs) {
    if (key.rfind("metric.", 0) != 0) continue;
    const auto it = std::find_if(again.manifest.outputs.begin(), again.manifest.outputs.end(),
                                 [&](const auto& kv) { return kv.first == key; });
    if (it == again.manifest.outputs.end()) {
      std::fprintf(stderr, "rerun: %s missing from the new run\n", key.c_str());
      return 1;
    }
    worst = std::max(worst, std::abs(text::parse_double(it->second) - text::parse_double(value)));
    ++compared;
  }
  const bool same_ckpt = before.checkpoints == again.manifest.checkpoints;
  std::printf("rerun compared %zu metrics, max deviation %.3g, checkpoints %s\n", compared, worst,
              same_ckpt ? "identical" : "differ");
  return worst <= tolerance && same_ckpt ? 0 : 1;
}

void add_config_flags(CLI::App* sub, TrainArgs& a) {
  // One flag per config key, so a config file is optional.
  const auto defaults = text::parse_key_values(train::TrainConfig{}.serialize());
  for (const auto& [key, value] : defaults) {
    if (key == "stage") continue;
    const bool is_flag = key.rfind("no_", 0) == 0;
    const std::string name = "--" + key;
    if (is_flag) {
      sub->add_flag_callback(name, [&a, k = key] { a.overrides.emplace_back(k, "1"); }, "ablation flag");
    } else {
      sub->add_option_function<std::string>(
          name, [&a, k = key](const std::string& v) { a.overrides.emplace_back(k, v); },
          "config key (default " + value + ")");
    }
  }
}

int run(std::vector<std::string> argv, Result* result) {
  CLI::App app{"Stereo-visual-inertial motion capture tools", "poser"};
  app.require_subcommand(1);

  SynthArgs synth_a;
  auto* s = app.add_subcommand("synth", "Synthesize a motion clip and its observations");
  s->add_option("--kind", synth_a.kind, "walk-circle | idle-sway | squat-jump | figure-eight")->required();
  s->add_option("--duration", synth_a.duration, "seconds");
  s->add_option("--beta", synth_a.beta, "10 comma-separated shape values");
  s->add_option("--shape", synth_a.shape, "shape record from fit-shape");
  s->add_option("--noise", synth_a.noise, "ideal | sigma-5 | sigma-15 | virtual-stereo | none");
  s->add_option("--seed", synth_a.seed);
  s->add_option("--calib", synth_a.calib, "stereo calibration file");
  s->add_option("--out", synth_a.out)->required();

  TposeArgs tpose_a;
  auto* tp = app.add_subcommand("tpose", "Synthesize a T-pose point cloud and keypoints");
  tp->add_option("--beta", tpose_a.beta);
  tp->add_option("--shape", tpose_a.shape);
  tp->add_option("--points", tpose_a.points);
  tp->add_option("--sigma", tpose_a.sigma, "keypoint noise, meters");
  tp->add_option("--seed", tpose_a.seed);
  tp->add_option("--cloud", tpose_a.cloud, "xyz output");
  tp->add_option("--skeleton", tpose_a.skeleton, "17-keypoint xyz output")->required();

  FitArgs fit_a;
  auto* f = app.add_subcommand("fit-shape", "Fit body shape to a T-pose capture");
  f->add_option("--skeleton", fit_a.skeleton, "17 keypoints, xyz per line")->required();
  f->add_option("--cloud", fit_a.cloud, "xyz point cloud; omit for a skeleton-only fit");
  f->add_option("--iterations", fit_a.iterations);
  f->add_option("--out", fit_a.out, "shape record");

  TrainArgs train_a;
  auto* t = app.add_subcommand("train", "Train network stages");
  t->add_option("--ckpt", train_a.ckpt, "checkpoint directory")->required();
  t->add_option("--stage", train_a.stage, "1 | 2 | 3 | all");
  t->add_option("--config", train_a.config, "key = value file");
  t->add_option("--manifest", train_a.manifest);
  add_config_flags(t, train_a);

  EvalArgs eval_a;
  auto* e = app.add_subcommand("eval", "Evaluate checkpoints on held-out clips");
  e->add_option("--ckpt", eval_a.ckpt)->required();
  e->add_option("--noise", eval_a.noise, "ideal | sigma-5 | sigma-15 | virtual-stereo | all");
  e->add_option("--clips", eval_a.clips);
  e->add_option("--seconds", eval_a.seconds);
  e->add_option("--seed", eval_a.seed, "motion seed");
  e->add_option("--noise-seed", eval_a.noise_seed);
  e->add_option("--data", eval_a.data, "sequence files instead of synthesized motions");
  e->add_flag("--no-refine", eval_a.no_refine);
  e->add_flag("--zero-shape", eval_a.zero_shape);
  e->add_option("--out", eval_a.out, "report file");
  e->add_option("--manifest", eval_a.manifest);

  InferArgs infer_a;
  auto* in = app.add_subcommand("infer", "Streaming inference over a sequence file");
  in->add_option("--ckpt", infer_a.ckpt)->required();
  in->add_option("--in", infer_a.in)->required();
  in->add_option("--out", infer_a.out)->required();
  in->add_option("--calib", infer_a.calib);
  in->add_flag("--no-refine", infer_a.no_refine);
  in->add_flag("--zero-shape", infer_a.zero_shape);

  BenchArgs bench_a;
  auto* b = app.add_subcommand("bench", "Inference throughput, float32, one thread");
  b->add_option("--ckpt", bench_a.ckpt, "omit to bench freshly initialized networks");
  b->add_option("--frames", bench_a.frames);
  b->add_option("--warmup", bench_a.warmup);
  b->add_option("--hidden", bench_a.hidden);
  b->add_option("--layers", bench_a.layers);
  b->add_option("--seed", bench_a.seed);
  b->add_option("--manifest", bench_a.manifest);

  std::string rerun_path;
  double tolerance = 1e-9;
  auto* rr = app.add_subcommand("rerun", "Repeat a recorded train/eval/bench command");
  rr->add_option("--manifest", rerun_path)->required();
  rr->add_option("--tolerance", tolerance);

  try {
    std::vector<std::string> rev(argv.rbegin(), argv.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return 2;
  }

  try {
    const Env env = read_env();
    Result r;
    if (s->parsed()) {
      cmd_synth(synth_a, env);
    } else if (tp->parsed()) {
      cmd_tpose(tpose_a, env);
    } else if (f->parsed()) {
      cmd_fit_shape(fit_a);
    } else if (t->parsed()) {
      r = cmd_train(train_a, env, argv);
    } else if (e->parsed()) {
      r = cmd_eval(eval_a, env, argv);
    } else if (in->parsed()) {
      cmd_infer(infer_a);
    } else if (b->parsed()) {
      r = cmd_bench(bench_a, env, argv);
    } else if (rr->parsed()) {
      return cmd_rerun(rerun_path, tolerance);
    }
    if (!r.manifest_path.empty()) text::write_file(r.manifest_path, r.manifest.serialize());
    if (result) *result = std::move(r);
    return 0;
  } catch (const UsageError& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return 2;
  } catch (const ConfigError& ex) {
    std::fprintf(stderr, "config error: %s\n", ex.what());
    return 2;
  } catch (const StageOrderError& ex) {
    std::fprintf(stderr, "stage error: %s\n", ex.what());
    return 2;
  } catch (const FitDiverged& ex) {
    std::fprintf(stderr, "shape fit diverged: %s\n", ex.what());
    return 1;
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(std::move(args), nullptr);
}
