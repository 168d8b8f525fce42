#pragma once

// Staged training of the five networks on synthesized clips, streaming
// evaluation under the observation noise modes, and inference throughput.
//
// Stage 1 trains the translation network and both joint encoders, stage 2
// the fusion network on top of the frozen stage-1 outputs, stage 3 the
// refinement network on top of frozen fusion. Checkpoints live in one
// directory as <net>.ckpt next to the training config that produced them.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "svi/losses.hpp"
#include "svi/metrics.hpp"
#include "svi/ssm_nets.hpp"
#include "svi/synth.hpp"

namespace svi::train {

struct Ablation {
  bool no_shape = false;      // beta fed to the networks as zero
  bool no_pe = false;         // raw scaled features instead of PE
  bool no_refine = false;     // fusion output is final
  bool no_jerk = false;
  bool no_cycle = false;      // dT supervised directly, no consistency with T
  bool no_footskate = false;
  bool no_canonical = false;  // un-normalized keypoints, joints in world orientation

  bool operator==(const Ablation&) const = default;
};

struct TrainConfig {
  int stage = 1;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;
  std::size_t window = 120;
  std::size_t batch = 4;
  std::size_t epochs = 10;
  std::size_t hidden = 256;
  std::size_t layers = 2;
  std::uint64_t seed = 1;
  loss::LossWeights weights;
  Ablation flags;
  // Synthesized training set, used when no clips are supplied.
  std::size_t clips = 50;
  double clip_seconds = 12.0;
  std::uint64_t data_seed = 1000;

  void validate() const;  // throws ConfigError
  nets::FeatureConfig features() const;
  /// `key = value` lines; parse accepts any subset of keys.
  std::string serialize() const;
  static TrainConfig parse(std::string_view text);
};

/// One motion clip with its observations.
struct Clip {
  synth::MotionSequence gt;
  std::vector<stereo::StereoObservation> stereo;
  std::vector<synth::ImuFrame> imu;
};

enum class NoiseMode { kIdeal, kSigma5, kSigma15, kVirtualStereo };
NoiseMode parse_noise(std::string_view name);  // throws ConfigError
std::string_view noise_name(NoiseMode mode);
synth::NoiseSpec noise_spec(NoiseMode mode, std::uint64_t seed);

/// Random shape with |beta| <= max_norm.
body::BodyShape random_shape(std::uint64_t seed, double max_norm = 2.0);

/// n clips cycling through the four motion kinds, each with its own shape
/// and seed derived from `seed`.
std::vector<synth::MotionSequence> make_motions(std::size_t n, double seconds, std::uint64_t seed);

/// Observations for a motion under a noise mode.
Clip observe(const synth::MotionSequence& motion, NoiseMode mode, std::uint64_t noise_seed,
             const stereo::StereoCalib& calib = {});

/// The synthesized training set a config describes: `clips` motions of
/// `clip_seconds` from `data_seed`, ideal observations.
std::vector<Clip> training_clips(const TrainConfig& config, const stereo::StereoCalib& calib = {});

struct StageReport {
  int stage = 0;
  std::vector<double> step_losses;  // total batch loss per optimizer step
  double final_loss = 0.0;          // mean of the last epoch
  std::size_t steps = 0;
};

/// Trains one stage and writes its checkpoints into `ckpt_dir`. Stage n > 1
/// needs the checkpoints of the earlier stages (StageOrderError otherwise)
/// and never modifies them.
StageReport train_stage(const TrainConfig& config, const std::vector<Clip>& clips, const std::string& ckpt_dir,
                        const stereo::StereoCalib& calib = {});

/// Loads all networks needed for inference; StageOrderError when one is
/// missing (refine is optional when `need_refine` is false).
nets::PoserNets load_nets(const std::string& ckpt_dir, bool need_refine);
TrainConfig load_run_config(const std::string& ckpt_dir);

struct Prediction {
  std::vector<body::Pose> phi;
  std::vector<so3::Vec3> T;
  std::vector<std::array<double, 2>> q;
};

/// Streaming inference over one clip.
Prediction infer(const nets::PoserNets& nets, const nets::FeatureConfig& cfg, const Clip& clip, bool use_refine,
                 bool zero_shape, const stereo::StereoCalib& calib = {});

/// Same result computed whole-clip: each network runs once over the full
/// sequence instead of frame by frame.
Prediction infer_batch(const nets::PoserNets& nets, const nets::FeatureConfig& cfg, const Clip& clip, bool use_refine,
                       bool zero_shape, const stereo::StereoCalib& calib = {});

/// Metrics pooled over clips: every metric is the mean over all of its
/// contributing frames (or contact frames) across clips.
metrics::MetricReport pooled_metrics(const std::vector<Prediction>& preds, const std::vector<Clip>& clips);

struct EvalOptions {
  NoiseMode mode = NoiseMode::kIdeal;
  std::uint64_t noise_seed = 77;
  bool use_refine = true;
  bool zero_shape = false;
};

metrics::MetricReport evaluate(const nets::PoserNets& nets, const nets::FeatureConfig& cfg,
                               const std::vector<synth::MotionSequence>& motions, const EvalOptions& options,
                               const stereo::StereoCalib& calib = {});

struct BenchResult {
  double fps = 0.0;
  std::size_t frames = 0;
  double seconds = 0.0;
};

/// Single-threaded float32 streaming throughput of the whole per-frame
/// pipeline (assembly plus five networks), warmup excluded.
BenchResult bench_inference(const nets::PoserNets& nets, const nets::FeatureConfig& cfg, std::size_t n_frames,
                            std::size_t warmup = 100, bool use_refine = true);

}  // namespace svi::train
