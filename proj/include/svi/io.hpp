#pragma once

// Dataset and run records on disk.
//
// SequenceFile is line-oriented text. The first line is the header
//   SVISEQ <version> <fps> <frames> <beta x10> <template checksum> <has_obs>
// and every following line is one frame:
//   phi(72) T(3) q_l q_r [stereo 17 x (2+2+3+3+1+1)] [imu 6 x (9+3)]
// Floats are written in shortest round-trip form, so write -> read is exact.

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "svi/body_model.hpp"
#include "svi/stereo_rig.hpp"
#include "svi/synth.hpp"

namespace svi::io {

inline constexpr int kSequenceVersion = 1;
inline constexpr std::size_t kStereoValues = body::kNumCoco * 12;
inline constexpr std::size_t kImuValues = body::kNumImus * 12;

struct SequenceFile {
  double fps = 60.0;
  std::vector<body::Pose> phi;
  std::vector<so3::Vec3> T;
  body::BodyShape beta = body::BodyShape::Zero();
  std::vector<std::array<double, 2>> q;
  // Either empty or one entry per frame.
  std::vector<stereo::StereoObservation> stereo;
  std::vector<synth::ImuFrame> imu;

  std::size_t size() const { return phi.size(); }
  bool has_observations() const { return !stereo.empty(); }

  static SequenceFile from_motion(const synth::MotionSequence& m);
  /// Contacts rounded from q at 0.5.
  synth::MotionSequence to_motion() const;

  std::string serialize(const body::BodyTemplate& tpl = body::default_template()) const;
  /// Throws FormatError on malformed input or a template checksum mismatch.
  static SequenceFile parse(std::string_view text, const body::BodyTemplate& tpl = body::default_template());
  void save(const std::string& path, const body::BodyTemplate& tpl = body::default_template()) const;
  static SequenceFile load(const std::string& path, const body::BodyTemplate& tpl = body::default_template());
};

/// Fitted subject shape as written by fit-shape and read back by synth/infer.
struct ShapeRecord {
  body::BodyShape beta = body::BodyShape::Zero();
  double final_energy = 0.0;
  int iterations = 0;
  bool used_cloud = false;
  std::array<double, body::kNumJoints - 1> bone_lengths{};  // joints 1..23, meters

  static ShapeRecord make(const body::BodyShape& beta, const body::BodyTemplate& tpl = body::default_template());
  std::string serialize() const;
  /// Only the beta line is required.
  static ShapeRecord parse(std::string_view text);
};

/// What a CLI invocation did, enough to repeat it.
struct RunManifest {
  std::vector<std::string> args;  // argv after the program name
  std::string config_hash;
  std::vector<std::pair<std::string, std::uint64_t>> seeds;
  std::vector<std::pair<std::string, std::string>> checkpoints;  // name, hash
  std::vector<std::pair<std::string, std::string>> outputs;      // key, value

  std::string serialize() const;
  static RunManifest parse(std::string_view text);
};

}  // namespace svi::io
