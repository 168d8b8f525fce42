#pragma once

// Procedural ground truth and simulated sensors: motion clips, virtual stereo
// detections, IMU readings and T-pose point clouds.

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "svi/body_model.hpp"
#include "svi/shape_fit.hpp"
#include "svi/stereo_rig.hpp"

namespace svi::synth {

using body::BodyShape;
using body::Pose;
using so3::RotMat;
using so3::Vec3;

inline constexpr double kGravity = 9.81;

enum class MotionKind { kWalkCircle, kIdleSway, kSquatJump, kFigureEight };

MotionKind parse_kind(std::string_view name);  // throws ConfigError
std::string_view kind_name(MotionKind kind);

using Contact = std::array<int, 2>;  // left, right ankle

struct MotionSequence {
  double fps = 60.0;
  std::vector<Pose> phi;
  std::vector<Vec3> T;
  BodyShape beta = BodyShape::Zero();
  std::vector<Contact> contacts;

  std::size_t size() const { return phi.size(); }
  /// T[t] - T[t-1], zero at t = 0.
  Vec3 delta_T(std::size_t t) const { return t == 0 ? Vec3::Zero() : Vec3(T[t] - T[t - 1]); }
};

/// Least-squares circle through the xz components; returns center (y = 0)
/// and radius.
std::pair<Vec3, double> fit_circle(const std::vector<Vec3>& points);

/// World-space joints (fk plus translation) for every frame.
std::vector<body::JointSet> world_joints(const MotionSequence& seq, const body::BodyTemplate& tpl);

MotionSequence generate_motion(MotionKind kind, double duration_s, const BodyShape& beta, std::uint64_t seed,
                               const body::BodyTemplate& tpl = body::default_template());

inline constexpr double kContactMaxStep = 0.002;   // meters per frame
inline constexpr double kContactMaxHeight = 0.05;  // meters

/// q = 1 when the ankle moved less than 2 mm since the previous frame and is
/// below 5 cm. Frame 0 compares against frame 1.
std::vector<Contact> label_contacts(const MotionSequence& seq,
                                    const body::BodyTemplate& tpl = body::default_template());

struct NoiseSpec {
  double keypoint_sigma_world = 0.0;  // meters, added to world keypoints
  double pixel_sigma = 0.0;
  double conf_dropout = 0.0;
  double imu_acc_sigma = 0.0;
  double imu_rot_sigma = 0.0;
  double root_kp_sigma = 0.0;  // meters, on the root-relative detections
  std::uint64_t seed = 0;
};

struct ImuFrame {
  std::array<RotMat, body::kNumImus> R{};
  std::array<Vec3, body::kNumImus> acc{};
};

/// Per-frame stereo detections. Root-relative keypoints are expressed in the
/// pelvis frame. Keypoints outside either image get zero confidence.
std::vector<stereo::StereoObservation> synth_stereo(const MotionSequence& seq, const stereo::StereoCalib& calib,
                                                    const NoiseSpec& noise,
                                                    const body::BodyTemplate& tpl = body::default_template());

/// Mount orientations and specific force R^T (p'' + g) in the sensor frame.
std::vector<ImuFrame> synth_imu(const MotionSequence& seq, const NoiseSpec& noise,
                                const body::BodyTemplate& tpl = body::default_template());

struct TposeCapture {
  shape::PointSet cloud;
  std::array<Vec3, body::kNumCoco> skeleton{};
  std::array<Vec3, body::kNumJoints> joints{};  // ground truth, world
  RotMat R = RotMat::Identity();
  Vec3 T = Vec3::Zero();
};

/// Subject in T-pose facing the rig about 3 m away. Points are anchors of the
/// posed body plus 5 mm jitter; keypoint_sigma_world perturbs the skeleton.
TposeCapture synth_tpose_cloud(const BodyShape& beta, const NoiseSpec& noise, std::size_t n_points = 20000,
                               const body::BodyTemplate& tpl = body::default_template());

}  // namespace svi::synth
