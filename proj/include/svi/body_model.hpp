#pragma once

// Simplified 24-joint parametric body with SMPL kinematic-tree topology.
//
// World convention: y up, ground plane y = 0, model forward = +z, subject's
// left = +x. The rest pose is the T-pose. Shape parameters scale bones along
// their rest direction, so every bone length is affine in beta.

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "svi/autodiff.hpp"
#include "svi/so3.hpp"

namespace svi::body {

using so3::RotMat;
using so3::Vec3;

inline constexpr int kNumJoints = 24;
inline constexpr int kAnchorsPerJoint = 16;
inline constexpr int kNumVertices = kNumJoints * kAnchorsPerJoint;
inline constexpr int kNumCoco = 17;
inline constexpr int kShapeDim = 10;
inline constexpr int kNumImus = 6;
inline constexpr std::uint64_t kTemplateSeed = 0x5EEDB0D1;

// SMPL joint order.
enum Joint : int {
  kPelvis = 0,
  kLeftHip,
  kRightHip,
  kSpine1,
  kLeftKnee,
  kRightKnee,
  kSpine2,
  kLeftAnkle,
  kRightAnkle,
  kSpine3,
  kLeftFoot,
  kRightFoot,
  kNeck,
  kLeftCollar,
  kRightCollar,
  kHead,
  kLeftShoulder,
  kRightShoulder,
  kLeftElbow,
  kRightElbow,
  kLeftWrist,
  kRightWrist,
  kLeftHand,
  kRightHand,
};

// COCO keypoint order.
enum Coco : int {
  kNose = 0,
  kLeftEye,
  kRightEye,
  kLeftEar,
  kRightEar,
  kCocoLeftShoulder,
  kCocoRightShoulder,
  kCocoLeftElbow,
  kCocoRightElbow,
  kCocoLeftWrist,
  kCocoRightWrist,
  kCocoLeftHip,
  kCocoRightHip,
  kCocoLeftKnee,
  kCocoRightKnee,
  kCocoLeftAnkle,
  kCocoRightAnkle,
};

using BodyShape = Eigen::Matrix<double, kShapeDim, 1>;
using Pose = std::array<Vec3, kNumJoints>;  // axis-angle per joint
using ShapeDirs = Eigen::Matrix<double, 3, kShapeDim>;
using ShapeRow = Eigen::Matrix<double, 1, kShapeDim>;

struct CocoEntry {
  int joint = 0;
  Vec3 offset = Vec3::Zero();
};

struct BodyTemplate {
  std::array<int, kNumJoints> parents{};
  std::array<Vec3, kNumJoints> rest_offsets{};
  std::array<ShapeDirs, kNumJoints> shape_dirs{};
  // Anchors in the local frame of their joint, and the linear shape
  // coefficients of the scale applied to them.
  std::array<std::array<Vec3, kAnchorsPerJoint>, kNumJoints> anchors{};
  std::array<ShapeRow, kNumJoints> anchor_scale{};
  std::array<CocoEntry, kNumCoco> coco_map{};
  std::array<int, 2> foot_joints{};
  std::array<int, kNumImus> mount_joints{};

  /// Deterministic template from the hand-set skeleton plus seeded
  /// perturbations.
  static BodyTemplate generate(std::uint64_t seed = kTemplateSeed);
  static BodyTemplate parse(std::string_view text);
  static BodyTemplate load(const std::string& path);

  std::string serialize() const;
  void save(const std::string& path) const;
  /// FNV-1a over the serialized text.
  std::uint64_t checksum() const;
};

const BodyTemplate& default_template();

struct JointSet {
  std::array<Vec3, kNumJoints> joints{};
  std::array<RotMat, kNumJoints> globals{};
};

struct MountFrame {
  RotMat rotation = RotMat::Identity();
  Vec3 position = Vec3::Zero();
};

Pose zero_pose();

Vec3 bone_offset(const BodyTemplate& tpl, int joint, const BodyShape& beta);
double anchor_scale(const BodyTemplate& tpl, int joint, const BodyShape& beta);

/// Root at the origin with rotation exp(phi[0]); translation is applied by
/// callers.
JointSet fk(const BodyTemplate& tpl, const Pose& phi, const BodyShape& beta);

std::vector<Vec3> vertices(const BodyTemplate& tpl, const JointSet& js, const BodyShape& beta);
std::vector<Vec3> vertices(const BodyTemplate& tpl, const Pose& phi, const BodyShape& beta);

std::array<Vec3, kNumCoco> regress_coco(const BodyTemplate& tpl, const JointSet& js);

/// Pelvis, head, left/right forearm, left/right lower leg.
std::array<MountFrame, kNumImus> mount_frames(const BodyTemplate& tpl, const JointSet& js);

struct FkGradient {
  Pose phi{};
  BodyShape beta = BodyShape::Zero();
};

/// Pulls gradients on joint positions (and optionally global rotations)
/// back to pose and shape.
FkGradient fk_vjp(const BodyTemplate& tpl, const Pose& phi, const BodyShape& beta, const JointSet& fwd,
                  std::span<const Vec3> grad_joints, std::span<const RotMat> grad_globals = {});

/// Extra gradient that vertex positions contribute to joints, globals and beta.
void vertices_vjp(const BodyTemplate& tpl, const JointSet& js, const BodyShape& beta,
                  std::span<const Vec3> grad_vertices, std::span<Vec3> grad_joints,
                  std::span<RotMat> grad_globals, BodyShape& grad_beta);

void coco_vjp(const BodyTemplate& tpl, const JointSet& js, std::span<const Vec3> grad_keypoints,
              std::span<Vec3> grad_joints, std::span<RotMat> grad_globals);

// Tape operations ------------------------------------------------------------

/// Per-frame joint positions: phi is F x 72, beta is 1 x 10 or 10; result F x 72.
ad::Tensor fk_joints(const BodyTemplate& tpl, const ad::Tensor& phi, const ad::Tensor& beta);

/// Surrogate mesh for one pose: phi 1 x 72 -> 384 x 3.
ad::Tensor vertices(const BodyTemplate& tpl, const ad::Tensor& phi, const ad::Tensor& beta);

/// COCO keypoints for one pose: phi 1 x 72 -> 17 x 3.
ad::Tensor coco_keypoints(const BodyTemplate& tpl, const ad::Tensor& phi, const ad::Tensor& beta);

/// Rotates each row's 3-vectors by that row's rotation. `rotations` is a
/// constant F x 9 row-major tensor, `points` is F x 3k.
ad::Tensor rotate_rows(const ad::Tensor& rotations, const ad::Tensor& points);

// Conversions -----------------------------------------------------------------

Pose pose_from_span(std::span<const double> values);
void pose_to_span(const Pose& pose, std::span<double> out);
BodyShape shape_from_span(std::span<const double> values);

}  // namespace svi::body
