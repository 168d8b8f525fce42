#pragma once

// Evaluation metrics. Positions are meters in, reported units out (mm, cm,
// degrees, km/s^3). Every metric accumulates in frame-major, joint-minor
// order into a single double so reference loops can reproduce it bitwise.

#include <array>
#include <span>
#include <string>
#include <vector>

#include "svi/body_model.hpp"

namespace svi::metrics {

using body::Pose;
using so3::Vec3;

using JointFrame = std::array<Vec3, body::kNumJoints>;
using VertexFrame = std::vector<Vec3>;
using Contact = std::array<int, 2>;

/// Root-aligned mean joint distance; joint 0 is the root. Millimeters.
double jpe(std::span<const JointFrame> pred, std::span<const JointFrame> gt);

/// Root-aligned mean vertex distance, millimeters. Each frame's vertices are
/// shifted by its own root position before comparison.
double pve(std::span<const VertexFrame> pred, std::span<const VertexFrame> gt, std::span<const Vec3> pred_root,
           std::span<const Vec3> gt_root);

/// Mean geodesic angle of the global hip and shoulder rotations, degrees.
double sip(std::span<const Pose> pred_phi, std::span<const Pose> gt_phi,
           const body::BodyTemplate& tpl = body::default_template());

/// Mean root translation error, centimeters.
double te(std::span<const Vec3> pred_T, std::span<const Vec3> gt_T);

/// Mean magnitude of the backward third difference times fps^3, km/s^3.
double jerk(std::span<const JointFrame> joints_world, double fps);

struct FsResult {
  double mm = 0.0;
  bool no_contacts = false;
};

/// Mean per-frame displacement of feet labelled in contact, millimeters.
/// Frame t contributes foot k when contacts[t][k] = 1 and t >= 1.
FsResult foot_skate(std::span<const std::array<Vec3, 2>> feet_world, std::span<const Contact> contacts);

struct MetricReport {
  double jpe_mm = 0.0;
  double pve_mm = 0.0;
  double sip_deg = 0.0;
  double te_cm = 0.0;
  double jerk_km_s3 = 0.0;
  double fs_mm = 0.0;
  bool fs_no_contacts = false;

  /// "key value" lines in a fixed order.
  std::string serialize() const;
};

/// Motion as evaluated: local pose, root translation and the shape used to
/// pose the body.
struct Motion {
  std::span<const Pose> phi;
  std::span<const Vec3> T;
  body::BodyShape beta = body::BodyShape::Zero();
};

/// All six metrics from predicted and ground-truth motion. Contacts are the
/// ground-truth labels.
MetricReport evaluate(const Motion& pred, const Motion& gt, std::span<const Contact> contacts, double fps,
                      const body::BodyTemplate& tpl = body::default_template());

}  // namespace svi::metrics
