#pragma once

// Rectified pinhole stereo pair. The world frame is the left lens frame with
// x right, y up and z forward; the right lens sits at (baseline, 0, 0).
// Pixel rows grow downward, so v = cy - fy * y / z.

#include <Eigen/Core>

#include <array>
#include <string>
#include <string_view>

#include "svi/body_model.hpp"

namespace svi::stereo {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
inline constexpr int kNumKeypoints = body::kNumCoco;

struct StereoCalib {
  double fx = 600.0;
  double fy = 600.0;
  double cx = 640.0;
  double cy = 360.0;
  double baseline = 0.12;
  int width = 1280;
  int height = 720;
  double min_disparity = 0.5;

  void validate() const;
  static StereoCalib parse(std::string_view text);
  static StereoCalib load(const std::string& path);
  std::string serialize() const;
};

enum class View { kLeft, kRight };

struct StereoObservation {
  std::array<Vec2, kNumKeypoints> p2d_l{};
  std::array<Vec2, kNumKeypoints> p2d_r{};
  std::array<Vec3, kNumKeypoints> p3d_l{};
  std::array<Vec3, kNumKeypoints> p3d_r{};
  std::array<double, kNumKeypoints> conf_l{};
  std::array<double, kNumKeypoints> conf_r{};
};

struct MetricKeypoints {
  std::array<Vec3, kNumKeypoints> p_R{};
  std::array<Vec3, kNumKeypoints> p_C{};
  std::array<double, kNumKeypoints> conf_C{};
};

/// Throws BehindCamera when the point is not in front of the chosen lens.
Vec2 project(const StereoCalib& calib, View view, const Vec3& p);

/// True when the point projects inside both images.
bool in_both_frusta(const StereoCalib& calib, const Vec3& p);

/// fx * baseline / |x_r - x_l|; throws DegenerateDisparity below the minimum.
double depth_from_disparity(const StereoCalib& calib, double x_l, double x_r);

/// Left-confidence weight c_l / (c_l + c_r); 1 when both are zero.
double left_weight(double conf_l, double conf_r);

/// Confidence-weighted blend of the two root-relative detections.
std::array<Vec3, kNumKeypoints> fuse_root_relative(const StereoObservation& obs);

/// Metric keypoints in the world frame. Keypoints with no confidence or a
/// degenerate disparity come back with conf_C = 0.
MetricKeypoints reconstruct_world(const StereoCalib& calib, const StereoObservation& obs);

}  // namespace svi::stereo
