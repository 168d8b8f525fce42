#include "svi/stereo_rig.hpp"

#include <cmath>

#include "svi/errors.hpp"
#include "svi/text_io.hpp"

namespace svi::stereo {

void StereoCalib::validate() const {
  if (!(fx > 0) || !(fy > 0)) throw ConfigError("calibration: focal lengths must be positive");
  if (!(baseline > 0)) throw ConfigError("calibration: baseline must be positive");
  if (width <= 0 || height <= 0) throw ConfigError("calibration: image size must be positive");
  if (!(min_disparity > 0)) throw ConfigError("calibration: min_disparity must be positive");
}

StereoCalib StereoCalib::parse(std::string_view text_in) {
  const auto kv = text::parse_key_values(text_in);
  StereoCalib c;
  for (const auto& [key, value] : kv) {
    if (key == "fx") c.fx = text::parse_double(value);
    else if (key == "fy") c.fy = text::parse_double(value);
    else if (key == "cx") c.cx = text::parse_double(value);
    else if (key == "cy") c.cy = text::parse_double(value);
    else if (key == "baseline") c.baseline = text::parse_double(value);
    else if (key == "width") c.width = static_cast<int>(text::parse_int(value));
    else if (key == "height") c.height = static_cast<int>(text::parse_int(value));
    else if (key == "min_disparity") c.min_disparity = text::parse_double(value);
    else throw ConfigError("calibration: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

StereoCalib StereoCalib::load(const std::string& path) { return parse(text::read_file(path)); }

std::string StereoCalib::serialize() const {
  std::string out;
  auto put = [&out](const char* key, double v) {
    out += key;
    out += " = ";
    text::append_double(out, v);
    out += '\n';
  };
  put("fx", fx);
  put("fy", fy);
  put("cx", cx);
  put("cy", cy);
  put("baseline", baseline);
  out += "width = " + std::to_string(width) + "\n";
  out += "height = " + std::to_string(height) + "\n";
  put("min_disparity", min_disparity);
  return out;
}

Vec2 project(const StereoCalib& calib, View view, const Vec3& p) {
  const Vec3 q = view == View::kLeft ? p : Vec3(p.x() - calib.baseline, p.y(), p.z());
  if (!(q.z() > 0)) throw BehindCamera("project: point is behind the camera");
  return {calib.cx + calib.fx * q.x() / q.z(), calib.cy - calib.fy * q.y() / q.z()};
}

bool in_both_frusta(const StereoCalib& calib, const Vec3& p) {
  if (!(p.z() > 0)) return false;
  for (View v : {View::kLeft, View::kRight}) {
    const Vec2 px = project(calib, v, p);
    if (px.x() < 0 || px.x() > calib.width || px.y() < 0 || px.y() > calib.height) return false;
  }
  return true;
}

double depth_from_disparity(const StereoCalib& calib, double x_l, double x_r) {
  const double disparity = std::abs(x_r - x_l);
  if (!(disparity >= calib.min_disparity)) throw DegenerateDisparity("disparity below threshold");
  return calib.fx * calib.baseline / disparity;
}

double left_weight(double conf_l, double conf_r) {
  const double total = conf_l + conf_r;
  return total > 0 ? conf_l / total : 1.0;
}

std::array<Vec3, kNumKeypoints> fuse_root_relative(const StereoObservation& obs) {
  std::array<Vec3, kNumKeypoints> out;
  for (int k = 0; k < kNumKeypoints; ++k) {
    const double lam = left_weight(obs.conf_l[k], obs.conf_r[k]);
    out[k] = lam * obs.p3d_l[k] + (1.0 - lam) * obs.p3d_r[k];
  }
  return out;
}

MetricKeypoints reconstruct_world(const StereoCalib& calib, const StereoObservation& obs) {
  MetricKeypoints m;
  m.p_R = fuse_root_relative(obs);
  for (int k = 0; k < kNumKeypoints; ++k) {
    m.conf_C[k] = 0.5 * (obs.conf_l[k] + obs.conf_r[k]);
    m.p_C[k].setZero();
    double z = 0;
    try {
      z = depth_from_disparity(calib, obs.p2d_l[k].x(), obs.p2d_r[k].x());
    } catch (const DegenerateDisparity&) {
      m.conf_C[k] = 0.0;
      continue;
    }
    auto back_project = [&](const Vec2& px) {
      return Vec3((px.x() - calib.cx) * z / calib.fx, -(px.y() - calib.cy) * z / calib.fy, z);
    };
    const Vec3 left = back_project(obs.p2d_l[k]);
    const Vec3 right = back_project(obs.p2d_r[k]) + Vec3(calib.baseline, 0, 0);
    const double lam = left_weight(obs.conf_l[k], obs.conf_r[k]);
    m.p_C[k] = lam * left + (1.0 - lam) * right;
  }
  return m;
}

}  // namespace svi::stereo
