#include "svi/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "svi/errors.hpp"
#include "svi/rng.hpp"

namespace svi::synth {

namespace {

using body::JointSet;
using body::kLeftAnkle;
using body::kRightAnkle;
constexpr double kPi = std::numbers::pi;

// Workspace point the clips are centered on (meters, world frame).
const Vec3 kStageCenter(0.0, 0.0, 5.5);

Vec3 aa(const RotMat& r) { return so3::log_map(r); }

double smooth_bump(double x) { return 0.5 * (1.0 - std::cos(2.0 * kPi * std::clamp(x, 0.0, 1.0))); }

struct GaitStyle {
  double stride_hz;
  double step;       // half stride, fraction of leg length
  double crouch;     // hip height, fraction of leg length
  double clearance;  // swing foot lift, meters
  double arm_down;
  double arm_swing;
  double elbow;
  double lean;
  double phase0;
};

GaitStyle random_style(Rng& rng) {
  GaitStyle s;
  s.stride_hz = 0.9 * rng.uniform(0.92, 1.08);
  s.step = rng.uniform(0.27, 0.33);
  s.crouch = rng.uniform(0.89, 0.92);
  s.clearance = rng.uniform(0.05, 0.09);
  s.arm_down = rng.uniform(1.2, 1.4);
  s.arm_swing = rng.uniform(0.2, 0.45);
  s.elbow = rng.uniform(0.1, 0.5);
  s.lean = rng.uniform(0.0, 0.08);
  s.phase0 = rng.uniform(0.0, 1.0);
  return s;
}

// Arms hanging down and swinging about the body's lateral axis.
void set_arms(Pose& p, double down, double swing_l, double swing_r, double elbow) {
  p[body::kLeftShoulder] = aa(so3::rot_x(-swing_l) * so3::rot_z(-down));
  p[body::kRightShoulder] = aa(so3::rot_x(-swing_r) * so3::rot_z(down));
  p[body::kLeftElbow] = Vec3(0, -elbow, 0);
  p[body::kRightElbow] = Vec3(0, elbow, 0);
}

// Sagittal two-link solve: hip flexion (forward positive) and knee bend that
// put the ankle at (forward, up) relative to the hip.
std::pair<double, double> leg_ik(double thigh, double shin, double forward, double up) {
  const double reach = std::min(std::hypot(forward, up), 0.999 * (thigh + shin));
  const double c = (reach * reach - thigh * thigh - shin * shin) / (2.0 * thigh * shin);
  const double knee = std::acos(std::clamp(c, -1.0, 1.0));
  const double hip = std::atan2(forward, -up) + std::atan2(shin * std::sin(knee), thigh + shin * std::cos(knee));
  return {hip, knee};
}

// Phase in [0, 1): swing on [0, 0.5), stance on [0.5, 1).
bool in_stance(double u) { return u >= 0.5; }

// Ankle target in the hip frame for one leg.
std::pair<double, double> foot_target(const GaitStyle& s, double leg, double u) {
  const double half = s.step * leg, height = -s.crouch * leg;
  if (!in_stance(u)) {
    const double w = u / 0.5;
    return {-half + half * (1.0 - std::cos(kPi * w)), height + s.clearance * std::sin(kPi * w)};
  }
  const double w = (u - 0.5) / 0.5;
  return {half - 2.0 * half * w, height};
}

double wrap01(double u) { return u - std::floor(u); }

// Local pose of the walking cycle at left-leg phase u, without root
// orientation.
Pose gait_pose(const GaitStyle& s, double u, const body::BodyTemplate& tpl, const BodyShape& beta) {
  Pose p = body::zero_pose();
  const int hips[2] = {body::kLeftHip, body::kRightHip};
  const int knees[2] = {body::kLeftKnee, body::kRightKnee};
  const int ankles[2] = {body::kLeftAnkle, body::kRightAnkle};
  for (int side = 0; side < 2; ++side) {
    // Bones are not quite vertical at rest; solve in the sagittal plane and
    // subtract their rest tilt.
    const Vec3 ot = body::bone_offset(tpl, knees[side], beta);
    const Vec3 os = body::bone_offset(tpl, ankles[side], beta);
    const double thigh = std::hypot(ot.y(), ot.z()), shin = std::hypot(os.y(), os.z());
    const double tilt_t = std::atan2(ot.z(), -ot.y()), tilt_s = std::atan2(os.z(), -os.y());
    const auto [fwd, up] = foot_target(s, thigh + shin, wrap01(u + 0.5 * side));
    const auto [hip, knee] = leg_ik(thigh, shin, fwd, up);
    const double a = hip - tilt_t;
    const double k = a + tilt_s - (hip - knee);
    p[hips[side]] = Vec3(-a, 0, 0);
    p[knees[side]] = Vec3(k, 0, 0);
    p[ankles[side]] = Vec3(a - k, 0, 0);  // keeps the foot level
  }
  const double psi = 2.0 * kPi * u;
  p[body::kSpine1] = Vec3(s.lean, -0.08 * std::sin(psi), 0);
  p[body::kSpine3] = Vec3(0, -0.05 * std::sin(psi), 0);
  p[body::kHead] = Vec3(-s.lean, 0.06 * std::sin(psi), 0);
  const double swing = s.arm_swing * std::cos(psi);
  set_arms(p, s.arm_down, swing, -swing, s.elbow + 0.15 * (1 + std::sin(psi)));
  return p;
}

RotMat walking_root(double yaw, double u) {
  const double psi = 2.0 * kPi * u;
  return so3::rot_y(yaw) * so3::rot_z(0.015 * std::sin(psi)) * so3::rot_x(0.01 * std::cos(2 * psi));
}

// Translation that pins the stance ankle (0 left, 1 right) in place on the
// ground plane. Frames flagged as airborne keep xz and take their height from
// `air_y` instead.
std::vector<Vec3> plant_translation(const std::vector<Pose>& poses, const std::vector<int>& stance,
                                    const BodyShape& beta, const body::BodyTemplate& tpl,
                                    const std::vector<double>* air_y = nullptr) {
  std::vector<Vec3> T(poses.size());
  std::array<Vec3, 2> prev;
  for (std::size_t t = 0; t < poses.size(); ++t) {
    const JointSet js = body::fk(tpl, poses[t], beta);
    const std::array<Vec3, 2> ankle = {js.joints[kLeftAnkle], js.joints[kRightAnkle]};
    const int s = stance[t];
    T[t] = t == 0 ? Vec3::Zero() : Vec3(T[t - 1] + prev[s] - ankle[s]);
    T[t].y() = -ankle[s].y();
    if (air_y != nullptr && !std::isnan((*air_y)[t])) {
      if (t > 0) T[t] = T[t - 1];
      T[t].y() = (*air_y)[t];
    }
    prev = ankle;
  }
  return T;
}

double path_speed(const std::vector<Vec3>& T, double fps) {
  double len = 0;
  for (std::size_t t = 1; t < T.size(); ++t) {
    len += Vec3(T[t].x() - T[t - 1].x(), 0, T[t].z() - T[t - 1].z()).norm();
  }
  return len * fps / static_cast<double>(std::max<std::size_t>(1, T.size() - 1));
}

void shift_xz(std::vector<Vec3>& T, Vec3 from, const Vec3& to) {
  for (auto& p : T) {
    p.x() += to.x() - from.x();
    p.z() += to.z() - from.z();
  }
}

Vec3 bbox_center_xz(const std::vector<Vec3>& T) {
  Vec3 lo = T[0], hi = T[0];
  for (const auto& p : T) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  return 0.5 * (lo + hi);
}

MotionSequence walk(const BodyShape& beta, std::size_t frames, double fps, Rng& rng, bool figure_eight,
                    const body::BodyTemplate& tpl) {
  const GaitStyle style = random_style(rng);
  const double yaw0 = rng.uniform(0.0, 2.0 * kPi);
  const double turn = rng.uniform() < 0.5 ? 1.0 : -1.0;
  const Vec3 offset(rng.uniform(-0.3, 0.3), 0, rng.uniform(-0.3, 0.3));
  const double radius = 2.0;

  MotionSequence seq;
  seq.fps = fps;
  seq.beta = beta;
  double omega = 0.6;  // refined below so the path radius comes out right
  double loop_period = 11.0;
  std::vector<int> stance(frames, 0);
  for (int pass = 0; pass < 3; ++pass) {
    seq.phi.assign(frames, Pose{});
    for (std::size_t t = 0; t < frames; ++t) {
      const double time = static_cast<double>(t) / fps;
      const double u = wrap01(style.phase0 + style.stride_hz * time);
      double yaw;
      if (figure_eight) {
        // One full turn per half period, alternating direction.
        yaw = yaw0 + turn * kPi * (1.0 - std::cos(2.0 * kPi * time / loop_period));
      } else {
        yaw = yaw0 + turn * omega * time;
      }
      Pose p = gait_pose(style, u, tpl, beta);
      p[0] = aa(walking_root(yaw, u));
      seq.phi[t] = p;
      stance[t] = in_stance(u) ? 0 : 1;
    }
    seq.T = plant_translation(seq.phi, stance, beta, tpl);
    const double v = path_speed(seq.T, fps);
    omega = v / radius;
    loop_period = 4.0 * kPi * 1.1 / std::max(v, 0.1);
  }

  Vec3 center;
  if (figure_eight) {
    center = bbox_center_xz(seq.T);
  } else {
    const auto fit = fit_circle(seq.T);
    center = fit.first;
  }
  shift_xz(seq.T, center, kStageCenter + offset);
  return seq;
}

MotionSequence idle_sway(const BodyShape& beta, std::size_t frames, double fps, Rng& rng,
                         const body::BodyTemplate& tpl) {
  MotionSequence seq;
  seq.fps = fps;
  seq.beta = beta;
  const double yaw = kPi + rng.uniform(-0.8, 0.8);
  const Vec3 pos(rng.uniform(-1.0, 1.0), 0, rng.uniform(4.5, 6.5));
  double f[6], a[6], ph[6];
  for (int i = 0; i < 6; ++i) {
    f[i] = rng.uniform(0.15, 0.6);
    a[i] = rng.uniform(0.5, 1.0);
    ph[i] = rng.uniform(0, 2 * kPi);
  }
  const double down = rng.uniform(1.1, 1.45);
  seq.phi.assign(frames, body::zero_pose());
  for (std::size_t t = 0; t < frames; ++t) {
    const double time = static_cast<double>(t) / fps;
    auto wave = [&](int i) { return a[i] * std::sin(2 * kPi * f[i] * time + ph[i]); };
    Pose& p = seq.phi[t];
    p[0] = aa(so3::rot_y(yaw));
    p[body::kSpine1] = Vec3(0.06 * wave(0), 0.15 * wave(1), 0.05 * wave(2));
    p[body::kSpine2] = Vec3(0.04 * wave(2), 0.1 * wave(1), 0.03 * wave(0));
    p[body::kNeck] = Vec3(0.1 * wave(3), 0.2 * wave(4), 0);
    p[body::kHead] = Vec3(0.1 * wave(4), 0.3 * wave(3), 0);
    set_arms(p, down - 0.3 * (1 + wave(5)), 0.4 * wave(3), 0.4 * wave(4), 0.6 + 0.5 * wave(2));
  }
  const JointSet rest = body::fk(tpl, seq.phi[0], beta);
  const double lowest = std::min(rest.joints[kLeftAnkle].y(), rest.joints[kRightAnkle].y());
  seq.T.assign(frames, Vec3(pos.x(), -lowest, pos.z()));
  return seq;
}

MotionSequence squat_jump(const BodyShape& beta, std::size_t frames, double fps, Rng& rng,
                          const body::BodyTemplate& tpl) {
  MotionSequence seq;
  seq.fps = fps;
  seq.beta = beta;
  const double yaw = kPi + rng.uniform(-0.6, 0.6);
  const Vec3 pos(rng.uniform(-1.0, 1.0), 0, rng.uniform(4.5, 6.5));
  const double squat_s = rng.uniform(0.9, 1.2), stand_s = rng.uniform(0.6, 1.0);
  const double depth = rng.uniform(0.6, 1.0);
  const double hop = rng.uniform(0.08, 0.15);  // apex height, meters
  const double v0 = std::sqrt(2.0 * kGravity * hop);
  const double flight_s = 2.0 * v0 / kGravity;
  const double period = squat_s + flight_s + stand_s;
  const double t0 = rng.uniform(0.0, period);

  seq.phi.assign(frames, body::zero_pose());
  std::vector<double> air(frames, std::nan(""));
  const JointSet rest = body::fk(tpl, body::zero_pose(), beta);
  const double stand_y = -std::min(rest.joints[kLeftAnkle].y(), rest.joints[kRightAnkle].y());
  for (std::size_t t = 0; t < frames; ++t) {
    const double time = std::fmod(t0 + static_cast<double>(t) / fps, period);
    double s = 0;
    if (time < squat_s) {
      s = depth * smooth_bump(time / squat_s);
    } else if (time < squat_s + flight_s) {
      const double tau = time - squat_s;
      air[t] = stand_y + v0 * tau - 0.5 * kGravity * tau * tau;
    }
    Pose& p = seq.phi[t];
    p[0] = aa(so3::rot_y(yaw));
    for (int side = 0; side < 2; ++side) {
      p[side == 0 ? body::kLeftHip : body::kRightHip] = Vec3(-1.4 * s, 0, 0);
      p[side == 0 ? body::kLeftKnee : body::kRightKnee] = Vec3(2.0 * s, 0, 0);
      p[side == 0 ? body::kLeftAnkle : body::kRightAnkle] = Vec3(-0.6 * s, 0, 0);
    }
    p[body::kSpine1] = Vec3(0.5 * s, 0, 0);
    p[body::kSpine2] = Vec3(0.2 * s, 0, 0);
    p[body::kHead] = Vec3(-0.5 * s, 0, 0);
    const double raise = 1.2 * s;
    set_arms(p, 1.3, raise, raise, 0.3 + 0.3 * s);
  }
  seq.T = plant_translation(seq.phi, std::vector<int>(frames, 0), beta, tpl, &air);
  shift_xz(seq.T, seq.T[0], pos);
  return seq;
}

}  // namespace

MotionKind parse_kind(std::string_view name) {
  if (name == "walk-circle") return MotionKind::kWalkCircle;
  if (name == "idle-sway") return MotionKind::kIdleSway;
  if (name == "squat-jump") return MotionKind::kSquatJump;
  if (name == "figure-eight") return MotionKind::kFigureEight;
  throw ConfigError("unknown motion kind '" + std::string(name) + "'");
}

std::string_view kind_name(MotionKind kind) {
  switch (kind) {
    case MotionKind::kWalkCircle: return "walk-circle";
    case MotionKind::kIdleSway: return "idle-sway";
    case MotionKind::kSquatJump: return "squat-jump";
    case MotionKind::kFigureEight: return "figure-eight";
  }
  return "?";
}

std::pair<Vec3, double> fit_circle(const std::vector<Vec3>& points) {
  // Algebraic fit of x^2 + z^2 + D x + E z + F = 0.
  Eigen::Matrix3d A = Eigen::Matrix3d::Zero();
  Eigen::Vector3d b = Eigen::Vector3d::Zero();
  for (const auto& p : points) {
    const Eigen::Vector3d row(p.x(), p.z(), 1.0);
    A += row * row.transpose();
    b -= row * (p.x() * p.x() + p.z() * p.z());
  }
  const Eigen::Vector3d s = A.ldlt().solve(b);
  const Vec3 center(-0.5 * s[0], 0.0, -0.5 * s[1]);
  const double r2 = center.x() * center.x() + center.z() * center.z() - s[2];
  return {center, std::sqrt(std::max(r2, 0.0))};
}

std::vector<JointSet> world_joints(const MotionSequence& seq, const body::BodyTemplate& tpl) {
  std::vector<JointSet> out(seq.size());
  for (std::size_t t = 0; t < seq.size(); ++t) {
    out[t] = body::fk(tpl, seq.phi[t], seq.beta);
    for (auto& j : out[t].joints) j += seq.T[t];
  }
  return out;
}

MotionSequence generate_motion(MotionKind kind, double duration_s, const BodyShape& beta, std::uint64_t seed,
                               const body::BodyTemplate& tpl) {
  if (!(duration_s >= 1.0)) throw ConfigError("motion duration must be at least 1 s");
  constexpr double fps = 60.0;
  const auto frames = static_cast<std::size_t>(std::llround(duration_s * fps));
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(kind)));
  MotionSequence seq;
  switch (kind) {
    case MotionKind::kWalkCircle: seq = walk(beta, frames, fps, rng, false, tpl); break;
    case MotionKind::kFigureEight: seq = walk(beta, frames, fps, rng, true, tpl); break;
    case MotionKind::kIdleSway: seq = idle_sway(beta, frames, fps, rng, tpl); break;
    case MotionKind::kSquatJump: seq = squat_jump(beta, frames, fps, rng, tpl); break;
  }
  seq.contacts = label_contacts(seq, tpl);
  return seq;
}

std::vector<Contact> label_contacts(const MotionSequence& seq, const body::BodyTemplate& tpl) {
  const auto js = world_joints(seq, tpl);
  std::vector<Contact> out(seq.size(), Contact{0, 0});
  for (std::size_t t = 0; t < seq.size(); ++t) {
    for (int side = 0; side < 2; ++side) {
      const int j = tpl.foot_joints[side];
      const Vec3 now = js[t].joints[j];
      double step = 0;
      if (t > 0) {
        step = (now - js[t - 1].joints[j]).norm();
      } else if (seq.size() > 1) {
        step = (js[1].joints[j] - now).norm();
      }
      out[t][side] = (step < kContactMaxStep && now.y() < kContactMaxHeight) ? 1 : 0;
    }
  }
  return out;
}

std::vector<stereo::StereoObservation> synth_stereo(const MotionSequence& seq, const stereo::StereoCalib& calib,
                                                    const NoiseSpec& noise, const body::BodyTemplate& tpl) {
  Rng rng(mix_seed(noise.seed, 101));
  std::vector<stereo::StereoObservation> out(seq.size());
  for (std::size_t t = 0; t < seq.size(); ++t) {
    const JointSet js = body::fk(tpl, seq.phi[t], seq.beta);
    const auto kp = body::regress_coco(tpl, js);
    const RotMat root = js.globals[0];
    auto& obs = out[t];
    for (int k = 0; k < body::kNumCoco; ++k) {
      Vec3 world = kp[k] + seq.T[t];
      if (noise.keypoint_sigma_world > 0) {
        world += Vec3(rng.normal(), rng.normal(), rng.normal()) * noise.keypoint_sigma_world;
      }
      const Vec3 local = root.transpose() * kp[k];
      obs.p3d_l[k] = local;
      obs.p3d_r[k] = local;
      if (noise.root_kp_sigma > 0) {
        obs.p3d_l[k] += Vec3(rng.normal(), rng.normal(), rng.normal()) * noise.root_kp_sigma;
        obs.p3d_r[k] += Vec3(rng.normal(), rng.normal(), rng.normal()) * noise.root_kp_sigma;
      }
      obs.conf_l[k] = 1.0;
      obs.conf_r[k] = 1.0;
      if (noise.conf_dropout > 0) {
        if (rng.uniform() < noise.conf_dropout) obs.conf_l[k] = 0.0;
        if (rng.uniform() < noise.conf_dropout) obs.conf_r[k] = 0.0;
      }
      if (!stereo::in_both_frusta(calib, world)) {
        obs.conf_l[k] = obs.conf_r[k] = 0.0;
        obs.p2d_l[k].setZero();
        obs.p2d_r[k].setZero();
        continue;
      }
      obs.p2d_l[k] = stereo::project(calib, stereo::View::kLeft, world);
      obs.p2d_r[k] = stereo::project(calib, stereo::View::kRight, world);
      if (noise.pixel_sigma > 0) {
        obs.p2d_l[k] += stereo::Vec2(rng.normal(), rng.normal()) * noise.pixel_sigma;
        obs.p2d_r[k] += stereo::Vec2(rng.normal(), rng.normal()) * noise.pixel_sigma;
      }
    }
  }
  return out;
}

std::vector<ImuFrame> synth_imu(const MotionSequence& seq, const NoiseSpec& noise, const body::BodyTemplate& tpl) {
  const std::size_t n = seq.size();
  if (n < 3) throw ShapeError("synth_imu needs at least 3 frames");
  Rng rng(mix_seed(noise.seed, 202));
  std::vector<std::array<body::MountFrame, body::kNumImus>> mounts(n);
  for (std::size_t t = 0; t < n; ++t) {
    mounts[t] = body::mount_frames(tpl, body::fk(tpl, seq.phi[t], seq.beta));
    for (auto& m : mounts[t]) m.position += seq.T[t];
  }
  const double fps2 = seq.fps * seq.fps;
  const Vec3 g(0, kGravity, 0);
  std::vector<ImuFrame> out(n);
  for (std::size_t t = 0; t < n; ++t) {
    // Central second difference, shifted one frame inward at the ends.
    const std::size_t c = std::clamp<std::size_t>(t, 1, n - 2);
    for (int i = 0; i < body::kNumImus; ++i) {
      const Vec3 acc =
          (mounts[c + 1][i].position - 2.0 * mounts[c][i].position + mounts[c - 1][i].position) * fps2;
      RotMat R = mounts[t][i].rotation;
      Vec3 f = R.transpose() * (acc + g);
      if (noise.imu_acc_sigma > 0) f += Vec3(rng.normal(), rng.normal(), rng.normal()) * noise.imu_acc_sigma;
      if (noise.imu_rot_sigma > 0) {
        R = R * so3::exp_map(Vec3(rng.normal(), rng.normal(), rng.normal()) * noise.imu_rot_sigma);
      }
      out[t].R[i] = R;
      out[t].acc[i] = f;
    }
  }
  return out;
}

TposeCapture synth_tpose_cloud(const BodyShape& beta, const NoiseSpec& noise, std::size_t n_points,
                               const body::BodyTemplate& tpl) {
  Rng rng(mix_seed(noise.seed, 303));
  TposeCapture cap;
  cap.R = so3::rot_y(kPi);  // facing the rig
  const JointSet js = body::fk(tpl, body::zero_pose(), beta);
  const double lowest = std::min(js.joints[kLeftAnkle].y(), js.joints[kRightAnkle].y());
  cap.T = Vec3(rng.uniform(-0.2, 0.2), -lowest, rng.uniform(2.8, 3.2));
  const auto verts = body::vertices(tpl, js, beta);
  cap.cloud.reserve(n_points);
  constexpr double kJitter = 0.005;
  for (std::size_t i = 0; i < n_points; ++i) {
    const Vec3& v = verts[rng.below(verts.size())];
    const Vec3 jitter(rng.normal(), rng.normal(), rng.normal());
    cap.cloud.push_back(cap.R * v + cap.T + jitter * kJitter);
  }
  const auto kp = body::regress_coco(tpl, js);
  for (int k = 0; k < body::kNumCoco; ++k) {
    cap.skeleton[k] = cap.R * kp[k] + cap.T;
    if (noise.keypoint_sigma_world > 0) {
      cap.skeleton[k] += Vec3(rng.normal(), rng.normal(), rng.normal()) * noise.keypoint_sigma_world;
    }
  }
  for (int j = 0; j < body::kNumJoints; ++j) cap.joints[j] = cap.R * js.joints[j] + cap.T;
  return cap;
}

}  // namespace svi::synth
