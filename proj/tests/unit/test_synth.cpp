#include "doctest.h"

#include <cmath>

#include "svi/errors.hpp"
#include "svi/synth.hpp"

using namespace svi;
using namespace svi::synth;

namespace {

const auto& tpl() { return body::default_template(); }

double max_foot_skate(const MotionSequence& seq) {
  const auto js = world_joints(seq, tpl());
  double worst = 0;
  for (std::size_t t = 1; t < seq.size(); ++t) {
    for (int side = 0; side < 2; ++side) {
      if (seq.contacts[t][side] == 0 || seq.contacts[t - 1][side] == 0) continue;
      const int j = tpl().foot_joints[side];
      worst = std::max(worst, (js[t].joints[j] - js[t - 1].joints[j]).norm());
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("kind names roundtrip") {
  for (auto k : {MotionKind::kWalkCircle, MotionKind::kIdleSway, MotionKind::kSquatJump, MotionKind::kFigureEight}) {
    CHECK(parse_kind(kind_name(k)) == k);
  }
  CHECK_THROWS_AS(parse_kind("moonwalk"), ConfigError);
  CHECK_THROWS_AS(generate_motion(MotionKind::kIdleSway, 0.2, BodyShape::Zero(), 1), ConfigError);
}

TEST_CASE("generation is deterministic in the seed") {
  const auto a = generate_motion(MotionKind::kWalkCircle, 3.0, BodyShape::Zero(), 42);
  const auto b = generate_motion(MotionKind::kWalkCircle, 3.0, BodyShape::Zero(), 42);
  const auto c = generate_motion(MotionKind::kWalkCircle, 3.0, BodyShape::Zero(), 43);
  REQUIRE(a.size() == 180);
  bool differs = false;
  for (std::size_t t = 0; t < a.size(); ++t) {
    CHECK(a.T[t] == b.T[t]);
    for (int j = 0; j < body::kNumJoints; ++j) CHECK(a.phi[t][j] == b.phi[t][j]);
    differs = differs || (a.T[t] - c.T[t]).norm() > 1e-6;
  }
  CHECK(differs);
}

TEST_CASE("idle sway stays in place with both feet planted") {
  const auto seq = generate_motion(MotionKind::kIdleSway, 5.0, BodyShape::Zero(), 3);
  for (const auto& t : seq.T) CHECK((t - seq.T[0]).norm() < 0.02);
  std::size_t planted = 0;
  for (const auto& c : seq.contacts) planted += c[0] + c[1];
  CHECK(planted > seq.size() * 2 * 9 / 10);
}

TEST_CASE("walk circle has the intended radius and no foot skate") {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto seq = generate_motion(MotionKind::kWalkCircle, 20.0, BodyShape::Zero(), seed);
    const auto [center, radius] = fit_circle(seq.T);
    CHECK(radius == doctest::Approx(2.0).epsilon(0.05 / 2.0));
    CHECK(max_foot_skate(seq) < 0.002);
    std::size_t stance = 0, swing = 0;
    for (const auto& c : seq.contacts) {
      stance += c[0];
      swing += 1 - c[0];
    }
    CHECK(stance > seq.size() / 5);
    CHECK(swing > seq.size() / 5);
  }
}

TEST_CASE("fit_circle recovers a known circle") {
  std::vector<Vec3> pts;
  for (int i = 0; i < 50; ++i) {
    const double a = 0.1 * i;
    pts.emplace_back(1.0 + 3.0 * std::cos(a), 7.0, -2.0 + 3.0 * std::sin(a));
  }
  const auto [c, r] = fit_circle(pts);
  CHECK(c.x() == doctest::Approx(1.0));
  CHECK(c.z() == doctest::Approx(-2.0));
  CHECK(r == doctest::Approx(3.0));
}

TEST_CASE("squat jump leaves the ground") {
  const auto seq = generate_motion(MotionKind::kSquatJump, 6.0, BodyShape::Zero(), 5);
  const auto js = world_joints(seq, tpl());
  std::size_t apex = 0;
  for (std::size_t t = 0; t < seq.size(); ++t) {
    if (seq.T[t].y() > seq.T[apex].y()) apex = t;
  }
  const double ground = std::min(js[0].joints[body::kLeftAnkle].y(), js[0].joints[body::kRightAnkle].y());
  CHECK(ground == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(seq.T[apex].y() > seq.T[0].y() + 0.05);
  CHECK(seq.contacts[apex] == Contact{0, 0});
  CHECK(max_foot_skate(seq) < 0.002);
}

TEST_CASE("figure eight stays inside the workspace") {
  const stereo::StereoCalib calib;
  for (std::uint64_t seed : {1, 2}) {
    const auto seq = generate_motion(MotionKind::kFigureEight, 20.0, BodyShape::Zero(), seed);
    CHECK(max_foot_skate(seq) < 0.002);
    for (const auto& t : seq.T) {
      CHECK(std::abs(t.x()) < 4.0);
      CHECK(t.z() > 1.0);
      CHECK(t.z() < 10.0);
      CHECK(stereo::in_both_frusta(calib, t));
    }
  }
}

TEST_CASE("noise-free stereo reconstructs the keypoints") {
  const stereo::StereoCalib calib;
  const auto seq = generate_motion(MotionKind::kWalkCircle, 2.0, BodyShape::Zero(), 8);
  const auto obs = synth_stereo(seq, calib, NoiseSpec{});
  for (std::size_t t = 0; t < seq.size(); t += 7) {
    const auto js = body::fk(tpl(), seq.phi[t], seq.beta);
    const auto kp = body::regress_coco(tpl(), js);
    const auto metric = stereo::reconstruct_world(calib, obs[t]);
    for (int k = 0; k < body::kNumCoco; ++k) {
      REQUIRE(metric.conf_C[k] == 1.0);
      CHECK((metric.p_C[k] - (kp[k] + seq.T[t])).norm() < 1e-6);
      CHECK((js.globals[0] * obs[t].p3d_l[k] - kp[k]).norm() < 1e-12);
    }
  }
}

TEST_CASE("full dropout zeroes every confidence") {
  const auto seq = generate_motion(MotionKind::kIdleSway, 1.0, BodyShape::Zero(), 8);
  NoiseSpec n;
  n.conf_dropout = 1.0;
  for (const auto& o : synth_stereo(seq, stereo::StereoCalib{}, n)) {
    for (int k = 0; k < body::kNumCoco; ++k) {
      CHECK(o.conf_l[k] == 0.0);
      CHECK(o.conf_r[k] == 0.0);
    }
  }
}

TEST_CASE("world keypoint noise has the requested spread") {
  const stereo::StereoCalib calib;
  const auto seq = generate_motion(MotionKind::kIdleSway, 10.0, BodyShape::Zero(), 9);
  NoiseSpec n;
  n.keypoint_sigma_world = 0.05;
  n.seed = 4;
  const auto obs = synth_stereo(seq, calib, n);
  double sq = 0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < seq.size(); ++t) {
    const auto kp = body::regress_coco(tpl(), body::fk(tpl(), seq.phi[t], seq.beta));
    const auto m = stereo::reconstruct_world(calib, obs[t]);
    for (int k = 0; k < body::kNumCoco; ++k) {
      sq += (m.p_C[k] - kp[k] - seq.T[t]).squaredNorm();
      ++count;
    }
  }
  const double rms = std::sqrt(sq / static_cast<double>(count));
  CHECK(rms == doctest::Approx(0.05 * std::sqrt(3.0)).epsilon(0.1));
}

TEST_CASE("standing still reads gravity") {
  const auto seq = generate_motion(MotionKind::kIdleSway, 2.0, BodyShape::Zero(), 2);
  const auto imu = synth_imu(seq, NoiseSpec{});
  for (const auto& f : imu) {
    CHECK(f.acc[0].norm() == doctest::Approx(kGravity).epsilon(1e-9));
    CHECK((f.R[0] * f.acc[0] - Vec3(0, kGravity, 0)).norm() < 1e-9);
  }
}

TEST_CASE("free fall reads zero specific force") {
  MotionSequence seq;
  seq.phi.assign(30, body::zero_pose());
  for (std::size_t t = 0; t < 30; ++t) {
    const double s = static_cast<double>(t) / seq.fps;
    seq.T.emplace_back(0.3 * s, 1.0 + 2.0 * s - 0.5 * kGravity * s * s, 4.0);
    seq.phi[t][0] = Vec3(0.1, 0.2, 0.3);
  }
  for (const auto& f : synth_imu(seq, NoiseSpec{})) {
    for (int i = 0; i < body::kNumImus; ++i) CHECK(f.acc[i].norm() < 1e-6);
  }
  seq.phi.resize(2);
  seq.T.resize(2);
  CHECK_THROWS_AS(synth_imu(seq, NoiseSpec{}), ShapeError);
}

TEST_CASE("t-pose capture") {
  NoiseSpec n;
  n.seed = 12;
  BodyShape beta = BodyShape::Zero();
  beta[0] = 1.0;
  const auto cap = synth_tpose_cloud(beta, n, 5000);
  CHECK(cap.cloud.size() == 5000);
  Vec3 lo = cap.cloud[0], hi = cap.cloud[0];
  for (const auto& p : cap.cloud) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  CHECK(hi.z() < 4.0);
  CHECK(lo.z() > 2.0);
  CHECK(lo.y() > -0.2);
  CHECK(hi.y() > 1.5);
  CHECK(hi.x() - lo.x() > 1.2);  // arms out
  for (int k = 0; k < body::kNumCoco; ++k) CHECK(stereo::in_both_frusta(stereo::StereoCalib{}, cap.skeleton[k]));
}

TEST_CASE("ankles stay near or above the floor and the root moves smoothly") {
  for (int k = 0; k < 4; ++k) {
    BodyShape beta = BodyShape::Zero();
    beta[0] = k - 1.5;
    const auto seq = generate_motion(static_cast<MotionKind>(k), 8.0, beta, 21);
    const auto js = world_joints(seq, tpl());
    for (std::size_t t = 0; t < seq.size(); ++t) {
      CHECK(js[t].joints[body::kLeftAnkle].y() > -0.01);
      CHECK(js[t].joints[body::kRightAnkle].y() > -0.01);
      CHECK(seq.delta_T(t).norm() * seq.fps < 3.0);
    }
  }
}
