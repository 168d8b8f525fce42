#include "doctest.h"

#include <cmath>
#include <numbers>

#include "svi/body_model.hpp"
#include "svi/errors.hpp"
#include "svi/gradcheck.hpp"
#include "svi/rng.hpp"
#include "svi/text_io.hpp"

using namespace svi;
using namespace svi::body;

namespace {

Pose random_pose(Rng& rng, double scale) {
  Pose p;
  for (auto& v : p) v = Vec3(rng.normal(), rng.normal(), rng.normal()) * scale;
  return p;
}

BodyShape random_shape(Rng& rng, double scale) {
  BodyShape b;
  for (int k = 0; k < kShapeDim; ++k) b[k] = rng.normal() * scale;
  return b;
}

std::vector<double> to_vec(const Pose& p) {
  std::vector<double> v(72);
  pose_to_span(p, v);
  return v;
}

}  // namespace

TEST_CASE("template structure") {
  const auto& tpl = default_template();
  CHECK(tpl.parents[0] == -1);
  for (int j = 1; j < kNumJoints; ++j) CHECK(tpl.parents[j] < j);
  CHECK(tpl.foot_joints[0] == kLeftAnkle);
  CHECK(tpl.foot_joints[1] == kRightAnkle);
  // Rest pose has the ankles on the ground plane once the pelvis height is applied.
  const JointSet js = fk(tpl, zero_pose(), BodyShape::Zero());
  CHECK(js.joints[kLeftAnkle].y() == doctest::Approx(js.joints[kRightAnkle].y()));
  CHECK(js.joints[kHead].y() > 0.5);
}

TEST_CASE("template generation is deterministic and round-trips") {
  const auto a = BodyTemplate::generate();
  const auto b = BodyTemplate::generate();
  CHECK(a.serialize() == b.serialize());
  const auto c = BodyTemplate::parse(a.serialize());
  CHECK(c.serialize() == a.serialize());
  CHECK(c.checksum() == a.checksum());
  CHECK(BodyTemplate::generate(123).serialize() != a.serialize());
  CHECK_THROWS_AS(BodyTemplate::parse("version 1\nparents 2 0 1\n"), FormatError);
}

TEST_CASE("shipped template file matches the generator") {
  const std::string path = std::string(SVI_DATA_DIR) + "/body_template.txt";
  const auto shipped = text::read_file(path);
  CHECK(shipped == default_template().serialize());
}

TEST_CASE("fk identity and rigidity") {
  const auto& tpl = default_template();
  const JointSet rest = fk(tpl, zero_pose(), BodyShape::Zero());
  CHECK(rest.joints[0].norm() == 0.0);
  for (int j = 1; j < kNumJoints; ++j) {
    const Vec3 expected = rest.joints[tpl.parents[j]] + tpl.rest_offsets[j];
    CHECK((rest.joints[j] - expected).norm() == 0.0);
    CHECK((rest.globals[j] - RotMat::Identity()).norm() == 0.0);
  }

  Pose p = zero_pose();
  p[0] = Vec3(0.3, -1.1, 0.4);
  const RotMat r = so3::exp_map(p[0]);
  const JointSet rot = fk(tpl, p, BodyShape::Zero());
  for (int j = 0; j < kNumJoints; ++j) CHECK((rot.joints[j] - r * rest.joints[j]).norm() < 1e-12);
}

TEST_CASE("fk matches a hand-composed arm chain") {
  const auto& tpl = default_template();
  Pose p = zero_pose();
  p[kLeftElbow] = Vec3(0, 0, std::numbers::pi / 2);  // bend the forearm up
  const JointSet js = fk(tpl, p, BodyShape::Zero());
  const Vec3 elbow = js.joints[kLeftElbow];
  const Vec3 w = tpl.rest_offsets[kLeftWrist];
  // Rotating (x, y, z) by 90 degrees about z gives (-y, x, z).
  const Vec3 expected_wrist = elbow + Vec3(-w.y(), w.x(), w.z());
  CHECK((js.joints[kLeftWrist] - expected_wrist).norm() < 1e-12);
  const Vec3 h = tpl.rest_offsets[kLeftHand];
  CHECK((js.joints[kLeftHand] - (expected_wrist + Vec3(-h.y(), h.x(), h.z()))).norm() < 1e-12);
  // Joints upstream of the elbow are untouched.
  const JointSet rest = fk(tpl, zero_pose(), BodyShape::Zero());
  CHECK((js.joints[kLeftShoulder] - rest.joints[kLeftShoulder]).norm() == 0.0);
}

TEST_CASE("fk is shape-aware and bone lengths are affine in beta") {
  const auto& tpl = default_template();
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const BodyShape b1 = random_shape(rng, 1.0), b2 = random_shape(rng, 1.0);
    const JointSet j1 = fk(tpl, zero_pose(), b1), j2 = fk(tpl, zero_pose(), b2);
    double diff = 0;
    for (int j = 1; j < kNumJoints; ++j) diff = std::max(diff, (j1.joints[j] - j2.joints[j]).norm());
    CHECK(diff > 1e-4);
  }
  for (int j = 1; j < kNumJoints; ++j) {
    for (int k = 0; k < kShapeDim; ++k) {
      auto len = [&](double x) {
        BodyShape b = BodyShape::Zero();
        b[k] = x;
        return bone_offset(tpl, j, b).norm();
      };
      const double l0 = len(0), l1 = len(1), l2 = len(2), lm = len(-1.5);
      CHECK(std::abs((l2 - l1) - (l1 - l0)) < 1e-12);
      CHECK(std::abs((l0 - lm) - 1.5 * (l1 - l0)) < 1e-12);
      // Per-unit change bounded by 1 cm for the regional components.
      if (k >= 2) CHECK(std::abs(l1 - l0) <= 0.01 + 1e-12);
    }
  }
}

TEST_CASE("vertices, coco and mounts") {
  const auto& tpl = default_template();
  const auto verts = vertices(tpl, zero_pose(), BodyShape::Zero());
  CHECK(verts.size() == static_cast<std::size_t>(kNumVertices));
  const JointSet rest = fk(tpl, zero_pose(), BodyShape::Zero());
  for (int j = 0; j < kNumJoints; ++j)
    for (int k = 0; k < kAnchorsPerJoint; ++k)
      CHECK((verts[j * kAnchorsPerJoint + k] - (rest.joints[j] + tpl.anchors[j][k])).norm() == 0.0);

  const auto coco = regress_coco(tpl, rest);
  CHECK((coco[kCocoLeftHip] - rest.joints[kLeftHip]).norm() == 0.0);
  CHECK((coco[kCocoRightShoulder] - rest.joints[kRightShoulder]).norm() == 0.0);
  CHECK((coco[kCocoLeftKnee] - rest.joints[kLeftKnee]).norm() == 0.0);
  CHECK((coco[kCocoRightAnkle] - rest.joints[kRightAnkle]).norm() == 0.0);
  // Ears mirror across the sagittal plane x = 0.
  CHECK(coco[kLeftEar].x() == doctest::Approx(-coco[kRightEar].x()));
  CHECK(coco[kLeftEar].y() == coco[kRightEar].y());
  CHECK(coco[kLeftEar].z() == coco[kRightEar].z());
  CHECK(coco[kNose].z() > rest.joints[kHead].z());

  Rng rng(3);
  const Pose p = random_pose(rng, 0.4);
  const JointSet js = fk(tpl, p, BodyShape::Zero());
  const auto mounts = mount_frames(tpl, js);
  const int order[] = {kPelvis, kHead, kLeftElbow, kRightElbow, kLeftKnee, kRightKnee};
  for (int i = 0; i < kNumImus; ++i) {
    CHECK((mounts[i].position - js.joints[order[i]]).norm() == 0.0);
    CHECK((mounts[i].rotation - js.globals[order[i]]).norm() == 0.0);
  }
  CHECK(mounts[0].position.norm() == 0.0);
  for (const auto& m : mount_frames(tpl, rest)) CHECK((m.rotation - RotMat::Identity()).norm() == 0.0);
}

TEST_CASE("rest-pose COCO fixture") {
  // Generated once from the shipped template.
  const double fixture[kNumCoco][3] = {
#include "coco_rest_fixture.inc"
  };
  const auto coco = regress_coco(default_template(), fk(default_template(), zero_pose(), BodyShape::Zero()));
  for (int k = 0; k < kNumCoco; ++k)
    for (int c = 0; c < 3; ++c) CHECK(coco[k][c] == doctest::Approx(fixture[k][c]).epsilon(1e-12));
}

TEST_CASE("fk gradients match finite differences") {
  const auto& tpl = default_template();
  Rng rng(31);
  std::vector<double> phi;
  for (int f = 0; f < 2; ++f) {
    const auto v = to_vec(random_pose(rng, 0.5));
    phi.insert(phi.end(), v.begin(), v.end());
  }
  // One joint at exactly zero exercises the small-angle branch.
  for (int k = 0; k < 3; ++k) phi[3 * kLeftElbow + k] = 0.0;
  std::vector<double> beta(10), w(144);
  for (auto& x : beta) x = rng.normal();
  for (auto& x : w) x = rng.uniform(-1, 1);
  const auto weights = ad::Tensor::matrix(2, 72, w);
  auto r = ad::check_gradients(
      [&](const std::vector<ad::Tensor>& t) { return ad::sum(ad::mul(fk_joints(tpl, t[0], t[1]), weights)); },
      {ad::Tensor::matrix(2, 72, phi), ad::Tensor::vector(beta)}, 1e-5, 1e-6, 200);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("vertex and keypoint gradients match finite differences") {
  const auto& tpl = default_template();
  Rng rng(32);
  const auto phi = to_vec(random_pose(rng, 0.4));
  std::vector<double> beta(10), wv(3 * kNumVertices), wk(3 * kNumCoco);
  for (auto& x : beta) x = rng.normal();
  for (auto& x : wv) x = rng.uniform(-1, 1);
  for (auto& x : wk) x = rng.uniform(-1, 1);
  const auto weights_v = ad::Tensor::matrix(kNumVertices, 3, wv);
  const auto weights_k = ad::Tensor::matrix(kNumCoco, 3, wk);
  auto rv = ad::check_gradients(
      [&](const std::vector<ad::Tensor>& t) { return ad::sum(ad::mul(vertices(tpl, t[0], t[1]), weights_v)); },
      {ad::Tensor::matrix(1, 72, phi), ad::Tensor::vector(beta)}, 1e-5, 1e-6, 100);
  CHECK(rv.max_rel_error < 1e-4);
  auto rk = ad::check_gradients(
      [&](const std::vector<ad::Tensor>& t) {
        return ad::sum(ad::mul(coco_keypoints(tpl, t[0], t[1]), weights_k));
      },
      {ad::Tensor::matrix(1, 72, phi), ad::Tensor::vector(beta)}, 1e-5, 1e-6, 100);
  CHECK(rk.max_rel_error < 1e-4);
}

TEST_CASE("rotate_rows") {
  Rng rng(33);
  std::vector<double> rots, pts(2 * 6), w(12);
  for (int f = 0; f < 2; ++f) {
    const RotMat r = so3::exp_map(Vec3(rng.normal(), rng.normal(), rng.normal()));
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) rots.push_back(r(i, j));
  }
  for (auto& x : pts) x = rng.normal();
  for (auto& x : w) x = rng.normal();
  const auto rt = ad::Tensor::matrix(2, 9, rots);
  const auto out = rotate_rows(rt, ad::Tensor::matrix(2, 6, pts));
  const Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>> r1(rots.data() + 9);
  const Vec3 expected = r1 * Vec3(pts[9], pts[10], pts[11]);
  for (int k = 0; k < 3; ++k) CHECK(out.at(1, 3 + k) == doctest::Approx(expected[k]).epsilon(1e-14));
  const auto weights = ad::Tensor::matrix(2, 6, w);
  auto r = ad::check_gradients(
      [&](const std::vector<ad::Tensor>& t) { return ad::sum(ad::mul(rotate_rows(rt, t[0]), weights)); },
      {ad::Tensor::matrix(2, 6, pts)});
  CHECK(r.max_rel_error < 1e-4);
}
