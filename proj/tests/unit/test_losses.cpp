#include "doctest.h"

#include <cmath>
#include <numbers>

#include "svi/errors.hpp"
#include "svi/gradcheck.hpp"
#include "svi/losses.hpp"
#include "svi/rng.hpp"
#include "svi/synth.hpp"

using namespace svi;
using namespace svi::loss;
using namespace svi::ad;

namespace {

const auto& tpl() { return body::default_template(); }

Tensor random_tensor(Rng& rng, std::size_t r, std::size_t c, double lo = -1, double hi = 1) {
  std::vector<double> v(r * c);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::matrix(r, c, std::move(v));
}

Tensor beta0() { return Tensor::zeros({1, body::kShapeDim}); }

}  // namespace

TEST_CASE("l2") {
  const auto a = Tensor::matrix(1, 3, {1, 2, 3});
  CHECK(l2(a, a).item() == 0.0);
  CHECK(l2(Tensor::matrix(1, 3, {2, 2, 3}), a).item() == 1.0);
  CHECK_THROWS_AS(l2(a, Tensor::matrix(1, 2, {1, 2})), ShapeError);

  auto p = Tensor::matrix(1, 3, {0.5, -1, 2}, true);
  GradRecorder rec;
  {
    ad::RecordScope scope(rec);
    rec.backward(l2(p, a));
  }
  for (int i = 0; i < 3; ++i) CHECK(p.grad()[i] == doctest::Approx(2 * (p.at(i) - a.at(i))));
}

TEST_CASE("cycle") {
  const auto T = Tensor::matrix(2, 3, {0, 0, 0, 0.1, 0, 0.2});
  const auto dT = Tensor::matrix(2, 3, {0, 0, 0, 0.1, 0, 0.2});
  CHECK(cycle(dT, T, dT).item() == 0.0);
  const auto off = Tensor::matrix(2, 3, {0, 0, 0, 0.1, 0, 1.2});
  CHECK(cycle(off, T, dT).item() == doctest::Approx(2.0));
  CHECK_THROWS_AS(cycle(Tensor::matrix(1, 3, {0, 0, 0}), Tensor::matrix(1, 3, {0, 0, 0}),
                        Tensor::matrix(1, 3, {0, 0, 0})),
                  ShapeError);

  Rng rng(1);
  const auto gt = random_tensor(rng, 6, 3);
  const auto r = check_gradients(
      [&](const std::vector<Tensor>& t) { return cycle(t[0], t[1], gt); },
      {random_tensor(rng, 6, 3), random_tensor(rng, 6, 3)});
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("rotation and forward kinematics") {
  Rng rng(2);
  auto phi = random_tensor(rng, 2, 72, -0.4, 0.4);
  CHECK(rotation_fk(tpl(), phi, phi, beta0()).item() == 0.0);
  CHECK(LossWeights{}.fk_balance == 2.5);

  // Lever arm: the same angle at the root moves more joints than at a wrist.
  auto zero = Tensor::zeros({1, 72});
  std::vector<double> root(72, 0.0), wrist(72, 0.0);
  root[0] = 0.1;
  wrist[3 * body::kLeftWrist] = 0.1;
  const double lr = rotation_fk(tpl(), Tensor::matrix(1, 72, root), zero, beta0()).item();
  const double lw = rotation_fk(tpl(), Tensor::matrix(1, 72, wrist), zero, beta0()).item();
  CHECK(lr > lw);
  CHECK(lw > 0.01 - 1e-12);  // the rotation term alone

  // Shape is an input, not a prediction, so only phi is checked.
  const auto target = random_tensor(rng, 2, 72, -0.4, 0.4);
  const auto beta = random_tensor(rng, 1, 10);
  const auto r = check_gradients(
      [&](const std::vector<Tensor>& t) { return rotation_fk(tpl(), t[0], target, beta); },
      {random_tensor(rng, 2, 72, -0.4, 0.4)});
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("contact cross-entropy") {
  const auto gt = Tensor::matrix(1, 2, {1, 0});
  CHECK(contact_bce(gt, gt).item() < 1e-6);
  CHECK(contact_bce(Tensor::matrix(1, 2, {0.5, 0.5}), gt).item() == doctest::Approx(2 * std::numbers::ln2));
  CHECK(contact_bce(Tensor::matrix(1, 2, {0.5, 0.5}), Tensor::matrix(1, 2, {1, 1})).item() ==
        doctest::Approx(2 * std::numbers::ln2));

  Rng rng(3);
  const auto labels = Tensor::matrix(3, 2, {1, 0, 0, 1, 1, 1});
  const auto r = check_gradients([&](const std::vector<Tensor>& t) { return contact_bce(t[0], labels); },
                                 {random_tensor(rng, 3, 2, 0.1, 0.9)});
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("foot skating") {
  Rng rng(4);
  const auto joints = random_tensor(rng, 5, 72);
  const auto dT = random_tensor(rng, 5, 3);
  CHECK(foot_skate(tpl(), joints, dT, Tensor::zeros({5, 2})).item() == 0.0);

  std::vector<double> still(5 * 72, 0.3);
  CHECK(foot_skate(tpl(), Tensor::matrix(5, 72, still), Tensor::zeros({5, 3}), Tensor::full({5, 2}, 1.0)).item() ==
        0.0);

  // A planted foot in a generated walk: the ankle's motion in the root frame
  // exactly cancels the root step.
  const auto seq = synth::generate_motion(synth::MotionKind::kWalkCircle, 2.0, body::BodyShape::Zero(), 6);
  const auto world = synth::world_joints(seq, tpl());
  const std::size_t n = seq.size();
  std::vector<double> jv(n * 72), dv(n * 3), qv(n * 2);
  for (std::size_t t = 0; t < n; ++t) {
    for (int j = 0; j < body::kNumJoints; ++j) {
      for (int c = 0; c < 3; ++c) jv[t * 72 + 3 * j + c] = world[t].joints[j][c] - seq.T[t][c];
    }
    const auto d = seq.delta_T(t);
    for (int c = 0; c < 3; ++c) dv[t * 3 + c] = d[c];
    for (int k = 0; k < 2; ++k) {
      const int a = tpl().foot_joints[k];
      qv[t * 2 + k] = t > 0 && (world[t].joints[a] - world[t - 1].joints[a]).norm() < 1e-9 ? 1.0 : 0.0;
    }
  }
  double planted = 0;
  for (double q : qv) planted += q;
  REQUIRE(planted > static_cast<double>(n) / 2);
  const auto loss = foot_skate(tpl(), Tensor::matrix(n, 72, jv), Tensor::matrix(n, 3, dv), Tensor::matrix(n, 2, qv));
  CHECK(loss.item() < 1e-18);

  const auto q = Tensor::matrix(5, 2, {1, 0, 1, 1, 0, 1, 1, 1, 0, 0});
  const auto r = check_gradients(
      [&](const std::vector<Tensor>& t) { return foot_skate(tpl(), t[0], t[1], q); },
      {random_tensor(rng, 5, 72), random_tensor(rng, 5, 3)});
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("jerk") {
  Rng rng(5);
  // Per-axis polynomials of degree <= 2 vanish.
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> c0(72), c1(72), c2(72), v(8 * 72);
    for (int i = 0; i < 72; ++i) {
      c0[i] = rng.uniform(-1, 1);
      c1[i] = rng.uniform(-1, 1);
      c2[i] = rng.uniform(-1, 1);
    }
    for (int t = 0; t < 8; ++t) {
      for (int i = 0; i < 72; ++i) v[t * 72 + i] = c0[i] + c1[i] * t + c2[i] * t * t;
    }
    CHECK(jerk(Tensor::matrix(8, 72, v)).item() < 1e-24);
  }
  // Cubic along one axis: third difference 6, so 36 per joint per frame.
  std::vector<double> cubic(6 * 72, 0.0);
  for (int t = 0; t < 6; ++t) {
    for (int j = 0; j < 24; ++j) cubic[t * 72 + 3 * j] = static_cast<double>(t * t * t);
  }
  CHECK(jerk(Tensor::matrix(6, 72, cubic)).item() == doctest::Approx(36.0 * 24));
  CHECK_THROWS_AS(jerk(Tensor::zeros({3, 72})), ShapeError);

  const auto r = check_gradients([](const std::vector<Tensor>& t) { return jerk(t[0]); }, {random_tensor(rng, 7, 6)});
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("weighted total") {
  const LossWeights w;
  CHECK(w.phi == 20.0);
  CHECK(w.T == 5.0);
  CHECK(w.dT == 5.0);
  CHECK(w.contact == 0.001);
  CHECK(w.footskate == 100.0);
  CHECK(w.jerk == 50.0);

  LossTerms zero{Tensor::scalar(0), Tensor::scalar(0), Tensor::scalar(0),
                 Tensor::scalar(0), Tensor::scalar(0), Tensor::scalar(0)};
  CHECK(total(zero, w).item() == 0.0);
  LossTerms fs;
  fs.footskate = Tensor::scalar(1.0);
  CHECK(total(fs, w).item() == 100.0);

  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    double v[6];
    for (double& x : v) x = rng.uniform(0, 3);
    LossTerms t{Tensor::scalar(v[0]), Tensor::scalar(v[1]), Tensor::scalar(v[2]),
                Tensor::scalar(v[3]), Tensor::scalar(v[4]), Tensor::scalar(v[5])};
    const double manual = 20 * v[0] + 5 * v[1] + 5 * v[2] + 0.001 * v[3] + 100 * v[4] + 50 * v[5];
    CHECK(total(t, w).item() == doctest::Approx(manual).epsilon(1e-14));
  }
  LossWeights bad;
  bad.jerk = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
