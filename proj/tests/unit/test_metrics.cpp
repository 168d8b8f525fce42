#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "../support/metric_refs.hpp"
#include "svi/errors.hpp"
#include "svi/metrics.hpp"
#include "svi/rng.hpp"

using namespace svi;
using namespace svi::metrics;

namespace {

Vec3 rand_vec(Rng& rng, double s = 1.0) { return Vec3(rng.uniform(-s, s), rng.uniform(-s, s), rng.uniform(-s, s)); }

std::vector<JointFrame> rand_joints(Rng& rng, std::size_t n) {
  std::vector<JointFrame> out(n);
  for (auto& f : out) {
    for (auto& j : f) j = rand_vec(rng);
  }
  return out;
}

refs::Flat flatten(std::span<const JointFrame> frames) {
  refs::Flat out;
  for (const auto& f : frames) {
    for (const auto& j : f) out.insert(out.end(), {j.x(), j.y(), j.z()});
  }
  return out;
}

refs::Flat flatten(std::span<const Vec3> pts) {
  refs::Flat out;
  for (const auto& p : pts) out.insert(out.end(), {p.x(), p.y(), p.z()});
  return out;
}

}  // namespace

TEST_CASE("unit fixtures") {
  std::vector<JointFrame> gt(3), pred(3);
  for (auto& f : gt) f.fill(Vec3(0.1, 0.2, 0.3));
  pred = gt;
  CHECK(jpe(pred, gt) == 0.0);
  for (auto& f : pred) f[5].x() += 0.024;
  CHECK(jpe(pred, gt) == doctest::Approx(1.0).epsilon(1e-12));

  std::vector<Vec3> T(10, Vec3(1, 2, 3)), T2 = T;
  for (auto& t : T2) t.z() += 0.05;
  CHECK(te(T, T) == 0.0);
  CHECK(te(T2, T) == doctest::Approx(5.0).epsilon(1e-12));

  // Cubic in x with unit third difference of 1 mm per frame.
  std::vector<JointFrame> cubic(10);
  for (std::size_t t = 0; t < cubic.size(); ++t) {
    const double s = static_cast<double>(t);
    cubic[t].fill(Vec3(0.001 * s * s * s / 6.0, 0, 0));
  }
  CHECK(jerk(cubic, 60.0) == doctest::Approx(0.216).epsilon(1e-9));
  std::vector<JointFrame> parabola(10);
  for (std::size_t t = 0; t < parabola.size(); ++t) {
    const double s = static_cast<double>(t);
    parabola[t].fill(Vec3(0.3 + 0.1 * s - 0.02 * s * s, 1, 2));
  }
  CHECK(jerk(parabola, 60.0) < 1e-9);
  CHECK_THROWS_AS(jerk(std::span(parabola).first(3), 60.0), ShapeError);
  CHECK_THROWS_AS(jpe(std::span(pred).first(2), gt), ShapeError);
  CHECK_THROWS_AS(te(std::span(T).first(2), T), ShapeError);

  std::vector<std::array<Vec3, 2>> feet(5, {Vec3::Zero(), Vec3::Zero()});
  std::vector<Contact> contacts(5, Contact{1, 0});
  CHECK(foot_skate(feet, contacts).mm == 0.0);
  for (std::size_t t = 0; t < feet.size(); ++t) {
    feet[t][0].x() = 0.001 * static_cast<double>(t);
    feet[t][1].x() = 0.05 * static_cast<double>(t);  // not in contact, ignored
  }
  CHECK(foot_skate(feet, contacts).mm == doctest::Approx(1.0).epsilon(1e-12));
  contacts.assign(5, Contact{0, 0});
  const auto none = foot_skate(feet, contacts);
  CHECK(none.mm == 0.0);
  CHECK(none.no_contacts);
}

TEST_CASE("pve removes the root translation") {
  Rng rng(4);
  std::vector<VertexFrame> a(2, VertexFrame(body::kNumVertices));
  for (auto& f : a) {
    for (auto& v : f) v = rand_vec(rng);
  }
  auto b = a;
  std::vector<Vec3> ra(2, Vec3::Zero()), rb(2, Vec3(0.01, 0, 0));
  for (auto& f : b) {
    for (auto& v : f) v.x() += 0.01;
  }
  CHECK(pve(a, a, ra, ra) == 0.0);
  CHECK(pve(b, a, rb, ra) < 1e-12);
  CHECK(pve(b, a, ra, ra) == doctest::Approx(10.0));
}

TEST_CASE("sip compares global rotations") {
  std::vector<Pose> gt(1, body::zero_pose()), pred = gt;
  CHECK(sip(pred, gt) == 0.0);
  pred[0][body::kLeftHip] = Vec3(10.0 * std::numbers::pi / 180.0, 0, 0);
  CHECK(sip(pred, gt) == doctest::Approx(2.5).epsilon(1e-9));
  // Same local limbs, different root: every global rotation moves.
  pred = gt;
  pred[0][0] = Vec3(0, 0.3, 0);
  CHECK(sip(pred, gt) == doctest::Approx(0.3 * 180.0 / std::numbers::pi).epsilon(1e-9));
}

TEST_CASE("metrics equal the brute-force references") {
  Rng rng(123);
  const auto& tpl = body::default_template();
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 4 + rng.below(12);
    const auto a = rand_joints(rng, n), b = rand_joints(rng, n);
    CHECK(jpe(a, b) == refs::jpe_mm(flatten(a), flatten(b), body::kNumJoints));
    CHECK(jerk(a, 60.0) == refs::jerk_km_s3(flatten(a), body::kNumJoints, 60.0));

    std::vector<Vec3> ta(n), tb(n);
    for (std::size_t t = 0; t < n; ++t) {
      ta[t] = rand_vec(rng, 3);
      tb[t] = rand_vec(rng, 3);
    }
    CHECK(te(ta, tb) == refs::te_cm(flatten(ta), flatten(tb)));

    std::vector<VertexFrame> va(n, VertexFrame(50)), vb(n, VertexFrame(50));
    refs::Flat fva, fvb;
    for (std::size_t t = 0; t < n; ++t) {
      for (int v = 0; v < 50; ++v) {
        va[t][v] = rand_vec(rng);
        vb[t][v] = rand_vec(rng);
      }
      auto x = flatten(va[t]), y = flatten(vb[t]);
      fva.insert(fva.end(), x.begin(), x.end());
      fvb.insert(fvb.end(), y.begin(), y.end());
    }
    CHECK(pve(va, vb, ta, tb) == refs::aligned_mean_mm(fva, fvb, flatten(ta), flatten(tb), 50));

    std::vector<std::array<Vec3, 2>> feet(n);
    std::vector<Contact> contacts(n);
    refs::Flat ff;
    std::vector<int> fc;
    for (std::size_t t = 0; t < n; ++t) {
      feet[t] = {rand_vec(rng, 0.01), rand_vec(rng, 0.01)};
      contacts[t] = {static_cast<int>(rng.below(2)), static_cast<int>(rng.below(2))};
      for (int k = 0; k < 2; ++k) ff.insert(ff.end(), {feet[t][k].x(), feet[t][k].y(), feet[t][k].z()});
      fc.insert(fc.end(), {contacts[t][0], contacts[t][1]});
    }
    CHECK(foot_skate(feet, contacts).mm == refs::fs_mm(ff, fc));

    std::vector<Pose> pa(n), pb(n);
    double sum = 0;
    for (std::size_t t = 0; t < n; ++t) {
      for (int j = 0; j < body::kNumJoints; ++j) {
        pa[t][j] = rand_vec(rng, 1.0);
        pb[t][j] = rand_vec(rng, 1.0);
      }
      const auto ga = body::fk(tpl, pa[t], body::BodyShape::Zero());
      const auto gb = body::fk(tpl, pb[t], body::BodyShape::Zero());
      for (int j : {1, 2, 16, 17}) {
        double ra[9], rb[9];
        for (int r = 0; r < 3; ++r) {
          for (int c = 0; c < 3; ++c) {
            ra[3 * r + c] = ga.globals[j](r, c);
            rb[3 * r + c] = gb.globals[j](r, c);
          }
        }
        sum += refs::geodesic_deg(ra, rb);
      }
    }
    CHECK(sip(pa, pb) == sum / static_cast<double>(n * 4));
  }
}

TEST_CASE("frame order does not matter for jpe, pve and te") {
  Rng rng(8);
  const std::size_t n = 30;
  auto a = rand_joints(rng, n), b = rand_joints(rng, n);
  std::vector<Vec3> ta(n), tb(n);
  for (std::size_t t = 0; t < n; ++t) {
    ta[t] = rand_vec(rng);
    tb[t] = rand_vec(rng);
  }
  const double j0 = jpe(a, b), t0 = te(ta, tb);
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = (i * 7) % n;
  std::vector<JointFrame> pa(n), pb(n);
  std::vector<Vec3> pta(n), ptb(n);
  for (std::size_t i = 0; i < n; ++i) {
    pa[i] = a[perm[i]];
    pb[i] = b[perm[i]];
    pta[i] = ta[perm[i]];
    ptb[i] = tb[perm[i]];
  }
  CHECK(jpe(pa, pb) == doctest::Approx(j0).epsilon(1e-12));
  CHECK(te(pta, ptb) == doctest::Approx(t0).epsilon(1e-12));
  std::vector<VertexFrame> va(n), vb(n);
  for (std::size_t t = 0; t < n; ++t) {
    va[t].assign(a[t].begin(), a[t].end());
    vb[t].assign(b[t].begin(), b[t].end());
  }
  const double p0 = pve(va, vb, ta, tb);
  std::vector<VertexFrame> pva(n), pvb(n);
  for (std::size_t i = 0; i < n; ++i) {
    pva[i] = va[perm[i]];
    pvb[i] = vb[perm[i]];
  }
  CHECK(pve(pva, pvb, pta, ptb) == doctest::Approx(p0).epsilon(1e-12));
}

TEST_CASE("evaluate on identical motion") {
  std::vector<Pose> phi(6, body::zero_pose());
  std::vector<Vec3> T(6);
  for (std::size_t t = 0; t < 6; ++t) T[t] = Vec3(0.01 * static_cast<double>(t), 0.9, 4);
  std::vector<Contact> contacts(6, Contact{1, 1});
  const Motion m{phi, T, body::BodyShape::Zero()};
  const auto r = evaluate(m, m, contacts, 60.0);
  CHECK(r.jpe_mm == 0.0);
  CHECK(r.pve_mm == 0.0);
  CHECK(r.sip_deg == 0.0);
  CHECK(r.te_cm == 0.0);
  CHECK(r.jerk_km_s3 < 1e-9);
  CHECK(r.fs_mm == doctest::Approx(10.0));
  CHECK(r.serialize().find("fs_mm ") != std::string::npos);
}
