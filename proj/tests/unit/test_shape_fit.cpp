#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "svi/errors.hpp"
#include "svi/gradcheck.hpp"
#include "svi/rng.hpp"
#include "svi/shape_fit.hpp"
#include "svi/synth.hpp"

using namespace svi;
using namespace svi::shape;

namespace {

PointSet random_cloud(Rng& rng, std::size_t n, double extent) {
  PointSet out(n);
  for (auto& p : out) p = Vec3(rng.uniform(-extent, extent), rng.uniform(-extent, extent), rng.uniform(0, extent));
  return out;
}

double brute_chamfer(const PointSet& P, const PointSet& V) {
  double a = 0, b = 0;
  for (const auto& p : P) {
    double best = INFINITY;
    for (const auto& v : V) best = std::min(best, (p - v).squaredNorm());
    a += best;
  }
  for (const auto& v : V) {
    double best = INFINITY;
    for (const auto& p : P) best = std::min(best, (p - v).squaredNorm());
    b += best;
  }
  return a / P.size() + b / V.size();
}

}  // namespace

TEST_CASE("voxel downsampling") {
  Rng rng(1);
  const auto small = random_cloud(rng, 100, 1.0);
  CHECK(voxel_downsample(small).size() == 100);
  CHECK_THROWS_AS(voxel_downsample(PointSet{}), EmptyCloud);

  const auto box = random_cloud(rng, 50000, 1.0);
  const auto down = voxel_downsample(box);
  CHECK(down.size() >= 3000);
  CHECK(down.size() <= 5000);

  // Duplicates collapse onto one centroid.
  PointSet dup;
  for (int i = 0; i < 6000; ++i) dup.push_back(Vec3(i % 2000, 0, 0) * 0.001);
  const auto d2 = voxel_downsample(dup, 4000, 1, 2000);
  CHECK(d2.size() <= 2000);

  // Output does not depend on input order, bit for bit.
  auto shuffled = box;
  for (std::size_t i = shuffled.size() - 1; i > 0; --i) std::swap(shuffled[i], shuffled[rng.below(i + 1)]);
  const auto down2 = voxel_downsample(shuffled);
  REQUIRE(down2.size() == down.size());
  for (std::size_t i = 0; i < down.size(); ++i) CHECK(down[i] == down2[i]);
}

TEST_CASE("nearest grid is exact") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto pts = random_cloud(rng, 1 + rng.below(300), rng.uniform(0.01, 3));
    const NearestGrid grid(pts);
    for (int q = 0; q < 50; ++q) {
      const Vec3 x(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5));
      std::size_t bi = 0;
      double bd = INFINITY;
      for (std::size_t i = 0; i < pts.size(); ++i) {
        const double d = (pts[i] - x).squaredNorm();
        if (d < bd) {
          bd = d;
          bi = i;
        }
      }
      const auto hit = grid.nearest(x);
      CHECK(hit.sq_dist == bd);
      CHECK(hit.index == bi);
    }
  }
}

TEST_CASE("chamfer values") {
  const PointSet origin = {Vec3::Zero()}, unit = {Vec3(1, 0, 0)};
  CHECK(chamfer(origin, unit) == 2.0);
  CHECK_THROWS_AS(chamfer(origin, PointSet{}), EmptyCloud);
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const auto P = random_cloud(rng, 1 + rng.below(200), 1.0);
    const auto V = random_cloud(rng, 1 + rng.below(200), 1.0);
    CHECK(chamfer(P, P) == 0.0);
    CHECK(std::abs(chamfer(P, V) - brute_chamfer(P, V)) < 1e-12);
    CHECK(chamfer(P, V) == chamfer(V, P));
  }
}

TEST_CASE("chamfer gradient") {
  Rng rng(4);
  const auto P = random_cloud(rng, 150, 1.0);
  std::vector<double> v(3 * 40);
  for (auto& x : v) x = rng.uniform(-1, 1);
  const ChamferTarget target(P);
  auto r = ad::check_gradients([&](const std::vector<ad::Tensor>& t) { return target.distance(t[0]); },
                               {ad::Tensor::matrix(40, 3, v)}, 1e-6, 1e-6, 120);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("energy") {
  const auto& tpl = body::default_template();
  FitProblem prob;
  const auto js = body::fk(tpl, body::zero_pose(), body::BodyShape::Zero());
  prob.skeleton = body::regress_coco(tpl, js);
  prob.cloud = body::vertices(tpl, js, body::BodyShape::Zero());
  CHECK(energy(prob, body::BodyShape::Zero(), body::zero_pose(), Alignment{}) == 0.0);
  prob.cloud.clear();
  prob.skeleton[3].x() += 0.01;
  CHECK(energy(prob, body::BodyShape::Zero(), body::zero_pose(), Alignment{}) == doctest::Approx(1e-4));

  Rng rng(5);
  prob.cloud = body::vertices(tpl, js, body::BodyShape::Zero());
  for (auto& p : prob.cloud) p += Vec3(rng.normal(), rng.normal(), rng.normal()) * 0.01;
  const ChamferTarget target(prob.cloud);
  std::vector<double> beta(10), phi(72), t = {0.01, -0.02, 0.03};
  for (auto& x : beta) x = rng.normal() * 0.5;
  for (auto& x : phi) x = rng.normal() * 0.1;
  const so3::Rot6D r6 = so3::to6d(so3::rot_y(0.1));
  auto r = ad::check_gradients(
      [&](const std::vector<ad::Tensor>& p) { return energy(prob, &target, p[0], p[1], p[2], p[3]); },
      {ad::Tensor::vector(beta), ad::Tensor::matrix(1, 72, phi),
       ad::Tensor::matrix(1, 6, std::vector<double>(r6.data(), r6.data() + 6)), ad::Tensor::matrix(1, 3, t)},
      1e-6, 1e-6, 80);
  CHECK(r.max_rel_error < 1e-4);

  // Tape and plain evaluations agree.
  const double tape = energy(prob, &target, ad::Tensor::vector(beta), ad::Tensor::matrix(1, 72, phi),
                             ad::Tensor::matrix(1, 6, std::vector<double>(r6.data(), r6.data() + 6)),
                             ad::Tensor::matrix(1, 3, t))
                          .item();
  Alignment al{so3::rot_y(0.1), Vec3(t[0], t[1], t[2])};
  CHECK(tape == doctest::Approx(energy(prob, body::shape_from_span(beta), body::pose_from_span(phi), al))
                    .epsilon(1e-12));
}

TEST_CASE("solve on a synthetic t-pose") {
  const auto& tpl = body::default_template();
  synth::NoiseSpec noise;
  noise.seed = 5;
  body::BodyShape beta = body::BodyShape::Zero();
  beta[0] = 0.8;
  beta[1] = -0.5;
  const auto cap = synth::synth_tpose_cloud(beta, noise, 6000);
  FitProblem problem;
  problem.cloud = cap.cloud;
  problem.skeleton = cap.skeleton;
  FitOptions opt;
  opt.iterations = 300;
  const auto r = solve(problem, opt);
  CHECK(r.energy_trace.back() < 0.1 * r.energy_trace.front());
  const auto js = body::fk(tpl, r.phi, r.beta);
  double sq = 0;
  for (int j = 0; j < body::kNumJoints; ++j) {
    sq += (r.align.R * js.joints[j] + r.align.t - cap.joints[j]).squaredNorm();
  }
  CHECK(std::sqrt(sq / body::kNumJoints) < 0.01);
  for (int j : {body::kLeftKnee, body::kLeftAnkle, body::kLeftElbow, body::kLeftWrist}) {
    const double fit = body::bone_offset(tpl, j, r.beta).norm(), truth = body::bone_offset(tpl, j, beta).norm();
    CHECK(std::abs(fit - truth) / truth < 0.03);
  }

  // Input order does not matter.
  FitProblem shuffled = problem;
  std::reverse(shuffled.cloud.begin(), shuffled.cloud.end());
  const auto r2 = solve(shuffled, opt);
  CHECK(r2.final_energy == r.final_energy);
  CHECK(r2.beta == r.beta);
}

TEST_CASE("solve on a neutral body stays near zero shape") {
  synth::NoiseSpec noise;
  noise.seed = 9;
  const auto cap = synth::synth_tpose_cloud(body::BodyShape::Zero(), noise, 6000);
  FitProblem problem;
  problem.cloud = cap.cloud;
  problem.skeleton = cap.skeleton;
  FitOptions opt;
  opt.iterations = 300;
  CHECK(solve(problem, opt).beta.norm() < 0.3);
}

TEST_CASE("skeleton-only solve") {
  const auto& tpl = body::default_template();
  body::BodyShape beta = body::BodyShape::Zero();
  beta[0] = -0.7;
  synth::NoiseSpec noise;
  const auto cap = synth::synth_tpose_cloud(beta, noise, 100);
  FitProblem problem;
  problem.skeleton = cap.skeleton;
  const auto r = solve(problem);
  CHECK(r.energy_trace.back() < 0.1 * r.energy_trace.front());
  for (int j : {body::kLeftKnee, body::kRightAnkle, body::kRightElbow}) {
    const double fit = body::bone_offset(tpl, j, r.beta).norm(), truth = body::bone_offset(tpl, j, beta).norm();
    CHECK(std::abs(fit - truth) / truth < 0.03);
  }
}

TEST_CASE("divergence is reported") {
  synth::NoiseSpec noise;
  const auto cap = synth::synth_tpose_cloud(body::BodyShape::Zero(), noise, 100);
  FitProblem problem;
  problem.skeleton = cap.skeleton;
  FitOptions opt;
  opt.lr = 50.0;
  CHECK_THROWS_AS(solve(problem, opt), FitDiverged);
}
