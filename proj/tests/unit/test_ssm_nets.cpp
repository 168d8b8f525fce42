#include "doctest.h"

#include <cmath>

#include "svi/errors.hpp"
#include "svi/gradcheck.hpp"
#include "svi/rng.hpp"
#include "svi/ssm_nets.hpp"
#include "svi/synth.hpp"

using namespace svi;
using namespace svi::nets;
using ad::Tensor;

namespace {

Tensor random_tensor(Rng& rng, std::size_t r, std::size_t c, double lo = -1, double hi = 1) {
  std::vector<double> v(r * c);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::matrix(r, c, std::move(v));
}

void randomize(Tensor t, Rng& rng, double bound) {
  for (double& v : t.mutable_values()) v = rng.uniform(-bound, bound);
}

SequenceNet small_net(std::size_t in, std::size_t out, std::uint64_t seed, bool random_head = true) {
  SequenceNet net("test", {in, 8, 2, 16, out}, seed);
  if (random_head) {
    Rng rng(seed + 1);
    randomize(net.head().W, rng, 0.5);
    randomize(net.head().b, rng, 0.5);
  }
  return net;
}

SsmBlock block_with(std::size_t H, double a, double b, double c, double d) {
  SequenceNet net("b", {H, H, 1, 4, 1}, 3);
  SsmBlock blk = net.blocks()[0];
  blk.log_a = Tensor::full({1, H}, a == 0.0 ? 50.0 : std::log(-std::log(a)));
  blk.b = Tensor::full({1, H}, b);
  blk.c = Tensor::full({1, H}, c);
  blk.d = Tensor::full({1, H}, d);
  return blk;
}

}  // namespace

TEST_CASE("degenerate scan passes the input through") {
  Rng rng(1);
  const auto u = random_tensor(rng, 5, 4);
  const SsmBlock blk = block_with(4, 0.0, 1.0, 1.0, 0.0);
  const auto s = ssm_scan(u, blk.log_a, blk.b, blk.c, blk.d);
  for (std::size_t i = 0; i < u.numel(); ++i) CHECK(s.values()[i] == doctest::Approx(u.values()[i]).epsilon(1e-14));
  // With an identity MLP the residual doubles the input.
  const auto y = ad::add(s, u);
  for (std::size_t i = 0; i < u.numel(); ++i) CHECK(y.values()[i] == doctest::Approx(2 * u.values()[i]));
}

TEST_CASE("scan state converges geometrically") {
  const SsmBlock blk = block_with(3, 0.5, 1.0, 1.0, 0.0);
  std::vector<double> h(3, 0.0);
  const std::vector<double> u(3, 1.0);
  double prev_gap = 2.0;
  for (int t = 0; t < 40; ++t) {
    h = ssm_step(blk, u, h).h;
    const double gap = 2.0 - h[0];
    CHECK(gap == doctest::Approx(prev_gap / 2));
    prev_gap = gap;
  }
  CHECK(h[0] == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("decay stays inside the unit interval") {
  Rng rng(2);
  SequenceNet net("s", {4, 16, 1, 8, 1}, 4);
  SsmBlock blk = net.blocks()[0];
  randomize(blk.log_a, rng, 30.0);
  randomize(blk.b, rng, 3.0);
  for (double a : blk.decay()) {
    CHECK(a >= 0.0);
    CHECK(a < 1.0);
  }
  // Bounded input, bounded state: |h| <= max|b u| / (1 - max a).
  std::vector<double> h(16, 0.0);
  double amax = 0;
  for (double a : blk.decay()) amax = std::max(amax, a);
  for (int t = 0; t < 2000; ++t) {
    std::vector<double> u(16);
    for (auto& x : u) x = rng.uniform(-1, 1);
    h = ssm_step(blk, u, h).h;
    for (double v : h) CHECK(std::isfinite(v));
  }
  for (double v : h) CHECK(std::abs(v) <= 3.0 / (1.0 - amax) + 1e-9);
}

TEST_CASE("ssm_step agrees with the whole-sequence block") {
  Rng rng(3);
  SequenceNet net("s", {6, 6, 1, 10, 1}, 5);
  const SsmBlock& blk = net.blocks()[0];
  const auto u = random_tensor(rng, 12, 6);
  const auto y = block_forward(blk, u);
  std::vector<double> h(6, 0.0);
  for (std::size_t t = 0; t < 12; ++t) {
    const auto r = ssm_step(blk, u.values().subspan(t * 6, 6), h);
    h = r.h;
    for (std::size_t i = 0; i < 6; ++i) CHECK(r.y[i] == doctest::Approx(y.at(t, i)).epsilon(1e-12));
  }
}

TEST_CASE("unrolled block gradients match finite differences") {
  Rng rng(4);
  SequenceNet net("g", {5, 5, 1, 7, 1}, 6);
  const SsmBlock& base = net.blocks()[0];
  std::vector<Tensor> leaves = {random_tensor(rng, 10, 5), base.log_a, base.b, base.c, base.d,
                                base.gate.W, base.gate.b, base.value.W, base.value.b, base.out.W, base.out.b};
  // Move the scan parameters off their symmetric initial values.
  randomize(leaves[2], rng, 1.0);
  randomize(leaves[3], rng, 1.0);
  randomize(leaves[4], rng, 1.0);
  const auto r = ad::check_gradients(
      [](const std::vector<Tensor>& t) {
        SsmBlock blk;
        blk.log_a = t[1];
        blk.b = t[2];
        blk.c = t[3];
        blk.d = t[4];
        blk.gate = {t[5], t[6]};
        blk.value = {t[7], t[8]};
        blk.out = {t[9], t[10]};
        const auto y = block_forward(blk, t[0]);
        return ad::sum(ad::mul(y, y));
      },
      leaves);
  CHECK(r.max_rel_error < 1e-4);

  // And through a full network with a nonzero head.
  SequenceNet full = small_net(4, 3, 7);
  auto params = full.parameters();
  params.insert(params.begin(), random_tensor(rng, 10, 4));
  const auto r2 = ad::check_gradients(
      [&](const std::vector<Tensor>& t) {
        auto y = full.forward(t[0]);
        return ad::sum(ad::square(y));
      },
      params, 1e-5, 1e-6, 24);
  CHECK(r2.max_rel_error < 1e-4);
}

TEST_CASE("streaming equals whole-sequence evaluation") {
  Rng rng(5);
  const SequenceNet net = small_net(7, 4, 8);
  const auto x = random_tensor(rng, 100, 7);
  const auto y = net.forward(x);
  Streamer<double> s(net);
  Streamer<float> sf(net);
  std::vector<double> out(4);
  std::vector<float> outf(4), xf(7);
  double worst = 0, worst_f = 0;
  for (std::size_t t = 0; t < 100; ++t) {
    s.step(x.values().subspan(t * 7, 7), out);
    for (std::size_t i = 0; i < 7; ++i) xf[i] = static_cast<float>(x.at(t, i));
    sf.step(xf, outf);
    for (std::size_t i = 0; i < 4; ++i) {
      worst = std::max(worst, std::abs(out[i] - y.at(t, i)));
      worst_f = std::max(worst_f, std::abs(static_cast<double>(outf[i]) - y.at(t, i)));
    }
  }
  CHECK(worst < 1e-9);
  CHECK(worst_f < 1e-3);
  s.reset();
  s.step(x.values().subspan(0, 7), out);
  CHECK(out[0] == doctest::Approx(y.at(0, 0)).epsilon(1e-12));
}

TEST_CASE("zero heads give zero output") {
  Rng rng(6);
  const SequenceNet net("z", {5, 8, 2, 16, 3}, 9);
  const auto y = net.forward(random_tensor(rng, 4, 5));
  for (double v : y.values()) CHECK(v == 0.0);
}

TEST_CASE("checkpoint round trip") {
  const SequenceNet net = small_net(5, 3, 10);
  const auto bytes = net.serialize();
  const auto back = SequenceNet::deserialize(bytes);
  CHECK(back.name() == "test");
  CHECK(back.dims() == net.dims());
  CHECK(back.serialize() == bytes);
  CHECK(back.checksum() == net.checksum());
  CHECK_THROWS_AS(SequenceNet::deserialize(bytes.substr(0, bytes.size() - 3)), FormatError);
  CHECK_THROWS_AS(SequenceNet::deserialize("garbage!"), FormatError);
  std::string bad = bytes;
  bad[8] = 9;  // version
  CHECK_THROWS_AS(SequenceNet::deserialize(bad), FormatError);
  CHECK(SequenceNet("other", net.dims(), 11).checksum() != net.checksum());
}

TEST_CASE("input assembly widths") {
  FeatureConfig cfg;
  CHECK(input_width(NetKind::kTrans, cfg) == 225);
  CHECK(input_width(NetKind::kIENet, cfg) == 180);
  CHECK(input_width(NetKind::kKENet, cfg) == 425);
  CHECK(input_width(NetKind::kFusion, cfg) == 1407);
  CHECK(input_width(NetKind::kRefine, cfg) == 132);
  cfg.use_pe = false;
  CHECK(input_width(NetKind::kTrans, cfg) == 36);
  CHECK(input_width(NetKind::kIENet, cfg) == 54);
  CHECK(input_width(NetKind::kKENet, cfg) == 68);
  CHECK(input_width(NetKind::kFusion, cfg) == 231);
  CHECK(input_width(NetKind::kRefine, cfg) == 90);
}

TEST_CASE("translation input encoding") {
  const FeatureConfig cfg;
  stereo::MetricKeypoints kp;
  for (int k = 0; k < body::kNumCoco; ++k) {
    kp.p_C[k] = Vec3(0.1 * k, 1.0, 5.0);
    kp.conf_C[k] = 1.0;
  }
  kp.p_C[body::kNose] = cfg.workspace_min;
  kp.conf_C[body::kLeftEye] = 0.0;
  const auto x = assemble_trans_input(kp, cfg);
  REQUIRE(x.size() == 225);
  for (int i = 0; i < 24; ++i) CHECK(x[i] == doctest::Approx(i % 2 == 0 ? 0.0 : 1.0));
  CHECK(x[24] == 1.0);
  CHECK(x[49] == 0.0);  // second keypoint's confidence
  CHECK(assemble_trans_input(kp, cfg) == x);
}

TEST_CASE("IMU input assembly") {
  const FeatureConfig cfg;
  const auto seq = synth::generate_motion(synth::MotionKind::kIdleSway, 1.0, body::BodyShape::Zero(), 1);
  synth::MotionSequence still = seq;
  for (auto& p : still.phi) p = seq.phi[0];
  for (auto& T : still.T) T = seq.T[0];
  const auto imu = synth::synth_imu(still, {});
  const auto x = assemble_imu_input(imu[5], cfg);
  REQUIRE(x.size() == 180);
  const double pelvis6d[6] = {1, 0, 0, 0, 1, 0};
  for (int i = 0; i < 6; ++i) CHECK(x[144 + i] == doctest::Approx(pelvis6d[i]).epsilon(1e-12));
  // Every mount reads gravity: decode the lowest PE frequency back to the
  // scaled value and check the magnitude.
  for (int m = 0; m < 6; ++m) {
    double sq = 0;
    for (int c = 0; c < 3; ++c) {
      const double* e = &x[(m * 3 + c) * 8];
      const double unit = std::atan2(e[0], e[1]) / M_PI;
      const double a = (2 * unit - 1) * cfg.acc_scale;
      sq += a * a;
    }
    CHECK(std::sqrt(sq) == doctest::Approx(9.81).epsilon(1e-9));
  }
  auto bad = imu[5];
  bad.R[0] *= 1.1;
  CHECK_THROWS_AS(assemble_imu_input(bad, cfg), BadImuFrame);
}

TEST_CASE("keypoint encoder input is translation invariant") {
  const FeatureConfig cfg;
  Rng rng(7);
  std::array<Vec3, 17> p{};
  std::array<double, 17> conf{};
  for (int k = 0; k < 17; ++k) {
    p[k] = Vec3(rng.uniform(-0.5, 0.5), rng.uniform(-1, 1), rng.uniform(-0.2, 0.2));
    conf[k] = rng.uniform();
  }
  const auto x = assemble_kenet_input(p, conf, cfg);
  REQUIRE(x.size() == 425);
  auto shifted = p;
  for (auto& q : shifted) q += Vec3(3.0, -2.0, 0.7);
  const auto xs = assemble_kenet_input(shifted, conf, cfg);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(xs[i] == doctest::Approx(x[i]).epsilon(1e-9));
  // A flat axis encodes 0.5: sin(pi/2) = 1, cos(pi/2) = 0.
  for (auto& q : p) q.z() = 0.3;
  const auto flat = assemble_kenet_input(p, conf, cfg);
  CHECK(flat[16] == doctest::Approx(1.0));
  CHECK(flat[17] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("untrained pipeline") {
  const FeatureConfig cfg;
  const auto nets = PoserNets::create(8, 1, cfg, 1);
  CHECK(nets.fusion.dims().in == 1407);
  CHECK(nets.refine.dims().in == 132);
  const auto seq = synth::generate_motion(synth::MotionKind::kWalkCircle, 1.0, body::BodyShape::Zero(), 2);
  const stereo::StereoCalib calib;
  const auto obs = synth::synth_stereo(seq, calib, {});
  const auto imu = synth::synth_imu(seq, {});
  Pipeline<double> pipe(nets, cfg, seq.beta);
  for (std::size_t t = 0; t < 10; ++t) {
    const auto est = pipe.step(make_frame_input(calib, obs[t], imu[t]));
    CHECK(est.T.norm() == 0.0);
    CHECK(est.q[0] == 0.5);
    CHECK(est.q[1] == 0.5);
    CHECK(so3::geodesic_deg(so3::exp_map(est.phi[0]), imu[t].R[0]) < 1e-6);
    for (int j = 1; j < body::kNumJoints; ++j) CHECK(est.phi[j].norm() == 0.0);
  }
}

TEST_CASE("shape reaches the fusion output") {
  FeatureConfig cfg;
  auto nets = PoserNets::create(8, 1, cfg, 2);
  Rng rng(8);
  randomize(nets.fusion.head().W, rng, 0.3);
  const JointVec j{};
  std::vector<double> conf(17, 1.0), imu_x(180, 0.5), beta(10, 0.0);
  const auto x0 = assemble_fusion_input(j, j, conf, beta, Vec3(0, 1, 5), Vec3::Zero(), imu_x, cfg);
  beta[0] = 1.0;
  const auto x1 = assemble_fusion_input(j, j, conf, beta, Vec3(0, 1, 5), Vec3::Zero(), imu_x, cfg);
  REQUIRE(x0.size() == 1407);
  const auto y0 = nets.fusion.forward(Tensor::matrix(1, 1407, x0));
  const auto y1 = nets.fusion.forward(Tensor::matrix(1, 1407, x1));
  double diff = 0;
  for (std::size_t i = 0; i < 80; ++i) diff += std::abs(y0.values()[i] - y1.values()[i]);
  CHECK(diff > 1e-3);
}
