#include "svi/ssm_nets.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "svi/errors.hpp"
#include "svi/rng.hpp"
#include "svi/text_io.hpp"

namespace svi::nets {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

// x W + b with the bias broadcast over rows; one tape entry.
Tensor affine(const Tensor& x, const Tensor& W, const Tensor& b) {
  const std::size_t m = x.rows(), k = x.cols(), n = W.cols();
  if (W.rows() != k || b.numel() != n) throw ShapeError("affine: dimension mismatch");
  std::vector<double> y(m * n);
  MutMap ym(y.data(), m, n);
  ym.noalias() = ConstMap(x.values().data(), m, k) * ConstMap(W.values().data(), k, n);
  ym.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.values().data(), static_cast<Eigen::Index>(n));
  return ad::record_op({m, n}, std::move(y), {x, W, b}, [x, W, b, m, k, n](std::span<const double> g) {
    ConstMap gm(g.data(), m, n);
    if (auto gx = ad::grad_sink(x); !gx.empty()) {
      MutMap(gx.data(), m, k).noalias() += gm * ConstMap(W.values().data(), k, n).transpose();
    }
    if (auto gW = ad::grad_sink(W); !gW.empty()) {
      MutMap(gW.data(), k, n).noalias() += ConstMap(x.values().data(), m, k).transpose() * gm;
    }
    if (auto gb = ad::grad_sink(b); !gb.empty()) MutMap(gb.data(), 1, n) += gm.colwise().sum();
  });
}

double silu(double x) { return x / (1.0 + std::exp(-x)); }

// silu(g) * v elementwise.
Tensor swiglu(const Tensor& g, const Tensor& v) {
  const auto gv = g.values();
  const auto vv = v.values();
  std::vector<double> y(gv.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = silu(gv[i]) * vv[i];
  return ad::record_op(g.shape(), std::move(y), {g, v}, [g, v](std::span<const double> go) {
    const auto gv = g.values();
    const auto vv = v.values();
    auto gg = ad::grad_sink(g);
    auto gvs = ad::grad_sink(v);
    for (std::size_t i = 0; i < go.size(); ++i) {
      const double sig = 1.0 / (1.0 + std::exp(-gv[i]));
      if (!gg.empty()) gg[i] += go[i] * vv[i] * sig * (1.0 + gv[i] * (1.0 - sig));
      if (!gvs.empty()) gvs[i] += go[i] * gv[i] * sig;
    }
  });
}

std::vector<double> decay_of(std::span<const double> log_a) {
  std::vector<double> a(log_a.size());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = std::exp(-std::exp(log_a[i]));
  return a;
}

Tensor uniform_tensor(Rng& rng, std::size_t r, std::size_t c, double bound) {
  std::vector<double> v(r * c);
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::matrix(r, c, std::move(v));
}

Linear make_linear(Rng& rng, std::size_t in, std::size_t out, double gain) {
  return {uniform_tensor(rng, in, out, gain * std::sqrt(3.0 / static_cast<double>(in))), Tensor::zeros({1, out})};
}

// Binary helpers for checkpoints (host byte order, little-endian in practice).
template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <class T>
T take(std::string_view bytes, std::size_t& pos) {
  if (pos + sizeof(T) > bytes.size()) throw FormatError("checkpoint truncated");
  T v;
  std::memcpy(&v, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

constexpr char kMagic[8] = {'S', 'V', 'I', 'N', 'E', 'T', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

Tensor Linear::operator()(const Tensor& x) const { return affine(x, W, b); }

std::vector<double> SsmBlock::decay() const { return decay_of(log_a.values()); }

Tensor ssm_scan(const Tensor& u, const Tensor& log_a, const Tensor& b, const Tensor& c, const Tensor& d,
                std::span<const double> h0) {
  const std::size_t F = u.rows(), H = u.cols();
  for (const Tensor* p : {&log_a, &b, &c, &d}) {
    if (p->numel() != H) throw ShapeError("ssm_scan: parameter width mismatch");
  }
  if (!h0.empty() && h0.size() != H) throw ShapeError("ssm_scan: initial state width mismatch");
  const std::vector<double> a = decay_of(log_a.values());
  const auto uv = u.values();
  const auto bv = b.values(), cv = c.values(), dv = d.values();
  // States are kept for the backward pass: hs[t] is h after step t.
  std::vector<double> hs(F * H);
  std::vector<double> s(F * H);
  for (std::size_t t = 0; t < F; ++t) {
    for (std::size_t i = 0; i < H; ++i) {
      const double prev = t > 0 ? hs[(t - 1) * H + i] : (h0.empty() ? 0.0 : h0[i]);
      const double h = a[i] * prev + bv[i] * uv[t * H + i];
      hs[t * H + i] = h;
      s[t * H + i] = cv[i] * h + dv[i] * uv[t * H + i];
    }
  }
  std::vector<double> init(h0.begin(), h0.end());
  if (init.empty()) init.assign(H, 0.0);
  return ad::record_op(
      {F, H}, std::move(s), {u, log_a, b, c, d},
      [u, log_a, b, c, d, a, hs = std::move(hs), init = std::move(init), F, H](std::span<const double> gs) {
        auto gu = ad::grad_sink(u);
        auto gl = ad::grad_sink(log_a);
        auto gb = ad::grad_sink(b);
        auto gc = ad::grad_sink(c);
        auto gd = ad::grad_sink(d);
        const auto uv = u.values();
        const auto bv = b.values(), cv = c.values(), dv = d.values();
        const auto lv = log_a.values();
        std::vector<double> carry(H, 0.0);  // dL/dh_t flowing from later steps
        std::vector<double> ga(H, 0.0);
        for (std::size_t t = F; t-- > 0;) {
          for (std::size_t i = 0; i < H; ++i) {
            const std::size_t k = t * H + i;
            const double gh = cv[i] * gs[k] + carry[i];
            const double prev = t > 0 ? hs[k - H] : init[i];
            if (!gu.empty()) gu[k] += bv[i] * gh + dv[i] * gs[k];
            if (!gb.empty()) gb[i] += gh * uv[k];
            if (!gc.empty()) gc[i] += gs[k] * hs[k];
            if (!gd.empty()) gd[i] += gs[k] * uv[k];
            ga[i] += gh * prev;
            carry[i] = a[i] * gh;
          }
        }
        if (!gl.empty()) {
          for (std::size_t i = 0; i < H; ++i) gl[i] += ga[i] * (-a[i] * std::exp(lv[i]));
        }
      });
}

Tensor block_forward(const SsmBlock& block, const Tensor& u) {
  const Tensor s = ssm_scan(u, block.log_a, block.b, block.c, block.d);
  const Tensor m = swiglu(block.gate(s), block.value(s));
  return ad::add(block.out(m), u);
}

StepResult ssm_step(const SsmBlock& block, std::span<const double> u, std::span<const double> h) {
  const std::size_t H = block.width();
  if (u.size() != H || h.size() != H) throw ShapeError("ssm_step: width mismatch");
  const std::vector<double> a = block.decay();
  const auto bv = block.b.values(), cv = block.c.values(), dv = block.d.values();
  StepResult r;
  r.h.resize(H);
  std::vector<double> s(H);
  for (std::size_t i = 0; i < H; ++i) {
    r.h[i] = a[i] * h[i] + bv[i] * u[i];
    s[i] = cv[i] * r.h[i] + dv[i] * u[i];
  }
  const Tensor st = Tensor::matrix(1, H, s);
  const Tensor y =
      ad::add(block.out(swiglu(block.gate(st), block.value(st))), Tensor::matrix(1, H, {u.begin(), u.end()}));
  r.y.assign(y.values().begin(), y.values().end());
  return r;
}

std::string_view net_name(NetKind kind) {
  switch (kind) {
    case NetKind::kTrans: return "trans";
    case NetKind::kIENet: return "ienet";
    case NetKind::kKENet: return "kenet";
    case NetKind::kFusion: return "fusion";
    case NetKind::kRefine: return "refine";
  }
  return "?";
}

NetKind parse_net(std::string_view name) {
  for (NetKind k : kAllNets) {
    if (net_name(k) == name) return k;
  }
  throw ConfigError("unknown network '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// SequenceNet

SequenceNet::SequenceNet(std::string name, NetDims dims, std::uint64_t seed) : name_(std::move(name)), dims_(dims) {
  if (dims.in == 0 || dims.hidden == 0 || dims.mlp == 0 || dims.out == 0) {
    throw ConfigError("network dimensions must be positive");
  }
  Rng rng(seed);
  const std::size_t H = dims.hidden;
  input_ = make_linear(rng, dims.in, H, 1.0);
  for (std::size_t l = 0; l < dims.layers; ++l) {
    SsmBlock blk;
    // Time constants log-spaced from 1 to 100 frames.
    std::vector<double> la(H), bb(H, 1.0), cc(H), dd(H, 1.0);
    for (std::size_t i = 0; i < H; ++i) {
      const double tau = std::pow(100.0, H > 1 ? static_cast<double>(i) / static_cast<double>(H - 1) : 0.0);
      la[i] = -std::log(tau);
      cc[i] = 1.0 - std::exp(-1.0 / tau);
    }
    blk.log_a = Tensor::matrix(1, H, std::move(la));
    blk.b = Tensor::matrix(1, H, std::move(bb));
    blk.c = Tensor::matrix(1, H, std::move(cc));
    blk.d = Tensor::matrix(1, H, std::move(dd));
    blk.gate = make_linear(rng, H, dims.mlp, 1.0);
    blk.value = make_linear(rng, H, dims.mlp, 1.0);
    blk.out = make_linear(rng, dims.mlp, H, 0.5);
    blocks_.push_back(std::move(blk));
  }
  head_ = {Tensor::zeros({H, dims.out}), Tensor::zeros({1, dims.out})};
}

Tensor SequenceNet::forward(const Tensor& x) const {
  if (x.dim() != 2 || x.cols() != dims_.in) {
    throw ShapeError(name_ + ": expected F x " + std::to_string(dims_.in) + " input");
  }
  Tensor h = input_(x);
  for (const auto& blk : blocks_) h = block_forward(blk, h);
  return head_(h);
}

std::vector<Tensor> SequenceNet::parameters() const {
  std::vector<Tensor> p = {input_.W, input_.b};
  for (const auto& blk : blocks_) {
    for (const Tensor* t : {&blk.log_a, &blk.b, &blk.c, &blk.d, &blk.gate.W, &blk.gate.b, &blk.value.W,
                            &blk.value.b, &blk.out.W, &blk.out.b}) {
      p.push_back(*t);
    }
  }
  p.push_back(head_.W);
  p.push_back(head_.b);
  return p;
}

void SequenceNet::set_trainable(bool flag) {
  for (auto& t : parameters()) t.set_requires_grad(flag);
}

std::size_t SequenceNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : parameters()) n += t.numel();
  return n;
}

std::string SequenceNet::serialize() const {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name_.size()));
  out += name_;
  for (std::size_t d : {dims_.in, dims_.hidden, dims_.layers, dims_.mlp, dims_.out}) {
    put<std::uint64_t>(out, d);
  }
  const auto params = parameters();
  put<std::uint64_t>(out, parameter_count());
  for (const auto& t : params) {
    for (double v : t.values()) put<double>(out, v);
  }
  return out;
}

SequenceNet SequenceNet::deserialize(std::string_view bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("not a network checkpoint");
  }
  std::size_t pos = sizeof(kMagic);
  const auto version = take<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto name_len = take<std::uint32_t>(bytes, pos);
  if (pos + name_len > bytes.size()) throw FormatError("checkpoint truncated");
  std::string name(bytes.substr(pos, name_len));
  pos += name_len;
  NetDims dims;
  for (std::size_t* d : {&dims.in, &dims.hidden, &dims.layers, &dims.mlp, &dims.out}) {
    *d = static_cast<std::size_t>(take<std::uint64_t>(bytes, pos));
  }
  if (dims.layers > 64 || dims.hidden > (1u << 16) || dims.mlp > (1u << 18) || dims.in > (1u << 20) ||
      dims.out > (1u << 16)) {
    throw FormatError("implausible checkpoint dimensions");
  }
  SequenceNet net(name, dims, 0);
  const auto count = take<std::uint64_t>(bytes, pos);
  if (count != net.parameter_count()) throw FormatError("checkpoint parameter count does not match its dimensions");
  for (auto& t : net.parameters()) {
    for (double& v : t.mutable_values()) v = take<double>(bytes, pos);
  }
  if (pos != bytes.size()) throw FormatError("trailing bytes in checkpoint");
  return net;
}

void SequenceNet::save(const std::string& path) const { text::write_file(path, serialize()); }

SequenceNet SequenceNet::load(const std::string& path) { return deserialize(text::read_file(path)); }

std::uint64_t SequenceNet::checksum() const { return text::fnv1a(serialize()); }

// ---------------------------------------------------------------------------
// Streamer

namespace {

template <class Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> transposed(const Tensor& W) {
  return ConstMap(W.values().data(), W.rows(), W.cols()).transpose().template cast<Scalar>();
}

template <class Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> column(std::span<const double> v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())).template cast<Scalar>();
}

}  // namespace

template <class Scalar>
Streamer<Scalar>::Streamer(const SequenceNet& net) {
  in_W_ = transposed<Scalar>(net.input().W);
  in_b_ = column<Scalar>(net.input().b.values());
  head_W_ = transposed<Scalar>(net.head().W);
  head_b_ = column<Scalar>(net.head().b.values());
  for (const auto& blk : net.blocks()) {
    Block b;
    b.a = column<Scalar>(blk.decay());
    b.b = column<Scalar>(blk.b.values());
    b.c = column<Scalar>(blk.c.values());
    b.d = column<Scalar>(blk.d.values());
    b.gate_W = transposed<Scalar>(blk.gate.W);
    b.value_W = transposed<Scalar>(blk.value.W);
    b.out_W = transposed<Scalar>(blk.out.W);
    b.gate_b = column<Scalar>(blk.gate.b.values());
    b.value_b = column<Scalar>(blk.value.b.values());
    b.out_b = column<Scalar>(blk.out.b.values());
    blocks_.push_back(std::move(b));
  }
  reset();
}

template <class Scalar>
void Streamer<Scalar>::reset() {
  for (auto& b : blocks_) b.h = Vec::Zero(b.a.size());
}

template <class Scalar>
void Streamer<Scalar>::step(std::span<const Scalar> x, std::span<Scalar> y) {
  if (x.size() != in() || y.size() != out()) throw ShapeError("Streamer::step: width mismatch");
  const Eigen::Map<const Vec> xm(x.data(), static_cast<Eigen::Index>(x.size()));
  u_.noalias() = in_W_ * xm;
  u_ += in_b_;
  for (auto& b : blocks_) {
    b.h = b.a.cwiseProduct(b.h) + b.b.cwiseProduct(u_);
    s_ = b.c.cwiseProduct(b.h) + b.d.cwiseProduct(u_);
    g_.noalias() = b.gate_W * s_;
    g_ += b.gate_b;
    v_.noalias() = b.value_W * s_;
    v_ += b.value_b;
    for (Eigen::Index i = 0; i < g_.size(); ++i) {
      const Scalar gi = g_[i];
      g_[i] = gi / (Scalar(1) + std::exp(-gi)) * v_[i];
    }
    s_.noalias() = b.out_W * g_;
    u_ += s_ + b.out_b;
  }
  Eigen::Map<Vec> ym(y.data(), static_cast<Eigen::Index>(y.size()));
  ym.noalias() = head_W_ * u_;
  ym += head_b_;
}

template class Streamer<float>;
template class Streamer<double>;

// ---------------------------------------------------------------------------
// Feature assembly

void FeatureConfig::validate() const {
  for (int i = 0; i < 3; ++i) {
    if (!(workspace_max[i] - workspace_min[i] > 1e-6)) throw ConfigError("workspace box is degenerate");
  }
  for (double v : {acc_scale, joint_range, delta_range, trans_unit, delta_unit}) {
    if (!(v > 0.0)) throw ConfigError("feature scales must be positive");
  }
}

namespace {

double unit_clamp(double v) { return std::clamp(v, 0.0, 1.0); }

// [-range, range] -> [0, 1], clamped.
double signed_unit(double v, double range) { return unit_clamp((v / range + 1.0) * 0.5); }

std::size_t enc_width(const FeatureConfig& cfg) { return cfg.use_pe ? 2 * kPeWidth : 1; }

void encode_joints(const JointVec& j, const FeatureConfig& cfg, std::vector<double>& out) {
  std::array<double, 72> u{};
  for (std::size_t i = 0; i < 72; ++i) u[i] = signed_unit(j[i], cfg.joint_range);
  encode(u, cfg, out);
}

void encode_translation(const Vec3& T, const Vec3& dT, const FeatureConfig& cfg, std::vector<double>& out) {
  std::array<double, 3> ut{}, ud{};
  for (int i = 0; i < 3; ++i) {
    ut[i] = unit_clamp((T[i] - cfg.workspace_min[i]) / (cfg.workspace_max[i] - cfg.workspace_min[i]));
    ud[i] = signed_unit(dT[i], cfg.delta_range);
  }
  encode(ut, cfg, out);
  encode(ud, cfg, out);
}

}  // namespace

void encode(std::span<const double> unit, const FeatureConfig& cfg, std::vector<double>& out) {
  if (!cfg.use_pe) {
    out.insert(out.end(), unit.begin(), unit.end());
    return;
  }
  const std::size_t base = out.size();
  out.resize(base + unit.size() * 2 * kPeWidth);
  ad::positional_encode<double>(unit, kPeWidth, std::span<double>(out).subspan(base));
}

std::size_t input_width(NetKind kind, const FeatureConfig& cfg) {
  const std::size_t e = enc_width(cfg);
  const std::size_t imu = 6 * 3 * e + 6 * 6;
  switch (kind) {
    case NetKind::kTrans: return kTransKeypoints.size() * (3 * e + 1);
    case NetKind::kIENet: return imu;
    case NetKind::kKENet: return body::kNumCoco * (3 * e + 1);
    case NetKind::kFusion: return 2 * 72 * e + body::kNumCoco + body::kShapeDim + 6 * e + imu;
    case NetKind::kRefine: return 72 + 6 * e + 2 + body::kShapeDim;
  }
  return 0;
}

std::size_t output_width(NetKind kind) {
  switch (kind) {
    case NetKind::kTrans: return 6;
    case NetKind::kIENet:
    case NetKind::kKENet: return 72;
    case NetKind::kFusion:
    case NetKind::kRefine: return 80;
  }
  return 0;
}

std::vector<double> assemble_trans_input(const stereo::MetricKeypoints& kp, const FeatureConfig& cfg) {
  std::vector<double> out;
  out.reserve(input_width(NetKind::kTrans, cfg));
  for (int k : kTransKeypoints) {
    std::array<double, 3> u{};
    for (int i = 0; i < 3; ++i) {
      u[i] = unit_clamp((kp.p_C[k][i] - cfg.workspace_min[i]) / (cfg.workspace_max[i] - cfg.workspace_min[i]));
    }
    encode(u, cfg, out);
    out.push_back(kp.conf_C[k]);
  }
  return out;
}

std::vector<double> assemble_imu_input(const synth::ImuFrame& frame, const FeatureConfig& cfg) {
  const so3::RotMat& root = frame.R[0];
  if ((root.transpose() * root - so3::RotMat::Identity()).norm() > 1e-3) {
    throw BadImuFrame("pelvis IMU rotation is not orthonormal");
  }
  std::vector<double> out;
  out.reserve(input_width(NetKind::kIENet, cfg));
  for (int i = 0; i < body::kNumImus; ++i) {
    // Sensor-frame specific force -> world -> pelvis frame.
    const Vec3 a = root.transpose() * (frame.R[i] * frame.acc[i]);
    std::array<double, 3> u{};
    for (int c = 0; c < 3; ++c) u[c] = signed_unit(a[c], cfg.acc_scale);
    encode(u, cfg, out);
  }
  for (int i = 0; i < body::kNumImus; ++i) {
    const so3::Rot6D r = so3::to6d(root.transpose() * frame.R[i]);
    out.insert(out.end(), r.data(), r.data() + 6);
  }
  return out;
}

std::vector<double> assemble_kenet_input(std::span<const Vec3> p_R, std::span<const double> conf,
                                         const FeatureConfig& cfg) {
  if (p_R.size() != body::kNumCoco || conf.size() != body::kNumCoco) {
    throw ShapeError("assemble_kenet_input: expected 17 keypoints");
  }
  Vec3 lo = p_R[0], hi = p_R[0];
  for (const auto& p : p_R) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  std::vector<double> out;
  out.reserve(input_width(NetKind::kKENet, cfg));
  for (std::size_t k = 0; k < p_R.size(); ++k) {
    std::array<double, 3> u{};
    for (int c = 0; c < 3; ++c) {
      if (!cfg.canonical) {
        u[c] = signed_unit(p_R[k][c], cfg.joint_range);
      } else {
        const double range = hi[c] - lo[c];
        u[c] = range < 1e-9 ? 0.5 : (p_R[k][c] - lo[c]) / range;
      }
    }
    encode(u, cfg, out);
    out.push_back(conf[k]);
  }
  return out;
}

std::vector<double> assemble_fusion_input(const JointVec& j_imu, const JointVec& j_vis, std::span<const double> conf,
                                          std::span<const double> beta, const Vec3& T, const Vec3& dT,
                                          std::span<const double> imu_x, const FeatureConfig& cfg) {
  if (conf.size() != body::kNumCoco || beta.size() != body::kShapeDim ||
      imu_x.size() != input_width(NetKind::kIENet, cfg)) {
    throw ShapeError("assemble_fusion_input: member width mismatch");
  }
  std::vector<double> out;
  out.reserve(input_width(NetKind::kFusion, cfg));
  encode_joints(j_imu, cfg, out);
  encode_joints(j_vis, cfg, out);
  out.insert(out.end(), conf.begin(), conf.end());
  out.insert(out.end(), beta.begin(), beta.end());
  encode_translation(T, dT, cfg, out);
  out.insert(out.end(), imu_x.begin(), imu_x.end());
  return out;
}

std::vector<double> assemble_refine_input(std::span<const double> phi, const Vec3& T, const Vec3& dT,
                                          std::span<const double> q, std::span<const double> beta,
                                          const FeatureConfig& cfg) {
  if (phi.size() != 72 || q.size() != 2 || beta.size() != body::kShapeDim) {
    throw ShapeError("assemble_refine_input: member width mismatch");
  }
  std::vector<double> out;
  out.reserve(input_width(NetKind::kRefine, cfg));
  out.insert(out.end(), phi.begin(), phi.end());
  encode_translation(T, dT, cfg, out);
  out.insert(out.end(), q.begin(), q.end());
  out.insert(out.end(), beta.begin(), beta.end());
  return out;
}

// ---------------------------------------------------------------------------
// PoserNets and the streaming pipeline

PoserNets PoserNets::create(std::size_t hidden, std::size_t layers, const FeatureConfig& cfg, std::uint64_t seed) {
  PoserNets n;
  for (NetKind k : kAllNets) {
    const NetDims dims{input_width(k, cfg), hidden, layers, 2 * hidden, output_width(k)};
    n.get(k) = SequenceNet(std::string(net_name(k)), dims, mix_seed(seed, static_cast<std::uint64_t>(k) + 300));
  }
  return n;
}

SequenceNet& PoserNets::get(NetKind kind) {
  switch (kind) {
    case NetKind::kTrans: return trans;
    case NetKind::kIENet: return ienet;
    case NetKind::kKENet: return kenet;
    case NetKind::kFusion: return fusion;
    case NetKind::kRefine: return refine;
  }
  return trans;
}

const SequenceNet& PoserNets::get(NetKind kind) const { return const_cast<PoserNets*>(this)->get(kind); }

FrameInput make_frame_input(const stereo::StereoCalib& calib, const stereo::StereoObservation& obs,
                            const synth::ImuFrame& imu) {
  FrameInput f;
  f.kp = stereo::reconstruct_world(calib, obs);
  f.p_R = stereo::fuse_root_relative(obs);
  f.imu = imu;
  return f;
}

HeadOutput decode_pose_head(std::span<const double> y, const HeadOutput& base, const FeatureConfig& cfg) {
  if (y.size() != output_width(NetKind::kFusion)) throw ShapeError("decode_pose_head: expected 80 outputs");
  HeadOutput h;
  for (std::size_t i = 0; i < 72; ++i) h.phi[i] = base.phi[i] + y[i];
  for (int c = 0; c < 3; ++c) {
    h.T[c] = base.T[c] + cfg.trans_unit * y[72 + c];
    h.dT[c] = base.dT[c] + cfg.delta_unit * y[75 + c];
  }
  h.logit = {base.logit[0] + y[78], base.logit[1] + y[79]};
  return h;
}

so3::AxisAngle compose_root(const so3::RotMat& pelvis_imu, const Vec3& residual) {
  return so3::log_map(pelvis_imu * so3::exp_map(residual));
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

PoseEstimate finalize_pose(const HeadOutput& h, const so3::RotMat& pelvis) {
  PoseEstimate e;
  e.phi = body::pose_from_span(h.phi);
  e.phi[0] = compose_root(pelvis, e.phi[0]);
  e.T = h.T;
  e.dT = h.dT;
  e.q = {sigmoid(h.logit[0]), sigmoid(h.logit[1])};
  return e;
}

template <class Scalar>
Pipeline<Scalar>::Pipeline(const PoserNets& nets, const FeatureConfig& cfg, const body::BodyShape& beta,
                           bool use_refine)
    : cfg_(cfg),
      use_refine_(use_refine),
      trans_(nets.trans),
      ienet_(nets.ienet),
      kenet_(nets.kenet),
      fusion_(nets.fusion),
      refine_(use_refine ? Streamer<Scalar>(nets.refine) : Streamer<Scalar>()) {
  cfg_.validate();
  for (int i = 0; i < body::kShapeDim; ++i) beta_[i] = beta[i];
  for (NetKind k : kAllNets) {
    if (k == NetKind::kRefine && !use_refine) continue;
    if (nets.get(k).dims().in != input_width(k, cfg_) || nets.get(k).dims().out != output_width(k)) {
      throw ConfigError(std::string(net_name(k)) + ": checkpoint dimensions do not match the feature settings");
    }
  }
}

template <class Scalar>
void Pipeline<Scalar>::reset() {
  for (auto* s : {&trans_, &ienet_, &kenet_, &fusion_, &refine_}) s->reset();
}

template <class Scalar>
std::vector<double> Pipeline<Scalar>::run(Streamer<Scalar>& s, const std::vector<double>& x) {
  xs_.assign(x.begin(), x.end());
  ys_.assign(s.out(), Scalar(0));
  s.step(xs_, ys_);
  return {ys_.begin(), ys_.end()};
}

template <class Scalar>
PoseEstimate Pipeline<Scalar>::step(const FrameInput& frame) {
  const auto yt = run(trans_, assemble_trans_input(frame.kp, cfg_));
  for (int c = 0; c < 3; ++c) {
    mid_.T_trans[c] = cfg_.trans_unit * yt[c];
    mid_.dT_trans[c] = cfg_.delta_unit * yt[3 + c];
  }
  const auto imu_x = assemble_imu_input(frame.imu, cfg_);
  const auto yi = run(ienet_, imu_x);
  std::copy(yi.begin(), yi.end(), mid_.j_imu.begin());
  const auto yk = run(kenet_, assemble_kenet_input(frame.p_R, frame.kp.conf_C, cfg_));
  std::copy(yk.begin(), yk.end(), mid_.j_vis.begin());

  HeadOutput base;
  base.T = mid_.T_trans;
  base.dT = mid_.dT_trans;
  const auto yf = run(fusion_, assemble_fusion_input(mid_.j_imu, mid_.j_vis, frame.kp.conf_C, beta_, mid_.T_trans,
                                                     mid_.dT_trans, imu_x, cfg_));
  const HeadOutput fused = decode_pose_head(yf, base, cfg_);
  mid_.fused = finalize_pose(fused, frame.imu.R[0]);
  if (!use_refine_) return mid_.fused;

  const std::array<double, 2> q = mid_.fused.q;
  const auto yr = run(refine_, assemble_refine_input(fused.phi, fused.T, fused.dT, q, beta_, cfg_));
  return finalize_pose(decode_pose_head(yr, fused, cfg_), frame.imu.R[0]);
}

template class Pipeline<float>;
template class Pipeline<double>;

}  // namespace svi::nets
