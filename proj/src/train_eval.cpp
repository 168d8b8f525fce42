#include "svi/train_eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>

#include "svi/errors.hpp"
#include "svi/rng.hpp"
#include "svi/text_io.hpp"

namespace svi::train {

using ad::Tensor;
using nets::NetKind;
using so3::Vec3;

namespace {

// ---------------------------------------------------------------------------
// Config keys

struct DoubleKey {
  const char* key;
  double TrainConfig::*field;
};
struct SizeKey {
  const char* key;
  std::size_t TrainConfig::*field;
};
struct WeightKey {
  const char* key;
  double loss::LossWeights::*field;
};
struct FlagKey {
  const char* key;
  bool Ablation::*field;
};

constexpr DoubleKey kDoubleKeys[] = {{"lr", &TrainConfig::lr},
                                     {"beta1", &TrainConfig::beta1},
                                     {"beta2", &TrainConfig::beta2},
                                     {"adam_eps", &TrainConfig::adam_eps},
                                     {"grad_clip", &TrainConfig::grad_clip},
                                     {"clip_seconds", &TrainConfig::clip_seconds}};
constexpr SizeKey kSizeKeys[] = {{"window", &TrainConfig::window}, {"batch", &TrainConfig::batch},
                                 {"epochs", &TrainConfig::epochs}, {"hidden", &TrainConfig::hidden},
                                 {"layers", &TrainConfig::layers}, {"clips", &TrainConfig::clips}};
constexpr WeightKey kWeightKeys[] = {{"w_phi", &loss::LossWeights::phi},
                                     {"w_T", &loss::LossWeights::T},
                                     {"w_dT", &loss::LossWeights::dT},
                                     {"w_contact", &loss::LossWeights::contact},
                                     {"w_footskate", &loss::LossWeights::footskate},
                                     {"w_jerk", &loss::LossWeights::jerk},
                                     {"fk_balance", &loss::LossWeights::fk_balance}};
constexpr FlagKey kFlagKeys[] = {{"no_shape", &Ablation::no_shape},         {"no_pe", &Ablation::no_pe},
                                 {"no_refine", &Ablation::no_refine},       {"no_jerk", &Ablation::no_jerk},
                                 {"no_cycle", &Ablation::no_cycle},         {"no_footskate", &Ablation::no_footskate},
                                 {"no_canonical", &Ablation::no_canonical}};

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw ConfigError(std::string(key) + ": expected 0/1 or true/false");
}

std::string ckpt_path(const std::string& dir, NetKind k) {
  return (std::filesystem::path(dir) / (std::string(nets::net_name(k)) + ".ckpt")).string();
}

std::string config_path(const std::string& dir) { return (std::filesystem::path(dir) / "train.cfg").string(); }

// ---------------------------------------------------------------------------
// Optimizer

class Adam {
 public:
  Adam(std::vector<Tensor> params, const TrainConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step() {
    double sq = 0.0;
    for (const auto& p : params_) {
      if (!p.has_grad()) continue;
      for (double g : p.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    const double clip = norm > cfg_.grad_clip ? cfg_.grad_clip / norm : 1.0;
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (!params_[i].has_grad()) continue;
      const auto g = params_[i].grad();
      auto w = params_[i].mutable_values();
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double gk = g[k] * clip;
        m_[i][k] = cfg_.beta1 * m_[i][k] + (1.0 - cfg_.beta1) * gk;
        v_[i][k] = cfg_.beta2 * v_[i][k] + (1.0 - cfg_.beta2) * gk * gk;
        w[k] -= cfg_.lr * (m_[i][k] / bc1) / (std::sqrt(v_[i][k] / bc2) + cfg_.adam_eps);
      }
    }
  }

 private:
  std::vector<Tensor> params_;
  const TrainConfig& cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Per-clip training tensors (row-major, F rows)

struct Rows {
  std::size_t width = 0;
  std::vector<double> data;

  void push(std::span<const double> row) {
    if (width == 0) width = row.size();
    if (row.size() != width) throw ShapeError("row width mismatch");
    data.insert(data.end(), row.begin(), row.end());
  }
  std::span<const double> row(std::size_t t) const { return std::span<const double>(data).subspan(t * width, width); }
  Tensor window(std::size_t start, std::size_t len) const {
    return Tensor::matrix(len, width,
                          std::vector<double>(data.begin() + static_cast<std::ptrdiff_t>(start * width),
                                              data.begin() + static_cast<std::ptrdiff_t>((start + len) * width)));
  }
};

struct Prepared {
  std::size_t frames = 0;
  Rows x_trans, x_imu, x_kenet;
  Rows conf;
  Rows T_gt, dT_gt, J_gt, phi_gt, q_gt, R0;
  Tensor beta;                         // 1 x 10, true shape (losses)
  std::array<double, 10> beta_in{};    // what the networks see
  Rows x_net, base;                    // stage 2/3 input and head base
};

Prepared prepare(const Clip& clip, const TrainConfig& cfg, const nets::FeatureConfig& fc,
                 const stereo::StereoCalib& calib, const body::BodyTemplate& tpl) {
  Prepared p;
  const auto& gt = clip.gt;
  p.frames = gt.size();
  std::vector<double> beta(gt.beta.data(), gt.beta.data() + body::kShapeDim);
  p.beta = Tensor::matrix(1, body::kShapeDim, beta);
  for (int i = 0; i < body::kShapeDim; ++i) p.beta_in[i] = cfg.flags.no_shape ? 0.0 : beta[i];
  for (std::size_t t = 0; t < p.frames; ++t) {
    const auto in = nets::make_frame_input(calib, clip.stereo[t], clip.imu[t]);
    p.x_trans.push(nets::assemble_trans_input(in.kp, fc));
    p.x_imu.push(nets::assemble_imu_input(in.imu, fc));
    p.x_kenet.push(nets::assemble_kenet_input(in.p_R, in.kp.conf_C, fc));
    p.conf.push(in.kp.conf_C);

    const so3::RotMat& R0 = clip.imu[t].R[0];
    body::Pose res = gt.phi[t];
    res[0] = so3::log_map(R0.transpose() * so3::exp_map(gt.phi[t][0]));
    std::array<double, 72> phi{};
    body::pose_to_span(res, phi);
    p.phi_gt.push(phi);

    body::Pose canon = gt.phi[t];
    if (fc.canonical) canon[0] = Vec3::Zero();
    const auto js = body::fk(tpl, canon, gt.beta);
    std::array<double, 72> j{};
    for (int k = 0; k < body::kNumJoints; ++k) {
      for (int c = 0; c < 3; ++c) j[3 * k + c] = js.joints[k][c];
    }
    p.J_gt.push(j);

    const Vec3 dT = gt.delta_T(t);
    p.T_gt.push(std::array<double, 3>{gt.T[t].x(), gt.T[t].y(), gt.T[t].z()});
    p.dT_gt.push(std::array<double, 3>{dT.x(), dT.y(), dT.z()});
    p.q_gt.push(std::array<double, 2>{static_cast<double>(gt.contacts[t][0]), static_cast<double>(gt.contacts[t][1])});
    std::array<double, 9> r{};
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) r[3 * a + b] = R0(a, b);
    }
    p.R0.push(r);
  }
  return p;
}

std::vector<double> stream(const nets::SequenceNet& net, const Rows& x) {
  nets::Streamer<double> s(net);
  std::vector<double> out(x.data.size() / x.width * net.dims().out);
  for (std::size_t t = 0; t * x.width < x.data.size(); ++t) {
    s.step(x.row(t), std::span<double>(out).subspan(t * net.dims().out, net.dims().out));
  }
  return out;
}

void flatten_head(const nets::HeadOutput& h, std::vector<double>& out) {
  out.insert(out.end(), h.phi.begin(), h.phi.end());
  for (int c = 0; c < 3; ++c) out.push_back(h.T[c]);
  for (int c = 0; c < 3; ++c) out.push_back(h.dT[c]);
  out.push_back(h.logit[0]);
  out.push_back(h.logit[1]);
}

std::vector<double> batch(const nets::SequenceNet& net, const Rows& x) {
  const Tensor y = net.forward(x.window(0, x.data.size() / x.width));
  return {y.values().begin(), y.values().end()};
}

using Runner = std::vector<double> (*)(const nets::SequenceNet&, const Rows&);

// Stage-1 networks over a whole clip: fusion inputs and the head base that
// fusion's residuals are added to.
struct Cascade {
  Rows fusion_x;
  std::vector<nets::HeadOutput> bases;
};

Cascade run_stage1(const Rows& x_trans, const Rows& x_imu, const Rows& x_kenet, const Rows& conf,
                   std::span<const double> beta_in, const nets::PoserNets& n, const nets::FeatureConfig& fc,
                   Runner run) {
  const auto yt = run(n.trans, x_trans);
  const auto yi = run(n.ienet, x_imu);
  const auto yk = run(n.kenet, x_kenet);
  const std::size_t F = x_trans.data.size() / x_trans.width;
  Cascade c;
  c.bases.resize(F);
  for (std::size_t t = 0; t < F; ++t) {
    nets::HeadOutput& b = c.bases[t];
    for (int k = 0; k < 3; ++k) {
      b.T[k] = fc.trans_unit * yt[t * 6 + k];
      b.dT[k] = fc.delta_unit * yt[t * 6 + 3 + k];
    }
    nets::JointVec ji{}, jk{};
    std::copy_n(yi.begin() + static_cast<std::ptrdiff_t>(t * 72), 72, ji.begin());
    std::copy_n(yk.begin() + static_cast<std::ptrdiff_t>(t * 72), 72, jk.begin());
    c.fusion_x.push(nets::assemble_fusion_input(ji, jk, conf.row(t), beta_in, b.T, b.dT, x_imu.row(t), fc));
  }
  return c;
}

std::array<double, 2> contact_prob(const nets::HeadOutput& h) {
  return {1.0 / (1.0 + std::exp(-h.logit[0])), 1.0 / (1.0 + std::exp(-h.logit[1]))};
}

// Fills x_net/base for stage 2 (fusion) or 3 (refine) from frozen networks.
void attach_stage_inputs(Prepared& p, int stage, const nets::PoserNets& n, const nets::FeatureConfig& fc) {
  Cascade c = run_stage1(p.x_trans, p.x_imu, p.x_kenet, p.conf, p.beta_in, n, fc, stream);
  p.x_net = Rows{};
  p.base = Rows{};
  if (stage == 2) {
    p.x_net = std::move(c.fusion_x);
    for (const auto& b : c.bases) {
      std::vector<double> v;
      flatten_head(b, v);
      p.base.push(v);
    }
    return;
  }
  const auto yf = stream(n.fusion, c.fusion_x);
  for (std::size_t t = 0; t < p.frames; ++t) {
    const auto fused = nets::decode_pose_head(std::span<const double>(yf).subspan(t * 80, 80), c.bases[t], fc);
    p.x_net.push(nets::assemble_refine_input(fused.phi, fused.T, fused.dT, contact_prob(fused), p.beta_in, fc));
    std::vector<double> v;
    flatten_head(fused, v);
    p.base.push(v);
  }
}

// ---------------------------------------------------------------------------
// Losses per window

Tensor translation_loss(const Tensor& T, const Tensor& dT, const Tensor& T_gt, const Tensor& dT_gt,
                        const TrainConfig& cfg) {
  const auto& w = cfg.weights;
  const Tensor lt = loss::l2(T, T_gt);
  const Tensor ld = cfg.flags.no_cycle ? loss::l2(ad::slice_rows(dT, 1, dT.rows()), ad::slice_rows(dT_gt, 1, dT.rows()))
                                       : loss::cycle(dT, T, dT_gt);
  return ad::add(ad::scale(lt, w.T), ad::scale(ld, w.dT));
}

// Row-wise T (W x 3) tiled over the 24 joints (W x 72).
Tensor tile_joints(const Tensor& T) {
  static const Tensor tile = [] {
    std::vector<double> m(3 * 72, 0.0);
    for (int j = 0; j < body::kNumJoints; ++j) {
      for (int c = 0; c < 3; ++c) m[c * 72 + 3 * j + c] = 1.0;
    }
    return Tensor::matrix(3, 72, std::move(m));
  }();
  return ad::matmul(T, tile);
}

struct Window {
  std::size_t clip = 0;
  std::size_t start = 0;
};

Tensor pose_loss(const nets::SequenceNet& net, const Prepared& p, const Window& w, std::size_t len,
                 const TrainConfig& cfg, const nets::FeatureConfig& fc, const body::BodyTemplate& tpl) {
  const Tensor out = net.forward(p.x_net.window(w.start, len));
  const Tensor base = p.base.window(w.start, len);
  const Tensor phi = ad::add(ad::slice_cols(out, 0, 72), ad::slice_cols(base, 0, 72));
  const Tensor T = ad::add(ad::scale(ad::slice_cols(out, 72, 75), fc.trans_unit), ad::slice_cols(base, 72, 75));
  const Tensor dT = ad::add(ad::scale(ad::slice_cols(out, 75, 78), fc.delta_unit), ad::slice_cols(base, 75, 78));
  const Tensor q = ad::sigmoid(ad::add(ad::slice_cols(out, 78, 80), ad::slice_cols(base, 78, 80)));
  const Tensor T_gt = p.T_gt.window(w.start, len);
  const Tensor q_gt = p.q_gt.window(w.start, len);

  loss::LossTerms terms;
  terms.phi = loss::rotation_fk(tpl, phi, p.phi_gt.window(w.start, len), p.beta, cfg.weights.fk_balance);
  terms.contact = loss::contact_bce(q, q_gt);
  const bool need_joints = !cfg.flags.no_footskate || !cfg.flags.no_jerk;
  Tensor joints;
  if (need_joints) joints = body::rotate_rows(p.R0.window(w.start, len), body::fk_joints(tpl, phi, p.beta));
  if (!cfg.flags.no_footskate) terms.footskate = loss::foot_skate(tpl, joints, dT, q_gt);
  if (!cfg.flags.no_jerk) terms.jerk = loss::jerk(ad::add(joints, tile_joints(T)));
  loss::LossWeights weights = cfg.weights;
  weights.T = weights.dT = 0.0;  // translation terms added below
  return ad::add(loss::total(terms, weights), translation_loss(T, dT, T_gt, p.dT_gt.window(w.start, len), cfg));
}

std::vector<Window> epoch_windows(const std::vector<Prepared>& data, std::size_t len, Rng& rng) {
  std::vector<Window> out;
  for (std::size_t c = 0; c < data.size(); ++c) {
    const std::size_t F = data[c].frames;
    if (F < len) continue;
    const std::size_t count = F / len;
    const std::size_t slack = F - count * len;
    std::size_t start = slack == 0 ? 0 : rng.below(slack + 1);
    for (std::size_t k = 0; k < count; ++k, start += len) out.push_back({c, start});
  }
  for (std::size_t i = out.size(); i > 1; --i) std::swap(out[i - 1], out[rng.below(i)]);
  return out;
}

void require_ckpt(const std::string& dir, NetKind k, int stage) {
  if (!std::filesystem::exists(ckpt_path(dir, k))) {
    throw StageOrderError("stage " + std::to_string(stage) + " needs the " + std::string(nets::net_name(k)) +
                          " checkpoint in " + dir);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
  if (stage < 1 || stage > 3) throw ConfigError("stage must be 1, 2 or 3");
  if (!(lr > 0) || !(grad_clip > 0) || !(adam_eps > 0)) throw ConfigError("lr, grad_clip and adam_eps must be positive");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("Adam betas must be in [0, 1)");
  if (window < 4) throw ConfigError("window must be at least 4 frames");
  if (batch == 0 || hidden == 0 || layers == 0) throw ConfigError("batch, hidden and layers must be positive");
  if (clips == 0 || !(clip_seconds >= 1.0)) throw ConfigError("need at least one clip of at least 1 s");
  if (clip_seconds * 60.0 < static_cast<double>(window)) throw ConfigError("clips are shorter than the window");
  weights.validate();
}

nets::FeatureConfig TrainConfig::features() const {
  nets::FeatureConfig fc;
  fc.use_pe = !flags.no_pe;
  fc.canonical = !flags.no_canonical;
  return fc;
}

std::string TrainConfig::serialize() const {
  std::string out = "stage = " + std::to_string(stage) + "\n";
  for (const auto& k : kDoubleKeys) out += std::string(k.key) + " = " + text::format_double(this->*k.field) + "\n";
  for (const auto& k : kSizeKeys) out += std::string(k.key) + " = " + std::to_string(this->*k.field) + "\n";
  out += "seed = " + std::to_string(seed) + "\n";
  out += "data_seed = " + std::to_string(data_seed) + "\n";
  for (const auto& k : kWeightKeys) out += std::string(k.key) + " = " + text::format_double(weights.*k.field) + "\n";
  for (const auto& k : kFlagKeys) out += std::string(k.key) + " = " + (flags.*k.field ? "1" : "0") + "\n";
  return out;
}

TrainConfig TrainConfig::parse(std::string_view text) {
  TrainConfig c;
  for (const auto& [key, value] : text::parse_key_values(text)) {
    bool known = false;
    try {
      if (key == "stage") {
        c.stage = static_cast<int>(text::parse_int(value));
        known = true;
      } else if (key == "seed") {
        c.seed = text::parse_u64(value);
        known = true;
      } else if (key == "data_seed") {
        c.data_seed = text::parse_u64(value);
        known = true;
      }
      for (const auto& k : kDoubleKeys) {
        if (key == k.key) c.*k.field = text::parse_double(value), known = true;
      }
      for (const auto& k : kSizeKeys) {
        if (key == k.key) {
          const long long v = text::parse_int(value);
          if (v < 0) throw ConfigError(key + ": must be nonnegative");
          c.*k.field = static_cast<std::size_t>(v);
          known = true;
        }
      }
      for (const auto& k : kWeightKeys) {
        if (key == k.key) c.weights.*k.field = text::parse_double(value), known = true;
      }
      for (const auto& k : kFlagKeys) {
        if (key == k.key) c.flags.*k.field = parse_bool(key, value), known = true;
      }
    } catch (const FormatError& e) {
      throw ConfigError(key + ": " + e.what());
    }
    if (!known) throw ConfigError("unknown training config key '" + key + "'");
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Data

NoiseMode parse_noise(std::string_view name) {
  if (name == "ideal") return NoiseMode::kIdeal;
  if (name == "sigma-5") return NoiseMode::kSigma5;
  if (name == "sigma-15") return NoiseMode::kSigma15;
  if (name == "virtual-stereo") return NoiseMode::kVirtualStereo;
  throw ConfigError("unknown noise mode '" + std::string(name) + "' (ideal, sigma-5, sigma-15, virtual-stereo)");
}

std::string_view noise_name(NoiseMode mode) {
  switch (mode) {
    case NoiseMode::kIdeal: return "ideal";
    case NoiseMode::kSigma5: return "sigma-5";
    case NoiseMode::kSigma15: return "sigma-15";
    case NoiseMode::kVirtualStereo: return "virtual-stereo";
  }
  return "?";
}

synth::NoiseSpec noise_spec(NoiseMode mode, std::uint64_t seed) {
  synth::NoiseSpec n;
  n.seed = seed;
  switch (mode) {
    case NoiseMode::kIdeal: break;
    case NoiseMode::kSigma5: n.keypoint_sigma_world = 0.05; break;
    case NoiseMode::kSigma15: n.keypoint_sigma_world = 0.15; break;
    case NoiseMode::kVirtualStereo:
      n.pixel_sigma = 1.0;
      n.conf_dropout = 0.05;
      n.root_kp_sigma = 0.02;
      n.imu_acc_sigma = 0.1;
      n.imu_rot_sigma = 0.01;
      break;
  }
  return n;
}

body::BodyShape random_shape(std::uint64_t seed, double max_norm) {
  Rng rng(seed);
  body::BodyShape b;
  for (int i = 0; i < body::kShapeDim; ++i) b[i] = rng.normal(0.0, 0.6);
  const double target = max_norm * std::sqrt(rng.uniform());
  return b.norm() > 1e-12 ? body::BodyShape(b * (target / b.norm())) : b;
}

std::vector<synth::MotionSequence> make_motions(std::size_t n, double seconds, std::uint64_t seed) {
  constexpr synth::MotionKind kinds[] = {synth::MotionKind::kWalkCircle, synth::MotionKind::kIdleSway,
                                         synth::MotionKind::kSquatJump, synth::MotionKind::kFigureEight};
  std::vector<synth::MotionSequence> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t s = mix_seed(seed, i);
    out.push_back(synth::generate_motion(kinds[i % 4], seconds, random_shape(mix_seed(s, 1)), s));
  }
  return out;
}

Clip observe(const synth::MotionSequence& motion, NoiseMode mode, std::uint64_t noise_seed,
             const stereo::StereoCalib& calib) {
  Clip c;
  c.gt = motion;
  const auto noise = noise_spec(mode, noise_seed);
  c.stereo = synth::synth_stereo(motion, calib, noise);
  c.imu = synth::synth_imu(motion, noise);
  return c;
}

std::vector<Clip> training_clips(const TrainConfig& config, const stereo::StereoCalib& calib) {
  const auto motions = make_motions(config.clips, config.clip_seconds, config.data_seed);
  std::vector<Clip> clips;
  clips.reserve(motions.size());
  for (std::size_t i = 0; i < motions.size(); ++i) {
    clips.push_back(observe(motions[i], NoiseMode::kIdeal, mix_seed(config.data_seed, 900 + i), calib));
  }
  return clips;
}

// ---------------------------------------------------------------------------
// Training

StageReport train_stage(const TrainConfig& config, const std::vector<Clip>& clips, const std::string& ckpt_dir,
                        const stereo::StereoCalib& calib) {
  config.validate();
  if (clips.empty()) throw ConfigError("no training clips");
  if (config.stage == 3 && config.flags.no_refine) throw ConfigError("stage 3 trains the refinement network, which no_refine disables");
  const auto& tpl = body::default_template();
  const nets::FeatureConfig fc = config.features();
  std::filesystem::create_directories(ckpt_dir);

  nets::PoserNets n = nets::PoserNets::create(config.hidden, config.layers, fc, config.seed);
  if (config.stage >= 2) {
    for (NetKind k : {NetKind::kTrans, NetKind::kIENet, NetKind::kKENet}) require_ckpt(ckpt_dir, k, config.stage);
    if (config.stage == 3) require_ckpt(ckpt_dir, NetKind::kFusion, 3);
    const int frozen = config.stage == 3 ? 4 : 3;
    for (int i = 0; i < frozen; ++i) {
      const NetKind k = nets::kAllNets[static_cast<std::size_t>(i)];
      n.get(k) = nets::SequenceNet::load(ckpt_path(ckpt_dir, k));
      if (n.get(k).dims().in != nets::input_width(k, fc)) {
        throw ConfigError(std::string(nets::net_name(k)) + " checkpoint was trained with different feature settings");
      }
    }
  }

  std::vector<Prepared> data;
  data.reserve(clips.size());
  for (const auto& c : clips) {
    data.push_back(prepare(c, config, fc, calib, tpl));
    if (config.stage >= 2) attach_stage_inputs(data.back(), config.stage, n, fc);
  }

  std::vector<NetKind> trained;
  if (config.stage == 1) {
    trained = {NetKind::kTrans, NetKind::kIENet, NetKind::kKENet};
  } else {
    trained = {config.stage == 2 ? NetKind::kFusion : NetKind::kRefine};
  }
  std::vector<Adam> opts;
  for (NetKind k : nets::kAllNets) n.get(k).set_trainable(false);
  for (NetKind k : trained) {
    n.get(k).set_trainable(true);
    opts.emplace_back(n.get(k).parameters(), config);
  }

  Rng rng(mix_seed(config.seed, 500 + static_cast<std::uint64_t>(config.stage)));
  StageReport report;
  report.stage = config.stage;
  ad::GradRecorder rec;
  const double inv_batch = 1.0 / static_cast<double>(config.batch);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto windows = epoch_windows(data, config.window, rng);
    if (windows.empty()) throw ConfigError("every clip is shorter than the training window");
    double epoch_sum = 0.0;
    std::size_t epoch_steps = 0;
    for (std::size_t b0 = 0; b0 < windows.size(); b0 += config.batch) {
      const std::size_t b1 = std::min(windows.size(), b0 + config.batch);
      double step_loss = 0.0;
      for (std::size_t i = 0; i < trained.size(); ++i) {
        opts[i].zero_grad();
        const auto& net = n.get(trained[i]);
        for (std::size_t w = b0; w < b1; ++w) {
          const Prepared& p = data[windows[w].clip];
          const std::size_t s = windows[w].start, len = config.window;
          Tensor L;
          {
            ad::RecordScope scope(rec);
            switch (trained[i]) {
              case NetKind::kTrans: {
                const Tensor out = net.forward(p.x_trans.window(s, len));
                L = translation_loss(ad::scale(ad::slice_cols(out, 0, 3), fc.trans_unit),
                                     ad::scale(ad::slice_cols(out, 3, 6), fc.delta_unit), p.T_gt.window(s, len),
                                     p.dT_gt.window(s, len), config);
                break;
              }
              case NetKind::kIENet:
                L = loss::l2(net.forward(p.x_imu.window(s, len)), p.J_gt.window(s, len));
                break;
              case NetKind::kKENet:
                L = loss::l2(net.forward(p.x_kenet.window(s, len)), p.J_gt.window(s, len));
                break;
              default: L = pose_loss(net, p, windows[w], len, config, fc, tpl); break;
            }
            L = ad::scale(L, inv_batch);
            rec.backward(L);
          }
          rec.clear();
          step_loss += L.item();
        }
        opts[i].step();
      }
      report.step_losses.push_back(step_loss);
      epoch_sum += step_loss;
      ++epoch_steps;
    }
    report.final_loss = epoch_sum / static_cast<double>(epoch_steps);
  }
  report.steps = report.step_losses.size();

  for (NetKind k : trained) n.get(k).save(ckpt_path(ckpt_dir, k));
  text::write_file(config_path(ckpt_dir), config.serialize());
  return report;
}

nets::PoserNets load_nets(const std::string& ckpt_dir, bool need_refine) {
  nets::PoserNets n;
  for (NetKind k : nets::kAllNets) {
    if (k == NetKind::kRefine && !need_refine && !std::filesystem::exists(ckpt_path(ckpt_dir, k))) continue;
    require_ckpt(ckpt_dir, k, k == NetKind::kRefine ? 3 : (k == NetKind::kFusion ? 2 : 1));
    n.get(k) = nets::SequenceNet::load(ckpt_path(ckpt_dir, k));
  }
  return n;
}

TrainConfig load_run_config(const std::string& ckpt_dir) {
  const std::string path = config_path(ckpt_dir);
  if (!std::filesystem::exists(path)) throw StageOrderError("no training config in " + ckpt_dir);
  return TrainConfig::parse(text::read_file(path));
}

// ---------------------------------------------------------------------------
// Evaluation

Prediction infer(const nets::PoserNets& n, const nets::FeatureConfig& cfg, const Clip& clip, bool use_refine,
                 bool zero_shape, const stereo::StereoCalib& calib) {
  const body::BodyShape beta = zero_shape ? body::BodyShape::Zero() : clip.gt.beta;
  nets::Pipeline<double> pipe(n, cfg, beta, use_refine);
  Prediction p;
  const std::size_t F = clip.stereo.size();
  if (clip.imu.size() != F) throw ShapeError("infer: stereo and IMU frame counts differ");
  p.phi.reserve(F);
  for (std::size_t t = 0; t < F; ++t) {
    const auto est = pipe.step(nets::make_frame_input(calib, clip.stereo[t], clip.imu[t]));
    p.phi.push_back(est.phi);
    p.T.push_back(est.T);
    p.q.push_back(est.q);
  }
  return p;
}

Prediction infer_batch(const nets::PoserNets& n, const nets::FeatureConfig& cfg, const Clip& clip, bool use_refine,
                       bool zero_shape, const stereo::StereoCalib& calib) {
  const std::size_t F = clip.stereo.size();
  if (clip.imu.size() != F) throw ShapeError("infer_batch: stereo and IMU frame counts differ");
  if (F == 0) return {};
  std::array<double, body::kShapeDim> beta{};
  if (!zero_shape) std::copy_n(clip.gt.beta.data(), body::kShapeDim, beta.begin());
  Rows x_trans, x_imu, x_kenet, conf;
  for (std::size_t t = 0; t < F; ++t) {
    const auto in = nets::make_frame_input(calib, clip.stereo[t], clip.imu[t]);
    x_trans.push(nets::assemble_trans_input(in.kp, cfg));
    x_imu.push(nets::assemble_imu_input(in.imu, cfg));
    x_kenet.push(nets::assemble_kenet_input(in.p_R, in.kp.conf_C, cfg));
    conf.push(in.kp.conf_C);
  }
  const Cascade c = run_stage1(x_trans, x_imu, x_kenet, conf, beta, n, cfg, batch);
  const auto yf = batch(n.fusion, c.fusion_x);
  std::vector<nets::HeadOutput> heads(F);
  Rows x_refine;
  for (std::size_t t = 0; t < F; ++t) {
    heads[t] = nets::decode_pose_head(std::span<const double>(yf).subspan(t * 80, 80), c.bases[t], cfg);
    if (use_refine) {
      x_refine.push(nets::assemble_refine_input(heads[t].phi, heads[t].T, heads[t].dT, contact_prob(heads[t]), beta, cfg));
    }
  }
  if (use_refine) {
    const auto yr = batch(n.refine, x_refine);
    for (std::size_t t = 0; t < F; ++t) {
      heads[t] = nets::decode_pose_head(std::span<const double>(yr).subspan(t * 80, 80), heads[t], cfg);
    }
  }
  Prediction p;
  for (std::size_t t = 0; t < F; ++t) {
    const auto est = nets::finalize_pose(heads[t], clip.imu[t].R[0]);
    p.phi.push_back(est.phi);
    p.T.push_back(est.T);
    p.q.push_back(est.q);
  }
  return p;
}

metrics::MetricReport pooled_metrics(const std::vector<Prediction>& preds, const std::vector<Clip>& clips) {
  if (preds.size() != clips.size()) throw ShapeError("pooled_metrics: prediction and clip counts differ");
  metrics::MetricReport r;
  double w_frames = 0, w_jerk = 0, w_fs = 0;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const auto& gt = clips[i].gt;
    const metrics::Motion pm{preds[i].phi, preds[i].T, gt.beta};
    const metrics::Motion gm{gt.phi, gt.T, gt.beta};
    const auto m = metrics::evaluate(pm, gm, gt.contacts, gt.fps);
    const double n = static_cast<double>(gt.size());
    const double nj = gt.size() >= 4 ? n - 3.0 : 0.0;
    double nc = 0;
    for (std::size_t t = 1; t < gt.size(); ++t) nc += gt.contacts[t][0] + gt.contacts[t][1];
    r.jpe_mm += m.jpe_mm * n;
    r.pve_mm += m.pve_mm * n;
    r.sip_deg += m.sip_deg * n;
    r.te_cm += m.te_cm * n;
    r.jerk_km_s3 += m.jerk_km_s3 * nj;
    r.fs_mm += m.fs_mm * nc;
    w_frames += n;
    w_jerk += nj;
    w_fs += nc;
  }
  if (w_frames > 0) {
    r.jpe_mm /= w_frames;
    r.pve_mm /= w_frames;
    r.sip_deg /= w_frames;
    r.te_cm /= w_frames;
  }
  if (w_jerk > 0) r.jerk_km_s3 /= w_jerk;
  if (w_fs > 0) {
    r.fs_mm /= w_fs;
  } else {
    r.fs_no_contacts = true;
  }
  return r;
}

metrics::MetricReport evaluate(const nets::PoserNets& n, const nets::FeatureConfig& cfg,
                               const std::vector<synth::MotionSequence>& motions, const EvalOptions& options,
                               const stereo::StereoCalib& calib) {
  std::vector<Clip> clips;
  std::vector<Prediction> preds;
  for (std::size_t i = 0; i < motions.size(); ++i) {
    clips.push_back(observe(motions[i], options.mode, mix_seed(options.noise_seed, i), calib));
    preds.push_back(infer(n, cfg, clips.back(), options.use_refine, options.zero_shape, calib));
  }
  return pooled_metrics(preds, clips);
}

BenchResult bench_inference(const nets::PoserNets& n, const nets::FeatureConfig& cfg, std::size_t n_frames,
                            std::size_t warmup, bool use_refine) {
  const stereo::StereoCalib calib;
  const auto motion = synth::generate_motion(synth::MotionKind::kWalkCircle, 4.0, body::BodyShape::Zero(), 99);
  const Clip clip = observe(motion, NoiseMode::kIdeal, 99, calib);
  nets::Pipeline<float> pipe(n, cfg, motion.beta, use_refine);
  const std::size_t F = clip.stereo.size();
  double sink = 0.0;
  for (std::size_t i = 0; i < warmup; ++i) {
    sink += pipe.step(nets::make_frame_input(calib, clip.stereo[i % F], clip.imu[i % F])).T.x();
  }
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < n_frames; ++i) {
    sink += pipe.step(nets::make_frame_input(calib, clip.stereo[i % F], clip.imu[i % F])).T.x();
  }
  const auto t1 = std::chrono::steady_clock::now();
  BenchResult r;
  r.frames = n_frames;
  r.seconds = std::chrono::duration<double>(t1 - t0).count();
  r.fps = r.seconds > 0 ? static_cast<double>(n_frames) / r.seconds : 0.0;
  if (std::isnan(sink)) r.fps = 0.0;  // keeps the loop observable
  return r;
}

}  // namespace svi::train
