#pragma once

// State-space sequence networks and the feature assembly that feeds them.
//
// Every network is: linear input projection -> L residual SSM blocks ->
// linear head. A block runs a diagonal linear recurrence over time followed
// by a gated SiLU MLP. The whole-sequence path goes through the autodiff
// tape; Streamer runs the same weights one frame at a time with O(H) state,
// in float or double.

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "svi/autodiff.hpp"
#include "svi/body_model.hpp"
#include "svi/stereo_rig.hpp"
#include "svi/synth.hpp"

namespace svi::nets {

using ad::Tensor;
using so3::Vec3;

struct Linear {
  Tensor W;  // in x out
  Tensor b;  // 1 x out
  Tensor operator()(const Tensor& x) const;
};

struct SsmBlock {
  Tensor log_a, b, c, d;  // 1 x H; a = exp(-exp(log_a))
  Linear gate, value;     // H -> M
  Linear out;             // M -> H

  std::size_t width() const { return log_a.cols(); }
  std::vector<double> decay() const;
};

/// Diagonal scan over the rows of u (F x H): h_t = a*h_{t-1} + b*u_t and
/// s_t = c*h_t + d*u_t, starting from h0 (zero when empty).
Tensor ssm_scan(const Tensor& u, const Tensor& log_a, const Tensor& b, const Tensor& c, const Tensor& d,
                std::span<const double> h0 = {});

/// One residual block over a whole sequence: y = mlp(scan(u)) + u.
Tensor block_forward(const SsmBlock& block, const Tensor& u);

struct StepResult {
  std::vector<double> y;
  std::vector<double> h;
};

/// Single recurrence step of a block on plain vectors.
StepResult ssm_step(const SsmBlock& block, std::span<const double> u, std::span<const double> h);

enum class NetKind { kTrans, kIENet, kKENet, kFusion, kRefine };
inline constexpr std::array<NetKind, 5> kAllNets = {NetKind::kTrans, NetKind::kIENet, NetKind::kKENet,
                                                    NetKind::kFusion, NetKind::kRefine};
std::string_view net_name(NetKind kind);
NetKind parse_net(std::string_view name);

struct NetDims {
  std::size_t in = 0;
  std::size_t hidden = 256;
  std::size_t layers = 2;
  std::size_t mlp = 512;
  std::size_t out = 0;

  bool operator==(const NetDims&) const = default;
};

class SequenceNet {
 public:
  SequenceNet() = default;
  SequenceNet(std::string name, NetDims dims, std::uint64_t seed);

  const std::string& name() const { return name_; }
  const NetDims& dims() const { return dims_; }

  /// F x in -> F x out over the whole sequence, state starting at zero.
  Tensor forward(const Tensor& x) const;

  /// Parameters in declaration order (the checkpoint order).
  std::vector<Tensor> parameters() const;
  void set_trainable(bool flag);
  std::size_t parameter_count() const;

  const Linear& input() const { return input_; }
  const std::vector<SsmBlock>& blocks() const { return blocks_; }
  const Linear& head() const { return head_; }

  std::string serialize() const;
  static SequenceNet deserialize(std::string_view bytes);
  void save(const std::string& path) const;
  static SequenceNet load(const std::string& path);
  /// FNV-1a over the serialized bytes.
  std::uint64_t checksum() const;

 private:
  std::string name_;
  NetDims dims_;
  Linear input_;
  std::vector<SsmBlock> blocks_;
  Linear head_;
};

/// Frame-by-frame evaluation of a SequenceNet with its own copy of the
/// weights in Scalar precision.
template <class Scalar>
class Streamer {
 public:
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Streamer() = default;
  explicit Streamer(const SequenceNet& net);

  void reset();
  /// x has dims().in entries, y receives dims().out.
  void step(std::span<const Scalar> x, std::span<Scalar> y);
  std::size_t in() const { return static_cast<std::size_t>(in_W_.cols()); }
  std::size_t out() const { return static_cast<std::size_t>(head_W_.rows()); }

 private:
  struct Block {
    Vec a, b, c, d;
    Mat gate_W, value_W, out_W;  // transposed: out x in
    Vec gate_b, value_b, out_b;
    Vec h;
  };
  Mat in_W_, head_W_;
  Vec in_b_, head_b_;
  std::vector<Block> blocks_;
  Vec u_, s_, g_, v_;
};

extern template class Streamer<float>;
extern template class Streamer<double>;

// ---------------------------------------------------------------------------
// Feature assembly

inline constexpr int kPeWidth = 4;
inline constexpr std::array<int, 9> kTransKeypoints = {
    body::kNose,         body::kLeftEye,           body::kRightEye,     body::kLeftEar, body::kRightEar,
    body::kCocoLeftShoulder, body::kCocoRightShoulder, body::kCocoLeftHip, body::kCocoRightHip};

struct FeatureConfig {
  Vec3 workspace_min{-4.0, -0.5, 1.0};
  Vec3 workspace_max{4.0, 2.5, 10.0};
  double acc_scale = 30.0;     // m/s^2 mapped to [-1, 1]
  double joint_range = 1.5;    // m, root-relative joints mapped to [-1, 1]
  double delta_range = 0.1;    // m per frame
  double trans_unit = 4.0;     // meters per head unit for T
  double delta_unit = 0.05;    // meters per head unit for dT
  bool use_pe = true;
  bool canonical = true;       // per-frame minmax on KENet inputs

  void validate() const;
};

/// Scalars already in [0, 1] -> PE (or passthrough when use_pe is off).
void encode(std::span<const double> unit, const FeatureConfig& cfg, std::vector<double>& out);

std::size_t input_width(NetKind kind, const FeatureConfig& cfg);
std::size_t output_width(NetKind kind);

std::vector<double> assemble_trans_input(const stereo::MetricKeypoints& kp, const FeatureConfig& cfg);
/// Throws BadImuFrame when the pelvis rotation is not orthonormal.
std::vector<double> assemble_imu_input(const synth::ImuFrame& frame, const FeatureConfig& cfg);
std::vector<double> assemble_kenet_input(std::span<const Vec3> p_R, std::span<const double> conf,
                                         const FeatureConfig& cfg);

using JointVec = std::array<double, 3 * body::kNumJoints>;

std::vector<double> assemble_fusion_input(const JointVec& j_imu, const JointVec& j_vis, std::span<const double> conf,
                                          std::span<const double> beta, const Vec3& T, const Vec3& dT,
                                          std::span<const double> imu_x, const FeatureConfig& cfg);
std::vector<double> assemble_refine_input(std::span<const double> phi, const Vec3& T, const Vec3& dT,
                                          std::span<const double> q, std::span<const double> beta,
                                          const FeatureConfig& cfg);

// ---------------------------------------------------------------------------
// The five networks together

struct PoserNets {
  SequenceNet trans, ienet, kenet, fusion, refine;

  static PoserNets create(std::size_t hidden, std::size_t layers, const FeatureConfig& cfg, std::uint64_t seed);
  SequenceNet& get(NetKind kind);
  const SequenceNet& get(NetKind kind) const;
};

/// Observations for one frame, as the pipeline consumes them.
struct FrameInput {
  stereo::MetricKeypoints kp;
  std::array<Vec3, body::kNumCoco> p_R{};
  synth::ImuFrame imu;
};

FrameInput make_frame_input(const stereo::StereoCalib& calib, const stereo::StereoObservation& obs,
                            const synth::ImuFrame& imu);

struct PoseEstimate {
  body::Pose phi{};  // root rotation in the world frame
  Vec3 T = Vec3::Zero();
  Vec3 dT = Vec3::Zero();
  std::array<double, 2> q{};
};

struct Intermediates {
  Vec3 T_trans = Vec3::Zero(), dT_trans = Vec3::Zero();
  JointVec j_imu{}, j_vis{};
  PoseEstimate fused;
};

/// Streaming inference over all five networks. Network root rotations are
/// residuals on the pelvis IMU orientation; T and dT from the fusion and
/// refinement heads are residuals on their inputs.
template <class Scalar>
class Pipeline {
 public:
  Pipeline(const PoserNets& nets, const FeatureConfig& cfg, const body::BodyShape& beta, bool use_refine = true);

  void reset();
  PoseEstimate step(const FrameInput& frame);
  const Intermediates& intermediates() const { return mid_; }

 private:
  std::vector<double> run(Streamer<Scalar>& s, const std::vector<double>& x);

  FeatureConfig cfg_;
  std::array<double, body::kShapeDim> beta_{};
  bool use_refine_;
  Streamer<Scalar> trans_, ienet_, kenet_, fusion_, refine_;
  std::vector<Scalar> xs_, ys_;
  Intermediates mid_;
};

extern template class Pipeline<float>;
extern template class Pipeline<double>;

/// Decoded pose-head output for one frame: residual phi, T, dT and contact
/// logits added onto `base`.
struct HeadOutput {
  std::array<double, 72> phi{};
  Vec3 T = Vec3::Zero();
  Vec3 dT = Vec3::Zero();
  std::array<double, 2> logit{};
};

HeadOutput decode_pose_head(std::span<const double> y, const HeadOutput& base, const FeatureConfig& cfg);

/// World root rotation from the residual and the pelvis IMU orientation.
so3::AxisAngle compose_root(const so3::RotMat& pelvis_imu, const Vec3& residual);

/// Head output to pose: world root, contact probabilities.
PoseEstimate finalize_pose(const HeadOutput& h, const so3::RotMat& pelvis_imu);

}  // namespace svi::nets
