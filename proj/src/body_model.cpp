#include "svi/body_model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "svi/errors.hpp"
#include "svi/rng.hpp"
#include "svi/text_io.hpp"

namespace svi::body {

namespace {

constexpr int kTemplateVersion = 1;

constexpr std::array<int, kNumJoints> kParents = {-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8,
                                                  9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21};

// Hand-set rest skeleton in meters (T-pose, root at the origin).
const std::array<Vec3, kNumJoints>& base_offsets() {
  static const std::array<Vec3, kNumJoints> offsets = {
      Vec3(0, 0, 0),          Vec3(0.065, -0.09, 0),  Vec3(-0.065, -0.09, 0), Vec3(0, 0.11, -0.01),
      Vec3(0.04, -0.38, 0),   Vec3(-0.04, -0.38, 0),  Vec3(0, 0.135, 0.01),   Vec3(-0.01, -0.40, -0.04),
      Vec3(0.01, -0.40, -0.04), Vec3(0, 0.055, 0),    Vec3(0.02, 0, 0.13),    Vec3(-0.02, 0, 0.13),
      Vec3(0, 0.22, -0.03),   Vec3(0.07, 0.115, -0.02), Vec3(-0.07, 0.115, -0.02), Vec3(0, 0.09, 0.05),
      Vec3(0.12, 0.045, -0.01), Vec3(-0.12, 0.045, -0.01), Vec3(0.26, 0, -0.02), Vec3(-0.26, 0, -0.02),
      Vec3(0.25, 0, 0),       Vec3(-0.25, 0, 0),      Vec3(0.085, -0.01, -0.01), Vec3(-0.085, -0.01, -0.01),
  };
  return offsets;
}

constexpr double kStatureScale = 0.06;
constexpr double kLimbScale = 0.05;
constexpr std::array<int, 8> kLimbBones = {kLeftKnee,  kRightKnee,  kLeftAnkle, kRightAnkle,
                                           kLeftElbow, kRightElbow, kLeftWrist, kRightWrist};

bool is_limb(int j) { return std::find(kLimbBones.begin(), kLimbBones.end(), j) != kLimbBones.end(); }

// Joints touched by each of the shape components 2..9.
const std::array<std::vector<int>, 8>& shape_regions() {
  static const std::array<std::vector<int>, 8> regions = {
      std::vector<int>{1, 4, 7, 10},         std::vector<int>{2, 5, 8, 11},
      std::vector<int>{3, 6, 9, 12, 15},     std::vector<int>{13, 16, 18, 20, 22},
      std::vector<int>{14, 17, 19, 21, 23},  std::vector<int>{1, 2, 4, 5},
      std::vector<int>{13, 14, 16, 17, 18, 19},
      std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23},
  };
  return regions;
}

// Anchor capsule per joint: the segment toward `child` (or a sphere around
// `center` when child < 0) with the given radius.
struct AnchorShape {
  int child;
  Vec3 center;
  double radius;
};

AnchorShape anchor_shape(int j) {
  switch (j) {
    case kPelvis: return {kSpine1, Vec3::Zero(), 0.14};
    case kLeftHip: return {kLeftKnee, Vec3::Zero(), 0.08};
    case kRightHip: return {kRightKnee, Vec3::Zero(), 0.08};
    case kSpine1: return {kSpine2, Vec3::Zero(), 0.13};
    case kLeftKnee: return {kLeftAnkle, Vec3::Zero(), 0.055};
    case kRightKnee: return {kRightAnkle, Vec3::Zero(), 0.055};
    case kSpine2: return {kSpine3, Vec3::Zero(), 0.14};
    case kLeftAnkle: return {kLeftFoot, Vec3::Zero(), 0.04};
    case kRightAnkle: return {kRightFoot, Vec3::Zero(), 0.04};
    case kSpine3: return {kNeck, Vec3::Zero(), 0.14};
    case kLeftFoot: return {-1, Vec3(0, 0, 0.02), 0.03};
    case kRightFoot: return {-1, Vec3(0, 0, 0.02), 0.03};
    case kNeck: return {kHead, Vec3::Zero(), 0.05};
    case kLeftCollar: return {kLeftShoulder, Vec3::Zero(), 0.05};
    case kRightCollar: return {kRightShoulder, Vec3::Zero(), 0.05};
    case kHead: return {-1, Vec3(0, 0.08, 0.02), 0.1};
    case kLeftShoulder: return {kLeftElbow, Vec3::Zero(), 0.05};
    case kRightShoulder: return {kRightElbow, Vec3::Zero(), 0.05};
    case kLeftElbow: return {kLeftWrist, Vec3::Zero(), 0.04};
    case kRightElbow: return {kRightWrist, Vec3::Zero(), 0.04};
    case kLeftWrist: return {kLeftHand, Vec3::Zero(), 0.035};
    case kRightWrist: return {kRightHand, Vec3::Zero(), 0.035};
    case kLeftHand: return {-1, Vec3(0.02, 0, 0), 0.04};
    case kRightHand: return {-1, Vec3(-0.02, 0, 0), 0.04};
    default: throw std::logic_error("anchor_shape: bad joint");
  }
}

std::pair<Vec3, Vec3> perpendicular_basis(const Vec3& e) {
  Vec3 n1 = e.cross(Vec3::UnitZ());
  if (n1.norm() < 1e-6 * e.norm()) n1 = e.cross(Vec3::UnitX());
  n1.normalize();
  const Vec3 n2 = e.normalized().cross(n1);
  return {n1, n2};
}

// Expects "key count v..." and returns the values.
std::vector<std::string_view> expect_record(const std::vector<std::string_view>& tokens, std::string_view key,
                                            std::size_t count) {
  if (tokens.empty() || tokens[0] != key) {
    throw FormatError("body template: expected '" + std::string(key) + "'");
  }
  if (tokens.size() != count + 2 || static_cast<std::size_t>(text::parse_int(tokens[1])) != count) {
    throw FormatError("body template: '" + std::string(key) + "' needs " + std::to_string(count) + " values");
  }
  return {tokens.begin() + 2, tokens.end()};
}

void write_record(std::string& out, std::string_view key, const std::vector<double>& values) {
  out += key;
  out += ' ';
  out += std::to_string(values.size());
  for (double v : values) {
    out += ' ';
    text::append_double(out, v);
  }
  out += '\n';
}

void write_int_record(std::string& out, std::string_view key, const std::vector<int>& values) {
  out += key;
  out += ' ';
  out += std::to_string(values.size());
  for (int v : values) out += ' ' + std::to_string(v);
  out += '\n';
}

}  // namespace

// ---------------------------------------------------------------------------
// Template

BodyTemplate BodyTemplate::generate(std::uint64_t seed) {
  BodyTemplate t;
  t.parents = kParents;
  t.rest_offsets = base_offsets();
  Rng rng(seed);

  std::array<ShapeRow, kNumJoints> bone_scale;
  for (int j = 0; j < kNumJoints; ++j) {
    bone_scale[j].setZero();
    if (j == 0) continue;
    bone_scale[j][0] = kStatureScale;
    if (is_limb(j)) bone_scale[j][1] = kLimbScale;
  }
  const auto& regions = shape_regions();
  for (int k = 0; k < 8; ++k) {
    for (int j : regions[static_cast<std::size_t>(k)]) {
      // At most 1 cm of length change per unit; these directions are weakly
      // observable, so larger values mostly feed the prior bias.
      const double cap = std::min(0.15, 0.01 / t.rest_offsets[j].norm());
      bone_scale[j][k + 2] = rng.uniform(-1.0, 1.0) * cap;
    }
  }
  for (int j = 0; j < kNumJoints; ++j) t.shape_dirs[j] = t.rest_offsets[j] * bone_scale[j];

  for (int j = 0; j < kNumJoints; ++j) {
    const AnchorShape shape = anchor_shape(j);
    t.anchor_scale[j].setZero();
    if (shape.child >= 0) {
      t.anchor_scale[j] = bone_scale[shape.child];
      const Vec3 e = t.rest_offsets[shape.child];
      const auto [n1, n2] = perpendicular_basis(e);
      for (int k = 0; k < kAnchorsPerJoint; ++k) {
        const double along = rng.uniform();
        const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
        t.anchors[j][k] = along * e + shape.radius * (std::cos(angle) * n1 + std::sin(angle) * n2);
      }
    } else {
      t.anchor_scale[j][0] = kStatureScale;
      for (int k = 0; k < kAnchorsPerJoint; ++k) {
        const double z = rng.uniform(-1.0, 1.0);
        const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double r = std::sqrt(1.0 - z * z);
        t.anchors[j][k] = shape.center + shape.radius * Vec3(r * std::cos(angle), z, r * std::sin(angle));
      }
    }
  }

  const Vec3 zero = Vec3::Zero();
  t.coco_map = {CocoEntry{kHead, Vec3(0, 0.03, 0.10)},    CocoEntry{kHead, Vec3(0.035, 0.06, 0.085)},
                CocoEntry{kHead, Vec3(-0.035, 0.06, 0.085)}, CocoEntry{kHead, Vec3(0.075, 0.04, 0)},
                CocoEntry{kHead, Vec3(-0.075, 0.04, 0)},  CocoEntry{kLeftShoulder, zero},
                CocoEntry{kRightShoulder, zero},           CocoEntry{kLeftElbow, zero},
                CocoEntry{kRightElbow, zero},              CocoEntry{kLeftWrist, zero},
                CocoEntry{kRightWrist, zero},              CocoEntry{kLeftHip, zero},
                CocoEntry{kRightHip, zero},                CocoEntry{kLeftKnee, zero},
                CocoEntry{kRightKnee, zero},               CocoEntry{kLeftAnkle, zero},
                CocoEntry{kRightAnkle, zero}};
  t.foot_joints = {kLeftAnkle, kRightAnkle};
  t.mount_joints = {kPelvis, kHead, kLeftElbow, kRightElbow, kLeftKnee, kRightKnee};
  return t;
}

std::string BodyTemplate::serialize() const {
  std::string out;
  out += "# surrogate body template\n";
  out += "version " + std::to_string(kTemplateVersion) + "\n";
  write_int_record(out, "parents", std::vector<int>(parents.begin(), parents.end()));
  std::vector<double> v;
  for (const auto& o : rest_offsets) v.insert(v.end(), {o.x(), o.y(), o.z()});
  write_record(out, "rest_offsets", v);
  v.clear();
  for (const auto& d : shape_dirs)
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < kShapeDim; ++c) v.push_back(d(r, c));
  write_record(out, "shape_dirs", v);
  v.clear();
  for (const auto& group : anchors)
    for (const auto& a : group) v.insert(v.end(), {a.x(), a.y(), a.z()});
  write_record(out, "vertex_anchors", v);
  v.clear();
  for (const auto& s : anchor_scale)
    for (int c = 0; c < kShapeDim; ++c) v.push_back(s[c]);
  write_record(out, "anchor_scale", v);
  std::vector<int> coco_joints;
  v.clear();
  for (const auto& e : coco_map) {
    coco_joints.push_back(e.joint);
    v.insert(v.end(), {e.offset.x(), e.offset.y(), e.offset.z()});
  }
  write_int_record(out, "coco_joints", coco_joints);
  write_record(out, "coco_offsets", v);
  write_int_record(out, "foot_joints", std::vector<int>(foot_joints.begin(), foot_joints.end()));
  write_int_record(out, "mount_joints", std::vector<int>(mount_joints.begin(), mount_joints.end()));
  return out;
}

BodyTemplate BodyTemplate::parse(std::string_view text_in) {
  std::vector<std::vector<std::string_view>> records;
  for (auto line : text::split_lines(text_in)) {
    line = text::trim(line);
    if (line.empty() || line.front() == '#') continue;
    records.push_back(text::split_ws(line));
  }
  if (records.size() != 10) throw FormatError("body template: expected 10 records");
  if (records[0].size() != 2 || records[0][0] != "version" || text::parse_int(records[0][1]) != kTemplateVersion) {
    throw FormatError("body template: unsupported version");
  }
  BodyTemplate t;
  auto ints = [](const std::vector<std::string_view>& vals) {
    std::vector<int> out;
    for (auto s : vals) out.push_back(static_cast<int>(text::parse_int(s)));
    return out;
  };
  auto reals = [](const std::vector<std::string_view>& vals) {
    std::vector<double> out;
    for (auto s : vals) out.push_back(text::parse_double(s));
    return out;
  };
  const auto par = ints(expect_record(records[1], "parents", kNumJoints));
  std::copy(par.begin(), par.end(), t.parents.begin());
  if (t.parents[0] != -1) throw FormatError("body template: root must have parent -1");
  for (int j = 1; j < kNumJoints; ++j) {
    if (t.parents[j] < 0 || t.parents[j] >= j) throw FormatError("body template: parents must precede children");
  }
  const auto rest = reals(expect_record(records[2], "rest_offsets", 3 * kNumJoints));
  for (int j = 0; j < kNumJoints; ++j) t.rest_offsets[j] = Vec3(rest[3 * j], rest[3 * j + 1], rest[3 * j + 2]);
  const auto dirs = reals(expect_record(records[3], "shape_dirs", 3 * kShapeDim * kNumJoints));
  for (int j = 0; j < kNumJoints; ++j)
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < kShapeDim; ++c) t.shape_dirs[j](r, c) = dirs[(j * 3 + r) * kShapeDim + c];
  const auto anc = reals(expect_record(records[4], "vertex_anchors", 3 * kNumVertices));
  for (int j = 0; j < kNumJoints; ++j)
    for (int k = 0; k < kAnchorsPerJoint; ++k) {
      const std::size_t b = 3 * static_cast<std::size_t>(j * kAnchorsPerJoint + k);
      t.anchors[j][k] = Vec3(anc[b], anc[b + 1], anc[b + 2]);
    }
  const auto sc = reals(expect_record(records[5], "anchor_scale", kShapeDim * kNumJoints));
  for (int j = 0; j < kNumJoints; ++j)
    for (int c = 0; c < kShapeDim; ++c) t.anchor_scale[j][c] = sc[j * kShapeDim + c];
  const auto cj = ints(expect_record(records[6], "coco_joints", kNumCoco));
  const auto co = reals(expect_record(records[7], "coco_offsets", 3 * kNumCoco));
  for (int k = 0; k < kNumCoco; ++k) {
    if (cj[k] < 0 || cj[k] >= kNumJoints) throw FormatError("body template: coco joint out of range");
    t.coco_map[k] = CocoEntry{cj[k], Vec3(co[3 * k], co[3 * k + 1], co[3 * k + 2])};
  }
  const auto fj = ints(expect_record(records[8], "foot_joints", 2));
  const auto mj = ints(expect_record(records[9], "mount_joints", kNumImus));
  std::copy(fj.begin(), fj.end(), t.foot_joints.begin());
  std::copy(mj.begin(), mj.end(), t.mount_joints.begin());
  for (int j : fj)
    if (j < 0 || j >= kNumJoints) throw FormatError("body template: foot joint out of range");
  for (int j : mj)
    if (j < 0 || j >= kNumJoints) throw FormatError("body template: mount joint out of range");
  return t;
}

BodyTemplate BodyTemplate::load(const std::string& path) { return parse(text::read_file(path)); }

void BodyTemplate::save(const std::string& path) const { text::write_file(path, serialize()); }

std::uint64_t BodyTemplate::checksum() const { return text::fnv1a(serialize()); }

const BodyTemplate& default_template() {
  static const BodyTemplate tpl = BodyTemplate::generate(kTemplateSeed);
  return tpl;
}

// ---------------------------------------------------------------------------
// Kinematics

Pose zero_pose() {
  Pose p;
  p.fill(Vec3::Zero());
  return p;
}

Vec3 bone_offset(const BodyTemplate& tpl, int joint, const BodyShape& beta) {
  return tpl.rest_offsets[joint] + tpl.shape_dirs[joint] * beta;
}

double anchor_scale(const BodyTemplate& tpl, int joint, const BodyShape& beta) {
  return 1.0 + tpl.anchor_scale[joint].dot(beta.transpose());
}

JointSet fk(const BodyTemplate& tpl, const Pose& phi, const BodyShape& beta) {
  JointSet js;
  js.globals[0] = so3::exp_map(phi[0]);
  js.joints[0].setZero();
  for (int j = 1; j < kNumJoints; ++j) {
    const int p = tpl.parents[j];
    js.globals[j] = js.globals[p] * so3::exp_map(phi[j]);
    js.joints[j] = js.joints[p] + js.globals[p] * bone_offset(tpl, j, beta);
  }
  return js;
}

std::vector<Vec3> vertices(const BodyTemplate& tpl, const JointSet& js, const BodyShape& beta) {
  std::vector<Vec3> out;
  out.reserve(kNumVertices);
  for (int j = 0; j < kNumJoints; ++j) {
    const double s = anchor_scale(tpl, j, beta);
    for (const auto& a : tpl.anchors[j]) out.push_back(js.joints[j] + js.globals[j] * (s * a));
  }
  return out;
}

std::vector<Vec3> vertices(const BodyTemplate& tpl, const Pose& phi, const BodyShape& beta) {
  return vertices(tpl, fk(tpl, phi, beta), beta);
}

std::array<Vec3, kNumCoco> regress_coco(const BodyTemplate& tpl, const JointSet& js) {
  std::array<Vec3, kNumCoco> out;
  for (int k = 0; k < kNumCoco; ++k) {
    const auto& e = tpl.coco_map[k];
    out[k] = js.joints[e.joint] + js.globals[e.joint] * e.offset;
  }
  return out;
}

std::array<MountFrame, kNumImus> mount_frames(const BodyTemplate& tpl, const JointSet& js) {
  std::array<MountFrame, kNumImus> out;
  for (int i = 0; i < kNumImus; ++i) {
    const int j = tpl.mount_joints[i];
    out[i] = MountFrame{js.globals[j], js.joints[j]};
  }
  return out;
}

FkGradient fk_vjp(const BodyTemplate& tpl, const Pose& phi, const BodyShape& beta, const JointSet& fwd,
                  std::span<const Vec3> grad_joints, std::span<const RotMat> grad_globals) {
  if (grad_joints.size() != kNumJoints) throw ShapeError("fk_vjp: need 24 joint gradients");
  std::array<Vec3, kNumJoints> gp;
  std::array<RotMat, kNumJoints> gg;
  for (int j = 0; j < kNumJoints; ++j) {
    gp[j] = grad_joints[j];
    gg[j] = grad_globals.empty() ? RotMat::Zero() : grad_globals[j];
  }
  FkGradient out;
  for (int j = kNumJoints - 1; j >= 1; --j) {
    const int p = tpl.parents[j];
    const Vec3 offset = bone_offset(tpl, j, beta);
    // joints[j] = joints[p] + G_p * offset
    gp[p] += gp[j];
    gg[p] += gp[j] * offset.transpose();
    out.beta += tpl.shape_dirs[j].transpose() * (fwd.globals[p].transpose() * gp[j]);
    // G_j = G_p * R_j
    const RotMat local = so3::exp_map(phi[j]);
    gg[p] += gg[j] * local.transpose();
    const RotMat g_local = fwd.globals[p].transpose() * gg[j];
    const auto jac = so3::exp_map_jacobian(phi[j]);
    for (int k = 0; k < 3; ++k) out.phi[j][k] = (g_local.array() * jac[k].array()).sum();
  }
  const auto jac = so3::exp_map_jacobian(phi[0]);
  for (int k = 0; k < 3; ++k) out.phi[0][k] = (gg[0].array() * jac[k].array()).sum();
  return out;
}

void vertices_vjp(const BodyTemplate& tpl, const JointSet& js, const BodyShape& beta,
                  std::span<const Vec3> grad_vertices, std::span<Vec3> grad_joints,
                  std::span<RotMat> grad_globals, BodyShape& grad_beta) {
  if (grad_vertices.size() != kNumVertices) throw ShapeError("vertices_vjp: need 384 gradients");
  for (int j = 0; j < kNumJoints; ++j) {
    const double s = anchor_scale(tpl, j, beta);
    double g_scale = 0.0;
    for (int k = 0; k < kAnchorsPerJoint; ++k) {
      const Vec3& g = grad_vertices[static_cast<std::size_t>(j * kAnchorsPerJoint + k)];
      const Vec3& a = tpl.anchors[j][k];
      grad_joints[j] += g;
      grad_globals[j] += g * (s * a).transpose();
      g_scale += g.dot(js.globals[j] * a);
    }
    grad_beta += g_scale * tpl.anchor_scale[j].transpose();
  }
}

void coco_vjp(const BodyTemplate& tpl, const JointSet& js, std::span<const Vec3> grad_keypoints,
              std::span<Vec3> grad_joints, std::span<RotMat> grad_globals) {
  (void)js;
  if (grad_keypoints.size() != kNumCoco) throw ShapeError("coco_vjp: need 17 gradients");
  for (int k = 0; k < kNumCoco; ++k) {
    const auto& e = tpl.coco_map[k];
    grad_joints[e.joint] += grad_keypoints[k];
    grad_globals[e.joint] += grad_keypoints[k] * e.offset.transpose();
  }
}

// ---------------------------------------------------------------------------
// Conversions and tape operations

Pose pose_from_span(std::span<const double> values) {
  if (values.size() != 3 * kNumJoints) throw ShapeError("pose needs 72 values");
  Pose p;
  for (int j = 0; j < kNumJoints; ++j) p[j] = Vec3(values[3 * j], values[3 * j + 1], values[3 * j + 2]);
  return p;
}

void pose_to_span(const Pose& pose, std::span<double> out) {
  if (out.size() != 3 * kNumJoints) throw ShapeError("pose needs 72 values");
  for (int j = 0; j < kNumJoints; ++j)
    for (int k = 0; k < 3; ++k) out[3 * j + k] = pose[j][k];
}

BodyShape shape_from_span(std::span<const double> values) {
  if (values.size() != kShapeDim) throw ShapeError("shape needs 10 values");
  BodyShape b;
  for (int k = 0; k < kShapeDim; ++k) b[k] = values[k];
  return b;
}

namespace {

void check_pose_tensor(const ad::Tensor& phi, const ad::Tensor& beta, const char* op) {
  if (phi.dim() != 2 || phi.cols() != 3 * kNumJoints) throw ShapeError(std::string(op) + ": phi must be F x 72");
  if (beta.numel() != kShapeDim) throw ShapeError(std::string(op) + ": beta must hold 10 values");
}

std::span<const double> row(const ad::Tensor& t, std::size_t r) {
  return t.values().subspan(r * t.cols(), t.cols());
}

void accumulate_grad(const FkGradient& g, std::span<double> g_phi_row, std::span<double> g_beta) {
  if (!g_phi_row.empty())
    for (int j = 0; j < kNumJoints; ++j)
      for (int k = 0; k < 3; ++k) g_phi_row[3 * j + k] += g.phi[j][k];
  if (!g_beta.empty())
    for (int k = 0; k < kShapeDim; ++k) g_beta[k] += g.beta[k];
}

}  // namespace

ad::Tensor fk_joints(const BodyTemplate& tpl, const ad::Tensor& phi, const ad::Tensor& beta) {
  check_pose_tensor(phi, beta, "fk_joints");
  const std::size_t frames = phi.rows();
  const BodyShape b = shape_from_span(beta.values());
  std::vector<double> y(frames * 3 * kNumJoints);
  for (std::size_t f = 0; f < frames; ++f) {
    const JointSet js = fk(tpl, pose_from_span(row(phi, f)), b);
    for (int j = 0; j < kNumJoints; ++j)
      for (int k = 0; k < 3; ++k) y[f * 72 + 3 * j + k] = js.joints[j][k];
  }
  return ad::record_op({frames, 72}, std::move(y), {phi, beta}, [&tpl, phi, beta, frames](std::span<const double> g) {
    auto g_phi = ad::grad_sink(phi);
    auto g_beta = ad::grad_sink(beta);
    const BodyShape b = shape_from_span(beta.values());
    std::array<Vec3, kNumJoints> gj;
    for (std::size_t f = 0; f < frames; ++f) {
      const Pose pose = pose_from_span(row(phi, f));
      const JointSet js = fk(tpl, pose, b);
      for (int j = 0; j < kNumJoints; ++j) gj[j] = Vec3(g[f * 72 + 3 * j], g[f * 72 + 3 * j + 1], g[f * 72 + 3 * j + 2]);
      const FkGradient grad = fk_vjp(tpl, pose, b, js, gj);
      accumulate_grad(grad, g_phi.empty() ? g_phi : g_phi.subspan(f * 72, 72), g_beta);
    }
  });
}

ad::Tensor vertices(const BodyTemplate& tpl, const ad::Tensor& phi, const ad::Tensor& beta) {
  check_pose_tensor(phi, beta, "vertices");
  if (phi.rows() != 1) throw ShapeError("vertices: phi must be 1 x 72");
  const BodyShape b = shape_from_span(beta.values());
  const Pose pose = pose_from_span(phi.values());
  const JointSet js = fk(tpl, pose, b);
  const auto verts = vertices(tpl, js, b);
  std::vector<double> y;
  y.reserve(3 * kNumVertices);
  for (const auto& v : verts) y.insert(y.end(), {v.x(), v.y(), v.z()});
  return ad::record_op({kNumVertices, 3}, std::move(y), {phi, beta},
                       [&tpl, phi, beta, pose, b, js](std::span<const double> g) {
                         std::vector<Vec3> gv(kNumVertices);
                         for (int i = 0; i < kNumVertices; ++i) gv[i] = Vec3(g[3 * i], g[3 * i + 1], g[3 * i + 2]);
                         std::array<Vec3, kNumJoints> gj;
                         std::array<RotMat, kNumJoints> gg;
                         gj.fill(Vec3::Zero());
                         gg.fill(RotMat::Zero());
                         BodyShape gb = BodyShape::Zero();
                         vertices_vjp(tpl, js, b, gv, gj, gg, gb);
                         FkGradient grad = fk_vjp(tpl, pose, b, js, gj, gg);
                         grad.beta += gb;
                         accumulate_grad(grad, ad::grad_sink(phi), ad::grad_sink(beta));
                       });
}

ad::Tensor coco_keypoints(const BodyTemplate& tpl, const ad::Tensor& phi, const ad::Tensor& beta) {
  check_pose_tensor(phi, beta, "coco_keypoints");
  if (phi.rows() != 1) throw ShapeError("coco_keypoints: phi must be 1 x 72");
  const BodyShape b = shape_from_span(beta.values());
  const Pose pose = pose_from_span(phi.values());
  const JointSet js = fk(tpl, pose, b);
  const auto kps = regress_coco(tpl, js);
  std::vector<double> y;
  y.reserve(3 * kNumCoco);
  for (const auto& v : kps) y.insert(y.end(), {v.x(), v.y(), v.z()});
  return ad::record_op({kNumCoco, 3}, std::move(y), {phi, beta},
                       [&tpl, phi, beta, pose, b, js](std::span<const double> g) {
                         std::array<Vec3, kNumCoco> gk;
                         for (int i = 0; i < kNumCoco; ++i) gk[i] = Vec3(g[3 * i], g[3 * i + 1], g[3 * i + 2]);
                         std::array<Vec3, kNumJoints> gj;
                         std::array<RotMat, kNumJoints> gg;
                         gj.fill(Vec3::Zero());
                         gg.fill(RotMat::Zero());
                         coco_vjp(tpl, js, gk, gj, gg);
                         const FkGradient grad = fk_vjp(tpl, pose, b, js, gj, gg);
                         accumulate_grad(grad, ad::grad_sink(phi), ad::grad_sink(beta));
                       });
}

ad::Tensor rotate_rows(const ad::Tensor& rotations, const ad::Tensor& points) {
  if (rotations.dim() != 2 || rotations.cols() != 9) throw ShapeError("rotate_rows: rotations must be F x 9");
  if (points.dim() != 2 || points.cols() % 3 != 0 || points.rows() != rotations.rows()) {
    throw ShapeError("rotate_rows: points must be F x 3k");
  }
  const std::size_t frames = points.rows(), n = points.cols();
  using RowMat3 = Eigen::Matrix<double, 3, 3, Eigen::RowMajor>;
  std::vector<double> y(frames * n);
  const auto r = rotations.values();
  const auto x = points.values();
  for (std::size_t f = 0; f < frames; ++f) {
    const Eigen::Map<const RowMat3> rot(r.data() + 9 * f);
    for (std::size_t c = 0; c < n; c += 3) {
      Eigen::Map<Vec3>(y.data() + f * n + c) = rot * Eigen::Map<const Vec3>(x.data() + f * n + c);
    }
  }
  return ad::record_op({frames, n}, std::move(y), {points}, [rotations, points, frames, n](std::span<const double> g) {
    auto gx = ad::grad_sink(points);
    if (gx.empty()) return;
    const auto r = rotations.values();
    for (std::size_t f = 0; f < frames; ++f) {
      const Eigen::Map<const RowMat3> rot(r.data() + 9 * f);
      for (std::size_t c = 0; c < n; c += 3) {
        Eigen::Map<Vec3>(gx.data() + f * n + c) += rot.transpose() * Eigen::Map<const Vec3>(g.data() + f * n + c);
      }
    }
  });
}

}  // namespace svi::body
