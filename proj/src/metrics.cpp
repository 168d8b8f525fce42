#include "svi/metrics.hpp"

#include <cmath>

#include "svi/errors.hpp"
#include "svi/text_io.hpp"

namespace svi::metrics {

namespace {

// Explicit component order; Eigen's norm may vectorize differently.
double dist(const Vec3& a, const Vec3& b) {
  const double dx = a.x() - b.x(), dy = a.y() - b.y(), dz = a.z() - b.z();
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

double dist_aligned(const Vec3& a, const Vec3& ra, const Vec3& b, const Vec3& rb) {
  const double dx = (a.x() - ra.x()) - (b.x() - rb.x());
  const double dy = (a.y() - ra.y()) - (b.y() - rb.y());
  const double dz = (a.z() - ra.z()) - (b.z() - rb.z());
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

void require_same(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": length mismatch (" + std::to_string(a) + " vs " + std::to_string(b) + ")");
  }
}

constexpr int kSipJoints[] = {body::kLeftHip, body::kRightHip, body::kLeftShoulder, body::kRightShoulder};

}  // namespace

double jpe(std::span<const JointFrame> pred, std::span<const JointFrame> gt) {
  require_same(pred.size(), gt.size(), "jpe");
  if (pred.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t t = 0; t < pred.size(); ++t) {
    for (int j = 0; j < body::kNumJoints; ++j) total += dist_aligned(pred[t][j], pred[t][0], gt[t][j], gt[t][0]);
  }
  return total / static_cast<double>(pred.size() * body::kNumJoints) * 1000.0;
}

double pve(std::span<const VertexFrame> pred, std::span<const VertexFrame> gt, std::span<const Vec3> pred_root,
           std::span<const Vec3> gt_root) {
  require_same(pred.size(), gt.size(), "pve");
  require_same(pred.size(), pred_root.size(), "pve roots");
  require_same(gt.size(), gt_root.size(), "pve roots");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < pred.size(); ++t) {
    require_same(pred[t].size(), gt[t].size(), "pve vertices");
    for (std::size_t v = 0; v < pred[t].size(); ++v) {
      total += dist_aligned(pred[t][v], pred_root[t], gt[t][v], gt_root[t]);
    }
    count += pred[t].size();
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count) * 1000.0;
}

double sip(std::span<const Pose> pred_phi, std::span<const Pose> gt_phi, const body::BodyTemplate& tpl) {
  require_same(pred_phi.size(), gt_phi.size(), "sip");
  if (pred_phi.empty()) return 0.0;
  // Global rotations do not depend on shape.
  const body::BodyShape zero = body::BodyShape::Zero();
  double total = 0.0;
  for (std::size_t t = 0; t < pred_phi.size(); ++t) {
    const auto a = body::fk(tpl, pred_phi[t], zero);
    const auto b = body::fk(tpl, gt_phi[t], zero);
    for (int j : kSipJoints) total += so3::geodesic_deg(a.globals[j], b.globals[j]);
  }
  return total / static_cast<double>(pred_phi.size() * std::size(kSipJoints));
}

double te(std::span<const Vec3> pred_T, std::span<const Vec3> gt_T) {
  require_same(pred_T.size(), gt_T.size(), "te");
  if (pred_T.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t t = 0; t < pred_T.size(); ++t) total += dist(pred_T[t], gt_T[t]);
  return total / static_cast<double>(pred_T.size()) * 100.0;
}

double jerk(std::span<const JointFrame> joints_world, double fps) {
  if (joints_world.size() < 4) throw ShapeError("jerk: needs at least 4 frames");
  const double scale = fps * fps * fps;
  double total = 0.0;
  for (std::size_t t = 3; t < joints_world.size(); ++t) {
    for (int j = 0; j < body::kNumJoints; ++j) {
      const Vec3& p0 = joints_world[t][j];
      const Vec3& p1 = joints_world[t - 1][j];
      const Vec3& p2 = joints_world[t - 2][j];
      const Vec3& p3 = joints_world[t - 3][j];
      const double dx = p0.x() - 3.0 * p1.x() + 3.0 * p2.x() - p3.x();
      const double dy = p0.y() - 3.0 * p1.y() + 3.0 * p2.y() - p3.y();
      const double dz = p0.z() - 3.0 * p1.z() + 3.0 * p2.z() - p3.z();
      total += std::sqrt(dx * dx + dy * dy + dz * dz) * scale;
    }
  }
  return total / static_cast<double>((joints_world.size() - 3) * body::kNumJoints) / 1000.0;
}

FsResult foot_skate(std::span<const std::array<Vec3, 2>> feet_world, std::span<const Contact> contacts) {
  require_same(feet_world.size(), contacts.size(), "foot_skate");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 1; t < feet_world.size(); ++t) {
    for (int k = 0; k < 2; ++k) {
      if (contacts[t][k] != 1) continue;
      total += dist(feet_world[t][k], feet_world[t - 1][k]);
      ++count;
    }
  }
  if (count == 0) return {0.0, true};
  return {total / static_cast<double>(count) * 1000.0, false};
}

std::string MetricReport::serialize() const {
  std::string out;
  const std::pair<const char*, double> rows[] = {{"jpe_mm", jpe_mm}, {"pve_mm", pve_mm},
                                                 {"sip_deg", sip_deg}, {"te_cm", te_cm},
                                                 {"jerk_km_s3", jerk_km_s3}, {"fs_mm", fs_mm}};
  for (const auto& [key, value] : rows) {
    out += key;
    out += ' ';
    text::append_double(out, value);
    out += '\n';
  }
  out += "fs_no_contacts ";
  out += fs_no_contacts ? "1" : "0";
  out += '\n';
  return out;
}

MetricReport evaluate(const Motion& pred, const Motion& gt, std::span<const Contact> contacts, double fps,
                      const body::BodyTemplate& tpl) {
  const std::size_t n = gt.phi.size();
  require_same(pred.phi.size(), n, "evaluate");
  require_same(pred.T.size(), n, "evaluate translation");
  require_same(gt.T.size(), n, "evaluate translation");
  std::vector<JointFrame> pj(n), gj(n), pw(n);
  std::vector<VertexFrame> pv(n), gv(n);
  std::vector<Vec3> zeros(n, Vec3::Zero());
  std::vector<std::array<Vec3, 2>> feet(n);
  for (std::size_t t = 0; t < n; ++t) {
    const auto a = body::fk(tpl, pred.phi[t], pred.beta);
    const auto b = body::fk(tpl, gt.phi[t], gt.beta);
    pj[t] = a.joints;
    gj[t] = b.joints;
    pv[t] = body::vertices(tpl, a, pred.beta);
    gv[t] = body::vertices(tpl, b, gt.beta);
    for (int j = 0; j < body::kNumJoints; ++j) pw[t][j] = a.joints[j] + pred.T[t];
    feet[t] = {pw[t][tpl.foot_joints[0]], pw[t][tpl.foot_joints[1]]};
  }
  MetricReport r;
  r.jpe_mm = jpe(pj, gj);
  // fk puts the root at the origin, so the vertex sets are already root-aligned.
  r.pve_mm = pve(pv, gv, zeros, zeros);
  r.sip_deg = sip(pred.phi, gt.phi, tpl);
  r.te_cm = te(pred.T, gt.T);
  r.jerk_km_s3 = n >= 4 ? jerk(pw, fps) : 0.0;
  const FsResult fs = foot_skate(feet, contacts);
  r.fs_mm = fs.mm;
  r.fs_no_contacts = fs.no_contacts;
  return r;
}

}  // namespace svi::metrics
