#include "svi/so3.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "svi/errors.hpp"

namespace svi::so3 {

namespace {

// Rodrigues coefficients A = sin t / t, B = (1 - cos t) / t^2 and their
// derivatives divided by t: C = A'(t) / t, D = B'(t) / t.
struct RodriguesCoeffs {
  double a, b, c, d;
};

RodriguesCoeffs coeffs(double theta) {
  const double t2 = theta * theta;
  RodriguesCoeffs k{};
  if (theta < kTaylorCutoff) {
    k.a = 1.0 - t2 / 6.0;
    k.b = 0.5 - t2 / 24.0;
  } else {
    k.a = std::sin(theta) / theta;
    k.b = (1.0 - std::cos(theta)) / t2;
  }
  // The derivative ratios cancel badly well above the value cutoff.
  if (theta < 1e-2) {
    const double t4 = t2 * t2;
    k.c = -1.0 / 3.0 + t2 / 30.0 - t4 / 840.0;
    k.d = -1.0 / 12.0 + t2 / 180.0 - t4 / 6720.0;
  } else {
    const double s = std::sin(theta), co = std::cos(theta);
    k.c = (theta * co - s) / (t2 * theta);
    k.d = (theta * s - 2.0 * (1.0 - co)) / (t2 * t2);
  }
  return k;
}

}  // namespace

RotMat hat(const Vec3& v) {
  RotMat k;
  k << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return k;
}

RotMat exp_map(const AxisAngle& v) {
  const double theta = v.norm();
  const auto k = coeffs(theta);
  const RotMat h = hat(v);
  return RotMat::Identity() + k.a * h + k.b * h * h;
}

std::array<RotMat, 3> exp_map_jacobian(const AxisAngle& v) {
  const double theta = v.norm();
  const auto k = coeffs(theta);
  const RotMat h = hat(v);
  const RotMat h2 = h * h;
  std::array<RotMat, 3> out;
  for (int i = 0; i < 3; ++i) {
    const RotMat e = hat(Vec3::Unit(i));
    out[static_cast<std::size_t>(i)] = k.c * v[i] * h + k.a * e + k.d * v[i] * h2 + k.b * (e * h + h * e);
  }
  return out;
}

AxisAngle log_map(const RotMat& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.angle() * aa.axis();
}

Rot6D to6d(const RotMat& r) {
  Rot6D out;
  out << r.col(0), r.col(1);
  return out;
}

RotMat from6d(const Rot6D& r) {
  const Vec3 a1 = r.head<3>();
  const Vec3 a2 = r.tail<3>();
  const double n1 = a1.norm();
  if (n1 < 1e-12) throw DegenerateRotation("from6d: zero first column");
  const Vec3 b1 = a1 / n1;
  const Vec3 u2 = a2 - b1.dot(a2) * b1;
  const double n2 = u2.norm();
  if (a2.norm() < 1e-12 || b1.cross(a2.normalized()).norm() <= 1e-9) {
    throw DegenerateRotation("from6d: parallel columns");
  }
  const Vec3 b2 = u2 / n2;
  RotMat out;
  out << b1, b2, b1.cross(b2);
  return out;
}

Rot6D from6d_vjp(const Rot6D& r, const RotMat& grad_r) {
  const Vec3 a1 = r.head<3>();
  const Vec3 a2 = r.tail<3>();
  const double n1 = a1.norm();
  const Vec3 b1 = a1 / n1;
  const double dot = b1.dot(a2);
  const Vec3 u2 = a2 - dot * b1;
  const double n2 = u2.norm();
  const Vec3 b2 = u2 / n2;

  Vec3 g1 = grad_r.col(0);
  Vec3 g2 = grad_r.col(1);
  const Vec3 g3 = grad_r.col(2);
  // b3 = b1 x b2
  g1 += b2.cross(g3);
  g2 += g3.cross(b1);
  // b2 = u2 / |u2|
  const Vec3 gu2 = (g2 - b2 * b2.dot(g2)) / n2;
  // u2 = a2 - (b1.a2) b1
  Vec3 ga2 = gu2 - b1 * b1.dot(gu2);
  g1 += -(b1.dot(gu2)) * a2 - dot * gu2;
  // b1 = a1 / |a1|
  const Vec3 ga1 = (g1 - b1 * b1.dot(g1)) / n1;
  Rot6D out;
  out << ga1, ga2;
  return out;
}

double geodesic_deg(const RotMat& a, const RotMat& b) {
  // Same angle as acos((tr - 1) / 2) but without its loss of precision near 0.
  // m = a^T b, spelled out so the summation order is fixed.
  double m[3][3];
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) m[i][j] = a(0, i) * b(0, j) + a(1, i) * b(1, j) + a(2, i) * b(2, j);
  }
  const double c = std::clamp((m[0][0] + m[1][1] + m[2][2] - 1.0) / 2.0, -1.0, 1.0);
  const double vx = m[2][1] - m[1][2], vy = m[0][2] - m[2][0], vz = m[1][0] - m[0][1];
  const double s = std::min(0.5 * std::sqrt(vx * vx + vy * vy + vz * vz), 1.0);
  return std::atan2(s, c) * 180.0 / std::numbers::pi;
}

bool is_rotation(const RotMat& r, double tol) {
  return (r.transpose() * r - RotMat::Identity()).cwiseAbs().maxCoeff() <= tol &&
         std::abs(r.determinant() - 1.0) <= tol;
}

RotMat rot_x(double angle) { return Eigen::AngleAxisd(angle, Vec3::UnitX()).toRotationMatrix(); }
RotMat rot_y(double angle) { return Eigen::AngleAxisd(angle, Vec3::UnitY()).toRotationMatrix(); }
RotMat rot_z(double angle) { return Eigen::AngleAxisd(angle, Vec3::UnitZ()).toRotationMatrix(); }

// ---------------------------------------------------------------------------

namespace {

using RowMat3 = Eigen::Matrix<double, 3, 3, Eigen::RowMajor>;

}  // namespace

ad::Tensor exp_map(const ad::Tensor& axis_angles) {
  if (axis_angles.dim() != 2 || axis_angles.cols() != 3) throw ShapeError("exp_map expects N x 3");
  const std::size_t n = axis_angles.rows();
  std::vector<double> y(n * 9);
  const auto x = axis_angles.values();
  for (std::size_t i = 0; i < n; ++i) {
    const RowMat3 r = exp_map(Vec3(x[3 * i], x[3 * i + 1], x[3 * i + 2]));
    std::copy_n(r.data(), 9, y.begin() + static_cast<std::ptrdiff_t>(9 * i));
  }
  return ad::record_op({n, 9}, std::move(y), {axis_angles}, [axis_angles, n](std::span<const double> g) {
    auto gx = ad::grad_sink(axis_angles);
    if (gx.empty()) return;
    const auto x = axis_angles.values();
    for (std::size_t i = 0; i < n; ++i) {
      const auto jac = exp_map_jacobian(Vec3(x[3 * i], x[3 * i + 1], x[3 * i + 2]));
      const Eigen::Map<const RowMat3> gr(g.data() + 9 * i);
      for (std::size_t k = 0; k < 3; ++k) gx[3 * i + k] += (gr.array() * jac[k].array()).sum();
    }
  });
}

ad::Tensor from6d(const ad::Tensor& rot6d) {
  if (rot6d.dim() != 2 || rot6d.cols() != 6) throw ShapeError("from6d expects N x 6");
  const std::size_t n = rot6d.rows();
  std::vector<double> y(n * 9);
  const auto x = rot6d.values();
  for (std::size_t i = 0; i < n; ++i) {
    const RowMat3 r = from6d(Rot6D(Eigen::Map<const Rot6D>(x.data() + 6 * i)));
    std::copy_n(r.data(), 9, y.begin() + static_cast<std::ptrdiff_t>(9 * i));
  }
  return ad::record_op({n, 9}, std::move(y), {rot6d}, [rot6d, n](std::span<const double> g) {
    auto gx = ad::grad_sink(rot6d);
    if (gx.empty()) return;
    const auto x = rot6d.values();
    for (std::size_t i = 0; i < n; ++i) {
      const RotMat gr = Eigen::Map<const RowMat3>(g.data() + 9 * i);
      const Rot6D d = from6d_vjp(Rot6D(Eigen::Map<const Rot6D>(x.data() + 6 * i)), gr);
      for (std::size_t k = 0; k < 6; ++k) gx[6 * i + k] += d[static_cast<Eigen::Index>(k)];
    }
  });
}

}  // namespace svi::so3
