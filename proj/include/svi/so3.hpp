#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>

#include "svi/autodiff.hpp"

namespace svi::so3 {

using Vec3 = Eigen::Vector3d;
using AxisAngle = Eigen::Vector3d;  // angle = norm, direction = axis
using RotMat = Eigen::Matrix3d;
using Rot6D = Eigen::Matrix<double, 6, 1>;  // first two columns, column-major

/// Below this angle Rodrigues coefficients switch to their Taylor series.
inline constexpr double kTaylorCutoff = 1e-4;

RotMat hat(const Vec3& v);

RotMat exp_map(const AxisAngle& v);

/// Partial derivatives dR/dv_k, k = 0..2, finite everywhere including v = 0.
std::array<RotMat, 3> exp_map_jacobian(const AxisAngle& v);

/// Inverse of exp_map with angle in [0, pi].
AxisAngle log_map(const RotMat& r);

Rot6D to6d(const RotMat& r);

/// Normalize the first column, Gram-Schmidt the second against it, and take
/// their cross product. Throws DegenerateRotation for parallel columns.
RotMat from6d(const Rot6D& r);

/// Gradient of a scalar through from6d: given dL/dR, returns dL/dr.
Rot6D from6d_vjp(const Rot6D& r, const RotMat& grad_r);

/// Geodesic angle in degrees.
double geodesic_deg(const RotMat& a, const RotMat& b);

bool is_rotation(const RotMat& r, double tol = 1e-9);

RotMat rot_x(double angle);
RotMat rot_y(double angle);
RotMat rot_z(double angle);

// Tape operations -----------------------------------------------------------

/// Axis-angle rows (N x 3) to row-major rotation matrices (N x 9).
ad::Tensor exp_map(const ad::Tensor& axis_angles);

/// 6-vector rows (N x 6) to row-major rotation matrices (N x 9).
ad::Tensor from6d(const ad::Tensor& rot6d);

}  // namespace svi::so3
