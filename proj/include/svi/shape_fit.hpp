#pragma once

// Body-shape estimation from a T-pose observation: a point cloud P and a
// 17-keypoint skeleton J. Fits (beta, phi, M) where M = (R, t) maps model
// coordinates to the world.

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "svi/autodiff.hpp"
#include "svi/body_model.hpp"

namespace svi::shape {

using Vec3 = Eigen::Vector3d;
using RotMat = Eigen::Matrix3d;
using PointSet = std::vector<Vec3>;

/// Centroid per occupied voxel, with the voxel edge found by bisection so the
/// result holds between `lo` and `hi` points. Clouds with at most `hi` points
/// are returned unchanged. Output is ordered by voxel and does not depend on
/// the input order.
PointSet voxel_downsample(std::span<const Vec3> cloud, std::size_t target = 4000, std::size_t lo = 3000,
                          std::size_t hi = 5000);

/// Exact nearest-neighbour queries on a uniform grid. Ties go to the lower
/// index.
class NearestGrid {
 public:
  explicit NearestGrid(std::span<const Vec3> points);

  struct Hit {
    std::size_t index = 0;
    double sq_dist = 0.0;
  };
  Hit nearest(const Vec3& q) const;
  std::size_t size() const { return points_.size(); }

 private:
  std::vector<Vec3> points_;
  Vec3 origin_ = Vec3::Zero();
  double cell_ = 1.0;
  std::array<int, 3> dims_{1, 1, 1};
  std::vector<std::size_t> start_;
  std::vector<std::size_t> order_;

  std::array<int, 3> cell_of(const Vec3& q) const;
};

/// Symmetric Chamfer distance: mean over P of the squared distance to the
/// nearest point in V, plus the same from V to P.
double chamfer(std::span<const Vec3> P, std::span<const Vec3> V);

/// Differentiable Chamfer distance against a fixed cloud.
class ChamferTarget {
 public:
  explicit ChamferTarget(PointSet cloud);
  /// V is N x 3.
  ad::Tensor distance(const ad::Tensor& V) const;
  const PointSet& cloud() const { return cloud_; }

 private:
  PointSet cloud_;
  NearestGrid grid_;
};

struct FitWeights {
  double skel = 1.0;
  double cd = 15.0;
  double phi = 1.0;
  double beta = 0.01;
};

struct Alignment {
  RotMat R = RotMat::Identity();
  Vec3 t = Vec3::Zero();
};

struct FitProblem {
  PointSet cloud;  // empty disables the Chamfer term
  std::array<Vec3, body::kNumCoco> skeleton{};
  FitWeights weights;
  const body::BodyTemplate* tpl = nullptr;  // default template when null

  const body::BodyTemplate& body() const { return tpl ? *tpl : body::default_template(); }
};

struct FitOptions {
  int iterations = 500;
  double momentum = 0.9;
  double lr = 1e-2;           // t and phi
  double lr_beta = 1e-2;
  double lr_rotation = 1e-3;  // 6D rotation
  bool downsample = true;
};

struct FitResult {
  body::BodyShape beta = body::BodyShape::Zero();
  body::Pose phi{};
  Alignment align;
  std::vector<double> energy_trace;
  double final_energy = 0.0;
  int iterations = 0;
};

/// Energy terms on the tape. `phi` is 1 x 72, `beta` 10, `rot6d` 1 x 6 and
/// `t` 1 x 3. A null chamfer target drops the Chamfer term.
ad::Tensor energy(const FitProblem& problem, const ChamferTarget* target, const ad::Tensor& beta,
                  const ad::Tensor& phi, const ad::Tensor& rot6d, const ad::Tensor& t);

/// Plain evaluation of the energy.
double energy(const FitProblem& problem, const body::BodyShape& beta, const body::Pose& phi,
              const Alignment& align);

/// Warm start: t at the observed mid-hip, R a rotation about y that aligns
/// the template shoulder axis with the observed one.
Alignment initial_alignment(const FitProblem& problem);

/// SGD with momentum over (beta, phi, R, t). Throws FitDiverged when the
/// energy exceeds 1e6 or stops being finite.
FitResult solve(const FitProblem& problem, const FitOptions& options = {});

/// Whitespace-separated xyz per line.
PointSet load_cloud(const std::string& path);
void save_cloud(const std::string& path, std::span<const Vec3> cloud);

}  // namespace svi::shape
