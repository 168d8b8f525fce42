#include "svi/shape_fit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <tuple>

#include "svi/errors.hpp"
#include "svi/so3.hpp"
#include "svi/text_io.hpp"

namespace svi::shape {

namespace {

using Key = std::array<std::int64_t, 3>;

Key voxel_key(const Vec3& p, const Vec3& origin, double edge) {
  return {static_cast<std::int64_t>(std::floor((p.x() - origin.x()) / edge)),
          static_cast<std::int64_t>(std::floor((p.y() - origin.y()) / edge)),
          static_cast<std::int64_t>(std::floor((p.z() - origin.z()) / edge))};
}

bool lex_less(const Vec3& a, const Vec3& b) {
  return std::tie(a.x(), a.y(), a.z()) < std::tie(b.x(), b.y(), b.z());
}

std::size_t count_voxels(std::span<const Vec3> cloud, const Vec3& origin, double edge, std::vector<Key>& keys) {
  keys.clear();
  for (const auto& p : cloud) keys.push_back(voxel_key(p, origin, edge));
  std::sort(keys.begin(), keys.end());
  return static_cast<std::size_t>(std::unique(keys.begin(), keys.end()) - keys.begin());
}

void bounds(std::span<const Vec3> pts, Vec3& lo, Vec3& hi) {
  lo = hi = pts[0];
  for (const auto& p : pts) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
}

}  // namespace

PointSet voxel_downsample(std::span<const Vec3> cloud, std::size_t target, std::size_t lo, std::size_t hi) {
  if (cloud.empty()) throw EmptyCloud("voxel_downsample: empty cloud");
  if (cloud.size() <= hi) return PointSet(cloud.begin(), cloud.end());
  Vec3 bmin, bmax;
  bounds(cloud, bmin, bmax);
  const double diag = std::max((bmax - bmin).norm(), 1e-9);

  // Voxel count falls as the edge grows; bisect on log(edge).
  std::vector<Key> keys;
  double log_lo = std::log(diag * 1e-6), log_hi = std::log(diag * 2);
  double edge = diag;
  std::size_t best_count = 0;
  double best_edge = diag;
  for (int iter = 0; iter < 100; ++iter) {
    edge = std::exp(0.5 * (log_lo + log_hi));
    const std::size_t n = count_voxels(cloud, bmin, edge, keys);
    const auto miss = [target](std::size_t c) { return c > target ? c - target : target - c; };
    if (best_count == 0 || miss(n) < miss(best_count)) {
      best_count = n;
      best_edge = edge;
    }
    if (n >= lo && n <= hi) break;
    if (n > target) {
      log_lo = std::log(edge);
    } else {
      log_hi = std::log(edge);
    }
  }
  edge = best_edge;

  // Canonical order inside each voxel so the centroids are independent of the
  // input order.
  std::vector<std::pair<Key, Vec3>> tagged;
  tagged.reserve(cloud.size());
  for (const auto& p : cloud) tagged.emplace_back(voxel_key(p, bmin, edge), p);
  std::sort(tagged.begin(), tagged.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return lex_less(a.second, b.second);
  });
  PointSet out;
  std::size_t i = 0;
  while (i < tagged.size()) {
    std::size_t j = i;
    Vec3 sum = Vec3::Zero();
    while (j < tagged.size() && tagged[j].first == tagged[i].first) sum += tagged[j++].second;
    out.push_back(sum / static_cast<double>(j - i));
    i = j;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Nearest-neighbour grid

NearestGrid::NearestGrid(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
  if (points_.empty()) throw EmptyCloud("NearestGrid: empty point set");
  Vec3 lo, hi;
  bounds(points_, lo, hi);
  const Vec3 extent = (hi - lo).cwiseMax(Vec3::Constant(1e-6));
  // About two points per cell, at most 64 cells per axis.
  const double volume = extent.x() * extent.y() * extent.z();
  cell_ = std::cbrt(2.0 * volume / static_cast<double>(points_.size()));
  cell_ = std::max(cell_, extent.maxCoeff() / 64.0);
  origin_ = lo;
  for (int a = 0; a < 3; ++a) dims_[a] = std::max(1, static_cast<int>(std::floor(extent[a] / cell_)) + 1);

  const std::size_t ncells = static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2];
  std::vector<std::size_t> cell_index(points_.size());
  start_.assign(ncells + 1, 0);
  for (std::size_t i = 0; i < points_.size(); ++i) {
    const auto c = cell_of(points_[i]);
    cell_index[i] = (static_cast<std::size_t>(c[2]) * dims_[1] + c[1]) * dims_[0] + c[0];
    ++start_[cell_index[i] + 1];
  }
  for (std::size_t c = 0; c < ncells; ++c) start_[c + 1] += start_[c];
  order_.resize(points_.size());
  std::vector<std::size_t> fill(start_.begin(), start_.end() - 1);
  for (std::size_t i = 0; i < points_.size(); ++i) order_[fill[cell_index[i]]++] = i;
}

std::array<int, 3> NearestGrid::cell_of(const Vec3& q) const {
  std::array<int, 3> c;
  for (int a = 0; a < 3; ++a) {
    const double f = std::floor((q[a] - origin_[a]) / cell_);
    c[a] = static_cast<int>(std::clamp(f, 0.0, static_cast<double>(dims_[a] - 1)));
  }
  return c;
}

NearestGrid::Hit NearestGrid::nearest(const Vec3& q) const {
  const auto c = cell_of(q);
  Hit best{0, std::numeric_limits<double>::infinity()};
  auto visit = [&](int x, int y, int z) {
    const std::size_t cell = (static_cast<std::size_t>(z) * dims_[1] + y) * dims_[0] + x;
    for (std::size_t k = start_[cell]; k < start_[cell + 1]; ++k) {
      const std::size_t i = order_[k];
      const double d = (points_[i] - q).squaredNorm();
      if (d < best.sq_dist || (d == best.sq_dist && i < best.index)) best = {i, d};
    }
  };
  const int max_ring = std::max({dims_[0], dims_[1], dims_[2]});
  for (int r = 0; r <= max_ring; ++r) {
    const int x0 = c[0] - r, x1 = c[0] + r, y0 = c[1] - r, y1 = c[1] + r, z0 = c[2] - r, z1 = c[2] + r;
    for (int z = std::max(z0, 0); z <= std::min(z1, dims_[2] - 1); ++z) {
      for (int y = std::max(y0, 0); y <= std::min(y1, dims_[1] - 1); ++y) {
        const bool shell = z == z0 || z == z1 || y == y0 || y == y1;
        if (shell) {
          for (int x = std::max(x0, 0); x <= std::min(x1, dims_[0] - 1); ++x) visit(x, y, z);
        } else {
          if (x0 >= 0) visit(x0, y, z);
          if (x1 < dims_[0] && x1 != x0) visit(x1, y, z);
        }
      }
    }
    // Distance from q to any cell beyond ring r.
    double bound = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
      if (c[a] - r > 0) bound = std::min(bound, q[a] - (origin_[a] + (c[a] - r) * cell_));
      if (c[a] + r < dims_[a] - 1) bound = std::min(bound, origin_[a] + (c[a] + r + 1) * cell_ - q[a]);
    }
    if (bound == std::numeric_limits<double>::infinity()) break;
    if (best.sq_dist < bound * bound && bound > 0) break;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Chamfer

double chamfer(std::span<const Vec3> P, std::span<const Vec3> V) {
  if (P.empty() || V.empty()) throw EmptyCloud("chamfer: empty point set");
  const NearestGrid gp(P), gv(V);
  double a = 0, b = 0;
  for (const auto& p : P) a += gv.nearest(p).sq_dist;
  for (const auto& v : V) b += gp.nearest(v).sq_dist;
  return a / static_cast<double>(P.size()) + b / static_cast<double>(V.size());
}

ChamferTarget::ChamferTarget(PointSet cloud) : cloud_(std::move(cloud)), grid_(cloud_) {}

ad::Tensor ChamferTarget::distance(const ad::Tensor& V) const {
  if (V.dim() != 2 || V.cols() != 3) throw ShapeError("chamfer: V must be N x 3");
  const std::size_t n = V.rows();
  if (n == 0) throw EmptyCloud("chamfer: empty point set");
  PointSet verts(n);
  const auto v = V.values();
  for (std::size_t i = 0; i < n; ++i) verts[i] = Vec3(v[3 * i], v[3 * i + 1], v[3 * i + 2]);
  const NearestGrid gv(verts);
  std::vector<std::size_t> nn_of_p(cloud_.size()), nn_of_v(n);
  double a = 0, b = 0;
  for (std::size_t i = 0; i < cloud_.size(); ++i) {
    const auto hit = gv.nearest(cloud_[i]);
    nn_of_p[i] = hit.index;
    a += hit.sq_dist;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto hit = grid_.nearest(verts[i]);
    nn_of_v[i] = hit.index;
    b += hit.sq_dist;
  }
  const double np = static_cast<double>(cloud_.size()), nv = static_cast<double>(n);
  return ad::record_op({}, {a / np + b / nv}, {V},
                       [this, V, verts, nn_of_p = std::move(nn_of_p), nn_of_v = std::move(nn_of_v), np,
                        nv](std::span<const double> g) {
                         auto gv = ad::grad_sink(V);
                         if (gv.empty()) return;
                         for (std::size_t i = 0; i < cloud_.size(); ++i) {
                           const std::size_t j = nn_of_p[i];
                           const Vec3 d = (2.0 * g[0] / np) * (verts[j] - cloud_[i]);
                           for (int k = 0; k < 3; ++k) gv[3 * j + k] += d[k];
                         }
                         for (std::size_t j = 0; j < verts.size(); ++j) {
                           const Vec3 d = (2.0 * g[0] / nv) * (verts[j] - cloud_[nn_of_v[j]]);
                           for (int k = 0; k < 3; ++k) gv[3 * j + k] += d[k];
                         }
                       });
}

// ---------------------------------------------------------------------------
// Energy

namespace {

// Rows of `points` (N x 3) mapped by R (from a 1 x 9 row-major tensor) and t.
ad::Tensor transform_rows(const ad::Tensor& points, const ad::Tensor& r9, const ad::Tensor& t) {
  static const std::size_t kTranspose[] = {0, 3, 6, 1, 4, 7, 2, 5, 8};
  const ad::Tensor rt = ad::reshape(ad::select_cols(r9, kTranspose), {3, 3});
  return ad::add(ad::matmul(points, rt), t);
}

ad::Tensor skeleton_tensor(const std::array<Vec3, body::kNumCoco>& s) {
  std::vector<double> v;
  v.reserve(3 * body::kNumCoco);
  for (const auto& p : s) v.insert(v.end(), {p.x(), p.y(), p.z()});
  return ad::Tensor::matrix(body::kNumCoco, 3, std::move(v));
}

}  // namespace

ad::Tensor energy(const FitProblem& problem, const ChamferTarget* target, const ad::Tensor& beta,
                  const ad::Tensor& phi, const ad::Tensor& rot6d, const ad::Tensor& t) {
  const auto& tpl = problem.body();
  const auto& w = problem.weights;
  const ad::Tensor r9 = so3::from6d(rot6d);
  const ad::Tensor kp = transform_rows(body::coco_keypoints(tpl, phi, beta), r9, t);
  ad::Tensor e = ad::scale(ad::sum(ad::square(ad::sub(kp, skeleton_tensor(problem.skeleton)))), w.skel);
  if (target != nullptr && w.cd > 0) {
    const ad::Tensor verts = transform_rows(body::vertices(tpl, phi, beta), r9, t);
    e = ad::add(e, ad::scale(target->distance(verts), w.cd));
  }
  e = ad::add(e, ad::scale(ad::sum(ad::square(phi)), w.phi));
  return ad::add(e, ad::scale(ad::sum(ad::square(beta)), w.beta));
}

double energy(const FitProblem& problem, const body::BodyShape& beta, const body::Pose& phi,
              const Alignment& align) {
  const auto& tpl = problem.body();
  const auto& w = problem.weights;
  const body::JointSet js = body::fk(tpl, phi, beta);
  const auto kp = body::regress_coco(tpl, js);
  double e_skel = 0;
  for (int k = 0; k < body::kNumCoco; ++k) {
    e_skel += (align.R * kp[k] + align.t - problem.skeleton[k]).squaredNorm();
  }
  double e = w.skel * e_skel;
  if (!problem.cloud.empty() && w.cd > 0) {
    auto verts = body::vertices(tpl, js, beta);
    for (auto& v : verts) v = align.R * v + align.t;
    e += w.cd * chamfer(problem.cloud, verts);
  }
  double phi_sq = 0;
  for (const auto& v : phi) phi_sq += v.squaredNorm();
  return e + w.phi * phi_sq + w.beta * beta.squaredNorm();
}

Alignment initial_alignment(const FitProblem& problem) {
  const auto& s = problem.skeleton;
  Alignment a;
  a.t = 0.5 * (s[body::kCocoLeftHip] + s[body::kCocoRightHip]);
  const Vec3 axis = s[body::kCocoLeftShoulder] - s[body::kCocoRightShoulder];
  // rot_y(theta) takes +x to (cos theta, 0, -sin theta).
  a.R = so3::rot_y(std::atan2(-axis.z(), axis.x()));
  return a;
}

FitResult solve(const FitProblem& problem_in, const FitOptions& options) {
  FitProblem problem = problem_in;
  std::unique_ptr<ChamferTarget> target;
  if (problem.cloud.empty()) {
    problem.weights.cd = 0.0;
  } else {
    PointSet cloud = options.downsample ? voxel_downsample(problem.cloud) : problem.cloud;
    // Fixed order keeps the energy bitwise independent of the input order.
    std::sort(cloud.begin(), cloud.end(), lex_less);
    problem.cloud = cloud;
    if (problem.weights.cd > 0) target = std::make_unique<ChamferTarget>(std::move(cloud));
  }

  const Alignment init = initial_alignment(problem);
  const so3::Rot6D r6 = so3::to6d(init.R);
  ad::Tensor beta = ad::Tensor::zeros({body::kShapeDim}, true);
  ad::Tensor phi = ad::Tensor::zeros({1, 72}, true);
  ad::Tensor rot = ad::Tensor::matrix(1, 6, std::vector<double>(r6.data(), r6.data() + 6), true);
  ad::Tensor t = ad::Tensor::matrix(1, 3, {init.t.x(), init.t.y(), init.t.z()}, true);

  struct Group {
    ad::Tensor param;
    double lr;
    std::vector<double> velocity;
  };
  std::vector<Group> groups = {{beta, options.lr_beta, {}},
                               {phi, options.lr, {}},
                               {rot, options.lr_rotation, {}},
                               {t, options.lr, {}}};
  for (auto& g : groups) g.velocity.assign(g.param.numel(), 0.0);

  FitResult result;
  result.energy_trace.reserve(static_cast<std::size_t>(options.iterations) + 1);
  for (int it = 0; it < options.iterations; ++it) {
    for (auto& g : groups) g.param.zero_grad();
    ad::GradRecorder rec;
    double e = 0;
    {
      ad::RecordScope scope(rec);
      const ad::Tensor loss = energy(problem, target.get(), beta, phi, rot, t);
      e = loss.item();
      if (!std::isfinite(e) || e > 1e6) {
        throw FitDiverged("shape fit diverged at iteration " + std::to_string(it) + " (energy " +
                          text::format_double(e) + ")");
      }
      rec.backward(loss);
    }
    result.energy_trace.push_back(e);
    for (auto& g : groups) {
      auto values = g.param.mutable_values();
      const auto grad = g.param.grad();
      for (std::size_t i = 0; i < values.size(); ++i) {
        g.velocity[i] = options.momentum * g.velocity[i] + grad[i];
        values[i] -= g.lr * g.velocity[i];
      }
    }
  }

  result.beta = body::shape_from_span(beta.values());
  result.phi = body::pose_from_span(phi.values());
  so3::Rot6D r;
  for (int k = 0; k < 6; ++k) r[k] = rot.values()[k];
  result.align.R = so3::from6d(r);
  result.align.t = Vec3(t.values()[0], t.values()[1], t.values()[2]);
  result.final_energy = energy(problem, result.beta, result.phi, result.align);
  result.energy_trace.push_back(result.final_energy);
  result.iterations = options.iterations;
  return result;
}

PointSet load_cloud(const std::string& path) {
  PointSet out;
  const std::string content = text::read_file(path);
  for (auto line : text::split_lines(content)) {
    line = text::trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto tok = text::split_ws(line);
    if (tok.size() != 3) throw FormatError("point cloud: expected 3 values per line");
    out.emplace_back(text::parse_double(tok[0]), text::parse_double(tok[1]), text::parse_double(tok[2]));
  }
  return out;
}

void save_cloud(const std::string& path, std::span<const Vec3> cloud) {
  std::string out;
  for (const auto& p : cloud) {
    text::append_double(out, p.x());
    out += ' ';
    text::append_double(out, p.y());
    out += ' ';
    text::append_double(out, p.z());
    out += '\n';
  }
  text::write_file(path, out);
}

}  // namespace svi::shape
