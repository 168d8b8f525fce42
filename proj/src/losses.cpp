#include "svi/losses.hpp"

#include <string>

#include "svi/errors.hpp"

namespace svi::loss {

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) throw ShapeError(std::string(what) + ": shape mismatch");
}

void require_rows(const Tensor& a, std::size_t min_rows, const char* what) {
  if (a.dim() != 2 || a.rows() < min_rows) {
    throw ShapeError(std::string(what) + ": needs at least " + std::to_string(min_rows) + " frames");
  }
}

// Per-row sum of squares, F x 1.
Tensor row_sq(const Tensor& x) { return matmul(square(x), Tensor::full({x.cols(), 1}, 1.0)); }

Tensor mean_row_sq(const Tensor& x) { return scale(sum(square(x)), 1.0 / static_cast<double>(x.rows())); }

Tensor rows_from(const Tensor& x, std::size_t k) { return slice_rows(x, k, x.rows()); }
Tensor rows_until(const Tensor& x, std::size_t drop) { return slice_rows(x, 0, x.rows() - drop); }

}  // namespace

void LossWeights::validate() const {
  for (double w : {phi, T, dT, contact, footskate, jerk, fk_balance}) {
    if (!(w >= 0.0)) throw ConfigError("loss weights must be nonnegative");
  }
}

Tensor l2(const Tensor& pred, const Tensor& target) {
  require_same(pred, target, "l2");
  require_rows(pred, 1, "l2");
  return mean_row_sq(sub(pred, target));
}

Tensor cycle(const Tensor& dT, const Tensor& T, const Tensor& dT_gt) {
  require_same(dT, T, "cycle");
  require_same(dT, dT_gt, "cycle");
  require_rows(dT, 2, "cycle");
  const Tensor d = rows_from(dT, 1);
  const Tensor step = sub(rows_from(T, 1), rows_until(T, 1));
  return add(mean_row_sq(sub(d, step)), mean_row_sq(sub(d, rows_from(dT_gt, 1))));
}

Tensor rotation_fk(const body::BodyTemplate& tpl, const Tensor& phi, const Tensor& phi_gt, const Tensor& beta,
                   double balance) {
  require_same(phi, phi_gt, "rotation_fk");
  require_rows(phi, 1, "rotation_fk");
  const Tensor joints = body::fk_joints(tpl, phi, beta);
  const Tensor joints_gt = body::fk_joints(tpl, phi_gt.detach(), beta.detach()).detach();
  return add(mean_row_sq(sub(phi, phi_gt)), scale(mean_row_sq(sub(joints, joints_gt)), balance));
}

Tensor contact_bce(const Tensor& q, const Tensor& q_gt) {
  require_same(q, q_gt, "contact_bce");
  require_rows(q, 1, "contact_bce");
  const Tensor qc = clamp(q, kProbClamp, 1.0 - kProbClamp);
  const Tensor pos = mul(q_gt, log(qc));
  const Tensor neg_part = mul(add_scalar(neg(q_gt), 1.0), log(add_scalar(neg(qc), 1.0)));
  return scale(sum(add(pos, neg_part)), -1.0 / static_cast<double>(q.rows()));
}

Tensor foot_skate(const body::BodyTemplate& tpl, const Tensor& joints, const Tensor& dT, const Tensor& q_gt) {
  require_rows(joints, 2, "foot_skate");
  if (joints.cols() != 3 * body::kNumJoints || dT.rows() != joints.rows() || dT.cols() != 3 ||
      q_gt.rows() != joints.rows() || q_gt.cols() != 2) {
    throw ShapeError("foot_skate: expected F x 72 joints, F x 3 dT and F x 2 contacts");
  }
  const Tensor step = rows_from(dT, 1);
  Tensor total_sq;
  for (int side = 0; side < 2; ++side) {
    const auto base = static_cast<std::size_t>(3 * tpl.foot_joints[side]);
    const Tensor foot = slice_cols(joints, base, base + 3);
    const Tensor slide = add(sub(rows_from(foot, 1), rows_until(foot, 1)), step);
    const Tensor gated = mul(row_sq(slide), slice_cols(rows_from(q_gt, 1), side, side + 1));
    total_sq = total_sq.defined() ? add(total_sq, sum(gated)) : sum(gated);
  }
  return scale(total_sq, 1.0 / static_cast<double>(joints.rows() - 1));
}

Tensor jerk(const Tensor& joints) {
  require_rows(joints, 4, "jerk");
  const std::size_t n = joints.rows();
  const Tensor p0 = slice_rows(joints, 3, n);
  const Tensor p1 = slice_rows(joints, 2, n - 1);
  const Tensor p2 = slice_rows(joints, 1, n - 2);
  const Tensor p3 = slice_rows(joints, 0, n - 3);
  const Tensor d = sub(add(p0, scale(sub(p2, p1), 3.0)), p3);
  return mean_row_sq(d);
}

Tensor total(const LossTerms& terms, const LossWeights& w) {
  Tensor out = Tensor::scalar(0.0);
  const std::pair<const Tensor*, double> parts[] = {{&terms.phi, w.phi},         {&terms.T, w.T},
                                                    {&terms.dT, w.dT},           {&terms.contact, w.contact},
                                                    {&terms.footskate, w.footskate}, {&terms.jerk, w.jerk}};
  for (const auto& [t, weight] : parts) {
    if (t->defined() && weight != 0.0) out = add(out, scale(*t, weight));
  }
  return out;
}

}  // namespace svi::loss
