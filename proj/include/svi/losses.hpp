#pragma once

// Training objectives on window tensors. Every per-frame quantity is a row;
// terms are summed within a frame and averaged over the frames that
// contribute (all rows, or rows t >= k for temporal differences).

#include "svi/autodiff.hpp"
#include "svi/body_model.hpp"

namespace svi::loss {

using ad::Tensor;

struct LossWeights {
  double phi = 20.0;
  double T = 5.0;
  double dT = 5.0;
  double contact = 0.001;
  double footskate = 100.0;
  double jerk = 50.0;
  double fk_balance = 2.5;

  void validate() const;  // throws ConfigError on negative entries
};

/// Mean over rows of the squared L2 distance; any F x D pair.
Tensor l2(const Tensor& pred, const Tensor& target);

/// Cycle consistency for rows t >= 1:
/// |dT_t - (T_t - T_{t-1})|^2 + |dT_t - dT_gt_t|^2.
Tensor cycle(const Tensor& dT, const Tensor& T, const Tensor& dT_gt);

/// |phi - phi_gt|^2 + balance * |fk(phi) - fk(phi_gt)|^2 per frame. phi is
/// F x 72; beta 1 x 10.
Tensor rotation_fk(const body::BodyTemplate& tpl, const Tensor& phi, const Tensor& phi_gt, const Tensor& beta,
                   double balance = 2.5);

inline constexpr double kProbClamp = 1e-7;

/// Binary cross-entropy summed over both feet. q is post-sigmoid F x 2.
Tensor contact_bce(const Tensor& q, const Tensor& q_gt);

/// Rows t >= 1: sum_j q_gt_j |f_j,t - f_j,t-1 + dT_t|^2 where f are the ankle
/// positions taken from `joints` (F x 72, world-oriented, root at origin).
Tensor foot_skate(const body::BodyTemplate& tpl, const Tensor& joints, const Tensor& dT, const Tensor& q_gt);

/// Rows t >= 3: sum over joints of the squared backward third difference.
Tensor jerk(const Tensor& joints);

struct LossTerms {
  Tensor phi, T, dT, contact, footskate, jerk;
};

/// Weighted sum; undefined terms count as zero.
Tensor total(const LossTerms& terms, const LossWeights& weights);

}  // namespace svi::loss
