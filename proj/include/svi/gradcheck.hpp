#pragma once

// Central finite-difference checks for tape-recorded functions.

#include <functional>
#include <vector>

#include "svi/autodiff.hpp"

namespace svi::ad {

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
};

/// Compares analytic gradients of `fn(leaves)` against central differences
/// with step `eps`. The relative error of each entry is
/// |a - n| / max(|a|, |n|, floor'), with floor' = max(floor, 1e-3 * largest
/// analytic entry) so entries that are zero up to rounding do not dominate. At most `max_entries` entries per leaf are probed (strided).
GradCheckResult check_gradients(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                                std::vector<Tensor> leaves, double eps = 1e-5, double floor = 1e-6,
                                std::size_t max_entries = 64);

}  // namespace svi::ad
