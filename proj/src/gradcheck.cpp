#include "svi/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace svi::ad {

GradCheckResult check_gradients(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                                std::vector<Tensor> leaves, double eps, double floor, std::size_t max_entries) {
  for (auto& t : leaves) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    GradRecorder rec;
    RecordScope scope(rec);
    const Tensor loss = fn(leaves);
    rec.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (const auto& t : leaves) {
    if (t.has_grad()) {
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    } else {
      analytic.emplace_back(t.numel(), 0.0);
    }
  }

  double scale = 0.0;
  for (const auto& g : analytic)
    for (double v : g) scale = std::max(scale, std::abs(v));
  const double denom_floor = std::max(floor, 1e-3 * scale);

  GradCheckResult res;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    auto values = leaves[l].mutable_values();
    const std::size_t n = values.size();
    const std::size_t stride = std::max<std::size_t>(1, n / max_entries);
    for (std::size_t i = 0; i < n; i += stride) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = fn(leaves).item();
      values[i] = saved - eps;
      const double down = fn(leaves).item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[l][i];
      const double abs_err = std::abs(a - numeric);
      res.max_abs_error = std::max(res.max_abs_error, abs_err);
      res.max_rel_error = std::max(res.max_rel_error, abs_err / std::max({std::abs(a), std::abs(numeric), denom_floor}));
      ++res.checked;
    }
  }
  return res;
}

}  // namespace svi::ad
