#include "metagp/fdcheck.hpp"

#include <cmath>

#include "metagp/errors.hpp"

namespace metagp::ad {

FdReport finite_difference_check(const std::function<double()>& loss,
                                 const std::function<std::vector<Matrix>()>& ad_gradients,
                                 const std::vector<Matrix*>& params, double eps) {
  std::vector<Matrix> grads = ad_gradients();
  if (grads.size() != params.size()) {
    throw ShapeError("finite_difference_check: gradient count does not match parameter count");
  }
  const double base = loss();
  FdReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Matrix& theta = *params[p];
    const Matrix& g = grads[p];
    if (theta.rows() != g.rows() || theta.cols() != g.cols()) {
      throw ShapeError("finite_difference_check: gradient/parameter shape mismatch");
    }
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      const double saved = theta(i);
      theta(i) = saved + eps;
      const double up = loss();
      theta(i) = saved - eps;
      const double down = loss();
      theta(i) = saved;

      const double slope_up = (up - base) / eps;
      const double slope_down = (base - down) / eps;
      const double disagree = std::abs(slope_up - slope_down);
      if (disagree > 1e-3 &&
          disagree > 0.25 * std::max({std::abs(slope_up), std::abs(slope_down), 1e-8})) {
        ++report.excluded;
        continue;
      }
      const double g_fd = (up - down) / (2.0 * eps);
      const double g_ad = g(i);
      ++report.checked;
      // Below the 1e-8 floor the central difference carries no signal: an O(1)
      // loss evaluated twice differs by ulps, so g_fd has absolute noise around
      // |loss|*2^-52/(2*eps) ~ 1e-11. A null direction (true gradient zero,
      // e.g. a shift-invariant bias) would otherwise read as noise/floor ~ 1e-3.
      if (std::abs(g_ad) < 1e-8 && std::abs(g_fd) < 1e-8) continue;
      const double rel =
          std::abs(g_ad - g_fd) / std::max({std::abs(g_ad), std::abs(g_fd), 1e-8});
      report.max_rel_error = std::max(report.max_rel_error, rel);
    }
  }
  return report;
}

}  // namespace metagp::ad
