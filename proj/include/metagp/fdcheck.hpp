#pragma once

#include <functional>
#include <vector>

#include "metagp/tape.hpp"

namespace metagp::ad {

struct FdReport {
  double max_rel_error = 0.0;  // over checked coordinates
  long checked = 0;
  long excluded = 0;  // coordinates flagged as kinks (one-sided slopes disagree)
};

// Central-difference gradient check. `loss` recomputes the scalar loss from the
// current contents of `params` (it must be deterministic: dropout off, episode
// fixed); `ad_gradients` returns the reverse-mode gradients at the unperturbed
// point, one matrix per parameter, in the same order. Each parameter scalar is
// perturbed by +/-eps in place and restored. Relative error per coordinate is
// |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8); coordinates where both gradients
// sit below the 1e-8 floor contribute zero error — at that scale the central
// difference is round-off noise (~|loss| * 2^-52 / (2 eps)), not a gradient
// estimate, so agreement-with-zero is the only claim it can support.
//
// Kink handling: a coordinate is excluded (counted, not checked) when the two
// one-sided slopes disagree by more than 25% of their magnitude and by more
// than 1e-3 absolute — the signature of a ReLU-style kink inside the probe
// interval, where the central difference estimates nothing meaningful.
FdReport finite_difference_check(const std::function<double()>& loss,
                                 const std::function<std::vector<Matrix>()>& ad_gradients,
                                 const std::vector<Matrix*>& params, double eps = 1e-5);

}  // namespace metagp::ad
