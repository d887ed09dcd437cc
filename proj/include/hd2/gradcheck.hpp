#pragma once

#include <functional>
#include <vector>

#include "hd2/tensor.hpp"

namespace hd2::diffcore {

// Compares the analytic gradient of a scalar-valued function against central
// finite differences at each entry of each listed parameter. Returns
// max |analytic - fd| / max(1, |analytic|). eps must lie in [1e-7, 1e-3].
// Throws NumericError if the function is non-finite at any probe point.
// corrupt_analytic perturbs one analytic entry first (negative-control hook).
double grad_check(const std::function<Tensor()>& f,
                  const std::vector<Parameter*>& params, double eps,
                  bool corrupt_analytic = false);

}  // namespace hd2::diffcore
