// Central finite-difference gradient checking, the test oracle for every
// differentiable kernel and model.
#pragma once

#include <functional>
#include <vector>

#include "xemb/tensor.hpp"

namespace xemb {

// fn maps the given inputs to a scalar tensor and must be deterministic.
// Returns max over all input coordinates of
//   |autodiff - central difference| / max(1, |central difference|).
// Throws on eps <= 0 and when fn is not deterministic at the base point.
double finite_difference_check(
    const std::function<Tensor(const std::vector<Tensor>&)>& fn,
    const std::vector<Tensor>& inputs, double eps);

}  // namespace xemb
