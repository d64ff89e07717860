#include "xemb/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace xemb {

double finite_difference_check(
    const std::function<Tensor(const std::vector<Tensor>&)>& fn,
    const std::vector<Tensor>& inputs, double eps) {
  if (eps <= 0.0)
    throw std::invalid_argument("finite_difference_check: eps must be > 0");

  for (const auto& in : inputs) const_cast<Tensor&>(in).zero_grad();

  Tensor out = fn(inputs);
  if (out.numel() != 1)
    throw std::invalid_argument(
        "finite_difference_check: fn must be scalar-valued");
  const double base = out.item();
  if (fn(inputs).item() != base)
    throw std::runtime_error(
        "finite_difference_check: fn is not deterministic");

  backprop(out);
  std::vector<std::vector<double>> autodiff;
  autodiff.reserve(inputs.size());
  for (const auto& in : inputs) autodiff.push_back(in.grad());

  double max_rel_err = 0.0;
  for (size_t t = 0; t < inputs.size(); ++t) {
    if (!inputs[t].requires_grad()) continue;
    auto& buf = const_cast<std::vector<double>&>(inputs[t].data());
    for (size_t i = 0; i < buf.size(); ++i) {
      const double saved = buf[i];
      buf[i] = saved + eps;
      const double fp = fn(inputs).item();
      buf[i] = saved - eps;
      const double fm = fn(inputs).item();
      buf[i] = saved;
      const double fd = (fp - fm) / (2.0 * eps);
      const double rel =
          std::abs(autodiff[t][i] - fd) / std::max(1.0, std::abs(fd));
      max_rel_err = std::max(max_rel_err, rel);
    }
  }
  return max_rel_err;
}

}  // namespace xemb
