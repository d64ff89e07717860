#include "xemb/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace xemb {

void adamw_update(std::vector<double>& param, const std::vector<double>& grad,
                  std::vector<double>& m, std::vector<double>& v, int64_t step,
                  const AdamWConfig& cfg) {
  if (grad.size() != param.size() || m.size() != param.size() ||
      v.size() != param.size())
    throw std::invalid_argument("adamw_update: shape mismatch");
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    if (!std::isfinite(g))
      throw std::runtime_error("adamw_update: non-finite gradient");
    param[i] -= cfg.lr * cfg.weight_decay * param[i];
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    param[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

void AdamW::register_param(const std::string& name, const Tensor& t) {
  if (!t.requires_grad())
    throw std::invalid_argument("register_param: '" + name +
                                "' does not require grad");
  if (params_.count(name))
    throw std::invalid_argument("register_param: '" + name +
                                "' registered twice");
  params_.emplace(name, t);
  SlotState s;
  s.m.assign(t.data().size(), 0.0);
  s.v.assign(t.data().size(), 0.0);
  slots_.emplace(name, std::move(s));
}

void AdamW::step() {
  ++step_;
  for (auto& [name, t] : params_) {
    auto& slot = slots_.at(name);
    try {
      adamw_update(t.mutable_data(), t.grad(), slot.m, slot.v, step_, cfg_);
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string(e.what()) + " (parameter '" + name +
                               "')");
    }
    t.zero_grad();
  }
}

int64_t AdamW::param_count() const {
  int64_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

}  // namespace xemb
