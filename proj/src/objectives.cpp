#include "xemb/objectives.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

namespace xemb::obj {

namespace {
constexpr double kLog2Pi = 1.8378770664093453;
}

FlowSample flow_interpolate(const Tensor& x0, const Tensor& x1, double t) {
  if (x0.shape() != x1.shape())
    throw std::invalid_argument("flow_interpolate: shape mismatch " +
                                shape_str(x0.shape()) + " vs " +
                                shape_str(x1.shape()));
  if (t < 0.0 || t > 1.0)
    throw std::invalid_argument("flow_interpolate: t = " + std::to_string(t) +
                                " outside [0,1]");
  FlowSample s;
  s.x0 = x0;
  s.x1 = x1;
  s.t = t;
  if (t == 0.0)
    s.x_t = Tensor::from_data(x0.shape(), x0.data());
  else if (t == 1.0)
    s.x_t = Tensor::from_data(x1.shape(), x1.data());
  else
    s.x_t = add(scale(x1, t), scale(x0, 1.0 - t));
  s.v_t = sub(x1, x0);
  return s;
}

Tensor loss_fm(const Tensor& u_pred, const Tensor& v_t) {
  if (u_pred.shape() != v_t.shape())
    throw std::invalid_argument("loss_fm: shape mismatch " +
                                shape_str(u_pred.shape()) + " vs " +
                                shape_str(v_t.shape()));
  Tensor d = sub(u_pred, v_t);
  return mean(mul(d, d));
}

VariationalModel VariationalModel::init(const VariationalConfig& cfg) {
  VariationalModel m;
  m.cfg_ = cfg;
  Rng rng(cfg.seed);
  auto dense = [&rng](int64_t r, int64_t c) {
    return Tensor::randn({r, c}, rng, 1.0 / std::sqrt(static_cast<double>(r)),
                         true);
  };
  m.w1_ = dense(cfg.in_dim, cfg.hidden);
  m.b1_ = Tensor::zeros({cfg.hidden}, true);
  m.w2_ = dense(cfg.hidden, cfg.hidden);
  m.b2_ = Tensor::zeros({cfg.hidden}, true);
  m.mu_w_ = dense(cfg.hidden, cfg.out_dim);
  m.mu_b_ = Tensor::zeros({cfg.out_dim}, true);
  m.lv_w_ = dense(cfg.hidden, cfg.out_dim);
  m.lv_b_ = Tensor::zeros({cfg.out_dim}, true);
  AdamWConfig ocfg;
  ocfg.lr = cfg.lr;
  m.opt_ = AdamW(ocfg);
  for (auto& [name, t] : m.named_tensors()) m.opt_.register_param(name, t);
  return m;
}

std::vector<std::pair<std::string, Tensor>> VariationalModel::named_tensors() {
  return {{"q.w1", w1_},     {"q.b1", b1_},     {"q.w2", w2_},
          {"q.b2", b2_},     {"q.mu_w", mu_w_}, {"q.mu_b", mu_b_},
          {"q.lv_w", lv_w_}, {"q.lv_b", lv_b_}};
}

std::pair<Tensor, Tensor> VariationalModel::forward(const Tensor& z_task,
                                                    bool frozen) const {
  if (z_task.rank() != 2 || z_task.dim(1) != cfg_.in_dim)
    throw std::invalid_argument("variational forward: expected [b," +
                                std::to_string(cfg_.in_dim) + "], got " +
                                shape_str(z_task.shape()));
  auto view = [frozen](const Tensor& t) { return frozen ? t.detach() : t; };
  Tensor h1 = gelu(add(matmul(z_task, view(w1_)), view(b1_)));
  Tensor h2 = gelu(add(matmul(h1, view(w2_)), view(b2_)));
  Tensor mu = add(matmul(h2, view(mu_w_)), view(mu_b_));
  Tensor lv = scale(xemb::tanh(add(matmul(h2, view(lv_w_)), view(lv_b_))),
                    cfg_.logvar_scale);
  return {mu, lv};
}

Tensor VariationalModel::mean_log_likelihood(const Tensor& z_task,
                                             const Tensor& z_emb,
                                             bool frozen) const {
  if (z_emb.rank() != 2 || z_emb.dim(1) != cfg_.out_dim ||
      z_emb.dim(0) != z_task.dim(0))
    throw std::invalid_argument("variational log-likelihood: bad z_emb shape");
  auto [mu, lv] = forward(z_task, frozen);
  Tensor d = sub(z_emb, mu);
  Tensor quad = div(mul(d, d), exp(lv));
  // per-entry: -0.5*(quad + lv + log 2pi); batch mean = sum / b
  Tensor per_entry = scale(add(add(quad, lv), Tensor::scalar(kLog2Pi)), -0.5);
  return scale(sum(per_entry), 1.0 / static_cast<double>(z_task.dim(0)));
}

double VariationalModel::fit_step(const Tensor& z_task, const Tensor& z_emb) {
  if (z_task.dim(0) < 2)
    throw std::invalid_argument("fit_variational_step: batch must be >= 2");
  Tensor zt = z_task.detach();
  Tensor ze = z_emb.detach();
  Tensor nll = neg(mean_log_likelihood(zt, ze, false));
  const double value = nll.item();
  if (!std::isfinite(value))
    throw std::runtime_error("fit_variational_step: non-finite likelihood");
  for (auto& [name, t] : named_tensors()) t.zero_grad();
  backprop(nll);
  opt_.step();
  return value;
}

Tensor club_loss(const Tensor& z_task, const Tensor& z_emb,
                 const VariationalModel& q) {
  if (z_task.rank() != 2 || z_emb.rank() != 2 ||
      z_task.dim(0) != z_emb.dim(0))
    throw std::invalid_argument("club_loss: batch shapes disagree");
  const int64_t b = z_task.dim(0);
  if (b < 2)
    throw std::invalid_argument(
        "club_loss: batch of 1 admits no negative pairing");
  Tensor pos = q.mean_log_likelihood(z_task, z_emb, true);
  // shift-by-one derangement for the marginal term
  auto map = std::make_shared<std::vector<int64_t>>();
  const int64_t d = z_emb.dim(1);
  map->reserve(static_cast<size_t>(b * d));
  for (int64_t i = 0; i < b; ++i)
    for (int64_t j = 0; j < d; ++j)
      map->push_back(((i + 1) % b) * d + j);
  Tensor shuffled = permute_gather(z_emb, map, z_emb.shape(), true);
  Tensor negt = q.mean_log_likelihood(z_task, shuffled, true);
  return sub(pos, negt);
}

double club_mi_estimate(const std::vector<double>& z_task,
                        const std::vector<double>& z_emb, int count, int dim_t,
                        int dim_e, int fit_steps, double fit_lr,
                        uint64_t seed) {
  if (count < 4) throw std::invalid_argument("club_mi_estimate: count < 4");
  // cross-fit: q learns from the even-indexed pairs, the bound is evaluated
  // on the odd-indexed pairs, so fit overfit cannot bias the estimate
  std::vector<double> fit_t, fit_e, eval_t, eval_e;
  for (int i = 0; i < count; ++i) {
    auto& dst_t = (i % 2 == 0) ? fit_t : eval_t;
    auto& dst_e = (i % 2 == 0) ? fit_e : eval_e;
    dst_t.insert(dst_t.end(),
                 z_task.begin() + static_cast<int64_t>(i) * dim_t,
                 z_task.begin() + static_cast<int64_t>(i + 1) * dim_t);
    dst_e.insert(dst_e.end(),
                 z_emb.begin() + static_cast<int64_t>(i) * dim_e,
                 z_emb.begin() + static_cast<int64_t>(i + 1) * dim_e);
  }
  VariationalConfig cfg;
  cfg.in_dim = dim_t;
  cfg.out_dim = dim_e;
  cfg.hidden = std::max(16, 2 * std::max(dim_t, dim_e));
  cfg.lr = fit_lr;
  cfg.seed = seed;
  auto q = VariationalModel::init(cfg);
  const int n_fit = static_cast<int>(fit_t.size()) / dim_t;
  const int n_eval = static_cast<int>(eval_t.size()) / dim_t;
  Tensor zt = Tensor::from_data({n_fit, dim_t}, std::move(fit_t));
  Tensor ze = Tensor::from_data({n_fit, dim_e}, std::move(fit_e));
  for (int s = 0; s < fit_steps; ++s) q.fit_step(zt, ze);
  Tensor zth = Tensor::from_data({n_eval, dim_t}, std::move(eval_t));
  Tensor zeh = Tensor::from_data({n_eval, dim_e}, std::move(eval_e));
  return club_loss(zth, zeh, q).item();
}

Tensor info_nce(const Tensor& anchor, const Tensor& positive,
                const std::vector<Tensor>& negatives, double temperature) {
  if (negatives.empty())
    throw std::invalid_argument("info_nce: needs at least one negative");
  if (temperature <= 0)
    throw std::invalid_argument("info_nce: temperature must be positive");
  const double inv_t = 1.0 / temperature;
  std::vector<Tensor> sims;
  sims.reserve(negatives.size() + 1);
  sims.push_back(scale(cosine_similarity(anchor, positive), inv_t));
  for (const auto& n : negatives)
    sims.push_back(scale(cosine_similarity(anchor, n), inv_t));
  double m = sims[0].item();
  for (const auto& s : sims) m = std::max(m, s.item());
  // constant shift by the max keeps exp in range and cancels analytically
  Tensor denom = Tensor::scalar(0.0);
  for (const auto& s : sims) denom = add(denom, exp(add_scalar(s, -m)));
  return sub(log(denom), add_scalar(sims[0], -m));
}

Tensor total_loss(const LossParts& parts, const LossWeights& w) {
  auto check = [](const Tensor& t, const char* name) {
    if (t.numel() != 1 || !std::isfinite(t.item()))
      throw std::runtime_error(std::string("total_loss: non-finite part ") +
                               name);
  };
  check(parts.fm, "L_FM");
  Tensor total = parts.fm;
  if (parts.disentangle) {
    check(*parts.disentangle, "L_disentangle");
    total = add(total, scale(*parts.disentangle, w.dis));
  }
  if (parts.task_contrast) {
    check(*parts.task_contrast, "L_task_contrast");
    total = add(total, scale(*parts.task_contrast, w.task));
  }
  if (parts.emb_contrast) {
    check(*parts.emb_contrast, "L_emb_contrast");
    total = add(total, scale(*parts.emb_contrast, w.emb));
  }
  return total;
}

}  // namespace xemb::obj
