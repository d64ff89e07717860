#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "xemb/objectives.hpp"

using namespace xemb;
using namespace xemb::obj;

TEST_CASE("flow interpolation closed forms and endpoint identities") {
  auto x0 = Tensor::from_data({2}, {0.0, 0.0});
  auto x1 = Tensor::from_data({2}, {2.0, 2.0});
  auto s = flow_interpolate(x0, x1, 0.25);
  CHECK(s.x_t.data()[0] == 0.5);
  CHECK(s.v_t.data()[0] == 2.0);

  Rng rng(1);
  auto a = Tensor::randn({4, 5}, rng);
  auto b = Tensor::randn({4, 5}, rng);
  CHECK(flow_interpolate(a, b, 0.0).x_t.data() == a.data());
  CHECK(flow_interpolate(a, b, 1.0).x_t.data() == b.data());
  // velocity does not depend on t
  CHECK(flow_interpolate(a, b, 0.2).v_t.data() ==
        flow_interpolate(a, b, 0.9).v_t.data());

  CHECK_THROWS_AS(flow_interpolate(a, b, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(flow_interpolate(a, b, 1.0001), std::invalid_argument);
  auto wrong = Tensor::zeros({3});
  CHECK_THROWS_AS(flow_interpolate(a, wrong, 0.5), std::invalid_argument);
}

TEST_CASE("flow-matching loss against a naive oracle") {
  auto v = Tensor::from_data({3}, {1.0, -1.0, 2.0});
  CHECK(loss_fm(v, v).item() == 0.0);
  auto shifted = add_scalar(v, 1.0);
  CHECK(loss_fm(shifted, v).item() == doctest::Approx(1.0).epsilon(1e-15));

  Rng rng(2);
  auto u = Tensor::randn({7, 9}, rng);
  auto w = Tensor::randn({7, 9}, rng);
  double naive = 0.0;
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 9; ++j) {
      const double d =
          u.data()[static_cast<size_t>(i) * 9 + j] -
          w.data()[static_cast<size_t>(i) * 9 + j];
      naive += d * d;
    }
  naive /= 63.0;
  CHECK(std::abs(loss_fm(u, w).item() - naive) < 1e-12);

  CHECK_THROWS_AS(loss_fm(u, Tensor::zeros({7, 8})), std::invalid_argument);
}

namespace {
// correlated standard Gaussians with the given rho
void gaussian_pairs(double rho, int n, uint64_t seed, std::vector<double>* x,
                    std::vector<double>* y) {
  Rng rng(seed);
  x->resize(static_cast<size_t>(n));
  y->resize(static_cast<size_t>(n));
  const double s = std::sqrt(1.0 - rho * rho);
  for (int i = 0; i < n; ++i) {
    const double a = rng.gaussian();
    (*x)[static_cast<size_t>(i)] = a;
    (*y)[static_cast<size_t>(i)] = rho * a + s * rng.gaussian();
  }
}
}  // namespace

TEST_CASE("club estimate matches its gaussian closed form") {
  // At the optimal q the CLUB value on correlated standard Gaussians is
  // rho^2 / (1 - rho^2): an upper bound on the mutual information
  // -0.5 ln(1 - rho^2), tight exactly at independence.
  const int n = 10000;
  for (double rho : {0.0, 0.5, 0.9}) {
    std::vector<double> x, y;
    gaussian_pairs(rho, n, 42, &x, &y);
    const double est = club_mi_estimate(x, y, n, 1, 1, 500, 1e-2, 5);
    const double club_truth = rho * rho / (1.0 - rho * rho);
    const double mi = -0.5 * std::log(1.0 - rho * rho);
    INFO("rho ", rho, " estimate ", est, " club closed form ", club_truth);
    CHECK(std::abs(est - club_truth) < 0.05 + 0.05 * club_truth);
    if (rho == 0.0) CHECK(std::abs(est) < 0.05);
    // the upper-bound property relative to the true mutual information
    CHECK(est > mi - 0.1);
  }
}

TEST_CASE("club loss degenerate batches") {
  VariationalConfig cfg;
  cfg.in_dim = 2;
  cfg.out_dim = 2;
  cfg.hidden = 8;
  auto q = VariationalModel::init(cfg);

  Rng rng(3);
  auto one_task = Tensor::randn({1, 2}, rng);
  auto one_emb = Tensor::randn({1, 2}, rng);
  CHECK_THROWS_AS(club_loss(one_task, one_emb, q), std::invalid_argument);

  // identical z_task makes pairing irrelevant
  std::vector<double> same;
  for (int i = 0; i < 6; ++i) {
    same.push_back(0.3);
    same.push_back(-0.8);
  }
  auto zt = Tensor::from_data({6, 2}, same);
  auto ze = Tensor::randn({6, 2}, rng);
  CHECK(std::abs(club_loss(zt, ze, q).item()) < 1e-9);
}

TEST_CASE("variational fit approaches the analytic linear-gaussian optimum") {
  const double rho = 0.7, noise = std::sqrt(1.0 - rho * rho);
  std::vector<double> x, y, xh, yh;
  gaussian_pairs(rho, 3000, 7, &x, &y);
  gaussian_pairs(rho, 2000, 8, &xh, &yh);

  VariationalConfig cfg;
  cfg.in_dim = 1;
  cfg.out_dim = 1;
  cfg.hidden = 16;
  cfg.lr = 1e-2;
  cfg.seed = 11;
  auto q = VariationalModel::init(cfg);
  auto zt = Tensor::from_data({3000, 1}, x);
  auto ze = Tensor::from_data({3000, 1}, y);
  for (int s = 0; s < 400; ++s) q.fit_step(zt, ze);

  auto zth = Tensor::from_data({2000, 1}, xh);
  auto zeh = Tensor::from_data({2000, 1}, yh);
  const double fitted = q.mean_log_likelihood(zth, zeh, true).item();
  // analytic optimum on the held-out sample: log N(y; rho x, 1 - rho^2)
  double analytic = 0.0;
  for (size_t i = 0; i < xh.size(); ++i) {
    const double d = yh[i] - rho * xh[i];
    analytic += -0.5 * (d * d / (noise * noise)) -
                std::log(noise) - 0.5 * std::log(2.0 * 3.14159265358979323846);
  }
  analytic /= static_cast<double>(xh.size());
  INFO("fitted ", fitted, " analytic ", analytic);
  CHECK(std::abs(fitted - analytic) < 0.05);
}

TEST_CASE("variational log-variance saturates at the tanh bound") {
  VariationalConfig cfg;
  cfg.in_dim = 1;
  cfg.out_dim = 1;
  cfg.hidden = 8;
  cfg.lr = 1e-2;
  auto q = VariationalModel::init(cfg);
  Rng rng(5);
  std::vector<double> x(256), y(256, 0.0);  // zero-variance target
  for (auto& v : x) v = rng.gaussian();
  auto zt = Tensor::from_data({256, 1}, x);
  auto ze = Tensor::from_data({256, 1}, y);
  double last = 0;
  for (int s = 0; s < 600; ++s) last = q.fit_step(zt, ze);
  CHECK(std::isfinite(last));
  auto [mu, lv] = q.forward(zt, true);
  double min_lv = 1e9;
  for (double v : lv.data()) min_lv = std::min(min_lv, v);
  CHECK(min_lv <= -4.5);
  CHECK(min_lv >= -cfg.logvar_scale - 1e-9);
}

TEST_CASE("variational fit never touches the main graph") {
  VariationalConfig cfg;
  cfg.in_dim = 2;
  cfg.out_dim = 2;
  cfg.hidden = 8;
  auto q = VariationalModel::init(cfg);
  Rng rng(6);
  auto theta = Tensor::randn({4, 2}, rng, 1.0, true);
  Tensor zt = mul(theta, theta);  // differentiable path into the embeddings
  Tensor ze = add(theta, theta);
  q.fit_step(zt, ze);
  for (double g : theta.grad()) CHECK(g == 0.0);
}

TEST_CASE("club gradients reach the embeddings but not q") {
  VariationalConfig cfg;
  cfg.in_dim = 2;
  cfg.out_dim = 2;
  cfg.hidden = 8;
  auto q = VariationalModel::init(cfg);
  Rng rng(7);
  auto theta = Tensor::randn({4, 2}, rng, 1.0, true);
  Tensor zt = mul(theta, Tensor::scalar(1.0));
  Tensor ze = add(theta, Tensor::scalar(0.5));
  backprop(club_loss(zt, ze, q));
  double theta_norm = 0.0;
  for (double g : theta.grad()) theta_norm += g * g;
  CHECK(theta_norm > 0.0);
  for (auto& [name, t] : q.named_tensors())
    for (double g : t.grad()) CHECK(g == 0.0);
}

TEST_CASE("info_nce closed forms") {
  // uniform similarities: orthogonal unit vectors everywhere
  auto anchor = Tensor::from_data({8}, {1, 0, 0, 0, 0, 0, 0, 0});
  auto pos = Tensor::from_data({8}, {0, 1, 0, 0, 0, 0, 0, 0});
  std::vector<Tensor> negs;
  for (int k = 0; k < 7; ++k) {
    std::vector<double> v(8, 0.0);
    // all orthogonal to the anchor: similarity 0, same as the positive
    v[static_cast<size_t>(1 + (k + 1) % 7)] = 1.0;
    negs.push_back(Tensor::from_data({8}, v));
  }
  CHECK(info_nce(anchor, pos, negs).item() ==
        doctest::Approx(std::log(8.0)).epsilon(1e-15));

  // positive equals the anchor, one orthogonal negative
  auto p2 = Tensor::from_data({8}, {1, 0, 0, 0, 0, 0, 0, 0});
  std::vector<Tensor> one{Tensor::from_data({8}, {0, 0, 1, 0, 0, 0, 0, 0})};
  CHECK(info_nce(anchor, p2, one).item() ==
        doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));

  CHECK_THROWS_AS(info_nce(anchor, pos, {}), std::invalid_argument);
}

TEST_CASE("info_nce scale invariance and monotonicity") {
  Rng rng(8);
  auto a = Tensor::randn({6}, rng);
  auto p = Tensor::randn({6}, rng);
  std::vector<Tensor> negs{Tensor::randn({6}, rng), Tensor::randn({6}, rng)};
  const double base = info_nce(a, p, negs).item();
  std::vector<Tensor> scaled;
  for (const auto& n : negs) scaled.push_back(scale(n, 10.0));
  const double big =
      info_nce(scale(a, 10.0), scale(p, 10.0), scaled).item();
  CHECK(base == doctest::Approx(big).epsilon(1e-12));
  CHECK(base > 0.0);

  // moving the positive toward the anchor strictly lowers the loss
  double prev = 1e18;
  for (double mix : {0.0, 0.3, 0.6, 0.9}) {
    Tensor pm = add(scale(p, 1.0 - mix), scale(a, mix));
    const double v = info_nce(a, pm, negs).item();
    CHECK(v < prev);
    CHECK(v > 0.0);
    prev = v;
  }
}

TEST_CASE("total loss composition") {
  LossParts parts;
  parts.fm = Tensor::scalar(1.0);
  parts.disentangle = Tensor::scalar(2.0);
  parts.task_contrast = Tensor::scalar(3.0);
  parts.emb_contrast = Tensor::scalar(4.0);
  LossWeights w;  // defaults 1.0 / 0.5 / 0.5
  CHECK(w.dis == 1.0);
  CHECK(w.task == 0.5);
  CHECK(w.emb == 0.5);
  CHECK(total_loss(parts, w).item() == doctest::Approx(6.5).epsilon(1e-15));

  LossWeights zero{0.0, 0.0, 0.0};
  CHECK(total_loss(parts, zero).item() == parts.fm.item());

  // linear in each weight
  LossWeights w1{2.0, 0.5, 0.5}, w2{4.0, 0.5, 0.5};
  const double l1 = total_loss(parts, w1).item();
  const double l2 = total_loss(parts, w2).item();
  const double slope = (l2 - l1) / 2.0;
  CHECK(slope == doctest::Approx(parts.disentangle->item()).epsilon(1e-12));

  parts.task_contrast = Tensor::scalar(std::nan(""));
  bool threw = false;
  try {
    xemb::set_nan_guard(false);
    total_loss(parts, w);
  } catch (const std::runtime_error& e) {
    threw = true;
    CHECK(std::string(e.what()).find("L_task_contrast") != std::string::npos);
  }
  xemb::set_nan_guard(true);
  CHECK(threw);
}
