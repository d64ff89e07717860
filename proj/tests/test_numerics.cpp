#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "xemb/accept.hpp"
#include "xemb/gradcheck.hpp"
#include "xemb/kernels.hpp"
#include "xemb/optim.hpp"
#include "xemb/tensor.hpp"

using namespace xemb;

TEST_CASE("square gradient is 2x") {
  auto x = Tensor::scalar(3.0, true);
  Tensor y = mul(x, x);
  backprop(y);
  CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("sum gradient is all ones") {
  Rng rng(7);
  auto x = Tensor::randn({3, 4, 2}, rng, 1.0, true);
  backprop(sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("norm-squared of Wx matches finite differences") {
  Rng rng(11);
  auto w = Tensor::randn({4, 4}, rng, 1.0, true);
  auto x = Tensor::randn({4, 1}, rng, 1.0, true);
  double err = finite_difference_check(
      [](const std::vector<Tensor>& in) {
        Tensor y = matmul(in[0], in[1]);
        return sum(mul(y, y));
      },
      {w, x}, 1e-5);
  CHECK(err < 1e-5);
}

TEST_CASE("kernel set passes finite-difference sweep") {
  auto cases = accept::kernel_gradcheck_sweep(120, 42);
  for (const auto& c : cases) {
    INFO("kernel ", c.kernel);
    CHECK(c.rel_err < 1e-4);
  }
}

TEST_CASE("backprop of a sum of scalars is linear") {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    Rng r = rng.fork(static_cast<uint64_t>(trial));
    auto x = Tensor::randn({6}, r, 1.0, true);
    Tensor f = mean(mul(x, x));
    Tensor g = sum(mul(x, gelu(x)));
    backprop(add(f, g));
    auto combined = x.grad();

    x.zero_grad();
    backprop(mean(mul(x, x)));
    auto gf = x.grad();
    x.zero_grad();
    backprop(sum(mul(x, gelu(x))));
    auto gg = x.grad();
    for (size_t i = 0; i < combined.size(); ++i)
      CHECK(combined[i] == doctest::Approx(gf[i] + gg[i]).epsilon(1e-12));
  }
}

TEST_CASE("backprop rejects non-scalar output") {
  auto x = Tensor::full({3}, 1.0, true);
  CHECK_THROWS_AS(backprop(add(x, x)), std::invalid_argument);
}

TEST_CASE("leaf outside graph reports zero gradient") {
  auto x = Tensor::scalar(2.0, true);
  auto unused = Tensor::full({4}, 1.0, true);
  backprop(mul(x, x));
  for (double g : unused.grad()) CHECK(g == 0.0);
}

TEST_CASE("nan guard names the originating op") {
  auto x = Tensor::scalar(-1.0);
  CHECK_THROWS_WITH_AS(xemb::log(x),
                       doctest::Contains("log"), std::runtime_error);
  auto y = Tensor::scalar(0.0);
  CHECK_THROWS_WITH_AS(div(Tensor::scalar(1.0), y),
                       doctest::Contains("div"), std::runtime_error);
}

TEST_CASE("adamw first step on unit gradient") {
  AdamWConfig cfg;
  cfg.lr = 1e-3;
  cfg.weight_decay = 0.0;
  std::vector<double> p{0.5}, g{1.0}, m{0.0}, v{0.0};
  adamw_update(p, g, m, v, 1, cfg);
  CHECK(p[0] - 0.5 == doctest::Approx(-9.99999e-4).epsilon(1e-6));
  CHECK(m[0] == doctest::Approx(0.1));
  CHECK(v[0] == doctest::Approx(1e-3));
}

TEST_CASE("adamw zero gradient leaves parameter unchanged") {
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  std::vector<double> p{1.25}, g{0.0}, m{0.0}, v{0.0};
  adamw_update(p, g, m, v, 1, cfg);
  CHECK(p[0] == 1.25);
}

TEST_CASE("adamw weight decay is decoupled") {
  AdamWConfig cfg;
  cfg.lr = 1e-3;
  cfg.weight_decay = 0.01;
  std::vector<double> p{1.0}, g{0.0}, m{0.0}, v{0.0};
  adamw_update(p, g, m, v, 1, cfg);
  CHECK(p[0] == doctest::Approx(1.0 - 1e-5).epsilon(1e-14));
}

TEST_CASE("adamw is deterministic") {
  AdamWConfig cfg;
  cfg.weight_decay = 0.004;
  std::vector<double> p1{0.3, -0.7}, g{0.2, -0.1}, m1{0.01, 0.0},
      v1{0.002, 0.0};
  auto p2 = p1;
  auto m2 = m1;
  auto v2 = v1;
  adamw_update(p1, g, m1, v1, 5, cfg);
  adamw_update(p2, g, m2, v2, 5, cfg);
  CHECK(p1 == p2);
  CHECK(m1 == m2);
  CHECK(v1 == v2);
}

TEST_CASE("adamw rejects non-finite gradients and mismatched shapes") {
  AdamWConfig cfg;
  std::vector<double> p{1.0}, m{0.0}, v{0.0};
  std::vector<double> bad{std::nan("")};
  CHECK_THROWS_AS(adamw_update(p, bad, m, v, 1, cfg), std::runtime_error);
  std::vector<double> wrong{1.0, 2.0};
  CHECK_THROWS_AS(adamw_update(p, wrong, m, v, 1, cfg), std::invalid_argument);
}

TEST_CASE("optimizer rejects duplicate registration") {
  AdamW opt;
  auto t = Tensor::full({2}, 0.0, true);
  opt.register_param("w", t);
  CHECK_THROWS_AS(opt.register_param("w", t), std::invalid_argument);
}

TEST_CASE("cosine similarity closed forms") {
  auto ex = Tensor::from_data({2}, {1.0, 0.0});
  auto ey = Tensor::from_data({2}, {0.0, 1.0});
  CHECK(cosine_similarity(ex, ey).item() == doctest::Approx(0.0));
  auto a = Tensor::from_data({2}, {1.0, 1.0});
  auto b = Tensor::from_data({2}, {2.0, 2.0});
  CHECK(cosine_similarity(a, b).item() == doctest::Approx(1.0));
  auto nx = Tensor::from_data({2}, {-1.0, 0.0});
  CHECK(cosine_similarity(ex, nx).item() == doctest::Approx(-1.0));
  auto z = Tensor::from_data({2}, {0.0, 0.0});
  CHECK_THROWS_AS(cosine_similarity(ex, z), std::invalid_argument);
}

TEST_CASE("finite difference check rejects degenerate eps") {
  auto x = Tensor::scalar(1.0, true);
  CHECK_THROWS_AS(finite_difference_check(
                      [](const std::vector<Tensor>& in) {
                        return mul(in[0], in[0]);
                      },
                      {x}, 0.0),
                  std::invalid_argument);
}

TEST_CASE("finite difference check on sum of squares is tight") {
  Rng rng(3);
  auto x = Tensor::randn({8}, rng, 1.0, true);
  double err = finite_difference_check(
      [](const std::vector<Tensor>& in) { return sum(mul(in[0], in[0])); },
      {x}, 1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("parallel kernels match serial reference") {
  Rng rng(99);
  const int64_t m = 37, k = 23, n = 41;
  auto a = Tensor::randn({m, k}, rng);
  auto b = Tensor::randn({k, n}, rng);
  std::vector<double> c_par(static_cast<size_t>(m * n)),
      c_ser(static_cast<size_t>(m * n));
  kern::matmul(a.data().data(), b.data().data(), c_par.data(), m, k, n);
  kern::serial::matmul(a.data().data(), b.data().data(), c_ser.data(), m, k,
                       n);
  CHECK(c_par == c_ser);

  const int64_t rows = 65, cols = 19;
  auto x = Tensor::randn({rows, cols}, rng);
  std::vector<double> s_par(x.data().size()), s_ser(x.data().size());
  kern::softmax_rows(x.data().data(), s_par.data(), rows, cols);
  kern::serial::softmax_rows(x.data().data(), s_ser.data(), rows, cols);
  CHECK(s_par == s_ser);

  auto gain = Tensor::full({cols}, 1.1);
  auto bias = Tensor::full({cols}, -0.2);
  std::vector<double> y_par(x.data().size()), y_ser(x.data().size());
  std::vector<double> mu1(rows), r1(rows), mu2(rows), r2(rows);
  kern::layer_norm(x.data().data(), gain.data().data(), bias.data().data(),
                   y_par.data(), mu1.data(), r1.data(), rows, cols, 1e-5);
  kern::serial::layer_norm(x.data().data(), gain.data().data(),
                           bias.data().data(), y_ser.data(), mu2.data(),
                           r2.data(), rows, cols, 1e-5);
  CHECK(y_par == y_ser);

  const int64_t h = 6, t = 9, dh = 5;
  auto q = Tensor::randn({h, t, dh}, rng);
  auto kk = Tensor::randn({h, t, dh}, rng);
  auto v = Tensor::randn({h, t, dh}, rng);
  std::vector<double> p1v(static_cast<size_t>(h * t * t)), o1(q.data().size());
  std::vector<double> p2v(static_cast<size_t>(h * t * t)), o2(q.data().size());
  kern::attention_forward(q.data().data(), kk.data().data(), v.data().data(),
                          p1v.data(), o1.data(), h, t, dh, 0.4);
  kern::serial::attention_forward(q.data().data(), kk.data().data(),
                                  v.data().data(), p2v.data(), o2.data(), h, t,
                                  dh, 0.4);
  CHECK(o1 == o2);

  auto big = Tensor::randn({100000}, rng);
  double sp = kern::reduce_sum(big.data().data(), big.numel());
  double ss = kern::serial::reduce_sum(big.data().data(), big.numel());
  CHECK(sp == doctest::Approx(ss).epsilon(1e-12));
}

TEST_CASE("float32 storage mode round trip") {
  Rng rng(5);
  auto x = Tensor::randn({64}, rng);
  auto y = to_f32_storage(x);
  for (size_t i = 0; i < x.data().size(); ++i) {
    CHECK(y.data()[i] ==
          static_cast<double>(static_cast<float>(x.data()[i])));
  }
  auto again = to_f32_storage(y);
  CHECK(again.data() == y.data());
}

TEST_CASE("slice and concat invert each other") {
  Rng rng(21);
  auto x = Tensor::randn({4, 5}, rng, 1.0, true);
  auto parts = split(x, {2, 2}, 0);
  Tensor joined = concat(parts, 0);
  CHECK(joined.data() == x.data());
  backprop(sum(mul(joined, joined)));
  auto g = x.grad();
  for (size_t i = 0; i < g.size(); ++i)
    CHECK(g[i] == doctest::Approx(2.0 * x.data()[i]).epsilon(1e-12));
}
