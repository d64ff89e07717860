#include "xemb/accept.hpp"

#include "xemb/gradcheck.hpp"

#include <cmath>

namespace xemb::accept {

namespace {

// Reduce any op output to a scalar with data-dependent weights so the chain
// rule through the op is exercised, not just averaged away.
Tensor pinch(const Tensor& t, Rng& rng) {
  Rng local = rng.fork(17);
  Tensor w = Tensor::randn(t.shape(), local);
  return sum(mul(t, w));
}

using CaseFn = std::function<double(Rng&, double)>;

double check(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
             const std::vector<Tensor>& inputs, double eps) {
  return finite_difference_check(fn, inputs, eps);
}

}  // namespace

std::vector<KernelCase> kernel_gradcheck_sweep(int cases, uint64_t seed,
                                               double eps) {
  std::vector<std::pair<std::string, CaseFn>> table;

  table.emplace_back("add", [](Rng& rng, double eps_) {
    int64_t m = rng.uniform_int(2, 5), n = rng.uniform_int(2, 6);
    auto a = Tensor::randn({m, n}, rng, 1.0, true);
    auto b = Tensor::randn({m, n}, rng, 1.0, true);
    Rng pr = rng.fork(3);
    return check(
        [&pr](const std::vector<Tensor>& in) {
          return pinch(add(in[0], in[1]), pr);
        },
        {a, b}, eps_);
  });
  table.emplace_back("add_broadcast", [](Rng& rng, double eps_) {
    int64_t m = rng.uniform_int(2, 5), n = rng.uniform_int(2, 6);
    auto a = Tensor::randn({m, n}, rng, 1.0, true);
    auto b = Tensor::randn({n}, rng, 1.0, true);
    Rng pr = rng.fork(3);
    return check(
        [&pr](const std::vector<Tensor>& in) {
          return pinch(add(in[0], in[1]), pr);
        },
        {a, b}, eps_);
  });
  table.emplace_back("mul", [](Rng& rng, double eps_) {
    int64_t n = rng.uniform_int(3, 12);
    auto a = Tensor::randn({n}, rng, 1.0, true);
    auto b = Tensor::randn({n}, rng, 1.0, true);
    Rng pr = rng.fork(3);
    return check(
        [&pr](const std::vector<Tensor>& in) {
          return pinch(mul(in[0], in[1]), pr);
        },
        {a, b}, eps_);
  });
  table.emplace_back("matmul", [](Rng& rng, double eps_) {
    int64_t m = rng.uniform_int(2, 5), k = rng.uniform_int(2, 5),
            n = rng.uniform_int(2, 5);
    auto a = Tensor::randn({m, k}, rng, 1.0, true);
    auto b = Tensor::randn({k, n}, rng, 1.0, true);
    Rng pr = rng.fork(3);
    return check(
        [&pr](const std::vector<Tensor>& in) {
          return pinch(matmul(in[0], in[1]), pr);
        },
        {a, b}, eps_);
  });
  table.emplace_back("transpose", [](Rng& rng, double eps_) {
    int64_t m = rng.uniform_int(2, 6), n = rng.uniform_int(2, 6);
    auto a = Tensor::randn({m, n}, rng, 1.0, true);
    Rng pr = rng.fork(3);
    return check(
        [&pr](const std::vector<Tensor>& in) {
          return pinch(transpose(in[0]), pr);
        },
        {a}, eps_);
  });
  table.emplace_back("reshape", [](Rng& rng, double eps_) {
    int64_t m = rng.uniform_int(2, 4), n = rng.uniform_int(2, 4);
    auto a = Tensor::randn({m, n}, rng, 1.0, true);
    Rng pr = rng.fork(3);
    return check(
        [&pr, m, n](const std::vector<Tensor>& in) {
          return pinch(reshape(in[0], {n * m}), pr);
        },
        {a}, eps_);
  });
  table.emplace_back("concat_split", [](Rng& rng, double eps_) {
    int64_t n = rng.uniform_int(2, 5);
    auto a = Tensor::randn({2, n}, rng, 1.0, true);
    auto b = Tensor::randn({3, n}, rng, 1.0, true);
    Rng pr = rng.fork(3);
    return check(
        [&pr](const std::vector<Tensor>& in) {
          Tensor joined = concat({in[0], in[1]}, 0);
          auto parts = split(joined, {3, 2}, 0);
          return pinch(parts[0], pr) + pinch(parts[1], pr);
        },
        {a, b}, eps_);
  });
  table.emplace_back("mean_sum", [](Rng& rng, double eps_) {
    int64_t n = rng.uniform_int(4, 16);
    auto a = Tensor::randn({n}, rng, 1.0, true);
    return check(
        [](const std::vector<Tensor>& in) {
          return mean(mul(in[0], in[0])) + sum(in[0]) * 0.25;
        },
        {a}, eps_);
  });
  table.emplace_back("layer_norm", [](Rng& rng, double eps_) {
    int64_t rows = rng.uniform_int(1, 4), cols = rng.uniform_int(3, 8);
    auto x = Tensor::randn({rows, cols}, rng, 1.0, true);
    auto g = Tensor::randn({cols}, rng, 0.3, true);
    auto b = Tensor::randn({cols}, rng, 0.3, true);
    Rng pr = rng.fork(3);
    return check(
        [&pr](const std::vector<Tensor>& in) {
          return pinch(layer_norm(in[0], in[1], in[2]), pr);
        },
        {x, g, b}, eps_);
  });
  table.emplace_back("softmax", [](Rng& rng, double eps_) {
    int64_t rows = rng.uniform_int(1, 4), cols = rng.uniform_int(2, 8);
    auto x = Tensor::randn({rows, cols}, rng, 1.5, true);
    Rng pr = rng.fork(3);
    return check(
        [&pr](const std::vector<Tensor>& in) {
          return pinch(softmax(in[0]), pr);
        },
        {x}, eps_);
  });
  table.emplace_back("gelu", [](Rng& rng, double eps_) {
    int64_t n = rng.uniform_int(4, 16);
    auto x = Tensor::randn({n}, rng, 1.5, true);
    Rng pr = rng.fork(3);
    return check(
        [&pr](const std::vector<Tensor>& in) { return pinch(gelu(in[0]), pr); },
        {x}, eps_);
  });
  table.emplace_back("tanh", [](Rng& rng, double eps_) {
    int64_t n = rng.uniform_int(4, 16);
    auto x = Tensor::randn({n}, rng, 1.5, true);
    Rng pr = rng.fork(3);
    return check(
        [&pr](const std::vector<Tensor>& in) {
          return pinch(xemb::tanh(in[0]), pr);
        },
        {x}, eps_);
  });
  table.emplace_back("exp_log", [](Rng& rng, double eps_) {
    int64_t n = rng.uniform_int(4, 12);
    auto x = Tensor::uniform({n}, rng, 0.5, 2.0, true);
    Rng pr = rng.fork(3);
    return check(
        [&pr](const std::vector<Tensor>& in) {
          return pinch(xemb::log(xemb::exp(in[0]) + 1.0), pr);
        },
        {x}, eps_);
  });
  table.emplace_back("attention", [](Rng& rng, double eps_) {
    int64_t h = rng.uniform_int(1, 2), t = rng.uniform_int(2, 5),
            dh = rng.uniform_int(2, 4);
    auto q = Tensor::randn({h, t, dh}, rng, 1.0, true);
    auto k = Tensor::randn({h, t, dh}, rng, 1.0, true);
    auto v = Tensor::randn({h, t, dh}, rng, 1.0, true);
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
    Rng pr = rng.fork(3);
    return check(
        [&pr, sc](const std::vector<Tensor>& in) {
          return pinch(attention(in[0], in[1], in[2], sc), pr);
        },
        {q, k, v}, eps_);
  });
  table.emplace_back("embedding", [](Rng& rng, double eps_) {
    int64_t vocab = rng.uniform_int(3, 8), dim = rng.uniform_int(2, 6);
    auto tbl = Tensor::randn({vocab, dim}, rng, 1.0, true);
    std::vector<int> idx;
    for (int i = 0; i < 5; ++i)
      idx.push_back(rng.uniform_int(0, static_cast<int>(vocab) - 1));
    Rng pr = rng.fork(3);
    return check(
        [&pr, idx](const std::vector<Tensor>& in) {
          return pinch(embedding(in[0], idx), pr);
        },
        {tbl}, eps_);
  });
  table.emplace_back("softmax_attention_stack", [](Rng& rng, double eps_) {
    int64_t t = rng.uniform_int(3, 5), d = 4;
    auto x = Tensor::randn({t, d}, rng, 1.0, true);
    auto w = Tensor::randn({d, 3 * d}, rng, 0.5, true);
    Rng pr = rng.fork(3);
    return check(
        [&pr, t, d](const std::vector<Tensor>& in) {
          Tensor qkv = matmul(in[0], in[1]);
          auto parts = split(qkv, {d, d, d}, 1);
          Tensor q = reshape(parts[0], {1, t, d});
          Tensor k = reshape(parts[1], {1, t, d});
          Tensor v = reshape(parts[2], {1, t, d});
          Tensor o = attention(q, k, v, 0.5);
          return pinch(softmax(reshape(o, {t, d})), pr);
        },
        {x, w}, eps_);
  });

  std::vector<KernelCase> results;
  Rng master(seed);
  for (int c = 0; c < cases; ++c) {
    auto& [name, fn] = table[static_cast<size_t>(c) % table.size()];
    Rng case_rng = master.fork(static_cast<uint64_t>(c) + 1);
    results.push_back({name, fn(case_rng, eps)});
  }
  return results;
}

double max_rel_err(const std::vector<KernelCase>& cases) {
  double m = 0.0;
  for (const auto& c : cases) m = std::max(m, c.rel_err);
  return m;
}

}  // namespace xemb::accept
