#include "xemb/nn.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <stdexcept>

namespace xemb::nn {

namespace {

Tensor dense_init(int64_t rows, int64_t cols, Rng& rng, bool requires_grad) {
  return Tensor::randn({rows, cols}, rng,
                       1.0 / std::sqrt(static_cast<double>(rows)),
                       requires_grad);
}

// head fold:   [batch*seq, heads*dh] -> [batch*heads, seq, dh]
// head unfold: inverse
std::shared_ptr<std::vector<int64_t>> head_fold_map(int batch, int seq,
                                                    int heads, int dh) {
  auto map = std::make_shared<std::vector<int64_t>>(
      static_cast<size_t>(batch) * heads * seq * dh);
  int64_t out = 0;
  const int64_t d = static_cast<int64_t>(heads) * dh;
  for (int b = 0; b < batch; ++b)
    for (int h = 0; h < heads; ++h)
      for (int s = 0; s < seq; ++s)
        for (int j = 0; j < dh; ++j)
          (*map)[static_cast<size_t>(out++)] =
              (static_cast<int64_t>(b) * seq + s) * d + h * dh + j;
  return map;
}

std::shared_ptr<std::vector<int64_t>> head_unfold_map(int batch, int seq,
                                                      int heads, int dh) {
  auto map = std::make_shared<std::vector<int64_t>>(
      static_cast<size_t>(batch) * heads * seq * dh);
  int64_t out = 0;
  for (int b = 0; b < batch; ++b)
    for (int s = 0; s < seq; ++s)
      for (int h = 0; h < heads; ++h)
        for (int j = 0; j < dh; ++j)
          (*map)[static_cast<size_t>(out++)] =
              ((static_cast<int64_t>(b) * heads + h) * seq + s) * dh + j;
  return map;
}

struct FoldMaps {
  std::shared_ptr<std::vector<int64_t>> fold, unfold;
};

const FoldMaps& cached_maps(int batch, int seq, int heads, int dh) {
  static std::map<std::tuple<int, int, int, int>, FoldMaps> cache;
  auto key = std::make_tuple(batch, seq, heads, dh);
  auto it = cache.find(key);
  if (it == cache.end()) {
    FoldMaps maps{head_fold_map(batch, seq, heads, dh),
                  head_unfold_map(batch, seq, heads, dh)};
    it = cache.emplace(key, std::move(maps)).first;
  }
  return it->second;
}

}  // namespace

BlockParams make_block(int d_model, int mlp_hidden, Rng& rng,
                       bool requires_grad) {
  BlockParams p;
  p.d_model = d_model;
  p.mlp_hidden = mlp_hidden;
  p.ln1_g = Tensor::full({d_model}, 1.0, requires_grad);
  p.ln1_b = Tensor::zeros({d_model}, requires_grad);
  p.wqkv = dense_init(d_model, 3 * d_model, rng, requires_grad);
  p.bqkv = Tensor::zeros({3 * d_model}, requires_grad);
  p.wo = dense_init(d_model, d_model, rng, requires_grad);
  p.bo = Tensor::zeros({d_model}, requires_grad);
  p.ln2_g = Tensor::full({d_model}, 1.0, requires_grad);
  p.ln2_b = Tensor::zeros({d_model}, requires_grad);
  p.w1 = dense_init(d_model, mlp_hidden, rng, requires_grad);
  p.b1 = Tensor::zeros({mlp_hidden}, requires_grad);
  p.w2 = dense_init(mlp_hidden, d_model, rng, requires_grad);
  p.b2 = Tensor::zeros({d_model}, requires_grad);
  return p;
}

std::vector<Tensor> block_tensors(const BlockParams& p) {
  return {p.ln1_g, p.ln1_b, p.wqkv, p.bqkv, p.wo, p.bo,
          p.ln2_g, p.ln2_b, p.w1,   p.b1,   p.w2, p.b2};
}

BlockParams clone_block(const BlockParams& src, bool requires_grad) {
  BlockParams p;
  p.d_model = src.d_model;
  p.mlp_hidden = src.mlp_hidden;
  auto copy = [requires_grad](const Tensor& t) {
    return Tensor::from_data(t.shape(), t.data(), requires_grad);
  };
  p.ln1_g = copy(src.ln1_g);
  p.ln1_b = copy(src.ln1_b);
  p.wqkv = copy(src.wqkv);
  p.bqkv = copy(src.bqkv);
  p.wo = copy(src.wo);
  p.bo = copy(src.bo);
  p.ln2_g = copy(src.ln2_g);
  p.ln2_b = copy(src.ln2_b);
  p.w1 = copy(src.w1);
  p.b1 = copy(src.b1);
  p.w2 = copy(src.w2);
  p.b2 = copy(src.b2);
  return p;
}

void register_block(AdamW& opt, const std::string& prefix, const BlockParams& p) {
  opt.register_param(prefix + ".ln1_g", p.ln1_g);
  opt.register_param(prefix + ".ln1_b", p.ln1_b);
  opt.register_param(prefix + ".wqkv", p.wqkv);
  opt.register_param(prefix + ".bqkv", p.bqkv);
  opt.register_param(prefix + ".wo", p.wo);
  opt.register_param(prefix + ".bo", p.bo);
  opt.register_param(prefix + ".ln2_g", p.ln2_g);
  opt.register_param(prefix + ".ln2_b", p.ln2_b);
  opt.register_param(prefix + ".w1", p.w1);
  opt.register_param(prefix + ".b1", p.b1);
  opt.register_param(prefix + ".w2", p.w2);
  opt.register_param(prefix + ".b2", p.b2);
}

Tensor block_forward(const Tensor& x, const BlockParams& p, int batch, int seq,
                     int heads) {
  const int d = p.d_model;
  if (x.rank() != 2 || x.dim(0) != static_cast<int64_t>(batch) * seq ||
      x.dim(1) != d)
    throw std::invalid_argument("block_forward: expected [" +
                                std::to_string(batch * seq) + "," +
                                std::to_string(d) + "], got " +
                                shape_str(x.shape()));
  if (d % heads != 0)
    throw std::invalid_argument("block_forward: heads must divide d_model");
  const int dh = d / heads;
  const auto& maps = cached_maps(batch, seq, heads, dh);

  Tensor h = layer_norm(x, p.ln1_g, p.ln1_b);
  Tensor qkv = add(matmul(h, p.wqkv), p.bqkv);
  auto parts = split(qkv, {d, d, d}, 1);
  const Shape folded{static_cast<int64_t>(batch) * heads, seq, dh};
  Tensor q = permute_gather(parts[0], maps.fold, folded, true);
  Tensor k = permute_gather(parts[1], maps.fold, folded, true);
  Tensor v = permute_gather(parts[2], maps.fold, folded, true);
  Tensor att = attention(q, k, v, 1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor merged = permute_gather(
      att, maps.unfold, {static_cast<int64_t>(batch) * seq, d}, true);
  Tensor out = add(x, add(matmul(merged, p.wo), p.bo));

  Tensor h2 = layer_norm(out, p.ln2_g, p.ln2_b);
  Tensor mlp = add(matmul(gelu(add(matmul(h2, p.w1), p.b1)), p.w2), p.b2);
  return add(out, mlp);
}

Tensor sinusoidal_pe(int t, int d) {
  std::vector<double> data(static_cast<size_t>(t) * d);
  for (int pos = 0; pos < t; ++pos)
    for (int i = 0; i < d; ++i) {
      const double rate =
          std::pow(10000.0, -2.0 * (i / 2) / static_cast<double>(d));
      const double arg = pos * rate;
      data[static_cast<size_t>(pos) * d + i] =
          (i % 2 == 0) ? std::sin(arg) : std::cos(arg);
    }
  return Tensor::from_data({t, d}, std::move(data));
}

Tensor sinusoidal_scalar(double t, int d) {
  std::vector<double> data(static_cast<size_t>(d));
  for (int i = 0; i < d; ++i) {
    const double rate =
        std::pow(10000.0, -2.0 * (i / 2) / static_cast<double>(d));
    const double arg = t * 100.0 * rate;
    data[static_cast<size_t>(i)] = (i % 2 == 0) ? std::sin(arg) : std::cos(arg);
  }
  return Tensor::from_data({1, d}, std::move(data));
}

std::vector<double> unit_copy(const Tensor& z) {
  double n2 = 0.0;
  for (double v : z.data()) n2 += v * v;
  if (n2 <= 0.0) throw std::runtime_error("unit_copy: zero-norm embedding");
  const double inv = 1.0 / std::sqrt(n2);
  std::vector<double> out(z.data());
  for (auto& v : out) v *= inv;
  return out;
}

}  // namespace xemb::nn
