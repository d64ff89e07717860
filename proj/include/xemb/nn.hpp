// Shared transformer building blocks: pre-norm attention/MLP block over a
// (possibly batched) token stream, sinusoidal position/time codes, and
// parameter-set helpers.
#pragma once

#include <string>
#include <vector>

#include "xemb/optim.hpp"
#include "xemb/rng.hpp"
#include "xemb/tensor.hpp"

namespace xemb::nn {

struct BlockParams {
  Tensor ln1_g, ln1_b;
  Tensor wqkv, bqkv;  // [d, 3d], [3d]
  Tensor wo, bo;      // [d, d], [d]
  Tensor ln2_g, ln2_b;
  Tensor w1, b1;      // [d, mlp], [mlp]
  Tensor w2, b2;      // [mlp, d], [d]
  int d_model = 0;
  int mlp_hidden = 0;
};

BlockParams make_block(int d_model, int mlp_hidden, Rng& rng,
                       bool requires_grad);
// Deep value copy; used to initialize adapter blocks from backbone blocks.
BlockParams clone_block(const BlockParams& src, bool requires_grad);
void register_block(AdamW& opt, const std::string& prefix, const BlockParams& p);
std::vector<Tensor> block_tensors(const BlockParams& p);

// x is [batch*seq, d]; attention runs within each of the `batch` sequences.
Tensor block_forward(const Tensor& x, const BlockParams& p, int batch, int seq,
                     int heads);

// Classic sinusoidal position code, shape [t, d]; not a parameter.
Tensor sinusoidal_pe(int t, int d);
// Sinusoidal embedding of a scalar in [0, 1], shape [1, d].
Tensor sinusoidal_scalar(double t, int d);

// L2-normalized copy of a vector tensor; throws on zero norm.
std::vector<double> unit_copy(const Tensor& z);

}  // namespace xemb::nn
