#include "xemb/encoders.hpp"

#include <cmath>
#include <stdexcept>

namespace xemb::enc {

namespace {
Tensor dense_init(int64_t rows, int64_t cols, Rng& rng, bool requires_grad) {
  return Tensor::randn({rows, cols}, rng,
                       1.0 / std::sqrt(static_cast<double>(rows)),
                       requires_grad);
}
}  // namespace

ClsEncoderParams make_cls_encoder(int d_model, Rng& rng, bool requires_grad) {
  ClsEncoderParams p;
  p.cls = Tensor::randn({1, d_model}, rng, 0.1, requires_grad);
  p.block = nn::make_block(d_model, 2 * d_model, rng, requires_grad);
  return p;
}

Tensor cls_pool(const Tensor& tokens, const ClsEncoderParams& p, int heads) {
  if (tokens.rank() != 2 || tokens.dim(0) < 1)
    throw std::invalid_argument("cls_pool: need at least one token");
  // The [CLS] state queries the tokens but is not itself a key/value, so the
  // pooled output over identical tokens does not depend on their count.
  const int d = p.block.d_model;
  const int dh = d / heads;
  Tensor ln_tok = layer_norm(tokens, p.block.ln1_g, p.block.ln1_b);
  Tensor ln_cls = layer_norm(p.cls, p.block.ln1_g, p.block.ln1_b);
  Tensor qkv_tok = add(matmul(ln_tok, p.block.wqkv), p.block.bqkv);
  Tensor qkv_cls = add(matmul(ln_cls, p.block.wqkv), p.block.bqkv);
  auto tok_parts = split(qkv_tok, {d, d, d}, 1);
  auto cls_parts = split(qkv_cls, {d, d, d}, 1);
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> head_outs;
  head_outs.reserve(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice(cls_parts[0], 1, h * dh, dh);
    Tensor kh = slice(tok_parts[1], 1, h * dh, dh);
    Tensor vh = slice(tok_parts[2], 1, h * dh, dh);
    Tensor weights = softmax(scale(matmul(qh, transpose(kh)), att_scale));
    head_outs.push_back(matmul(weights, vh));
  }
  Tensor merged = concat(head_outs, 1);
  Tensor pooled = add(p.cls, add(matmul(merged, p.block.wo), p.block.bo));
  Tensor h2 = layer_norm(pooled, p.block.ln2_g, p.block.ln2_b);
  Tensor mlp = add(
      matmul(gelu(add(matmul(h2, p.block.w1), p.block.b1)), p.block.w2),
      p.block.b2);
  return add(pooled, mlp);
}

TaskEncoderParams TaskEncoderParams::init(const EncoderConfig& cfg, Rng& rng) {
  TaskEncoderParams p;
  p.token_table = Tensor::randn({cfg.goal_vocab, cfg.d_model}, rng, 0.5, true);
  p.motion_w = dense_init(cfg.motion_dim, cfg.d_model, rng, true);
  p.motion_b = Tensor::zeros({cfg.d_model}, true);
  p.traj_w = dense_init(cfg.traj_dim, cfg.d_model, rng, true);
  p.traj_b = Tensor::zeros({cfg.d_model}, true);
  p.text_enc = make_cls_encoder(cfg.d_model, rng, true);
  p.motion_enc = make_cls_encoder(cfg.d_model, rng, true);
  p.traj_enc = make_cls_encoder(cfg.d_model, rng, true);
  p.fuse_w1 = dense_init(3 * cfg.d_model, 2 * cfg.d_model, rng, true);
  p.fuse_b1 = Tensor::zeros({2 * cfg.d_model}, true);
  p.fuse_w2 = dense_init(2 * cfg.d_model, cfg.d_z, rng, true);
  p.fuse_b2 = Tensor::zeros({cfg.d_z}, true);
  return p;
}

void TaskEncoderParams::register_params(AdamW& opt,
                                        const std::string& prefix) const {
  opt.register_param(prefix + ".token_table", token_table);
  opt.register_param(prefix + ".motion_w", motion_w);
  opt.register_param(prefix + ".motion_b", motion_b);
  opt.register_param(prefix + ".traj_w", traj_w);
  opt.register_param(prefix + ".traj_b", traj_b);
  opt.register_param(prefix + ".text_cls", text_enc.cls);
  nn::register_block(opt, prefix + ".text", text_enc.block);
  opt.register_param(prefix + ".motion_cls", motion_enc.cls);
  nn::register_block(opt, prefix + ".motion", motion_enc.block);
  opt.register_param(prefix + ".traj_cls", traj_enc.cls);
  nn::register_block(opt, prefix + ".traj", traj_enc.block);
  opt.register_param(prefix + ".fuse_w1", fuse_w1);
  opt.register_param(prefix + ".fuse_b1", fuse_b1);
  opt.register_param(prefix + ".fuse_w2", fuse_w2);
  opt.register_param(prefix + ".fuse_b2", fuse_b2);
}

std::vector<Tensor> TaskEncoderParams::tensors() const {
  std::vector<Tensor> out{token_table, motion_w, motion_b, traj_w, traj_b,
                          text_enc.cls, motion_enc.cls, traj_enc.cls,
                          fuse_w1, fuse_b1, fuse_w2, fuse_b2};
  for (const auto* b :
       {&text_enc.block, &motion_enc.block, &traj_enc.block}) {
    auto bt = nn::block_tensors(*b);
    out.insert(out.end(), bt.begin(), bt.end());
  }
  return out;
}

EmbodimentEncoderParams EmbodimentEncoderParams::init(const EncoderConfig& cfg,
                                                      Rng& rng) {
  EmbodimentEncoderParams p;
  Rng frozen(cfg.frozen_seed);
  p.frozen_patch_features =
      Tensor::randn({cfg.patch_dim(), cfg.d_model}, frozen,
                    1.0 / std::sqrt(static_cast<double>(cfg.patch_dim())),
                    false);
  p.patch_w = dense_init(cfg.d_model, cfg.d_model, rng, true);
  p.patch_b = Tensor::zeros({cfg.d_model}, true);
  p.enc = make_cls_encoder(cfg.d_model, rng, true);
  p.out_w = dense_init(cfg.d_model, cfg.d_z, rng, true);
  p.out_b = Tensor::zeros({cfg.d_z}, true);
  return p;
}

void EmbodimentEncoderParams::register_params(AdamW& opt,
                                              const std::string& prefix) const {
  opt.register_param(prefix + ".patch_w", patch_w);
  opt.register_param(prefix + ".patch_b", patch_b);
  opt.register_param(prefix + ".cls", enc.cls);
  nn::register_block(opt, prefix + ".block", enc.block);
  opt.register_param(prefix + ".out_w", out_w);
  opt.register_param(prefix + ".out_b", out_b);
}

std::vector<Tensor> EmbodimentEncoderParams::tensors() const {
  std::vector<Tensor> out{patch_w, patch_b, enc.cls, out_w, out_b};
  auto bt = nn::block_tensors(enc.block);
  out.insert(out.end(), bt.begin(), bt.end());
  return out;
}

TaskEmbedding encode_task(int goal_token,
                          const std::vector<double>& lifted_motion,
                          const std::vector<double>& lifted_traj, int frames,
                          const TaskEncoderParams& p,
                          const EncoderConfig& cfg) {
  if (lifted_motion.size() !=
      static_cast<size_t>(frames) * cfg.motion_dim)
    throw std::invalid_argument("encode_task: motion layout mismatch");
  if (lifted_traj.size() != static_cast<size_t>(frames) * cfg.traj_dim)
    throw std::invalid_argument(
        "encode_task: motion/trajectory frame counts differ");
  if (goal_token < 0 || goal_token >= cfg.goal_vocab)
    throw std::invalid_argument("encode_task: unknown goal token " +
                                std::to_string(goal_token));

  Tensor text_tok = embedding(p.token_table, {goal_token});
  Tensor text_out = cls_pool(text_tok, p.text_enc, cfg.heads);

  Tensor m = Tensor::from_data({frames, cfg.motion_dim}, lifted_motion);
  Tensor m_tok = add(matmul(m, p.motion_w), p.motion_b);
  Tensor o = Tensor::from_data({frames, cfg.traj_dim}, lifted_traj);
  Tensor o_tok = add(matmul(o, p.traj_w), p.traj_b);
  if (cfg.positional_encoding) {
    Tensor pe = nn::sinusoidal_pe(frames, cfg.d_model);
    m_tok = add(m_tok, pe);
    o_tok = add(o_tok, pe);
  }
  Tensor motion_out = cls_pool(m_tok, p.motion_enc, cfg.heads);
  Tensor traj_out = cls_pool(o_tok, p.traj_enc, cfg.heads);

  Tensor fused = concat({text_out, motion_out, traj_out}, 1);
  Tensor hidden = gelu(add(matmul(fused, p.fuse_w1), p.fuse_b1));
  Tensor z = add(matmul(hidden, p.fuse_w2), p.fuse_b2);
  return {z, nn::unit_copy(z)};
}

EmbodimentEmbedding encode_embodiment(const std::vector<double>& card,
                                      const EmbodimentEncoderParams& p,
                                      const EncoderConfig& cfg) {
  if (card.size() != static_cast<size_t>(cfg.image_h) * cfg.image_w)
    throw std::invalid_argument(
        "encode_embodiment: card resolution mismatch, expected " +
        std::to_string(cfg.image_h) + "x" + std::to_string(cfg.image_w));
  const int pr = cfg.image_h / cfg.patch, pc = cfg.image_w / cfg.patch;
  std::vector<double> patches(static_cast<size_t>(pr) * pc * cfg.patch_dim());
  size_t out = 0;
  for (int br = 0; br < pr; ++br)
    for (int bc = 0; bc < pc; ++bc)
      for (int r = 0; r < cfg.patch; ++r)
        for (int c = 0; c < cfg.patch; ++c)
          patches[out++] = card[static_cast<size_t>(br * cfg.patch + r) *
                                    cfg.image_w +
                                bc * cfg.patch + c];
  Tensor raw = Tensor::from_data({pr * pc, cfg.patch_dim()}, std::move(patches));
  Tensor feat = matmul(raw, p.frozen_patch_features);
  Tensor tok = add(matmul(feat, p.patch_w), p.patch_b);
  if (cfg.positional_encoding)
    tok = add(tok, nn::sinusoidal_pe(pr * pc, cfg.d_model));
  Tensor pooled = cls_pool(tok, p.enc, cfg.heads);
  Tensor z = add(matmul(pooled, p.out_w), p.out_b);
  return {z, nn::unit_copy(z)};
}

}  // namespace xemb::enc
