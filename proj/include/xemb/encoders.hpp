// Trainable task and embodiment encoders. Each modality runs through a
// single self-attention layer and is pooled by a prepended learnable [CLS]
// token; the task side fuses its three modality summaries with a two-layer
// MLP. The embodiment side sees only the static end-effector card, the task
// side never sees pixels, so task embeddings are embodiment-invariant by
// construction.
#pragma once

#include <string>
#include <vector>

#include "xemb/nn.hpp"
#include "xemb/optim.hpp"
#include "xemb/tensor.hpp"

namespace xemb::enc {

struct EncoderConfig {
  int d_model = 64;
  int heads = 4;
  int d_z = 64;
  int goal_vocab = 9;
  int motion_dim = 10;  // lifted layout
  int traj_dim = 9;
  int frames = 16;
  int image_h = 32, image_w = 32;
  int patch = 8;
  uint64_t frozen_seed = 0xC11F;  // seed of the frozen patch features
  bool positional_encoding = true;

  int patches() const { return (image_h / patch) * (image_w / patch); }
  int patch_dim() const { return patch * patch; }
};

// One single-layer attention encoder with its [CLS] token.
struct ClsEncoderParams {
  Tensor cls;  // [1, d]
  nn::BlockParams block;
};

ClsEncoderParams make_cls_encoder(int d_model, Rng& rng, bool requires_grad);

// Attention-updated [CLS] state over `tokens` [t, d]; output [1, d]
// regardless of t. Throws on an empty sequence.
Tensor cls_pool(const Tensor& tokens, const ClsEncoderParams& p, int heads);

struct TaskEncoderParams {
  Tensor token_table;                 // [vocab, d]
  Tensor motion_w, motion_b;          // [motion_dim, d]
  Tensor traj_w, traj_b;              // [traj_dim, d]
  ClsEncoderParams text_enc, motion_enc, traj_enc;
  Tensor fuse_w1, fuse_b1, fuse_w2, fuse_b2;  // [3d, 2d] -> [2d, d_z]

  static TaskEncoderParams init(const EncoderConfig& cfg, Rng& rng);
  void register_params(AdamW& opt, const std::string& prefix) const;
  std::vector<Tensor> tensors() const;
};

struct EmbodimentEncoderParams {
  // CLIP stand-in: fixed random projection of raw patches, never trained.
  Tensor frozen_patch_features;  // [patch_dim, d], requires_grad = false
  Tensor patch_w, patch_b;       // trainable [d, d]
  ClsEncoderParams enc;
  Tensor out_w, out_b;           // [d, d_z]

  static EmbodimentEncoderParams init(const EncoderConfig& cfg, Rng& rng);
  void register_params(AdamW& opt, const std::string& prefix) const;
  std::vector<Tensor> tensors() const;  // trainable only
};

struct TaskEmbedding {
  Tensor z;                  // [1, d_z], differentiable
  std::vector<double> unit;  // cached unit-normalized copy
};

struct EmbodimentEmbedding {
  Tensor z;
  std::vector<double> unit;
};

TaskEmbedding encode_task(int goal_token,
                          const std::vector<double>& lifted_motion,
                          const std::vector<double>& lifted_traj, int frames,
                          const TaskEncoderParams& p,
                          const EncoderConfig& cfg);

EmbodimentEmbedding encode_embodiment(const std::vector<double>& card,
                                      const EmbodimentEncoderParams& p,
                                      const EncoderConfig& cfg);

}  // namespace xemb::enc
