// Conditional velocity predictor: a frozen toy diffusion-transformer
// backbone over frame patches plus a trainable adapter that processes
// [z_task; z_emb; background tokens] together with the backbone token stream
// in a parallel mirrored stack, injecting each block's output additively.
// Sampling integrates the learned ODE with fixed-step explicit Euler.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "xemb/encoders.hpp"
#include "xemb/nn.hpp"
#include "xemb/optim.hpp"
#include "xemb/synthworld.hpp"
#include "xemb/tensor.hpp"

namespace xemb::gen {

struct GeneratorConfig {
  int frames = 16;
  int height = 32, width = 32, channels = 2;
  int patch = 8;
  int d_model = 64;
  int heads = 4;
  int layers = 4;          // backbone depth L
  int adapter_layers = 4;  // adapter depth K <= L, injected into blocks 0..K-1
  int mlp_hidden = 128;
  int d_z = 64;
  int bg_tokens = 4;
  int time_dim = 64;

  int tokens_per_frame() const { return (height / patch) * (width / patch); }
  int tokens() const { return frames * tokens_per_frame(); }
  int patch_dim() const { return patch * patch * channels; }
  int video_values() const { return frames * height * width * channels; }
  int context_tokens() const { return 2 + bg_tokens; }
};

struct BackboneParams {
  Tensor patch_w, patch_b;  // [patch_dim, d]
  Tensor time_w1, time_b1, time_w2, time_b2;
  std::vector<nn::BlockParams> blocks;
  Tensor out_w, out_b;  // [d, patch_dim]
  // Time-gated per-patch linear skip. The optimal rectified-flow field
  // carries a -x_t/(1-t)-style term the d_model-wide token stream cannot
  // represent (patch_dim exceeds d_model), so x_t reaches the output through
  // this full-rank path, scaled by a scalar gate from the time embedding.
  Tensor skip_w;            // [patch_dim, patch_dim], zero-initialized
  Tensor gate_w, gate_b;    // [d, 1], [1]
  bool frozen = false;

  static BackboneParams init(const GeneratorConfig& cfg, Rng& rng);
  void register_params(AdamW& opt, const std::string& prefix) const;
  std::vector<std::pair<std::string, Tensor>> named_tensors() const;
  // Rebuilds every tensor as a constant; gradients can never reach them.
  void freeze();
  void assert_no_grad() const;  // throws if any gradient accumulated
};

struct AdapterParams {
  Tensor ctx_task_w, ctx_task_b;  // [d_z, d]
  Tensor ctx_emb_w, ctx_emb_b;
  Tensor ctx_bg_w, ctx_bg_b;  // [h*w, bg_tokens*d]
  Tensor in_w, in_b;          // stream projection [d, d]
  std::vector<nn::BlockParams> blocks;  // cloned from the backbone
  std::vector<Tensor> inject_w;         // zero-initialized [d, d] per block

  // Non-injection weights start as copies of the corresponding backbone
  // blocks; the injection projections start at exactly zero.
  static AdapterParams init(const BackboneParams& backbone,
                            const GeneratorConfig& cfg, Rng& rng);
  void register_params(AdamW& opt, const std::string& prefix) const;
  std::vector<std::pair<std::string, Tensor>> named_tensors() const;
  std::vector<Tensor> tensors() const;
};

// Unconditional backbone prediction; x_t is a [b, video_values] batch.
Tensor backbone_forward(const Tensor& x_t, const std::vector<double>& times,
                        const BackboneParams& p, const GeneratorConfig& cfg);

// Conditional prediction. z_task/z_emb are [b, d_z], background is
// [b, height*width]. Throws if the backbone is not frozen.
Tensor predict_velocity(const Tensor& x_t, const std::vector<double>& times,
                        const Tensor& z_task, const Tensor& z_emb,
                        const Tensor& background, const BackboneParams& bb,
                        const AdapterParams& ad, const GeneratorConfig& cfg);

struct PretrainConfig {
  int max_steps = 600;
  int batch = 16;
  double lr = 2e-3;
  int eval_every = 100;
  double plateau_rel_improvement = 0.01;
  double divergence_factor = 10.0;
  int divergence_patience = 500;
  uint64_t seed = 123;
};

struct PretrainResult {
  BackboneParams backbone;  // frozen
  std::vector<double> val_losses;
  int steps_run = 0;
};

// Unconditional flow-matching pretraining on the train split, frozen at the
// validation plateau.
PretrainResult pretrain_backbone(const synth::Dataset& ds,
                                 const GeneratorConfig& cfg,
                                 const PretrainConfig& pcfg);

struct SamplerConfig {
  int steps = 50;
  uint64_t seed = 0;
};

// Fixed-step explicit Euler from t=0 to t=1; fn(x, t) returns dx/dt.
std::vector<double> integrate_euler(
    const std::function<std::vector<double>(const std::vector<double>&,
                                            double)>& fn,
    std::vector<double> x0, int steps);

// Draws noise from the seed and integrates the learned field; returns
// [b, video_values] clamped to [0, 1]. Throws with the step index on a
// non-finite state.
std::vector<std::vector<double>> sample_video_batch(
    const std::vector<std::vector<double>>& z_task,
    const std::vector<std::vector<double>>& z_emb,
    const std::vector<std::vector<double>>& backgrounds,
    const BackboneParams& bb, const AdapterParams& ad,
    const GeneratorConfig& cfg, const SamplerConfig& scfg);

std::vector<double> sample_video(const std::vector<double>& z_task,
                                 const std::vector<double>& z_emb,
                                 const std::vector<double>& background,
                                 const BackboneParams& bb,
                                 const AdapterParams& ad,
                                 const GeneratorConfig& cfg,
                                 const SamplerConfig& scfg);

// Flat background image (scene channel) used as generator conditioning.
std::vector<double> background_image(int background_id, int height, int width);

// Frozen-backbone checkpoint: config + weights in one file.
void save_backbone(const std::string& path, const BackboneParams& p,
                   const GeneratorConfig& cfg);
std::pair<BackboneParams, GeneratorConfig> load_backbone(
    const std::string& path);

struct TransferModels {
  const enc::TaskEncoderParams* task_encoder;
  const enc::EmbodimentEncoderParams* emb_encoder;
  const enc::EncoderConfig* enc_cfg;
  const BackboneParams* backbone;
  const AdapterParams* adapter;
  const GeneratorConfig* gen_cfg;
};

// Task code from the source demo, embodiment code from the target card,
// composed through the sampler.
std::vector<double> compose_transfer(const synth::DemoSample& source,
                                     const std::vector<double>& target_card,
                                     const TransferModels& models,
                                     const SamplerConfig& scfg);

// Frames as P6 PPM files (channel 0 -> red, channel 1 -> green) plus the raw
// float64 array and a key=value metadata file.
void write_video_artifacts(const std::string& dir,
                           const std::vector<double>& video,
                           const GeneratorConfig& cfg,
                           const std::vector<std::pair<std::string, std::string>>& metadata);

}  // namespace xemb::gen
