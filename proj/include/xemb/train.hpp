// Training orchestration: pair-structured batches (every task class and
// embodiment present each step), per-step variational fitting, the
// every-Nth-step CLUB schedule, loss CSV emission, and bit-exact
// checkpoint/resume.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "xemb/config.hpp"
#include "xemb/encoders.hpp"
#include "xemb/generator.hpp"
#include "xemb/objectives.hpp"
#include "xemb/synthworld.hpp"

namespace xemb::harness {

struct TrainSettings {
  int steps = 200;
  int repeats_per_cell = 1;  // batch = classes * embodiments * repeats
  double lr_main = 1e-5;
  double lr_variational = 1e-4;
  obj::LossWeights weights;
  int club_apply_every = 10;
  bool disable_disentangle = false;
  bool disable_task_contrast = false;
  bool disable_emb_contrast = false;
  uint64_t seed = 1;
  int d_z = 64;
  double divergence_factor = 50.0;
  int divergence_patience = 50;

  static TrainSettings from_config(const Config& cfg);
  std::string canonical() const;
  uint64_t hash() const;
};

struct StepRecord {
  int64_t step = 0;
  double fm = 0, dis = 0, task = 0, emb = 0, total = 0;
  bool club_applied = false;
  uint64_t batch_hash = 0;
};

class Trainer {
 public:
  Trainer(const synth::Dataset& ds, gen::BackboneParams backbone,
          const gen::GeneratorConfig& gcfg, const TrainSettings& st);

  StepRecord step();
  // Appends one CSV row per step; optional per-step batch-hash log.
  void run(int n, std::ostream* csv, std::ostream* hash_log = nullptr);
  static const char* csv_header();
  static std::string csv_row(const StepRecord& r);

  void save_checkpoint(const std::string& path) const;
  void load_checkpoint(const std::string& path);
  // settings back out of a checkpoint's meta block
  static TrainSettings peek_settings(const std::string& path);

  const enc::TaskEncoderParams& task_encoder() const { return task_enc_; }
  const enc::EmbodimentEncoderParams& emb_encoder() const { return emb_enc_; }
  const gen::AdapterParams& adapter() const { return adapter_; }
  const gen::BackboneParams& backbone() const { return backbone_; }
  const enc::EncoderConfig& encoder_config() const { return enc_cfg_; }
  const gen::GeneratorConfig& generator_config() const { return gen_cfg_; }
  const synth::Dataset& dataset() const { return *ds_; }
  obj::VariationalModel& variational() { return *q_; }
  int64_t step_count() const { return step_; }
  const TrainSettings& settings() const { return settings_; }

  gen::TransferModels transfer_models() const;

 private:
  void encode_batch(const std::vector<int>& indices,
                    const std::vector<uint64_t>& card_seeds,
                    const std::vector<int>& card_tints, Tensor* z_task,
                    Tensor* z_emb);

  const synth::Dataset* ds_;
  TrainSettings settings_;
  gen::GeneratorConfig gen_cfg_;
  enc::EncoderConfig enc_cfg_;
  gen::BackboneParams backbone_;
  gen::AdapterParams adapter_;
  enc::TaskEncoderParams task_enc_;
  enc::EmbodimentEncoderParams emb_enc_;
  std::unique_ptr<obj::VariationalModel> q_;
  AdamW opt_;
  Rng rng_batch_, rng_noise_, rng_cards_;
  int64_t step_ = 0;
  double initial_fm_ = -1.0;
  int high_loss_streak_ = 0;
  std::vector<std::vector<int>> cells_;  // train indices per (task, emb)
  std::vector<std::vector<double>> lifted_motion_, lifted_traj_;
  std::vector<std::vector<double>> backgrounds_;
};

}  // namespace xemb::harness
