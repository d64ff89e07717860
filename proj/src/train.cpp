#include "xemb/train.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "xemb/checkpoint.hpp"

namespace xemb::harness {

TrainSettings TrainSettings::from_config(const Config& cfg) {
  TrainSettings st;
  st.steps = static_cast<int>(cfg.get_int_or("steps", st.steps));
  st.repeats_per_cell =
      static_cast<int>(cfg.get_int_or("repeats_per_cell", st.repeats_per_cell));
  st.lr_main = cfg.get_double_or("lr_main", st.lr_main);
  st.lr_variational = cfg.get_double_or("lr_variational", st.lr_variational);
  st.weights.dis = cfg.get_double_or("lambda_dis", st.weights.dis);
  st.weights.task = cfg.get_double_or("lambda_task", st.weights.task);
  st.weights.emb = cfg.get_double_or("lambda_emb", st.weights.emb);
  st.club_apply_every =
      static_cast<int>(cfg.get_int_or("club_apply_every", st.club_apply_every));
  st.disable_disentangle =
      cfg.get_bool_or("disable_disentangle", st.disable_disentangle);
  st.disable_task_contrast =
      cfg.get_bool_or("disable_task_contrast", st.disable_task_contrast);
  st.disable_emb_contrast =
      cfg.get_bool_or("disable_emb_contrast", st.disable_emb_contrast);
  st.seed = cfg.get_u64_or("seed", st.seed);
  st.d_z = static_cast<int>(cfg.get_int_or("d_z", st.d_z));
  if (st.club_apply_every < 1)
    throw ConfigError("club_apply_every must be >= 1");
  if (st.repeats_per_cell < 1) throw ConfigError("repeats_per_cell must be >= 1");
  return st;
}

std::string TrainSettings::canonical() const {
  char buf[512];
  snprintf(buf, sizeof(buf),
           "repeats=%d lr_main=%.17g lr_var=%.17g l_dis=%.17g l_task=%.17g "
           "l_emb=%.17g every=%d no_dis=%d no_task=%d no_emb=%d seed=%llu "
           "d_z=%d",
           repeats_per_cell, lr_main, lr_variational, weights.dis,
           weights.task, weights.emb, club_apply_every, disable_disentangle,
           disable_task_contrast, disable_emb_contrast,
           static_cast<unsigned long long>(seed), d_z);
  return buf;
}

uint64_t TrainSettings::hash() const { return fnv1a(canonical()); }

Trainer::Trainer(const synth::Dataset& ds, gen::BackboneParams backbone,
                 const gen::GeneratorConfig& gcfg, const TrainSettings& st)
    : ds_(&ds),
      settings_(st),
      gen_cfg_(gcfg),
      backbone_(std::move(backbone)) {
  if (!backbone_.frozen)
    throw std::invalid_argument("Trainer: backbone must be pretrained+frozen");
  const auto& r = ds.config.render;
  if (gcfg.frames != r.frames || gcfg.height != r.height ||
      gcfg.width != r.width || gcfg.channels != r.channels)
    throw std::invalid_argument("Trainer: generator/dataset shape mismatch");

  enc_cfg_.d_z = st.d_z;
  enc_cfg_.goal_vocab = r.goal_vocab();
  enc_cfg_.frames = r.frames;
  enc_cfg_.image_h = r.height;
  enc_cfg_.image_w = r.width;

  Rng init_rng(st.seed);
  task_enc_ = enc::TaskEncoderParams::init(enc_cfg_, init_rng);
  emb_enc_ = enc::EmbodimentEncoderParams::init(enc_cfg_, init_rng);
  adapter_ = gen::AdapterParams::init(backbone_, gen_cfg_, init_rng);

  obj::VariationalConfig vcfg;
  vcfg.in_dim = st.d_z;
  vcfg.out_dim = st.d_z;
  vcfg.hidden = 128;
  vcfg.lr = st.lr_variational;
  vcfg.seed = st.seed ^ 0x9bADULL;
  q_ = std::make_unique<obj::VariationalModel>(obj::VariationalModel::init(vcfg));

  AdamWConfig ocfg;
  ocfg.lr = st.lr_main;
  opt_ = AdamW(ocfg);
  task_enc_.register_params(opt_, "enc_task");
  emb_enc_.register_params(opt_, "enc_emb");
  adapter_.register_params(opt_, "adapter");

  rng_batch_ = Rng(st.seed ^ 0xBA7C4ULL);
  rng_noise_ = Rng(st.seed ^ 0x105EULL);
  rng_cards_ = Rng(st.seed ^ 0xCA2D5ULL);

  cells_.assign(synth::kNumTaskClasses * synth::kNumEmbodiments, {});
  for (int i : ds.train_idx) {
    const auto& m = ds.meta[static_cast<size_t>(i)];
    cells_[static_cast<size_t>(m.task * synth::kNumEmbodiments +
                               m.embodiment)]
        .push_back(i);
  }
  for (size_t c = 0; c < cells_.size(); ++c)
    if (cells_[c].empty())
      throw std::invalid_argument(
          "Trainer: train split misses task/embodiment cell " +
          std::to_string(c));

  lifted_motion_.resize(ds.samples.size());
  lifted_traj_.resize(ds.samples.size());
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    lifted_motion_[i] = synth::lift_motion(s.motion, s.n_frames, r);
    lifted_traj_[i] = synth::lift_trajectory(s.object_traj, s.n_frames, r);
  }
  backgrounds_.resize(static_cast<size_t>(r.backgrounds));
  for (int b = 0; b < r.backgrounds; ++b)
    backgrounds_[static_cast<size_t>(b)] =
        synth::background_image(b, r.height, r.width);
}

void Trainer::encode_batch(const std::vector<int>& indices,
                           const std::vector<uint64_t>& card_seeds,
                           const std::vector<int>& card_tints, Tensor* z_task,
                           Tensor* z_emb) {
  std::vector<Tensor> task_rows, emb_rows;
  task_rows.reserve(indices.size());
  emb_rows.reserve(indices.size());
  const auto& r = ds_->config.render;
  for (size_t s = 0; s < indices.size(); ++s) {
    const int i = indices[s];
    const auto& sample = ds_->samples[static_cast<size_t>(i)];
    task_rows.push_back(
        enc::encode_task(sample.goal_token,
                         lifted_motion_[static_cast<size_t>(i)],
                         lifted_traj_[static_cast<size_t>(i)],
                         sample.n_frames, task_enc_, enc_cfg_)
            .z);
    synth::EmbodimentSpec spec;
    spec.embodiment_id =
        static_cast<synth::Embodiment>(sample.embodiment_label);
    spec.scale = r.ee_scale;
    spec.tint = card_tints[s];
    auto card = synth::embodiment_card_noisy(spec, card_seeds[s], r);
    emb_rows.push_back(enc::encode_embodiment(card, emb_enc_, enc_cfg_).z);
  }
  *z_task = concat(task_rows, 0);
  *z_emb = concat(emb_rows, 0);
}

StepRecord Trainer::step() {
  const int64_t n = step_ + 1;
  const int repeats = settings_.repeats_per_cell;
  const int batch =
      synth::kNumTaskClasses * synth::kNumEmbodiments * repeats;

  std::vector<int> indices;
  std::vector<int> task_labels, emb_labels, card_tints;
  std::vector<uint64_t> card_seeds;
  indices.reserve(static_cast<size_t>(batch));
  for (int t = 0; t < synth::kNumTaskClasses; ++t)
    for (int e = 0; e < synth::kNumEmbodiments; ++e)
      for (int rep = 0; rep < repeats; ++rep) {
        const auto& cell =
            cells_[static_cast<size_t>(t * synth::kNumEmbodiments + e)];
        indices.push_back(
            cell[static_cast<size_t>(rng_batch_.next_below(cell.size()))]);
        task_labels.push_back(t);
        emb_labels.push_back(e);
        card_tints.push_back(rng_cards_.uniform_int(0, 2));
        card_seeds.push_back(rng_cards_.next_u64());
      }
  uint64_t batch_hash = 0xcbf29ce484222325ULL;
  auto mix = [&batch_hash](uint64_t v) {
    batch_hash ^= v;
    batch_hash *= 0x100000001b3ULL;
  };
  for (int i : indices) mix(static_cast<uint64_t>(i));
  for (uint64_t s : card_seeds) mix(s);

  Tensor z_task, z_emb;
  encode_batch(indices, card_seeds, card_tints, &z_task, &z_emb);

  // variational model sees only detached embeddings, fit before the main
  // update (strict alternation)
  q_->fit_step(z_task, z_emb);

  Tensor l_dis = obj::club_loss(z_task, z_emb, *q_);

  // flow-matching batch
  std::vector<double> xt_data, vt_data, bg_data, times;
  xt_data.reserve(static_cast<size_t>(batch) * gen_cfg_.video_values());
  vt_data.reserve(xt_data.capacity());
  for (int b = 0; b < batch; ++b) {
    const auto& sample =
        ds_->samples[static_cast<size_t>(indices[static_cast<size_t>(b)])];
    const double t = rng_noise_.uniform();
    times.push_back(t);
    for (int64_t j = 0; j < gen_cfg_.video_values(); ++j) {
      const double x0 = rng_noise_.gaussian();
      const double x1 = sample.frames[static_cast<size_t>(j)];
      xt_data.push_back(t * x1 + (1.0 - t) * x0);
      vt_data.push_back(x1 - x0);
    }
    const auto& bg =
        backgrounds_[static_cast<size_t>(sample.background_id)];
    bg_data.insert(bg_data.end(), bg.begin(), bg.end());
  }
  Tensor x_t = Tensor::from_data({batch, gen_cfg_.video_values()},
                                 std::move(xt_data));
  Tensor v_t = Tensor::from_data({batch, gen_cfg_.video_values()},
                                 std::move(vt_data));
  Tensor bg = Tensor::from_data({batch, gen_cfg_.height * gen_cfg_.width},
                                std::move(bg_data));
  Tensor u = gen::predict_velocity(x_t, times, z_task, z_emb, bg, backbone_,
                                   adapter_, gen_cfg_);
  Tensor l_fm = obj::loss_fm(u, v_t);

  // dual InfoNCE over the batch pair structure
  auto contrast = [&](const Tensor& z, const std::vector<int>& labels) {
    std::vector<Tensor> losses;
    for (int i = 0; i < batch; ++i) {
      Tensor anchor = slice(z, 0, i, 1);
      Tensor positive;
      for (int d = 1; d < batch; ++d) {
        const int j = (i + d) % batch;
        if (labels[static_cast<size_t>(j)] == labels[static_cast<size_t>(i)]) {
          positive = slice(z, 0, j, 1);
          break;
        }
      }
      std::vector<Tensor> negatives;
      for (int j = 0; j < batch; ++j)
        if (labels[static_cast<size_t>(j)] != labels[static_cast<size_t>(i)])
          negatives.push_back(slice(z, 0, j, 1));
      losses.push_back(obj::info_nce(anchor, positive, negatives));
    }
    Tensor sum_loss = losses[0];
    for (size_t i = 1; i < losses.size(); ++i)
      sum_loss = add(sum_loss, losses[i]);
    return scale(sum_loss, 1.0 / static_cast<double>(batch));
  };
  Tensor l_task = contrast(z_task, task_labels);
  Tensor l_emb = contrast(z_emb, emb_labels);

  const bool club_applied =
      !settings_.disable_disentangle && (n % settings_.club_apply_every == 0);
  obj::LossParts parts;
  parts.fm = l_fm;
  if (club_applied) parts.disentangle = l_dis;
  if (!settings_.disable_task_contrast) parts.task_contrast = l_task;
  if (!settings_.disable_emb_contrast) parts.emb_contrast = l_emb;
  Tensor total = obj::total_loss(parts, settings_.weights);

  const double fm_value = l_fm.item();
  if (initial_fm_ < 0) initial_fm_ = fm_value;
  if (fm_value > settings_.divergence_factor * initial_fm_) {
    if (++high_loss_streak_ >= settings_.divergence_patience)
      throw std::runtime_error("Trainer: diverged at step " +
                               std::to_string(n));
  } else {
    high_loss_streak_ = 0;
  }

  backprop(total);
  opt_.step();
  backbone_.assert_no_grad();

  step_ = n;
  StepRecord rec;
  rec.step = n;
  rec.fm = fm_value;
  rec.dis = l_dis.item();
  rec.task = l_task.item();
  rec.emb = l_emb.item();
  rec.total = total.item();
  rec.club_applied = club_applied;
  rec.batch_hash = batch_hash;
  return rec;
}

const char* Trainer::csv_header() {
  return "step,L_FM,L_dis,L_task,L_emb,total\n";
}

std::string Trainer::csv_row(const StepRecord& r) {
  char buf[256];
  snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.17g,%.17g,%.17g\n",
           static_cast<long long>(r.step), r.fm, r.dis, r.task, r.emb,
           r.total);
  return buf;
}

void Trainer::run(int n, std::ostream* csv, std::ostream* hash_log) {
  for (int i = 0; i < n; ++i) {
    const StepRecord rec = step();
    if (csv) *csv << csv_row(rec);
    if (hash_log)
      *hash_log << rec.step << " " << std::hex << rec.batch_hash << std::dec
                << "\n";
  }
}

namespace {

std::string rng_state_str(const Rng& rng) {
  const auto st = rng.save_state();
  uint64_t cached_bits;
  std::memcpy(&cached_bits, &st.cached, sizeof(double));
  char buf[256];
  snprintf(buf, sizeof(buf), "%llx %llx %llx %llx %d %llx",
           static_cast<unsigned long long>(st.s[0]),
           static_cast<unsigned long long>(st.s[1]),
           static_cast<unsigned long long>(st.s[2]),
           static_cast<unsigned long long>(st.s[3]), st.has_cached ? 1 : 0,
           static_cast<unsigned long long>(cached_bits));
  return buf;
}

Rng::State rng_state_from_str(const std::string& s) {
  unsigned long long a, b, c, d, bits;
  int cached;
  if (sscanf(s.c_str(), "%llx %llx %llx %llx %d %llx", &a, &b, &c, &d,
             &cached, &bits) != 6)
    throw std::runtime_error("checkpoint: bad rng state '" + s + "'");
  Rng::State st;
  st.s = {a, b, c, d};
  st.has_cached = cached != 0;
  uint64_t ub = bits;
  std::memcpy(&st.cached, &ub, sizeof(double));
  return st;
}

}  // namespace

void Trainer::save_checkpoint(const std::string& path) const {
  std::ostringstream meta;
  meta << "checkpoint_version = 1\n";
  meta << "step = " << step_ << "\n";
  meta << "settings_hash = " << settings_.hash() << "\n";
  {
    char buf[128];
    snprintf(buf, sizeof(buf), "%.17g", settings_.lr_main);
    meta << "lr_main = " << buf << "\n";
    snprintf(buf, sizeof(buf), "%.17g", settings_.lr_variational);
    meta << "lr_variational = " << buf << "\n";
    snprintf(buf, sizeof(buf), "%.17g", settings_.weights.dis);
    meta << "lambda_dis = " << buf << "\n";
    snprintf(buf, sizeof(buf), "%.17g", settings_.weights.task);
    meta << "lambda_task = " << buf << "\n";
    snprintf(buf, sizeof(buf), "%.17g", settings_.weights.emb);
    meta << "lambda_emb = " << buf << "\n";
  }
  meta << "repeats_per_cell = " << settings_.repeats_per_cell << "\n";
  meta << "club_apply_every = " << settings_.club_apply_every << "\n";
  meta << "disable_disentangle = " << settings_.disable_disentangle << "\n";
  meta << "disable_task_contrast = " << settings_.disable_task_contrast
       << "\n";
  meta << "disable_emb_contrast = " << settings_.disable_emb_contrast << "\n";
  meta << "seed = " << settings_.seed << "\n";
  meta << "d_z = " << settings_.d_z << "\n";
  meta << "opt_step = " << opt_.step_count() << "\n";
  meta << "q_opt_step = " << q_->optimizer().step_count() << "\n";
  meta << "initial_fm = ";
  {
    char buf[64];
    snprintf(buf, sizeof(buf), "%.17g", initial_fm_);
    meta << buf << "\n";
  }
  meta << "high_loss_streak = " << high_loss_streak_ << "\n";
  meta << "rng_batch = " << rng_state_str(rng_batch_) << "\n";
  meta << "rng_noise = " << rng_state_str(rng_noise_) << "\n";
  meta << "rng_cards = " << rng_state_str(rng_cards_) << "\n";

  std::vector<std::pair<std::string, Tensor>> tensors;
  auto add_named = [&tensors](const std::string& prefix,
                              const std::vector<std::pair<std::string, Tensor>>&
                                  named) {
    for (const auto& [name, t] : named)
      tensors.emplace_back(prefix + "." + name, t);
  };
  // parameters
  {
    AdamW probe;  // names must match registration order/prefixes
    task_enc_.register_params(probe, "enc_task");
    emb_enc_.register_params(probe, "enc_emb");
    adapter_.register_params(probe, "adapter");
    for (const auto& [name, t] : probe.params()) tensors.emplace_back(name, t);
  }
  add_named("q", const_cast<Trainer*>(this)->q_->named_tensors());
  // optimizer moments
  for (const auto& [name, slot] : opt_.slots()) {
    tensors.emplace_back(
        "opt.m." + name,
        Tensor::from_data({static_cast<int64_t>(slot.m.size())}, slot.m));
    tensors.emplace_back(
        "opt.v." + name,
        Tensor::from_data({static_cast<int64_t>(slot.v.size())}, slot.v));
  }
  for (const auto& [name, slot] : q_->optimizer().slots()) {
    tensors.emplace_back(
        "qopt.m." + name,
        Tensor::from_data({static_cast<int64_t>(slot.m.size())}, slot.m));
    tensors.emplace_back(
        "qopt.v." + name,
        Tensor::from_data({static_cast<int64_t>(slot.v.size())}, slot.v));
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out.write("XEMBCKP1", 8);
  const std::string meta_str = meta.str();
  const uint32_t meta_len = static_cast<uint32_t>(meta_str.size());
  out.write(reinterpret_cast<const char*>(&meta_len), sizeof(meta_len));
  out.write(meta_str.data(), meta_len);
  write_tensor_container(out, tensors, false);
  if (!out) throw std::runtime_error("save_checkpoint: write failed");
}

void Trainer::load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (std::memcmp(magic, "XEMBCKP1", 8) != 0)
    throw std::runtime_error("load_checkpoint: bad magic");
  uint32_t meta_len = 0;
  in.read(reinterpret_cast<char*>(&meta_len), sizeof(meta_len));
  std::string meta_str(meta_len, '\0');
  in.read(meta_str.data(), meta_len);
  Config meta = Config::parse_string(meta_str, path + "#meta");
  if (meta.get_u64_or("settings_hash", 0) != settings_.hash())
    throw std::runtime_error(
        "load_checkpoint: settings hash mismatch (checkpoint " +
        meta.get("settings_hash") + ", current " +
        std::to_string(settings_.hash()) + ")");
  auto entries = read_tensor_container(in);

  step_ = meta.get_int("step");
  initial_fm_ = meta.get_double("initial_fm");
  high_loss_streak_ = static_cast<int>(meta.get_int("high_loss_streak"));
  rng_batch_.load_state(rng_state_from_str(meta.get("rng_batch")));
  rng_noise_.load_state(rng_state_from_str(meta.get("rng_noise")));
  rng_cards_.load_state(rng_state_from_str(meta.get("rng_cards")));

  auto want = [&entries](const std::string& name) -> const TensorEntry& {
    auto it = entries.find(name);
    if (it == entries.end())
      throw std::runtime_error("load_checkpoint: missing tensor '" + name +
                               "'");
    return it->second;
  };
  {
    AdamW probe;
    task_enc_.register_params(probe, "enc_task");
    emb_enc_.register_params(probe, "enc_emb");
    adapter_.register_params(probe, "adapter");
    for (auto& [name, t] : probe.params()) {
      Tensor handle = t;
      assign_tensor(handle, want(name), name);
    }
  }
  for (auto& [name, t] : q_->named_tensors())
    assign_tensor(t, want("q." + name), name);

  opt_.set_step_count(meta.get_int("opt_step"));
  for (auto& [name, slot] : opt_.mutable_slots()) {
    slot.m = want("opt.m." + name).data;
    slot.v = want("opt.v." + name).data;
  }
  q_->optimizer().set_step_count(meta.get_int("q_opt_step"));
  for (auto& [name, slot] : q_->optimizer().mutable_slots()) {
    slot.m = want("qopt.m." + name).data;
    slot.v = want("qopt.v." + name).data;
  }
}

TrainSettings Trainer::peek_settings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("peek_settings: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (std::memcmp(magic, "XEMBCKP1", 8) != 0)
    throw std::runtime_error("peek_settings: bad magic");
  uint32_t meta_len = 0;
  in.read(reinterpret_cast<char*>(&meta_len), sizeof(meta_len));
  std::string meta_str(meta_len, '\0');
  in.read(meta_str.data(), meta_len);
  Config meta = Config::parse_string(meta_str, path + "#meta");
  return TrainSettings::from_config(meta);
}

gen::TransferModels Trainer::transfer_models() const {
  gen::TransferModels m;
  m.task_encoder = &task_enc_;
  m.emb_encoder = &emb_enc_;
  m.enc_cfg = &enc_cfg_;
  m.backbone = &backbone_;
  m.adapter = &adapter_;
  m.gen_cfg = &gen_cfg_;
  return m;
}

}  // namespace xemb::harness
