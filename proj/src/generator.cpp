#include "xemb/generator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <map>
#include <memory>
#include <stdexcept>

#include "xemb/checkpoint.hpp"
#include "xemb/objectives.hpp"

namespace xemb::gen {

namespace {

Tensor dense_init(int64_t rows, int64_t cols, Rng& rng, bool requires_grad) {
  return Tensor::randn({rows, cols}, rng,
                       1.0 / std::sqrt(static_cast<double>(rows)),
                       requires_grad);
}

// video [b, f*h*w*c] -> patch rows [b*tokens, patch_dim]
std::shared_ptr<std::vector<int64_t>> patchify_map(const GeneratorConfig& cfg,
                                                   int batch) {
  auto map = std::make_shared<std::vector<int64_t>>();
  map->reserve(static_cast<size_t>(batch) * cfg.tokens() * cfg.patch_dim());
  const int pr = cfg.height / cfg.patch, pc = cfg.width / cfg.patch;
  const int64_t video = cfg.video_values();
  for (int b = 0; b < batch; ++b)
    for (int f = 0; f < cfg.frames; ++f)
      for (int br = 0; br < pr; ++br)
        for (int bc = 0; bc < pc; ++bc)
          for (int r = 0; r < cfg.patch; ++r)
            for (int c = 0; c < cfg.patch; ++c)
              for (int ch = 0; ch < cfg.channels; ++ch)
                map->push_back(
                    b * video +
                    ((static_cast<int64_t>(f) * cfg.height +
                      (br * cfg.patch + r)) *
                         cfg.width +
                     (bc * cfg.patch + c)) *
                        cfg.channels +
                    ch);
  return map;
}

// inverse of patchify_map
std::shared_ptr<std::vector<int64_t>> unpatchify_map(const GeneratorConfig& cfg,
                                                     int batch) {
  auto fwd = patchify_map(cfg, batch);
  auto inv = std::make_shared<std::vector<int64_t>>(fwd->size());
  for (size_t i = 0; i < fwd->size(); ++i)
    (*inv)[static_cast<size_t>((*fwd)[i])] = static_cast<int64_t>(i);
  return inv;
}

struct MapCache {
  std::shared_ptr<std::vector<int64_t>> patchify, unpatchify, time_tile,
      gate_tile, ctx_interleave, stream_extract;
};

// per-sample time rows [b, d] tiled to [b*tokens, d]
std::shared_ptr<std::vector<int64_t>> time_tile_map(int batch, int tokens,
                                                    int d) {
  auto map = std::make_shared<std::vector<int64_t>>();
  map->reserve(static_cast<size_t>(batch) * tokens * d);
  for (int b = 0; b < batch; ++b)
    for (int t = 0; t < tokens; ++t)
      for (int j = 0; j < d; ++j)
        map->push_back(static_cast<int64_t>(b) * d + j);
  return map;
}

// rows laid out as [task b, emb b, bg b*g, stream b*T] -> per-sample
// [b, (2+g+T), d] interleave
std::shared_ptr<std::vector<int64_t>> ctx_interleave_map(int batch, int g,
                                                         int tokens, int d) {
  auto map = std::make_shared<std::vector<int64_t>>();
  const int64_t task_off = 0;
  const int64_t emb_off = static_cast<int64_t>(batch) * d;
  const int64_t bg_off = 2 * static_cast<int64_t>(batch) * d;
  const int64_t stream_off = (2 + g) * static_cast<int64_t>(batch) * d;
  map->reserve(static_cast<size_t>(batch) * (2 + g + tokens) * d);
  for (int b = 0; b < batch; ++b) {
    for (int j = 0; j < d; ++j)
      map->push_back(task_off + static_cast<int64_t>(b) * d + j);
    for (int j = 0; j < d; ++j)
      map->push_back(emb_off + static_cast<int64_t>(b) * d + j);
    for (int k = 0; k < g; ++k)
      for (int j = 0; j < d; ++j)
        map->push_back(bg_off + (static_cast<int64_t>(b) * g + k) * d + j);
    for (int t = 0; t < tokens; ++t)
      for (int j = 0; j < d; ++j)
        map->push_back(stream_off + (static_cast<int64_t>(b) * tokens + t) * d +
                       j);
  }
  return map;
}

// stream rows of the adapter sequence [b*(ctx+T), d] -> [b*T, d]
std::shared_ptr<std::vector<int64_t>> stream_extract_map(int batch, int ctx,
                                                         int tokens, int d) {
  auto map = std::make_shared<std::vector<int64_t>>();
  map->reserve(static_cast<size_t>(batch) * tokens * d);
  for (int b = 0; b < batch; ++b)
    for (int t = 0; t < tokens; ++t)
      for (int j = 0; j < d; ++j)
        map->push_back(
            (static_cast<int64_t>(b) * (ctx + tokens) + ctx + t) * d + j);
  return map;
}

const MapCache& cached_maps(const GeneratorConfig& cfg, int batch) {
  static std::map<std::tuple<int, int, int, int, int, int>, MapCache> cache;
  auto key = std::make_tuple(batch, cfg.frames, cfg.height, cfg.width,
                             cfg.channels, cfg.patch);
  auto it = cache.find(key);
  if (it == cache.end()) {
    MapCache maps;
    maps.patchify = patchify_map(cfg, batch);
    maps.unpatchify = unpatchify_map(cfg, batch);
    maps.time_tile = time_tile_map(batch, cfg.tokens(), cfg.d_model);
    maps.gate_tile = time_tile_map(batch, cfg.tokens(), 1);
    maps.ctx_interleave = ctx_interleave_map(batch, cfg.bg_tokens, cfg.tokens(),
                                             cfg.d_model);
    maps.stream_extract = stream_extract_map(batch, cfg.context_tokens(),
                                             cfg.tokens(), cfg.d_model);
    it = cache.emplace(key, std::move(maps)).first;
  }
  return it->second;
}

struct Embedded {
  Tensor h0;       // [b*tokens, d]
  Tensor patches;  // [b*tokens, patch_dim]
  Tensor gate;     // [b, 1]
};

Tensor time_embedding(const std::vector<double>& times,
                      const BackboneParams& p, const GeneratorConfig& cfg) {
  std::vector<Tensor> rows;
  rows.reserve(times.size());
  for (double t : times) rows.push_back(nn::sinusoidal_scalar(t, cfg.time_dim));
  Tensor te = concat(rows, 0);  // [b, time_dim]
  Tensor h = gelu(add(matmul(te, p.time_w1), p.time_b1));
  return add(matmul(h, p.time_w2), p.time_b2);  // [b, d]
}

// embedded token stream shared by both the backbone stack and the adapter
// input projection, along with the raw patches and the skip gate
Embedded embed_tokens(const Tensor& x_t, const std::vector<double>& times,
                      const BackboneParams& p, const GeneratorConfig& cfg,
                      int batch) {
  const auto& maps = cached_maps(cfg, batch);
  const int64_t rows = static_cast<int64_t>(batch) * cfg.tokens();
  Embedded e;
  e.patches = permute_gather(x_t, maps.patchify, {rows, cfg.patch_dim()},
                             true);
  Tensor h = add(matmul(e.patches, p.patch_w), p.patch_b);
  // fixed sinusoidal position code per token, tiled over the batch
  static std::map<std::tuple<int, int>, Tensor> pos_cache;
  auto pos_key = std::make_tuple(cfg.tokens(), cfg.d_model);
  auto pit = pos_cache.find(pos_key);
  if (pit == pos_cache.end())
    pit = pos_cache.emplace(pos_key,
                            nn::sinusoidal_pe(cfg.tokens(), cfg.d_model))
              .first;
  Tensor pos = pit->second;
  std::vector<Tensor> tiles(static_cast<size_t>(batch), pos);
  h = add(h, concat(tiles, 0));
  Tensor te = time_embedding(times, p, cfg);
  Tensor te_tiled = permute_gather(te, maps.time_tile,
                                   {rows, cfg.d_model}, false);
  e.h0 = add(h, te_tiled);
  e.gate = add(matmul(te, p.gate_w), p.gate_b);
  return e;
}

// output projection plus the gated linear skip, then back to video layout
Tensor project_out(const Tensor& h, const Embedded& e,
                   const BackboneParams& p, const GeneratorConfig& cfg,
                   int batch) {
  const auto& maps = cached_maps(cfg, batch);
  const int64_t rows = static_cast<int64_t>(batch) * cfg.tokens();
  Tensor gate_tiled = permute_gather(
      e.gate, maps.gate_tile, {rows, static_cast<int64_t>(1)}, false);
  Tensor v = add(matmul(h, p.out_w), p.out_b);
  v = add(v, mul(gate_tiled, matmul(e.patches, p.skip_w)));
  return permute_gather(
      v, maps.unpatchify,
      {static_cast<int64_t>(batch), cfg.video_values()}, true);
}

}  // namespace

BackboneParams BackboneParams::init(const GeneratorConfig& cfg, Rng& rng) {
  BackboneParams p;
  p.patch_w = dense_init(cfg.patch_dim(), cfg.d_model, rng, true);
  p.patch_b = Tensor::zeros({cfg.d_model}, true);
  p.time_w1 = dense_init(cfg.time_dim, cfg.d_model, rng, true);
  p.time_b1 = Tensor::zeros({cfg.d_model}, true);
  p.time_w2 = dense_init(cfg.d_model, cfg.d_model, rng, true);
  p.time_b2 = Tensor::zeros({cfg.d_model}, true);
  for (int l = 0; l < cfg.layers; ++l)
    p.blocks.push_back(nn::make_block(cfg.d_model, cfg.mlp_hidden, rng, true));
  p.out_w = Tensor::randn({cfg.d_model, cfg.patch_dim()}, rng,
                          0.02 / std::sqrt(static_cast<double>(cfg.d_model)),
                          true);
  p.out_b = Tensor::zeros({cfg.patch_dim()}, true);
  p.skip_w = Tensor::zeros({cfg.patch_dim(), cfg.patch_dim()}, true);
  p.gate_w = Tensor::randn({cfg.d_model, 1}, rng, 0.2, true);
  p.gate_b = Tensor::zeros({1}, true);
  return p;
}

std::vector<std::pair<std::string, Tensor>> BackboneParams::named_tensors()
    const {
  std::vector<std::pair<std::string, Tensor>> out{
      {"patch_w", patch_w},  {"patch_b", patch_b},  {"time_w1", time_w1},
      {"time_b1", time_b1},  {"time_w2", time_w2},  {"time_b2", time_b2},
      {"out_w", out_w},      {"out_b", out_b},      {"skip_w", skip_w},
      {"gate_w", gate_w},    {"gate_b", gate_b}};
  for (size_t l = 0; l < blocks.size(); ++l) {
    const auto bt = nn::block_tensors(blocks[l]);
    static const char* kNames[] = {"ln1_g", "ln1_b", "wqkv", "bqkv",
                                   "wo",    "bo",    "ln2_g", "ln2_b",
                                   "w1",    "b1",    "w2",    "b2"};
    for (size_t i = 0; i < bt.size(); ++i)
      out.emplace_back("block" + std::to_string(l) + "." + kNames[i], bt[i]);
  }
  return out;
}

void BackboneParams::register_params(AdamW& opt,
                                     const std::string& prefix) const {
  if (frozen)
    throw std::logic_error("backbone is frozen; refusing to register");
  for (const auto& [name, t] : named_tensors())
    opt.register_param(prefix + "." + name, t);
}

void BackboneParams::freeze() {
  auto fr = [](Tensor& t) {
    t = Tensor::from_data(t.shape(), t.data(), false);
  };
  fr(patch_w);
  fr(patch_b);
  fr(time_w1);
  fr(time_b1);
  fr(time_w2);
  fr(time_b2);
  for (auto& b : blocks) b = nn::clone_block(b, false);
  fr(out_w);
  fr(out_b);
  fr(skip_w);
  fr(gate_w);
  fr(gate_b);
  frozen = true;
}

void BackboneParams::assert_no_grad() const {
  for (const auto& [name, t] : named_tensors()) {
    if (t.requires_grad())
      throw std::logic_error("frozen backbone tensor '" + name +
                             "' requires grad");
    if (t.has_grad())
      for (double g : t.grad())
        if (g != 0.0)
          throw std::logic_error("gradient reached frozen backbone tensor '" +
                                 name + "'");
  }
}

AdapterParams AdapterParams::init(const BackboneParams& backbone,
                                  const GeneratorConfig& cfg, Rng& rng) {
  if (cfg.adapter_layers > cfg.layers)
    throw std::invalid_argument("adapter_layers exceeds backbone layers");
  AdapterParams p;
  p.ctx_task_w = dense_init(cfg.d_z, cfg.d_model, rng, true);
  p.ctx_task_b = Tensor::zeros({cfg.d_model}, true);
  p.ctx_emb_w = dense_init(cfg.d_z, cfg.d_model, rng, true);
  p.ctx_emb_b = Tensor::zeros({cfg.d_model}, true);
  p.ctx_bg_w = dense_init(cfg.height * cfg.width,
                          cfg.bg_tokens * cfg.d_model, rng, true);
  p.ctx_bg_b = Tensor::zeros({cfg.bg_tokens * cfg.d_model}, true);
  p.in_w = dense_init(cfg.d_model, cfg.d_model, rng, true);
  p.in_b = Tensor::zeros({cfg.d_model}, true);
  for (int k = 0; k < cfg.adapter_layers; ++k) {
    p.blocks.push_back(nn::clone_block(
        backbone.blocks[static_cast<size_t>(k)], true));
    p.inject_w.push_back(Tensor::zeros({cfg.d_model, cfg.d_model}, true));
  }
  return p;
}

std::vector<std::pair<std::string, Tensor>> AdapterParams::named_tensors()
    const {
  std::vector<std::pair<std::string, Tensor>> out{
      {"ctx_task_w", ctx_task_w}, {"ctx_task_b", ctx_task_b},
      {"ctx_emb_w", ctx_emb_w},   {"ctx_emb_b", ctx_emb_b},
      {"ctx_bg_w", ctx_bg_w},     {"ctx_bg_b", ctx_bg_b},
      {"in_w", in_w},             {"in_b", in_b}};
  for (size_t l = 0; l < blocks.size(); ++l) {
    const auto bt = nn::block_tensors(blocks[l]);
    static const char* kNames[] = {"ln1_g", "ln1_b", "wqkv", "bqkv",
                                   "wo",    "bo",    "ln2_g", "ln2_b",
                                   "w1",    "b1",    "w2",    "b2"};
    for (size_t i = 0; i < bt.size(); ++i)
      out.emplace_back("block" + std::to_string(l) + "." + kNames[i], bt[i]);
    out.emplace_back("inject" + std::to_string(l), inject_w[l]);
  }
  return out;
}

void AdapterParams::register_params(AdamW& opt,
                                    const std::string& prefix) const {
  for (const auto& [name, t] : named_tensors())
    opt.register_param(prefix + "." + name, t);
}

std::vector<Tensor> AdapterParams::tensors() const {
  std::vector<Tensor> out;
  for (const auto& [name, t] : named_tensors()) out.push_back(t);
  return out;
}

Tensor backbone_forward(const Tensor& x_t, const std::vector<double>& times,
                        const BackboneParams& p, const GeneratorConfig& cfg) {
  const int batch = static_cast<int>(times.size());
  if (x_t.rank() != 2 || x_t.dim(0) != batch ||
      x_t.dim(1) != cfg.video_values())
    throw std::invalid_argument("backbone_forward: expected [" +
                                std::to_string(batch) + "," +
                                std::to_string(cfg.video_values()) +
                                "], got " + shape_str(x_t.shape()));
  Embedded e = embed_tokens(x_t, times, p, cfg, batch);
  Tensor h = e.h0;
  for (const auto& block : p.blocks)
    h = nn::block_forward(h, block, batch, cfg.tokens(), cfg.heads);
  return project_out(h, e, p, cfg, batch);
}

Tensor predict_velocity(const Tensor& x_t, const std::vector<double>& times,
                        const Tensor& z_task, const Tensor& z_emb,
                        const Tensor& background, const BackboneParams& bb,
                        const AdapterParams& ad, const GeneratorConfig& cfg) {
  if (!bb.frozen)
    throw std::logic_error("predict_velocity: backbone must be frozen");
  const int batch = static_cast<int>(times.size());
  if (z_task.rank() != 2 || z_task.dim(0) != batch || z_task.dim(1) != cfg.d_z)
    throw std::invalid_argument("predict_velocity: bad z_task shape " +
                                shape_str(z_task.shape()));
  if (z_emb.shape() != z_task.shape())
    throw std::invalid_argument("predict_velocity: z shapes disagree");
  if (background.rank() != 2 || background.dim(0) != batch ||
      background.dim(1) != cfg.height * cfg.width)
    throw std::invalid_argument("predict_velocity: bad background shape");

  const auto& maps = cached_maps(cfg, batch);
  const int64_t stream_rows = static_cast<int64_t>(batch) * cfg.tokens();
  Embedded e = embed_tokens(x_t, times, bb, cfg, batch);
  Tensor h0 = e.h0;

  // adapter stream: per-sample [z_task; z_emb; background tokens; stream]
  Tensor ctx_task = add(matmul(z_task, ad.ctx_task_w), ad.ctx_task_b);
  Tensor ctx_emb = add(matmul(z_emb, ad.ctx_emb_w), ad.ctx_emb_b);
  Tensor ctx_bg = reshape(
      add(matmul(background, ad.ctx_bg_w), ad.ctx_bg_b),
      {static_cast<int64_t>(batch) * cfg.bg_tokens, cfg.d_model});
  Tensor stream_in = add(matmul(h0, ad.in_w), ad.in_b);
  Tensor stacked = concat({ctx_task, ctx_emb, ctx_bg, stream_in}, 0);
  const int adapter_seq = cfg.context_tokens() + cfg.tokens();
  Tensor a = permute_gather(
      stacked, maps.ctx_interleave,
      {static_cast<int64_t>(batch) * adapter_seq, cfg.d_model}, true);

  Tensor h = h0;
  for (int l = 0; l < cfg.layers; ++l) {
    h = nn::block_forward(h, bb.blocks[static_cast<size_t>(l)], batch,
                          cfg.tokens(), cfg.heads);
    if (l < cfg.adapter_layers) {
      a = nn::block_forward(a, ad.blocks[static_cast<size_t>(l)], batch,
                            adapter_seq, cfg.heads);
      Tensor stream = permute_gather(a, maps.stream_extract,
                                     {stream_rows, cfg.d_model}, true);
      h = add(h, matmul(stream, ad.inject_w[static_cast<size_t>(l)]));
    }
  }
  return project_out(h, e, bb, cfg, batch);
}

PretrainResult pretrain_backbone(const synth::Dataset& ds,
                                 const GeneratorConfig& cfg,
                                 const PretrainConfig& pcfg) {
  if (ds.train_idx.empty() || ds.val_idx.empty())
    throw std::invalid_argument("pretrain_backbone: dataset needs splits");
  for (const auto& s : ds.samples)
    if (s.n_frames != cfg.frames || s.height != cfg.height ||
        s.width != cfg.width || s.channels != cfg.channels)
      throw std::invalid_argument("pretrain_backbone: dataset/config mismatch");

  Rng rng(pcfg.seed);
  PretrainResult result;
  result.backbone = BackboneParams::init(cfg, rng);
  AdamWConfig ocfg;
  ocfg.lr = pcfg.lr;
  AdamW opt(ocfg);
  result.backbone.register_params(opt, "backbone");

  Rng batch_rng = rng.fork(1);
  Rng noise_rng = rng.fork(2);
  auto make_batch = [&](const std::vector<int>& idx, Rng& r, int bsz,
                        Tensor* x_t, Tensor* v_t, std::vector<double>* times) {
    std::vector<double> xt_data, vt_data;
    xt_data.reserve(static_cast<size_t>(bsz) * cfg.video_values());
    vt_data.reserve(xt_data.capacity());
    times->clear();
    for (int b = 0; b < bsz; ++b) {
      const int i = idx[static_cast<size_t>(r.next_below(idx.size()))];
      const auto& frames = ds.samples[static_cast<size_t>(i)].frames;
      const double t = r.uniform();
      times->push_back(t);
      for (int64_t j = 0; j < cfg.video_values(); ++j) {
        const double x0 = r.gaussian();
        const double x1 = frames[static_cast<size_t>(j)];
        xt_data.push_back(t * x1 + (1.0 - t) * x0);
        vt_data.push_back(x1 - x0);
      }
    }
    *x_t = Tensor::from_data({bsz, cfg.video_values()}, std::move(xt_data));
    *v_t = Tensor::from_data({bsz, cfg.video_values()}, std::move(vt_data));
  };

  double initial_loss = -1.0, best_val = 1e300;
  int high_loss_streak = 0, plateau_streak = 0;
  for (int step = 1; step <= pcfg.max_steps; ++step) {
    Tensor x_t, v_t;
    std::vector<double> times;
    make_batch(ds.train_idx, batch_rng, pcfg.batch, &x_t, &v_t, &times);
    Tensor u = backbone_forward(x_t, times, result.backbone, cfg);
    Tensor loss = obj::loss_fm(u, v_t);
    const double lv = loss.item();
    if (initial_loss < 0) initial_loss = lv;
    if (lv > pcfg.divergence_factor * initial_loss) {
      if (++high_loss_streak >= pcfg.divergence_patience)
        throw std::runtime_error("pretrain_backbone: diverged at step " +
                                 std::to_string(step));
    } else {
      high_loss_streak = 0;
    }
    backprop(loss);
    opt.step();
    result.steps_run = step;

    if (step % pcfg.eval_every == 0) {
      // fixed validation batch: evals compare model states, not batch noise
      Rng val_rng = noise_rng.fork(0xEAF);
      Tensor vx, vv;
      std::vector<double> vt;
      const int vb = std::min<int>(pcfg.batch,
                                   static_cast<int>(ds.val_idx.size()));
      make_batch(ds.val_idx, val_rng, vb, &vx, &vv, &vt);
      const double val =
          obj::loss_fm(backbone_forward(vx, vt, result.backbone, cfg), vv)
              .item();
      result.val_losses.push_back(val);
      if (val > best_val * (1.0 - pcfg.plateau_rel_improvement)) {
        if (++plateau_streak >= 2) break;
      } else {
        plateau_streak = 0;
      }
      best_val = std::min(best_val, val);
    }
  }
  result.backbone.freeze();
  return result;
}

std::vector<double> integrate_euler(
    const std::function<std::vector<double>(const std::vector<double>&,
                                            double)>& fn,
    std::vector<double> x0, int steps) {
  if (steps < 1) throw std::invalid_argument("integrate_euler: steps < 1");
  const double dt = 1.0 / steps;
  std::vector<double> x = std::move(x0);
  for (int k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) / steps;
    const auto v = fn(x, t);
    if (v.size() != x.size())
      throw std::runtime_error("integrate_euler: field changed dimension");
    for (size_t i = 0; i < x.size(); ++i) {
      x[i] += dt * v[i];
      if (!std::isfinite(x[i]))
        throw std::runtime_error("integrate_euler: non-finite state at step " +
                                 std::to_string(k));
    }
  }
  return x;
}

std::vector<std::vector<double>> sample_video_batch(
    const std::vector<std::vector<double>>& z_task,
    const std::vector<std::vector<double>>& z_emb,
    const std::vector<std::vector<double>>& backgrounds,
    const BackboneParams& bb, const AdapterParams& ad,
    const GeneratorConfig& cfg, const SamplerConfig& scfg) {
  const int batch = static_cast<int>(z_task.size());
  if (batch == 0) return {};
  std::vector<double> zt_data, ze_data, bg_data;
  for (int b = 0; b < batch; ++b) {
    zt_data.insert(zt_data.end(), z_task[static_cast<size_t>(b)].begin(),
                   z_task[static_cast<size_t>(b)].end());
    ze_data.insert(ze_data.end(), z_emb[static_cast<size_t>(b)].begin(),
                   z_emb[static_cast<size_t>(b)].end());
    bg_data.insert(bg_data.end(), backgrounds[static_cast<size_t>(b)].begin(),
                   backgrounds[static_cast<size_t>(b)].end());
  }
  Tensor zt = Tensor::from_data({batch, cfg.d_z}, std::move(zt_data));
  Tensor ze = Tensor::from_data({batch, cfg.d_z}, std::move(ze_data));
  Tensor bg = Tensor::from_data({batch, cfg.height * cfg.width},
                                std::move(bg_data));

  Rng rng(scfg.seed ^ 0x5a3317ULL);
  std::vector<double> state(static_cast<size_t>(batch) * cfg.video_values());
  for (auto& v : state) v = rng.gaussian();

  auto field = [&](const std::vector<double>& x,
                   double t) -> std::vector<double> {
    Tensor x_t = Tensor::from_data({batch, cfg.video_values()}, x);
    std::vector<double> times(static_cast<size_t>(batch), t);
    return predict_velocity(x_t, times, zt, ze, bg, bb, ad, cfg).data();
  };
  state = integrate_euler(field, std::move(state), scfg.steps);

  std::vector<std::vector<double>> out(static_cast<size_t>(batch));
  for (int b = 0; b < batch; ++b) {
    auto& video = out[static_cast<size_t>(b)];
    video.assign(state.begin() + static_cast<int64_t>(b) * cfg.video_values(),
                 state.begin() +
                     static_cast<int64_t>(b + 1) * cfg.video_values());
    for (auto& v : video) v = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

std::vector<double> sample_video(const std::vector<double>& z_task,
                                 const std::vector<double>& z_emb,
                                 const std::vector<double>& background,
                                 const BackboneParams& bb,
                                 const AdapterParams& ad,
                                 const GeneratorConfig& cfg,
                                 const SamplerConfig& scfg) {
  return sample_video_batch({z_task}, {z_emb}, {background}, bb, ad, cfg,
                            scfg)[0];
}

std::vector<double> background_image(int background_id, int height,
                                     int width) {
  return synth::background_image(background_id, height, width);
}

void save_backbone(const std::string& path, const BackboneParams& p,
                   const GeneratorConfig& cfg) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_backbone: cannot open " + path);
  out.write("XEMBBKB1", 8);
  char meta[512];
  snprintf(meta, sizeof(meta),
           "frames = %d\nheight = %d\nwidth = %d\nchannels = %d\n"
           "patch = %d\nd_model = %d\nheads = %d\nlayers = %d\n"
           "adapter_layers = %d\nmlp_hidden = %d\nd_z = %d\n"
           "bg_tokens = %d\ntime_dim = %d\n",
           cfg.frames, cfg.height, cfg.width, cfg.channels, cfg.patch,
           cfg.d_model, cfg.heads, cfg.layers, cfg.adapter_layers,
           cfg.mlp_hidden, cfg.d_z, cfg.bg_tokens, cfg.time_dim);
  const uint32_t len = static_cast<uint32_t>(strlen(meta));
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(meta, len);
  write_tensor_container(out, p.named_tensors(), false);
  if (!out) throw std::runtime_error("save_backbone: write failed");
}

std::pair<BackboneParams, GeneratorConfig> load_backbone(
    const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_backbone: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (std::memcmp(magic, "XEMBBKB1", 8) != 0)
    throw std::runtime_error("load_backbone: bad magic in " + path);
  uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string meta(len, '\0');
  in.read(meta.data(), len);
  GeneratorConfig cfg;
  std::istringstream ms(meta);
  std::string line;
  while (std::getline(ms, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, line.find(' '));
    const int value = std::atoi(line.c_str() + eq + 1);
    if (key == "frames") cfg.frames = value;
    else if (key == "height") cfg.height = value;
    else if (key == "width") cfg.width = value;
    else if (key == "channels") cfg.channels = value;
    else if (key == "patch") cfg.patch = value;
    else if (key == "d_model") cfg.d_model = value;
    else if (key == "heads") cfg.heads = value;
    else if (key == "layers") cfg.layers = value;
    else if (key == "adapter_layers") cfg.adapter_layers = value;
    else if (key == "mlp_hidden") cfg.mlp_hidden = value;
    else if (key == "d_z") cfg.d_z = value;
    else if (key == "bg_tokens") cfg.bg_tokens = value;
    else if (key == "time_dim") cfg.time_dim = value;
  }
  auto entries = read_tensor_container(in);
  Rng rng(0);
  BackboneParams p = BackboneParams::init(cfg, rng);
  for (auto& [name, t] : p.named_tensors()) {
    auto it = entries.find(name);
    if (it == entries.end())
      throw std::runtime_error("load_backbone: missing tensor '" + name + "'");
    Tensor handle = t;
    assign_tensor(handle, it->second, name);
  }
  p.freeze();
  return {std::move(p), cfg};
}

std::vector<double> compose_transfer(const synth::DemoSample& source,
                                     const std::vector<double>& target_card,
                                     const TransferModels& models,
                                     const SamplerConfig& scfg) {
  auto z_task = enc::encode_task(
      source.goal_token, synth::lift_motion(source.motion, source.n_frames),
      synth::lift_trajectory(source.object_traj, source.n_frames),
      source.n_frames, *models.task_encoder, *models.enc_cfg);
  auto z_emb =
      enc::encode_embodiment(target_card, *models.emb_encoder, *models.enc_cfg);
  auto bg = background_image(source.background_id, models.gen_cfg->height,
                             models.gen_cfg->width);
  return sample_video(z_task.z.data(), z_emb.z.data(), bg, *models.backbone,
                      *models.adapter, *models.gen_cfg, scfg);
}

void write_video_artifacts(
    const std::string& dir, const std::vector<double>& video,
    const GeneratorConfig& cfg,
    const std::vector<std::pair<std::string, std::string>>& metadata) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const int hw = cfg.height * cfg.width;
  for (int f = 0; f < cfg.frames; ++f) {
    char name[32];
    snprintf(name, sizeof(name), "frame_%03d.ppm", f);
    std::ofstream out(fs::path(dir) / name, std::ios::binary);
    out << "P6\n" << cfg.width << " " << cfg.height << "\n255\n";
    for (int i = 0; i < hw; ++i) {
      const size_t base = (static_cast<size_t>(f) * hw + i) * cfg.channels;
      auto to_byte = [](double v) {
        return static_cast<unsigned char>(
            std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
      };
      const unsigned char rgb[3] = {
          to_byte(video[base]),
          to_byte(cfg.channels > 1 ? video[base + 1] : 0.0), 0};
      out.write(reinterpret_cast<const char*>(rgb), 3);
    }
    if (!out) throw std::runtime_error("write_video_artifacts: ppm failed");
  }
  {
    std::ofstream raw(fs::path(dir) / "video.f64", std::ios::binary);
    raw.write("XEMBVID1", 8);
    const uint32_t dims[4] = {
        static_cast<uint32_t>(cfg.frames), static_cast<uint32_t>(cfg.height),
        static_cast<uint32_t>(cfg.width), static_cast<uint32_t>(cfg.channels)};
    raw.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    raw.write(reinterpret_cast<const char*>(video.data()),
              static_cast<std::streamsize>(video.size() * sizeof(double)));
    if (!raw) throw std::runtime_error("write_video_artifacts: raw failed");
  }
  std::ofstream meta(fs::path(dir) / "metadata.txt");
  for (const auto& [k, v] : metadata) meta << k << " = " << v << "\n";
  if (!meta) throw std::runtime_error("write_video_artifacts: metadata failed");
}

}  // namespace xemb::gen
