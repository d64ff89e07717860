#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "xemb/generator.hpp"
#include "xemb/gradcheck.hpp"
#include "xemb/objectives.hpp"

using namespace xemb;
using namespace xemb::gen;

namespace {

GeneratorConfig small_config() {
  GeneratorConfig cfg;
  cfg.frames = 2;
  cfg.height = 8;
  cfg.width = 8;
  cfg.channels = 2;
  cfg.patch = 4;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.adapter_layers = 2;
  cfg.mlp_hidden = 16;
  cfg.d_z = 8;
  cfg.bg_tokens = 2;
  cfg.time_dim = 8;
  return cfg;
}

struct SmallModels {
  BackboneParams backbone;
  AdapterParams adapter;
};

SmallModels make_models(const GeneratorConfig& cfg, uint64_t seed) {
  Rng rng(seed);
  SmallModels m;
  m.backbone = BackboneParams::init(cfg, rng);
  m.backbone.freeze();
  m.adapter = AdapterParams::init(m.backbone, cfg, rng);
  return m;
}

}  // namespace

TEST_CASE("zero-init adapter reproduces the unconditional backbone bitwise") {
  auto cfg = small_config();
  auto m = make_models(cfg, 1);
  Rng rng(2);
  const int batch = 3;
  Tensor x_t = Tensor::randn({batch, cfg.video_values()}, rng);
  Tensor zt = Tensor::randn({batch, cfg.d_z}, rng);
  Tensor ze = Tensor::randn({batch, cfg.d_z}, rng);
  Tensor bg = Tensor::uniform({batch, cfg.height * cfg.width}, rng, 0.0, 1.0);
  std::vector<double> times{0.1, 0.5, 0.9};

  Tensor cond = predict_velocity(x_t, times, zt, ze, bg, m.backbone,
                                 m.adapter, cfg);
  Tensor uncond = backbone_forward(x_t, times, m.backbone, cfg);
  REQUIRE(cond.data().size() == uncond.data().size());
  CHECK(std::memcmp(cond.data().data(), uncond.data().data(),
                    cond.data().size() * sizeof(double)) == 0);
}

TEST_CASE("predict_velocity validates inputs and frozen state") {
  auto cfg = small_config();
  Rng rng(3);
  auto bb = BackboneParams::init(cfg, rng);  // not frozen
  auto frozen = BackboneParams::init(cfg, rng);
  frozen.freeze();
  auto ad = AdapterParams::init(frozen, cfg, rng);
  Tensor x_t = Tensor::randn({1, cfg.video_values()}, rng);
  Tensor z = Tensor::randn({1, cfg.d_z}, rng);
  Tensor bg = Tensor::zeros({1, cfg.height * cfg.width});
  CHECK_THROWS_AS(
      predict_velocity(x_t, {0.5}, z, z, bg, bb, ad, cfg), std::logic_error);
  Tensor bad_z = Tensor::randn({1, cfg.d_z + 1}, rng);
  CHECK_THROWS_AS(
      predict_velocity(x_t, {0.5}, bad_z, bad_z, bg, frozen, ad, cfg),
      std::invalid_argument);
}

TEST_CASE("adapter gradients pass finite differences, backbone gets none") {
  auto cfg = small_config();
  auto m = make_models(cfg, 4);
  Rng rng(5);
  const int batch = 2;
  Tensor x_t = Tensor::randn({batch, cfg.video_values()}, rng);
  Tensor zt = Tensor::randn({batch, cfg.d_z}, rng);
  Tensor ze = Tensor::randn({batch, cfg.d_z}, rng);
  Tensor bg = Tensor::uniform({batch, cfg.height * cfg.width}, rng, 0.0, 1.0);
  std::vector<double> times{0.3, 0.8};

  // make the injections nonzero so their upstream gradients are exercised
  Rng jr(6);
  for (auto& w : m.adapter.inject_w) {
    for (auto& v : w.mutable_data()) v = jr.gaussian() * 0.05;
  }

  auto inputs = m.adapter.tensors();
  double err = finite_difference_check(
      [&](const std::vector<Tensor>&) {
        Tensor u = predict_velocity(x_t, times, zt, ze, bg, m.backbone,
                                    m.adapter, cfg);
        return mean(mul(u, u));
      },
      inputs, 1e-5);
  INFO("max rel err ", err);
  CHECK(err < 1e-4);

  Tensor u = predict_velocity(x_t, times, zt, ze, bg, m.backbone, m.adapter,
                              cfg);
  backprop(mean(mul(u, u)));
  m.backbone.assert_no_grad();
}

TEST_CASE("euler integrator is exact on constant fields") {
  std::vector<double> x0{1.0, -2.0, 0.5};
  const std::vector<double> c{0.25, 1.5, -3.0};
  auto field = [&](const std::vector<double>&, double) { return c; };
  for (int steps : {1, 2, 4, 8, 64}) {
    auto x = integrate_euler(field, x0, steps);
    for (size_t i = 0; i < x.size(); ++i) CHECK(x[i] == x0[i] + c[i]);
  }
  auto x7 = integrate_euler(field, x0, 7);
  for (size_t i = 0; i < x7.size(); ++i)
    CHECK(x7[i] == doctest::Approx(x0[i] + c[i]).epsilon(1e-12));
  CHECK_THROWS_AS(integrate_euler(field, x0, 0), std::invalid_argument);
}

TEST_CASE("euler integrator reports non-finite states with the step index") {
  auto blowup = [](const std::vector<double>& x, double) {
    return std::vector<double>{x[0] * 1e308};
  };
  try {
    integrate_euler(blowup, {1.0}, 4);
    FAIL("expected throw");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
}

TEST_CASE("single-step sampling equals one explicit euler step") {
  auto cfg = small_config();
  auto m = make_models(cfg, 7);
  Rng rng(8);
  std::vector<double> zt(static_cast<size_t>(cfg.d_z)),
      ze(static_cast<size_t>(cfg.d_z));
  for (auto& v : zt) v = rng.gaussian();
  for (auto& v : ze) v = rng.gaussian();
  auto bg = background_image(1, cfg.height, cfg.width);

  SamplerConfig scfg;
  scfg.steps = 1;
  scfg.seed = 42;
  auto video = sample_video(zt, ze, bg, m.backbone, m.adapter, cfg, scfg);

  // recompute by hand: eps + u(eps, 0)
  Rng noise(scfg.seed ^ 0x5a3317ULL);
  std::vector<double> eps(static_cast<size_t>(cfg.video_values()));
  for (auto& v : eps) v = noise.gaussian();
  Tensor x = Tensor::from_data({1, cfg.video_values()}, eps);
  Tensor ztt = Tensor::from_data({1, cfg.d_z}, zt);
  Tensor zet = Tensor::from_data({1, cfg.d_z}, ze);
  Tensor bgt = Tensor::from_data({1, cfg.height * cfg.width}, bg);
  auto u = predict_velocity(x, {0.0}, ztt, zet, bgt, m.backbone, m.adapter,
                            cfg);
  for (size_t i = 0; i < video.size(); ++i) {
    const double expect = std::clamp(eps[i] + u.data()[i], 0.0, 1.0);
    CHECK(video[i] == expect);
  }

  // determinism end to end
  auto again = sample_video(zt, ze, bg, m.backbone, m.adapter, cfg, scfg);
  CHECK(again == video);
}

TEST_CASE("flow-matched sampler recovers a two-gaussian mixture") {
  // tiny velocity MLP over (x, t) trained with the same objective + optimizer
  Rng rng(9);
  const int hidden = 48;
  Tensor w1 = Tensor::randn({3, hidden}, rng, 1.0 / std::sqrt(3.0), true);
  Tensor b1 = Tensor::zeros({hidden}, true);
  Tensor w2 = Tensor::randn({hidden, hidden}, rng,
                            1.0 / std::sqrt(static_cast<double>(hidden)), true);
  Tensor b2 = Tensor::zeros({hidden}, true);
  Tensor w3 = Tensor::randn({hidden, 2}, rng,
                            1.0 / std::sqrt(static_cast<double>(hidden)), true);
  Tensor b3 = Tensor::zeros({2}, true);
  auto fwd = [&](const Tensor& xt) {
    Tensor h = gelu(add(matmul(xt, w1), b1));
    h = gelu(add(matmul(h, w2), b2));
    return add(matmul(h, w3), b3);
  };
  AdamWConfig ocfg;
  ocfg.lr = 3e-3;
  AdamW opt(ocfg);
  opt.register_param("w1", w1);
  opt.register_param("b1", b1);
  opt.register_param("w2", w2);
  opt.register_param("b2", b2);
  opt.register_param("w3", w3);
  opt.register_param("b3", b3);

  Rng data_rng(10);
  const int batch = 96;
  for (int step = 0; step < 1500; ++step) {
    std::vector<double> in, target;
    for (int b = 0; b < batch; ++b) {
      const double mode = data_rng.uniform() < 0.5 ? 2.0 : -2.0;
      const double x1a = mode + 0.5 * data_rng.gaussian();
      const double x1b = mode + 0.5 * data_rng.gaussian();
      const double x0a = data_rng.gaussian(), x0b = data_rng.gaussian();
      const double t = data_rng.uniform();
      in.push_back(t * x1a + (1 - t) * x0a);
      in.push_back(t * x1b + (1 - t) * x0b);
      in.push_back(t);
      target.push_back(x1a - x0a);
      target.push_back(x1b - x0b);
    }
    Tensor xt = Tensor::from_data({batch, 3}, std::move(in));
    Tensor vt = Tensor::from_data({batch, 2}, std::move(target));
    Tensor loss = obj::loss_fm(fwd(xt), vt);
    backprop(loss);
    opt.step();
  }

  Rng sample_rng(11);
  int near_pos = 0;
  const int n_samples = 400;
  for (int s = 0; s < n_samples; ++s) {
    std::vector<double> x{sample_rng.gaussian(), sample_rng.gaussian()};
    auto field = [&](const std::vector<double>& xv, double t) {
      Tensor in = Tensor::from_data({1, 3}, {xv[0], xv[1], t});
      return fwd(in).data();
    };
    auto out = integrate_euler(field, x, 50);
    const double dp = std::hypot(out[0] - 2.0, out[1] - 2.0);
    const double dn = std::hypot(out[0] + 2.0, out[1] + 2.0);
    near_pos += dp < dn;
  }
  const double weight = static_cast<double>(near_pos) / n_samples;
  INFO("mixture weight ", weight);
  CHECK(std::abs(weight - 0.5) < 0.1);
}

TEST_CASE("backbone pretraining matches dataset statistics and freezes") {
  synth::DatasetConfig dcfg;
  dcfg.seeds_per_pair = 3;
  dcfg.master_seed = 5;
  dcfg.render.frames = 4;
  dcfg.render.height = 16;
  dcfg.render.width = 16;
  auto ds = synth::build_dataset(dcfg);

  GeneratorConfig cfg;
  cfg.frames = 4;
  cfg.height = 16;
  cfg.width = 16;
  cfg.patch = 8;
  cfg.d_model = 32;
  cfg.heads = 4;
  cfg.layers = 2;
  cfg.adapter_layers = 2;
  cfg.mlp_hidden = 64;
  cfg.time_dim = 16;

  PretrainConfig pcfg;
  pcfg.max_steps = 500;
  pcfg.batch = 12;
  pcfg.lr = 1e-2;
  pcfg.eval_every = 120;
  pcfg.seed = 77;

  auto result = pretrain_backbone(ds, cfg, pcfg);
  CHECK(result.backbone.frozen);
  CHECK(result.steps_run > 0);
  CHECK_FALSE(result.val_losses.empty());

  // frozen: registration refuses, later training can never touch it
  AdamW opt;
  CHECK_THROWS_AS(result.backbone.register_params(opt, "bb"),
                  std::logic_error);

  // unconditional samples against the dataset per-pixel mean
  std::vector<double> data_mean(static_cast<size_t>(cfg.video_values()), 0.0);
  for (int i : ds.train_idx)
    for (int64_t j = 0; j < cfg.video_values(); ++j)
      data_mean[static_cast<size_t>(j)] +=
          ds.samples[static_cast<size_t>(i)].frames[static_cast<size_t>(j)];
  for (auto& v : data_mean) v /= static_cast<double>(ds.train_idx.size());

  Rng srng(13);
  const int n_vids = 24;
  std::vector<double> gen_mean(static_cast<size_t>(cfg.video_values()), 0.0);
  for (int s = 0; s < n_vids; ++s) {
    std::vector<double> x(static_cast<size_t>(cfg.video_values()));
    for (auto& v : x) v = srng.gaussian();
    auto field = [&](const std::vector<double>& xv, double t) {
      Tensor in = Tensor::from_data({1, cfg.video_values()}, xv);
      return backbone_forward(in, {t}, result.backbone, cfg).data();
    };
    auto out = integrate_euler(field, std::move(x), 16);
    for (int64_t j = 0; j < cfg.video_values(); ++j)
      gen_mean[static_cast<size_t>(j)] +=
          std::clamp(out[static_cast<size_t>(j)], 0.0, 1.0);
  }
  for (auto& v : gen_mean) v /= n_vids;
  double mad = 0.0;
  for (size_t j = 0; j < gen_mean.size(); ++j)
    mad += std::abs(gen_mean[j] - data_mean[j]);
  mad /= static_cast<double>(gen_mean.size());
  INFO("mean abs deviation ", mad);
  CHECK(mad < 0.1);

  // determinism: same config and seed give identical weights
  auto result2 = pretrain_backbone(ds, cfg, pcfg);
  auto t1 = result.backbone.named_tensors();
  auto t2 = result2.backbone.named_tensors();
  REQUIRE(t1.size() == t2.size());
  for (size_t i = 0; i < t1.size(); ++i)
    CHECK(t1[i].second.data() == t2[i].second.data());
}

TEST_CASE("video artifacts land on disk") {
  namespace fs = std::filesystem;
  auto cfg = small_config();
  std::vector<double> video(static_cast<size_t>(cfg.video_values()), 0.5);
  const auto dir = fs::temp_directory_path() / "xemb_video";
  fs::remove_all(dir);
  write_video_artifacts(dir.string(), video, cfg,
                        {{"seed", "7"}, {"steps", "50"}});
  CHECK(fs::exists(dir / "frame_000.ppm"));
  CHECK(fs::exists(dir / "frame_001.ppm"));
  CHECK(fs::exists(dir / "video.f64"));
  std::ifstream ppm(dir / "frame_000.ppm", std::ios::binary);
  std::string header;
  ppm >> header;
  CHECK(header == "P6");
  std::ifstream meta(dir / "metadata.txt");
  std::string line;
  std::getline(meta, line);
  CHECK(line == "seed = 7");
  fs::remove_all(dir);
}
