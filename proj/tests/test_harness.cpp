#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "xemb/eval.hpp"
#include "xemb/train.hpp"

using namespace xemb;
using namespace xemb::harness;

namespace {

struct Fixture {
  synth::Dataset ds;
  gen::BackboneParams backbone;
  gen::GeneratorConfig gcfg;
};

// reduced dimensions so harness mechanics stay fast to test
Fixture make_fixture() {
  synth::DatasetConfig dcfg;
  dcfg.seeds_per_pair = 5;
  dcfg.master_seed = 31;
  dcfg.render.frames = 4;
  dcfg.render.height = 16;
  dcfg.render.width = 16;
  Fixture f;
  f.ds = synth::build_dataset(dcfg);
  f.gcfg.frames = 4;
  f.gcfg.height = 16;
  f.gcfg.width = 16;
  f.gcfg.patch = 8;
  f.gcfg.d_model = 32;
  f.gcfg.heads = 4;
  f.gcfg.layers = 2;
  f.gcfg.adapter_layers = 2;
  f.gcfg.mlp_hidden = 64;
  f.gcfg.time_dim = 16;
  f.gcfg.d_z = 32;
  gen::PretrainConfig pcfg;
  pcfg.max_steps = 120;
  pcfg.batch = 8;
  pcfg.lr = 1e-2;
  pcfg.eval_every = 60;
  pcfg.seed = 7;
  f.backbone = gen::pretrain_backbone(f.ds, f.gcfg, pcfg).backbone;
  return f;
}

TrainSettings small_settings() {
  TrainSettings st;
  st.lr_main = 2e-3;
  st.lr_variational = 1e-3;
  st.seed = 5;
  st.d_z = 32;
  return st;
}

const Fixture& fixture() {
  static Fixture f = make_fixture();
  return f;
}

}  // namespace

TEST_CASE("config parsing, overrides, and errors") {
  auto cfg = Config::parse_string(
      "alpha = 3\n# comment\nname = hello world\nrate=0.5  # inline\n");
  CHECK(cfg.get_int("alpha") == 3);
  CHECK(cfg.get("name") == "hello world");
  CHECK(cfg.get_double("rate") == 0.5);
  CHECK(cfg.get_int_or("absent", 9) == 9);

  cfg.apply_override("alpha=4");
  CHECK(cfg.get_int("alpha") == 4);

  try {
    Config::parse_string("ok = 1\nbroken line\n", "test.cfg");
    FAIL("expected parse error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("test.cfg:2") != std::string::npos);
  }
  try {
    cfg.get("missing_key");
    FAIL("expected missing key error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("missing_key") != std::string::npos);
  }

  // canonical form is sorted and stable
  auto c1 = Config::parse_string("b = 2\na = 1\n");
  auto c2 = Config::parse_string("a = 1\nb = 2\n");
  CHECK(c1.canonical() == c2.canonical());
  CHECK(c1.hash() == c2.hash());
}

TEST_CASE("train settings read paper defaults from config") {
  auto cfg = Config::parse_string("steps = 50\n");
  auto st = TrainSettings::from_config(cfg);
  CHECK(st.lr_main == 1e-5);
  CHECK(st.lr_variational == 1e-4);
  CHECK(st.weights.dis == 1.0);
  CHECK(st.weights.task == 0.5);
  CHECK(st.weights.emb == 0.5);
  CHECK(st.club_apply_every == 10);

  auto cfg2 = Config::parse_string("club_apply_every = 0\n");
  CHECK_THROWS_AS(TrainSettings::from_config(cfg2), ConfigError);
}

TEST_CASE("trainer applies the club schedule on exactly every nth step") {
  const auto& f = fixture();
  auto st = small_settings();
  st.club_apply_every = 4;
  Trainer trainer(f.ds, f.backbone, f.gcfg, st);
  for (int s = 1; s <= 12; ++s) {
    auto rec = trainer.step();
    CHECK(rec.club_applied == (s % 4 == 0));
    CHECK(std::isfinite(rec.total));
  }
}

TEST_CASE("ablation arms share identical batch streams") {
  const auto& f = fixture();
  auto st = small_settings();
  st.steps = 6;
  EvalOptions opt;
  opt.club_fit_steps = 60;
  opt.sampler_steps = 2;
  opt.max_sources = 4;
  auto results = run_ablation_suite(f.ds, f.backbone, f.gcfg, st,
                                    standard_ablation_arms(), opt);
  REQUIRE(results.size() == 4);
  for (const auto& r : results) {
    CHECK_FALSE(r.diverged);
    CHECK(r.batch_hashes.size() == 6);
    CHECK(r.batch_hashes == results[0].batch_hashes);
  }
}

TEST_CASE("checkpoint resume continues the loss csv bit-identically") {
  namespace fs = std::filesystem;
  const auto& f = fixture();
  auto st = small_settings();

  Trainer a(f.ds, f.backbone, f.gcfg, st);
  std::ostringstream csv_a;
  a.run(5, &csv_a);
  const auto ckpt = fs::temp_directory_path() / "xemb_resume.ckpt";
  a.save_checkpoint(ckpt.string());
  std::ostringstream tail_a;
  a.run(10, &tail_a);

  Trainer b(f.ds, f.backbone, f.gcfg, st);
  b.load_checkpoint(ckpt.string());
  CHECK(b.step_count() == 5);
  std::ostringstream tail_b;
  b.run(10, &tail_b);
  CHECK(tail_a.str() == tail_b.str());

  // settings hash mismatch is rejected
  auto st2 = st;
  st2.lr_main *= 2;
  Trainer c(f.ds, f.backbone, f.gcfg, st2);
  CHECK_THROWS_AS(c.load_checkpoint(ckpt.string()), std::runtime_error);
  fs::remove(ckpt);
}

TEST_CASE("two trainers with one seed produce identical csv") {
  const auto& f = fixture();
  auto st = small_settings();
  Trainer a(f.ds, f.backbone, f.gcfg, st);
  Trainer b(f.ds, f.backbone, f.gcfg, st);
  std::ostringstream csv_a, csv_b;
  a.run(6, &csv_a);
  b.run(6, &csv_b);
  CHECK(csv_a.str() == csv_b.str());
}

TEST_CASE("untrained encoders cluster near chance") {
  const auto& f = fixture();
  auto st = small_settings();
  Trainer trainer(f.ds, f.backbone, f.gcfg, st);  // no steps taken
  EvalOptions opt;
  opt.club_fit_steps = 80;
  std::vector<int> all(f.ds.samples.size());
  std::iota(all.begin(), all.end(), 0);
  auto rep = eval_disentanglement(trainer, all, opt);
  INFO("task purity ", rep.task_purity, " emb purity ", rep.emb_purity);
  // untrained task embeddings cluster near chance (1/k). The embodiment
  // null baseline is different: cards are one static image per class, so
  // the input space is class-pure before any training and purity stays
  // high even for a random encoder.
  CHECK(rep.task_purity <= 1.0 / 3.0 + 0.15);
  CHECK(rep.task_purity >= 1.0 / 3.0 - 0.15);
  CHECK(rep.emb_purity >= 0.25);
  // correlation matrix structure
  const int dims = 2 * rep.d_z;
  for (int i = 0; i < dims; ++i)
    CHECK(rep.correlation[static_cast<size_t>(i) * dims + i] ==
          doctest::Approx(1.0).epsilon(1e-9));
  for (int i = 0; i < dims; ++i)
    for (int j = 0; j < dims; ++j)
      CHECK(rep.correlation[static_cast<size_t>(i) * dims + j] ==
            doctest::Approx(
                rep.correlation[static_cast<size_t>(j) * dims + i])
                .epsilon(1e-12));
  CHECK(rep.task_projection.size() == all.size());
}

TEST_CASE("metric primitives closed forms") {
  std::vector<double> a{0.2, 0.4, 0.6, 0.8};
  CHECK(psnr(a, a) == 99.0);
  std::vector<double> b{0.3, 0.5, 0.7, 0.9};
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-9));  // mse 0.01

  Rng rng(3);
  std::vector<double> video(4 * 16 * 16 * 2);
  for (auto& v : video) v = rng.uniform();
  CHECK(ssim_video(video, video, 4, 16, 16, 2) == doctest::Approx(1.0));

  // mmd: same distribution vs shifted distribution
  std::vector<std::vector<double>> x, y, z;
  for (int i = 0; i < 60; ++i) {
    x.push_back({rng.gaussian(), rng.gaussian()});
    y.push_back({rng.gaussian(), rng.gaussian()});
    z.push_back({rng.gaussian() + 3.0, rng.gaussian()});
  }
  CHECK(mmd_rbf(x, y) < mmd_rbf(x, z));
}

TEST_CASE("kmeans recovers separated blobs and flags degenerate input") {
  Rng rng(4);
  std::vector<std::vector<double>> pts;
  std::vector<int> labels;
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 20; ++i) {
      pts.push_back({c * 10.0 + rng.gaussian() * 0.2,
                     c * -6.0 + rng.gaussian() * 0.2});
      labels.push_back(c);
    }
  auto km = kmeans(pts, 3, 10, 9);
  CHECK_FALSE(km.degenerate);
  CHECK(cluster_purity(km.assignment, labels, 3) == 1.0);
  CHECK(silhouette(pts, km.assignment, 3) > 0.8);

  std::vector<std::vector<double>> same(10, {1.0, 2.0});
  auto km2 = kmeans(same, 3, 5, 9);
  CHECK(km2.degenerate);

  auto proj = pca2(pts);
  CHECK(proj.size() == pts.size());
  // determinism of the sign convention
  auto proj2 = pca2(pts);
  CHECK(proj == proj2);
}

TEST_CASE("generation eval refuses a rejected oracle") {
  const auto& f = fixture();
  auto st = small_settings();
  Trainer trainer(f.ds, f.backbone, f.gcfg, st);
  synth::OracleConfig ocfg;
  ocfg.steps = 1;  // deliberately undertrained
  ocfg.min_accuracy = 0.99;
  auto oracle = synth::OracleClassifier::train(f.ds, ocfg);
  if (!oracle.accepted()) {
    CHECK_THROWS_AS(eval_generation(trainer, f.ds.val_idx, oracle, {}),
                    std::runtime_error);
  }
}
