#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "xemb/encoders.hpp"
#include "xemb/gradcheck.hpp"
#include "xemb/synthworld.hpp"

using namespace xemb;
using namespace xemb::enc;

namespace {

EncoderConfig small_config() {
  EncoderConfig cfg;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.d_z = 8;
  cfg.goal_vocab = 3;
  cfg.motion_dim = 10;
  cfg.traj_dim = 9;
  cfg.frames = 3;
  cfg.image_h = 8;
  cfg.image_w = 8;
  cfg.patch = 4;
  return cfg;
}

std::vector<double> random_vec(Rng& rng, size_t n, double s = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.gaussian() * s;
  return v;
}

}  // namespace

TEST_CASE("encode_task is deterministic and unit copy is normalized") {
  EncoderConfig cfg;
  Rng rng(1);
  auto params = TaskEncoderParams::init(cfg, rng);
  Rng drng(2);
  auto motion = random_vec(drng, static_cast<size_t>(cfg.frames) * cfg.motion_dim, 0.5);
  auto traj = random_vec(drng, static_cast<size_t>(cfg.frames) * cfg.traj_dim, 0.5);

  auto a = encode_task(2, motion, traj, cfg.frames, params, cfg);
  auto b = encode_task(2, motion, traj, cfg.frames, params, cfg);
  CHECK(a.z.data() == b.z.data());
  double n = 0;
  for (double v : a.unit) n += v * v;
  CHECK(std::abs(std::sqrt(n) - 1.0) < 1e-6);
}

TEST_CASE("positional encoding makes frame order matter") {
  EncoderConfig cfg;
  Rng rng(3);
  auto params = TaskEncoderParams::init(cfg, rng);
  Rng drng(4);
  auto motion = random_vec(drng, static_cast<size_t>(cfg.frames) * cfg.motion_dim, 0.5);
  auto traj = random_vec(drng, static_cast<size_t>(cfg.frames) * cfg.traj_dim, 0.5);
  auto permuted = motion;
  // swap frames 0 and 7
  for (int j = 0; j < cfg.motion_dim; ++j)
    std::swap(permuted[static_cast<size_t>(j)],
              permuted[static_cast<size_t>(7 * cfg.motion_dim + j)]);
  auto a = encode_task(1, motion, traj, cfg.frames, params, cfg);
  auto b = encode_task(1, permuted, traj, cfg.frames, params, cfg);
  double diff = 0;
  for (size_t i = 0; i < a.z.data().size(); ++i)
    diff = std::max(diff, std::abs(a.z.data()[i] - b.z.data()[i]));
  CHECK(diff > 1e-8);
}

TEST_CASE("encode_task input validation") {
  EncoderConfig cfg;
  Rng rng(5);
  auto params = TaskEncoderParams::init(cfg, rng);
  std::vector<double> motion(static_cast<size_t>(cfg.frames) * cfg.motion_dim, 0.0);
  std::vector<double> traj_bad(static_cast<size_t>(cfg.frames - 1) * cfg.traj_dim, 0.0);
  std::vector<double> traj(static_cast<size_t>(cfg.frames) * cfg.traj_dim, 0.0);
  CHECK_THROWS_AS(encode_task(0, motion, traj_bad, cfg.frames, params, cfg),
                  std::invalid_argument);
  CHECK_THROWS_AS(encode_task(99, motion, traj, cfg.frames, params, cfg),
                  std::invalid_argument);
}

TEST_CASE("task encoder gradients match finite differences") {
  auto cfg = small_config();
  Rng rng(6);
  auto params = TaskEncoderParams::init(cfg, rng);
  Rng drng(7);
  auto motion = random_vec(drng, static_cast<size_t>(cfg.frames) * cfg.motion_dim, 0.5);
  auto traj = random_vec(drng, static_cast<size_t>(cfg.frames) * cfg.traj_dim, 0.5);

  auto inputs = params.tensors();
  double err = finite_difference_check(
      [&](const std::vector<Tensor>&) {
        auto e = encode_task(1, motion, traj, cfg.frames, params, cfg);
        return sum(mul(e.z, e.z));
      },
      inputs, 1e-5);
  INFO("max rel err ", err);
  CHECK(err < 1e-4);
}

TEST_CASE("embodiment encoder accepts blank cards and checks resolution") {
  EncoderConfig cfg;
  Rng rng(8);
  auto params = EmbodimentEncoderParams::init(cfg, rng);
  std::vector<double> blank(static_cast<size_t>(cfg.image_h) * cfg.image_w, 0.0);
  auto e = encode_embodiment(blank, params, cfg);
  for (double v : e.z.data()) CHECK(std::isfinite(v));

  std::vector<double> wrong(16, 0.0);
  CHECK_THROWS_AS(encode_embodiment(wrong, params, cfg),
                  std::invalid_argument);
}

TEST_CASE("embodiment encoder gradients match finite differences") {
  auto cfg = small_config();
  Rng rng(9);
  auto params = EmbodimentEncoderParams::init(cfg, rng);
  Rng drng(10);
  auto card = random_vec(drng, static_cast<size_t>(cfg.image_h) * cfg.image_w, 0.3);
  for (auto& v : card) v = std::abs(v);

  auto inputs = params.tensors();
  double err = finite_difference_check(
      [&](const std::vector<Tensor>&) {
        auto e = encode_embodiment(card, params, cfg);
        return sum(mul(e.z, e.z));
      },
      inputs, 1e-5);
  INFO("max rel err ", err);
  CHECK(err < 1e-4);
}

TEST_CASE("frozen patch features carry no gradient and stay fixed") {
  EncoderConfig cfg;
  Rng rng(11);
  auto p1 = EmbodimentEncoderParams::init(cfg, rng);
  Rng rng2(999);
  auto p2 = EmbodimentEncoderParams::init(cfg, rng2);
  // frozen features depend only on the frozen seed, not the init stream
  CHECK(p1.frozen_patch_features.data() == p2.frozen_patch_features.data());
  CHECK_FALSE(p1.frozen_patch_features.requires_grad());

  std::vector<double> card(static_cast<size_t>(cfg.image_h) * cfg.image_w, 0.5);
  auto e = encode_embodiment(card, p1, cfg);
  backprop(sum(mul(e.z, e.z)));
  for (double g : p1.frozen_patch_features.grad()) CHECK(g == 0.0);
}

TEST_CASE("cls_pool output length is independent of sequence length") {
  EncoderConfig cfg;
  Rng rng(12);
  auto enc = make_cls_encoder(cfg.d_model, rng, false);
  Rng drng(13);
  Tensor one = Tensor::randn({1, cfg.d_model}, drng);
  Tensor fifty = Tensor::randn({50, cfg.d_model}, drng);
  auto o1 = cls_pool(one, enc, cfg.heads);
  auto o50 = cls_pool(fifty, enc, cfg.heads);
  CHECK(o1.shape() == Shape{1, cfg.d_model});
  CHECK(o50.shape() == Shape{1, cfg.d_model});
  CHECK_THROWS_AS(cls_pool(Tensor::zeros({0, 64}), enc, cfg.heads),
                  std::invalid_argument);
}

TEST_CASE("cls_pool over identical tokens ignores sequence length") {
  EncoderConfig cfg;
  Rng rng(14);
  auto enc = make_cls_encoder(cfg.d_model, rng, false);
  Rng drng(15);
  Tensor row = Tensor::randn({1, cfg.d_model}, drng);
  auto tile = [&](int t) {
    std::vector<double> data;
    for (int i = 0; i < t; ++i)
      data.insert(data.end(), row.data().begin(), row.data().end());
    return Tensor::from_data({t, cfg.d_model}, std::move(data));
  };
  auto a = cls_pool(tile(4), enc, cfg.heads);
  auto b = cls_pool(tile(11), enc, cfg.heads);
  for (size_t i = 0; i < a.data().size(); ++i)
    CHECK(a.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-12));
}

TEST_CASE("cls_pool is permutation invariant without positional encoding") {
  EncoderConfig cfg;
  Rng rng(16);
  auto enc = make_cls_encoder(cfg.d_model, rng, false);
  Rng drng(17);
  Tensor tokens = Tensor::randn({6, cfg.d_model}, drng);
  // rotate rows by two
  std::vector<double> rot(tokens.data().size());
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < cfg.d_model; ++j)
      rot[static_cast<size_t>(i) * cfg.d_model + j] =
          tokens.data()[static_cast<size_t>((i + 2) % 6) * cfg.d_model + j];
  auto a = cls_pool(tokens, enc, cfg.heads);
  auto b = cls_pool(Tensor::from_data({6, cfg.d_model}, std::move(rot)), enc,
                    cfg.heads);
  for (size_t i = 0; i < a.data().size(); ++i)
    CHECK(a.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-12));
}

TEST_CASE("task embeddings ignore the rendering embodiment end to end") {
  // encode_task's signature admits no pixels; rendering the same task under
  // two embodiments must produce identical embeddings
  using namespace xemb::synth;
  auto spec = sample_task(77, TaskClass::kPour);
  EmbodimentSpec ea{Embodiment::kFiveFinger, 8.0, 0};
  EmbodimentSpec eb{Embodiment::kParallelJaw, 8.0, 2};
  auto da = render_demo(spec, ea, 0, 5);
  auto db = render_demo(spec, eb, 0, 5);

  EncoderConfig cfg;
  Rng rng(18);
  auto params = TaskEncoderParams::init(cfg, rng);
  auto za = encode_task(da.goal_token,
                        lift_motion(da.motion, da.n_frames),
                        lift_trajectory(da.object_traj, da.n_frames),
                        da.n_frames, params, cfg);
  auto zb = encode_task(db.goal_token,
                        lift_motion(db.motion, db.n_frames),
                        lift_trajectory(db.object_traj, db.n_frames),
                        db.n_frames, params, cfg);
  CHECK(za.z.data() == zb.z.data());
}
