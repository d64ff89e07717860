#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "xemb/geometry.hpp"
#include "xemb/synthworld.hpp"

using namespace xemb;
using namespace xemb::synth;

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Moments {
  double mass, cx, cy, angle;
};

// independent centroid/orientation extraction used as the render oracle
Moments moments_of(const std::vector<double>& img, int h, int w) {
  Moments m{0, 0, 0, 0};
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const double v = img[static_cast<size_t>(r) * w + c];
      m.mass += v;
      m.cx += v * c;
      m.cy += v * r;
    }
  REQUIRE(m.mass > 0);
  m.cx /= m.mass;
  m.cy /= m.mass;
  double mxx = 0, myy = 0, mxy = 0;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const double v = img[static_cast<size_t>(r) * w + c];
      const double dx = c - m.cx, dy = r - m.cy;
      mxx += v * dx * dx;
      myy += v * dy * dy;
      mxy += v * dx * dy;
    }
  m.angle = 0.5 * std::atan2(2.0 * mxy, mxx - myy);
  return m;
}

double angle_diff_mod_pi(double a, double b) {
  double d = std::fmod(a - b, kPi);
  if (d > kPi / 2) d -= kPi;
  if (d < -kPi / 2) d += kPi;
  return std::abs(d);
}

std::vector<double> object_channel(const DemoSample& s, int f) {
  const int hw = s.height * s.width;
  std::vector<double> out(static_cast<size_t>(hw));
  for (int i = 0; i < hw; ++i)
    out[static_cast<size_t>(i)] =
        s.frames[(static_cast<size_t>(f) * hw + i) * s.channels + 1];
  return out;
}

int grip_flips(const DemoSample& s) {
  int flips = 0;
  for (int f = 1; f < s.n_frames; ++f) {
    const double a = s.motion[static_cast<size_t>(f - 1) * kMotionDim + 3];
    const double b = s.motion[static_cast<size_t>(f) * kMotionDim + 3];
    if (a != b) ++flips;
  }
  return flips;
}

}  // namespace

TEST_CASE("sample_task is deterministic") {
  auto a = sample_task(99, TaskClass::kPickPlace);
  auto b = sample_task(99, TaskClass::kPickPlace);
  CHECK(a == b);
  auto c = sample_task(100, TaskClass::kPickPlace);
  CHECK(a.object.start_x != c.object.start_x);
}

TEST_CASE("pour tasks carry a non-constant rotation profile") {
  auto spec = sample_task(5, TaskClass::kPour);
  CHECK(spec.object.spin >= 1.6);
  CHECK(spec.object.spin <= 2.4);
  EmbodimentSpec emb;
  auto demo = render_demo(spec, emb, 0, 1);
  double lo = 1e9, hi = -1e9;
  for (int f = 0; f < demo.n_frames; ++f) {
    const double a = demo.object_traj[static_cast<size_t>(f) * kObjectDim + 2];
    lo = std::min(lo, a);
    hi = std::max(hi, a);
  }
  CHECK(hi - lo > 1.0);
  auto grasp = sample_task(5, TaskClass::kGrasp);
  CHECK(grasp.object.spin == 0.0);
}

TEST_CASE("sampled object paths stay inside the frame") {
  RenderConfig cfg;
  for (uint64_t seed = 0; seed < 1000; ++seed) {
    auto spec = sample_task(seed, std::nullopt, cfg);
    for (double v : {spec.object.start_x, spec.object.target_x}) {
      CHECK(v >= 5.0);
      CHECK(v <= cfg.width - 6.0);
    }
    for (double v : {spec.object.start_y, spec.object.target_y}) {
      CHECK(v >= 5.0);
      CHECK(v <= cfg.height - 6.0);
    }
  }
  // rendered trajectories, spot-checked
  for (uint64_t seed = 0; seed < 30; ++seed) {
    auto spec = sample_task(seed, std::nullopt, cfg);
    EmbodimentSpec emb;
    auto demo = render_demo(spec, emb, 0, seed);
    for (int f = 0; f < demo.n_frames; ++f) {
      const double x = demo.object_traj[static_cast<size_t>(f) * kObjectDim];
      const double y =
          demo.object_traj[static_cast<size_t>(f) * kObjectDim + 1];
      CHECK(x >= 4.0);
      CHECK(x <= cfg.width - 5.0);
      CHECK(y >= 2.5);
      CHECK(y <= cfg.height - 5.0);
    }
  }
}

TEST_CASE("same task under two embodiments shares annotations bitwise") {
  auto spec = sample_task(31, TaskClass::kPickPlace);
  EmbodimentSpec a{Embodiment::kFiveFinger, 8.0, 0};
  EmbodimentSpec b{Embodiment::kSuction, 8.0, 2};
  auto da = render_demo(spec, a, 1, 77);
  auto db = render_demo(spec, b, 1, 77);
  CHECK(da.object_traj == db.object_traj);
  CHECK(da.motion == db.motion);
  CHECK(da.goal_token == db.goal_token);
}

TEST_CASE("grip channel flips per task family") {
  EmbodimentSpec emb;
  auto grasp = render_demo(sample_task(3, TaskClass::kGrasp), emb, 0, 1);
  CHECK(grip_flips(grasp) == 1);
  auto pick = render_demo(sample_task(4, TaskClass::kPickPlace), emb, 0, 1);
  CHECK(grip_flips(pick) == 2);
  auto pour = render_demo(sample_task(6, TaskClass::kPour), emb, 0, 1);
  CHECK(grip_flips(pour) == 1);
  for (const auto* d : {&grasp, &pick, &pour})
    for (int f = 0; f < d->n_frames; ++f) {
      const double g = d->motion[static_cast<size_t>(f) * kMotionDim + 3];
      CHECK((g == 0.0 || g == 1.0));
    }
}

TEST_CASE("object annotations match the rendered pixels") {
  EmbodimentSpec emb;
  for (uint64_t seed : {11ull, 12ull, 13ull, 14ull, 15ull, 16ull}) {
    auto spec = sample_task(seed, std::nullopt);
    auto demo = render_demo(spec, emb, static_cast<int>(seed % 3), seed);
    for (int f = 0; f < demo.n_frames; f += 3) {
      auto obj = object_channel(demo, f);
      auto m = moments_of(obj, demo.height, demo.width);
      const double ox = demo.object_traj[static_cast<size_t>(f) * kObjectDim];
      const double oy =
          demo.object_traj[static_cast<size_t>(f) * kObjectDim + 1];
      const double oa =
          demo.object_traj[static_cast<size_t>(f) * kObjectDim + 2];
      CHECK(std::abs(m.cx - ox) < 0.5);
      CHECK(std::abs(m.cy - oy) < 0.5);
      CHECK(angle_diff_mod_pi(m.angle, oa) < 2.0 * kPi / 180.0);
    }
  }
}

TEST_CASE("motion annotations match the rendered end-effector") {
  // oracle on a padded canvas so clipping at the frame border cannot bias
  // the centroid
  const int pad = 40, canvas = 32 + 2 * pad;
  RenderConfig cfg;
  for (int e = 0; e < kNumEmbodiments; ++e) {
    EmbodimentSpec emb{static_cast<Embodiment>(e), 8.0, 0};
    auto canonical = render_ee_alpha(emb, 0.0, 0.0, 0.0, canvas, canvas, pad,
                                     pad, cfg);
    auto cm = moments_of(canonical, canvas, canvas);
    const double off_x = cm.cx - pad, off_y = cm.cy - pad;

    auto spec = sample_task(40 + static_cast<uint64_t>(e), std::nullopt);
    auto demo = render_demo(spec, emb, 0, 9);
    for (int f = 0; f < demo.n_frames; f += 4) {
      const double mx = demo.motion[static_cast<size_t>(f) * kMotionDim + 0];
      const double my = demo.motion[static_cast<size_t>(f) * kMotionDim + 1];
      const double ma = demo.motion[static_cast<size_t>(f) * kMotionDim + 2];
      auto alpha =
          render_ee_alpha(emb, mx, my, ma, canvas, canvas, pad, pad, cfg);
      auto am = moments_of(alpha, canvas, canvas);
      const double ex =
          mx + pad + off_x * std::cos(ma) - off_y * std::sin(ma);
      const double ey =
          my + pad + off_x * std::sin(ma) + off_y * std::cos(ma);
      CHECK(std::abs(am.cx - ex) < 0.5);
      CHECK(std::abs(am.cy - ey) < 0.5);
      CHECK(angle_diff_mod_pi(am.angle, ma) < 2.0 * kPi / 180.0);
    }
  }
}

TEST_CASE("embodiment cards are deterministic and distinct") {
  EmbodimentSpec a{Embodiment::kParallelJaw, 8.0, 1};
  auto c1 = embodiment_card(a);
  auto c2 = embodiment_card(a);
  CHECK(c1 == c2);

  int blank = 0;
  for (double v : c1)
    if (v == 0.0) ++blank;
  CHECK(blank > 0);  // blank background, no object pixels

  for (int e1 = 0; e1 < kNumEmbodiments; ++e1)
    for (int e2 = e1 + 1; e2 < kNumEmbodiments; ++e2) {
      EmbodimentSpec s1{static_cast<Embodiment>(e1), 8.0, 0};
      EmbodimentSpec s2{static_cast<Embodiment>(e2), 8.0, 0};
      auto i1 = embodiment_card(s1);
      auto i2 = embodiment_card(s2);
      int diff = 0;
      for (size_t i = 0; i < i1.size(); ++i)
        if (std::abs(i1[i] - i2[i]) > 0.02) ++diff;
      CHECK(diff >= static_cast<int>(i1.size() / 20));
    }

  auto n1 = embodiment_card_noisy(a, 1);
  auto n2 = embodiment_card_noisy(a, 1);
  auto n3 = embodiment_card_noisy(a, 2);
  CHECK(n1 == n2);
  CHECK(n1 != n3);
}

TEST_CASE("embodiment pixel differences stay inside the dilated ee mask") {
  auto spec = sample_task(55, TaskClass::kPour);
  EmbodimentSpec a{Embodiment::kFiveFinger, 8.0, 1};
  EmbodimentSpec b{Embodiment::kThreeFinger, 8.0, 1};
  auto da = render_demo(spec, a, 2, 5);
  auto db = render_demo(spec, b, 2, 5);
  auto alpha_a = demo_ee_alpha(spec, a);
  auto alpha_b = demo_ee_alpha(spec, b);
  const int hw = da.height * da.width;
  for (int f = 0; f < da.n_frames; ++f) {
    geom::MaskFrame mask{da.height, da.width,
                         std::vector<uint8_t>(static_cast<size_t>(hw), 0)};
    for (int i = 0; i < hw; ++i)
      if (alpha_a[static_cast<size_t>(f) * hw + i] > 0 ||
          alpha_b[static_cast<size_t>(f) * hw + i] > 0)
        mask.mask[static_cast<size_t>(i)] = 1;
    auto dil = geom::dilate_mask(mask, 1);
    for (int i = 0; i < hw; ++i) {
      for (int ch = 0; ch < da.channels; ++ch) {
        const size_t idx = (static_cast<size_t>(f) * hw + i) * da.channels + ch;
        if (!dil.mask[static_cast<size_t>(i)])
          CHECK(da.frames[idx] == db.frames[idx]);
      }
    }
  }
}

TEST_CASE("lifted annotations follow the 3d/6d layout") {
  EmbodimentSpec emb;
  auto demo = render_demo(sample_task(8, TaskClass::kGrasp), emb, 0, 1);
  auto lifted = lift_motion(demo.motion, demo.n_frames);
  REQUIRE(lifted.size() ==
          static_cast<size_t>(demo.n_frames) * kLiftedMotionDim);
  for (int f = 0; f < demo.n_frames; ++f) {
    const double* m = demo.motion.data() + static_cast<size_t>(f) * kMotionDim;
    const double* l =
        lifted.data() + static_cast<size_t>(f) * kLiftedMotionDim;
    CHECK(l[0] == doctest::Approx(m[0] / 32.0));
    CHECK(l[2] == 0.0);
    CHECK(l[9] == m[3]);  // grip passes through
    // 6d block decodes back to the planar angle
    auto q = geom::rot6d_to_pose_rotation({l[3], l[4], l[5], l[6], l[7], l[8]});
    auto expect = geom::Quat::from_axis_angle({0, 0, 1}, m[2]);
    CHECK(q.angle_to(expect) < 1e-9);
  }
  auto traj = lift_trajectory(demo.object_traj, demo.n_frames);
  REQUIRE(traj.size() == static_cast<size_t>(demo.n_frames) * kLiftedObjectDim);
}

TEST_CASE("dataset grid arithmetic and split structure") {
  DatasetConfig cfg;
  cfg.seeds_per_pair = 10;
  cfg.master_seed = 3;
  auto ds = build_dataset(cfg);
  CHECK(ds.samples.size() == 120);
  CHECK(ds.train_idx.size() + ds.val_idx.size() + ds.test_idx.size() == 120);
  // disjoint splits
  std::vector<int> seen(120, 0);
  for (auto* split : {&ds.train_idx, &ds.val_idx, &ds.test_idx})
    for (int i : *split) seen[static_cast<size_t>(i)] += 1;
  for (int s : seen) CHECK(s == 1);
  // every (task, embodiment) cell appears in train
  int cells[3][4] = {};
  for (int i : ds.train_idx)
    cells[ds.meta[static_cast<size_t>(i)].task]
         [ds.meta[static_cast<size_t>(i)].embodiment]++;
  for (auto& row : cells)
    for (int v : row) CHECK(v > 0);

  DatasetConfig bad = cfg;
  bad.seeds_per_pair = 0;
  CHECK_THROWS_AS(build_dataset(bad), std::invalid_argument);
}

TEST_CASE("task and embodiment labels are independent (chi-squared)") {
  DatasetConfig cfg;
  cfg.seeds_per_pair = 8;
  auto ds = build_dataset(cfg);
  std::vector<int> all(ds.samples.size());
  std::iota(all.begin(), all.end(), 0);
  // critical value for df = (3-1)(4-1) = 6 at alpha = 0.05
  CHECK(label_chi2_statistic(ds, all) < 12.592);
  CHECK(label_chi2_statistic(ds, ds.train_idx) < 12.592);
}

TEST_CASE("demo records round trip bit-exactly") {
  EmbodimentSpec emb{Embodiment::kSuction, 8.0, 2};
  auto demo = render_demo(sample_task(123, std::nullopt), emb, 1, 321);
  std::stringstream buf;
  write_demo_record(demo, buf);
  auto back = read_demo_record(buf);
  CHECK(back == demo);
}

TEST_CASE("dataset rebuild is bit-identical") {
  namespace fs = std::filesystem;
  DatasetConfig cfg;
  cfg.seeds_per_pair = 2;
  cfg.master_seed = 11;
  auto d1 = build_dataset(cfg);
  auto d2 = build_dataset(cfg);
  const auto dir1 = fs::temp_directory_path() / "xemb_ds_a";
  const auto dir2 = fs::temp_directory_path() / "xemb_ds_b";
  fs::remove_all(dir1);
  fs::remove_all(dir2);
  write_dataset(d1, dir1.string());
  write_dataset(d2, dir2.string());
  for (const auto& entry : fs::directory_iterator(dir1)) {
    std::ifstream f1(entry.path(), std::ios::binary);
    std::ifstream f2(dir2 / entry.path().filename(), std::ios::binary);
    REQUIRE(f2.good());
    std::stringstream s1, s2;
    s1 << f1.rdbuf();
    s2 << f2.rdbuf();
    CHECK(s1.str() == s2.str());
  }
  auto loaded = load_dataset(dir1.string());
  CHECK(loaded.samples.size() == d1.samples.size());
  for (size_t i = 0; i < loaded.samples.size(); ++i)
    CHECK(loaded.samples[i] == d1.samples[i]);
  CHECK(loaded.train_idx == d1.train_idx);
  fs::remove_all(dir1);
  fs::remove_all(dir2);
}
