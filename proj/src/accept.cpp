#include "xemb/accept.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "xemb/encoders.hpp"
#include "xemb/generator.hpp"
#include "xemb/geometry.hpp"
#include "xemb/gradcheck.hpp"
#include "xemb/objectives.hpp"
#include "xemb/train.hpp"

namespace xemb::accept {

namespace {

constexpr double kDeg = 3.14159265358979323846 / 180.0;

struct Timer {
  std::chrono::steady_clock::time_point start =
      std::chrono::steady_clock::now();
  double elapsed() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start)
        .count();
  }
};

std::string fmt(const char* pattern, double a, double b = 0, double c = 0) {
  char buf[256];
  snprintf(buf, sizeof(buf), pattern, a, b, c);
  return buf;
}

enc::EncoderConfig small_encoder_config() {
  enc::EncoderConfig cfg;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.d_z = 8;
  cfg.goal_vocab = 3;
  cfg.frames = 3;
  cfg.image_h = 8;
  cfg.image_w = 8;
  cfg.patch = 4;
  return cfg;
}

gen::GeneratorConfig small_generator_config() {
  gen::GeneratorConfig cfg;
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

}  // namespace

CriterionResult gradient_correctness() {
  Timer timer;
  CriterionResult r;
  r.id = 1;
  r.name = "gradient correctness (kernels + encoders + adapter)";

  auto sweep = kernel_gradcheck_sweep(120, 42);
  const double kernel_err = max_rel_err(sweep);

  auto cfg = small_encoder_config();
  Rng rng(6);
  auto task_params = enc::TaskEncoderParams::init(cfg, rng);
  auto emb_params = enc::EmbodimentEncoderParams::init(cfg, rng);
  Rng drng(7);
  std::vector<double> motion(static_cast<size_t>(cfg.frames) * cfg.motion_dim);
  std::vector<double> traj(static_cast<size_t>(cfg.frames) * cfg.traj_dim);
  std::vector<double> card(static_cast<size_t>(cfg.image_h) * cfg.image_w);
  for (auto& v : motion) v = drng.gaussian() * 0.5;
  for (auto& v : traj) v = drng.gaussian() * 0.5;
  for (auto& v : card) v = std::abs(drng.gaussian() * 0.3);

  const double task_err = finite_difference_check(
      [&](const std::vector<Tensor>&) {
        auto e = enc::encode_task(1, motion, traj, cfg.frames, task_params, cfg);
        return sum(mul(e.z, e.z));
      },
      task_params.tensors(), 1e-5);
  const double emb_err = finite_difference_check(
      [&](const std::vector<Tensor>&) {
        auto e = enc::encode_embodiment(card, emb_params, cfg);
        return sum(mul(e.z, e.z));
      },
      emb_params.tensors(), 1e-5);

  auto gcfg = small_generator_config();
  Rng grng(4);
  auto backbone = gen::BackboneParams::init(gcfg, grng);
  backbone.freeze();
  auto adapter = gen::AdapterParams::init(backbone, gcfg, grng);
  Rng jr(6);
  for (auto& w : adapter.inject_w)
    for (auto& v : w.mutable_data()) v = jr.gaussian() * 0.05;
  Rng xrng(5);
  Tensor x_t = Tensor::randn({2, gcfg.video_values()}, xrng);
  Tensor zt = Tensor::randn({2, gcfg.d_z}, xrng);
  Tensor ze = Tensor::randn({2, gcfg.d_z}, xrng);
  Tensor bg = Tensor::uniform({2, gcfg.height * gcfg.width}, xrng, 0.0, 1.0);
  std::vector<double> times{0.3, 0.8};
  const double adapter_err = finite_difference_check(
      [&](const std::vector<Tensor>&) {
        Tensor u = gen::predict_velocity(x_t, times, zt, ze, bg, backbone,
                                         adapter, gcfg);
        return mean(mul(u, u));
      },
      adapter.tensors(), 1e-5);

  const double worst =
      std::max(std::max(kernel_err, task_err), std::max(emb_err, adapter_err));
  r.pass = worst < 1e-4;
  r.detail = fmt("max rel err: kernels %.2e, task enc %.2e", kernel_err,
                 task_err) +
             fmt(", emb enc %.2e, adapter %.2e (tolerance 1e-4)", emb_err,
                 adapter_err);
  r.seconds = timer.elapsed();
  return r;
}

CriterionResult flow_exactness() {
  Timer timer;
  CriterionResult r;
  r.id = 2;
  r.name = "flow-matching exactness";
  bool ok = true;
  Rng rng(11);
  double worst_fm = 0;
  for (int trial = 0; trial < 20; ++trial) {
    Rng tr = rng.fork(static_cast<uint64_t>(trial));
    const int64_t n = tr.uniform_int(4, 48);
    Tensor x0 = Tensor::randn({n}, tr);
    Tensor x1 = Tensor::randn({n}, tr);
    ok = ok && obj::flow_interpolate(x0, x1, 0.0).x_t.data() == x0.data();
    ok = ok && obj::flow_interpolate(x0, x1, 1.0).x_t.data() == x1.data();
    const double t = tr.uniform();
    auto s = obj::flow_interpolate(x0, x1, t);
    for (int64_t i = 0; i < n; ++i) {
      const size_t iu = static_cast<size_t>(i);
      ok = ok && s.x_t.data()[iu] == t * x1.data()[iu] + (1 - t) * x0.data()[iu];
      ok = ok && s.v_t.data()[iu] == x1.data()[iu] - x0.data()[iu];
    }
    // loss against an independent elementwise accumulation
    Tensor u = Tensor::randn({n}, tr);
    double naive = 0;
    for (int64_t i = 0; i < n; ++i) {
      const double d = u.data()[static_cast<size_t>(i)] -
                       s.v_t.data()[static_cast<size_t>(i)];
      naive += d * d;
    }
    naive /= static_cast<double>(n);
    worst_fm = std::max(worst_fm,
                        std::abs(obj::loss_fm(u, s.v_t).item() - naive));
  }
  r.pass = ok && worst_fm < 1e-12;
  r.detail = fmt("endpoint/velocity identities bitwise over 20 seeds; "
                 "loss_fm vs naive oracle max |diff| %.2e (tolerance 1e-12)",
                 worst_fm);
  r.seconds = timer.elapsed();
  return r;
}

CriterionResult club_fidelity() {
  Timer timer;
  CriterionResult r;
  r.id = 3;
  r.name = "CLUB fidelity on bivariate gaussians";
  const int n = 10000;
  bool all_match_spec = true;
  std::string detail;
  for (double rho : {0.0, 0.5, 0.9}) {
    Rng rng(42);
    std::vector<double> x(n), y(n);
    const double s = std::sqrt(1.0 - rho * rho);
    for (int i = 0; i < n; ++i) {
      const double a = rng.gaussian();
      x[static_cast<size_t>(i)] = a;
      y[static_cast<size_t>(i)] = rho * a + s * rng.gaussian();
    }
    const double est = obj::club_mi_estimate(x, y, n, 1, 1, 500, 1e-2, 5);
    const double mi = -0.5 * std::log(1.0 - rho * rho);
    bool match = std::abs(est - mi) < 0.1;
    if (rho == 0.0) match = match && std::abs(est) < 0.05;
    all_match_spec = all_match_spec && match;
    detail += fmt("rho %.1f: estimate %.3f vs stated MI %.3f", rho, est, mi) +
              (match ? " ok; " : " MISMATCH; ");
  }
  r.pass = all_match_spec;
  if (!all_match_spec) {
    r.documented_defect = true;
    detail +=
        "expected: the estimator the paper defines (positive-pair minus "
        "shuffled-pair log-likelihood) equals rho^2/(1-rho^2) at the optimal "
        "q, which matches the mutual information only at rho = 0; see the "
        "decisions ledger";
  }
  r.detail = detail;
  r.seconds = timer.elapsed();
  return r;
}

CriterionResult infonce_closed_forms() {
  Timer timer;
  CriterionResult r;
  r.id = 4;
  r.name = "InfoNCE closed forms";
  auto anchor = Tensor::from_data({8}, {1, 0, 0, 0, 0, 0, 0, 0});
  auto pos = Tensor::from_data({8}, {0, 1, 0, 0, 0, 0, 0, 0});
  std::vector<Tensor> negs;
  for (int k = 0; k < 7; ++k) {
    std::vector<double> v(8, 0.0);
    v[static_cast<size_t>(1 + (k + 1) % 7)] = 1.0;
    negs.push_back(Tensor::from_data({8}, v));
  }
  const double uniform = obj::info_nce(anchor, pos, negs).item();
  const bool uniform_ok = uniform == std::log(8.0);

  // monotone decrease as sim(a, p) rises with negatives fixed
  Rng rng(8);
  auto a = Tensor::randn({6}, rng);
  auto p = Tensor::randn({6}, rng);
  std::vector<Tensor> two{Tensor::randn({6}, rng), Tensor::randn({6}, rng)};
  bool monotone = true, positive = true;
  double prev = 1e18;
  for (double mix : {0.0, 0.25, 0.5, 0.75, 0.95}) {
    Tensor pm = add(scale(p, 1.0 - mix), scale(a, mix));
    const double v = obj::info_nce(a, pm, two).item();
    monotone = monotone && v < prev;
    positive = positive && v > 0;
    prev = v;
  }
  std::vector<Tensor> scaled;
  for (const auto& nt : two) scaled.push_back(scale(nt, 10.0));
  const double base = obj::info_nce(a, p, two).item();
  const double big = obj::info_nce(scale(a, 10.0), scale(p, 10.0), scaled).item();
  const bool scale_ok = std::abs(base - big) < 1e-12;

  r.pass = uniform_ok && monotone && positive && scale_ok;
  r.detail = fmt("uniform K=7: %.10f vs ln 8 = %.10f exact; ", uniform,
                 std::log(8.0)) +
             std::string(monotone ? "monotone ok; " : "monotone FAILED; ") +
             std::string(scale_ok ? "scale invariant" : "scale FAILED");
  r.seconds = timer.elapsed();
  return r;
}

CriterionResult adapter_identity() {
  Timer timer;
  CriterionResult r;
  r.id = 5;
  r.name = "zero-init adapter identity + frozen backbone";

  // bitwise identity at initialization, small and default-size configs
  bool bitwise = true;
  for (int variant = 0; variant < 2; ++variant) {
    gen::GeneratorConfig cfg =
        variant == 0 ? small_generator_config() : gen::GeneratorConfig{};
    Rng rng(21 + static_cast<uint64_t>(variant));
    auto bb = gen::BackboneParams::init(cfg, rng);
    bb.freeze();
    auto ad = gen::AdapterParams::init(bb, cfg, rng);
    const int batch = variant == 0 ? 3 : 1;
    Rng dr(5);
    Tensor x_t = Tensor::randn({batch, cfg.video_values()}, dr);
    Tensor zt = Tensor::randn({batch, cfg.d_z}, dr);
    Tensor ze = Tensor::randn({batch, cfg.d_z}, dr);
    Tensor bg = Tensor::uniform({batch, cfg.height * cfg.width}, dr, 0, 1);
    std::vector<double> times(static_cast<size_t>(batch), 0.4);
    Tensor cond = gen::predict_velocity(x_t, times, zt, ze, bg, bb, ad, cfg);
    Tensor uncond = gen::backbone_forward(x_t, times, bb, cfg);
    bitwise = bitwise &&
              std::memcmp(cond.data().data(), uncond.data().data(),
                          cond.data().size() * sizeof(double)) == 0;
  }

  // 100 training steps: frozen backbone gradients stay identically zero
  // (the trainer asserts after every step and would throw)
  synth::DatasetConfig dcfg;
  dcfg.seeds_per_pair = 3;
  dcfg.master_seed = 31;
  dcfg.render.frames = 4;
  dcfg.render.height = 16;
  dcfg.render.width = 16;
  auto ds = synth::build_dataset(dcfg);
  gen::GeneratorConfig gcfg;
  gcfg.frames = 4;
  gcfg.height = 16;
  gcfg.width = 16;
  gcfg.patch = 8;
  gcfg.d_model = 32;
  gcfg.heads = 4;
  gcfg.layers = 2;
  gcfg.adapter_layers = 2;
  gcfg.mlp_hidden = 64;
  gcfg.time_dim = 16;
  gcfg.d_z = 32;
  gen::PretrainConfig pcfg;
  pcfg.max_steps = 40;
  pcfg.batch = 8;
  pcfg.lr = 5e-3;
  pcfg.eval_every = 40;
  pcfg.seed = 7;
  auto pre = gen::pretrain_backbone(ds, gcfg, pcfg);
  harness::TrainSettings st;
  st.lr_main = 2e-3;
  st.lr_variational = 1e-3;
  st.seed = 5;
  st.d_z = 32;
  harness::Trainer trainer(ds, pre.backbone, gcfg, st);
  bool frozen_ok = true;
  std::string frozen_err;
  try {
    for (int s = 0; s < 100; ++s) {
      trainer.step();
      trainer.backbone().assert_no_grad();
    }
  } catch (const std::exception& e) {
    frozen_ok = false;
    frozen_err = e.what();
  }

  r.pass = bitwise && frozen_ok;
  r.detail = std::string(bitwise ? "bitwise identity at init ok"
                                 : "bitwise identity FAILED") +
             (frozen_ok ? "; 100-step run kept backbone gradients at zero"
                        : "; frozen check FAILED: " + frozen_err);
  r.seconds = timer.elapsed();
  return r;
}

CriterionResult icp_recovery() {
  Timer timer;
  CriterionResult r;
  r.id = 6;
  r.name = "trimmed ICP recovery";
  using geom::PointCloud;
  using geom::Pose;
  using geom::Quat;
  using geom::Vec3;

  Rng master(99);
  const double extent = 2.0;  // clouds fill [-1, 1]^3
  int clean_ok = 0, outlier_ok = 0;
  double worst_rot = 0, worst_trans = 0;
  const int trials = 100;
  for (int trial = 0; trial < trials; ++trial) {
    Rng rng = master.fork(static_cast<uint64_t>(trial));
    PointCloud src;
    for (int i = 0; i < 500; ++i)
      src.points.push_back(
          {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    const Vec3 axis{rng.gaussian(), rng.gaussian(), rng.gaussian()};
    Pose truth{{rng.uniform(-0.1, 0.1) * extent, rng.uniform(-0.1, 0.1) * extent,
                rng.uniform(-0.1, 0.1) * extent},
               Quat::from_axis_angle(axis, rng.uniform(0.0, 15.0 * kDeg))};
    PointCloud dst;
    for (const auto& p : src.points) dst.points.push_back(truth.apply(p));

    auto clean = geom::trimmed_icp(src, dst, {0.0, 50, 1e-12});
    const double rot_err = clean.pose.rotation.angle_to(truth.rotation) / kDeg;
    const double trans_err =
        (clean.pose.translation - truth.translation).norm();
    worst_rot = std::max(worst_rot, rot_err);
    worst_trans = std::max(worst_trans, trans_err);
    if (rot_err < 0.1 && trans_err < 1e-3 * extent) ++clean_ok;

    PointCloud noisy = dst;
    const size_t n_out = noisy.points.size() / 5;
    for (size_t i = 0; i < n_out; ++i) {
      const size_t j = static_cast<size_t>(rng.next_below(noisy.points.size()));
      noisy.points[j] = {rng.uniform(-2, 2), rng.uniform(-2, 2),
                         rng.uniform(-2, 2)};
    }
    auto trimmed = geom::trimmed_icp(src, noisy, {0.3, 50, 1e-10});
    if (trimmed.pose.rotation.angle_to(truth.rotation) / kDeg < 1.0)
      ++outlier_ok;
  }
  r.pass = clean_ok == trials && outlier_ok >= 95;
  r.detail = fmt("clean: %.0f/100 within 0.1 deg and 1e-3*extent "
                 "(worst rot %.3f deg",
                 static_cast<double>(clean_ok), worst_rot) +
             fmt(", worst trans %.2e); with 20%% outliers, trim 0.3: ",
                 worst_trans) +
             fmt("%.0f/100 within 1 deg (need >= 95)",
                 static_cast<double>(outlier_ok));
  r.seconds = timer.elapsed();
  return r;
}

std::vector<CriterionResult> fast_criteria() {
  return {gradient_correctness(), flow_exactness(),  club_fidelity(),
          infonce_closed_forms(), adapter_identity(), icp_recovery()};
}

std::string summary_line(const CriterionResult& r) {
  std::string line = "criterion " + std::to_string(r.id) + " [" +
                     (r.pass ? "PASS" : "FAIL") + "] " + r.name;
  if (!r.pass && r.documented_defect)
    line += " (documented spec defect, see decisions ledger)";
  line += ": " + r.detail + fmt(" (%.1fs)", r.seconds);
  return line;
}

bool suite_acceptable(const std::vector<CriterionResult>& rs) {
  for (const auto& r : rs)
    if (!r.pass && !r.documented_defect) return false;
  return true;
}

}  // namespace xemb::accept
