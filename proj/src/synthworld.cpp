#include "xemb/synthworld.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "xemb/geometry.hpp"

namespace xemb::synth {

namespace {

constexpr double kPi = 3.14159265358979323846;

double smoothstep(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return u * u * (3.0 - 2.0 * u);
}

// Phase boundaries of the kinematic plan, as fractions of the demo.
constexpr double kApproachEnd = 0.35;
constexpr double kTransportEnd = 0.65;
constexpr double kReleaseAt = 0.9;
constexpr double kGraspLiftPx = 3.0;

struct Seg {
  double ax, ay, bx, by, halfwidth;
};

bool in_rect(double x, double y, double x0, double x1, double y0, double y1) {
  return x >= x0 && x <= x1 && y >= y0 && y <= y1;
}

bool in_disc(double x, double y, double cx, double cy, double r) {
  const double dx = x - cx, dy = y - cy;
  return dx * dx + dy * dy <= r * r;
}

bool in_seg(double x, double y, const Seg& s) {
  const double vx = s.bx - s.ax, vy = s.by - s.ay;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((x - s.ax) * vx + (y - s.ay) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = x - (s.ax + t * vx), dy = y - (s.ay + t * vy);
  return dx * dx + dy * dy <= s.halfwidth * s.halfwidth;
}

// End-effector silhouettes in canonical units: the tool center point sits at
// the origin and the body extends toward -x.
bool ee_inside(Embodiment e, double x, double y) {
  switch (e) {
    case Embodiment::kFiveFinger: {
      if (in_disc(x, y, -0.85, 0.0, 0.38)) return true;
      for (double deg : {-40.0, -20.0, 0.0, 20.0, 40.0}) {
        const double a = deg * kPi / 180.0;
        Seg f{-0.55, 0.0, -0.55 + 0.55 * std::cos(a), 0.55 * std::sin(a),
              0.055};
        if (in_seg(x, y, f)) return true;
      }
      return false;
    }
    case Embodiment::kParallelJaw:
      return in_rect(x, y, -1.05, -0.72, -0.33, 0.33) ||
             in_rect(x, y, -0.72, 0.05, 0.21, 0.33) ||
             in_rect(x, y, -0.72, 0.05, -0.33, -0.21);
    case Embodiment::kSuction:
      return in_rect(x, y, -1.0, -0.45, -0.08, 0.08) ||
             in_disc(x, y, -0.18, 0.0, 0.28);
    case Embodiment::kThreeFinger:
      return in_rect(x, y, -1.05, -0.72, -0.36, 0.36) ||
             in_rect(x, y, -0.72, 0.05, -0.06, 0.06) ||
             in_rect(x, y, -0.72, 0.05, 0.24, 0.36) ||
             in_rect(x, y, -0.72, 0.05, -0.36, -0.24);
  }
  return false;
}

bool object_inside(int shape_id, double x, double y) {
  switch (shape_id) {
    case 0:  // bar
      return in_rect(x, y, -0.6, 0.6, -0.2, 0.2);
    case 1: {  // ellipse
      const double u = x / 0.55, v = y / 0.3;
      return u * u + v * v <= 1.0;
    }
    default: {  // isoceles triangle, centroid at origin
      // vertices (0.8, 0), (-0.4, 0.35), (-0.4, -0.35)
      if (x < -0.4) return false;
      const double slope = 0.35 / (0.8 + 0.4);
      const double half = (0.8 - x) * slope;
      return std::abs(y) <= half;
    }
  }
}

constexpr double kEeBoundRadius = 1.15;
constexpr double kObjectBoundRadius = 0.85;

template <typename InsideFn>
void stamp_coverage(std::vector<double>& alpha, int h, int w, double cx,
                    double cy, double angle, double scale, double bound_radius,
                    int supersample, InsideFn&& inside) {
  const double rb = bound_radius * scale + 1.0;
  const int r0 = std::max(0, static_cast<int>(std::floor(cy - rb)));
  const int r1 = std::min(h - 1, static_cast<int>(std::ceil(cy + rb)));
  const int c0 = std::max(0, static_cast<int>(std::floor(cx - rb)));
  const int c1 = std::min(w - 1, static_cast<int>(std::ceil(cx + rb)));
  const double ca = std::cos(-angle), sa = std::sin(-angle);
  const int ss = supersample;
  const double inv_ss = 1.0 / ss;
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c) {
      int hits = 0;
      for (int i = 0; i < ss; ++i)
        for (int j = 0; j < ss; ++j) {
          const double px = c + (j + 0.5) * inv_ss - 0.5 - cx;
          const double py = r + (i + 0.5) * inv_ss - 0.5 - cy;
          const double u = (px * ca - py * sa) / scale;
          const double v = (px * sa + py * ca) / scale;
          if (inside(u, v)) ++hits;
        }
      if (hits)
        alpha[static_cast<size_t>(r) * w + c] =
            std::max(alpha[static_cast<size_t>(r) * w + c],
                     static_cast<double>(hits) * inv_ss * inv_ss);
    }
}

double background_value(int background_id, int r, int c, int h, int w) {
  switch (background_id % 3) {
    case 0:
      return 0.12;
    case 1:
      return 0.08 + 0.17 * static_cast<double>(c) / std::max(1, w - 1);
    default:
      return ((r / 8 + c / 8) % 2 == 0) ? 0.10 : 0.20;
  }
  (void)h;
}

double tint_intensity(int tint) {
  constexpr double kLevels[3] = {0.90, 0.75, 0.62};
  return kLevels[((tint % 3) + 3) % 3];
}

double object_intensity(int color_id) {
  constexpr double kLevels[3] = {0.55, 0.75, 0.95};
  return kLevels[((color_id % 3) + 3) % 3];
}

// Per-frame plan: TCP pose, object pose, grip.
struct PlanFrame {
  double ee_x, ee_y, ee_angle;
  double obj_x, obj_y, obj_angle;
  double grip;
};

std::vector<PlanFrame> kinematic_plan(const TaskSpec& task, int n_frames) {
  std::vector<PlanFrame> plan(static_cast<size_t>(n_frames));
  const auto& o = task.object;
  const double approach =
      std::atan2(o.start_y - task.spawn_y, o.start_x - task.spawn_x);
  double rx = o.start_x - o.target_x, ry = o.start_y - o.target_y;
  const double rn = std::hypot(rx, ry);
  if (rn > 1e-9) {
    rx /= rn;
    ry /= rn;
  } else {
    rx = 0;
    ry = -1;
  }

  for (int f = 0; f < n_frames; ++f) {
    const double t =
        n_frames > 1 ? static_cast<double>(f) / (n_frames - 1) : 0.0;
    PlanFrame& p = plan[static_cast<size_t>(f)];
    p.ee_angle = approach;
    p.obj_angle = o.start_angle;

    if (t < kApproachEnd) {
      const double u = smoothstep(t / kApproachEnd);
      p.ee_x = task.spawn_x + (o.start_x - task.spawn_x) * u;
      p.ee_y = task.spawn_y + (o.start_y - task.spawn_y) * u;
      p.obj_x = o.start_x;
      p.obj_y = o.start_y;
      p.grip = 0.0;
      continue;
    }

    p.grip = 1.0;
    switch (task.task_class) {
      case TaskClass::kGrasp: {
        const double u = smoothstep((t - kApproachEnd) /
                                    (kTransportEnd - kApproachEnd));
        p.ee_x = o.start_x;
        p.ee_y = o.start_y - kGraspLiftPx * u;
        p.obj_x = p.ee_x;
        p.obj_y = p.ee_y;
        break;
      }
      case TaskClass::kPickPlace: {
        const double u =
            smoothstep((t - kApproachEnd) / (kReleaseAt - kApproachEnd));
        const double hx = o.start_x + (o.target_x - o.start_x) * u;
        const double hy = o.start_y + (o.target_y - o.start_y) * u;
        if (t < kReleaseAt) {
          p.ee_x = hx;
          p.ee_y = hy;
          p.obj_x = hx;
          p.obj_y = hy;
        } else {
          // released: object rests at the target, gripper retreats
          const double v = smoothstep((t - kReleaseAt) / (1.0 - kReleaseAt));
          p.grip = 0.0;
          p.obj_x = o.target_x;
          p.obj_y = o.target_y;
          p.ee_x = o.target_x + rx * 3.0 * v;
          p.ee_y = o.target_y + ry * 3.0 * v;
        }
        break;
      }
      case TaskClass::kPour: {
        const double u =
            smoothstep((t - kApproachEnd) / (kTransportEnd - kApproachEnd));
        p.ee_x = o.start_x + (o.target_x - o.start_x) * u;
        p.ee_y = o.start_y + (o.target_y - o.start_y) * u;
        const double s = smoothstep((t - kTransportEnd) /
                                    (kReleaseAt - kTransportEnd));
        p.obj_angle = o.start_angle + o.spin * s;
        p.ee_angle = approach + o.spin * s;
        p.obj_x = p.ee_x;
        p.obj_y = p.ee_y;
        break;
      }
    }
  }
  return plan;
}

}  // namespace

const char* task_class_name(TaskClass c) {
  switch (c) {
    case TaskClass::kGrasp:
      return "grasp";
    case TaskClass::kPickPlace:
      return "pick_place";
    case TaskClass::kPour:
      return "pour";
  }
  return "?";
}

const char* embodiment_name(Embodiment e) {
  switch (e) {
    case Embodiment::kFiveFinger:
      return "five_finger";
    case Embodiment::kParallelJaw:
      return "parallel_jaw";
    case Embodiment::kSuction:
      return "suction";
    case Embodiment::kThreeFinger:
      return "three_finger";
  }
  return "?";
}

TaskSpec sample_task(uint64_t seed, std::optional<TaskClass> cls,
                     const RenderConfig& cfg) {
  Rng rng(seed ^ 0x5eedf00dULL);
  TaskSpec spec;
  spec.seed = seed;
  spec.task_class = cls.value_or(static_cast<TaskClass>(
      rng.uniform_int(0, kNumTaskClasses - 1)));

  const double margin = 6.0;
  const double w1 = cfg.width - 1.0, h1 = cfg.height - 1.0;
  auto& o = spec.object;
  o.start_x = rng.uniform(margin, w1 - margin);
  o.start_y = rng.uniform(margin + kGraspLiftPx, h1 - margin);
  o.target_x = o.start_x;
  o.target_y = o.start_y;
  if (spec.task_class != TaskClass::kGrasp) {
    for (int attempt = 0; attempt < 64; ++attempt) {
      o.target_x = rng.uniform(margin, w1 - margin);
      o.target_y = rng.uniform(margin, h1 - margin);
      if (std::hypot(o.target_x - o.start_x, o.target_y - o.start_y) >= 8.0)
        break;
    }
  }
  o.start_angle = rng.uniform(0.0, kPi);
  o.spin = spec.task_class == TaskClass::kPour ? rng.uniform(1.6, 2.4) : 0.0;
  o.shape_id = rng.uniform_int(0, 2);
  o.color_id = rng.uniform_int(0, 2);
  spec.goal_token = static_cast<int>(spec.task_class) * cfg.vocab_per_class +
                    rng.uniform_int(0, cfg.vocab_per_class - 1);
  for (int attempt = 0; attempt < 64; ++attempt) {
    spec.spawn_x = rng.uniform(4.0, w1 - 4.0);
    spec.spawn_y = rng.uniform(4.0, h1 - 4.0);
    if (std::hypot(spec.spawn_x - o.start_x, spec.spawn_y - o.start_y) >= 10.0)
      break;
  }
  return spec;
}

std::vector<double> render_ee_alpha(const EmbodimentSpec& emb, double tcp_x,
                                    double tcp_y, double angle, int canvas_h,
                                    int canvas_w, double offset_x,
                                    double offset_y, const RenderConfig& cfg) {
  std::vector<double> alpha(static_cast<size_t>(canvas_h) * canvas_w, 0.0);
  const Embodiment id = emb.embodiment_id;
  stamp_coverage(
      alpha, canvas_h, canvas_w, tcp_x + offset_x, tcp_y + offset_y, angle,
      emb.scale, kEeBoundRadius, cfg.supersample,
      [id](double u, double v) { return ee_inside(id, u, v); });
  return alpha;
}

std::vector<double> demo_ee_alpha(const TaskSpec& task,
                                  const EmbodimentSpec& emb,
                                  const RenderConfig& cfg) {
  const auto plan = kinematic_plan(task, cfg.frames);
  std::vector<double> out(
      static_cast<size_t>(cfg.frames) * cfg.height * cfg.width, 0.0);
  for (int f = 0; f < cfg.frames; ++f) {
    const auto& p = plan[static_cast<size_t>(f)];
    auto alpha = render_ee_alpha(emb, p.ee_x, p.ee_y, p.ee_angle, cfg.height,
                                 cfg.width, 0, 0, cfg);
    std::copy(alpha.begin(), alpha.end(),
              out.begin() + static_cast<size_t>(f) * cfg.height * cfg.width);
  }
  return out;
}

DemoSample render_demo(const TaskSpec& task, const EmbodimentSpec& emb,
                       int background_id, uint64_t render_seed,
                       const RenderConfig& cfg) {
  DemoSample s;
  s.n_frames = cfg.frames;
  s.height = cfg.height;
  s.width = cfg.width;
  s.channels = cfg.channels;
  s.goal_token = task.goal_token;
  s.background_id = background_id % cfg.backgrounds;
  s.task_label = static_cast<int>(task.task_class);
  s.embodiment_label = static_cast<int>(emb.embodiment_id);
  s.spec_seed = task.seed;
  s.render_seed = render_seed;

  Rng rng(render_seed ^ 0xca4dULL);
  const double tint_jitter = (rng.uniform() - 0.5) * 0.08;
  const double ee_tint =
      std::clamp(tint_intensity(emb.tint) + tint_jitter, 0.0, 1.0);
  const double obj_value = object_intensity(task.object.color_id);

  const auto plan = kinematic_plan(task, cfg.frames);
  const int hw = cfg.height * cfg.width;
  s.frames.assign(static_cast<size_t>(cfg.frames) * hw * cfg.channels, 0.0);
  s.motion.resize(static_cast<size_t>(cfg.frames) * kMotionDim);
  s.object_traj.resize(static_cast<size_t>(cfg.frames) * kObjectDim);

  const int shape = task.object.shape_id;
  const double obj_scale = 6.0;
  for (int f = 0; f < cfg.frames; ++f) {
    const auto& p = plan[static_cast<size_t>(f)];
    s.motion[static_cast<size_t>(f) * kMotionDim + 0] = p.ee_x;
    s.motion[static_cast<size_t>(f) * kMotionDim + 1] = p.ee_y;
    s.motion[static_cast<size_t>(f) * kMotionDim + 2] = p.ee_angle;
    s.motion[static_cast<size_t>(f) * kMotionDim + 3] = p.grip;
    s.object_traj[static_cast<size_t>(f) * kObjectDim + 0] = p.obj_x;
    s.object_traj[static_cast<size_t>(f) * kObjectDim + 1] = p.obj_y;
    s.object_traj[static_cast<size_t>(f) * kObjectDim + 2] = p.obj_angle;

    std::vector<double> scene(static_cast<size_t>(hw));
    for (int r = 0; r < cfg.height; ++r)
      for (int c = 0; c < cfg.width; ++c)
        scene[static_cast<size_t>(r) * cfg.width + c] =
            background_value(s.background_id, r, c, cfg.height, cfg.width);

    auto ee = render_ee_alpha(emb, p.ee_x, p.ee_y, p.ee_angle, cfg.height,
                              cfg.width, 0, 0, cfg);
    for (int i = 0; i < hw; ++i) {
      const double a = ee[static_cast<size_t>(i)];
      scene[static_cast<size_t>(i)] =
          scene[static_cast<size_t>(i)] * (1.0 - a) + ee_tint * a;
    }

    std::vector<double> obj(static_cast<size_t>(hw), 0.0);
    stamp_coverage(obj, cfg.height, cfg.width, p.obj_x, p.obj_y, p.obj_angle,
                   obj_scale, kObjectBoundRadius, cfg.supersample,
                   [shape](double u, double v) {
                     return object_inside(shape, u, v);
                   });

    double* frame = s.frames.data() + static_cast<size_t>(f) * hw * cfg.channels;
    for (int i = 0; i < hw; ++i) {
      frame[static_cast<size_t>(i) * cfg.channels + 0] =
          std::clamp(scene[static_cast<size_t>(i)], 0.0, 1.0);
      frame[static_cast<size_t>(i) * cfg.channels + 1] =
          std::clamp(obj[static_cast<size_t>(i)] * obj_value, 0.0, 1.0);
    }
  }

  s.card = embodiment_card_noisy(emb, render_seed, cfg);
  return s;
}

std::vector<double> background_image(int background_id, int height,
                                     int width) {
  std::vector<double> img(static_cast<size_t>(height) * width);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c)
      img[static_cast<size_t>(r) * width + c] =
          background_value(background_id, r, c, height, width);
  return img;
}

std::vector<double> embodiment_card(const EmbodimentSpec& emb,
                                    const RenderConfig& cfg) {
  std::vector<double> card(static_cast<size_t>(cfg.height) * cfg.width, 0.0);
  EmbodimentSpec big = emb;
  big.scale = cfg.card_scale;
  auto alpha = render_ee_alpha(big, cfg.width * 0.62, cfg.height * 0.5, 0.0,
                               cfg.height, cfg.width, 0, 0, cfg);
  const double tint = tint_intensity(emb.tint);
  for (size_t i = 0; i < card.size(); ++i) card[i] = tint * alpha[i];
  return card;
}

std::vector<double> embodiment_card_noisy(const EmbodimentSpec& emb,
                                          uint64_t noise_seed,
                                          const RenderConfig& cfg) {
  auto card = embodiment_card(emb, cfg);
  Rng rng(noise_seed ^ 0x7157ULL);
  const double gain = 1.0 + (rng.uniform() - 0.5) * 0.16;
  for (auto& v : card) {
    if (v > 0.0)
      v = std::clamp(v * gain + rng.gaussian() * 0.01, 0.0, 1.0);
  }
  return card;
}

std::vector<double> lift_motion(const std::vector<double>& motion, int frames,
                                const RenderConfig& cfg) {
  if (motion.size() != static_cast<size_t>(frames) * kMotionDim)
    throw std::invalid_argument("lift_motion: bad layout");
  std::vector<double> out(static_cast<size_t>(frames) * kLiftedMotionDim);
  for (int f = 0; f < frames; ++f) {
    const double* m = motion.data() + static_cast<size_t>(f) * kMotionDim;
    double* o = out.data() + static_cast<size_t>(f) * kLiftedMotionDim;
    o[0] = m[0] / cfg.width;
    o[1] = m[1] / cfg.height;
    o[2] = 0.0;
    const auto r6 = geom::rot6d_from_rotation(
        geom::Quat::from_axis_angle({0, 0, 1}, m[2]));
    std::copy(r6.begin(), r6.end(), o + 3);
    o[9] = m[3];
  }
  return out;
}

std::vector<double> lift_trajectory(const std::vector<double>& traj,
                                    int frames, const RenderConfig& cfg) {
  if (traj.size() != static_cast<size_t>(frames) * kObjectDim)
    throw std::invalid_argument("lift_trajectory: bad layout");
  std::vector<double> out(static_cast<size_t>(frames) * kLiftedObjectDim);
  for (int f = 0; f < frames; ++f) {
    const double* t = traj.data() + static_cast<size_t>(f) * kObjectDim;
    double* o = out.data() + static_cast<size_t>(f) * kLiftedObjectDim;
    o[0] = t[0] / cfg.width;
    o[1] = t[1] / cfg.height;
    o[2] = 0.0;
    const auto r6 = geom::rot6d_from_rotation(
        geom::Quat::from_axis_angle({0, 0, 1}, t[2]));
    std::copy(r6.begin(), r6.end(), o + 3);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset

const std::vector<int>& Dataset::split_indices(Split s) const {
  switch (s) {
    case Split::kTrain:
      return train_idx;
    case Split::kVal:
      return val_idx;
    default:
      return test_idx;
  }
}

Dataset build_dataset(const DatasetConfig& cfg) {
  if (cfg.seeds_per_pair <= 0)
    throw std::invalid_argument("build_dataset: seeds_per_pair must be >= 1");
  if (cfg.train_frac <= 0 || cfg.val_frac < 0 ||
      cfg.train_frac + cfg.val_frac >= 1.0)
    throw std::invalid_argument("build_dataset: bad split fractions");

  Dataset ds;
  ds.config = cfg;
  Rng master(cfg.master_seed);

  // split assignment per seed index, shared across all (task, emb) cells so
  // cross-embodiment pairs stay in the same split
  const int s_total = cfg.seeds_per_pair;
  std::vector<int> seed_order(static_cast<size_t>(s_total));
  std::iota(seed_order.begin(), seed_order.end(), 0);
  Rng shuffle_rng = master.fork(0xA);
  for (int i = s_total - 1; i > 0; --i) {
    const int j =
        static_cast<int>(shuffle_rng.next_below(static_cast<uint64_t>(i + 1)));
    std::swap(seed_order[static_cast<size_t>(i)],
              seed_order[static_cast<size_t>(j)]);
  }
  const int n_train = std::max(1, static_cast<int>(s_total * cfg.train_frac));
  const int n_val = std::max(
      s_total > 2 ? 1 : 0, static_cast<int>(s_total * cfg.val_frac));
  std::vector<Split> seed_split(static_cast<size_t>(s_total), Split::kTest);
  for (int i = 0; i < s_total; ++i) {
    const int rank = seed_order[static_cast<size_t>(i)];
    seed_split[static_cast<size_t>(i)] =
        rank < n_train ? Split::kTrain
                       : (rank < n_train + n_val ? Split::kVal : Split::kTest);
  }

  for (int t = 0; t < kNumTaskClasses; ++t)
    for (int e = 0; e < kNumEmbodiments; ++e)
      for (int si = 0; si < s_total; ++si) {
        // spec seed depends on (task class, seed index) only: the same task
        // is rendered under every embodiment
        const uint64_t spec_seed =
            cfg.master_seed * 1000003ULL + static_cast<uint64_t>(t) * 7919ULL +
            static_cast<uint64_t>(si) * 31ULL + 13ULL;
        TaskSpec task = sample_task(spec_seed, static_cast<TaskClass>(t),
                                    cfg.render);
        EmbodimentSpec emb;
        emb.embodiment_id = static_cast<Embodiment>(e);
        emb.scale = cfg.render.ee_scale;
        emb.tint = static_cast<int>((spec_seed + static_cast<uint64_t>(e)) % 3);
        const int bg = static_cast<int>(spec_seed % cfg.render.backgrounds);
        const uint64_t render_seed =
            spec_seed * 2654435761ULL + static_cast<uint64_t>(e) + 1;

        ds.samples.push_back(
            render_demo(task, emb, bg, render_seed, cfg.render));
        SampleMeta meta;
        meta.task = t;
        meta.embodiment = e;
        meta.background = bg;
        meta.spec_seed = spec_seed;
        meta.render_seed = render_seed;
        meta.split = seed_split[static_cast<size_t>(si)];
        ds.meta.push_back(meta);
        const int idx = static_cast<int>(ds.samples.size()) - 1;
        if (meta.split == Split::kTrain)
          ds.train_idx.push_back(idx);
        else if (meta.split == Split::kVal)
          ds.val_idx.push_back(idx);
        else
          ds.test_idx.push_back(idx);
      }
  return ds;
}

namespace {

void write_u32(std::ostream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_u64(std::ostream& out, uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_f64s(std::ostream& out, const std::vector<double>& v) {
  write_u64(out, v.size());
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}
uint32_t read_u32(std::istream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
uint64_t read_u64(std::istream& in) {
  uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
std::vector<double> read_f64s(std::istream& in) {
  const uint64_t n = read_u64(in);
  std::vector<double> v(n);
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  return v;
}

constexpr char kDemoMagic[9] = "XEMBDEM1";

}  // namespace

void write_demo_record(const DemoSample& s, std::ostream& out) {
  out.write(kDemoMagic, 8);
  write_u32(out, static_cast<uint32_t>(s.n_frames));
  write_u32(out, static_cast<uint32_t>(s.height));
  write_u32(out, static_cast<uint32_t>(s.width));
  write_u32(out, static_cast<uint32_t>(s.channels));
  write_u32(out, static_cast<uint32_t>(s.goal_token));
  write_u32(out, static_cast<uint32_t>(s.background_id));
  write_u32(out, static_cast<uint32_t>(s.task_label));
  write_u32(out, static_cast<uint32_t>(s.embodiment_label));
  write_u64(out, s.spec_seed);
  write_u64(out, s.render_seed);
  write_f64s(out, s.frames);
  write_f64s(out, s.motion);
  write_f64s(out, s.object_traj);
  write_f64s(out, s.card);
}

DemoSample read_demo_record(std::istream& in) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kDemoMagic, 8) != 0)
    throw std::runtime_error("read_demo_record: bad magic");
  DemoSample s;
  s.n_frames = static_cast<int>(read_u32(in));
  s.height = static_cast<int>(read_u32(in));
  s.width = static_cast<int>(read_u32(in));
  s.channels = static_cast<int>(read_u32(in));
  s.goal_token = static_cast<int>(read_u32(in));
  s.background_id = static_cast<int>(read_u32(in));
  s.task_label = static_cast<int>(read_u32(in));
  s.embodiment_label = static_cast<int>(read_u32(in));
  s.spec_seed = read_u64(in);
  s.render_seed = read_u64(in);
  s.frames = read_f64s(in);
  s.motion = read_f64s(in);
  s.object_traj = read_f64s(in);
  s.card = read_f64s(in);
  if (!in) throw std::runtime_error("read_demo_record: truncated record");
  return s;
}

void write_dataset(const Dataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ostringstream manifest;
  manifest << "dataset_version = 1\n";
  manifest << "count = " << ds.samples.size() << "\n";
  manifest << "tasks = " << kNumTaskClasses << "\n";
  manifest << "embodiments = " << kNumEmbodiments << "\n";
  manifest << "seeds_per_pair = " << ds.config.seeds_per_pair << "\n";
  manifest << "master_seed = " << ds.config.master_seed << "\n";
  manifest << "frames = " << ds.config.render.frames << "\n";
  manifest << "height = " << ds.config.render.height << "\n";
  manifest << "width = " << ds.config.render.width << "\n";
  manifest << "channels = " << ds.config.render.channels << "\n";
  manifest << "backgrounds = " << ds.config.render.backgrounds << "\n";
  manifest << "vocab_per_class = " << ds.config.render.vocab_per_class << "\n";
  manifest << "train_frac = " << ds.config.train_frac << "\n";
  manifest << "val_frac = " << ds.config.val_frac << "\n";
  for (size_t i = 0; i < ds.meta.size(); ++i) {
    const auto& m = ds.meta[i];
    manifest << "sample_" << i << " = task:" << m.task
             << " emb:" << m.embodiment << " bg:" << m.background
             << " spec_seed:" << m.spec_seed
             << " render_seed:" << m.render_seed
             << " split:" << static_cast<int>(m.split) << "\n";
  }
  std::ofstream mf(fs::path(dir) / "manifest.txt", std::ios::binary);
  mf << manifest.str();
  if (!mf) throw std::runtime_error("write_dataset: cannot write manifest");
  mf.close();

  for (size_t i = 0; i < ds.samples.size(); ++i) {
    char name[32];
    snprintf(name, sizeof(name), "demo_%05zu.bin", i);
    std::ofstream out(fs::path(dir) / name, std::ios::binary);
    write_demo_record(ds.samples[i], out);
    if (!out) throw std::runtime_error("write_dataset: cannot write record");
  }
}

Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream mf(fs::path(dir) / "manifest.txt", std::ios::binary);
  if (!mf) throw std::runtime_error("load_dataset: missing manifest in " + dir);
  Dataset ds;
  size_t count = 0;
  std::string line;
  int line_no = 0;
  while (std::getline(mf, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("load_dataset: manifest parse error at line " +
                               std::to_string(line_no));
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    auto trim = [](std::string& s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t\r");
      s = b == std::string::npos ? "" : s.substr(b, e - b + 1);
    };
    trim(key);
    trim(value);
    if (key == "count") count = std::stoull(value);
    else if (key == "seeds_per_pair") ds.config.seeds_per_pair = std::stoi(value);
    else if (key == "master_seed") ds.config.master_seed = std::stoull(value);
    else if (key == "frames") ds.config.render.frames = std::stoi(value);
    else if (key == "height") ds.config.render.height = std::stoi(value);
    else if (key == "width") ds.config.render.width = std::stoi(value);
    else if (key == "channels") ds.config.render.channels = std::stoi(value);
    else if (key == "backgrounds") ds.config.render.backgrounds = std::stoi(value);
    else if (key == "vocab_per_class")
      ds.config.render.vocab_per_class = std::stoi(value);
    else if (key == "train_frac") ds.config.train_frac = std::stod(value);
    else if (key == "val_frac") ds.config.val_frac = std::stod(value);
    else if (key.rfind("sample_", 0) == 0) {
      SampleMeta m;
      int split = 0;
      if (sscanf(value.c_str(),
                 "task:%d emb:%d bg:%d spec_seed:%llu render_seed:%llu "
                 "split:%d",
                 &m.task, &m.embodiment, &m.background,
                 reinterpret_cast<unsigned long long*>(&m.spec_seed),
                 reinterpret_cast<unsigned long long*>(&m.render_seed),
                 &split) != 6)
        throw std::runtime_error(
            "load_dataset: manifest parse error at line " +
            std::to_string(line_no));
      m.split = static_cast<Split>(split);
      ds.meta.push_back(m);
    }
  }
  if (ds.meta.size() != count)
    throw std::runtime_error("load_dataset: manifest count mismatch");

  for (size_t i = 0; i < count; ++i) {
    char name[32];
    snprintf(name, sizeof(name), "demo_%05zu.bin", i);
    std::ifstream in(fs::path(dir) / name, std::ios::binary);
    if (!in)
      throw std::runtime_error(std::string("load_dataset: missing ") + name);
    ds.samples.push_back(read_demo_record(in));
    const int idx = static_cast<int>(i);
    if (ds.meta[i].split == Split::kTrain)
      ds.train_idx.push_back(idx);
    else if (ds.meta[i].split == Split::kVal)
      ds.val_idx.push_back(idx);
    else
      ds.test_idx.push_back(idx);
  }
  return ds;
}

double label_chi2_statistic(const Dataset& ds, const std::vector<int>& idx) {
  double counts[kNumTaskClasses][kNumEmbodiments] = {};
  double row[kNumTaskClasses] = {}, col[kNumEmbodiments] = {};
  const double n = static_cast<double>(idx.size());
  for (int i : idx) {
    const auto& m = ds.meta[static_cast<size_t>(i)];
    counts[m.task][m.embodiment] += 1.0;
    row[m.task] += 1.0;
    col[m.embodiment] += 1.0;
  }
  double chi2 = 0.0;
  for (int t = 0; t < kNumTaskClasses; ++t)
    for (int e = 0; e < kNumEmbodiments; ++e) {
      const double expected = row[t] * col[e] / n;
      if (expected > 0) {
        const double d = counts[t][e] - expected;
        chi2 += d * d / expected;
      }
    }
  return chi2;
}

}  // namespace xemb::synth
