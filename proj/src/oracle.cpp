// Evaluation oracle: two small frozen classifiers over hand-built features.
// The embodiment head sees a rotation-normalized crop of the moving
// end-effector silhouette; the task head sees the object-channel trajectory.
// Heads are trained on ground-truth renders (with light noise/blur
// augmentation) and rejected outright if held-out accuracy drops below the
// configured floor.
#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "xemb/optim.hpp"
#include "xemb/rng.hpp"
#include "xemb/synthworld.hpp"

namespace xemb::synth {

namespace {

constexpr int kCrop = 16;
constexpr double kCropStep = 1.5;  // source pixels per crop cell
constexpr int kEmbFeatDim = kCrop * kCrop + 2;
constexpr int kTaskPerFrame = 5;
constexpr int kTaskGlobals = 3;
constexpr int kHidden = 32;

double wrap_half_pi(double a) {
  while (a >= 3.14159265358979323846 / 2.0) a -= 3.14159265358979323846;
  while (a < -3.14159265358979323846 / 2.0) a += 3.14159265358979323846;
  return a;
}

double bilinear(const std::vector<double>& img, int h, int w, double y,
                double x) {
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(w - 1, x0 + 1);
  const int y1 = std::min(h - 1, y0 + 1);
  const double fx = x - x0, fy = y - y0;
  const double a = img[static_cast<size_t>(y0) * w + x0];
  const double b = img[static_cast<size_t>(y0) * w + x1];
  const double c = img[static_cast<size_t>(y1) * w + x0];
  const double d = img[static_cast<size_t>(y1) * w + x1];
  return a * (1 - fx) * (1 - fy) + b * fx * (1 - fy) + c * (1 - fx) * fy +
         d * fx * fy;
}

struct Moments {
  double mass = 0, cx = 0, cy = 0, angle = 0, aniso = 0;
};

Moments image_moments(const std::vector<double>& img, int h, int w) {
  Moments mo;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const double v = img[static_cast<size_t>(r) * w + c];
      mo.mass += v;
      mo.cx += v * c;
      mo.cy += v * r;
    }
  if (mo.mass < 1e-9) {
    mo.cx = w * 0.5;
    mo.cy = h * 0.5;
    return mo;
  }
  mo.cx /= mo.mass;
  mo.cy /= mo.mass;
  double mxx = 0, myy = 0, mxy = 0;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const double v = img[static_cast<size_t>(r) * w + c];
      const double dx = c - mo.cx, dy = r - mo.cy;
      mxx += v * dx * dx;
      myy += v * dy * dy;
      mxy += v * dx * dy;
    }
  mxx /= mo.mass;
  myy /= mo.mass;
  mxy /= mo.mass;
  mo.angle = 0.5 * std::atan2(2.0 * mxy, mxx - myy);
  const double tr = mxx + myy;
  const double det = std::sqrt(std::max(
      0.0, (mxx - myy) * (mxx - myy) / 4.0 + mxy * mxy));
  const double l1 = tr / 2.0 + det, l2 = tr / 2.0 - det;
  mo.aniso = tr > 1e-12 ? (l1 - l2) / (l1 + l2) : 0.0;
  return mo;
}

}  // namespace

int OracleClassifier::embodiment_feature_dim() { return kEmbFeatDim; }

std::vector<double> OracleClassifier::embodiment_features(
    const std::vector<double>& frames, int n, int h, int w, int c) {
  const int hw = h * w;
  // static background estimate: per-pixel low temporal quantile of the scene
  // channel. The end-effector is brighter than every background and parks in
  // place for long stretches, so a median would absorb it; the low quantile
  // does not.
  std::vector<double> bg(static_cast<size_t>(hw));
  std::vector<double> vals(static_cast<size_t>(n));
  const int q = std::max(0, n / 8);
  for (int i = 0; i < hw; ++i) {
    for (int f = 0; f < n; ++f)
      vals[static_cast<size_t>(f)] =
          frames[(static_cast<size_t>(f) * hw + i) * c + 0];
    std::nth_element(vals.begin(), vals.begin() + q, vals.end());
    bg[static_cast<size_t>(i)] = vals[static_cast<size_t>(q)];
  }

  std::vector<std::vector<double>> residuals(static_cast<size_t>(n));
  std::vector<double> energy(static_cast<size_t>(n), 0.0);
  for (int f = 0; f < n; ++f) {
    auto& res = residuals[static_cast<size_t>(f)];
    res.resize(static_cast<size_t>(hw));
    for (int i = 0; i < hw; ++i) {
      const double d = frames[(static_cast<size_t>(f) * hw + i) * c + 0] -
                       bg[static_cast<size_t>(i)];
      res[static_cast<size_t>(i)] = d > 0.06 ? d : 0.0;
    }
    energy[static_cast<size_t>(f)] =
        std::accumulate(res.begin(), res.end(), 0.0);
  }
  const double max_e = *std::max_element(energy.begin(), energy.end());

  std::vector<double> crop_sum(static_cast<size_t>(kCrop * kCrop), 0.0);
  int contributing = 0;
  for (int f = 0; f < n; ++f) {
    if (max_e <= 1e-9 || energy[static_cast<size_t>(f)] < 0.3 * max_e)
      continue;
    const auto& res = residuals[static_cast<size_t>(f)];
    Moments mo = image_moments(res, h, w);
    if (mo.mass < 1e-9) continue;
    // align the principal axis with x and disambiguate head/tail by the
    // third moment: the body trails behind the tool center
    double phi = mo.angle;
    double skew = 0.0;
    {
      const double ca = std::cos(phi), sa = std::sin(phi);
      for (int r = 0; r < h; ++r)
        for (int cc = 0; cc < w; ++cc) {
          const double v = res[static_cast<size_t>(r) * w + cc];
          if (v <= 0) continue;
          const double proj = (cc - mo.cx) * ca + (r - mo.cy) * sa;
          skew += v * proj * proj * proj;
        }
    }
    if (skew > 0) phi += 3.14159265358979323846;
    const double ca = std::cos(phi), sa = std::sin(phi);
    std::vector<double> crop(static_cast<size_t>(kCrop * kCrop));
    double cmax = 0.0;
    for (int i = 0; i < kCrop; ++i)
      for (int j = 0; j < kCrop; ++j) {
        const double u = (j - (kCrop - 1) * 0.5) * kCropStep;
        const double v = (i - (kCrop - 1) * 0.5) * kCropStep;
        const double sx = mo.cx + u * ca - v * sa;
        const double sy = mo.cy + u * sa + v * ca;
        const double val = bilinear(res, h, w, sy, sx);
        crop[static_cast<size_t>(i) * kCrop + j] = val;
        cmax = std::max(cmax, val);
      }
    if (cmax > 1e-9)
      for (auto& v : crop) v /= cmax;
    for (size_t i = 0; i < crop.size(); ++i) crop_sum[i] += crop[i];
    ++contributing;
  }
  if (contributing > 0)
    for (auto& v : crop_sum) v /= contributing;

  std::vector<double> feat(crop_sum);
  feat.push_back(max_e / hw);
  feat.push_back(static_cast<double>(contributing) / n);
  return feat;
}

int OracleClassifier::task_feature_dim() {
  return 16 * kTaskPerFrame + kTaskGlobals;
}

std::vector<double> OracleClassifier::task_features(
    const std::vector<double>& frames, int n, int h, int w, int c) {
  const int hw = h * w;
  constexpr int kFrames = 16;  // features resampled to a fixed frame count
  std::vector<double> feat;
  feat.reserve(static_cast<size_t>(task_feature_dim()));

  std::vector<Moments> mo(static_cast<size_t>(n));
  std::vector<double> obj(static_cast<size_t>(hw));
  for (int f = 0; f < n; ++f) {
    for (int i = 0; i < hw; ++i)
      obj[static_cast<size_t>(i)] =
          c > 1 ? frames[(static_cast<size_t>(f) * hw + i) * c + 1] : 0.0;
    mo[static_cast<size_t>(f)] = image_moments(obj, h, w);
  }
  // unwrap the mod-pi orientation into a cumulative rotation
  std::vector<double> cum(static_cast<size_t>(n), 0.0);
  for (int f = 1; f < n; ++f) {
    const double step = wrap_half_pi(mo[static_cast<size_t>(f)].angle -
                                     mo[static_cast<size_t>(f - 1)].angle);
    cum[static_cast<size_t>(f)] = cum[static_cast<size_t>(f - 1)] + step;
  }

  double path = 0.0;
  for (int f = 1; f < n; ++f)
    path += std::hypot(mo[static_cast<size_t>(f)].cx -
                           mo[static_cast<size_t>(f - 1)].cx,
                       mo[static_cast<size_t>(f)].cy -
                           mo[static_cast<size_t>(f - 1)].cy);

  for (int k = 0; k < kFrames; ++k) {
    const int f = std::min(n - 1, k * n / kFrames);
    const auto& m = mo[static_cast<size_t>(f)];
    feat.push_back(m.cx / w);
    feat.push_back(m.cy / h);
    feat.push_back(cum[static_cast<size_t>(f)]);
    feat.push_back(m.aniso);
    feat.push_back(m.mass / (0.1 * hw));
  }
  const double disp = std::hypot(
      mo[static_cast<size_t>(n - 1)].cx - mo[0].cx,
      mo[static_cast<size_t>(n - 1)].cy - mo[0].cy);
  feat.push_back(disp / w);
  feat.push_back(path / w);
  feat.push_back(std::abs(cum[static_cast<size_t>(n - 1)]));
  return feat;
}

std::vector<double> OracleClassifier::Head::logits(
    const std::vector<double>& x) const {
  std::vector<double> h(static_cast<size_t>(hidden));
  for (int j = 0; j < hidden; ++j) {
    double s = b1[static_cast<size_t>(j)];
    for (int i = 0; i < input; ++i)
      s += x[static_cast<size_t>(i)] * w1[static_cast<size_t>(i) * hidden + j];
    h[static_cast<size_t>(j)] = std::tanh(s);
  }
  std::vector<double> z(static_cast<size_t>(classes));
  for (int k = 0; k < classes; ++k) {
    double s = b2[static_cast<size_t>(k)];
    for (int j = 0; j < hidden; ++j)
      s += h[static_cast<size_t>(j)] * w2[static_cast<size_t>(j) * classes + k];
    z[static_cast<size_t>(k)] = s;
  }
  return z;
}

namespace {

std::vector<double> softmax_vec(const std::vector<double>& z) {
  const double m = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double sum = 0.0;
  for (size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - m);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

// Minibatch softmax cross-entropy training of one head with AdamW.
void train_head(OracleClassifier::Head& head,
                const std::vector<std::vector<double>>& feats,
                const std::vector<int>& labels, int classes,
                const OracleConfig& cfg, uint64_t stream) {
  const int input = static_cast<int>(feats[0].size());
  head.input = input;
  head.hidden = kHidden;
  head.classes = classes;
  Rng rng(cfg.seed ^ (stream * 0x9e37ULL));
  auto init = [&rng](std::vector<double>& w, int n, double s) {
    w.resize(static_cast<size_t>(n));
    for (auto& v : w) v = rng.gaussian() * s;
  };
  init(head.w1, input * kHidden, 1.0 / std::sqrt(static_cast<double>(input)));
  init(head.b1, kHidden, 0.0);
  init(head.w2, kHidden * classes, 1.0 / std::sqrt(double(kHidden)));
  init(head.b2, classes, 0.0);

  AdamWConfig ocfg;
  ocfg.lr = cfg.lr;
  ocfg.weight_decay = 1e-4;
  std::vector<double> m_w1(head.w1.size(), 0.0), v_w1(head.w1.size(), 0.0);
  std::vector<double> m_b1(head.b1.size(), 0.0), v_b1(head.b1.size(), 0.0);
  std::vector<double> m_w2(head.w2.size(), 0.0), v_w2(head.w2.size(), 0.0);
  std::vector<double> m_b2(head.b2.size(), 0.0), v_b2(head.b2.size(), 0.0);

  std::vector<double> g_w1(head.w1.size()), g_b1(head.b1.size()),
      g_w2(head.w2.size()), g_b2(head.b2.size());

  for (int step = 1; step <= cfg.steps; ++step) {
    std::fill(g_w1.begin(), g_w1.end(), 0.0);
    std::fill(g_b1.begin(), g_b1.end(), 0.0);
    std::fill(g_w2.begin(), g_w2.end(), 0.0);
    std::fill(g_b2.begin(), g_b2.end(), 0.0);
    const int bsz = std::min<int>(cfg.batch, static_cast<int>(feats.size()));
    for (int b = 0; b < bsz; ++b) {
      const size_t idx = static_cast<size_t>(rng.next_below(feats.size()));
      const auto& x = feats[idx];
      const int y = labels[idx];
      // forward
      std::vector<double> h(static_cast<size_t>(kHidden));
      for (int j = 0; j < kHidden; ++j) {
        double s = head.b1[static_cast<size_t>(j)];
        for (int i = 0; i < input; ++i)
          s += x[static_cast<size_t>(i)] *
               head.w1[static_cast<size_t>(i) * kHidden + j];
        h[static_cast<size_t>(j)] = std::tanh(s);
      }
      std::vector<double> z(static_cast<size_t>(classes));
      for (int k = 0; k < classes; ++k) {
        double s = head.b2[static_cast<size_t>(k)];
        for (int j = 0; j < kHidden; ++j)
          s += h[static_cast<size_t>(j)] *
               head.w2[static_cast<size_t>(j) * classes + k];
        z[static_cast<size_t>(k)] = s;
      }
      auto p = softmax_vec(z);
      // backward: dz = p - onehot
      p[static_cast<size_t>(y)] -= 1.0;
      const double inv_b = 1.0 / bsz;
      std::vector<double> dh(static_cast<size_t>(kHidden), 0.0);
      for (int j = 0; j < kHidden; ++j)
        for (int k = 0; k < classes; ++k) {
          g_w2[static_cast<size_t>(j) * classes + k] +=
              inv_b * h[static_cast<size_t>(j)] * p[static_cast<size_t>(k)];
          dh[static_cast<size_t>(j)] +=
              head.w2[static_cast<size_t>(j) * classes + k] *
              p[static_cast<size_t>(k)];
        }
      for (int k = 0; k < classes; ++k)
        g_b2[static_cast<size_t>(k)] += inv_b * p[static_cast<size_t>(k)];
      for (int j = 0; j < kHidden; ++j) {
        const double dpre = dh[static_cast<size_t>(j)] *
                            (1.0 - h[static_cast<size_t>(j)] *
                                       h[static_cast<size_t>(j)]);
        g_b1[static_cast<size_t>(j)] += inv_b * dpre;
        for (int i = 0; i < input; ++i)
          g_w1[static_cast<size_t>(i) * kHidden + j] +=
              inv_b * x[static_cast<size_t>(i)] * dpre;
      }
    }
    adamw_update(head.w1, g_w1, m_w1, v_w1, step, ocfg);
    adamw_update(head.b1, g_b1, m_b1, v_b1, step, ocfg);
    adamw_update(head.w2, g_w2, m_w2, v_w2, step, ocfg);
    adamw_update(head.b2, g_b2, m_b2, v_b2, step, ocfg);
  }
}

std::vector<double> augment_frames(const std::vector<double>& frames, int n,
                                   int h, int w, int c, bool blur,
                                   double noise_std, Rng& rng) {
  std::vector<double> out = frames;
  const int hw = h * w;
  if (blur) {
    std::vector<double> tmp(out.size());
    for (int f = 0; f < n; ++f)
      for (int ch = 0; ch < c; ++ch)
        for (int r = 0; r < h; ++r)
          for (int cc = 0; cc < w; ++cc) {
            double s = 0.0;
            int cnt = 0;
            for (int dr = -1; dr <= 1; ++dr)
              for (int dc = -1; dc <= 1; ++dc) {
                const int rr = r + dr, c2 = cc + dc;
                if (rr < 0 || rr >= h || c2 < 0 || c2 >= w) continue;
                s += out[(static_cast<size_t>(f) * hw + rr * w + c2) * c + ch];
                ++cnt;
              }
            tmp[(static_cast<size_t>(f) * hw + r * w + cc) * c + ch] =
                s / cnt;
          }
    out = tmp;
  }
  if (noise_std > 0)
    for (auto& v : out)
      v = std::clamp(v + rng.gaussian() * noise_std, 0.0, 1.0);
  return out;
}

}  // namespace

OracleClassifier OracleClassifier::train(const Dataset& ds,
                                         const OracleConfig& cfg) {
  if (ds.train_idx.empty() || ds.val_idx.empty())
    throw std::invalid_argument("oracle: dataset needs train and val splits");
  bool task_seen[kNumTaskClasses] = {};
  bool emb_seen[kNumEmbodiments] = {};
  for (int i : ds.train_idx) {
    task_seen[ds.meta[static_cast<size_t>(i)].task] = true;
    emb_seen[ds.meta[static_cast<size_t>(i)].embodiment] = true;
  }
  for (bool b : task_seen)
    if (!b) throw std::invalid_argument("oracle: train split misses a task");
  for (bool b : emb_seen)
    if (!b)
      throw std::invalid_argument("oracle: train split misses an embodiment");

  OracleClassifier oracle;
  std::vector<std::vector<double>> emb_feats, task_feats;
  std::vector<int> emb_labels, task_labels;
  Rng aug_rng(cfg.seed ^ 0xA06ULL);
  for (int i : ds.train_idx) {
    const auto& s = ds.samples[static_cast<size_t>(i)];
    for (int variant = 0; variant <= cfg.noisy_variants; ++variant) {
      std::vector<double> frames =
          variant == 0
              ? s.frames
              : augment_frames(s.frames, s.n_frames, s.height, s.width,
                               s.channels, variant == cfg.noisy_variants,
                               cfg.noise_std, aug_rng);
      emb_feats.push_back(embodiment_features(frames, s.n_frames, s.height,
                                              s.width, s.channels));
      emb_labels.push_back(s.embodiment_label);
      task_feats.push_back(
          task_features(frames, s.n_frames, s.height, s.width, s.channels));
      task_labels.push_back(s.task_label);
    }
  }
  train_head(oracle.emb_head_, emb_feats, emb_labels, kNumEmbodiments, cfg, 1);
  train_head(oracle.task_head_, task_feats, task_labels, kNumTaskClasses, cfg,
             2);

  int emb_ok = 0, task_ok = 0;
  for (int i : ds.val_idx) {
    const auto& s = ds.samples[static_cast<size_t>(i)];
    const auto verdict = oracle.classify(s);
    emb_ok += verdict.embodiment_id == s.embodiment_label;
    task_ok += verdict.task_class == s.task_label;
  }
  oracle.embodiment_accuracy_ =
      static_cast<double>(emb_ok) / static_cast<double>(ds.val_idx.size());
  oracle.task_accuracy_ =
      static_cast<double>(task_ok) / static_cast<double>(ds.val_idx.size());
  oracle.accepted_ = oracle.embodiment_accuracy_ >= cfg.min_accuracy &&
                     oracle.task_accuracy_ >= cfg.min_accuracy;
  return oracle;
}

OracleVerdict OracleClassifier::classify(const std::vector<double>& frames,
                                         int n, int h, int w, int c) const {
  OracleVerdict out;
  const auto ef = embodiment_features(frames, n, h, w, c);
  const auto tf = task_features(frames, n, h, w, c);
  const auto ep = softmax_vec(emb_head_.logits(ef));
  const auto tp = softmax_vec(task_head_.logits(tf));
  out.embodiment_id = static_cast<int>(
      std::max_element(ep.begin(), ep.end()) - ep.begin());
  out.task_class = static_cast<int>(
      std::max_element(tp.begin(), tp.end()) - tp.begin());
  out.embodiment_confidence = ep[static_cast<size_t>(out.embodiment_id)];
  out.task_confidence = tp[static_cast<size_t>(out.task_class)];
  const double ee_energy = ef[static_cast<size_t>(kCrop * kCrop)];
  double max_mass = 0.0;
  for (int k = 0; k < 16; ++k)
    max_mass = std::max(max_mass, tf[static_cast<size_t>(k * kTaskPerFrame + 4)]);
  out.low_confidence = ee_energy < 1e-4 || max_mass < 1e-4 ||
                       out.embodiment_confidence < 0.6 ||
                       out.task_confidence < 0.6;
  return out;
}

OracleVerdict OracleClassifier::classify(const DemoSample& s) const {
  return classify(s.frames, s.n_frames, s.height, s.width, s.channels);
}

namespace {
void write_vec(std::ofstream& out, const std::vector<double>& v) {
  const uint64_t n = v.size();
  out.write(reinterpret_cast<const char*>(&n), sizeof(n));
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
}
std::vector<double> read_vec(std::ifstream& in) {
  uint64_t n = 0;
  in.read(reinterpret_cast<char*>(&n), sizeof(n));
  std::vector<double> v(n);
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  return v;
}
}  // namespace

void OracleClassifier::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("oracle save: cannot open " + path);
  out.write("XEMBORC1", 8);
  auto dump_head = [&out](const Head& h) {
    const int32_t dims[3] = {h.input, h.hidden, h.classes};
    out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    write_vec(out, h.w1);
    write_vec(out, h.b1);
    write_vec(out, h.w2);
    write_vec(out, h.b2);
  };
  dump_head(task_head_);
  dump_head(emb_head_);
  out.write(reinterpret_cast<const char*>(&task_accuracy_), sizeof(double));
  out.write(reinterpret_cast<const char*>(&embodiment_accuracy_),
            sizeof(double));
  const uint8_t acc = accepted_ ? 1 : 0;
  out.write(reinterpret_cast<const char*>(&acc), 1);
}

OracleClassifier OracleClassifier::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("oracle load: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (std::memcmp(magic, "XEMBORC1", 8) != 0)
    throw std::runtime_error("oracle load: bad magic");
  OracleClassifier o;
  auto slurp_head = [&in](Head& h) {
    int32_t dims[3];
    in.read(reinterpret_cast<char*>(dims), sizeof(dims));
    h.input = dims[0];
    h.hidden = dims[1];
    h.classes = dims[2];
    h.w1 = read_vec(in);
    h.b1 = read_vec(in);
    h.w2 = read_vec(in);
    h.b2 = read_vec(in);
  };
  slurp_head(o.task_head_);
  slurp_head(o.emb_head_);
  in.read(reinterpret_cast<char*>(&o.task_accuracy_), sizeof(double));
  in.read(reinterpret_cast<char*>(&o.embodiment_accuracy_), sizeof(double));
  uint8_t acc = 0;
  in.read(reinterpret_cast<char*>(&acc), 1);
  o.accepted_ = acc != 0;
  if (!in) throw std::runtime_error("oracle load: truncated file");
  return o;
}

}  // namespace xemb::synth
