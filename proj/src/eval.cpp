#include "xemb/eval.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace xemb::harness {

namespace {
using json = nlohmann::ordered_json;
}

EmbeddingTable embed_split(const Trainer& trainer,
                           const std::vector<int>& indices) {
  EmbeddingTable table;
  const auto& ds = trainer.dataset();
  for (int i : indices) {
    const auto& s = ds.samples[static_cast<size_t>(i)];
    auto zt = enc::encode_task(
        s.goal_token,
        synth::lift_motion(s.motion, s.n_frames, ds.config.render),
        synth::lift_trajectory(s.object_traj, s.n_frames, ds.config.render),
        s.n_frames, trainer.task_encoder(), trainer.encoder_config());
    auto ze = enc::encode_embodiment(s.card, trainer.emb_encoder(),
                                     trainer.encoder_config());
    table.z_task.push_back(zt.z.data());
    table.z_emb.push_back(ze.z.data());
    table.task_labels.push_back(s.task_label);
    table.emb_labels.push_back(s.embodiment_label);
  }
  return table;
}

// ---------------------------------------------------------------------------
// metric primitives

double psnr(const std::vector<double>& a, const std::vector<double>& b,
            double clamp_db) {
  if (a.size() != b.size())
    throw std::invalid_argument("psnr: size mismatch");
  double mse = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.size());
  if (mse <= 0) return clamp_db;
  return std::min(clamp_db, 10.0 * std::log10(1.0 / mse));
}

double ssim_video(const std::vector<double>& a, const std::vector<double>& b,
                  int frames, int h, int w, int c) {
  constexpr int kWin = 8, kStride = 4;
  constexpr double kC1 = 0.01 * 0.01, kC2 = 0.03 * 0.03;
  if (a.size() != b.size() ||
      a.size() != static_cast<size_t>(frames) * h * w * c)
    throw std::invalid_argument("ssim_video: layout mismatch");
  const int hw = h * w;
  double total = 0;
  int windows = 0;
  for (int f = 0; f < frames; ++f)
    for (int ch = 0; ch < c; ++ch)
      for (int r0 = 0; r0 + kWin <= h; r0 += kStride)
        for (int c0 = 0; c0 + kWin <= w; c0 += kStride) {
          double ma = 0, mb = 0;
          for (int r = 0; r < kWin; ++r)
            for (int cc = 0; cc < kWin; ++cc) {
              const size_t idx =
                  (static_cast<size_t>(f) * hw + (r0 + r) * w + (c0 + cc)) * c +
                  ch;
              ma += a[idx];
              mb += b[idx];
            }
          const double n = kWin * kWin;
          ma /= n;
          mb /= n;
          double va = 0, vb = 0, cov = 0;
          for (int r = 0; r < kWin; ++r)
            for (int cc = 0; cc < kWin; ++cc) {
              const size_t idx =
                  (static_cast<size_t>(f) * hw + (r0 + r) * w + (c0 + cc)) * c +
                  ch;
              const double da = a[idx] - ma, db = b[idx] - mb;
              va += da * da;
              vb += db * db;
              cov += da * db;
            }
          va /= n - 1;
          vb /= n - 1;
          cov /= n - 1;
          const double s = ((2 * ma * mb + kC1) * (2 * cov + kC2)) /
                           ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
          total += s;
          ++windows;
        }
  return windows ? total / windows : 1.0;
}

namespace {
double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}
}  // namespace

double mmd_rbf(const std::vector<std::vector<double>>& x,
               const std::vector<std::vector<double>>& y) {
  const size_t n = x.size(), m = y.size();
  if (n < 2 || m < 2) throw std::invalid_argument("mmd_rbf: need >= 2 each");
  // median heuristic over all pairwise distances
  std::vector<double> dists;
  dists.reserve((n + m) * (n + m) / 2);
  auto all = [&](const std::vector<std::vector<double>>& p,
                 const std::vector<std::vector<double>>& q, bool same) {
    for (size_t i = 0; i < p.size(); ++i)
      for (size_t j = same ? i + 1 : 0; j < q.size(); ++j)
        dists.push_back(sq_dist(p[i], q[j]));
  };
  all(x, x, true);
  all(y, y, true);
  all(x, y, false);
  std::nth_element(dists.begin(), dists.begin() + dists.size() / 2,
                   dists.end());
  double med = dists[dists.size() / 2];
  if (med <= 0) med = 1.0;
  const double gamma = 1.0 / med;

  auto kern_sum = [gamma](const std::vector<std::vector<double>>& p,
                          const std::vector<std::vector<double>>& q,
                          bool exclude_diag) {
    double s = 0;
    for (size_t i = 0; i < p.size(); ++i)
      for (size_t j = 0; j < q.size(); ++j) {
        if (exclude_diag && i == j) continue;
        s += std::exp(-gamma * sq_dist(p[i], q[j]));
      }
    return s;
  };
  const double xx = kern_sum(x, x, true) / (static_cast<double>(n) * (n - 1));
  const double yy = kern_sum(y, y, true) / (static_cast<double>(m) * (m - 1));
  const double xy = kern_sum(x, y, false) / (static_cast<double>(n) * m);
  return xx + yy - 2 * xy;
}

KMeansResult kmeans(const std::vector<std::vector<double>>& points, int k,
                    int restarts, uint64_t seed) {
  const size_t n = points.size();
  if (n == 0 || k < 1) throw std::invalid_argument("kmeans: bad input");
  const size_t dim = points[0].size();

  // degenerate: all points (numerically) identical
  double spread = 0;
  for (size_t i = 1; i < n; ++i) spread += sq_dist(points[0], points[i]);
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  if (spread < 1e-18) {
    best.assignment.assign(n, 0);
    best.inertia = 0;
    best.degenerate = true;
    return best;
  }

  Rng rng(seed);
  for (int r = 0; r < restarts; ++r) {
    // k-means++ style seeding
    std::vector<std::vector<double>> centers;
    centers.push_back(points[static_cast<size_t>(rng.next_below(n))]);
    std::vector<double> d2(n);
    while (static_cast<int>(centers.size()) < k) {
      double total = 0;
      for (size_t i = 0; i < n; ++i) {
        double m = std::numeric_limits<double>::infinity();
        for (const auto& c : centers) m = std::min(m, sq_dist(points[i], c));
        d2[i] = m;
        total += m;
      }
      if (total <= 0) {
        centers.push_back(points[static_cast<size_t>(rng.next_below(n))]);
        continue;
      }
      double pick = rng.uniform() * total;
      size_t chosen = n - 1;
      for (size_t i = 0; i < n; ++i) {
        pick -= d2[i];
        if (pick <= 0) {
          chosen = i;
          break;
        }
      }
      centers.push_back(points[chosen]);
    }

    std::vector<int> assign(n, 0);
    double inertia = 0;
    for (int iter = 0; iter < 200; ++iter) {
      inertia = 0;
      bool moved = false;
      for (size_t i = 0; i < n; ++i) {
        double m = std::numeric_limits<double>::infinity();
        int arg = 0;
        for (int c = 0; c < k; ++c) {
          const double d = sq_dist(points[i], centers[static_cast<size_t>(c)]);
          if (d < m) {
            m = d;
            arg = c;
          }
        }
        if (assign[i] != arg) {
          assign[i] = arg;
          moved = true;
        }
        inertia += m;
      }
      std::vector<std::vector<double>> sums(
          static_cast<size_t>(k), std::vector<double>(dim, 0.0));
      std::vector<int> counts(static_cast<size_t>(k), 0);
      for (size_t i = 0; i < n; ++i) {
        for (size_t d = 0; d < dim; ++d)
          sums[static_cast<size_t>(assign[i])][d] += points[i][d];
        counts[static_cast<size_t>(assign[i])]++;
      }
      for (int c = 0; c < k; ++c) {
        if (counts[static_cast<size_t>(c)] == 0) continue;  // empty cluster
        for (size_t d = 0; d < dim; ++d)
          centers[static_cast<size_t>(c)][d] =
              sums[static_cast<size_t>(c)][d] / counts[static_cast<size_t>(c)];
      }
      if (!moved) break;
    }
    if (inertia < best.inertia) {
      best.inertia = inertia;
      best.assignment = assign;
    }
  }
  return best;
}

double cluster_purity(const std::vector<int>& assignment,
                      const std::vector<int>& labels, int k) {
  if (assignment.size() != labels.size() || assignment.empty())
    throw std::invalid_argument("cluster_purity: bad input");
  int label_max = 0;
  for (int l : labels) label_max = std::max(label_max, l);
  std::vector<std::vector<int>> counts(
      static_cast<size_t>(k), std::vector<int>(static_cast<size_t>(label_max + 1), 0));
  for (size_t i = 0; i < assignment.size(); ++i)
    counts[static_cast<size_t>(assignment[i])]
          [static_cast<size_t>(labels[i])]++;
  int agree = 0;
  for (const auto& row : counts)
    agree += *std::max_element(row.begin(), row.end());
  return static_cast<double>(agree) / static_cast<double>(assignment.size());
}

double silhouette(const std::vector<std::vector<double>>& points,
                  const std::vector<int>& assignment, int k) {
  const size_t n = points.size();
  double total = 0;
  int counted = 0;
  for (size_t i = 0; i < n; ++i) {
    std::vector<double> mean_dist(static_cast<size_t>(k), 0.0);
    std::vector<int> counts(static_cast<size_t>(k), 0);
    for (size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      mean_dist[static_cast<size_t>(assignment[j])] +=
          std::sqrt(sq_dist(points[i], points[j]));
      counts[static_cast<size_t>(assignment[j])]++;
    }
    const int own = assignment[i];
    if (counts[static_cast<size_t>(own)] == 0) continue;
    const double a = mean_dist[static_cast<size_t>(own)] /
                     counts[static_cast<size_t>(own)];
    double b = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
      if (c == own || counts[static_cast<size_t>(c)] == 0) continue;
      b = std::min(b, mean_dist[static_cast<size_t>(c)] /
                          counts[static_cast<size_t>(c)]);
    }
    if (!std::isfinite(b)) continue;
    total += (b - a) / std::max(a, b);
    ++counted;
  }
  return counted ? total / counted : 0.0;
}

std::vector<std::array<double, 2>> pca2(
    const std::vector<std::vector<double>>& points) {
  const size_t n = points.size();
  if (n == 0) return {};
  const size_t dim = points[0].size();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(static_cast<long>(dim));
  for (const auto& p : points)
    for (size_t d = 0; d < dim; ++d) mean(static_cast<long>(d)) += p[d];
  mean /= static_cast<double>(n);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(static_cast<long>(dim),
                                              static_cast<long>(dim));
  for (const auto& p : points) {
    Eigen::VectorXd v(static_cast<long>(dim));
    for (size_t d = 0; d < dim; ++d) v(static_cast<long>(d)) = p[d];
    v -= mean;
    cov += v * v.transpose();
  }
  cov /= std::max<double>(1.0, static_cast<double>(n - 1));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  std::vector<std::array<double, 2>> out(n);
  for (int comp = 0; comp < 2; ++comp) {
    Eigen::VectorXd axis =
        eig.eigenvectors().col(static_cast<long>(dim) - 1 - comp);
    // deterministic sign: the largest-magnitude coordinate is positive
    long arg = 0;
    axis.cwiseAbs().maxCoeff(&arg);
    if (axis(arg) < 0) axis = -axis;
    for (size_t i = 0; i < n; ++i) {
      double s = 0;
      for (size_t d = 0; d < dim; ++d)
        s += (points[i][d] - mean(static_cast<long>(d))) *
             axis(static_cast<long>(d));
      out[i][static_cast<size_t>(comp)] = s;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

DisentanglementReport eval_disentanglement(const Trainer& trainer,
                                           const std::vector<int>& indices,
                                           const EvalOptions& opt) {
  if (indices.size() < 4)
    throw std::invalid_argument("eval_disentanglement: too few samples");
  auto table = embed_split(trainer, indices);
  const int dz = trainer.settings().d_z;
  const int dims = 2 * dz;
  const size_t n = indices.size();

  DisentanglementReport rep;
  rep.d_z = dz;

  // Pearson correlation over [task dims | emb dims]
  std::vector<std::vector<double>> joint(n);
  for (size_t i = 0; i < n; ++i) {
    joint[i] = table.z_task[i];
    joint[i].insert(joint[i].end(), table.z_emb[i].begin(),
                    table.z_emb[i].end());
  }
  std::vector<double> mean(static_cast<size_t>(dims), 0.0),
      stdev(static_cast<size_t>(dims), 0.0);
  for (const auto& row : joint)
    for (int d = 0; d < dims; ++d) mean[static_cast<size_t>(d)] += row[static_cast<size_t>(d)];
  for (auto& m : mean) m /= static_cast<double>(n);
  for (const auto& row : joint)
    for (int d = 0; d < dims; ++d) {
      const double c = row[static_cast<size_t>(d)] - mean[static_cast<size_t>(d)];
      stdev[static_cast<size_t>(d)] += c * c;
    }
  for (auto& s : stdev) s = std::sqrt(s);
  rep.correlation.assign(static_cast<size_t>(dims) * dims, 0.0);
  double cross_sum = 0;
  for (int a = 0; a < dims; ++a) {
    rep.correlation[static_cast<size_t>(a) * dims + a] = 1.0;
    for (int b = a + 1; b < dims; ++b) {
      double cov = 0;
      for (const auto& row : joint)
        cov += (row[static_cast<size_t>(a)] - mean[static_cast<size_t>(a)]) *
               (row[static_cast<size_t>(b)] - mean[static_cast<size_t>(b)]);
      const double denom =
          stdev[static_cast<size_t>(a)] * stdev[static_cast<size_t>(b)];
      const double r = denom > 1e-30 ? cov / denom : 0.0;
      rep.correlation[static_cast<size_t>(a) * dims + b] = r;
      rep.correlation[static_cast<size_t>(b) * dims + a] = r;
      if (a < dz && b >= dz) cross_sum += std::abs(r);
    }
  }
  rep.mean_abs_cross_correlation =
      cross_sum / (static_cast<double>(dz) * dz);

  auto km_task = kmeans(table.z_task, synth::kNumTaskClasses,
                        opt.kmeans_restarts, opt.seed);
  auto km_emb = kmeans(table.z_emb, synth::kNumEmbodiments,
                       opt.kmeans_restarts, opt.seed ^ 0xE);
  rep.degenerate_task = km_task.degenerate;
  rep.degenerate_emb = km_emb.degenerate;
  rep.task_purity = cluster_purity(km_task.assignment, table.task_labels,
                                   synth::kNumTaskClasses);
  rep.emb_purity = cluster_purity(km_emb.assignment, table.emb_labels,
                                  synth::kNumEmbodiments);
  rep.task_silhouette =
      silhouette(table.z_task, km_task.assignment, synth::kNumTaskClasses);
  rep.emb_silhouette =
      silhouette(table.z_emb, km_emb.assignment, synth::kNumEmbodiments);

  std::vector<double> zt_flat, ze_flat;
  for (size_t i = 0; i < n; ++i) {
    zt_flat.insert(zt_flat.end(), table.z_task[i].begin(),
                   table.z_task[i].end());
    ze_flat.insert(ze_flat.end(), table.z_emb[i].begin(),
                   table.z_emb[i].end());
  }
  rep.club_mi = obj::club_mi_estimate(zt_flat, ze_flat, static_cast<int>(n),
                                      dz, dz, opt.club_fit_steps,
                                      opt.club_fit_lr, opt.seed ^ 0xC1);

  auto tp = pca2(table.z_task);
  auto ep = pca2(table.z_emb);
  for (size_t i = 0; i < n; ++i) {
    rep.task_projection.push_back(
        {tp[i][0], tp[i][1], static_cast<double>(table.task_labels[i]),
         static_cast<double>(table.emb_labels[i])});
    rep.emb_projection.push_back(
        {ep[i][0], ep[i][1], static_cast<double>(table.task_labels[i]),
         static_cast<double>(table.emb_labels[i])});
  }
  return rep;
}

GenerationReport eval_generation(const Trainer& trainer,
                                 const std::vector<int>& indices,
                                 const synth::OracleClassifier& oracle,
                                 const EvalOptions& opt) {
  if (!oracle.accepted())
    throw std::runtime_error(
        "eval_generation: oracle below its accuracy floor, refusing to judge");
  const auto& ds = trainer.dataset();
  const auto& gcfg = trainer.generator_config();
  const auto& r = ds.config.render;

  std::vector<int> sources = indices;
  if (opt.max_sources > 0 &&
      static_cast<int>(sources.size()) > opt.max_sources)
    sources.resize(static_cast<size_t>(opt.max_sources));

  GenerationReport rep;

  // self-reconstruction with the demo's own conditioning and a fixed seed
  std::vector<std::vector<double>> zts, zes, bgs;
  for (int i : sources) {
    const auto& s = ds.samples[static_cast<size_t>(i)];
    auto zt = enc::encode_task(
        s.goal_token, synth::lift_motion(s.motion, s.n_frames, r),
        synth::lift_trajectory(s.object_traj, s.n_frames, r), s.n_frames,
        trainer.task_encoder(), trainer.encoder_config());
    auto ze = enc::encode_embodiment(s.card, trainer.emb_encoder(),
                                     trainer.encoder_config());
    zts.push_back(zt.z.data());
    zes.push_back(ze.z.data());
    bgs.push_back(synth::background_image(s.background_id, r.height, r.width));
  }
  gen::SamplerConfig scfg;
  scfg.steps = opt.sampler_steps;
  scfg.seed = opt.seed;
  auto videos = gen::sample_video_batch(zts, zes, bgs, trainer.backbone(),
                                        trainer.adapter(), gcfg, scfg);
  std::vector<std::vector<double>> real_feats, gen_feats;
  auto frame_features = [&](const std::vector<double>& video,
                            std::vector<std::vector<double>>* out) {
    // 4x average pooling per channel per frame
    const int ph = r.height / 4, pw = r.width / 4;
    for (int f = 0; f < r.frames; ++f) {
      std::vector<double> feat;
      feat.reserve(static_cast<size_t>(ph) * pw * r.channels);
      for (int ch = 0; ch < r.channels; ++ch)
        for (int br = 0; br < ph; ++br)
          for (int bc = 0; bc < pw; ++bc) {
            double s = 0;
            for (int dr = 0; dr < 4; ++dr)
              for (int dc = 0; dc < 4; ++dc) {
                const size_t idx =
                    (static_cast<size_t>(f) * r.height * r.width +
                     (br * 4 + dr) * r.width + (bc * 4 + dc)) *
                        r.channels +
                    ch;
                s += video[idx];
              }
            feat.push_back(s / 16.0);
          }
      out->push_back(std::move(feat));
    }
  };
  double psnr_sum = 0, ssim_sum = 0;
  for (size_t k = 0; k < sources.size(); ++k) {
    const auto& s = ds.samples[static_cast<size_t>(sources[k])];
    psnr_sum += psnr(videos[k], s.frames);
    ssim_sum += ssim_video(videos[k], s.frames, r.frames, r.height, r.width,
                           r.channels);
    frame_features(s.frames, &real_feats);
    frame_features(videos[k], &gen_feats);
  }
  rep.reconstructions = static_cast<int>(sources.size());
  rep.psnr = psnr_sum / rep.reconstructions;
  rep.ssim = ssim_sum / rep.reconstructions;
  rep.mmd_real_generated = mmd_rbf(real_feats, gen_feats);

  // transfer across every (source, target embodiment) pair
  auto models = trainer.transfer_models();
  int emb_ok = 0, task_ok = 0, pairs = 0;
  std::vector<std::vector<double>> t_zts, t_zes, t_bgs;
  std::vector<std::pair<int, int>> pair_meta;  // (source idx, target emb)
  for (int i : sources) {
    const auto& s = ds.samples[static_cast<size_t>(i)];
    auto zt = enc::encode_task(
        s.goal_token, synth::lift_motion(s.motion, s.n_frames, r),
        synth::lift_trajectory(s.object_traj, s.n_frames, r), s.n_frames,
        trainer.task_encoder(), trainer.encoder_config());
    for (int e = 0; e < synth::kNumEmbodiments; ++e) {
      synth::EmbodimentSpec spec;
      spec.embodiment_id = static_cast<synth::Embodiment>(e);
      spec.scale = r.ee_scale;
      auto card = synth::embodiment_card(spec, r);
      auto ze = enc::encode_embodiment(card, trainer.emb_encoder(),
                                       trainer.encoder_config());
      t_zts.push_back(zt.z.data());
      t_zes.push_back(ze.z.data());
      t_bgs.push_back(
          synth::background_image(s.background_id, r.height, r.width));
      pair_meta.emplace_back(i, e);
    }
  }
  // batched sampling in slabs to bound memory
  const size_t slab = 16;
  for (size_t off = 0; off < t_zts.size(); off += slab) {
    const size_t hi = std::min(t_zts.size(), off + slab);
    std::vector<std::vector<double>> szt(t_zts.begin() + static_cast<long>(off),
                                         t_zts.begin() + static_cast<long>(hi));
    std::vector<std::vector<double>> sze(t_zes.begin() + static_cast<long>(off),
                                         t_zes.begin() + static_cast<long>(hi));
    std::vector<std::vector<double>> sbg(t_bgs.begin() + static_cast<long>(off),
                                         t_bgs.begin() + static_cast<long>(hi));
    gen::SamplerConfig tcfg;
    tcfg.steps = opt.sampler_steps;
    tcfg.seed = opt.seed + off + 1;
    auto outs = gen::sample_video_batch(szt, sze, sbg, trainer.backbone(),
                                        trainer.adapter(), gcfg, tcfg);
    for (size_t k = 0; k < outs.size(); ++k) {
      const auto [src_idx, target_e] = pair_meta[off + k];
      const auto verdict = oracle.classify(outs[k], r.frames, r.height,
                                           r.width, r.channels);
      const auto& src = ds.samples[static_cast<size_t>(src_idx)];
      emb_ok += verdict.embodiment_id == target_e;
      task_ok += verdict.task_class == src.task_label;
      ++pairs;
    }
  }
  (void)models;
  rep.transfer_pairs = pairs;
  rep.transfer_embodiment_accuracy =
      pairs ? static_cast<double>(emb_ok) / pairs : 0.0;
  rep.transfer_task_accuracy =
      pairs ? static_cast<double>(task_ok) / pairs : 0.0;
  return rep;
}

// ---------------------------------------------------------------------------
// json

std::string DisentanglementReport::to_json() const {
  json j;
  j["d_z"] = d_z;
  j["mean_abs_cross_correlation"] = mean_abs_cross_correlation;
  j["task_purity"] = task_purity;
  j["emb_purity"] = emb_purity;
  j["task_silhouette"] = task_silhouette;
  j["emb_silhouette"] = emb_silhouette;
  j["club_mi"] = club_mi;
  j["degenerate_task"] = degenerate_task;
  j["degenerate_emb"] = degenerate_emb;
  return j.dump();
}

std::string GenerationReport::to_json() const {
  json j;
  j["psnr"] = psnr;
  j["ssim"] = ssim;
  j["mmd_real_generated"] = mmd_real_generated;
  j["transfer_embodiment_accuracy"] = transfer_embodiment_accuracy;
  j["transfer_task_accuracy"] = transfer_task_accuracy;
  j["reconstructions"] = reconstructions;
  j["transfer_pairs"] = transfer_pairs;
  return j.dump();
}

std::string AblationResult::to_json() const {
  json j;
  j["name"] = name;
  j["diverged"] = diverged;
  j["mean_abs_cross_correlation"] =
      disentanglement.mean_abs_cross_correlation;
  j["task_purity"] = disentanglement.task_purity;
  j["emb_purity"] = disentanglement.emb_purity;
  j["club_mi"] = disentanglement.club_mi;
  j["ssim"] = ssim;
  j["psnr"] = psnr;
  return j.dump();
}

// ---------------------------------------------------------------------------
// ablation

std::vector<AblationArm> standard_ablation_arms() {
  return {{"full", false, false},
          {"no_disentangle", true, false},
          {"no_contrast", false, true},
          {"no_both", true, true}};
}

std::vector<AblationResult> run_ablation_suite(
    const synth::Dataset& ds, const gen::BackboneParams& backbone,
    const gen::GeneratorConfig& gcfg, const TrainSettings& base,
    const std::vector<AblationArm>& arms, const EvalOptions& opt) {
  std::vector<AblationResult> results;
  for (const auto& arm : arms) {
    TrainSettings st = base;
    st.disable_disentangle = arm.disable_disentangle;
    st.disable_task_contrast = arm.disable_contrast;
    st.disable_emb_contrast = arm.disable_contrast;
    AblationResult res;
    res.name = arm.name;
    try {
      Trainer trainer(ds, backbone, gcfg, st);
      for (int s = 0; s < st.steps; ++s)
        res.batch_hashes.push_back(trainer.step().batch_hash);
      res.disentanglement =
          eval_disentanglement(trainer, ds.val_idx, opt);
      // self-reconstruction quality without the oracle-judged transfer
      EvalOptions gopt = opt;
      std::vector<int> sources = ds.val_idx;
      if (gopt.max_sources > 0 &&
          static_cast<int>(sources.size()) > gopt.max_sources)
        sources.resize(static_cast<size_t>(gopt.max_sources));
      const auto& r = ds.config.render;
      std::vector<std::vector<double>> zts, zes, bgs;
      for (int i : sources) {
        const auto& s = ds.samples[static_cast<size_t>(i)];
        auto zt = enc::encode_task(
            s.goal_token, synth::lift_motion(s.motion, s.n_frames, r),
            synth::lift_trajectory(s.object_traj, s.n_frames, r), s.n_frames,
            trainer.task_encoder(), trainer.encoder_config());
        auto ze = enc::encode_embodiment(s.card, trainer.emb_encoder(),
                                         trainer.encoder_config());
        zts.push_back(zt.z.data());
        zes.push_back(ze.z.data());
        bgs.push_back(
            synth::background_image(s.background_id, r.height, r.width));
      }
      gen::SamplerConfig scfg;
      scfg.steps = opt.sampler_steps;
      scfg.seed = opt.seed;
      auto videos =
          gen::sample_video_batch(zts, zes, bgs, trainer.backbone(),
                                  trainer.adapter(), gcfg, scfg);
      double psnr_sum = 0, ssim_sum = 0;
      for (size_t k = 0; k < sources.size(); ++k) {
        const auto& s = ds.samples[static_cast<size_t>(sources[k])];
        psnr_sum += psnr(videos[k], s.frames);
        ssim_sum += ssim_video(videos[k], s.frames, r.frames, r.height,
                               r.width, r.channels);
      }
      res.psnr = psnr_sum / static_cast<double>(sources.size());
      res.ssim = ssim_sum / static_cast<double>(sources.size());
    } catch (const std::exception& e) {
      res.diverged = true;
      res.name += std::string(" (failed: ") + e.what() + ")";
    }
    results.push_back(std::move(res));
  }
  return results;
}

}  // namespace xemb::harness
