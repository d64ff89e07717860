// Evaluation: correlation structure of the two latent spaces, clustering
// metrics, cross-space CLUB estimate, PCA projections, reconstruction
// PSNR/SSIM, kernel-MMD distribution distance, oracle-judged transfer
// accuracy, and the ablation suite.
#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "xemb/train.hpp"

namespace xemb::harness {

struct EvalOptions {
  int kmeans_restarts = 10;
  int club_fit_steps = 400;
  double club_fit_lr = 3e-3;
  int sampler_steps = 16;
  int max_sources = 0;  // 0 = all
  uint64_t seed = 17;
};

struct DisentanglementReport {
  int d_z = 0;
  std::vector<double> correlation;  // (2 d_z)^2, row-major, unit diagonal
  double mean_abs_cross_correlation = 0;
  double task_purity = 0, emb_purity = 0;
  double task_silhouette = 0, emb_silhouette = 0;
  double club_mi = 0;
  bool degenerate_task = false, degenerate_emb = false;
  // x, y, task label, embodiment label
  std::vector<std::array<double, 4>> task_projection, emb_projection;

  std::string to_json() const;
};

struct GenerationReport {
  double psnr = 0;   // mean over evaluated reconstructions, clamped at 99 dB
  double ssim = 0;   // mean
  double mmd_real_generated = 0;
  double transfer_embodiment_accuracy = 0;
  double transfer_task_accuracy = 0;
  int reconstructions = 0;
  int transfer_pairs = 0;

  std::string to_json() const;
};

// Embeds every indexed demo (its annotations and its own stored card).
struct EmbeddingTable {
  std::vector<std::vector<double>> z_task, z_emb;
  std::vector<int> task_labels, emb_labels;
};
EmbeddingTable embed_split(const Trainer& trainer,
                           const std::vector<int>& indices);

DisentanglementReport eval_disentanglement(const Trainer& trainer,
                                           const std::vector<int>& indices,
                                           const EvalOptions& opt = {});

GenerationReport eval_generation(const Trainer& trainer,
                                 const std::vector<int>& indices,
                                 const synth::OracleClassifier& oracle,
                                 const EvalOptions& opt = {});

// ---------------------------------------------------------------------------
// metric primitives (exposed for tests)

double psnr(const std::vector<double>& a, const std::vector<double>& b,
            double clamp_db = 99.0);
// mean SSIM over 8x8 windows (stride 4) per frame and channel, L = 1
double ssim_video(const std::vector<double>& a, const std::vector<double>& b,
                  int frames, int h, int w, int c);
// unbiased MMD^2 with an RBF kernel, bandwidth from the median heuristic
double mmd_rbf(const std::vector<std::vector<double>>& x,
               const std::vector<std::vector<double>>& y);

struct KMeansResult {
  std::vector<int> assignment;
  double inertia = 0;
  bool degenerate = false;
};
KMeansResult kmeans(const std::vector<std::vector<double>>& points, int k,
                    int restarts, uint64_t seed);
double cluster_purity(const std::vector<int>& assignment,
                      const std::vector<int>& labels, int k);
double silhouette(const std::vector<std::vector<double>>& points,
                  const std::vector<int>& assignment, int k);
// top-2 PCA with a deterministic sign convention
std::vector<std::array<double, 2>> pca2(
    const std::vector<std::vector<double>>& points);

// ---------------------------------------------------------------------------
// ablation

struct AblationArm {
  std::string name;
  bool disable_disentangle = false;
  bool disable_contrast = false;
};

struct AblationResult {
  std::string name;
  bool diverged = false;
  DisentanglementReport disentanglement;
  double ssim = 0;
  double psnr = 0;
  std::vector<uint64_t> batch_hashes;

  std::string to_json() const;
};

// The four standard arms: full, without the disentanglement term, without
// the intra-space contrast, without both.
std::vector<AblationArm> standard_ablation_arms();

std::vector<AblationResult> run_ablation_suite(
    const synth::Dataset& ds, const gen::BackboneParams& backbone,
    const gen::GeneratorConfig& gcfg, const TrainSettings& base,
    const std::vector<AblationArm>& arms, const EvalOptions& opt = {});

}  // namespace xemb::harness
