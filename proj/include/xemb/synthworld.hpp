// Procedural cross-embodiment demonstration world. Every demo is rendered
// from a kinematic plan computed from the task factors alone, so the same
// task rendered under two embodiments shares bitwise-identical motion and
// object annotations. Task and embodiment factors are sampled on a full
// factorial grid, making the label distributions independent by
// construction.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "xemb/rng.hpp"

namespace xemb::synth {

enum class TaskClass : int { kGrasp = 0, kPickPlace = 1, kPour = 2 };
enum class Embodiment : int {
  kFiveFinger = 0,
  kParallelJaw = 1,
  kSuction = 2,
  kThreeFinger = 3
};

constexpr int kNumTaskClasses = 3;
constexpr int kNumEmbodiments = 4;

const char* task_class_name(TaskClass c);
const char* embodiment_name(Embodiment e);

struct RenderConfig {
  int frames = 16;
  int height = 32;
  int width = 32;
  int channels = 2;  // 0: scene (background + end-effector), 1: object
  int backgrounds = 3;
  int vocab_per_class = 3;
  double ee_scale = 8.0;    // pixels
  double card_scale = 12.0;
  int supersample = 4;

  int goal_vocab() const { return vocab_per_class * kNumTaskClasses; }
  int frame_values() const { return height * width * channels; }
};

struct ObjectParams {
  bool operator==(const ObjectParams&) const = default;
  double start_x = 0, start_y = 0;
  double target_x = 0, target_y = 0;
  double start_angle = 0;  // radians
  double spin = 0;         // extra rotation over the pour profile
  int shape_id = 0;        // 0 bar, 1 ellipse, 2 triangle
  int color_id = 0;
};

struct TaskSpec {
  TaskClass task_class = TaskClass::kGrasp;
  int goal_token = 0;
  ObjectParams object;
  double spawn_x = 0, spawn_y = 0;  // end-effector entry point
  uint64_t seed = 0;

  bool operator==(const TaskSpec&) const = default;
};

struct EmbodimentSpec {
  Embodiment embodiment_id = Embodiment::kFiveFinger;
  double scale = 8.0;  // pixels
  int tint = 0;
};

// Motion layout per frame: x, y, angle, grip. Object layout: x, y, angle.
constexpr int kMotionDim = 4;
constexpr int kObjectDim = 3;

struct DemoSample {
  int n_frames = 0, height = 0, width = 0, channels = 0;
  std::vector<double> frames;       // [N, H, W, C], values in [0, 1]
  int goal_token = 0;
  std::vector<double> motion;       // [N, kMotionDim]
  std::vector<double> object_traj;  // [N, kObjectDim]
  std::vector<double> card;         // [H, W]
  int background_id = 0;
  int task_label = 0;
  int embodiment_label = 0;
  uint64_t spec_seed = 0;
  uint64_t render_seed = 0;

  bool operator==(const DemoSample&) const = default;
};

// Deterministic task sampling; `cls` empty draws the class from the seed.
TaskSpec sample_task(uint64_t seed, std::optional<TaskClass> cls,
                     const RenderConfig& cfg = {});

DemoSample render_demo(const TaskSpec& task, const EmbodimentSpec& emb,
                       int background_id, uint64_t render_seed,
                       const RenderConfig& cfg = {});

// Canonical-pose render on a blank background.
std::vector<double> embodiment_card(const EmbodimentSpec& emb,
                                    const RenderConfig& cfg = {});
// Tint-noise augmented card ("different images of the same agent").
std::vector<double> embodiment_card_noisy(const EmbodimentSpec& emb,
                                          uint64_t noise_seed,
                                          const RenderConfig& cfg = {});

// End-effector coverage for one posed frame on an arbitrary canvas; the
// canvas origin sits at (-offset_x, -offset_y) in demo pixel coordinates.
// Used by render-consistency checks that need an unclipped view.
std::vector<double> render_ee_alpha(const EmbodimentSpec& emb, double tcp_x,
                                    double tcp_y, double angle, int canvas_h,
                                    int canvas_w, double offset_x = 0,
                                    double offset_y = 0,
                                    const RenderConfig& cfg = {});

// Flat background image (the scene channel with no agent or object).
std::vector<double> background_image(int background_id, int height, int width);

// Per-frame end-effector coverage maps [N, H, W] for a demo render.
std::vector<double> demo_ee_alpha(const TaskSpec& task,
                                  const EmbodimentSpec& emb,
                                  const RenderConfig& cfg = {});

// Planar annotations lifted into the 3D-position + 6D-rotation + grip layout
// consumed by the encoders. Motion rows become (x, y, 0, r6d..., grip),
// trajectory rows (x, y, 0, r6d...), positions normalized by frame size.
constexpr int kLiftedMotionDim = 10;
constexpr int kLiftedObjectDim = 9;
std::vector<double> lift_motion(const std::vector<double>& motion, int frames,
                                const RenderConfig& cfg = {});
std::vector<double> lift_trajectory(const std::vector<double>& traj,
                                    int frames, const RenderConfig& cfg = {});

// ---------------------------------------------------------------------------
// Dataset

struct DatasetConfig {
  int seeds_per_pair = 10;  // demos per (task_class, embodiment) cell
  double train_frac = 0.7;
  double val_frac = 0.15;
  uint64_t master_seed = 1;
  RenderConfig render;
};

enum class Split : int { kTrain = 0, kVal = 1, kTest = 2 };

struct SampleMeta {
  int task = 0;
  int embodiment = 0;
  int background = 0;
  uint64_t spec_seed = 0;
  uint64_t render_seed = 0;
  Split split = Split::kTrain;
};

struct Dataset {
  DatasetConfig config;
  std::vector<DemoSample> samples;
  std::vector<SampleMeta> meta;
  std::vector<int> train_idx, val_idx, test_idx;

  const std::vector<int>& split_indices(Split s) const;
};

Dataset build_dataset(const DatasetConfig& cfg);
void write_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

void write_demo_record(const DemoSample& s, std::ostream& out);
DemoSample read_demo_record(std::istream& in);

// Chi-squared statistic of task/embodiment label independence over a split.
double label_chi2_statistic(const Dataset& ds, const std::vector<int>& idx);

// ---------------------------------------------------------------------------
// Oracle classifiers (evaluation judges, trained on ground-truth renders)

struct OracleConfig {
  int steps = 400;
  int batch = 64;
  double lr = 3e-3;
  double noise_std = 0.04;  // train-time frame noise, for robustness
  int noisy_variants = 2;
  uint64_t seed = 7;
  double min_accuracy = 0.99;
};

struct OracleVerdict {
  int task_class = -1;
  int embodiment_id = -1;
  double task_confidence = 0.0;
  double embodiment_confidence = 0.0;
  bool low_confidence = false;
};

class OracleClassifier {
 public:
  // Trains both heads on the train split and scores them on the val split.
  static OracleClassifier train(const Dataset& ds, const OracleConfig& cfg = {});

  OracleVerdict classify(const std::vector<double>& frames, int n, int h,
                         int w, int c) const;
  OracleVerdict classify(const DemoSample& s) const;

  double task_accuracy() const { return task_accuracy_; }
  double embodiment_accuracy() const { return embodiment_accuracy_; }
  bool accepted() const { return accepted_; }

  void save(const std::string& path) const;
  static OracleClassifier load(const std::string& path);

  // Feature extractors are exposed for tests.
  static std::vector<double> embodiment_features(
      const std::vector<double>& frames, int n, int h, int w, int c);
  static std::vector<double> task_features(const std::vector<double>& frames,
                                           int n, int h, int w, int c);
  static int embodiment_feature_dim();
  static int task_feature_dim();

  struct Head {
    std::vector<double> w1, b1, w2, b2;  // in -> hidden -> classes
    int input = 0, hidden = 0, classes = 0;
    std::vector<double> logits(const std::vector<double>& x) const;
  };

 private:
  Head task_head_, emb_head_;
  double task_accuracy_ = 0.0;
  double embodiment_accuracy_ = 0.0;
  bool accepted_ = false;
};

}  // namespace xemb::synth
