#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "raydet/config.hpp"
#include "raydet/losses.hpp"
#include "raydet/model.hpp"
#include "raydet/params.hpp"
#include "raydet/scenes.hpp"

namespace raydet {

enum class DepthLossMode { None, L1, Huber, Ordinal };

DepthLossMode depth_mode_from_name(const std::string& name);
const char* depth_mode_name(DepthLossMode mode);

struct TrainConfig {
  int iterations = 2000;
  int rays_per_batch = 32;
  double learning_rate = 0.02;
  double momentum = 0.9;
  std::uint64_t seed = 0;

  int depth_bins = 64;  // N
  Strategy strategy = Strategy::LnIS;
  int coarse_samples = 32;
  bool fine_enabled = true;
  int fine_samples = 16;

  DepthLossMode depth_mode = DepthLossMode::Ordinal;
  double huber_delta = 1.0;
  bool depth_normalize = false;
  bool semantic_enabled = true;
  LossWeights weights;

  ModelConfig model;
  int det_voxels_per_iter = 256;  // 0 = every voxel, else positives + sampled negatives
  double nms_iou = 0.25;
  double det_score_threshold = 0.01;
  int heldout_every = 4;  // view index % heldout_every == 0 is evaluation-only
  std::string sem_source = "projected";  // projected | raycast supervision maps
  int threads = 1;

  static TrainConfig from_config(const KeyValueConfig& kv);
};

// Everything derivable from a scene that training reuses across iterations.
struct SceneCache {
  Scene scene;
  DepthSpace ds;
  GridSpec grid;
  std::vector<int> train_views, heldout_views;
  std::vector<CameraIntrinsics> train_cams;
  std::vector<Pose> train_poses;
  std::vector<Image> train_images;
  std::vector<Tensor> patch_tables;
  BackprojectTable bp_table;
  Tensor voxel_pe;
  VoxelTargets targets;
  std::vector<int> visible_voxels;     // back-projection hit count > 0
  std::vector<int> visible_positives;  // positives restricted to visible
  std::vector<Image> color_maps;               // all views
  std::vector<std::vector<double>> depth_maps; // all views
  std::vector<std::vector<int>> sem_train;     // supervision labels (may hold ignores)
  std::vector<std::vector<int>> sem_eval;      // ray-cast labels

  SceneCache(Scene s, const TrainConfig& cfg, const Model& model);
  bool occupied(const Vec3& p) const;
};

// One iteration's sampling decisions. Derived quantities that depend on the
// current parameters (fine depths, the depth-loss mask) are captured on the
// first forward pass so repeated evaluations of the same plan are a pure
// function of the parameters; training uses a fresh plan per iteration.
struct StepPlan {
  int scene = 0;
  int view = 0;
  std::vector<int> pixels;
  std::vector<double> coarse_t;  // rays * coarse_samples
  std::uint64_t fine_seed = 0;
  std::vector<double> fine_t;  // merged coarse+fine depths once filled
  bool fine_filled = false;
  std::vector<double> depth_mask;
  bool mask_filled = false;
  int depth_excluded = 0;
  std::vector<int> det_voxels;
};

struct Metrics {
  double psnr = 0.0;
  double depth_rmse_near = 0.0;
  double depth_rmse_far = 0.0;
  double sem_acc = 0.0;
  double map25 = 0.0;
  double map50 = 0.0;
  bool map_defined = false;

  std::string to_text() const;
};

class Trainer {
 public:
  Trainer(std::vector<Scene> scenes, const TrainConfig& config);

  StepPlan make_plan(Rng& rng);
  // Builds the full objective for the plan; returns the total-loss node and
  // fills the report. Throws divergence_error on a non-finite term.
  nn::NodeId forward_loss(nn::Tape& tape, StepPlan& plan, LossReport* report);

  LossReport train_step();
  // Runs the configured iterations; log_sink receives one deterministic
  // line per iteration, wall_sink the per-iteration wall time in micros.
  void train(const std::function<void(const std::string&)>& log_sink = nullptr,
             const std::function<void(double)>& wall_sink = nullptr);

  Metrics evaluate(const std::string& dump_dir = "", bool oracle_bypass = false);

  void save_checkpoint(const std::string& path) const;
  void load_checkpoint(const std::string& path);

  nn::ParamStore& store() { return store_; }
  const TrainConfig& config() const { return cfg_; }
  int iteration() const { return iteration_; }
  const std::vector<SceneCache>& caches() const { return caches_; }
  Rng& loop_rng() { return rng_; }

  static std::string log_line(int iteration, const LossReport& report);

 private:
  FeatureVolume eval_volume(const SceneCache& cache);

  TrainConfig cfg_;
  Model model_;
  nn::ParamStore store_;
  nn::SgdOptimizer opt_;
  std::vector<SceneCache> caches_;
  Rng rng_;
  int iteration_ = 0;
  double loss_sums_[6] = {0, 0, 0, 0, 0, 0};
  double loss_count_ = 0.0;
};

}  // namespace raydet
