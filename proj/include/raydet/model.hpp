#pragma once

#include <vector>

#include "raydet/detect.hpp"
#include "raydet/featvol.hpp"
#include "raydet/mlp.hpp"
#include "raydet/renderer.hpp"
#include "raydet/scenes.hpp"

namespace raydet {

struct ModelConfig {
  int n_classes = 4;     // object classes; semantic width is n_classes + 1
  int feat_channels = 8; // C
  int pe_x = 6;          // positional-encoding frequencies for positions
  int pe_d = 4;          // and view directions
  int hidden = 32;       // head hidden width
  int hidden_layers = 2;
  int h_dim = 16;        // geometry hidden feature width
  int det_hidden = 32;
  int grid_nx = 40, grid_ny = 40, grid_nz = 16;
  double voxel_edge = 0.16;
  double sigma_bias = 0.0;  // initial density-row bias of the geometry heads

  int sem_width() const { return n_classes + 1; }
  int pe_x_width() const { return nn::positional_width(3, pe_x); }
  int pe_d_width() const { return nn::positional_width(3, pe_d); }
};

// Head outputs for a batch of sample columns.
struct HeadNodes {
  nn::NodeId sigma;       // [1, B], softplus
  nn::NodeId hidden;      // [h_dim, B]
  nn::NodeId color;       // [3, B], sigmoid
  nn::NodeId sem_logits;  // [K+1, B]
};

// The density/color/semantic heads, a coarse and an optionally used fine
// copy, the stride-4 feature extractor, and the detection head. Parameters
// are created on demand in a ParamStore.
class Model {
 public:
  explicit Model(const ModelConfig& config);

  const ModelConfig& config() const { return cfg_; }
  void ensure_params(nn::ParamStore& store) const;

  // Geometry-anchored voxel grid covering the room bounds.
  GridSpec grid_for_room(const Aabb& room) const;

  // Heads over a sample batch: pe_x/pe_d are encoded constants, feat is the
  // per-sample volume feature node. fine selects the fine sub-network.
  HeadNodes build_heads(nn::Tape& tape, nn::ParamStore& store, nn::NodeId pe_x,
                        nn::NodeId pe_d, nn::NodeId feat, bool fine) const;

  // Extractor + back-projection for one scene's view set.
  nn::NodeId build_volume(nn::Tape& tape, nn::ParamStore& store,
                          const std::vector<Tensor>& patch_tables,
                          const BackprojectTable& table, int n_voxels) const;

  // Opacity-gated detection head over the given voxel subset; voxel_pe is
  // the positional encoding of their centers. Output rows: K+1 class
  // logits, 3 center offsets, 3 log sizes.
  nn::NodeId build_det_head(nn::Tape& tape, nn::ParamStore& store, nn::NodeId volume,
                            const std::vector<int>& voxels, const Tensor& voxel_pe,
                            double voxel_edge) const;

  // Plain-value helpers (forward only).
  FeatureVolume compute_volume(nn::ParamStore& store, const std::vector<Image>& images,
                               const std::vector<CameraIntrinsics>& cams,
                               const std::vector<Pose>& poses,
                               const GridSpec& grid) const;
  double opacity_at(nn::ParamStore& store, const FeatureVolume& volume,
                    const Vec3& point) const;
  FeatureVolume gate_volume(nn::ParamStore& store, const FeatureVolume& volume) const;
  Tensor det_head_values(nn::ParamStore& store, const FeatureVolume& volume) const;

  const Extractor& extractor() const { return extractor_; }
  const nn::Mlp& phi_g(bool fine) const { return fine ? fine_g_ : coarse_g_; }
  const nn::Mlp& phi_c(bool fine) const { return fine ? fine_c_ : coarse_c_; }
  const nn::Mlp& phi_s(bool fine) const { return fine ? fine_s_ : coarse_s_; }
  const nn::Mlp& det_head() const { return det_head_; }

 private:
  ModelConfig cfg_;
  Extractor extractor_;
  nn::Mlp coarse_g_, coarse_c_, coarse_s_;
  nn::Mlp fine_g_, fine_c_, fine_s_;
  nn::Mlp det_head_;
};

// Renders a trained model through the generic view renderer.
class ModelField : public SampleField {
 public:
  ModelField(const Model& model, nn::ParamStore& store, const FeatureVolume& volume,
             bool fine)
      : model_(model), store_(store), volume_(volume), fine_(fine) {}

  int n_classes() const override { return model_.config().sem_width(); }
  void evaluate(const double* points, const double* dirs, int count,
                SampleOutput* out) const override;

 private:
  const Model& model_;
  nn::ParamStore& store_;
  const FeatureVolume& volume_;
  bool fine_;
};

// Analytic density plug-in: constant sigma inside labeled boxes, zero
// outside, flat box colors and near-one-hot class logits.
class AnalyticBoxField : public SampleField {
 public:
  AnalyticBoxField(const Scene& scene, double sigma_inside)
      : scene_(scene), sigma_(sigma_inside) {}

  int n_classes() const override { return scene_.n_classes + 1; }
  void evaluate(const double* points, const double* dirs, int count,
                SampleOutput* out) const override;

 private:
  const Scene& scene_;
  double sigma_;
};

}  // namespace raydet
