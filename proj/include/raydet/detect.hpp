#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "raydet/featvol.hpp"
#include "raydet/geometry.hpp"

namespace raydet {

struct Box3D {
  Vec3 center{};
  Vec3 size{};  // positive extents, meters
  int cls = 0;
  double score = 1.0;

  Aabb aabb() const {
    return Aabb{center - size * 0.5, center + size * 0.5};
  }
};

struct DetectionSet {
  int scene_id = 0;
  std::vector<Box3D> boxes;  // sorted by descending score after nms()
};

double iou_aabb(const Box3D& a, const Box3D& b);

// Greedy per-class suppression by descending score.
DetectionSet nms(const DetectionSet& dets, double iou_threshold);

// Per-voxel training targets: background voxels carry label = n_classes,
// positives the smallest-volume ground-truth box containing the voxel
// center (ties broken by class id, then box index).
struct VoxelTargets {
  std::vector<int> cls;              // n_voxels
  std::vector<double> center_offset; // 3 per voxel, voxel units
  std::vector<double> log_size;      // 3 per voxel
  std::vector<int> positives;        // indices of positive voxels
};

VoxelTargets assign_voxel_targets(const std::vector<Box3D>& gt, const GridSpec& grid,
                                  int n_classes);

// Decodes head outputs (rows: n_classes+1 logits, 3 offsets, 3 log-sizes
// per voxel column) into scored boxes, keeping per-voxel argmax classes
// above `score_threshold`.
std::vector<Box3D> decode_head_output(const Tensor& head_out, const GridSpec& grid,
                                      int n_classes, double score_threshold);

struct ApResult {
  std::map<int, double> ap_per_class;  // classes present in ground truth
  double map = 0.0;
  bool defined = false;  // false when no ground truth exists at all
};

// Greedy highest-score matching per class (each ground-truth box matched at
// most once), all-point interpolated area under precision-recall, mAP as
// the unweighted mean over classes present in the ground truth.
ApResult evaluate_map(const std::vector<DetectionSet>& detections,
                      const std::vector<std::vector<Box3D>>& ground_truth,
                      double iou_threshold);

// Structured-text dump, one file per scene:
//   raydet-detections 1
//   scene <id>
//   count <M>
//   det cx cy cz sx sy sz class score
void save_detections(const DetectionSet& dets, const std::string& path);
DetectionSet load_detections(const std::string& path);

}  // namespace raydet
