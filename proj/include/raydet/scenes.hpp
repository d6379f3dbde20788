#pragma once

#include <string>
#include <vector>

#include "raydet/depthspace.hpp"
#include "raydet/detect.hpp"
#include "raydet/featvol.hpp"
#include "raydet/geometry.hpp"

namespace raydet {

struct LabeledBox {
  Box3D box;  // score unused
  Vec3 color{};
};

struct View {
  CameraIntrinsics cam;
  Pose pose;
};

// Flat-colored boxes in an empty room, cameras on an inward-facing ring.
// All ground truth is analytic.
struct Scene {
  Aabb room;
  Vec3 background{0.85, 0.85, 0.88};
  int n_classes = 0;  // object classes; label n_classes is background
  std::vector<LabeledBox> boxes;
  std::vector<View> views;
  std::uint64_t seed = 0;

  int background_label() const { return n_classes; }
  // z_min = 0.9 x nearest hit over all views, z_max = room diagonal.
  DepthSpace depth_space(int n_bins, Strategy strategy) const;
};

struct SceneSpec {
  double room_half_x = 2.6, room_half_y = 2.6, room_height = 2.6;
  int box_count = 5;
  int class_count = 4;
  int view_count = 20;
  int image_width = 64, image_height = 64;
  double box_min_size = 0.35, box_max_size = 1.0;  // per-axis extents
  double camera_height_frac = 0.55;                // of room height
  std::uint64_t seed = 0;
};

// Rejection-samples non-overlapping boxes (<= 1000 attempts each, then a
// generation error) and places view_count cameras on a ring looking at the
// room center. Deterministic per seed.
Scene generate_scene(const SceneSpec& spec);

struct LabeledPointSet {
  std::vector<Vec3> points;
  std::vector<int> labels;
};

// Deterministic grid sampling of every box surface at the given spacing.
LabeledPointSet surface_point_set(const Scene& scene, double spacing);

// Per-pixel nearest box-entry depth along the ray, z_max where nothing is
// hit. Depths are distances along the unit ray direction.
std::vector<double> gt_depth_map(const Scene& scene, int view_index, double z_max);

// Per-pixel class of the nearest hit box, background label where no hit.
std::vector<int> gt_semantic_map(const Scene& scene, int view_index);

Image gt_color_map(const Scene& scene, int view_index);

// Z-buffered nearest-point splat of a labeled point set; pixels no point
// lands in carry kIgnoreLabel (from losses.hpp, -1). Depth ties keep the
// lower point index. A point only claims a pixel when it projects within
// +-claim_window cells of the pixel center, so pixels straddling a
// silhouette stay ignored instead of guessing.
std::vector<int> project_semantics(const LabeledPointSet& points, const View& view,
                                   double claim_window = 0.25);

// Structured text, versioned header:
//   raydet-scene 1
//   seed S
//   room x0 y0 z0 x1 y1 z1
//   background r g b
//   classes K
//   boxes B
//   box cx cy cz sx sy sz class r g b     (x B)
//   views T
//   view fx fy cx cy W H r00 r01 r02 tx r10 r11 r12 ty r20 r21 r22 tz
void save_scene(const Scene& scene, const std::string& path);
Scene load_scene(const std::string& path);

}  // namespace raydet
