#include "raydet/scenes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "raydet/errors.hpp"
#include "raydet/losses.hpp"
#include "raydet/rng.hpp"

namespace raydet {

DepthSpace Scene::depth_space(int n_bins, Strategy strategy) const {
  double z_max = room.diagonal();
  double nearest = z_max;
  for (std::size_t v = 0; v < views.size(); ++v) {
    std::vector<double> depths = gt_depth_map(*this, int(v), z_max);
    for (double d : depths)
      if (d < nearest) nearest = d;
  }
  double z_min = nearest < z_max ? 0.9 * nearest : 0.1 * z_max;
  return DepthSpace(z_min, z_max, n_bins, strategy);
}

namespace {

Pose look_at(const Vec3& eye, const Vec3& target) {
  Vec3 forward = normalized(target - eye);  // camera +z
  Vec3 down{0, 0, -1};                      // image y points down in world
  Vec3 y_cam = down - forward * dot(down, forward);
  if (norm(y_cam) < 1e-9) y_cam = Vec3{0, 1, 0};  // looking straight up/down
  y_cam = normalized(y_cam);
  Vec3 x_cam = cross(y_cam, forward);  // right-handed: x = y cross z
  Pose pose;
  pose.rotation = Mat3::from_cols(x_cam, y_cam, forward);
  pose.translation = eye;
  return pose;
}

}  // namespace

Scene generate_scene(const SceneSpec& spec) {
  if (spec.class_count < 1 || spec.view_count < 1)
    throw std::invalid_argument("generate_scene: class/view counts must be >= 1");
  Scene scene;
  scene.seed = spec.seed;
  scene.n_classes = spec.class_count;
  scene.room = Aabb{{-spec.room_half_x, -spec.room_half_y, 0.0},
                    {spec.room_half_x, spec.room_half_y, spec.room_height}};
  Rng rng(spec.seed, streams::kSceneGen);

  const double inner_x = 0.45 * spec.room_half_x;
  const double inner_y = 0.45 * spec.room_half_y;
  const double margin = 0.05;
  for (int b = 0; b < spec.box_count; ++b) {
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      LabeledBox lb;
      lb.box.size = {rng.uniform(spec.box_min_size, spec.box_max_size),
                     rng.uniform(spec.box_min_size, spec.box_max_size),
                     rng.uniform(spec.box_min_size, spec.box_max_size)};
      double cx = rng.uniform(-inner_x, inner_x);
      double cy = rng.uniform(-inner_y, inner_y);
      double cz = rng.next_double() < 0.7
                      ? lb.box.size.z / 2.0
                      : rng.uniform(lb.box.size.z / 2.0,
                                    spec.room_height - lb.box.size.z / 2.0);
      lb.box.center = {cx, cy, cz};
      lb.box.cls = int(rng.next_below(std::uint64_t(spec.class_count)));
      lb.color = {rng.uniform(0.05, 0.7), rng.uniform(0.05, 0.7),
                  rng.uniform(0.05, 0.7)};
      Aabb grown{lb.box.aabb().lo - Vec3{margin, margin, margin},
                 lb.box.aabb().hi + Vec3{margin, margin, margin}};
      bool overlaps = false;
      for (const LabeledBox& other : scene.boxes) {
        Aabb o = other.box.aabb();
        bool disjoint = grown.hi.x <= o.lo.x || o.hi.x <= grown.lo.x ||
                        grown.hi.y <= o.lo.y || o.hi.y <= grown.lo.y ||
                        grown.hi.z <= o.lo.z || o.hi.z <= grown.lo.z;
        if (!disjoint) {
          overlaps = true;
          break;
        }
      }
      if (!overlaps) {
        scene.boxes.push_back(lb);
        placed = true;
      }
    }
    if (!placed) throw std::runtime_error("generate_scene: box placement failed");
  }

  const double ring = 0.85 * std::min(spec.room_half_x, spec.room_half_y);
  for (int v = 0; v < spec.view_count; ++v) {
    double angle = 2.0 * M_PI * double(v) / double(spec.view_count) +
                   rng.uniform(-0.05, 0.05);
    double height = spec.room_height * (spec.camera_height_frac + rng.uniform(-0.08, 0.08));
    Vec3 eye{ring * std::cos(angle), ring * std::sin(angle), height};
    Vec3 target{rng.uniform(-0.25, 0.25), rng.uniform(-0.25, 0.25),
                spec.room_height * 0.3 + rng.uniform(0.0, 0.2)};
    View view;
    view.cam.width = spec.image_width;
    view.cam.height = spec.image_height;
    view.cam.fx = view.cam.fy = 0.72 * spec.image_width;
    view.cam.cx = spec.image_width / 2.0;
    view.cam.cy = spec.image_height / 2.0;
    view.pose = look_at(eye, target);
    scene.views.push_back(view);
  }
  return scene;
}

LabeledPointSet surface_point_set(const Scene& scene, double spacing) {
  // cell-centered grids per face: no point lies exactly on a box edge, so
  // silhouette pixels are not claimed by geometrically ambiguous samples
  LabeledPointSet out;
  for (const LabeledBox& lb : scene.boxes) {
    Aabb box = lb.box.aabb();
    Vec3 size = box.size();
    for (int axis = 0; axis < 3; ++axis) {
      int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
      int n1 = std::max(1, int(std::ceil(size[a1] / spacing)));
      int n2 = std::max(1, int(std::ceil(size[a2] / spacing)));
      for (int side = 0; side < 2; ++side) {
        for (int i = 0; i < n1; ++i)
          for (int j = 0; j < n2; ++j) {
            Vec3 p;
            p[axis] = side ? box.hi[axis] : box.lo[axis];
            p[a1] = box.lo[a1] + size[a1] * (double(i) + 0.5) / double(n1);
            p[a2] = box.lo[a2] + size[a2] * (double(j) + 0.5) / double(n2);
            out.points.push_back(p);
            out.labels.push_back(lb.box.cls);
          }
      }
    }
  }
  return out;
}

namespace {

struct Hit {
  double depth;
  int box;
};

// nearest box entry along the pixel ray, or no value
std::optional<Hit> nearest_hit(const Scene& scene, const Ray& ray) {
  std::optional<Hit> best;
  for (std::size_t b = 0; b < scene.boxes.size(); ++b) {
    auto hit = ray_box_intersect(ray, scene.boxes[b].box.aabb());
    if (!hit) continue;
    if (!best || hit->entry < best->depth) best = Hit{hit->entry, int(b)};
  }
  return best;
}

}  // namespace

std::vector<double> gt_depth_map(const Scene& scene, int view_index, double z_max) {
  const View& view = scene.views.at(view_index);
  std::vector<double> out(std::size_t(view.cam.width) * view.cam.height, z_max);
  for (int y = 0; y < view.cam.height; ++y)
    for (int x = 0; x < view.cam.width; ++x) {
      Ray ray = pixel_to_ray(view.cam, view.pose, double(x), double(y));
      auto hit = nearest_hit(scene, ray);
      if (hit && hit->depth < z_max) out[std::size_t(y) * view.cam.width + x] = hit->depth;
    }
  return out;
}

std::vector<int> gt_semantic_map(const Scene& scene, int view_index) {
  const View& view = scene.views.at(view_index);
  std::vector<int> out(std::size_t(view.cam.width) * view.cam.height,
                       scene.background_label());
  for (int y = 0; y < view.cam.height; ++y)
    for (int x = 0; x < view.cam.width; ++x) {
      Ray ray = pixel_to_ray(view.cam, view.pose, double(x), double(y));
      auto hit = nearest_hit(scene, ray);
      if (hit) out[std::size_t(y) * view.cam.width + x] = scene.boxes[hit->box].box.cls;
    }
  return out;
}

Image gt_color_map(const Scene& scene, int view_index) {
  const View& view = scene.views.at(view_index);
  Image img(view.cam.width, view.cam.height, 3);
  for (int y = 0; y < view.cam.height; ++y)
    for (int x = 0; x < view.cam.width; ++x) {
      Ray ray = pixel_to_ray(view.cam, view.pose, double(x), double(y));
      auto hit = nearest_hit(scene, ray);
      Vec3 c = hit ? scene.boxes[hit->box].color : scene.background;
      for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = c[ch];
    }
  return img;
}

std::vector<int> project_semantics(const LabeledPointSet& points, const View& view,
                                   double claim_window) {
  std::vector<int> out(std::size_t(view.cam.width) * view.cam.height, kIgnoreLabel);
  std::vector<double> zbuf(out.size(), std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < points.points.size(); ++i) {
    auto pd = world_to_pixel(view.cam, view.pose, points.points[i]);
    if (!pd) continue;
    int u = int(std::lround(pd->u));
    int v = int(std::lround(pd->v));
    if (u < 0 || u >= view.cam.width || v < 0 || v >= view.cam.height) continue;
    if (std::abs(pd->u - u) > claim_window || std::abs(pd->v - v) > claim_window)
      continue;
    std::size_t px = std::size_t(v) * view.cam.width + u;
    if (pd->depth < zbuf[px]) {  // strict: ties keep the earlier point
      zbuf[px] = pd->depth;
      out[px] = points.labels[i];
    }
  }
  return out;
}

void save_scene(const Scene& scene, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw io_error("cannot write scene: " + path);
  os.precision(17);
  os << "raydet-scene 1\n";
  os << "seed " << scene.seed << "\n";
  os << "room " << scene.room.lo.x << " " << scene.room.lo.y << " " << scene.room.lo.z
     << " " << scene.room.hi.x << " " << scene.room.hi.y << " " << scene.room.hi.z
     << "\n";
  os << "background " << scene.background.x << " " << scene.background.y << " "
     << scene.background.z << "\n";
  os << "classes " << scene.n_classes << "\n";
  os << "boxes " << scene.boxes.size() << "\n";
  for (const LabeledBox& lb : scene.boxes) {
    os << "box " << lb.box.center.x << " " << lb.box.center.y << " " << lb.box.center.z
       << " " << lb.box.size.x << " " << lb.box.size.y << " " << lb.box.size.z << " "
       << lb.box.cls << " " << lb.color.x << " " << lb.color.y << " " << lb.color.z
       << "\n";
  }
  os << "views " << scene.views.size() << "\n";
  for (const View& v : scene.views) {
    os << "view " << v.cam.fx << " " << v.cam.fy << " " << v.cam.cx << " " << v.cam.cy
       << " " << v.cam.width << " " << v.cam.height;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) os << " " << v.pose.rotation(r, c);
      os << " " << v.pose.translation[r];
    }
    os << "\n";
  }
  if (!os) throw io_error("scene write failed: " + path);
}

Scene load_scene(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw io_error("cannot read scene: " + path);
  std::string tag;
  int version = 0;
  is >> tag >> version;
  if (tag != "raydet-scene" || version != 1) throw io_error("bad scene header: " + path);
  Scene scene;
  std::size_t n_boxes = 0, n_views = 0;
  is >> tag >> scene.seed;
  is >> tag >> scene.room.lo.x >> scene.room.lo.y >> scene.room.lo.z >>
      scene.room.hi.x >> scene.room.hi.y >> scene.room.hi.z;
  is >> tag >> scene.background.x >> scene.background.y >> scene.background.z;
  is >> tag >> scene.n_classes;
  is >> tag >> n_boxes;
  for (std::size_t i = 0; i < n_boxes; ++i) {
    LabeledBox lb;
    is >> tag >> lb.box.center.x >> lb.box.center.y >> lb.box.center.z >>
        lb.box.size.x >> lb.box.size.y >> lb.box.size.z >> lb.box.cls >> lb.color.x >>
        lb.color.y >> lb.color.z;
    scene.boxes.push_back(lb);
  }
  is >> tag >> n_views;
  for (std::size_t i = 0; i < n_views; ++i) {
    View v;
    is >> tag >> v.cam.fx >> v.cam.fy >> v.cam.cx >> v.cam.cy >> v.cam.width >>
        v.cam.height;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) is >> v.pose.rotation(r, c);
      is >> v.pose.translation[r];
    }
    scene.views.push_back(v);
  }
  if (!is) throw io_error("truncated scene file: " + path);
  return scene;
}

}  // namespace raydet
