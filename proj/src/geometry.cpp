#include "raydet/geometry.hpp"

#include <algorithm>
#include <stdexcept>

namespace raydet {

Ray pixel_to_ray(const CameraIntrinsics& cam, const Pose& pose, double u, double v) {
  if (u < -0.5 || u > cam.width - 0.5 || v < -0.5 || v > cam.height - 0.5)
    throw std::out_of_range("pixel_to_ray: pixel outside image bounds");
  Vec3 dir_cam{(u + 0.5 - cam.cx) / cam.fx, (v + 0.5 - cam.cy) / cam.fy, 1.0};
  return Ray{pose.translation, normalized(pose.rotation * dir_cam)};
}

std::optional<PixelDepth> world_to_pixel(const CameraIntrinsics& cam, const Pose& pose,
                                         const Vec3& point) {
  Vec3 p_cam = pose.rotation.transposed() * (point - pose.translation);
  if (p_cam.z <= 0.0) return std::nullopt;
  PixelDepth out;
  out.u = cam.fx * p_cam.x / p_cam.z + cam.cx - 0.5;
  out.v = cam.fy * p_cam.y / p_cam.z + cam.cy - 0.5;
  out.depth = p_cam.z;
  return out;
}

Vec3 point_from_pixel_depth(const CameraIntrinsics& cam, const Pose& pose, double u,
                            double v, double depth) {
  Vec3 dir_cam{(u + 0.5 - cam.cx) / cam.fx, (v + 0.5 - cam.cy) / cam.fy, 1.0};
  return pose.translation + pose.rotation * (dir_cam * depth);
}

std::optional<RayHit> ray_box_intersect(const Ray& ray, const Aabb& box) {
  double t0 = 0.0;
  double t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    double o = ray.origin[a], d = ray.direction[a];
    if (d == 0.0) {
      if (o < box.lo[a] || o > box.hi[a]) return std::nullopt;
      continue;
    }
    double inv = 1.0 / d;
    double ta = (box.lo[a] - o) * inv;
    double tb = (box.hi[a] - o) * inv;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return std::nullopt;
  }
  return RayHit{t0, t1};
}

}  // namespace raydet
