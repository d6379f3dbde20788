#pragma once

#include <optional>

#include "raydet/vecmath.hpp"

namespace raydet {

// Pinhole intrinsics. Integer pixel (u, v) samples the image plane at
// (u + 0.5, v + 0.5); world frame is right-handed and the camera looks
// down +z, with image x right and image y down.
struct CameraIntrinsics {
  double fx = 0, fy = 0;
  double cx = 0, cy = 0;
  int width = 0, height = 0;

  bool valid() const {
    return fx > 0 && fy > 0 && cx >= 0 && cx < width && cy >= 0 && cy < height;
  }
};

// Camera-to-world pose: rotation columns are the camera axes expressed in
// world coordinates, translation is the camera center.
struct Pose {
  Mat3 rotation;
  Vec3 translation;

  // Orthonormal with determinant +1, both to 1e-9.
  bool valid(double tol = 1e-9) const {
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double d = dot(rotation.col(i), rotation.col(j)) - (i == j ? 1.0 : 0.0);
        if (std::abs(d) > tol) return false;
      }
    return std::abs(rotation.determinant() - 1.0) <= tol;
  }
};

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit length

  Vec3 at(double t) const { return origin + direction * t; }
};

struct Aabb {
  Vec3 lo, hi;

  Vec3 center() const { return (lo + hi) * 0.5; }
  Vec3 size() const { return hi - lo; }
  double diagonal() const { return norm(hi - lo); }
  bool contains(const Vec3& p) const {
    return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y && p.z >= lo.z &&
           p.z <= hi.z;
  }
};

struct PixelDepth {
  double u = 0, v = 0;  // continuous pixel coordinates (integer-pixel convention)
  double depth = 0;     // camera-frame z in meters
};

struct RayHit {
  double entry = 0;
  double exit = 0;
};

// Ray through continuous pixel coordinate px = (u, v); the actual sample
// point on the image plane is (u + 0.5, v + 0.5). Throws std::out_of_range
// for pixels outside [-0.5, dim - 0.5].
Ray pixel_to_ray(const CameraIntrinsics& cam, const Pose& pose, double u, double v);

// Projects a world point. Returns nullopt when the camera-frame z is <= 0
// (behind or on the camera plane); depth is camera-frame z, not distance
// along the ray.
std::optional<PixelDepth> world_to_pixel(const CameraIntrinsics& cam, const Pose& pose,
                                         const Vec3& point);

// Inverse of world_to_pixel: the world point at camera-frame depth z seen
// through pixel (u, v).
Vec3 point_from_pixel_depth(const CameraIntrinsics& cam, const Pose& pose, double u,
                            double v, double depth);

// Slab intersection. Entry clamps to 0 when the origin is inside the box;
// a miss is a value, not an error.
std::optional<RayHit> ray_box_intersect(const Ray& ray, const Aabb& box);

}  // namespace raydet
