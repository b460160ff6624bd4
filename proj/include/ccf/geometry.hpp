#pragma once

#include <array>
#include <optional>
#include <utility>

#include <Eigen/Dense>

namespace ccf {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Camera-frame depths at or below this count as behind the image plane.
inline constexpr double kEpsDepth = 1e-3;

// Pinhole camera. World frame is right-handed with z up; camera frame is
// z forward, x right, y down. rotation maps world to camera: p_cam = R p + t.
struct CameraModel {
  Mat3 intrinsics = Mat3::Identity();
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  int height = 0;
  int width = 0;

  void validate() const;  // throws std::invalid_argument
  Vec3 camera_center() const { return -rotation.transpose() * translation; }

  bool operator==(const CameraModel&) const = default;
};

// Axis-aligned image-plane box, pixel units, x right, y down.
struct Box2D {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;
  double score = 1.0;
  int class_id = 0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  Vec2 center() const {
    return {0.5 * (x_min + x_max), 0.5 * (y_min + y_max)};
  }
};

// Oriented box in world frame: size = (length, width, height), yaw about +z.
struct Box3D {
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Ones();
  double yaw = 0.0;
  double score = 1.0;
  int class_id = 0;

  std::array<Vec3, 8> corners() const;
};

struct PixelDepth {
  Vec2 pixel;
  double depth;
};

// Wraps to (-pi, pi].
double wrap_angle(double a);

// Centered-principal-point camera, handy default for tests and simulation.
CameraModel make_camera(double focal, int height, int width,
                        const Mat3& rotation = Mat3::Identity(),
                        const Vec3& translation = Vec3::Zero());

// Absent when the point is behind the camera (z_cam <= kEpsDepth) or lands
// outside the half-open pixel bounds [0, W) x [0, H).
std::optional<PixelDepth> project_point(const CameraModel& cam, const Vec3& p);

// True when p projects strictly inside box and its depth lies within range.
bool frustum_contains(const CameraModel& cam, const Box2D& box,
                      std::pair<double, double> depth_range, const Vec3& p);

// Axis-aligned hull of the projected corners, clipped to the image. Edges
// crossing the image plane are cut at z = kEpsDepth. Absent when every
// corner is behind the camera or the hull misses the image entirely.
std::optional<Box2D> project_box3d(const CameraModel& cam, const Box3D& box);

// Inverse of project_point at a given camera-frame depth. Throws
// std::invalid_argument when depth <= 0.
Vec3 backproject(const CameraModel& cam, const Vec2& pixel, double depth);

double iou_2d(const Box2D& a, const Box2D& b);

// Camera-frame depth of a world point (no visibility check).
inline double camera_depth(const CameraModel& cam, const Vec3& p) {
  return (cam.rotation * p + cam.translation).z();
}

// True when p lies inside box grown by margin on every side.
bool box3d_contains(const Box3D& box, const Vec3& p, double margin = 0.0);

}  // namespace ccf
