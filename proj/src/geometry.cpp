#include "ccf/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace ccf {

void CameraModel::validate() const {
  const Mat3& K = intrinsics;
  if (!(K(0, 0) > 0) || !(K(1, 1) > 0))
    throw std::invalid_argument("camera: non-positive focal length");
  if (K(1, 0) != 0 || K(2, 0) != 0 || K(2, 1) != 0)
    throw std::invalid_argument("camera: intrinsics must be upper triangular");
  if (K(2, 2) != 1)
    throw std::invalid_argument("camera: intrinsics (2,2) must be 1");
  if ((rotation * rotation.transpose() - Mat3::Identity()).norm() > 1e-9)
    throw std::invalid_argument("camera: rotation not orthonormal");
  if (std::abs(rotation.determinant() - 1.0) > 1e-9)
    throw std::invalid_argument("camera: rotation not proper");
  if (height <= 0 || width <= 0)
    throw std::invalid_argument("camera: non-positive image size");
}

std::array<Vec3, 8> Box3D::corners() const {
  std::array<Vec3, 8> out;
  const double c = std::cos(yaw), s = std::sin(yaw);
  int k = 0;
  for (int ix : {-1, 1})
    for (int iy : {-1, 1})
      for (int iz : {-1, 1}) {
        const double lx = 0.5 * size.x() * ix;
        const double ly = 0.5 * size.y() * iy;
        const double lz = 0.5 * size.z() * iz;
        out[k++] = center + Vec3(c * lx - s * ly, s * lx + c * ly, lz);
      }
  return out;
}

double wrap_angle(double a) {
  const double two_pi = 2.0 * M_PI;
  a = std::fmod(a, two_pi);
  if (a <= -M_PI) a += two_pi;
  if (a > M_PI) a -= two_pi;
  return a;
}

CameraModel make_camera(double focal, int height, int width,
                        const Mat3& rotation, const Vec3& translation) {
  CameraModel cam;
  cam.intrinsics << focal, 0, 0.5 * width, 0, focal, 0.5 * height, 0, 0, 1;
  cam.rotation = rotation;
  cam.translation = translation;
  cam.height = height;
  cam.width = width;
  return cam;
}

std::optional<PixelDepth> project_point(const CameraModel& cam,
                                        const Vec3& p) {
  const Vec3 pc = cam.rotation * p + cam.translation;
  if (pc.z() <= kEpsDepth) return std::nullopt;
  const Vec3 uvw = cam.intrinsics * pc;
  const Vec2 uv(uvw.x() / pc.z(), uvw.y() / pc.z());
  if (uv.x() < 0 || uv.x() >= cam.width || uv.y() < 0 || uv.y() >= cam.height)
    return std::nullopt;
  return PixelDepth{uv, pc.z()};
}

bool frustum_contains(const CameraModel& cam, const Box2D& box,
                      std::pair<double, double> depth_range, const Vec3& p) {
  if (!(depth_range.first < depth_range.second))
    throw std::invalid_argument("frustum_contains: empty depth range");
  const auto pd = project_point(cam, p);
  if (!pd) return false;
  const Vec2& uv = pd->pixel;
  if (!(uv.x() > box.x_min && uv.x() < box.x_max && uv.y() > box.y_min &&
        uv.y() < box.y_max))
    return false;
  return pd->depth >= depth_range.first && pd->depth <= depth_range.second;
}

std::optional<Box2D> project_box3d(const CameraModel& cam, const Box3D& box) {
  const auto corners = box.corners();
  std::array<Vec3, 8> cc;  // camera frame
  int n_front = 0;
  for (int i = 0; i < 8; ++i) {
    cc[i] = cam.rotation * corners[i] + cam.translation;
    if (cc[i].z() > kEpsDepth) ++n_front;
  }
  if (n_front == 0) return std::nullopt;

  std::vector<Vec3> pts;
  pts.reserve(20);
  for (int i = 0; i < 8; ++i)
    if (cc[i].z() > kEpsDepth) pts.push_back(cc[i]);

  // Cut box edges crossing the image plane at z = kEpsDepth so partially
  // visible boxes keep a finite hull.
  static const int kEdges[12][2] = {{0, 1}, {2, 3}, {4, 5}, {6, 7},
                                    {0, 2}, {1, 3}, {4, 6}, {5, 7},
                                    {0, 4}, {1, 5}, {2, 6}, {3, 7}};
  for (const auto& e : kEdges) {
    const Vec3 &a = cc[e[0]], &b = cc[e[1]];
    const bool fa = a.z() > kEpsDepth, fb = b.z() > kEpsDepth;
    if (fa == fb) continue;
    const double s = (a.z() - kEpsDepth) / (a.z() - b.z());
    pts.push_back(a + s * (b - a));
  }

  double u0 = std::numeric_limits<double>::infinity(), v0 = u0;
  double u1 = -u0, v1 = -u0;
  for (const Vec3& pc : pts) {
    const Vec3 uvw = cam.intrinsics * pc;
    const double u = uvw.x() / pc.z(), v = uvw.y() / pc.z();
    u0 = std::min(u0, u);
    v0 = std::min(v0, v);
    u1 = std::max(u1, u);
    v1 = std::max(v1, v);
  }

  Box2D out;
  out.x_min = std::max(0.0, u0);
  out.y_min = std::max(0.0, v0);
  out.x_max = std::min(double(cam.width), u1);
  out.y_max = std::min(double(cam.height), v1);
  out.score = box.score;
  out.class_id = box.class_id;
  if (!(out.x_min < out.x_max) || !(out.y_min < out.y_max))
    return std::nullopt;  // hull misses the image
  return out;
}

Vec3 backproject(const CameraModel& cam, const Vec2& pixel, double depth) {
  if (!(depth > 0)) throw std::invalid_argument("backproject: depth <= 0");
  const Vec3 uv1(pixel.x(), pixel.y(), 1.0);
  const Vec3 ray = cam.intrinsics.triangularView<Eigen::Upper>().solve(uv1);
  const Vec3 pc = depth * ray;
  return cam.rotation.transpose() * (pc - cam.translation);
}

double iou_2d(const Box2D& a, const Box2D& b) {
  const double ix = std::max(
      0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const double iy = std::max(
      0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

bool box3d_contains(const Box3D& box, const Vec3& p, double margin) {
  const double c = std::cos(-box.yaw), s = std::sin(-box.yaw);
  const Vec3 d = p - box.center;
  const double lx = c * d.x() - s * d.y();
  const double ly = s * d.x() + c * d.y();
  return std::abs(lx) <= 0.5 * box.size.x() + margin &&
         std::abs(ly) <= 0.5 * box.size.y() + margin &&
         std::abs(d.z()) <= 0.5 * box.size.z() + margin;
}

}  // namespace ccf
