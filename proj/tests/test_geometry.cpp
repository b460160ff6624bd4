#include <cmath>
#include <stdexcept>

#include "doctest.h"

#include "ccf/geometry.hpp"

using namespace ccf;

TEST_CASE("project_point hand values") {
  const CameraModel cam = make_camera(100.0, 200, 200);
  const auto pd = project_point(cam, Vec3(1, 2, 10));
  REQUIRE(pd.has_value());
  CHECK(pd->pixel.x() == doctest::Approx(110.0).epsilon(1e-12));
  CHECK(pd->pixel.y() == doctest::Approx(120.0).epsilon(1e-12));
  CHECK(pd->depth == doctest::Approx(10.0).epsilon(1e-12));
}

TEST_CASE("project_point rejects behind-camera and out-of-image points") {
  const CameraModel cam = make_camera(100.0, 200, 200);
  CHECK_FALSE(project_point(cam, Vec3(0, 0, -5)).has_value());
  CHECK_FALSE(project_point(cam, Vec3(0, 0, 0)).has_value());
  CHECK_FALSE(project_point(cam, Vec3(30, 0, 10)).has_value());
  // Half-open bounds: u = 200 is out, u = 0 is in.
  CHECK_FALSE(project_point(cam, Vec3(10, 0, 10)).has_value());
  const auto edge = project_point(cam, Vec3(-10, 0, 10));
  REQUIRE(edge.has_value());
  CHECK(edge->pixel.x() == doctest::Approx(0.0));
}

TEST_CASE("camera_depth ignores visibility") {
  const CameraModel cam = make_camera(100.0, 200, 200);
  CHECK(camera_depth(cam, Vec3(500, 0, 10)) == doctest::Approx(10.0));
  CHECK(camera_depth(cam, Vec3(0, 0, -3)) == doctest::Approx(-3.0));
}

TEST_CASE("box corners recover center and extent") {
  Box3D box;
  box.center = Vec3(1, -2, 3);
  box.size = Vec3(4, 2, 1.5);
  box.yaw = 0.0;
  const auto cs = box.corners();
  Vec3 mean = Vec3::Zero(), lo = cs[0], hi = cs[0];
  for (const Vec3& c : cs) {
    mean += c / 8.0;
    lo = lo.cwiseMin(c);
    hi = hi.cwiseMax(c);
  }
  CHECK((mean - box.center).norm() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(((hi - lo) - box.size).norm() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("unit cube hull hand values") {
  const CameraModel cam = make_camera(100.0, 200, 200);
  Box3D box;
  box.center = Vec3(0, 0, 10);
  box.size = Vec3(2, 2, 2);
  const auto hull = project_box3d(cam, box);
  REQUIRE(hull.has_value());
  // Near face at z=9 bounds the hull: 100 +- 100/9.
  CHECK(hull->x_min == doctest::Approx(800.0 / 9.0).epsilon(1e-12));
  CHECK(hull->x_max == doctest::Approx(1000.0 / 9.0).epsilon(1e-12));
  CHECK(hull->y_min == doctest::Approx(800.0 / 9.0).epsilon(1e-12));
  CHECK(hull->y_max == doctest::Approx(1000.0 / 9.0).epsilon(1e-12));
}

TEST_CASE("yaw-pi hull matches yaw-0 hull") {
  const CameraModel cam = make_camera(100.0, 200, 200);
  Box3D box;
  box.center = Vec3(0.4, -0.3, 12);
  box.size = Vec3(3, 1.5, 2);
  box.yaw = 0.0;
  Box3D flipped = box;
  flipped.yaw = M_PI;
  const auto a = project_box3d(cam, box);
  const auto b = project_box3d(cam, flipped);
  REQUIRE(a.has_value());
  REQUIRE(b.has_value());
  CHECK(std::abs(a->x_min - b->x_min) < 1e-9);
  CHECK(std::abs(a->x_max - b->x_max) < 1e-9);
  CHECK(std::abs(a->y_min - b->y_min) < 1e-9);
  CHECK(std::abs(a->y_max - b->y_max) < 1e-9);
}

TEST_CASE("box behind the camera has no hull") {
  const CameraModel cam = make_camera(100.0, 200, 200);
  Box3D box;
  box.center = Vec3(0, 0, -10);
  box.size = Vec3(2, 2, 2);
  CHECK_FALSE(project_box3d(cam, box).has_value());
}

TEST_CASE("box straddling the image plane keeps a clipped hull") {
  const CameraModel cam = make_camera(100.0, 200, 200);
  Box3D box;
  box.center = Vec3(0, 0, 0.5);
  box.size = Vec3(1, 1, 2);  // spans z in [-0.5, 1.5]
  const auto hull = project_box3d(cam, box);
  REQUIRE(hull.has_value());
  // Clip plane at kEpsDepth blows the projection up to the full image.
  CHECK(hull->x_min == doctest::Approx(0.0));
  CHECK(hull->x_max == doctest::Approx(200.0));
}

TEST_CASE("backproject round-trips through project_point") {
  const Mat3 rot =
      Eigen::AngleAxisd(0.3, Vec3(1, 2, 3).normalized()).toRotationMatrix();
  const CameraModel cam = make_camera(120.0, 300, 400, rot, Vec3(0.2, -0.4, 0.1));
  const Vec2 pixel(37.25, 101.5);
  const double depth = 9.75;
  const Vec3 p = backproject(cam, pixel, depth);
  const auto pd = project_point(cam, p);
  REQUIRE(pd.has_value());
  CHECK((pd->pixel - pixel).norm() < 1e-9);
  CHECK(std::abs(pd->depth - depth) < 1e-9);
}

TEST_CASE("backproject rejects non-positive depth") {
  const CameraModel cam = make_camera(100.0, 200, 200);
  CHECK_THROWS_AS(backproject(cam, Vec2(100, 100), 0.0), std::invalid_argument);
  CHECK_THROWS_AS(backproject(cam, Vec2(100, 100), -1.0), std::invalid_argument);
}

TEST_CASE("frustum_contains checks box and depth range") {
  const CameraModel cam = make_camera(100.0, 200, 200);
  Box2D box;
  box.x_min = 90;
  box.y_min = 90;
  box.x_max = 130;
  box.y_max = 130;
  CHECK(frustum_contains(cam, box, {5.0, 15.0}, Vec3(1, 2, 10)));
  CHECK_FALSE(frustum_contains(cam, box, {5.0, 15.0}, Vec3(1, 2, 20)));
  CHECK_FALSE(frustum_contains(cam, box, {5.0, 15.0}, Vec3(-5, 2, 10)));
  CHECK_THROWS_AS(frustum_contains(cam, box, {5.0, 5.0}, Vec3(1, 2, 10)),
                  std::invalid_argument);
}

TEST_CASE("wrap_angle lands in (-pi, pi]") {
  CHECK(wrap_angle(M_PI) == doctest::Approx(M_PI));
  CHECK(wrap_angle(-M_PI) == doctest::Approx(M_PI));
  CHECK(wrap_angle(3 * M_PI) == doctest::Approx(M_PI));
  CHECK(wrap_angle(M_PI + 0.1) == doctest::Approx(-M_PI + 0.1));
  CHECK(wrap_angle(-3.5 * M_PI) == doctest::Approx(0.5 * M_PI));
  for (double a : {-7.3, -0.2, 0.0, 1.9, 12.4}) {
    CHECK(wrap_angle(a + 4 * M_PI) == doctest::Approx(wrap_angle(a)));
    CHECK(wrap_angle(a) > -M_PI);
    CHECK(wrap_angle(a) <= M_PI);
  }
}

TEST_CASE("iou_2d hand values") {
  Box2D a{0, 0, 2, 2};
  Box2D b{1, 0, 3, 2};
  Box2D c{5, 5, 6, 6};
  CHECK(iou_2d(a, a) == doctest::Approx(1.0));
  CHECK(iou_2d(a, b) == doctest::Approx(1.0 / 3.0));
  CHECK(iou_2d(a, c) == doctest::Approx(0.0));
}

TEST_CASE("box3d_contains respects yaw and margin") {
  Box3D box;
  box.size = Vec3(4, 2, 2);
  box.yaw = 0.5 * M_PI;  // long axis now along world y
  CHECK(box3d_contains(box, Vec3(0, 1.9, 0)));
  CHECK_FALSE(box3d_contains(box, Vec3(1.9, 0, 0)));
  CHECK(box3d_contains(box, Vec3(1.2, 0, 0), 0.8));
  CHECK_FALSE(box3d_contains(box, Vec3(0, 0, 1.2)));
  CHECK(box3d_contains(box, Vec3(0, 0, 1.2), 0.3));
}

TEST_CASE("camera validate rejects malformed models") {
  CameraModel good = make_camera(100.0, 200, 200);
  CHECK_NOTHROW(good.validate());

  CameraModel bad = good;
  bad.intrinsics(0, 0) = -1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  bad = good;
  bad.intrinsics(2, 2) = 2.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  bad = good;
  bad.rotation *= 1.1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  bad = good;
  bad.rotation = Vec3(1, 1, -1).asDiagonal();  // reflection
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  bad = good;
  bad.height = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
