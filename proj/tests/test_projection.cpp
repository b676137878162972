#include <catch2/catch_amalgamated.hpp>

using Catch::Approx;

#include "menagerie/projection.hpp"
#include "menagerie/rng.hpp"

using namespace menagerie;

TEST_CASE("projection matches hand-computed pinhole arithmetic") {
  PerspectiveCamera cam;
  cam.focal = 100.0;
  cam.principal_point = Vec2(256.0, 256.0);
  cam.image_width = 512;
  cam.image_height = 512;

  Points3 pts(1, 3);
  pts << 1.0, 2.0, 4.0;  // x/z = 0.25, y/z = 0.5
  const ProjectedPoints out = project(pts, cam);
  REQUIRE(out.valid[0] == 1);
  REQUIRE(out.pixels(0, 0) == Approx(256.0 + 100.0 * 0.25).margin(1e-12));
  REQUIRE(out.pixels(0, 1) == Approx(256.0 + 100.0 * 0.5).margin(1e-12));
}

TEST_CASE("points at or behind the camera are flagged invalid and zeroed") {
  PerspectiveCamera cam;
  Points3 pts(3, 3);
  pts << 1.0, 1.0, 5.0, 1.0, 1.0, 0.0, 1.0, 1.0, -2.0;
  const ProjectedPoints out = project(pts, cam);
  REQUIRE(out.valid[0] == 1);
  REQUIRE(out.valid[1] == 0);
  REQUIRE(out.valid[2] == 0);
  REQUIRE(out.pixels(1, 0) == 0.0);
  REQUIRE(out.pixels(1, 1) == 0.0);
  REQUIRE(out.pixels(2, 0) == 0.0);
  REQUIRE(out.pixels(2, 1) == 0.0);
}

TEST_CASE("projection scales linearly with focal length") {
  PerspectiveCamera cam;
  cam.principal_point = Vec2(0.0, 0.0);
  Points3 pts(1, 3);
  pts << 3.0, -2.0, 10.0;
  cam.focal = 500.0;
  const double x1 = project(pts, cam).pixels(0, 0);
  cam.focal = 1000.0;
  const double x2 = project(pts, cam).pixels(0, 0);
  REQUIRE(x2 == Approx(2.0 * x1).margin(1e-12));
}

TEST_CASE("camera and box validation reject bad values") {
  PerspectiveCamera cam;
  cam.focal = -1.0;
  REQUIRE_THROWS_AS(cam.validate(), std::invalid_argument);
  cam = PerspectiveCamera{};
  cam.image_width = 0;
  REQUIRE_THROWS_AS(cam.validate(), std::invalid_argument);

  REQUIRE(BBox{0.5, 0.5, 0.2, 0.3}.is_valid());
  REQUIRE_FALSE(BBox{0.5, 0.5, -0.1, 0.3}.is_valid());
}

TEST_CASE("bbox corner helpers agree with center-size storage") {
  const BBox b{0.5, 0.4, 0.2, 0.3};
  REQUIRE(b.x_min() == Approx(0.4).margin(1e-15));
  REQUIRE(b.x_max() == Approx(0.6).margin(1e-15));
  REQUIRE(b.y_min() == Approx(0.25).margin(1e-15));
  REQUIRE(b.y_max() == Approx(0.55).margin(1e-15));
  REQUIRE(b.area() == Approx(0.06).margin(1e-15));

  const BBox r = BBox::from_corners(0.4, 0.25, 0.6, 0.55);
  REQUIRE(r.cx == Approx(0.5).margin(1e-15));
  REQUIRE(r.cy == Approx(0.4).margin(1e-15));
  REQUIRE(r.w == Approx(0.2).margin(1e-15));
  REQUIRE(r.h == Approx(0.3).margin(1e-15));
}

TEST_CASE("tight box around projected points matches hand arithmetic") {
  PerspectiveCamera cam;  // 1024x1024 by default
  Points2 px(3, 2);
  px << 100.0, 200.0, 300.0, 150.0, 250.0, 400.0;
  const auto box = bbox_from_points(px, cam);
  REQUIRE(box.has_value());
  // Tight corners: x in [100,300], y in [150,400], normalized by 1024.
  REQUIRE(box->x_min() == Approx(100.0 / 1024.0).margin(1e-12));
  REQUIRE(box->x_max() == Approx(300.0 / 1024.0).margin(1e-12));
  REQUIRE(box->y_min() == Approx(150.0 / 1024.0).margin(1e-12));
  REQUIRE(box->y_max() == Approx(400.0 / 1024.0).margin(1e-12));
}

TEST_CASE("box respects the visibility mask and clamps to the image") {
  PerspectiveCamera cam;
  Points2 px(3, 2);
  px << -50.0, 100.0,   // sticks out of the left edge -> clamped to 0
      500.0, 200.0,     //
      9000.0, 300.0;    // masked out below
  VisibilityMask mask = {1, 1, 0};
  const auto box = bbox_from_points(px, mask, cam);
  REQUIRE(box.has_value());
  REQUIRE(box->x_min() == 0.0);  // clamped
  REQUIRE(box->x_max() == Approx(500.0 / 1024.0).margin(1e-12));
  REQUIRE(box->y_min() == Approx(100.0 / 1024.0).margin(1e-12));
  REQUIRE(box->y_max() == Approx(200.0 / 1024.0).margin(1e-12));  // masked row excluded

  const VisibilityMask none = {0, 0, 0};
  REQUIRE_FALSE(bbox_from_points(px, none, cam).has_value());
}

TEST_CASE("projection then box stays inside the unit square for random clouds") {
  PerspectiveCamera cam;
  Rng rng(404);
  for (int trial = 0; trial < 200; ++trial) {
    Points3 pts(8, 3);
    for (int i = 0; i < 8; ++i) {
      pts.row(i) << rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0), rng.uniform(0.5, 40.0);
    }
    const ProjectedPoints out = project(pts, cam);
    const auto box = bbox_from_points(out.pixels, out.valid, cam);
    REQUIRE(box.has_value());
    REQUIRE(box->x_min() >= 0.0);
    REQUIRE(box->y_min() >= 0.0);
    REQUIRE(box->x_max() <= 1.0);
    REQUIRE(box->y_max() <= 1.0);
  }
}
