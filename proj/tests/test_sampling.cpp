// Copyright Contributors to the INS Project
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <set>

#include "ins/sampling.h"

using namespace ins;

namespace {

Camera identity_camera(int size = 9, double focal = 50.0) {
  Camera cam;
  cam.pose = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
  cam.focal = focal;
  cam.width = size;
  cam.height = size;
  return cam;
}

}  // namespace

TEST_CASE("camera_rays: principal-point pixel looks down -z, origins at pose translation") {
  Camera cam = identity_camera(9);  // odd size: center pixel sits on the axis
  RayBatch batch = camera_rays(cam, {{4, 4}}, 2.0, 6.0);
  CHECK(batch.rays[0].dir[0] == doctest::Approx(0.0));
  CHECK(batch.rays[0].dir[1] == doctest::Approx(0.0));
  CHECK(batch.rays[0].dir[2] == doctest::Approx(-1.0));

  Camera moved = cam;
  moved.pose[3] = 1.5;
  moved.pose[7] = -2.0;
  moved.pose[11] = 0.75;
  RayBatch shifted = camera_rays(moved, {{0, 0}, {8, 8}, {3, 5}}, 2.0, 6.0);
  for (const Ray& r : shifted.rays) {
    CHECK(r.origin[0] == doctest::Approx(1.5));
    CHECK(r.origin[1] == doctest::Approx(-2.0));
    CHECK(r.origin[2] == doctest::Approx(0.75));
  }
  // Translation equivariance: directions unchanged.
  RayBatch base = camera_rays(cam, {{0, 0}, {8, 8}, {3, 5}}, 2.0, 6.0);
  for (size_t i = 0; i < base.rays.size(); ++i)
    for (int c = 0; c < 3; ++c)
      CHECK(std::abs(base.rays[i].dir[static_cast<size_t>(c)] -
                     shifted.rays[i].dir[static_cast<size_t>(c)]) < 1e-6);
}

TEST_CASE("camera_rays: unit directions and bounds checks") {
  Camera cam = identity_camera(7, 11.0);
  std::vector<std::pair<int, int>> pixels;
  for (int r = 0; r < 7; ++r)
    for (int c = 0; c < 7; ++c) pixels.emplace_back(r, c);
  RayBatch batch = camera_rays(cam, pixels, 1.0, 5.0);
  for (const Ray& r : batch.rays) {
    const double n = std::hypot(r.dir[0], std::hypot(r.dir[1], r.dir[2]));
    CHECK(std::abs(n - 1.0) < 1e-6);
  }
  CHECK_THROWS_AS(camera_rays(cam, {{7, 0}}, 1.0, 5.0), ArgumentError);
  CHECK_THROWS_AS(camera_rays(cam, {{0, -1}}, 1.0, 5.0), ArgumentError);

  Camera skewed = cam;
  skewed.pose[0] = 2.0;  // non-orthonormal rotation
  CHECK_THROWS_AS(camera_rays(skewed, {{0, 0}}, 1.0, 5.0), DataError);
}

TEST_CASE("stride_patch: footprint arithmetic, anchors, and K^2 coordinates") {
  Rng rng(5);
  PatchSpec spec;
  // H=W=400, K=64, s=4: footprint 253, anchors in [0,147].
  for (int trial = 0; trial < 50; ++trial) {
    auto grid = stride_patch(400, 400, 64, 4, rng, &spec);
    CHECK(grid.size() == 64 * 64);
    CHECK(spec.row >= 0);
    CHECK(spec.row <= 147);
    CHECK(spec.col >= 0);
    CHECK(spec.col <= 147);
    CHECK(grid.front() == std::pair<int, int>(spec.row, spec.col));
    CHECK(grid.back() == std::pair<int, int>(spec.row + 63 * 4, spec.col + 63 * 4));
    for (const auto& [r, c] : grid) {
      CHECK(r >= 0);
      CHECK(r < 400);
      CHECK(c >= 0);
      CHECK(c < 400);
    }
  }

  // s=1 degenerates to a contiguous patch.
  auto tight = stride_patch(10, 10, 3, 1, rng, &spec);
  std::set<std::pair<int, int>> expect;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) expect.emplace(spec.row + r, spec.col + c);
  CHECK(std::set<std::pair<int, int>>(tight.begin(), tight.end()) == expect);

  // Footprint 253 > 100: error mentioning the max feasible stride.
  try {
    stride_patch(100, 100, 64, 4, rng);
    FAIL("expected ArgumentError");
  } catch (const ArgumentError& e) {
    CHECK(std::string(e.what()).find("max feasible stride") != std::string::npos);
  }
}

TEST_CASE("pixel_grid corners, centers, and degenerate axes") {
  Tensor g2 = pixel_grid(2, 2);
  CHECK(g2[0] == -1.0);
  CHECK(g2[1] == -1.0);
  CHECK(g2[2] == -1.0);
  CHECK(g2[3] == 1.0);
  CHECK(g2[4] == 1.0);
  CHECK(g2[5] == -1.0);
  CHECK(g2[6] == 1.0);
  CHECK(g2[7] == 1.0);

  Tensor g1 = pixel_grid(1, 1);
  CHECK(g1[0] == 0.0);
  CHECK(g1[1] == 0.0);

  Tensor g3 = pixel_grid(3, 3);
  CHECK(g3[4 * 2] == 0.0);      // middle row
  CHECK(g3[4 * 2 + 1] == 0.0);  // middle col

  CHECK_THROWS_AS(pixel_grid(0, 4), ArgumentError);
}
