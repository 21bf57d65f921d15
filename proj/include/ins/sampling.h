// Copyright Contributors to the INS Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "ins/rendering.h"
#include "ins/rng.h"

namespace ins {

// Pinhole camera, Blender convention: camera space looks along -z, +x right,
// +y up; pose maps camera to world.
struct Camera {
  std::array<double, 16> pose{};  // row-major 4x4 camera-to-world
  double focal = 0.0;             // pixels
  int width = 0;
  int height = 0;

  void validate() const;  // rotation orthonormal within 1e-4, focal > 0
  Vec3 translation() const;
};

// Rays through pixel centers; near/far taken from arguments (scene config).
RayBatch camera_rays(const Camera& camera, const std::vector<std::pair<int, int>>& pixels,
                     double t_near, double t_far);

struct PatchSpec {
  int side = 64;    // K: patch side in pixels
  int stride = 4;   // s
  int row = 0;      // top-left anchor
  int col = 0;
};

// Strided K x K pixel grid with a uniformly random anchor. Ray count is K^2
// regardless of stride; the footprint (K-1)*s+1 must fit inside the image.
std::vector<std::pair<int, int>> stride_patch(int height, int width, int side, int stride,
                                              Rng& rng, PatchSpec* chosen = nullptr);

// Row-major normalized coordinates; corners map to +/-1 exactly, degenerate
// axes to 0. Pairs are (row_norm, col_norm).
Tensor pixel_grid(int height, int width);  // [H*W, 2]

}  // namespace ins
