// Copyright Contributors to the INS Project
// SPDX-License-Identifier: Apache-2.0

#include "ins/sampling.h"

#include <cmath>

namespace ins {

void Camera::validate() const {
  if (!(focal > 0.0)) throw DataError("camera focal length must be positive");
  if (width < 1 || height < 1) throw DataError("camera image size must be positive");
  // Rotation block orthonormality: R^T R = I within 1e-4.
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 3; ++k) dot += pose[static_cast<size_t>(4 * k + i)] * pose[static_cast<size_t>(4 * k + j)];
      const double expect = i == j ? 1.0 : 0.0;
      if (std::abs(dot - expect) > 1e-4)
        throw DataError("camera rotation block is not orthonormal");
    }
}

Vec3 Camera::translation() const { return {pose[3], pose[7], pose[11]}; }

RayBatch camera_rays(const Camera& camera, const std::vector<std::pair<int, int>>& pixels,
                     double t_near, double t_far) {
  camera.validate();
  RayBatch batch;
  batch.rays.reserve(pixels.size());
  batch.pixels = pixels;
  const Vec3 origin = camera.translation();
  for (const auto& [row, col] : pixels) {
    if (row < 0 || row >= camera.height || col < 0 || col >= camera.width)
      throw ArgumentError("pixel (" + std::to_string(row) + "," + std::to_string(col) +
                          ") outside image bounds");
    // Pixel centers; principal point at the image center.
    const double u = (static_cast<double>(col) + 0.5 - 0.5 * camera.width) / camera.focal;
    const double v = -(static_cast<double>(row) + 0.5 - 0.5 * camera.height) / camera.focal;
    const Vec3 cam_dir{u, v, -1.0};
    Vec3 d{0.0, 0.0, 0.0};
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 3; ++k)
        d[static_cast<size_t>(i)] += camera.pose[static_cast<size_t>(4 * i + k)] * cam_dir[static_cast<size_t>(k)];
    const double norm = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    Ray ray;
    ray.origin = origin;
    ray.dir = {d[0] / norm, d[1] / norm, d[2] / norm};
    ray.t_near = t_near;
    ray.t_far = t_far;
    batch.rays.push_back(ray);
  }
  return batch;
}

std::vector<std::pair<int, int>> stride_patch(int height, int width, int side, int stride,
                                              Rng& rng, PatchSpec* chosen) {
  if (side < 1 || stride < 1) throw ArgumentError("stride_patch: side and stride must be >= 1");
  const int extent = (side - 1) * stride + 1;
  if (extent > height || extent > width) {
    const int max_s = side > 1 ? (std::min(height, width) - 1) / (side - 1) : 1;
    throw ArgumentError("strided footprint " + std::to_string(extent) +
                        " exceeds image (max feasible stride " + std::to_string(max_s) + ")");
  }
  const int row0 = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(height - extent + 1)));
  const int col0 = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(width - extent + 1)));
  if (chosen != nullptr) *chosen = PatchSpec{side, stride, row0, col0};
  std::vector<std::pair<int, int>> grid;
  grid.reserve(static_cast<size_t>(side) * static_cast<size_t>(side));
  for (int m = 0; m < side; ++m)
    for (int n = 0; n < side; ++n) grid.emplace_back(row0 + m * stride, col0 + n * stride);
  return grid;
}

Tensor pixel_grid(int height, int width) {
  if (height < 1 || width < 1) throw ArgumentError("pixel_grid: degenerate image");
  Tensor grid({height * width, 2});
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      const int64_t i = static_cast<int64_t>(r) * width + c;
      grid[i * 2] = height > 1 ? -1.0 + 2.0 * static_cast<double>(r) / (height - 1) : 0.0;
      grid[i * 2 + 1] = width > 1 ? -1.0 + 2.0 * static_cast<double>(c) / (width - 1) : 0.0;
    }
  return grid;
}

}  // namespace ins
