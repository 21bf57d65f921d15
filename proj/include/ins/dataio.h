// Copyright Contributors to the INS Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "ins/fields.h"
#include "ins/sampling.h"

namespace ins {

// Decoded image, values in [0,1], row-major [H][W][C]. channels: 1 gray,
// 3 RGB, 4 RGBA.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> data;

  double& at(int row, int col, int ch) {
    return data[(static_cast<size_t>(row) * width + col) * channels + ch];
  }
  double at(int row, int col, int ch) const {
    return data[(static_cast<size_t>(row) * width + col) * channels + ch];
  }
  static Image make(int height, int width, int channels);
};

Image load_png(const std::string& path);
void save_png_rgb8(const std::string& path, const Image& img);
// Single-channel 16-bit grayscale; input values clamped to [0,1].
void save_png_gray16(const std::string& path, const Image& img);

// Channel-major [3, H*W] tensor for the feature extractor / losses.
Tensor image_to_chw(const Image& img);
Image chw_to_image(const Tensor& chw, int height, int width);
// Pixel-major [H*W, 3] tensor (render targets).
Tensor image_to_rows(const Image& img);

// RGBA over a constant background; 3-channel images pass through.
Image composite_background(const Image& img, const Vec3& background);
// Aspect-preserving resize (bilinear) followed by a center crop to side^2.
Image resize_square(const Image& img, int side);

struct PosedImageSet {
  std::vector<Image> images;  // RGB in [0,1], background already composited
  std::vector<Camera> cameras;
  std::vector<Image> masks;  // empty or one binary mask per image
  std::vector<std::string> names;
  double t_near = 2.0;
  double t_far = 6.0;
};

// transforms_{split}.json convention: camera_angle_x plus frames[] with
// file_path and a 4x4 transform_matrix. RGBA composites onto white.
PosedImageSet load_blender_scene(const std::string& directory,
                                 const std::string& split = "train");
// Same layout plus masks/<frame>.png, thresholded at 0.5; black background.
PosedImageSet load_masked_scene(const std::string& directory,
                                const std::string& split = "train");

struct StyleImage {
  std::string id;
  Image image;       // square, side = StyleSet::resolution
  StyleCode code;
};

struct StyleSet {
  std::vector<StyleImage> styles;
  int resolution = 256;

  int count() const { return static_cast<int>(styles.size()); }
};

// Images decoded, resized to resolution^2, paired with e_1..e_n in path
// order (style order defines code order).
StyleSet load_styles(const std::vector<std::string>& paths, int n, int resolution = 256);

struct Frame {
  Image color;  // RGB
  Image depth;  // single channel, metric units
};

// frame_%04d.png (8-bit color) + depth_%04d.png (16-bit gray, normalized by
// `far`) + depth_meta.json recording the scale. Returns written paths.
std::vector<std::string> write_frames(const std::vector<Frame>& frames,
                                      const std::string& directory, double far);

}  // namespace ins
