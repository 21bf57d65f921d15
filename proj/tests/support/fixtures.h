// Copyright Contributors to the INS Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ins/dataio.h"
#include "ins/sampling.h"

namespace ins::testing {

// Smooth deterministic content image: low-frequency color ramps plus a disc,
// easy for a SIREN to fit quickly.
inline Image fixture_image(int height, int width) {
  Image img = Image::make(height, width, 3);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      const double y = static_cast<double>(r) / (height - 1);
      const double x = static_cast<double>(c) / (width - 1);
      const double d = std::hypot(x - 0.6, y - 0.35);
      img.at(r, c, 0) = 0.5 + 0.45 * std::sin(2.0 * M_PI * x) * std::cos(M_PI * y);
      img.at(r, c, 1) = 0.25 + 0.6 * y;
      img.at(r, c, 2) = d < 0.22 ? 0.85 : 0.2 + 0.3 * x;
    }
  return img;
}

// Strongly textured style images with distinct Gram statistics per variant.
inline Image style_texture(int side, int variant) {
  Image img = Image::make(side, side, 3);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      const double y = static_cast<double>(r) / side;
      const double x = static_cast<double>(c) / side;
      if (variant % 2 == 0) {
        const double s = 0.5 + 0.5 * std::sin(24.0 * M_PI * y + 3.0 * std::sin(6.0 * M_PI * x));
        img.at(r, c, 0) = s;
        img.at(r, c, 1) = 0.8 * (1.0 - s);
        img.at(r, c, 2) = 0.15;
      } else {
        const bool check = (static_cast<int>(x * 10) + static_cast<int>(y * 10)) % 2 == 0;
        img.at(r, c, 0) = check ? 0.1 : 0.9;
        img.at(r, c, 1) = check ? 0.2 : 0.85;
        img.at(r, c, 2) = check ? 0.95 : 0.3;
      }
    }
  return img;
}

struct SphereHit {
  bool hit = false;
  double t = 0.0;
  Vec3 normal{0, 0, 0};
};

inline SphereHit intersect_unit_sphere(const Vec3& o, const Vec3& d) {
  const double b = o[0] * d[0] + o[1] * d[1] + o[2] * d[2];
  const double c = o[0] * o[0] + o[1] * o[1] + o[2] * o[2] - 1.0;
  const double disc = b * b - c;
  SphereHit hit;
  if (disc < 0.0) return hit;
  const double t = -b - std::sqrt(disc);
  if (t <= 0.0) return hit;
  hit.hit = true;
  hit.t = t;
  for (int i = 0; i < 3; ++i) hit.normal[static_cast<size_t>(i)] = o[static_cast<size_t>(i)] + t * d[static_cast<size_t>(i)];
  return hit;
}

inline Camera orbit_camera(int index, int count, int res, double radius = 4.0,
                           double camera_angle_x = 0.6) {
  const double az = 2.0 * M_PI * index / count;
  const double el = 0.35 + 0.25 * (index % 3);  // upper hemisphere
  const Vec3 eye{radius * std::cos(el) * std::cos(az), radius * std::cos(el) * std::sin(az),
                 radius * std::sin(el)};
  Vec3 back{eye[0], eye[1], eye[2]};
  const double bn = std::hypot(back[0], std::hypot(back[1], back[2]));
  for (auto& v : back) v /= bn;
  const Vec3 up_world{0.0, 0.0, 1.0};
  Vec3 right{up_world[1] * back[2] - up_world[2] * back[1],
             up_world[2] * back[0] - up_world[0] * back[2],
             up_world[0] * back[1] - up_world[1] * back[0]};
  const double rn = std::hypot(right[0], std::hypot(right[1], right[2]));
  for (auto& v : right) v /= rn;
  const Vec3 up{back[1] * right[2] - back[2] * right[1], back[2] * right[0] - back[0] * right[2],
                back[0] * right[1] - back[1] * right[0]};
  Camera cam;
  cam.width = res;
  cam.height = res;
  cam.focal = 0.5 * res / std::tan(0.5 * camera_angle_x);
  for (int r = 0; r < 3; ++r) {
    cam.pose[static_cast<size_t>(4 * r)] = right[static_cast<size_t>(r)];
    cam.pose[static_cast<size_t>(4 * r + 1)] = up[static_cast<size_t>(r)];
    cam.pose[static_cast<size_t>(4 * r + 2)] = back[static_cast<size_t>(r)];
    cam.pose[static_cast<size_t>(4 * r + 3)] = eye[static_cast<size_t>(r)];
  }
  cam.pose[15] = 1.0;
  return cam;
}

// Analytic colored unit sphere on a white background, rendered through the
// same pinhole model the trainers use.
inline PosedImageSet sphere_scene(int views, int res, bool with_masks = false) {
  PosedImageSet set;
  set.t_near = 2.0;
  set.t_far = 6.0;
  for (int v = 0; v < views; ++v) {
    Camera cam = orbit_camera(v, views, res);
    std::vector<std::pair<int, int>> pixels;
    for (int r = 0; r < res; ++r)
      for (int c = 0; c < res; ++c) pixels.emplace_back(r, c);
    RayBatch rays = camera_rays(cam, pixels, set.t_near, set.t_far);
    Image img = Image::make(res, res, 3);
    Image mask = Image::make(res, res, 1);
    for (size_t i = 0; i < rays.rays.size(); ++i) {
      const auto& [r, c] = pixels[i];
      const SphereHit hit = intersect_unit_sphere(rays.rays[i].origin, rays.rays[i].dir);
      if (hit.hit) {
        for (int ch = 0; ch < 3; ++ch)
          img.at(r, c, ch) = 0.5 * (hit.normal[static_cast<size_t>(ch)] + 1.0);
        mask.at(r, c, 0) = 1.0;
      } else {
        const bool dark = with_masks;  // black background for masked scenes
        for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = dark ? 0.0 : 1.0;
      }
    }
    set.images.push_back(std::move(img));
    set.cameras.push_back(cam);
    set.names.push_back("view_" + std::to_string(v));
    if (with_masks) set.masks.push_back(std::move(mask));
  }
  return set;
}

// Writes a sphere_scene to disk in the transforms-JSON layout (plus masks/
// when requested) so the loaders and CLI can consume it.
inline void write_sphere_scene(const std::string& dir, int views, int res,
                               bool with_masks = false) {
  namespace fs = std::filesystem;
  PosedImageSet set = sphere_scene(views, res, with_masks);
  fs::create_directories(fs::path(dir) / "train");
  if (with_masks) fs::create_directories(fs::path(dir) / "masks");
  nlohmann::json j;
  j["camera_angle_x"] = 0.6;
  j["near"] = set.t_near;
  j["far"] = set.t_far;
  j["frames"] = nlohmann::json::array();
  for (size_t v = 0; v < set.images.size(); ++v) {
    char name[32];
    std::snprintf(name, sizeof(name), "r_%02zu", v);
    const std::string rel = std::string("train/") + name;
    save_png_rgb8((fs::path(dir) / (rel + ".png")).string(), set.images[v]);
    if (with_masks) {
      Image m8 = Image::make(set.masks[v].height, set.masks[v].width, 3);
      for (int r = 0; r < m8.height; ++r)
        for (int c = 0; c < m8.width; ++c)
          for (int ch = 0; ch < 3; ++ch) m8.at(r, c, ch) = set.masks[v].at(r, c, 0);
      save_png_rgb8((fs::path(dir) / "masks" / (std::string(name) + ".png")).string(), m8);
    }
    nlohmann::json frame;
    frame["file_path"] = rel;
    nlohmann::json rows = nlohmann::json::array();
    for (int r = 0; r < 4; ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (int c = 0; c < 4; ++c) row.push_back(set.cameras[v].pose[static_cast<size_t>(4 * r + c)]);
      rows.push_back(row);
    }
    frame["transform_matrix"] = rows;
    j["frames"].push_back(frame);
  }
  std::ofstream out((fs::path(dir) / "transforms_train.json").string());
  out << j.dump(1) << "\n";
}

inline StyleSet make_style_set(int n, int resolution = 64) {
  StyleSet set;
  set.resolution = resolution;
  for (int i = 0; i < n; ++i) {
    StyleImage s;
    s.id = "tex" + std::to_string(i);
    s.image = style_texture(resolution, i);
    s.code = StyleCode::one_hot(n, i);
    set.styles.push_back(std::move(s));
  }
  return set;
}

inline double image_psnr(const Image& a, const Image& b) {
  double mse = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.data.size());
  if (mse <= 0.0) return 99.0;
  return -10.0 * std::log10(mse);
}

}  // namespace ins::testing
