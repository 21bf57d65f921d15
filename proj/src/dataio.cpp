// Copyright Contributors to the INS Project
// SPDX-License-Identifier: Apache-2.0

#include "ins/dataio.h"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace ins {

Image Image::make(int height, int width, int channels) {
  Image img;
  img.width = width;
  img.height = height;
  img.channels = channels;
  img.data.assign(static_cast<size_t>(width) * height * channels, 0.0);
  return img;
}

namespace {

struct PngReadCloser {
  png_structp png = nullptr;
  png_infop info = nullptr;
  FILE* fp = nullptr;
  ~PngReadCloser() {
    if (png != nullptr) png_destroy_read_struct(&png, info != nullptr ? &info : nullptr, nullptr);
    if (fp != nullptr) std::fclose(fp);
  }
};

struct PngWriteCloser {
  png_structp png = nullptr;
  png_infop info = nullptr;
  FILE* fp = nullptr;
  ~PngWriteCloser() {
    if (png != nullptr) png_destroy_write_struct(&png, info != nullptr ? &info : nullptr);
    if (fp != nullptr) std::fclose(fp);
  }
};

}  // namespace

Image load_png(const std::string& path) {
  PngReadCloser ctx;
  ctx.fp = std::fopen(path.c_str(), "rb");
  if (ctx.fp == nullptr) throw IoError("cannot open image: " + path);
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, ctx.fp) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw DataError("not a PNG file: " + path);
  ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  ctx.info = png_create_info_struct(ctx.png);
  if (setjmp(png_jmpbuf(ctx.png))) throw DataError("undecodable image: " + path);
  png_init_io(ctx.png, ctx.fp);
  png_set_sig_bytes(ctx.png, 8);
  png_read_info(ctx.png, ctx.info);

  const int color_type = png_get_color_type(ctx.png, ctx.info);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(ctx.png);
  if (color_type == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(ctx.png, ctx.info) < 8)
    png_set_expand_gray_1_2_4_to_8(ctx.png);
  if (png_get_valid(ctx.png, ctx.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(ctx.png);
  if (color_type == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_strip_alpha(ctx.png);
  png_set_swap(ctx.png);  // 16-bit PNGs are big-endian on disk
  png_read_update_info(ctx.png, ctx.info);

  const int width = static_cast<int>(png_get_image_width(ctx.png, ctx.info));
  const int height = static_cast<int>(png_get_image_height(ctx.png, ctx.info));
  const int channels = static_cast<int>(png_get_channels(ctx.png, ctx.info));
  const int depth = static_cast<int>(png_get_bit_depth(ctx.png, ctx.info));
  if (depth != 8 && depth != 16) throw DataError("unsupported PNG bit depth in " + path);

  const size_t rowbytes = png_get_rowbytes(ctx.png, ctx.info);
  std::vector<unsigned char> raw(rowbytes * static_cast<size_t>(height));
  std::vector<png_bytep> rows(static_cast<size_t>(height));
  for (int r = 0; r < height; ++r) rows[static_cast<size_t>(r)] = raw.data() + rowbytes * static_cast<size_t>(r);
  png_read_image(ctx.png, rows.data());
  png_read_end(ctx.png, nullptr);

  Image img = Image::make(height, width, channels);
  const double scale = depth == 8 ? 1.0 / 255.0 : 1.0 / 65535.0;
  for (int r = 0; r < height; ++r) {
    const unsigned char* row = rows[static_cast<size_t>(r)];
    for (int c = 0; c < width; ++c)
      for (int ch = 0; ch < channels; ++ch) {
        const size_t idx = (static_cast<size_t>(c) * channels + ch);
        double v;
        if (depth == 8) {
          v = row[idx] * scale;
        } else {
          uint16_t u;
          std::memcpy(&u, row + idx * 2, 2);
          v = u * scale;
        }
        img.at(r, c, ch) = v;
      }
  }
  return img;
}

namespace {

void open_for_write(PngWriteCloser& ctx, const std::string& path) {
  fs::path p(path);
  if (p.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
  }
  ctx.fp = std::fopen(path.c_str(), "wb");
  if (ctx.fp == nullptr) throw IoError("cannot write image: " + path);
  ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  ctx.info = png_create_info_struct(ctx.png);
}

uint8_t quantize8(double v) {
  return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

void save_png_rgb8(const std::string& path, const Image& img) {
  if (img.channels != 3) throw ArgumentError("save_png_rgb8 expects a 3-channel image");
  PngWriteCloser ctx;
  open_for_write(ctx, path);
  if (setjmp(png_jmpbuf(ctx.png))) throw IoError("PNG encode failed: " + path);
  png_init_io(ctx.png, ctx.fp);
  png_set_IHDR(ctx.png, ctx.info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(ctx.png, ctx.info);
  std::vector<unsigned char> row(static_cast<size_t>(img.width) * 3);
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c)
      for (int ch = 0; ch < 3; ++ch)
        row[static_cast<size_t>(c) * 3 + ch] = quantize8(img.at(r, c, ch));
    png_write_row(ctx.png, row.data());
  }
  png_write_end(ctx.png, nullptr);
}

void save_png_gray16(const std::string& path, const Image& img) {
  if (img.channels != 1) throw ArgumentError("save_png_gray16 expects a 1-channel image");
  PngWriteCloser ctx;
  open_for_write(ctx, path);
  if (setjmp(png_jmpbuf(ctx.png))) throw IoError("PNG encode failed: " + path);
  png_init_io(ctx.png, ctx.fp);
  png_set_IHDR(ctx.png, ctx.info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(ctx.png, ctx.info);
  png_set_swap(ctx.png);
  std::vector<uint16_t> row(static_cast<size_t>(img.width));
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c)
      row[static_cast<size_t>(c)] =
          static_cast<uint16_t>(std::lround(std::clamp(img.at(r, c, 0), 0.0, 1.0) * 65535.0));
    png_write_row(ctx.png, reinterpret_cast<png_bytep>(row.data()));
  }
  png_write_end(ctx.png, nullptr);
}

Tensor image_to_chw(const Image& img) {
  if (img.channels != 3) throw ArgumentError("image_to_chw expects a 3-channel image");
  Tensor t({3, img.height * img.width});
  for (int ch = 0; ch < 3; ++ch)
    for (int r = 0; r < img.height; ++r)
      for (int c = 0; c < img.width; ++c)
        t[static_cast<int64_t>(ch) * img.height * img.width + static_cast<int64_t>(r) * img.width + c] =
            img.at(r, c, ch);
  return t;
}

Image chw_to_image(const Tensor& chw, int height, int width) {
  if (chw.rank() != 2 || chw.rows() != 3 || chw.cols() != height * width)
    throw ArgumentError("chw_to_image: tensor must be [3, H*W]");
  Image img = Image::make(height, width, 3);
  for (int ch = 0; ch < 3; ++ch)
    for (int r = 0; r < height; ++r)
      for (int c = 0; c < width; ++c)
        img.at(r, c, ch) = chw[static_cast<int64_t>(ch) * height * width + static_cast<int64_t>(r) * width + c];
  return img;
}

Tensor image_to_rows(const Image& img) {
  if (img.channels != 3) throw ArgumentError("image_to_rows expects a 3-channel image");
  Tensor t({img.height * img.width, 3});
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = img.data[static_cast<size_t>(i)];
  return t;
}

Image composite_background(const Image& img, const Vec3& background) {
  if (img.channels == 3) return img;
  if (img.channels != 4) throw DataError("expected RGB or RGBA image");
  Image out = Image::make(img.height, img.width, 3);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) {
      const double a = img.at(r, c, 3);
      for (int ch = 0; ch < 3; ++ch)
        out.at(r, c, ch) = img.at(r, c, ch) * a + background[static_cast<size_t>(ch)] * (1.0 - a);
    }
  return out;
}

namespace {

double sample_bilinear(const Image& img, double y, double x, int ch) {
  const int x0 = std::clamp(static_cast<int>(std::floor(x)), 0, img.width - 1);
  const int y0 = std::clamp(static_cast<int>(std::floor(y)), 0, img.height - 1);
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double fx = std::clamp(x - x0, 0.0, 1.0);
  const double fy = std::clamp(y - y0, 0.0, 1.0);
  const double top = img.at(y0, x0, ch) * (1.0 - fx) + img.at(y0, x1, ch) * fx;
  const double bot = img.at(y1, x0, ch) * (1.0 - fx) + img.at(y1, x1, ch) * fx;
  return top * (1.0 - fy) + bot * fy;
}

}  // namespace

Image resize_square(const Image& img, int side) {
  if (side < 1) throw ArgumentError("resize_square: side must be >= 1");
  // Scale the shorter side to `side`, then center-crop.
  const double scale = static_cast<double>(side) / std::min(img.width, img.height);
  const int rw = std::max(side, static_cast<int>(std::lround(img.width * scale)));
  const int rh = std::max(side, static_cast<int>(std::lround(img.height * scale)));
  const double off_x = 0.5 * (rw - side);
  const double off_y = 0.5 * (rh - side);
  Image out = Image::make(side, side, img.channels);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      // Map output pixel center into source coordinates.
      const double sy = (r + off_y + 0.5) * img.height / rh - 0.5;
      const double sx = (c + off_x + 0.5) * img.width / rw - 0.5;
      for (int ch = 0; ch < img.channels; ++ch)
        out.at(r, c, ch) = sample_bilinear(img, sy, sx, ch);
    }
  return out;
}

namespace {

json load_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing file: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("malformed JSON in " + path.string() + ": " + e.what());
  }
  return j;
}

PosedImageSet load_scene_impl(const std::string& directory, const std::string& split,
                              const Vec3& background) {
  const fs::path dir(directory);
  const fs::path tf = dir / ("transforms_" + split + ".json");
  json j = load_json_file(tf);
  if (!j.contains("camera_angle_x")) throw DataError(tf.string() + ": missing camera_angle_x");
  const double angle_x = j.at("camera_angle_x").get<double>();

  PosedImageSet set;
  if (j.contains("near")) set.t_near = j.at("near").get<double>();
  if (j.contains("far")) set.t_far = j.at("far").get<double>();

  struct FrameRec {
    std::string file_path;
    json matrix;
  };
  std::vector<FrameRec> frames;
  if (!j.contains("frames") || !j.at("frames").is_array())
    throw DataError(tf.string() + ": missing frames array");
  for (const auto& f : j.at("frames"))
    frames.push_back({f.at("file_path").get<std::string>(), f.at("transform_matrix")});
  // Order-stable loading: frames sorted by file path before pairing.
  std::sort(frames.begin(), frames.end(),
            [](const FrameRec& a, const FrameRec& b) { return a.file_path < b.file_path; });

  for (const auto& frame : frames) {
    fs::path img_path = dir / frame.file_path;
    if (!fs::exists(img_path)) img_path = dir / (frame.file_path + ".png");
    if (!fs::exists(img_path))
      throw DataError("frame " + frame.file_path + ": image file not found");
    Image raw = load_png(img_path.string());
    if (raw.channels != 3 && raw.channels != 4)
      throw DataError("frame " + frame.file_path + ": expected RGB or RGBA image");
    Image rgb = composite_background(raw, background);

    const json& m = frame.matrix;
    if (!m.is_array() || m.size() != 4)
      throw DataError("frame " + frame.file_path + ": transform_matrix must be 4x4");
    Camera cam;
    for (int r = 0; r < 4; ++r) {
      if (!m[static_cast<size_t>(r)].is_array() || m[static_cast<size_t>(r)].size() != 4)
        throw DataError("frame " + frame.file_path + ": transform_matrix must be 4x4");
      for (int c = 0; c < 4; ++c)
        cam.pose[static_cast<size_t>(4 * r + c)] = m[static_cast<size_t>(r)][static_cast<size_t>(c)].get<double>();
    }
    cam.width = rgb.width;
    cam.height = rgb.height;
    cam.focal = 0.5 * rgb.width / std::tan(0.5 * angle_x);
    // Rotation orthonormality within 1e-3, named per frame.
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 3; ++k) {
        double dot = 0.0;
        for (int r = 0; r < 3; ++r)
          dot += cam.pose[static_cast<size_t>(4 * r + i)] * cam.pose[static_cast<size_t>(4 * r + k)];
        if (std::abs(dot - (i == k ? 1.0 : 0.0)) > 1e-3)
          throw DataError("frame " + frame.file_path + ": rotation is not orthonormal");
      }

    set.images.push_back(std::move(rgb));
    set.cameras.push_back(cam);
    set.names.push_back(frame.file_path);
  }
  return set;
}

}  // namespace

PosedImageSet load_blender_scene(const std::string& directory, const std::string& split) {
  return load_scene_impl(directory, split, {1.0, 1.0, 1.0});
}

PosedImageSet load_masked_scene(const std::string& directory, const std::string& split) {
  PosedImageSet set = load_scene_impl(directory, split, {0.0, 0.0, 0.0});
  const fs::path dir(directory);
  for (size_t i = 0; i < set.images.size(); ++i) {
    const fs::path name = fs::path(set.names[i]).filename();
    fs::path mask_path = dir / "masks" / name;
    if (!fs::exists(mask_path)) mask_path = dir / "masks" / (name.string() + ".png");
    if (!fs::exists(mask_path))
      throw DataError("frame " + set.names[i] + ": mask file not found");
    Image mask = load_png(mask_path.string());
    if (mask.width != set.images[i].width || mask.height != set.images[i].height)
      throw DataError("frame " + set.names[i] + ": mask size differs from image");
    Image binary = Image::make(mask.height, mask.width, 1);
    for (int r = 0; r < mask.height; ++r)
      for (int c = 0; c < mask.width; ++c)
        binary.at(r, c, 0) = mask.at(r, c, 0) >= 0.5 ? 1.0 : 0.0;
    set.masks.push_back(std::move(binary));
  }
  return set;
}

StyleSet load_styles(const std::vector<std::string>& paths, int n, int resolution) {
  if (static_cast<int>(paths.size()) != n)
    throw ConfigError("expected " + std::to_string(n) + " style images, got " +
                      std::to_string(paths.size()));
  StyleSet set;
  set.resolution = resolution;
  for (int i = 0; i < n; ++i) {
    Image raw = load_png(paths[static_cast<size_t>(i)]);
    Image rgb = raw.channels == 1 ? Image() : composite_background(raw, {1.0, 1.0, 1.0});
    if (raw.channels == 1) {
      rgb = Image::make(raw.height, raw.width, 3);
      for (int r = 0; r < raw.height; ++r)
        for (int c = 0; c < raw.width; ++c)
          for (int ch = 0; ch < 3; ++ch) rgb.at(r, c, ch) = raw.at(r, c, 0);
    }
    StyleImage style;
    style.image = resize_square(rgb, resolution);
    style.code = StyleCode::one_hot(n, i);
    std::string id = fs::path(paths[static_cast<size_t>(i)]).stem().string();
    for (const auto& s : set.styles)
      if (s.id == id) {
        id += "_" + std::to_string(i);
        break;
      }
    style.id = id;
    set.styles.push_back(std::move(style));
  }
  return set;
}

std::vector<std::string> write_frames(const std::vector<Frame>& frames,
                                      const std::string& directory, double far) {
  std::error_code ec;
  fs::create_directories(directory, ec);
  if (!fs::is_directory(directory)) throw IoError("cannot create directory " + directory);
  std::vector<std::string> written;
  char name[32];
  for (size_t i = 0; i < frames.size(); ++i) {
    std::snprintf(name, sizeof(name), "frame_%04zu.png", i);
    const std::string color_path = (fs::path(directory) / name).string();
    save_png_rgb8(color_path, frames[i].color);
    written.push_back(color_path);
    if (frames[i].depth.channels == 1) {
      Image norm = frames[i].depth;
      for (auto& v : norm.data) v = std::clamp(v / far, 0.0, 1.0);
      std::snprintf(name, sizeof(name), "depth_%04zu.png", i);
      const std::string depth_path = (fs::path(directory) / name).string();
      save_png_gray16(depth_path, norm);
      written.push_back(depth_path);
    }
  }
  if (!frames.empty()) {
    json meta;
    meta["depth_scale"] = far;  // metric depth = pixel/65535 * depth_scale
    meta["frame_count"] = frames.size();
    meta["color_format"] = "rgb8";
    meta["depth_format"] = "gray16";
    const std::string meta_path = (fs::path(directory) / "depth_meta.json").string();
    std::ofstream out(meta_path);
    if (!out) throw IoError("cannot write " + meta_path);
    out << meta.dump(2) << "\n";
    written.push_back(meta_path);
  }
  return written;
}

}  // namespace ins
