// Copyright Contributors to the INS Project
// SPDX-License-Identifier: Apache-2.0

#include "ins/config.h"

#include <fstream>
#include <set>

using nlohmann::json;

namespace ins {

void TrainConfig::validate() const {
  if (pretrain_steps < 0 || stylize_steps < 0)
    throw ConfigError("iteration counts must be non-negative");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (sdf_geometry_lr_multiplier < 0.0)
    throw ConfigError("sdf_geometry_lr_multiplier must be non-negative");
  if (rays_per_batch < 1 || samples_per_ray < 1)
    throw ConfigError("batch and sample counts must be >= 1");
  if (patch_size < 1 || patch_stride < 1) throw ConfigError("patch size/stride must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");
  weights.validate();
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object");
  for (const auto& [key, value] : j.items())
    if (known.find(key) == known.end()) throw ConfigError(path + "." + key + ": unknown key");
}

template <typename T>
void get_to(const json& j, const char* key, T& out, const std::string& path) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(out);
  } catch (const json::exception&) {
    throw ConfigError(path + "." + key + ": wrong type");
  }
}

}  // namespace

json to_json(const FieldConfig& cfg) {
  return json{{"kind", field_kind_name(cfg.kind)},
              {"style_count", cfg.style_count},
              {"cim_depth", cfg.cim_depth},
              {"cim_width", cfg.cim_width},
              {"sim_depth", cfg.sim_depth},
              {"sim_width", cfg.sim_width},
              {"am_depth", cfg.am_depth},
              {"am_width", cfg.am_width},
              {"l_pos", cfg.l_pos},
              {"l_dir", cfg.l_dir},
              {"omega0", cfg.omega0},
              {"style_density_enabled", cfg.style_density_enabled},
              {"sdf_feature_width", cfg.sdf_feature_width},
              {"sdf_init_radius", cfg.sdf_init_radius}};
}

FieldConfig field_config_from_json(const json& j, const std::string& path) {
  reject_unknown(j,
                 {"kind", "style_count", "cim_depth", "cim_width", "sim_depth", "sim_width",
                  "am_depth", "am_width", "l_pos", "l_dir", "omega0", "style_density_enabled",
                  "sdf_feature_width", "sdf_init_radius"},
                 path);
  FieldConfig cfg;
  if (j.contains("kind")) cfg.kind = field_kind_from_name(j.at("kind").get<std::string>());
  get_to(j, "style_count", cfg.style_count, path);
  get_to(j, "cim_depth", cfg.cim_depth, path);
  get_to(j, "cim_width", cfg.cim_width, path);
  get_to(j, "sim_depth", cfg.sim_depth, path);
  get_to(j, "sim_width", cfg.sim_width, path);
  get_to(j, "am_depth", cfg.am_depth, path);
  get_to(j, "am_width", cfg.am_width, path);
  get_to(j, "l_pos", cfg.l_pos, path);
  get_to(j, "l_dir", cfg.l_dir, path);
  get_to(j, "omega0", cfg.omega0, path);
  get_to(j, "style_density_enabled", cfg.style_density_enabled, path);
  get_to(j, "sdf_feature_width", cfg.sdf_feature_width, path);
  get_to(j, "sdf_init_radius", cfg.sdf_init_radius, path);
  cfg.validate();
  return cfg;
}

json to_json(const LossWeights& w) {
  return json{{"recon", w.recon},
              {"geometry", w.geometry},
              {"content", w.content},
              {"style", w.style},
              {"phase_boundary", w.phase_boundary}};
}

LossWeights loss_weights_from_json(const json& j, const std::string& path) {
  reject_unknown(j, {"recon", "geometry", "content", "style", "phase_boundary"}, path);
  LossWeights w;
  get_to(j, "recon", w.recon, path);
  get_to(j, "geometry", w.geometry, path);
  get_to(j, "content", w.content, path);
  get_to(j, "style", w.style, path);
  get_to(j, "phase_boundary", w.phase_boundary, path);
  w.validate();
  return w;
}

json to_json(const TrainConfig& cfg) {
  return json{{"pretrain_steps", cfg.pretrain_steps},
              {"stylize_steps", cfg.stylize_steps},
              {"learning_rate", cfg.learning_rate},
              {"sdf_geometry_lr_multiplier", cfg.sdf_geometry_lr_multiplier},
              {"rays_per_batch", cfg.rays_per_batch},
              {"samples_per_ray", cfg.samples_per_ray},
              {"patch_size", cfg.patch_size},
              {"patch_stride", cfg.patch_stride},
              {"weights", to_json(cfg.weights)},
              {"seed", cfg.seed},
              {"checkpoint_every", cfg.checkpoint_every},
              {"jitter_samples", cfg.jitter_samples},
              {"device", cfg.device}};
}

TrainConfig train_config_from_json(const json& j, const std::string& path) {
  reject_unknown(j,
                 {"pretrain_steps", "stylize_steps", "learning_rate",
                  "sdf_geometry_lr_multiplier", "rays_per_batch", "samples_per_ray", "patch_size",
                  "patch_stride", "weights", "seed", "checkpoint_every", "jitter_samples",
                  "device"},
                 path);
  TrainConfig cfg;
  get_to(j, "pretrain_steps", cfg.pretrain_steps, path);
  get_to(j, "stylize_steps", cfg.stylize_steps, path);
  get_to(j, "learning_rate", cfg.learning_rate, path);
  get_to(j, "sdf_geometry_lr_multiplier", cfg.sdf_geometry_lr_multiplier, path);
  get_to(j, "rays_per_batch", cfg.rays_per_batch, path);
  get_to(j, "samples_per_ray", cfg.samples_per_ray, path);
  get_to(j, "patch_size", cfg.patch_size, path);
  get_to(j, "patch_stride", cfg.patch_stride, path);
  if (j.contains("weights")) cfg.weights = loss_weights_from_json(j.at("weights"), path + ".weights");
  get_to(j, "seed", cfg.seed, path);
  get_to(j, "checkpoint_every", cfg.checkpoint_every, path);
  get_to(j, "jitter_samples", cfg.jitter_samples, path);
  get_to(j, "device", cfg.device, path);
  cfg.validate();
  return cfg;
}

void RunConfig::validate() const {
  if (backbone != "surrogate" && backbone != "vgg16")
    throw ConfigError("backbone must be 'surrogate' or 'vgg16'");
  field.validate();
  train.validate();
  if (interpolate_steps < 2) throw ConfigError("interpolate_steps must be >= 2");
  if (render_width < 0 || render_height < 0)
    throw ConfigError("render dimensions must be non-negative");
}

RunConfig run_config_from_json(const json& j) {
  reject_unknown(j,
                 {"scene", "image", "styles", "checkpoint", "out", "backbone", "deterministic",
                  "field", "train", "render_width", "render_height", "style_code",
                  "interpolate_from", "interpolate_to", "interpolate_steps", "split"},
                 "config");
  RunConfig cfg;
  get_to(j, "scene", cfg.scene, "config");
  get_to(j, "image", cfg.image, "config");
  get_to(j, "styles", cfg.styles, "config");
  get_to(j, "checkpoint", cfg.checkpoint, "config");
  get_to(j, "out", cfg.out, "config");
  get_to(j, "backbone", cfg.backbone, "config");
  get_to(j, "deterministic", cfg.deterministic, "config");
  if (j.contains("field")) cfg.field = field_config_from_json(j.at("field"), "config.field");
  if (j.contains("train")) cfg.train = train_config_from_json(j.at("train"), "config.train");
  get_to(j, "render_width", cfg.render_width, "config");
  get_to(j, "render_height", cfg.render_height, "config");
  get_to(j, "style_code", cfg.style_code, "config");
  get_to(j, "interpolate_from", cfg.interpolate_from, "config");
  get_to(j, "interpolate_to", cfg.interpolate_to, "config");
  get_to(j, "interpolate_steps", cfg.interpolate_steps, "config");
  get_to(j, "split", cfg.split, "config");
  cfg.validate();
  return cfg;
}

json to_json(const RunConfig& cfg) {
  return json{{"scene", cfg.scene},
              {"image", cfg.image},
              {"styles", cfg.styles},
              {"checkpoint", cfg.checkpoint},
              {"out", cfg.out},
              {"backbone", cfg.backbone},
              {"deterministic", cfg.deterministic},
              {"field", to_json(cfg.field)},
              {"train", to_json(cfg.train)},
              {"render_width", cfg.render_width},
              {"render_height", cfg.render_height},
              {"style_code", cfg.style_code},
              {"interpolate_from", cfg.interpolate_from},
              {"interpolate_to", cfg.interpolate_to},
              {"interpolate_steps", cfg.interpolate_steps},
              {"split", cfg.split}};
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("malformed config JSON in " + path + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace ins
