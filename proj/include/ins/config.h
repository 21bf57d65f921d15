// Copyright Contributors to the INS Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ins/fields.h"
#include "ins/losses.h"

namespace ins {

struct TrainConfig {
  int64_t pretrain_steps = 2000;
  int64_t stylize_steps = 1000;
  double learning_rate = 5e-4;                // Adam, both phases
  double sdf_geometry_lr_multiplier = 1e-11;  // SDF network rate factor during stylization
  int rays_per_batch = 512;                   // photometric batches (pretrain phases)
  int samples_per_ray = 16;                   // K along each ray
  int patch_size = 64;                        // stylization patch side
  int patch_stride = 4;                       // sampling stride s
  LossWeights weights;
  uint64_t seed = 0;
  int64_t checkpoint_every = 0;  // 0: final checkpoint only
  bool jitter_samples = true;
  std::string device = "cpu";  // hint; this build always runs on CPU

  void validate() const;
};

// Strict (unknown keys rejected) JSON round trips. Paths are reported as
// "section.key" in errors.
nlohmann::json to_json(const FieldConfig& cfg);
FieldConfig field_config_from_json(const nlohmann::json& j, const std::string& path = "field");
nlohmann::json to_json(const LossWeights& w);
LossWeights loss_weights_from_json(const nlohmann::json& j, const std::string& path = "weights");
nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& path = "train");

// CLI-facing run configuration (one file drives one command).
struct RunConfig {
  std::string scene;                // scene directory (nerf/sdf)
  std::string image;                // content image (fit-siren)
  std::vector<std::string> styles;  // style image paths
  std::string checkpoint;           // input checkpoint (stylize/render/eval/interpolate)
  std::string out = "out";
  std::string backbone = "surrogate";  // surrogate | vgg16
  bool deterministic = false;
  FieldConfig field;
  TrainConfig train;
  // render/eval/interpolate knobs
  int render_width = 0;    // 0: use checkpoint scene resolution
  int render_height = 0;
  std::vector<double> style_code;  // mixing weights for `render`
  int interpolate_from = 0;
  int interpolate_to = 1;
  int interpolate_steps = 11;
  std::string split = "train";  // pose source for render/eval

  void validate() const;
};

RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& cfg);
RunConfig load_run_config(const std::string& path);

}  // namespace ins
