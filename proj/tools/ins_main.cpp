// Copyright Contributors to the INS Project
// SPDX-License-Identifier: Apache-2.0
//
// `ins` command line: trains and renders stylized implicit representations
// from a JSON run configuration. Flags override config-file fields.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "ins/pipelines.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using namespace ins;

struct CommonArgs {
  std::string config_path;
  std::string out;
  std::optional<uint64_t> seed;
  std::vector<std::string> styles;
  std::optional<int> steps;
  std::string backbone;
  bool deterministic = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "JSON run configuration");
  cmd->add_option("--out", args.out, "output directory (overrides config)");
  cmd->add_option("--seed", args.seed, "RNG seed (overrides config)");
  cmd->add_option("--style", args.styles, "style image path (repeatable)");
  cmd->add_option("--steps", args.steps, "step/frame count (overrides config)");
  cmd->add_option("--backbone", args.backbone, "feature backbone: vgg16 | surrogate")
      ->check(CLI::IsMember({"vgg16", "surrogate"}));
  cmd->add_flag("--deterministic", args.deterministic,
                "single-worker, fixed-reduction-order execution");
}

RunConfig resolve(const CommonArgs& args, const std::string& command) {
  RunConfig cfg;
  if (!args.config_path.empty()) cfg = load_run_config(args.config_path);
  if (!args.out.empty()) cfg.out = args.out;
  if (args.seed) cfg.train.seed = *args.seed;
  if (!args.styles.empty()) cfg.styles = args.styles;
  if (!args.backbone.empty()) cfg.backbone = args.backbone;
  if (args.deterministic) cfg.deterministic = true;
  if (args.steps) {
    if (command == "fit-siren" || command == "train-nerf" || command == "train-sdf")
      cfg.train.pretrain_steps = *args.steps;
    else if (command == "stylize-nerf" || command == "stylize-sdf")
      cfg.train.stylize_steps = *args.steps;
    else if (command == "interpolate")
      cfg.interpolate_steps = *args.steps;
  }
  cfg.validate();
  return cfg;
}

// Backbone weights live at $INS_WEIGHTS_DIR/vgg16.npz.
FeatureExtractor make_extractor(const RunConfig& cfg) {
  if (cfg.backbone == "vgg16") {
    const char* dir = std::getenv("INS_WEIGHTS_DIR");
    if (dir == nullptr)
      throw ConfigError("backbone vgg16 requires INS_WEIGHTS_DIR to locate vgg16.npz");
    return FeatureExtractor::vgg16((fs::path(dir) / "vgg16.npz").string());
  }
  return FeatureExtractor::surrogate();
}

void write_config_snapshot(const RunConfig& cfg, const std::string& command) {
  std::error_code ec;
  fs::create_directories(cfg.out, ec);
  json snapshot = to_json(cfg);
  snapshot["command"] = command;
  std::ofstream out(fs::path(cfg.out) / "config.json");
  if (!out) throw IoError("cannot write config snapshot under " + cfg.out);
  out << snapshot.dump(2) << "\n";
}

StyleSet styles_for(const RunConfig& cfg, int n) { return load_styles(cfg.styles, n); }

double scene_near(const Model& m, double fallback = 2.0) {
  return m.extra.contains("scene_near") ? m.extra.at("scene_near").get<double>() : fallback;
}
double scene_far(const Model& m, double fallback = 6.0) {
  return m.extra.contains("scene_far") ? m.extra.at("scene_far").get<double>() : fallback;
}

int run_fit_siren(const RunConfig& cfg) {
  if (cfg.image.empty()) throw ConfigError("config.image: content image path is required");
  Image image = load_png(cfg.image);
  if (image.channels == 4) image = composite_background(image, {1.0, 1.0, 1.0});
  const int n = static_cast<int>(cfg.styles.size());
  if (n == 0) throw ConfigError("config.styles: at least one style image is required");
  FieldConfig fcfg = cfg.field;
  fcfg.style_count = n;
  StyleSet styles = styles_for(cfg, n);
  FeatureExtractor ex = make_extractor(cfg);
  fit_siren(image, styles, fcfg, cfg.train, ex, cfg.out);
  return 0;
}

int run_train_nerf(const RunConfig& cfg) {
  if (cfg.scene.empty()) throw ConfigError("config.scene: scene directory is required");
  PosedImageSet scene = load_blender_scene(cfg.scene, cfg.split);
  pretrain_nerf(scene, cfg.field, cfg.train, cfg.out);
  return 0;
}

int run_stylize_nerf(const RunConfig& cfg) {
  if (cfg.scene.empty() || cfg.checkpoint.empty())
    throw ConfigError("stylize-nerf needs config.scene and config.checkpoint");
  PosedImageSet scene = load_blender_scene(cfg.scene, cfg.split);
  Checkpoint pre = Checkpoint::load(cfg.checkpoint);
  Model probe = model_from_checkpoint(pre);
  StyleSet styles = styles_for(cfg, probe.field.config().style_count);
  FeatureExtractor ex = make_extractor(cfg);
  stylize_nerf(pre, scene, styles, cfg.train, ex, cfg.out);
  return 0;
}

int run_train_sdf(const RunConfig& cfg) {
  if (cfg.scene.empty()) throw ConfigError("config.scene: scene directory is required");
  PosedImageSet scene = load_masked_scene(cfg.scene, cfg.split);
  pretrain_sdf(scene, cfg.field, cfg.train, cfg.out);
  return 0;
}

int run_stylize_sdf(const RunConfig& cfg) {
  if (cfg.scene.empty() || cfg.checkpoint.empty())
    throw ConfigError("stylize-sdf needs config.scene and config.checkpoint");
  PosedImageSet scene = load_masked_scene(cfg.scene, cfg.split);
  Checkpoint pre = Checkpoint::load(cfg.checkpoint);
  Model probe = model_from_checkpoint(pre);
  StyleSet styles = styles_for(cfg, probe.field.config().style_count);
  FeatureExtractor ex = make_extractor(cfg);
  stylize_sdf(pre, scene, styles, cfg.train, ex, cfg.out);
  return 0;
}

std::vector<Camera> render_poses(const RunConfig& cfg, const Model& m) {
  if (!cfg.scene.empty()) {
    PosedImageSet scene =
        m.field.config().kind == FieldKind::kSdf ? load_masked_scene(cfg.scene, cfg.split)
                                                 : load_blender_scene(cfg.scene, cfg.split);
    return scene.cameras;
  }
  // Siren checkpoints render the fitted image; synthesize a nominal camera.
  Camera cam;
  cam.pose = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
  cam.width = cfg.render_width > 0
                  ? cfg.render_width
                  : (m.extra.contains("content_width") ? m.extra.at("content_width").get<int>()
                                                       : 64);
  cam.height = cfg.render_height > 0 ? cfg.render_height
                                     : (m.extra.contains("content_height")
                                            ? m.extra.at("content_height").get<int>()
                                            : 64);
  cam.focal = cam.width;
  return {cam};
}

int run_render(const RunConfig& cfg) {
  if (cfg.checkpoint.empty()) throw ConfigError("render needs config.checkpoint");
  Model m = model_from_checkpoint(Checkpoint::load(cfg.checkpoint));
  std::optional<StyleCode> code;
  if (!cfg.style_code.empty()) {
    code.emplace();
    code->weights = cfg.style_code;
  }
  std::vector<Camera> poses = render_poses(cfg, m);
  if (m.field.config().kind == FieldKind::kSiren && poses.size() > 1) poses.resize(1);
  auto frames = render_path(m, poses, code ? &*code : nullptr, scene_near(m), scene_far(m));
  write_frames(frames, cfg.out, scene_far(m));
  return 0;
}

int run_interpolate(const RunConfig& cfg) {
  if (cfg.checkpoint.empty()) throw ConfigError("interpolate needs config.checkpoint");
  Model m = model_from_checkpoint(Checkpoint::load(cfg.checkpoint));
  std::vector<Camera> poses = render_poses(cfg, m);
  auto frames = interpolate_styles(m, poses.front(), cfg.interpolate_from, cfg.interpolate_to,
                                   cfg.interpolate_steps, scene_near(m), scene_far(m));
  write_frames(frames, cfg.out, scene_far(m));
  return 0;
}

int run_eval(const RunConfig& cfg) {
  if (cfg.checkpoint.empty() || cfg.scene.empty())
    throw ConfigError("eval needs config.checkpoint and config.scene");
  Model m = model_from_checkpoint(Checkpoint::load(cfg.checkpoint));
  PosedImageSet views = m.field.config().kind == FieldKind::kSdf
                            ? load_masked_scene(cfg.scene, cfg.split)
                            : load_blender_scene(cfg.scene, cfg.split);
  std::optional<StyleSet> styles;
  std::optional<FeatureExtractor> ex;
  if (!cfg.styles.empty()) {
    styles = styles_for(cfg, m.field.config().style_count);
    ex = make_extractor(cfg);
  }
  Metrics metrics = evaluate(m, views, styles ? &*styles : nullptr, ex ? &*ex : nullptr);
  std::error_code ec;
  fs::create_directories(cfg.out, ec);
  std::ofstream out(fs::path(cfg.out) / "metrics.json");
  out << metrics.to_json().dump(2) << "\n";
  std::cout << metrics.to_json().dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"INS: stylized implicit neural representations"};
  app.require_subcommand(1);

  const std::vector<std::string> commands = {"fit-siren",   "train-nerf",  "stylize-nerf",
                                             "train-sdf",   "stylize-sdf", "render",
                                             "interpolate", "eval"};
  std::map<std::string, CommonArgs> args;
  for (const auto& name : commands) {
    CLI::App* cmd = app.add_subcommand(name);
    add_common(cmd, args[name]);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // unknown command / bad flag: usage error
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    ins::RunConfig cfg = resolve(args[command], command);
    write_config_snapshot(cfg, command);
    if (command == "fit-siren") return run_fit_siren(cfg);
    if (command == "train-nerf") return run_train_nerf(cfg);
    if (command == "stylize-nerf") return run_stylize_nerf(cfg);
    if (command == "train-sdf") return run_train_sdf(cfg);
    if (command == "stylize-sdf") return run_stylize_sdf(cfg);
    if (command == "render") return run_render(cfg);
    if (command == "interpolate") return run_interpolate(cfg);
    if (command == "eval") return run_eval(cfg);
    std::cerr << "error: unknown command " << command << "\n";
    return 2;
  } catch (const ins::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ins::ArgumentError& e) {
    std::cerr << "argument error: " << e.what() << "\n";
    return 2;
  } catch (const ins::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
