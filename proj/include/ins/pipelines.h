// Copyright Contributors to the INS Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ins/checkpoint.h"
#include "ins/config.h"
#include "ins/dataio.h"
#include "ins/losses.h"
#include "ins/rendering.h"

namespace ins {

// Line-delimited JSON training log: one record per step with raw loss terms
// and the effective weights (so total always recomposes from the record).
class TrainLogger {
 public:
  TrainLogger() = default;
  explicit TrainLogger(const std::string& out_dir);
  void log(int64_t step, const LossBreakdown& terms, const LossWeights& weights);

 private:
  std::ofstream out_;
};

// In-memory training state; checkpoints are its serialized form.
struct Model {
  INSField field;
  TrainConfig train;
  AdamOptimizer adam;
  Rng rng;
  int64_t global_step = 0;
  nlohmann::json extra;  // style ids, scene bounds, free-form provenance

  explicit Model(const FieldConfig& cfg) : field(cfg) {}
};

Checkpoint make_checkpoint(const Model& model);
Model model_from_checkpoint(const Checkpoint& ckpt);

// SIREN image stylization. Phase 1 fits the image (reconstruction only);
// phase 2 optimizes the full objective on strided patches, one content patch
// with every style per step. Emits periodic + final checkpoints when
// out_dir is set.
Model fit_siren(const Image& image, const StyleSet& styles, const FieldConfig& field_cfg,
                const TrainConfig& train_cfg, const FeatureExtractor& extractor,
                const std::string& out_dir = "");

// Vanilla radiance-field pretraining (CIM + AM color head, zero style).
// `resume` continues a mid-run checkpoint to the configured step count.
Model pretrain_nerf(const PosedImageSet& scene, const FieldConfig& field_cfg,
                    const TrainConfig& train_cfg, const std::string& out_dir = "",
                    const Checkpoint* resume = nullptr);

// Self-distilled stylization: freezes a CIM copy producing sigma_1 and
// optimizes SIM/CIM/AM with the full objective on stride-patch renders.
Model stylize_nerf(const Checkpoint& pretrained, const PosedImageSet& scene,
                   const StyleSet& styles, const TrainConfig& train_cfg,
                   const FeatureExtractor& extractor, const std::string& out_dir = "");

// IDR-style pretraining from masked views via sphere-traced differentiable
// intersections.
Model pretrain_sdf(const PosedImageSet& scene, const FieldConfig& field_cfg,
                   const TrainConfig& train_cfg, const std::string& out_dir = "");

// Masked content/style stylization; the SDF network trains at
// learning_rate * sdf_geometry_lr_multiplier. No geometry-consistency term.
Model stylize_sdf(const Checkpoint& pretrained, const PosedImageSet& scene,
                  const StyleSet& styles, const TrainConfig& train_cfg,
                  const FeatureExtractor& extractor, const std::string& out_dir = "");

// Batched sphere tracing against a learned SDF.
struct BatchTrace {
  std::vector<double> t;
  std::vector<char> converged;
};
BatchTrace sphere_trace_batch(const INSField& field, const std::vector<Ray>& rays,
                              int max_steps = 64, double eps = 1e-4, double damping = 0.9);

// Deterministic frame rendering (color + expected depth).
Frame render_view(Model& model, const Camera& camera, const StyleCode* code, double t_near,
                  double t_far, int samples_per_ray = 0);
std::vector<Frame> render_path(Model& model, const std::vector<Camera>& poses,
                               const StyleCode* code, double t_near, double t_far);

// Fixed-pose sweep of convex codes between styles i and j, endpoints
// bit-matching the one-hot renders.
std::vector<Frame> interpolate_styles(Model& model, const Camera& pose, int from, int to,
                                      int steps, double t_near, double t_far);

struct Metrics {
  double psnr = 0.0;  // capped at 99 dB
  double mse = 0.0;
  double content = 0.0;  // vs references, averaged over views
  double style = 0.0;    // vs configured styles, averaged over views x styles
  nlohmann::json to_json() const;
};

// PSNR and perceptual losses on held-out views. Renders are quantized to
// 8 bits first so metrics recompute exactly from saved frames.
Metrics evaluate(Model& model, const PosedImageSet& views, const StyleSet* styles,
                 const FeatureExtractor* extractor);

double psnr_from_mse(double mse);  // -10 log10(mse), capped at 99

}  // namespace ins
