// Copyright Contributors to the INS Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ins/params.h"

namespace ins {

using Vec3 = std::array<double, 3>;

enum class FieldKind { kSiren, kNerf, kSdf };
enum class Phase { kPretrain, kStylize };

std::string field_kind_name(FieldKind kind);
FieldKind field_kind_from_name(const std::string& name);
std::string phase_name(Phase phase);
Phase phase_from_name(const std::string& name);

// n-dimensional style mixing weights. One-hot during training; any convex
// combination at inference.
struct StyleCode {
  std::vector<double> weights;

  static StyleCode one_hot(int n, int index);
  void validate(int expected_n) const;  // length, >=0, sums to 1 within 1e-6
  bool is_one_hot() const;
};

struct FieldConfig {
  FieldKind kind = FieldKind::kNerf;
  int style_count = 2;  // n
  int cim_depth = 8;
  int cim_width = 256;
  int sim_depth = 2;
  int sim_width = 64;  // w, the style feature dimension
  int am_depth = 3;
  int am_width = 128;
  int l_pos = 10;
  int l_dir = 4;
  double omega0 = 30.0;
  bool style_density_enabled = true;
  int sdf_feature_width = 64;     // appearance embedding from the SDF trunk
  double sdf_init_radius = 1.0;   // geometric init target sphere

  void validate() const;
  int position_input_dims() const;  // encoded position width fed to CIM
  int direction_input_dims() const;
  int am_input_dims() const;
};

// The composed SIM/CIM/AM parameterized mapping. One instance owns the live
// parameter store plus, after stylization starts, an immutable copy of the
// pretrained CIM (the self-distillation teacher).
class INSField {
 public:
  explicit INSField(FieldConfig cfg);

  void init(Rng& rng);

  const FieldConfig& config() const { return cfg_; }
  FieldConfig& config() { return cfg_; }
  Phase phase() const { return phase_; }
  void set_phase(Phase p) { phase_ = p; }

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  ParamStore* frozen_cim() { return frozen_ ? frozen_.get() : nullptr; }
  const ParamStore* frozen_cim() const { return frozen_ ? frozen_.get() : nullptr; }
  void freeze_cim_copy();
  void adopt_frozen_cim(ParamStore frozen);

  struct Output {
    ad::Value color;     // [N,3], siren/nerf
    ad::Value density;   // [N,1], nerf
    ad::Value distance;  // [N,1], sdf
    ad::Value feature;   // [N,F], sdf appearance embedding
  };

  // ins_forward: positions [N,2|3], dirs [N,3] (nerf only), code null means
  // the zero style feature used during pretraining. The density source
  // follows phase and style_density_enabled: pretraining reads CIM's
  // unconditioned head, stylization reads AM's conditioned head, and with
  // style_density_enabled=false the frozen pretrained CIM is the (code
  // independent) source.
  Output forward(Bindings& live, Bindings* frozen, const ad::Value& positions,
                 const ad::Value& dirs, const StyleCode* code) const;

  // sigma_1 of the self-distillation pair: unconditioned density from a
  // parameter store holding pretrained CIM weights.
  ad::Value frozen_density(Bindings& frozen, const ad::Value& positions) const;

  // SDF geometry query (distance plus appearance embedding).
  struct SdfOut {
    ad::Value distance;  // [N,1]
    ad::Value feature;   // [N,F]
  };
  SdfOut sdf_eval(Bindings& bind, const ad::Value& positions) const;

  double sdf_distance(const Vec3& x) const;  // plain scalar eval for sphere tracing
  Tensor sdf_distances(const Tensor& positions) const;  // no-grad batch, [N,3] -> [N,1]
  // Exact input-gradient normal; throws on |grad| < 1e-8.
  Vec3 sdf_normal(const Vec3& x) const;
  // Batched exact SDF spatial gradients (rows of positions; not normalized).
  Tensor sdf_gradients(const Tensor& positions) const;

  // Rendering MLP for surface points: color(x_hat, n_hat, d, feature, code).
  ad::Value sdf_render_head(Bindings& live, const ad::Value& x_hat, const ad::Value& n_hat,
                            const ad::Value& dirs, const ad::Value& feature,
                            const StyleCode* code) const;

  // No-grad color evaluation used by preview/render paths for 2D fields.
  Tensor eval_colors(const Tensor& positions, const StyleCode* code);

  MlpConfig sim_cfg() const;
  MlpConfig cim_cfg() const;
  MlpConfig am_cfg() const;

 private:
  ad::Value style_feature_rows(Bindings& live, const StyleCode* code, int rows) const;
  ad::Value cim_trunk(Bindings& bind, const ad::Value& positions) const;

  FieldConfig cfg_;
  Phase phase_ = Phase::kPretrain;
  ParamStore params_;
  std::unique_ptr<ParamStore> frozen_;
};

// positional_encoding on plain tensors (rows of coordinates).
Tensor positional_encoding(const Tensor& x, int freq_count, bool include_input = true);

}  // namespace ins
