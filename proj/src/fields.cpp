// Copyright Contributors to the INS Project
// SPDX-License-Identifier: Apache-2.0

#include "ins/fields.h"

#include <cmath>

namespace ins {

std::string field_kind_name(FieldKind kind) {
  switch (kind) {
    case FieldKind::kSiren: return "siren";
    case FieldKind::kNerf: return "nerf";
    case FieldKind::kSdf: return "sdf";
  }
  return "unknown";
}

FieldKind field_kind_from_name(const std::string& name) {
  if (name == "siren") return FieldKind::kSiren;
  if (name == "nerf") return FieldKind::kNerf;
  if (name == "sdf") return FieldKind::kSdf;
  throw ConfigError("unknown field kind '" + name + "' (expected siren|nerf|sdf)");
}

std::string phase_name(Phase phase) {
  return phase == Phase::kPretrain ? "pretrain" : "stylize";
}

Phase phase_from_name(const std::string& name) {
  if (name == "pretrain") return Phase::kPretrain;
  if (name == "stylize") return Phase::kStylize;
  throw ConfigError("unknown phase '" + name + "'");
}

StyleCode StyleCode::one_hot(int n, int index) {
  if (index < 0 || index >= n) throw ArgumentError("one-hot index out of range");
  StyleCode code;
  code.weights.assign(static_cast<size_t>(n), 0.0);
  code.weights[static_cast<size_t>(index)] = 1.0;
  return code;
}

void StyleCode::validate(int expected_n) const {
  if (static_cast<int>(weights.size()) != expected_n)
    throw ConfigError("style code length " + std::to_string(weights.size()) +
                      " does not match configured style count " + std::to_string(expected_n));
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw ArgumentError("style code entries must be non-negative");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-6)
    throw ArgumentError("style code entries must sum to 1 (got " + std::to_string(sum) + ")");
}

bool StyleCode::is_one_hot() const {
  int ones = 0;
  for (double w : weights) {
    if (w == 1.0)
      ++ones;
    else if (w != 0.0)
      return false;
  }
  return ones == 1;
}

void FieldConfig::validate() const {
  if (style_count < 1) throw ConfigError("style_count must be >= 1");
  if (cim_depth < 1 || cim_width < 1 || am_depth < 1 || am_width < 1 || sim_depth < 1 ||
      sim_width < 1)
    throw ConfigError("network depths and widths must be >= 1");
  if (l_pos < 0 || l_dir < 0) throw ConfigError("frequency counts must be >= 0");
  if (!(omega0 > 0.0)) throw ConfigError("omega0 must be positive");
  if (kind == FieldKind::kSdf && sdf_feature_width < 1)
    throw ConfigError("sdf_feature_width must be >= 1");
}

int FieldConfig::position_input_dims() const {
  if (kind == FieldKind::kSiren) return 2;  // raw coordinates, sine activations
  return 3 * (1 + 2 * l_pos);
}

int FieldConfig::direction_input_dims() const { return 3 * (1 + 2 * l_dir); }

int FieldConfig::am_input_dims() const {
  switch (kind) {
    case FieldKind::kSiren:
      return cim_width + sim_width;
    case FieldKind::kNerf:
      return cim_width + sim_width + direction_input_dims();
    case FieldKind::kSdf:
      // x_hat, n_hat, encoded view direction, appearance embedding, style.
      return 3 + 3 + direction_input_dims() + sdf_feature_width + sim_width;
  }
  return 0;
}

INSField::INSField(FieldConfig cfg) : cfg_(cfg) { cfg_.validate(); }

MlpConfig INSField::sim_cfg() const {
  MlpConfig m;
  m.prefix = "sim";
  m.in_dim = cfg_.style_count;
  m.width = cfg_.sim_width;
  m.depth = cfg_.sim_depth;
  m.out_dim = 0;
  m.activation = Activation::kRelu;
  return m;
}

MlpConfig INSField::cim_cfg() const {
  MlpConfig m;
  m.prefix = "cim";
  m.in_dim = cfg_.position_input_dims();
  m.width = cfg_.cim_width;
  m.depth = cfg_.cim_depth;
  m.out_dim = cfg_.kind == FieldKind::kSdf ? 1 + cfg_.sdf_feature_width : 0;
  switch (cfg_.kind) {
    case FieldKind::kSiren:
      m.activation = Activation::kSine;
      m.omega0 = cfg_.omega0;
      break;
    case FieldKind::kNerf:
      m.activation = Activation::kRelu;
      break;
    case FieldKind::kSdf:
      m.activation = Activation::kSoftplus100;
      break;
  }
  return m;
}

MlpConfig INSField::am_cfg() const {
  MlpConfig m;
  m.prefix = "am";
  m.in_dim = cfg_.am_input_dims();
  m.width = cfg_.am_width;
  m.depth = cfg_.am_depth;
  m.out_dim = 0;
  m.activation = Activation::kRelu;
  return m;
}

void INSField::init(Rng& rng) {
  params_ = ParamStore();
  frozen_.reset();
  if (cfg_.kind == FieldKind::kSdf) {
    mlp_init_geometric(params_, cim_cfg(), rng, cfg_.sdf_init_radius, 3);
  } else {
    mlp_init(params_, cim_cfg(), rng);
  }
  if (cfg_.kind == FieldKind::kNerf) {
    // Unconditioned density head on the CIM trunk.
    MlpConfig head;
    head.prefix = "cim.sigma";
    head.in_dim = cfg_.cim_width;
    head.width = 1;
    head.depth = 1;
    mlp_init(params_, head, rng);
  }
  mlp_init(params_, sim_cfg(), rng);
  mlp_init(params_, am_cfg(), rng);
  // AM heads: color everywhere, conditioned density for radiance fields.
  MlpConfig rgb;
  rgb.prefix = "am.rgb";
  rgb.in_dim = cfg_.am_width;
  rgb.width = 3;
  rgb.depth = 1;
  mlp_init(params_, rgb, rng);
  if (cfg_.kind == FieldKind::kNerf) {
    MlpConfig sig;
    sig.prefix = "am.sigma";
    sig.in_dim = cfg_.am_width;
    sig.width = 1;
    sig.depth = 1;
    mlp_init(params_, sig, rng);
  }
}

void INSField::freeze_cim_copy() {
  auto frozen = std::make_unique<ParamStore>();
  for (const Param& p : params_.params()) {
    if (p.name.rfind("cim.", 0) != 0) continue;
    frozen->add(p.name, p.shape).data = p.data;
  }
  frozen_ = std::move(frozen);
}

void INSField::adopt_frozen_cim(ParamStore frozen) {
  frozen_ = std::make_unique<ParamStore>(std::move(frozen));
}

namespace {

ad::Value linear_head(Bindings& bind, const std::string& prefix, const ad::Value& h) {
  return ad::add_rowvec(ad::matmul_nt(h, bind[prefix + ".l0.weight"]), bind[prefix + ".l0.bias"]);
}

}  // namespace

ad::Value INSField::style_feature_rows(Bindings& live, const StyleCode* code, int rows) const {
  if (code == nullptr) {
    // Pretraining: zero style feature; SIM stays unbound and untrained.
    return ad::constant(Tensor::zeros({rows, cfg_.sim_width}));
  }
  code->validate(cfg_.style_count);
  Tensor c({1, cfg_.style_count});
  for (int i = 0; i < cfg_.style_count; ++i) c[i] = code->weights[static_cast<size_t>(i)];
  ad::Value feat = mlp_forward(live, sim_cfg(), ad::constant(std::move(c)));
  return ad::repeat_rows(feat, rows);
}

ad::Value INSField::cim_trunk(Bindings& bind, const ad::Value& positions) const {
  ad::Value enc = cfg_.kind == FieldKind::kSiren ? positions : ad::posenc(positions, cfg_.l_pos);
  return mlp_forward(bind, cim_cfg(), enc);
}

INSField::Output INSField::forward(Bindings& live, Bindings* frozen, const ad::Value& positions,
                                   const ad::Value& dirs, const StyleCode* code) const {
  Output out;
  const int rows = positions.val().rows();
  if (cfg_.kind == FieldKind::kSdf) {
    auto geo = sdf_eval(live, positions);
    out.distance = geo.distance;
    out.feature = geo.feature;
    return out;
  }

  ad::Value h = cim_trunk(live, positions);
  ad::Value style = style_feature_rows(live, code, rows);

  std::vector<ad::Value> am_parts{h, style};
  if (cfg_.kind == FieldKind::kNerf) {
    if (!dirs.defined()) throw ArgumentError("radiance field forward requires view directions");
    am_parts.push_back(ad::posenc(dirs, cfg_.l_dir));
  }
  ad::Value a = mlp_forward(live, am_cfg(), ad::concat_cols(am_parts));
  out.color = ad::sigmoid(linear_head(live, "am.rgb", a));

  if (cfg_.kind == FieldKind::kNerf) {
    const bool am_density = cfg_.style_density_enabled && phase_ == Phase::kStylize;
    if (am_density) {
      out.density = ad::softplus(linear_head(live, "am.sigma", a));
    } else if (!cfg_.style_density_enabled && frozen != nullptr) {
      // Color-branch-only mode: geometry pinned to the pretrained copy.
      out.density = frozen_density(*frozen, positions);
    } else {
      out.density = ad::softplus(linear_head(live, "cim.sigma", h));
    }
  }
  return out;
}

ad::Value INSField::frozen_density(Bindings& frozen, const ad::Value& positions) const {
  if (cfg_.kind != FieldKind::kNerf)
    throw ArgumentError("frozen density is only defined for radiance fields");
  ad::Value h = cim_trunk(frozen, positions);
  return ad::softplus(linear_head(frozen, "cim.sigma", h));
}

INSField::SdfOut INSField::sdf_eval(Bindings& bind, const ad::Value& positions) const {
  if (cfg_.kind != FieldKind::kSdf) throw ArgumentError("sdf_eval on non-sdf field");
  ad::Value out = cim_trunk(bind, positions);
  SdfOut s;
  s.distance = ad::slice_cols(out, 0, 1);
  s.feature = ad::slice_cols(out, 1, 1 + cfg_.sdf_feature_width);
  return s;
}

double INSField::sdf_distance(const Vec3& x) const {
  Bindings bind(params_, /*requires_grad=*/false);
  Tensor p({1, 3});
  p[0] = x[0];
  p[1] = x[1];
  p[2] = x[2];
  auto s = sdf_eval(bind, ad::constant(std::move(p)));
  return s.distance.val()[0];
}

Tensor INSField::sdf_distances(const Tensor& positions) const {
  Bindings bind(params_, /*requires_grad=*/false);
  auto s = sdf_eval(bind, ad::constant(positions));
  return s.distance.val();
}

Tensor INSField::sdf_gradients(const Tensor& positions) const {
  Bindings bind(params_, /*requires_grad=*/false);
  ad::Value pos = ad::leaf(positions, /*requires_grad=*/true);
  auto s = sdf_eval(bind, pos);
  // Rows are independent, so one backward of the summed distances yields
  // every spatial gradient at once.
  ad::backward(ad::sum(s.distance));
  return pos.grad();
}

Vec3 INSField::sdf_normal(const Vec3& x) const {
  Tensor p({1, 3});
  p[0] = x[0];
  p[1] = x[1];
  p[2] = x[2];
  Tensor g = sdf_gradients(p);
  const double norm = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
  if (norm < 1e-8) throw ArgumentError("degenerate SDF gradient (|grad| < 1e-8)");
  return {g[0] / norm, g[1] / norm, g[2] / norm};
}

ad::Value INSField::sdf_render_head(Bindings& live, const ad::Value& x_hat,
                                    const ad::Value& n_hat, const ad::Value& dirs,
                                    const ad::Value& feature, const StyleCode* code) const {
  if (cfg_.kind != FieldKind::kSdf) throw ArgumentError("sdf_render_head on non-sdf field");
  const int rows = x_hat.val().rows();
  std::vector<ad::Value> parts{x_hat, n_hat, ad::posenc(dirs, cfg_.l_dir),
                               feature, style_feature_rows(live, code, rows)};
  ad::Value a = mlp_forward(live, am_cfg(), ad::concat_cols(parts));
  return ad::sigmoid(linear_head(live, "am.rgb", a));
}

Tensor INSField::eval_colors(const Tensor& positions, const StyleCode* code) {
  Bindings bind(params_, /*requires_grad=*/false);
  auto out = forward(bind, nullptr, ad::constant(positions), ad::Value(), code);
  return out.color.val();
}

Tensor positional_encoding(const Tensor& x, int freq_count, bool include_input) {
  return ad::posenc(ad::constant(x), freq_count, include_input).val();
}

}  // namespace ins
