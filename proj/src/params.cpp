// Copyright Contributors to the INS Project
// SPDX-License-Identifier: Apache-2.0

#include "ins/params.h"

#include <cmath>

namespace ins {

Tensor Param::value() const {
  Tensor t(shape);
  for (int64_t i = 0; i < numel(); ++i) t[i] = static_cast<double>(data[static_cast<size_t>(i)]);
  return t;
}

void Param::assign(const Tensor& t) {
  if (t.shape() != shape) throw ArgumentError("param assign: shape mismatch for " + name);
  for (int64_t i = 0; i < numel(); ++i) data[static_cast<size_t>(i)] = static_cast<float>(t[i]);
}

bool Param::all_finite() const {
  for (float v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

Param& ParamStore::add(const std::string& name, std::vector<int> shape) {
  if (has(name)) throw ArgumentError("duplicate parameter " + name);
  Param p;
  p.name = name;
  p.shape = std::move(shape);
  p.data.assign(static_cast<size_t>(shape_numel(p.shape)), 0.0f);
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return params_.back();
}

Param& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ArgumentError("unknown parameter " + name);
  return params_[it->second];
}

const Param& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ArgumentError("unknown parameter " + name);
  return params_[it->second];
}

ParamStore ParamStore::clone() const {
  ParamStore copy;
  copy.params_ = params_;
  copy.index_ = index_;
  return copy;
}

Bindings::Bindings(const ParamStore& store, bool requires_grad)
    : store_(&store), requires_grad_(requires_grad) {}

ad::Value Bindings::operator[](const std::string& name) {
  auto it = leaves_.find(name);
  if (it != leaves_.end()) return it->second;
  const Param& p = store_->get(name);
  if (!p.all_finite())
    throw CheckpointError("non-finite values in parameter " + name + " (corrupted checkpoint)");
  ad::Value v = ad::leaf(p.value(), requires_grad_);
  leaves_.emplace(name, v);
  return v;
}

std::vector<std::pair<std::string, Tensor>> Bindings::grads() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const Param& p : store_->params()) {
    auto it = leaves_.find(p.name);
    if (it == leaves_.end() || !it->second.has_grad()) continue;
    out.emplace_back(p.name, it->second.grad());
  }
  return out;
}

void AdamOptimizer::step(ParamStore& store,
                         const std::vector<std::pair<std::string, Tensor>>& grads,
                         const std::function<double(const std::string&)>& lr_scale) {
  ++step_count_;
  const double t = static_cast<double>(step_count_);
  const double bc1 = 1.0 - std::pow(opts_.beta1, t);
  const double bc2 = 1.0 - std::pow(opts_.beta2, t);
  for (const auto& [name, grad] : grads) {
    Param& p = store.get(name);
    if (grad.numel() != p.numel()) throw ArgumentError("gradient shape mismatch for " + name);
    auto& [m, v] = slots_[name];
    if (m.empty()) {
      m.assign(p.data.size(), 0.0f);
      v.assign(p.data.size(), 0.0f);
    }
    const double lr = opts_.lr * (lr_scale ? lr_scale(name) : 1.0);
    if (lr == 0.0) continue;  // frozen group: leave weights and moments bit-intact
    for (size_t i = 0; i < p.data.size(); ++i) {
      const double g = grad[static_cast<int64_t>(i)];
      const double mi = opts_.beta1 * static_cast<double>(m[i]) + (1.0 - opts_.beta1) * g;
      const double vi = opts_.beta2 * static_cast<double>(v[i]) + (1.0 - opts_.beta2) * g * g;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double mhat = static_cast<double>(m[i]) / bc1;
      const double vhat = static_cast<double>(v[i]) / bc2;
      const double upd =
          static_cast<double>(p.data[i]) - lr * mhat / (std::sqrt(vhat) + opts_.eps);
      p.data[i] = static_cast<float>(upd);
    }
  }
}

namespace {

std::string layer_name(const std::string& prefix, int layer, const char* kind) {
  return prefix + ".l" + std::to_string(layer) + "." + kind;
}

struct LayerDims {
  int in, out;
};

std::vector<LayerDims> layer_dims(const MlpConfig& cfg) {
  std::vector<LayerDims> dims;
  int in = cfg.in_dim;
  for (int l = 0; l < cfg.depth; ++l) {
    dims.push_back({in, cfg.width});
    in = cfg.width;
  }
  if (cfg.out_dim > 0) dims.push_back({in, cfg.out_dim});
  return dims;
}

void fill_uniform(Param& p, Rng& rng, double lo, double hi) {
  for (auto& v : p.data) v = static_cast<float>(rng.uniform(lo, hi));
}

}  // namespace

void mlp_init(ParamStore& store, const MlpConfig& cfg, Rng& rng) {
  const auto dims = layer_dims(cfg);
  for (size_t l = 0; l < dims.size(); ++l) {
    Param& w = store.add(layer_name(cfg.prefix, static_cast<int>(l), "weight"),
                         {dims[l].out, dims[l].in});
    Param& b = store.add(layer_name(cfg.prefix, static_cast<int>(l), "bias"), {dims[l].out});
    const double fan_in = static_cast<double>(dims[l].in);
    if (cfg.activation == Activation::kSine) {
      // SIREN scheme: first layer U(-1/n, 1/n); later layers
      // U(-sqrt(6/n)/omega0, sqrt(6/n)/omega0). omega0 multiplies
      // pre-activations in the forward pass.
      const double bound = l == 0 ? 1.0 / fan_in : std::sqrt(6.0 / fan_in) / cfg.omega0;
      fill_uniform(w, rng, -bound, bound);
      fill_uniform(b, rng, -1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
    } else {
      const double bound = 1.0 / std::sqrt(fan_in);
      fill_uniform(w, rng, -bound, bound);
      fill_uniform(b, rng, -bound, bound);
    }
  }
}

void mlp_init_geometric(ParamStore& store, const MlpConfig& cfg, Rng& rng, double radius,
                        int raw_input_dims) {
  const auto dims = layer_dims(cfg);
  if (cfg.out_dim <= 0) throw ArgumentError("geometric init needs an output layer");
  for (size_t l = 0; l < dims.size(); ++l) {
    Param& w = store.add(layer_name(cfg.prefix, static_cast<int>(l), "weight"),
                         {dims[l].out, dims[l].in});
    Param& b = store.add(layer_name(cfg.prefix, static_cast<int>(l), "bias"), {dims[l].out});
    const bool last = l + 1 == dims.size();
    if (last) {
      // Output row 0 is the signed distance: start near f(x) = |x| - radius.
      const double mu = std::sqrt(M_PI) / std::sqrt(static_cast<double>(dims[l].in));
      for (int64_t i = 0; i < w.numel(); ++i)
        w.data[static_cast<size_t>(i)] =
            i < dims[l].in ? static_cast<float>(rng.normal(mu, 1e-4f))
                           : static_cast<float>(rng.normal(0.0, 1e-4));
      b.data[0] = static_cast<float>(-radius);
    } else {
      const double sigma = std::sqrt(2.0) / std::sqrt(static_cast<double>(dims[l].out));
      for (auto& v : w.data) v = static_cast<float>(rng.normal(0.0, sigma));
      if (l == 0 && raw_input_dims < dims[l].in) {
        // Zero the positional-encoding columns so the init sees raw xyz only.
        for (int r = 0; r < dims[l].out; ++r)
          for (int c = raw_input_dims; c < dims[l].in; ++c)
            w.data[static_cast<size_t>(r) * dims[l].in + c] = 0.0f;
      }
    }
  }
}

ad::Value mlp_forward(Bindings& bind, const MlpConfig& cfg, const ad::Value& input) {
  const auto dims = layer_dims(cfg);
  ad::Value h = input;
  for (size_t l = 0; l < dims.size(); ++l) {
    ad::Value w = bind[layer_name(cfg.prefix, static_cast<int>(l), "weight")];
    ad::Value b = bind[layer_name(cfg.prefix, static_cast<int>(l), "bias")];
    h = ad::add_rowvec(ad::matmul_nt(h, w), b);
    const bool last_is_output = cfg.out_dim > 0 && l + 1 == dims.size();
    if (last_is_output) break;  // linear head; caller applies its own activation
    switch (cfg.activation) {
      case Activation::kRelu:
        h = ad::relu(h);
        break;
      case Activation::kSine:
        h = ad::sin_op(ad::scale(h, cfg.omega0));
        break;
      case Activation::kSoftplus100:
        h = ad::softplus(h, 100.0);
        break;
    }
  }
  return h;
}

}  // namespace ins
