// Copyright Contributors to the INS Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "ins/autodiff.h"
#include "ins/rng.h"
#include "ins/tensor.h"

namespace ins {

// Master weights. Persistent training state is float32 so checkpoints
// round-trip bit-exactly; compute upcasts to double at graph build.
struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  Tensor value() const;
  void assign(const Tensor& t);
  bool all_finite() const;
};

// Ordered, name-addressed parameter set. Insertion order is the canonical
// iteration order everywhere (optimizer, serialization) for reproducibility.
class ParamStore {
 public:
  Param& add(const std::string& name, std::vector<int> shape);
  Param& get(const std::string& name);
  const Param& get(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  size_t size() const { return params_.size(); }

  // Deep copy with every array intact (used for the frozen CIM snapshot).
  ParamStore clone() const;

 private:
  std::vector<Param> params_;
  std::unordered_map<std::string, size_t> index_;
};

// Per-step bridge from ParamStore to graph leaves. Leaves are created on
// first use and cached, so one optimizer step sees one leaf per parameter no
// matter how many forward passes share the bindings.
class Bindings {
 public:
  explicit Bindings(const ParamStore& store, bool requires_grad = true);

  ad::Value operator[](const std::string& name);

  // Gradients for every bound parameter, in store order; unbound or
  // gradient-free parameters are skipped.
  std::vector<std::pair<std::string, Tensor>> grads() const;

 private:
  const ParamStore* store_;
  bool requires_grad_;
  std::unordered_map<std::string, ad::Value> leaves_;
};

// Adam with float32 moment state (checkpointable) and double update math.
class AdamOptimizer {
 public:
  struct Options {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  AdamOptimizer() = default;
  explicit AdamOptimizer(Options opts) : opts_(opts) {}

  // lr_scale lets parameter groups run at scaled rates (SDF geometry).
  void step(ParamStore& store, const std::vector<std::pair<std::string, Tensor>>& grads,
            const std::function<double(const std::string&)>& lr_scale = nullptr);

  int64_t step_count() const { return step_count_; }
  const Options& options() const { return opts_; }

  // Serialization hooks: moment arrays keyed by parameter name.
  std::map<std::string, std::pair<std::vector<float>, std::vector<float>>>& slots() {
    return slots_;
  }
  const std::map<std::string, std::pair<std::vector<float>, std::vector<float>>>& slots() const {
    return slots_;
  }
  void set_step_count(int64_t t) { step_count_ = t; }

 private:
  Options opts_{};
  int64_t step_count_ = 0;
  std::map<std::string, std::pair<std::vector<float>, std::vector<float>>> slots_;  // m, v
};

// Fully connected stack builder shared by SIM/CIM/AM.
enum class Activation { kRelu, kSine, kSoftplus100 };

struct MlpConfig {
  std::string prefix;       // parameter name prefix, e.g. "cim"
  int in_dim = 0;
  int width = 0;
  int depth = 0;            // number of hidden layers (>=1)
  int out_dim = 0;          // 0: expose last hidden activation as output
  Activation activation = Activation::kRelu;
  double omega0 = 30.0;     // SIREN frequency scale (kSine only)
};

// Registers weights/biases for the stack under cfg.prefix.
void mlp_init(ParamStore& store, const MlpConfig& cfg, Rng& rng);
// SDF geometric initialization: network starts near f(x) = |x| - radius.
void mlp_init_geometric(ParamStore& store, const MlpConfig& cfg, Rng& rng, double radius,
                        int raw_input_dims);
ad::Value mlp_forward(Bindings& bind, const MlpConfig& cfg, const ad::Value& input);

}  // namespace ins
