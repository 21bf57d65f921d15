// Copyright Contributors to the INS Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>
#include <vector>

#include "ins/params.h"

namespace ins {

// Frozen convolutional feature extractor: the VGG-16 stack through relu4_3,
// backed either by exported pretrained weights (npz) or by fixed-seed random
// convolutions with the same topology for offline/deterministic runs.
class FeatureExtractor {
 public:
  enum class Backbone { kVgg16, kSurrogate };

  static FeatureExtractor vgg16(const std::string& weights_path);
  static FeatureExtractor surrogate(uint64_t seed = 7);

  Backbone backbone() const { return backbone_; }

  // Layer keys follow Gatys/Johnson block notation: "relu{i}_{j}" is the
  // j-th convolution (post-activation) of block i. Valid blocks 1..4.
  static std::string key(int block, int conv);
  static const std::vector<std::string>& default_style_keys();   // relu1_2 2_2 3_3 4_3
  static const std::vector<std::string>& default_content_keys(); // relu2_2

  // image: [3, H*W] in [0,1]. Applies the ImageNet per-channel
  // normalization, runs the frozen stack, returns activations at the
  // requested keys. Differentiable wrt the image. Minimum input side: 8.
  std::map<std::string, ad::Value> extract(const ad::Value& image, int h, int w,
                                           const std::vector<std::string>& keys) const;

  // Spatial size of a key's feature map for an h x w input.
  std::pair<int, int> feature_size(const std::string& key, int h, int w) const;
  int feature_channels(const std::string& key) const;

 private:
  FeatureExtractor() = default;
  Backbone backbone_ = Backbone::kSurrogate;
  ParamStore weights_;  // conv blobs [Cout, Cin*9] + biases, frozen
};

// (1/(C H W)) F F^T over the flattened spatial index; symmetric PSD.
ad::Value gram(const ad::Value& features);
Tensor gram(const Tensor& features);  // plain form for oracles/targets

// Per-layer Gram targets of a style image (no gradients).
std::map<std::string, Tensor> style_grams(const FeatureExtractor& extractor, const Tensor& image,
                                          int h, int w, const std::vector<std::string>& keys);

// Graph builders used by the trainers.
ad::Value content_loss_graph(const FeatureExtractor& extractor, const ad::Value& rendered,
                             const Tensor& reference, int h, int w,
                             const std::vector<std::string>& keys);
ad::Value style_loss_graph(const FeatureExtractor& extractor, const ad::Value& rendered, int h,
                           int w, const std::map<std::string, Tensor>& target_grams);
ad::Value recon_loss_graph(const ad::Value& rendered, const Tensor& reference);
// Mean absolute density difference; gradient flows into stylized only.
ad::Value geometry_loss_graph(const ad::Value& stylized, const ad::Value& frozen);

// Value-level forms (the spec operations).
double content_loss(const FeatureExtractor& extractor, const Tensor& rendered,
                    const Tensor& reference, int h, int w);
double style_loss(const FeatureExtractor& extractor, const Tensor& rendered, int rh, int rw,
                  const Tensor& style, int sh, int sw);
double recon_loss(const Tensor& rendered, const Tensor& reference);
double geometry_loss(const Tensor& stylized, const Tensor& frozen);

struct LossWeights {
  double recon = 1.0;     // lambda_0
  double geometry = 1e6;  // lambda_1
  double content = 1.0;   // lambda_2
  double style = 1e8;     // lambda_3
  int64_t phase_boundary = 0;  // steps before the stylization terms switch on

  void validate() const;
};

// Schedule: before the boundary only reconstruction is active.
LossWeights effective_weights(const LossWeights& weights, int64_t step);

struct LossBreakdown {
  double total = 0.0;
  double recon = 0.0;
  double geometry = 0.0;
  double content = 0.0;
  double style = 0.0;
};

// Weighted recombination used by trainers and the logging invariant.
double recompose_total(const LossBreakdown& terms, const LossWeights& weights);

}  // namespace ins
