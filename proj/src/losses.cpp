// Copyright Contributors to the INS Project
// SPDX-License-Identifier: Apache-2.0

#include "ins/losses.h"

#include <cmath>

#include "ins/npz.h"

namespace ins {

namespace {

// VGG-16 feature stack through relu4_3 (block 5 is never requested by the
// losses, so it is not materialized).
struct ConvSpec {
  const char* name;
  int block;
  int conv;
  int in_ch;
  int out_ch;
};

constexpr ConvSpec kConvs[] = {
    {"conv1_1", 1, 1, 3, 64},    {"conv1_2", 1, 2, 64, 64},
    {"conv2_1", 2, 1, 64, 128},  {"conv2_2", 2, 2, 128, 128},
    {"conv3_1", 3, 1, 128, 256}, {"conv3_2", 3, 2, 256, 256}, {"conv3_3", 3, 3, 256, 256},
    {"conv4_1", 4, 1, 256, 512}, {"conv4_2", 4, 2, 512, 512}, {"conv4_3", 4, 3, 512, 512},
};

constexpr double kImagenetMean[3] = {0.485, 0.456, 0.406};
constexpr double kImagenetStd[3] = {0.229, 0.224, 0.225};
constexpr int kMinInputSide = 8;  // survives the three poolings before relu4_3

int conv_index(const std::string& key) {
  for (int i = 0; i < static_cast<int>(std::size(kConvs)); ++i) {
    if (FeatureExtractor::key(kConvs[i].block, kConvs[i].conv) == key) return i;
  }
  throw ConfigError("unknown feature layer key '" + key + "'");
}

}  // namespace

std::string FeatureExtractor::key(int block, int conv) {
  return "relu" + std::to_string(block) + "_" + std::to_string(conv);
}

const std::vector<std::string>& FeatureExtractor::default_style_keys() {
  static const std::vector<std::string> keys{"relu1_2", "relu2_2", "relu3_3", "relu4_3"};
  return keys;
}

const std::vector<std::string>& FeatureExtractor::default_content_keys() {
  static const std::vector<std::string> keys{"relu2_2"};
  return keys;
}

FeatureExtractor FeatureExtractor::vgg16(const std::string& weights_path) {
  auto arrays = load_npz(weights_path);
  FeatureExtractor ex;
  ex.backbone_ = Backbone::kVgg16;
  for (const ConvSpec& c : kConvs) {
    const std::string wname = std::string(c.name) + ".weight";
    const std::string bname = std::string(c.name) + ".bias";
    auto wit = arrays.find(wname);
    auto bit = arrays.find(bname);
    if (wit == arrays.end() || bit == arrays.end())
      throw DataError("backbone weight file " + weights_path + " is missing " + wname);
    const NpzArray& wa = wit->second;
    if (wa.shape != std::vector<int>{c.out_ch, c.in_ch, 3, 3})
      throw DataError("unexpected shape for " + wname);
    Param& w = ex.weights_.add(wname, {c.out_ch, c.in_ch * 9});
    w.data = wa.data;  // [Cout,Cin,3,3] row-major == [Cout, Cin*9]
    Param& b = ex.weights_.add(bname, {c.out_ch});
    if (static_cast<int>(bit->second.data.size()) != c.out_ch)
      throw DataError("unexpected shape for " + bname);
    b.data = bit->second.data;
  }
  return ex;
}

FeatureExtractor FeatureExtractor::surrogate(uint64_t seed) {
  FeatureExtractor ex;
  ex.backbone_ = Backbone::kSurrogate;
  Rng rng(seed);
  for (const ConvSpec& c : kConvs) {
    Param& w = ex.weights_.add(std::string(c.name) + ".weight", {c.out_ch, c.in_ch * 9});
    const double bound = std::sqrt(3.0) * std::sqrt(2.0 / (9.0 * c.in_ch));
    for (auto& v : w.data) v = static_cast<float>(rng.uniform(-bound, bound));
    Param& b = ex.weights_.add(std::string(c.name) + ".bias", {c.out_ch});
    for (auto& v : b.data) v = static_cast<float>(rng.uniform(-0.05, 0.05));
  }
  return ex;
}

std::pair<int, int> FeatureExtractor::feature_size(const std::string& key, int h, int w) const {
  const ConvSpec& c = kConvs[conv_index(key)];
  for (int b = 1; b < c.block; ++b) {
    h /= 2;
    w /= 2;
  }
  return {h, w};
}

int FeatureExtractor::feature_channels(const std::string& key) const {
  return kConvs[conv_index(key)].out_ch;
}

std::map<std::string, ad::Value> FeatureExtractor::extract(
    const ad::Value& image, int h, int w, const std::vector<std::string>& keys) const {
  if (image.val().rank() != 2 || image.val().rows() != 3 || image.val().cols() != h * w)
    throw ArgumentError("extract_features: image must be [3, H*W]");
  if (h < kMinInputSide || w < kMinInputSide)
    throw ArgumentError("extract_features: minimum input side is " +
                        std::to_string(kMinInputSide));
  int deepest = -1;
  for (const auto& k : keys) deepest = std::max(deepest, conv_index(k));
  if (deepest < 0) throw ConfigError("extract_features: no layer keys requested");

  // Per-channel normalization so callers always pass [0,1] images.
  Tensor shift({3, h * w});
  Tensor invstd({3, h * w});
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < h * w; ++i) {
      shift[static_cast<int64_t>(c) * h * w + i] = -kImagenetMean[c] / kImagenetStd[c];
      invstd[static_cast<int64_t>(c) * h * w + i] = 1.0 / kImagenetStd[c];
    }
  ad::Value x = ad::add(ad::mul_const(image, invstd), ad::constant(std::move(shift)));

  std::map<std::string, ad::Value> out;
  Bindings bind(weights_, /*requires_grad=*/false);
  int cur_h = h, cur_w = w;
  for (int i = 0; i <= deepest; ++i) {
    const ConvSpec& c = kConvs[i];
    if (i > 0 && kConvs[i].block != kConvs[i - 1].block) {
      x = ad::maxpool2(x, cur_h, cur_w);
      cur_h /= 2;
      cur_w /= 2;
    }
    x = ad::relu(ad::conv3x3(x, bind[std::string(c.name) + ".weight"],
                             bind[std::string(c.name) + ".bias"], cur_h, cur_w));
    const std::string k = key(c.block, c.conv);
    for (const auto& want : keys)
      if (want == k) out.emplace(k, x);
  }
  return out;
}

ad::Value gram(const ad::Value& features) {
  const int c = features.val().rows();
  const int hw = features.val().cols();
  return ad::scale(ad::matmul_nt(features, features), 1.0 / (static_cast<double>(c) * hw));
}

Tensor gram(const Tensor& features) { return gram(ad::constant(features)).val(); }

std::map<std::string, Tensor> style_grams(const FeatureExtractor& extractor, const Tensor& image,
                                          int h, int w, const std::vector<std::string>& keys) {
  auto feats = extractor.extract(ad::constant(image), h, w, keys);
  std::map<std::string, Tensor> grams;
  for (const auto& [k, f] : feats) grams.emplace(k, gram(f).val());
  return grams;
}

ad::Value content_loss_graph(const FeatureExtractor& extractor, const ad::Value& rendered,
                             const Tensor& reference, int h, int w,
                             const std::vector<std::string>& keys) {
  if (!rendered.val().same_shape(reference))
    throw ArgumentError("content_loss: rendered and reference shapes differ");
  auto fy = extractor.extract(rendered, h, w, keys);
  auto fc = extractor.extract(ad::constant(reference), h, w, keys);
  ad::Value total;
  for (const auto& k : keys) {
    const ad::Value& y = fy.at(k);
    const double chw = static_cast<double>(y.val().rows()) * y.val().cols();
    ad::Value term =
        ad::scale(ad::sum(ad::square(ad::sub(y, ad::detach(fc.at(k))))), 1.0 / chw);
    total = total.defined() ? ad::add(total, term) : term;
  }
  return total;
}

ad::Value style_loss_graph(const FeatureExtractor& extractor, const ad::Value& rendered, int h,
                           int w, const std::map<std::string, Tensor>& target_grams) {
  std::vector<std::string> keys;
  for (const auto& [k, g] : target_grams) keys.push_back(k);
  auto fy = extractor.extract(rendered, h, w, keys);
  ad::Value total;
  for (const auto& [k, target] : target_grams) {
    ad::Value term = ad::sum(ad::square(ad::sub(gram(fy.at(k)), ad::constant(target))));
    total = total.defined() ? ad::add(total, term) : term;
  }
  return total;
}

ad::Value recon_loss_graph(const ad::Value& rendered, const Tensor& reference) {
  if (!rendered.val().same_shape(reference))
    throw ArgumentError("recon_loss: length mismatch");
  return ad::mean(ad::square(ad::sub(rendered, ad::constant(reference))));
}

ad::Value geometry_loss_graph(const ad::Value& stylized, const ad::Value& frozen) {
  if (!stylized.val().same_shape(frozen.val()))
    throw ArgumentError("geometry_loss: length mismatch");
  return ad::mean(ad::abs_op(ad::sub(stylized, ad::detach(frozen))));
}

double content_loss(const FeatureExtractor& extractor, const Tensor& rendered,
                    const Tensor& reference, int h, int w) {
  return content_loss_graph(extractor, ad::constant(rendered), reference, h, w,
                            FeatureExtractor::default_content_keys())
      .val()[0];
}

double style_loss(const FeatureExtractor& extractor, const Tensor& rendered, int rh, int rw,
                  const Tensor& style, int sh, int sw) {
  auto grams = style_grams(extractor, style, sh, sw, FeatureExtractor::default_style_keys());
  return style_loss_graph(extractor, ad::constant(rendered), rh, rw, grams).val()[0];
}

double recon_loss(const Tensor& rendered, const Tensor& reference) {
  return recon_loss_graph(ad::constant(rendered), reference).val()[0];
}

double geometry_loss(const Tensor& stylized, const Tensor& frozen) {
  return geometry_loss_graph(ad::constant(stylized), ad::constant(frozen)).val()[0];
}

void LossWeights::validate() const {
  if (!(recon >= 0.0) || !(geometry >= 0.0) || !(content >= 0.0) || !(style >= 0.0))
    throw ConfigError("loss weights must be finite and non-negative");
}

LossWeights effective_weights(const LossWeights& weights, int64_t step) {
  LossWeights w = weights;
  if (step < weights.phase_boundary) {
    w.geometry = 0.0;
    w.content = 0.0;
    w.style = 0.0;
  }
  return w;
}

double recompose_total(const LossBreakdown& terms, const LossWeights& weights) {
  return weights.recon * terms.recon + weights.geometry * terms.geometry +
         weights.content * terms.content + weights.style * terms.style;
}

}  // namespace ins
