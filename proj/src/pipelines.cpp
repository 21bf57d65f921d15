// Copyright Contributors to the INS Project
// SPDX-License-Identifier: Apache-2.0

#include "ins/pipelines.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace ins {

namespace {

constexpr Vec3 kWhite{1.0, 1.0, 1.0};
constexpr Vec3 kBlack{0.0, 0.0, 0.0};

void check_finite(const LossBreakdown& terms, int64_t step) {
  auto bad = [](double v) { return !std::isfinite(v); };
  const char* name = nullptr;
  if (bad(terms.recon)) name = "reconstruction";
  else if (bad(terms.geometry)) name = "geometry";
  else if (bad(terms.content)) name = "content";
  else if (bad(terms.style)) name = "style";
  else if (bad(terms.total)) name = "total";
  if (name != nullptr)
    throw Error(std::string("non-finite ") + name + " loss at step " + std::to_string(step));
}

void save_step_checkpoint(const Model& m, const std::string& out_dir, bool final) {
  if (out_dir.empty()) return;
  const TrainConfig& t = m.train;
  if (final) {
    make_checkpoint(m).save((fs::path(out_dir) / "checkpoint_final.ins").string());
  } else if (t.checkpoint_every > 0 && m.global_step % t.checkpoint_every == 0) {
    char name[48];
    std::snprintf(name, sizeof(name), "checkpoint_step_%06lld.ins",
                  static_cast<long long>(m.global_step));
    make_checkpoint(m).save((fs::path(out_dir) / name).string());
  }
}

Tensor gather_rows(const Image& img, const std::vector<std::pair<int, int>>& pixels) {
  Tensor t({static_cast<int>(pixels.size()), 3});
  for (size_t i = 0; i < pixels.size(); ++i)
    for (int ch = 0; ch < 3; ++ch)
      t[static_cast<int64_t>(i) * 3 + ch] = img.at(pixels[i].first, pixels[i].second, ch);
  return t;
}

Tensor rows_to_chw(const Tensor& rows) {
  const int n = rows.rows();
  Tensor t({3, n});
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < 3; ++ch) t[static_cast<int64_t>(ch) * n + i] = rows.at(i, ch);
  return t;
}

std::vector<std::map<std::string, Tensor>> precompute_style_grams(
    const FeatureExtractor& extractor, const StyleSet& styles) {
  std::vector<std::map<std::string, Tensor>> grams;
  grams.reserve(styles.styles.size());
  for (const auto& s : styles.styles)
    grams.push_back(style_grams(extractor, image_to_chw(s.image), styles.resolution,
                                styles.resolution, FeatureExtractor::default_style_keys()));
  return grams;
}

json style_ids(const StyleSet& styles) {
  json ids = json::array();
  for (const auto& s : styles.styles) ids.push_back(s.id);
  return ids;
}

double q8(double v) { return std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

}  // namespace

TrainLogger::TrainLogger(const std::string& out_dir) {
  if (out_dir.empty()) return;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  out_.open((fs::path(out_dir) / "log.jsonl").string(), std::ios::app);
}

void TrainLogger::log(int64_t step, const LossBreakdown& terms, const LossWeights& weights) {
  if (!out_.is_open()) return;
  json rec{{"step", step},
           {"total", terms.total},
           {"recon", terms.recon},
           {"geometry", terms.geometry},
           {"content", terms.content},
           {"style", terms.style},
           {"lambda_recon", weights.recon},
           {"lambda_geometry", weights.geometry},
           {"lambda_content", weights.content},
           {"lambda_style", weights.style}};
  out_ << rec.dump() << "\n";
  out_.flush();
}

Checkpoint make_checkpoint(const Model& m) {
  Checkpoint c;
  json cfg;
  cfg["field"] = to_json(m.field.config());
  cfg["train"] = to_json(m.train);
  cfg["extra"] = m.extra;
  c.config_json = cfg.dump();
  json meta;
  meta["step"] = m.global_step;
  meta["phase"] = phase_name(m.field.phase());
  meta["rng"] = m.rng.serialize();
  meta["adam_step"] = m.adam.step_count();
  c.meta_json = meta.dump();
  for (const Param& p : m.field.params().params()) c.put_array("param." + p.name, p);
  if (const ParamStore* frozen = m.field.frozen_cim())
    for (const Param& p : frozen->params()) c.put_array("frozen." + p.name, p);
  for (const auto& [name, mv] : m.adam.slots()) {
    const Param& p = m.field.params().get(name);
    Param pm;
    pm.shape = p.shape;
    pm.data = mv.first;
    c.put_array("adam.m." + name, pm);
    Param pv;
    pv.shape = p.shape;
    pv.data = mv.second;
    c.put_array("adam.v." + name, pv);
  }
  return c;
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
  json cfg;
  json meta;
  try {
    cfg = json::parse(ckpt.config_json);
    meta = json::parse(ckpt.meta_json);
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint JSON: ") + e.what());
  }
  FieldConfig fcfg = field_config_from_json(cfg.at("field"), "checkpoint.field");
  Model m(fcfg);
  m.train = train_config_from_json(cfg.at("train"), "checkpoint.train");
  if (cfg.contains("extra")) m.extra = cfg.at("extra");

  Rng scratch(0);
  m.field.init(scratch);  // builds the parameter structure; arrays overwrite it
  for (Param& p : m.field.params().params()) {
    const Param* a = ckpt.find_array("param." + p.name);
    if (a == nullptr) throw CheckpointError("checkpoint is missing array param." + p.name);
    if (a->shape != p.shape) throw CheckpointError("shape mismatch for param." + p.name);
    p.data = a->data;
  }
  ParamStore frozen;
  for (const Param& a : ckpt.arrays) {
    if (a.name.rfind("frozen.", 0) != 0) continue;
    frozen.add(a.name.substr(7), a.shape).data = a.data;
  }
  if (frozen.size() > 0) m.field.adopt_frozen_cim(std::move(frozen));

  m.global_step = meta.at("step").get<int64_t>();
  m.field.set_phase(phase_from_name(meta.at("phase").get<std::string>()));
  m.rng.deserialize(meta.at("rng").get<std::string>());
  m.adam = AdamOptimizer({m.train.learning_rate});
  m.adam.set_step_count(meta.at("adam_step").get<int64_t>());
  for (const Param& a : ckpt.arrays) {
    const bool is_m = a.name.rfind("adam.m.", 0) == 0;
    const bool is_v = a.name.rfind("adam.v.", 0) == 0;
    if (!is_m && !is_v) continue;
    const std::string pname = a.name.substr(7);
    auto& slot = m.adam.slots()[pname];
    (is_m ? slot.first : slot.second) = a.data;
  }
  return m;
}

namespace {

Image render_siren_image(INSField& field, int height, int width, const StyleCode* code) {
  const Tensor grid = pixel_grid(height, width);
  Image img = Image::make(height, width, 3);
  constexpr int kChunk = 4096;
  const int total = height * width;
  for (int start = 0; start < total; start += kChunk) {
    const int count = std::min(kChunk, total - start);
    Tensor pos({count, 2});
    for (int i = 0; i < count; ++i) {
      pos[static_cast<int64_t>(i) * 2] = grid[static_cast<int64_t>(start + i) * 2];
      pos[static_cast<int64_t>(i) * 2 + 1] = grid[static_cast<int64_t>(start + i) * 2 + 1];
    }
    Tensor colors = field.eval_colors(pos, code);
    for (int i = 0; i < count; ++i)
      for (int ch = 0; ch < 3; ++ch)
        img.data[static_cast<size_t>(start + i) * 3 + ch] = colors[static_cast<int64_t>(i) * 3 + ch];
  }
  return img;
}

}  // namespace

Model fit_siren(const Image& image, const StyleSet& styles, const FieldConfig& field_cfg,
                const TrainConfig& train_cfg, const FeatureExtractor& extractor,
                const std::string& out_dir) {
  if (image.channels != 3) throw DataError("fit_siren expects an RGB content image");
  FieldConfig fcfg = field_cfg;
  fcfg.kind = FieldKind::kSiren;
  fcfg.style_count = styles.count();
  fcfg.validate();
  TrainConfig tcfg = train_cfg;
  tcfg.validate();
  tcfg.weights.phase_boundary = tcfg.pretrain_steps;

  Model m(fcfg);
  m.train = tcfg;
  m.rng = Rng(tcfg.seed);
  m.adam = AdamOptimizer({tcfg.learning_rate});
  m.field.init(m.rng);
  m.extra["styles"] = style_ids(styles);
  m.extra["content_height"] = image.height;
  m.extra["content_width"] = image.width;

  TrainLogger logger(out_dir);
  const int h = image.height, w = image.width;
  const Tensor grid = pixel_grid(h, w);
  const Tensor targets = image_to_rows(image);
  const auto grams = precompute_style_grams(extractor, styles);
  const int n_styles = styles.count();

  const int64_t total_steps = tcfg.pretrain_steps + tcfg.stylize_steps;
  for (int64_t step = m.global_step; step < total_steps; ++step) {
    if (step == tcfg.pretrain_steps) m.field.set_phase(Phase::kStylize);
    const LossWeights eff = effective_weights(tcfg.weights, step);
    Bindings live(m.field.params());
    LossBreakdown terms;
    ad::Value total_graph;

    if (step < tcfg.pretrain_steps) {
      const int batch = static_cast<int>(std::min<int64_t>(tcfg.rays_per_batch, h * w));
      Tensor pos({batch, 2});
      Tensor ref({batch, 3});
      for (int b = 0; b < batch; ++b) {
        const auto idx = static_cast<int64_t>(m.rng.uniform_index(static_cast<uint64_t>(h) * w));
        pos[static_cast<int64_t>(b) * 2] = grid[idx * 2];
        pos[static_cast<int64_t>(b) * 2 + 1] = grid[idx * 2 + 1];
        for (int ch = 0; ch < 3; ++ch) ref[static_cast<int64_t>(b) * 3 + ch] = targets[idx * 3 + ch];
      }
      auto out = m.field.forward(live, nullptr, ad::constant(std::move(pos)), ad::Value(), nullptr);
      ad::Value rec = recon_loss_graph(out.color, ref);
      terms.recon = rec.val()[0];
      total_graph = ad::scale(rec, eff.recon);
    } else {
      const auto pixels = stride_patch(h, w, tcfg.patch_size, tcfg.patch_stride, m.rng);
      const int p = tcfg.patch_size;
      const int count = p * p;
      Tensor pos({count, 2});
      for (int i = 0; i < count; ++i) {
        const int64_t idx = static_cast<int64_t>(pixels[static_cast<size_t>(i)].first) * w +
                            pixels[static_cast<size_t>(i)].second;
        pos[static_cast<int64_t>(i) * 2] = grid[idx * 2];
        pos[static_cast<int64_t>(i) * 2 + 1] = grid[idx * 2 + 1];
      }
      const Tensor ref_rows = gather_rows(image, pixels);
      const Tensor ref_chw = rows_to_chw(ref_rows);
      const ad::Value pos_const = ad::constant(std::move(pos));
      ad::Value acc;
      for (int s = 0; s < n_styles; ++s) {
        const StyleCode& code = styles.styles[static_cast<size_t>(s)].code;
        auto out = m.field.forward(live, nullptr, pos_const, ad::Value(), &code);
        ad::Value rec = recon_loss_graph(out.color, ref_rows);
        ad::Value chw = ad::transpose(out.color);
        ad::Value cont = content_loss_graph(extractor, chw, ref_chw, p, p,
                                            FeatureExtractor::default_content_keys());
        ad::Value sty =
            style_loss_graph(extractor, chw, p, p, grams[static_cast<size_t>(s)]);
        terms.recon += rec.val()[0] / n_styles;
        terms.content += cont.val()[0] / n_styles;
        terms.style += sty.val()[0] / n_styles;
        ad::Value weighted = ad::add(ad::scale(rec, eff.recon),
                                     ad::add(ad::scale(cont, eff.content),
                                             ad::scale(sty, eff.style)));
        acc = acc.defined() ? ad::add(acc, weighted) : weighted;
      }
      total_graph = ad::scale(acc, 1.0 / n_styles);
    }
    terms.total = recompose_total(terms, eff);
    check_finite(terms, step);
    ad::backward(total_graph);
    m.adam.step(m.field.params(), live.grads());
    m.global_step = step + 1;
    logger.log(step, terms, eff);
    save_step_checkpoint(m, out_dir, /*final=*/false);
  }

  if (!out_dir.empty()) {
    save_step_checkpoint(m, out_dir, /*final=*/true);
    save_png_rgb8((fs::path(out_dir) / "preview_content.png").string(),
                  render_siren_image(m.field, h, w, nullptr));
    if (m.field.phase() == Phase::kStylize)
      for (int s = 0; s < n_styles; ++s) {
        const StyleCode code = StyleCode::one_hot(n_styles, s);
        save_png_rgb8((fs::path(out_dir) /
                       ("preview_style_" + styles.styles[static_cast<size_t>(s)].id + ".png"))
                          .string(),
                      render_siren_image(m.field, h, w, &code));
      }
  }
  return m;
}

Model pretrain_nerf(const PosedImageSet& scene, const FieldConfig& field_cfg,
                    const TrainConfig& train_cfg, const std::string& out_dir,
                    const Checkpoint* resume) {
  if (scene.images.size() < 2) throw DataError("radiance-field training needs >= 2 posed views");
  for (const Camera& cam : scene.cameras) cam.validate();

  std::optional<Model> restored;
  if (resume != nullptr) {
    restored.emplace(model_from_checkpoint(*resume));
    if (restored->field.phase() != Phase::kPretrain)
      throw ArgumentError("resume checkpoint is not a pretrain checkpoint");
  }
  FieldConfig fcfg = field_cfg;
  fcfg.kind = FieldKind::kNerf;
  fcfg.validate();
  TrainConfig tcfg = train_cfg;
  tcfg.validate();

  Model m = restored ? std::move(*restored) : Model(fcfg);
  if (!restored) {
    m.train = tcfg;
    m.rng = Rng(tcfg.seed);
    m.adam = AdamOptimizer({tcfg.learning_rate});
    m.field.init(m.rng);
    m.extra["scene_near"] = scene.t_near;
    m.extra["scene_far"] = scene.t_far;
  }

  TrainLogger logger(out_dir);
  LossWeights pre_weights;
  pre_weights.recon = tcfg.weights.recon;
  pre_weights.geometry = 0.0;
  pre_weights.content = 0.0;
  pre_weights.style = 0.0;

  const int views = static_cast<int>(scene.images.size());
  for (int64_t step = m.global_step; step < m.train.pretrain_steps; ++step) {
    Bindings live(m.field.params());
    const int batch = m.train.rays_per_batch;
    std::vector<Ray> rays;
    rays.reserve(static_cast<size_t>(batch));
    Tensor ref({batch, 3});
    for (int b = 0; b < batch; ++b) {
      const int v = static_cast<int>(m.rng.uniform_index(static_cast<uint64_t>(views)));
      const Camera& cam = scene.cameras[static_cast<size_t>(v)];
      const int r = static_cast<int>(m.rng.uniform_index(static_cast<uint64_t>(cam.height)));
      const int c = static_cast<int>(m.rng.uniform_index(static_cast<uint64_t>(cam.width)));
      rays.push_back(camera_rays(cam, {{r, c}}, scene.t_near, scene.t_far).rays[0]);
      for (int ch = 0; ch < 3; ++ch)
        ref[static_cast<int64_t>(b) * 3 + ch] = scene.images[static_cast<size_t>(v)].at(r, c, ch);
    }
    RenderGraph g = render_rays_graph(m.field, live, nullptr, rays, nullptr,
                                      m.train.samples_per_ray, m.train.jitter_samples, m.rng,
                                      kWhite);
    ad::Value rec = recon_loss_graph(g.comp.color, ref);
    LossBreakdown terms;
    terms.recon = rec.val()[0];
    terms.total = recompose_total(terms, pre_weights);
    check_finite(terms, step);
    ad::backward(ad::scale(rec, pre_weights.recon));
    m.adam.step(m.field.params(), live.grads());
    m.global_step = step + 1;
    logger.log(step, terms, pre_weights);
    save_step_checkpoint(m, out_dir, /*final=*/false);
  }
  save_step_checkpoint(m, out_dir, /*final=*/true);
  return m;
}

Model stylize_nerf(const Checkpoint& pretrained, const PosedImageSet& scene,
                   const StyleSet& styles, const TrainConfig& train_cfg,
                   const FeatureExtractor& extractor, const std::string& out_dir) {
  Model m = model_from_checkpoint(pretrained);
  if (m.field.phase() != Phase::kPretrain)
    throw ArgumentError("stylize_nerf requires a pretrain-phase checkpoint");
  if (m.field.config().style_count != styles.count())
    throw ConfigError("style count " + std::to_string(styles.count()) +
                      " does not match SIM input width " +
                      std::to_string(m.field.config().style_count));
  TrainConfig tcfg = train_cfg;
  tcfg.validate();

  m.train = tcfg;
  m.rng = Rng(tcfg.seed);
  m.adam = AdamOptimizer({tcfg.learning_rate});
  m.global_step = 0;
  m.field.freeze_cim_copy();
  m.field.set_phase(Phase::kStylize);
  m.extra["styles"] = style_ids(styles);

  TrainLogger logger(out_dir);
  const auto grams = precompute_style_grams(extractor, styles);
  const int n_styles = styles.count();
  const int views = static_cast<int>(scene.images.size());
  const LossWeights eff = effective_weights(tcfg.weights, tcfg.weights.phase_boundary);

  for (int64_t step = m.global_step; step < tcfg.stylize_steps; ++step) {
    const int v = static_cast<int>(m.rng.uniform_index(static_cast<uint64_t>(views)));
    const Camera& cam = scene.cameras[static_cast<size_t>(v)];
    const auto pixels =
        stride_patch(cam.height, cam.width, tcfg.patch_size, tcfg.patch_stride, m.rng);
    RayBatch batch = camera_rays(cam, pixels, scene.t_near, scene.t_far);
    const Tensor ref_rows = gather_rows(scene.images[static_cast<size_t>(v)], pixels);
    const Tensor ref_chw = rows_to_chw(ref_rows);
    const int p = tcfg.patch_size;

    Bindings live(m.field.params());
    Bindings frozen(*m.field.frozen_cim(), /*requires_grad=*/false);
    LossBreakdown terms;
    ad::Value acc;
    for (int s = 0; s < n_styles; ++s) {
      const StyleCode& code = styles.styles[static_cast<size_t>(s)].code;
      RenderGraph g =
          render_rays_graph(m.field, live, &frozen, batch.rays, &code, tcfg.samples_per_ray,
                            tcfg.jitter_samples, m.rng, kWhite);
      ad::Value sigma1 = ad::reshape(
          m.field.frozen_density(frozen, ad::constant(g.sample_positions)),
          {static_cast<int>(batch.rays.size()), tcfg.samples_per_ray});
      ad::Value geo = geometry_loss_graph(g.sample_density, sigma1);
      ad::Value rec = recon_loss_graph(g.comp.color, ref_rows);
      ad::Value chw = ad::transpose(g.comp.color);
      ad::Value cont = content_loss_graph(extractor, chw, ref_chw, p, p,
                                          FeatureExtractor::default_content_keys());
      ad::Value sty = style_loss_graph(extractor, chw, p, p, grams[static_cast<size_t>(s)]);
      terms.recon += rec.val()[0] / n_styles;
      terms.geometry += geo.val()[0] / n_styles;
      terms.content += cont.val()[0] / n_styles;
      terms.style += sty.val()[0] / n_styles;
      ad::Value weighted = ad::add(
          ad::add(ad::scale(rec, eff.recon), ad::scale(geo, eff.geometry)),
          ad::add(ad::scale(cont, eff.content), ad::scale(sty, eff.style)));
      acc = acc.defined() ? ad::add(acc, weighted) : weighted;
    }
    terms.total = recompose_total(terms, eff);
    check_finite(terms, step);
    ad::backward(ad::scale(acc, 1.0 / n_styles));
    m.adam.step(m.field.params(), live.grads());
    m.global_step = step + 1;
    logger.log(step, terms, eff);
    save_step_checkpoint(m, out_dir, /*final=*/false);
  }
  save_step_checkpoint(m, out_dir, /*final=*/true);
  return m;
}

BatchTrace sphere_trace_batch(const INSField& field, const std::vector<Ray>& rays, int max_steps,
                              double eps, double damping) {
  const int n = static_cast<int>(rays.size());
  BatchTrace out;
  out.t.resize(static_cast<size_t>(n));
  out.converged.assign(static_cast<size_t>(n), 0);
  std::vector<int> active(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    out.t[static_cast<size_t>(i)] = rays[static_cast<size_t>(i)].t_near;
    active[static_cast<size_t>(i)] = i;
  }
  for (int step = 0; step < max_steps && !active.empty(); ++step) {
    Tensor pos({static_cast<int>(active.size()), 3});
    for (size_t a = 0; a < active.size(); ++a) {
      const int i = active[a];
      const Vec3 p = rays[static_cast<size_t>(i)].point_at(out.t[static_cast<size_t>(i)]);
      for (int c = 0; c < 3; ++c) pos[static_cast<int64_t>(a) * 3 + c] = p[static_cast<size_t>(c)];
    }
    const Tensor f = field.sdf_distances(pos);
    std::vector<int> next;
    next.reserve(active.size());
    for (size_t a = 0; a < active.size(); ++a) {
      const int i = active[a];
      const double fi = f[static_cast<int64_t>(a)];
      if (std::abs(fi) < eps) {
        out.converged[static_cast<size_t>(i)] = 1;
        continue;
      }
      out.t[static_cast<size_t>(i)] += damping * fi;
      if (out.t[static_cast<size_t>(i)] <= rays[static_cast<size_t>(i)].t_far) next.push_back(i);
    }
    active.swap(next);
  }
  return out;
}

namespace {

// Shared by SDF training phases: builds the differentiable colors for the
// rays that hit the surface inside the mask.
struct SdfHits {
  std::vector<int> patch_index;  // position of each hit within the pixel list
  Tensor refs;                   // [M,3]
  ad::Value colors;              // [M,3] differentiable
};

std::optional<SdfHits> sdf_hit_colors(INSField& field, Bindings& live, const Image& image,
                                      const Image& mask, const RayBatch& batch,
                                      const StyleCode* code) {
  BatchTrace trace = sphere_trace_batch(field, batch.rays);
  std::vector<int> hits;
  for (size_t i = 0; i < batch.rays.size(); ++i) {
    if (trace.converged[i] == 0) continue;
    const auto& [r, c] = batch.pixels[i];
    if (mask.at(r, c, 0) < 0.5) continue;
    hits.push_back(static_cast<int>(i));
  }
  if (hits.empty()) return std::nullopt;
  const int mcount = static_cast<int>(hits.size());

  Tensor p0({mcount, 3});
  Tensor dirs({mcount, 3});
  Tensor refs({mcount, 3});
  for (int j = 0; j < mcount; ++j) {
    const int i = hits[static_cast<size_t>(j)];
    const Ray& ray = batch.rays[static_cast<size_t>(i)];
    const Vec3 p = ray.point_at(trace.t[static_cast<size_t>(i)]);
    for (int c = 0; c < 3; ++c) {
      p0[static_cast<int64_t>(j) * 3 + c] = p[static_cast<size_t>(c)];
      dirs[static_cast<int64_t>(j) * 3 + c] = ray.dir[static_cast<size_t>(c)];
    }
    const auto& [r, c] = batch.pixels[static_cast<size_t>(i)];
    for (int ch = 0; ch < 3; ++ch) refs[static_cast<int64_t>(j) * 3 + ch] = image.at(r, c, ch);
  }

  // Frozen linearization pieces (grad_f0 . v0), grazing rays dropped.
  const Tensor grad0 = field.sdf_gradients(p0);
  std::vector<int> keep;
  for (int j = 0; j < mcount; ++j) {
    double dot = 0.0;
    for (int c = 0; c < 3; ++c)
      dot += grad0[static_cast<int64_t>(j) * 3 + c] * dirs[static_cast<int64_t>(j) * 3 + c];
    if (std::abs(dot) >= 1e-6) keep.push_back(j);
  }
  if (keep.empty()) return std::nullopt;
  const int kcount = static_cast<int>(keep.size());
  Tensor kp0({kcount, 3});
  Tensor kdirs({kcount, 3});
  Tensor krefs({kcount, 3});
  Tensor vscale({kcount, 3});
  std::vector<int> patch_index(static_cast<size_t>(kcount));
  for (int j = 0; j < kcount; ++j) {
    const int src = keep[static_cast<size_t>(j)];
    double dot = 0.0;
    for (int c = 0; c < 3; ++c)
      dot += grad0[static_cast<int64_t>(src) * 3 + c] * dirs[static_cast<int64_t>(src) * 3 + c];
    for (int c = 0; c < 3; ++c) {
      kp0[static_cast<int64_t>(j) * 3 + c] = p0[static_cast<int64_t>(src) * 3 + c];
      kdirs[static_cast<int64_t>(j) * 3 + c] = dirs[static_cast<int64_t>(src) * 3 + c];
      krefs[static_cast<int64_t>(j) * 3 + c] = refs[static_cast<int64_t>(src) * 3 + c];
      vscale[static_cast<int64_t>(j) * 3 + c] = dirs[static_cast<int64_t>(src) * 3 + c] / dot;
    }
    patch_index[static_cast<size_t>(j)] = hits[static_cast<size_t>(src)];
  }

  // x_hat = p0 - f(p0) * v/(grad.v); gradient flows through f only.
  auto geo = field.sdf_eval(live, ad::constant(kp0));
  Tensor ones_row({1, 3});
  ones_row.fill(1.0);
  ad::Value f3 = ad::matmul(geo.distance, ad::constant(ones_row));
  ad::Value x_hat = ad::sub(ad::constant(kp0), ad::mul_const(f3, vscale));

  // Normals: exact spatial gradients at the (detached) surface points.
  Tensor x_val = x_hat.val();
  Tensor normals = field.sdf_gradients(x_val);
  for (int j = 0; j < kcount; ++j) {
    double n2 = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double g = normals[static_cast<int64_t>(j) * 3 + c];
      n2 += g * g;
    }
    const double inv = 1.0 / std::max(std::sqrt(n2), 1e-8);
    for (int c = 0; c < 3; ++c) normals[static_cast<int64_t>(j) * 3 + c] *= inv;
  }

  // Appearance embedding at the surface point (parameter-differentiable).
  auto at_surface = field.sdf_eval(live, ad::constant(x_val));
  SdfHits out;
  out.patch_index = std::move(patch_index);
  out.refs = std::move(krefs);
  out.colors = field.sdf_render_head(live, x_hat, ad::constant(normals), ad::constant(kdirs),
                                     at_surface.feature, code);
  return out;
}

}  // namespace

Model pretrain_sdf(const PosedImageSet& scene, const FieldConfig& field_cfg,
                   const TrainConfig& train_cfg, const std::string& out_dir) {
  if (scene.masks.size() != scene.images.size())
    throw DataError("sdf training requires per-image masks");
  FieldConfig fcfg = field_cfg;
  fcfg.kind = FieldKind::kSdf;
  fcfg.validate();
  TrainConfig tcfg = train_cfg;
  tcfg.validate();

  Model m(fcfg);
  m.train = tcfg;
  m.rng = Rng(tcfg.seed);
  m.adam = AdamOptimizer({tcfg.learning_rate});
  m.field.init(m.rng);
  m.extra["scene_near"] = scene.t_near;
  m.extra["scene_far"] = scene.t_far;

  TrainLogger logger(out_dir);
  LossWeights pre_weights;
  pre_weights.recon = tcfg.weights.recon;
  pre_weights.geometry = 0.0;
  pre_weights.content = 0.0;
  pre_weights.style = 0.0;
  const int views = static_cast<int>(scene.images.size());

  for (int64_t step = m.global_step; step < tcfg.pretrain_steps; ++step) {
    const int v = static_cast<int>(m.rng.uniform_index(static_cast<uint64_t>(views)));
    const Camera& cam = scene.cameras[static_cast<size_t>(v)];
    std::vector<std::pair<int, int>> pixels;
    pixels.reserve(static_cast<size_t>(tcfg.rays_per_batch));
    for (int b = 0; b < tcfg.rays_per_batch; ++b)
      pixels.emplace_back(static_cast<int>(m.rng.uniform_index(static_cast<uint64_t>(cam.height))),
                          static_cast<int>(m.rng.uniform_index(static_cast<uint64_t>(cam.width))));
    RayBatch batch = camera_rays(cam, pixels, scene.t_near, scene.t_far);

    Bindings live(m.field.params());
    auto hits = sdf_hit_colors(m.field, live, scene.images[static_cast<size_t>(v)],
                               scene.masks[static_cast<size_t>(v)], batch, nullptr);
    if (!hits) {
      std::cerr << "[pretrain_sdf] step " << step << ": no surface hits in batch, skipped\n";
      m.global_step = step + 1;
      continue;
    }
    ad::Value rec = recon_loss_graph(hits->colors, hits->refs);
    LossBreakdown terms;
    terms.recon = rec.val()[0];
    terms.total = recompose_total(terms, pre_weights);
    check_finite(terms, step);
    ad::backward(ad::scale(rec, pre_weights.recon));
    m.adam.step(m.field.params(), live.grads());
    m.global_step = step + 1;
    logger.log(step, terms, pre_weights);
    save_step_checkpoint(m, out_dir, /*final=*/false);
  }
  save_step_checkpoint(m, out_dir, /*final=*/true);
  return m;
}

Model stylize_sdf(const Checkpoint& pretrained, const PosedImageSet& scene,
                  const StyleSet& styles, const TrainConfig& train_cfg,
                  const FeatureExtractor& extractor, const std::string& out_dir) {
  if (scene.masks.size() != scene.images.size())
    throw DataError("sdf stylization requires per-image masks");
  Model m = model_from_checkpoint(pretrained);
  if (m.field.config().kind != FieldKind::kSdf)
    throw ArgumentError("stylize_sdf requires an sdf checkpoint");
  if (m.field.phase() != Phase::kPretrain)
    throw ArgumentError("stylize_sdf requires a pretrain-phase checkpoint");
  if (m.field.config().style_count != styles.count())
    throw ConfigError("style count does not match SIM input width");
  TrainConfig tcfg = train_cfg;
  tcfg.validate();
  m.train = tcfg;
  m.rng = Rng(tcfg.seed);
  m.adam = AdamOptimizer({tcfg.learning_rate});
  m.global_step = 0;
  m.field.set_phase(Phase::kStylize);
  m.extra["styles"] = style_ids(styles);

  // IDR-style stylization has no self-distillation term; the SDF trunk
  // trains at a heavily reduced rate instead.
  const double geometry_scale = tcfg.sdf_geometry_lr_multiplier;
  auto lr_scale = [geometry_scale](const std::string& name) {
    return name.rfind("cim.", 0) == 0 ? geometry_scale : 1.0;
  };

  TrainLogger logger(out_dir);
  const auto grams = precompute_style_grams(extractor, styles);
  const int n_styles = styles.count();
  const int views = static_cast<int>(scene.images.size());
  LossWeights eff = effective_weights(tcfg.weights, tcfg.weights.phase_boundary);
  eff.geometry = 0.0;

  for (int64_t step = m.global_step; step < tcfg.stylize_steps; ++step) {
    const int v = static_cast<int>(m.rng.uniform_index(static_cast<uint64_t>(views)));
    const Camera& cam = scene.cameras[static_cast<size_t>(v)];
    const auto pixels =
        stride_patch(cam.height, cam.width, tcfg.patch_size, tcfg.patch_stride, m.rng);
    RayBatch batch = camera_rays(cam, pixels, scene.t_near, scene.t_far);
    const int p = tcfg.patch_size;
    const int count = p * p;

    Bindings live(m.field.params());
    LossBreakdown terms;
    ad::Value acc;
    bool skipped = false;
    for (int s = 0; s < n_styles; ++s) {
      const StyleCode& code = styles.styles[static_cast<size_t>(s)].code;
      auto hits = sdf_hit_colors(m.field, live, scene.images[static_cast<size_t>(v)],
                                 scene.masks[static_cast<size_t>(v)], batch, &code);
      if (!hits) {
        skipped = true;
        break;
      }
      // Patch with background zeroed on both sides, so only the masked
      // region ever contributes to content/style statistics.
      Tensor ref_masked({count, 3});
      for (const int i : hits->patch_index) {
        const auto& [r, c] = batch.pixels[static_cast<size_t>(i)];
        for (int ch = 0; ch < 3; ++ch)
          ref_masked[static_cast<int64_t>(i) * 3 + ch] =
              scene.images[static_cast<size_t>(v)].at(r, c, ch);
      }
      ad::Value patch_rows = ad::scatter_rows(hits->colors, hits->patch_index, count);
      ad::Value chw = ad::transpose(patch_rows);
      ad::Value rec = recon_loss_graph(hits->colors, hits->refs);
      ad::Value cont = content_loss_graph(extractor, chw, rows_to_chw(ref_masked), p, p,
                                          FeatureExtractor::default_content_keys());
      ad::Value sty = style_loss_graph(extractor, chw, p, p, grams[static_cast<size_t>(s)]);
      terms.recon += rec.val()[0] / n_styles;
      terms.content += cont.val()[0] / n_styles;
      terms.style += sty.val()[0] / n_styles;
      ad::Value weighted =
          ad::add(ad::scale(rec, eff.recon),
                  ad::add(ad::scale(cont, eff.content), ad::scale(sty, eff.style)));
      acc = acc.defined() ? ad::add(acc, weighted) : weighted;
    }
    if (skipped) {
      std::cerr << "[stylize_sdf] step " << step << ": all-miss patch, skipped\n";
      m.global_step = step + 1;
      continue;
    }
    terms.total = recompose_total(terms, eff);
    check_finite(terms, step);
    ad::backward(ad::scale(acc, 1.0 / n_styles));
    m.adam.step(m.field.params(), live.grads(), lr_scale);
    m.global_step = step + 1;
    logger.log(step, terms, eff);
    save_step_checkpoint(m, out_dir, /*final=*/false);
  }
  save_step_checkpoint(m, out_dir, /*final=*/true);
  return m;
}

Frame render_view(Model& model, const Camera& camera, const StyleCode* code, double t_near,
                  double t_far, int samples_per_ray) {
  const FieldKind kind = model.field.config().kind;
  if (code != nullptr && model.field.phase() != Phase::kStylize)
    throw ArgumentError("pretrain checkpoints render with the zero style code");
  if (code != nullptr) code->validate(model.field.config().style_count);
  const int k = samples_per_ray > 0 ? samples_per_ray : model.train.samples_per_ray;

  Frame frame;
  if (kind == FieldKind::kSiren) {
    frame.color = render_siren_image(model.field, camera.height, camera.width, code);
    return frame;
  }

  const int h = camera.height, w = camera.width;
  frame.color = Image::make(h, w, 3);
  frame.depth = Image::make(h, w, 1);
  constexpr int kChunk = 1024;
  std::vector<std::pair<int, int>> pixels;
  pixels.reserve(kChunk);
  for (int start = 0; start < h * w; start += kChunk) {
    const int count = std::min(kChunk, h * w - start);
    pixels.clear();
    for (int i = 0; i < count; ++i)
      pixels.emplace_back((start + i) / w, (start + i) % w);
    RayBatch batch = camera_rays(camera, pixels, t_near, t_far);
    if (kind == FieldKind::kNerf) {
      RenderResult res = render_rays(model.field, batch.rays, code, k, kWhite);
      for (int i = 0; i < count; ++i) {
        for (int ch = 0; ch < 3; ++ch)
          frame.color.data[static_cast<size_t>(start + i) * 3 + ch] =
              res.color[static_cast<int64_t>(i) * 3 + ch];
        frame.depth.data[static_cast<size_t>(start + i)] = res.depth[i];
      }
    } else {
      BatchTrace trace = sphere_trace_batch(model.field, batch.rays);
      std::vector<int> hit_idx;
      for (int i = 0; i < count; ++i)
        if (trace.converged[static_cast<size_t>(i)] != 0) hit_idx.push_back(i);
      Tensor colors;
      if (!hit_idx.empty()) {
        const int mcount = static_cast<int>(hit_idx.size());
        Tensor pos({mcount, 3});
        Tensor dirs({mcount, 3});
        for (int j = 0; j < mcount; ++j) {
          const Ray& ray = batch.rays[static_cast<size_t>(hit_idx[static_cast<size_t>(j)])];
          const Vec3 x = ray.point_at(trace.t[static_cast<size_t>(hit_idx[static_cast<size_t>(j)])]);
          for (int c = 0; c < 3; ++c) {
            pos[static_cast<int64_t>(j) * 3 + c] = x[static_cast<size_t>(c)];
            dirs[static_cast<int64_t>(j) * 3 + c] = ray.dir[static_cast<size_t>(c)];
          }
        }
        Tensor normals = model.field.sdf_gradients(pos);
        for (int j = 0; j < mcount; ++j) {
          double n2 = 0.0;
          for (int c = 0; c < 3; ++c) n2 += normals[static_cast<int64_t>(j) * 3 + c] *
                                            normals[static_cast<int64_t>(j) * 3 + c];
          const double inv = 1.0 / std::max(std::sqrt(n2), 1e-8);
          for (int c = 0; c < 3; ++c) normals[static_cast<int64_t>(j) * 3 + c] *= inv;
        }
        Bindings bind(model.field.params(), /*requires_grad=*/false);
        auto geo = model.field.sdf_eval(bind, ad::constant(pos));
        colors = model.field
                     .sdf_render_head(bind, ad::constant(pos), ad::constant(normals),
                                      ad::constant(dirs), geo.feature, code)
                     .val();
      }
      int next_hit = 0;
      for (int i = 0; i < count; ++i) {
        const bool hit = trace.converged[static_cast<size_t>(i)] != 0;
        for (int ch = 0; ch < 3; ++ch)
          frame.color.data[static_cast<size_t>(start + i) * 3 + ch] =
              hit ? colors[static_cast<int64_t>(next_hit) * 3 + ch]
                  : kBlack[static_cast<size_t>(ch)];
        frame.depth.data[static_cast<size_t>(start + i)] =
            hit ? trace.t[static_cast<size_t>(i)] : t_far;
        if (hit) ++next_hit;
      }
    }
  }
  return frame;
}

std::vector<Frame> render_path(Model& model, const std::vector<Camera>& poses,
                               const StyleCode* code, double t_near, double t_far) {
  std::vector<Frame> frames;
  frames.reserve(poses.size());
  for (const Camera& cam : poses) frames.push_back(render_view(model, cam, code, t_near, t_far));
  return frames;
}

std::vector<Frame> interpolate_styles(Model& model, const Camera& pose, int from, int to,
                                      int steps, double t_near, double t_far) {
  const int n = model.field.config().style_count;
  if (n < 2) throw ArgumentError("style interpolation needs at least two trained styles");
  if (from == to) throw ArgumentError("interpolation endpoints must differ");
  if (from < 0 || from >= n || to < 0 || to >= n)
    throw ArgumentError("style index out of range");
  if (steps < 2) throw ArgumentError("interpolation needs at least two steps");
  std::vector<Frame> frames;
  frames.reserve(static_cast<size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    const double lambda = static_cast<double>(i) / (steps - 1);
    StyleCode code;
    code.weights.assign(static_cast<size_t>(n), 0.0);
    code.weights[static_cast<size_t>(from)] = 1.0 - lambda;
    code.weights[static_cast<size_t>(to)] = lambda;
    frames.push_back(render_view(model, pose, &code, t_near, t_far));
  }
  return frames;
}

double psnr_from_mse(double mse) {
  if (mse <= 0.0) return 99.0;
  return std::min(99.0, -10.0 * std::log10(mse));
}

json Metrics::to_json() const {
  return json{{"psnr", psnr}, {"mse", mse}, {"content", content}, {"style", style}};
}

Metrics evaluate(Model& model, const PosedImageSet& views, const StyleSet* styles,
                 const FeatureExtractor* extractor) {
  Metrics metrics;
  const bool stylized = model.field.phase() == Phase::kStylize;
  const int n_styles = stylized && styles != nullptr ? styles->count() : 0;
  double mse_sum = 0.0;
  int64_t sample_count = 0;
  double content_sum = 0.0, style_sum = 0.0;
  int64_t perceptual_count = 0;

  for (size_t v = 0; v < views.images.size(); ++v) {
    const Camera& cam = views.cameras[v];
    const Image& ref = views.images[v];
    const int renders = std::max(1, n_styles);
    for (int s = 0; s < renders; ++s) {
      std::optional<StyleCode> code;
      if (n_styles > 0) code = styles->styles[static_cast<size_t>(s)].code;
      Frame frame =
          render_view(model, cam, code ? &*code : nullptr, views.t_near, views.t_far);
      for (auto& px : frame.color.data) px = q8(px);  // match the saved frames
      for (int r = 0; r < ref.height; ++r)
        for (int c = 0; c < ref.width; ++c)
          for (int ch = 0; ch < 3; ++ch) {
            const double d = frame.color.at(r, c, ch) - ref.at(r, c, ch);
            mse_sum += d * d;
            ++sample_count;
          }
      if (extractor != nullptr) {
        const Tensor chw = image_to_chw(frame.color);
        content_sum += content_loss(*extractor, chw, image_to_chw(ref), ref.height, ref.width);
        if (n_styles > 0) {
          const auto& style = styles->styles[static_cast<size_t>(s)];
          style_sum += style_loss(*extractor, chw, ref.height, ref.width,
                                  image_to_chw(style.image), styles->resolution,
                                  styles->resolution);
        }
        ++perceptual_count;
      }
    }
  }
  metrics.mse = sample_count > 0 ? mse_sum / static_cast<double>(sample_count) : 0.0;
  metrics.psnr = psnr_from_mse(metrics.mse);
  if (perceptual_count > 0) {
    metrics.content = content_sum / static_cast<double>(perceptual_count);
    metrics.style = style_sum / static_cast<double>(perceptual_count);
  }
  return metrics;
}

}  // namespace ins
