// Copyright Contributors to the INS Project
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: 12 end-to-end criteria over the rendering oracle, the
// gradient checks, the loss identities, and desk-scale training runs on the
// analytic fixtures. Prints one pass/fail line per criterion; exits nonzero
// if any fail. A subset can be selected by passing criterion numbers.

#include <chrono>
#include <cstdarg>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <set>
#include <string>

#include <Eigen/Eigenvalues>

#include "ins/pipelines.h"
#include "support/fd_check.h"
#include "support/fixtures.h"

using namespace ins;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// Fixture configuration (fixed seeds; values recorded from reference runs).

struct SirenFixture {
  int resolution = 64;
  int cim_depth = 5, cim_width = 128;
  int sim_depth = 2, sim_width = 32;
  int am_depth = 2, am_width = 64;
  int64_t fit_steps = 2000;       // criterion 4: <= 2000 steps to 30 dB
  int64_t stylize_steps = 400;    // criterion 5 budget
  int batch = 1024;
  int patch = 32, stride = 2;
  // Criterion-5 fixture weights: the gentlest setting that still clears the
  // 50% style drop on the surrogate backbone (see the reference-run sweep).
  double lambda_recon = 100.0;
  double lambda_content = 100.0;
  double lambda_style = 4.0;
  uint64_t seed = 1234;
} kSiren;

struct NerfFixture {
  int views = 8, resolution = 64;
  int cim_depth = 4, cim_width = 128;
  int sim_depth = 1, sim_width = 16;
  int am_depth = 2, am_width = 64;
  int l_pos = 6, l_dir = 4;
  int64_t pretrain_steps = 5000;  // criterion 6: <= 5k steps to 25 dB
  int rays = 256, samples = 16;
  int64_t stylize_steps = 300;    // ablation budget (criteria 7-9)
  int patch = 8, stride = 4;      // K = 64 rays, s = 4
  uint64_t seed = 77;
} kNerf;

struct SdfFixture {
  int views = 6, resolution = 48;
  int cim_depth = 3, cim_width = 128;
  int sim_depth = 1, sim_width = 16;
  int am_depth = 2, am_width = 64;
  int l_pos = 6, l_dir = 2;
  int feature_width = 32;
  int64_t pretrain_steps = 500;
  int rays = 128;
  uint64_t seed = 55;
} kSdf;

// Recorded margins (reference run values land well inside these).
constexpr double kStyleDropRequired = 0.50;      // criterion 5
constexpr double kContentRatioLimit = 3.0;       // criterion 5
constexpr double kInterpolationJumpFactor = 5.0; // criterion 10

// ---------------------------------------------------------------------------

struct Outcome {
  int id;
  bool pass;
  double seconds;
  std::string detail;
};

std::vector<Outcome> g_outcomes;

template <typename Fn>
void run_criterion(int id, const std::string& name, const std::set<int>& selected, Fn&& fn) {
  if (!selected.empty() && selected.find(id) == selected.end()) return;
  const auto t0 = std::chrono::steady_clock::now();
  Outcome out;
  out.id = id;
  try {
    out.detail = fn();
    out.pass = true;
  } catch (const std::exception& e) {
    out.pass = false;
    out.detail = e.what();
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  g_outcomes.push_back(out);
  std::printf("[%s] criterion %2d: %-34s (%.1f s) %s\n", out.pass ? "PASS" : "FAIL", id,
              name.c_str(), out.seconds, out.detail.c_str());
  std::fflush(stdout);
}

void require(bool cond, const std::string& what) {
  if (!cond) throw std::runtime_error(what);
}

std::string fmt(const char* f, ...) {
  char buf[256];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof(buf), f, ap);
  va_end(ap);
  return buf;
}

FieldConfig siren_field(int styles) {
  FieldConfig f;
  f.kind = FieldKind::kSiren;
  f.style_count = styles;
  f.cim_depth = kSiren.cim_depth;
  f.cim_width = kSiren.cim_width;
  f.sim_depth = kSiren.sim_depth;
  f.sim_width = kSiren.sim_width;
  f.am_depth = kSiren.am_depth;
  f.am_width = kSiren.am_width;
  return f;
}

FieldConfig nerf_field(int styles, bool style_density = true) {
  FieldConfig f;
  f.kind = FieldKind::kNerf;
  f.style_count = styles;
  f.cim_depth = kNerf.cim_depth;
  f.cim_width = kNerf.cim_width;
  f.sim_depth = kNerf.sim_depth;
  f.sim_width = kNerf.sim_width;
  f.am_depth = kNerf.am_depth;
  f.am_width = kNerf.am_width;
  f.l_pos = kNerf.l_pos;
  f.l_dir = kNerf.l_dir;
  f.style_density_enabled = style_density;
  return f;
}

FieldConfig sdf_field(int styles) {
  FieldConfig f;
  f.kind = FieldKind::kSdf;
  f.style_count = styles;
  f.cim_depth = kSdf.cim_depth;
  f.cim_width = kSdf.cim_width;
  f.sim_depth = kSdf.sim_depth;
  f.sim_width = kSdf.sim_width;
  f.am_depth = kSdf.am_depth;
  f.am_width = kSdf.am_width;
  f.l_pos = kSdf.l_pos;
  f.l_dir = kSdf.l_dir;
  f.sdf_feature_width = kSdf.feature_width;
  return f;
}

Tensor rows_to_chw_t(const Tensor& rows) {
  const int n = rows.rows();
  Tensor t({3, n});
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) t[static_cast<int64_t>(c) * n + i] = rows.at(i, c);
  return t;
}

double full_render_style_loss(Model& m, const PosedImageSet& scene, const StyleSet& styles,
                              const FeatureExtractor& ex, int view, int style_index) {
  Frame f = render_view(m, scene.cameras[static_cast<size_t>(view)],
                        &styles.styles[static_cast<size_t>(style_index)].code, scene.t_near,
                        scene.t_far, kNerf.samples);
  return style_loss(ex, image_to_chw(f.color), f.color.height, f.color.width,
                    image_to_chw(styles.styles[static_cast<size_t>(style_index)].image),
                    styles.resolution, styles.resolution);
}

double depth_deviation(Model& m, const PosedImageSet& scene, const std::vector<Frame>& base,
                       const StyleCode* code) {
  double dev = 0.0;
  int64_t count = 0;
  for (size_t v = 0; v < scene.cameras.size(); ++v) {
    Frame f = render_view(m, scene.cameras[v], code, scene.t_near, scene.t_far, kNerf.samples);
    for (size_t i = 0; i < f.depth.data.size(); ++i) {
      dev += std::abs(f.depth.data[i] - base[v].depth.data[i]);
      ++count;
    }
  }
  return dev / static_cast<double>(count);
}

// Shared fixtures built once and reused across criteria.
struct Shared {
  std::optional<Model> siren_fit;          // after criterion 4
  std::optional<PosedImageSet> nerf_scene;
  std::optional<Checkpoint> nerf_pretrained;  // after criterion 6
  std::vector<Frame> pretrained_frames;       // color+depth per view
  std::optional<Model> stylized_gc;           // after criterion 7
} g_shared;

const PosedImageSet& nerf_scene() {
  if (!g_shared.nerf_scene)
    g_shared.nerf_scene = testing::sphere_scene(kNerf.views, kNerf.resolution);
  return *g_shared.nerf_scene;
}

TrainConfig nerf_stylize_cfg(uint64_t seed, double lambda_geometry, int stride) {
  TrainConfig t;
  t.stylize_steps = kNerf.stylize_steps;
  t.samples_per_ray = kNerf.samples;
  t.patch_size = kNerf.patch;
  t.patch_stride = stride;
  t.seed = seed;
  t.weights.recon = 1.0;
  t.weights.geometry = lambda_geometry;
  t.weights.content = 1.0;
  t.weights.style = 1e8;  // schedule defaults of the stylization phase
  return t;
}

// ---------------------------------------------------------------------------
// Criteria

std::string criterion_1() {
  Rng rng(101);
  double worst_color = 0.0, worst_norm = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = 1 + static_cast<int>(rng.uniform_index(16));
    Tensor colors({k, 3});
    Tensor sigma({k});
    Tensor delta({k});
    std::vector<Vec3> cols(static_cast<size_t>(k));
    std::vector<double> sig(static_cast<size_t>(k)), dts(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) {
      for (int c = 0; c < 3; ++c) {
        cols[static_cast<size_t>(i)][static_cast<size_t>(c)] = rng.uniform();
        colors[i * 3 + c] = cols[static_cast<size_t>(i)][static_cast<size_t>(c)];
      }
      sig[static_cast<size_t>(i)] = rng.uniform(0.0, 10.0);
      dts[static_cast<size_t>(i)] = rng.uniform(0.01, 0.5);
      sigma[i] = sig[static_cast<size_t>(i)];
      delta[i] = dts[static_cast<size_t>(i)];
    }
    const Vec3 bg{rng.uniform(), rng.uniform(), rng.uniform()};
    RenderResult res = composite(colors.reshaped({3 * k}), sigma, delta, bg);

    // Independent scalar evaluation of the transmittance sum.
    double accumulated = 0.0;
    Vec3 expect{0, 0, 0};
    double sum_w = 0.0;
    for (int i = 0; i < k; ++i) {
      const double t_i = std::exp(-accumulated);
      const double w = t_i * (1.0 - std::exp(-sig[static_cast<size_t>(i)] * dts[static_cast<size_t>(i)]));
      for (int c = 0; c < 3; ++c)
        expect[static_cast<size_t>(c)] += w * cols[static_cast<size_t>(i)][static_cast<size_t>(c)];
      accumulated += sig[static_cast<size_t>(i)] * dts[static_cast<size_t>(i)];
      sum_w += w;
    }
    const double t_final = std::exp(-accumulated);
    for (int c = 0; c < 3; ++c) expect[static_cast<size_t>(c)] += t_final * bg[static_cast<size_t>(c)];

    for (int c = 0; c < 3; ++c)
      worst_color = std::max(worst_color, std::abs(res.color[c] - expect[static_cast<size_t>(c)]));
    double got_sum = res.transmittance[0];
    for (int i = 0; i < k; ++i) got_sum += res.weights[i];
    worst_norm = std::max(worst_norm, std::abs(got_sum - 1.0));
  }
  require(worst_color < 1e-6, fmt("color mismatch %.3g >= 1e-6", worst_color));
  require(worst_norm < 1e-5, fmt("weight normalization off by %.3g", worst_norm));
  return fmt("max |dC|=%.2g, max |sum w + T - 1|=%.2g", worst_color, worst_norm);
}

std::string criterion_2() {
  Rng rng(202);
  FeatureExtractor ex = FeatureExtractor::surrogate();
  double worst = 0.0;
  auto track = [&](double err, const char* what) {
    worst = std::max(worst, err);
    require(err < 1e-3, fmt("%s gradient rel err %.3g >= 1e-3", what, err));
  };

  // composite wrt densities and colors.
  for (int trial = 0; trial < 20; ++trial) {
    const int k = 2 + static_cast<int>(rng.uniform_index(6));
    Tensor colors({k, 3});
    Tensor sigma({1, k});
    Tensor delta({1, k});
    Tensor depths({1, k});
    double t = 2.0;
    for (int i = 0; i < k; ++i) {
      for (int c = 0; c < 3; ++c) colors[i * 3 + c] = rng.uniform();
      sigma[i] = rng.uniform(0.05, 4.0);
      delta[i] = rng.uniform(0.05, 0.4);
      depths[i] = t + 0.5 * delta[i];
      t += delta[i];
    }
    auto scalar_of = [&](const ad::Value& cv, const ad::Value& sv) {
      CompositeGraph g = composite_graph(cv, sv, delta, depths, {0.9, 0.8, 0.7});
      return ad::add(ad::sum(g.color), ad::sum(g.depth));
    };
    ad::Value vc = ad::leaf(colors);
    ad::Value vs = ad::leaf(sigma);
    ad::backward(scalar_of(vc, vs));
    auto fs = [&](const Tensor& s) { return scalar_of(ad::constant(colors), ad::leaf(s)).val()[0]; };
    auto fc = [&](const Tensor& c) { return scalar_of(ad::leaf(c), ad::constant(sigma)).val()[0]; };
    track(testing::max_grad_rel_err(fs, sigma, vs.grad(), 1e-5), "composite/sigma");
    track(testing::max_grad_rel_err(fc, colors, vc.grad(), 1e-5), "composite/color");
  }

  // content/style losses wrt an 8x8 rendered patch (surrogate backbone).
  {
    Tensor y({3, 64});
    Tensor c({3, 64});
    for (int64_t i = 0; i < 192; ++i) {
      y[i] = rng.uniform(0.05, 0.95);
      c[i] = rng.uniform(0.05, 0.95);
    }
    auto cgraph = [&](const ad::Value& v) {
      return content_loss_graph(ex, v, c, 8, 8, FeatureExtractor::default_content_keys());
    };
    ad::Value vy = ad::leaf(y);
    ad::backward(cgraph(vy));
    auto fcont = [&](const Tensor& t2) { return cgraph(ad::leaf(t2)).val()[0]; };
    track(testing::max_grad_rel_err(fcont, y, vy.grad(), 1e-6, 1e-5), "content_loss");

    Tensor s({3, 16 * 16});
    for (int64_t i = 0; i < s.numel(); ++i) s[i] = rng.uniform();
    auto grams = style_grams(ex, s, 16, 16, FeatureExtractor::default_style_keys());
    auto sgraph = [&](const ad::Value& v) { return style_loss_graph(ex, v, 8, 8, grams); };
    ad::Value vy2 = ad::leaf(y);
    ad::backward(sgraph(vy2));
    auto fsty = [&](const Tensor& t2) { return sgraph(ad::leaf(t2)).val()[0]; };
    track(testing::max_grad_rel_err(fsty, y, vy2.grad(), 1e-6, 1e-5), "style_loss");
  }

  // geometry loss wrt stylized densities (away from ties).
  {
    Tensor a({12});
    Tensor b({12});
    for (int64_t i = 0; i < 12; ++i) {
      a[i] = rng.uniform(0.0, 4.0);
      b[i] = rng.uniform(0.0, 4.0);
    }
    ad::Value va = ad::leaf(a);
    ad::backward(geometry_loss_graph(va, ad::constant(b)));
    auto fgeo = [&](const Tensor& t2) {
      return geometry_loss_graph(ad::leaf(t2), ad::constant(b)).val()[0];
    };
    track(testing::max_grad_rel_err(fgeo, a, va.grad(), 1e-5), "geometry_loss");
  }

  // sdf_normal: exact input gradients vs FD on a learned SDF.
  {
    INSField field(sdf_field(2));
    Rng init(31);
    field.init(init);
    for (int trial = 0; trial < 5; ++trial) {
      const Vec3 x{rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2)};
      Tensor pos({1, 3});
      pos[0] = x[0];
      pos[1] = x[1];
      pos[2] = x[2];
      Tensor grad = field.sdf_gradients(pos);
      for (int c = 0; c < 3; ++c) {
        Vec3 xp = x, xm = x;
        xp[static_cast<size_t>(c)] += 1e-4;
        xm[static_cast<size_t>(c)] -= 1e-4;
        const double fd = (field.sdf_distance(xp) - field.sdf_distance(xm)) / 2e-4;
        track(testing::rel_err(grad[c], fd), "sdf_normal");
      }
    }

    // differentiable_intersection: gradient through f(o + t0 v) wrt a weight.
    Ray ray;
    ray.origin = {0.0, 0.0, -3.0};
    ray.dir = {0.0, 0.0, 1.0};
    ray.t_near = 0.5;
    ray.t_far = 6.0;
    TraceResult hit = sphere_trace([&](const Vec3& p) { return field.sdf_distance(p); }, ray);
    require(hit.converged, "trace on geometric init did not converge");
    Tensor p0({1, 3});
    const Vec3 pv = ray.point_at(hit.t);
    p0[0] = pv[0];
    p0[1] = pv[1];
    p0[2] = pv[2];
    Tensor g0 = field.sdf_gradients(p0);
    const double denom = g0[0] * ray.dir[0] + g0[1] * ray.dir[1] + g0[2] * ray.dir[2];

    auto xhat_sum = [&]() {
      Bindings bind(field.params(), false);
      auto geo = field.sdf_eval(bind, ad::constant(p0));
      ad::Value x_hat = intersection_graph(geo.distance, ray.origin, ray.dir, hit.t, denom);
      return ad::sum(x_hat).val()[0];
    };
    Bindings bind(field.params());
    auto geo = field.sdf_eval(bind, ad::constant(p0));
    ad::Value x_hat = intersection_graph(geo.distance, ray.origin, ray.dir, hit.t, denom);
    ad::backward(ad::sum(x_hat));
    Param& w = field.params().get("cim.l1.weight");
    ad::Value leafv = bind["cim.l1.weight"];
    for (int64_t i = 0; i < 4; ++i) {
      const int64_t idx = (i * 53) % w.numel();
      const float orig = w.data[static_cast<size_t>(idx)];
      w.data[static_cast<size_t>(idx)] = static_cast<float>(orig + 1e-4);
      const double fp = xhat_sum();
      const double wp = static_cast<double>(w.data[static_cast<size_t>(idx)]);
      w.data[static_cast<size_t>(idx)] = static_cast<float>(orig - 1e-4);
      const double fm = xhat_sum();
      const double wm = static_cast<double>(w.data[static_cast<size_t>(idx)]);
      w.data[static_cast<size_t>(idx)] = orig;
      track(testing::rel_err(leafv.grad()[idx], (fp - fm) / (wp - wm), 1e-7),
            "differentiable_intersection");
    }
  }
  return fmt("worst rel err %.3g", worst);
}

std::string criterion_3() {
  FeatureExtractor ex = FeatureExtractor::surrogate();
  Rng rng(303);
  Tensor img({3, 16 * 16});
  for (int64_t i = 0; i < img.numel(); ++i) img[i] = rng.uniform();
  require(style_loss(ex, img, 16, 16, img, 16, 16) == 0.0, "style_loss(S,S) != 0");
  require(content_loss(ex, img, img, 16, 16) == 0.0, "content_loss(C,C) != 0");
  Tensor sig({32});
  for (int64_t i = 0; i < 32; ++i) sig[i] = rng.uniform(0.0, 8.0);
  require(geometry_loss(sig, sig) == 0.0, "geometry_loss(s,s) != 0");

  double worst_asym = 0.0, worst_eig = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int c = 2 + static_cast<int>(rng.uniform_index(8));
    const int hw = 1 + static_cast<int>(rng.uniform_index(30));
    Tensor f({c, hw});
    for (int64_t i = 0; i < f.numel(); ++i) f[i] = rng.uniform(-2.0, 2.0);
    Tensor g = gram(f);
    Eigen::MatrixXd m(c, c);
    for (int i = 0; i < c; ++i)
      for (int j = 0; j < c; ++j) {
        m(i, j) = g.at(i, j);
        worst_asym = std::max(worst_asym, std::abs(g.at(i, j) - g.at(j, i)));
      }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
    worst_eig = std::min(worst_eig, eig.eigenvalues().minCoeff());
  }
  require(worst_asym < 1e-7, "gram asymmetry");
  require(worst_eig >= -1e-7, "gram not PSD");
  return fmt("identities exact; asym %.2g, min eig %.2g", worst_asym, worst_eig);
}

std::string criterion_4() {
  Image image = testing::fixture_image(kSiren.resolution, kSiren.resolution);
  StyleSet styles = testing::make_style_set(1, kSiren.resolution);
  FeatureExtractor ex = FeatureExtractor::surrogate();
  TrainConfig t;
  t.pretrain_steps = kSiren.fit_steps;
  t.stylize_steps = 0;
  t.rays_per_batch = kSiren.batch;
  t.seed = kSiren.seed;
  Model m = fit_siren(image, styles, siren_field(1), t, ex);

  Tensor grid = pixel_grid(kSiren.resolution, kSiren.resolution);
  Tensor colors = m.field.eval_colors(grid, nullptr);
  Tensor target = image_to_rows(image);
  double mse = 0.0;
  for (int64_t i = 0; i < colors.numel(); ++i) {
    const double d = colors[i] - target[i];
    mse += d * d;
  }
  mse /= static_cast<double>(colors.numel());
  const double psnr = psnr_from_mse(mse);
  g_shared.siren_fit = std::move(m);
  require(psnr >= 30.0, fmt("PSNR %.2f dB < 30 dB", psnr));
  return fmt("PSNR %.2f dB after %lld steps", psnr, static_cast<long long>(kSiren.fit_steps));
}

std::string criterion_5() {
  Image image = testing::fixture_image(kSiren.resolution, kSiren.resolution);
  StyleSet styles = testing::make_style_set(1, kSiren.resolution);

  // The pretrained backbone when the exported weights exist, otherwise the
  // deterministic surrogate (environment without ImageNet weights).
  std::optional<FeatureExtractor> ex;
  std::string backbone = "vgg16";
  const char* dir = std::getenv("INS_WEIGHTS_DIR");
  if (dir != nullptr && fs::exists(fs::path(dir) / "vgg16.npz")) {
    ex = FeatureExtractor::vgg16((fs::path(dir) / "vgg16.npz").string());
  } else {
    std::printf("        (pretrained backbone unavailable; running the surrogate)\n");
    ex = FeatureExtractor::surrogate();
    backbone = "surrogate";
  }

  TrainConfig t;
  t.pretrain_steps = kSiren.fit_steps;
  t.stylize_steps = kSiren.stylize_steps;
  t.rays_per_batch = kSiren.batch;
  t.patch_size = kSiren.patch;
  t.patch_stride = kSiren.stride;
  t.seed = kSiren.seed;
  t.weights.recon = kSiren.lambda_recon;
  t.weights.content = kSiren.lambda_content;
  t.weights.style = kSiren.lambda_style;

  // Phase-1 reference: rerun the fit deterministically and measure.
  TrainConfig t1 = t;
  t1.stylize_steps = 0;
  Model phase1 = fit_siren(image, styles, siren_field(1), t1, *ex);
  Tensor grid = pixel_grid(kSiren.resolution, kSiren.resolution);
  const int hw = kSiren.resolution * kSiren.resolution;
  auto render_chw = [&](Model& m, const StyleCode* code) {
    Tensor rows = m.field.eval_colors(grid, code);
    return rows_to_chw_t(rows);
  };
  Tensor ref_chw = image_to_chw(image);
  Tensor sty_chw = image_to_chw(styles.styles[0].image);
  Tensor r1 = render_chw(phase1, nullptr);
  const double content1 = content_loss(*ex, r1, ref_chw, kSiren.resolution, kSiren.resolution);
  const double style1 = style_loss(*ex, r1, kSiren.resolution, kSiren.resolution, sty_chw,
                                   styles.resolution, styles.resolution);

  Model stylized = fit_siren(image, styles, siren_field(1), t, *ex);
  Tensor r2 = render_chw(stylized, &styles.styles[0].code);
  const double content2 = content_loss(*ex, r2, ref_chw, kSiren.resolution, kSiren.resolution);
  const double style2 = style_loss(*ex, r2, kSiren.resolution, kSiren.resolution, sty_chw,
                                   styles.resolution, styles.resolution);
  (void)hw;

  const double drop = 1.0 - style2 / style1;
  const double ratio = content2 / content1;
  require(drop >= kStyleDropRequired,
          fmt("style drop %.1f%% < %.0f%%", 100 * drop, 100 * kStyleDropRequired));
  require(ratio <= kContentRatioLimit,
          fmt("content ratio %.2fx > %.1fx", ratio, kContentRatioLimit));
  return fmt("[%s] style -%.1f%%, content %.2fx", backbone.c_str(), 100 * drop, ratio);
}

std::string criterion_6() {
  const PosedImageSet& scene = nerf_scene();
  TrainConfig t;
  t.pretrain_steps = kNerf.pretrain_steps;
  t.rays_per_batch = kNerf.rays;
  t.samples_per_ray = kNerf.samples;
  t.seed = kNerf.seed;
  Model m = pretrain_nerf(scene, nerf_field(2), t);

  double mse = 0.0;
  int64_t count = 0;
  g_shared.pretrained_frames.clear();
  for (size_t v = 0; v < scene.cameras.size(); ++v) {
    Frame f = render_view(m, scene.cameras[v], nullptr, scene.t_near, scene.t_far, kNerf.samples);
    for (size_t i = 0; i < f.color.data.size(); ++i) {
      const double d = f.color.data[i] - scene.images[v].data[i];
      mse += d * d;
      ++count;
    }
    g_shared.pretrained_frames.push_back(std::move(f));
  }
  mse /= static_cast<double>(count);
  const double psnr = psnr_from_mse(mse);
  g_shared.nerf_pretrained = make_checkpoint(m);
  require(psnr >= 25.0, fmt("training-view PSNR %.2f dB < 25 dB", psnr));
  return fmt("PSNR %.2f dB after %lld steps", psnr, static_cast<long long>(kNerf.pretrain_steps));
}

std::string criterion_7() {
  require(g_shared.nerf_pretrained.has_value(), "criterion 6 must run first");
  const PosedImageSet& scene = nerf_scene();
  StyleSet styles = testing::make_style_set(2, 64);
  FeatureExtractor ex = FeatureExtractor::surrogate();

  Model with_gc = stylize_nerf(*g_shared.nerf_pretrained, scene, styles,
                               nerf_stylize_cfg(kNerf.seed + 1, 1e6, kNerf.stride), ex);
  Model without_gc = stylize_nerf(*g_shared.nerf_pretrained, scene, styles,
                                  nerf_stylize_cfg(kNerf.seed + 1, 0.0, kNerf.stride), ex);

  const StyleCode code = StyleCode::one_hot(2, 0);
  const double dev_gc = depth_deviation(with_gc, scene, g_shared.pretrained_frames, &code);
  const double dev_free = depth_deviation(without_gc, scene, g_shared.pretrained_frames, &code);
  g_shared.stylized_gc = std::move(with_gc);
  require(dev_gc < dev_free,
          fmt("|ddepth| with GC %.4f !< without %.4f", dev_gc, dev_free));
  return fmt("|ddepth| %.4f (GC) vs %.4f (no GC)", dev_gc, dev_free);
}

std::string criterion_8() {
  require(g_shared.nerf_pretrained.has_value(), "criterion 6 must run first");
  const PosedImageSet& scene = nerf_scene();
  StyleSet styles = testing::make_style_set(2, 64);
  FeatureExtractor ex = FeatureExtractor::surrogate();

  // Rebuild the pretrained model with the color-branch-only flag; parameters
  // load from the same checkpoint so pretrained depth is unchanged.
  Model pre = model_from_checkpoint(*g_shared.nerf_pretrained);
  pre.field.config().style_density_enabled = false;
  Checkpoint flagged = make_checkpoint(pre);

  TrainConfig t = nerf_stylize_cfg(kNerf.seed + 2, 0.0, kNerf.stride);
  Model stylized = stylize_nerf(flagged, scene, styles, t, ex);

  const StyleCode code = StyleCode::one_hot(2, 1);
  for (size_t v = 0; v < scene.cameras.size(); ++v) {
    Frame f = render_view(stylized, scene.cameras[v], &code, scene.t_near, scene.t_far,
                          kNerf.samples);
    require(f.depth.data == g_shared.pretrained_frames[v].depth.data,
            fmt("depth map of view %zu differs from pretrained", v));
  }
  return "all per-view depth maps bit-identical to pretrained";
}

std::string criterion_9() {
  require(g_shared.nerf_pretrained.has_value(), "criterion 6 must run first");
  const PosedImageSet& scene = nerf_scene();
  StyleSet styles = testing::make_style_set(2, 64);
  FeatureExtractor ex = FeatureExtractor::surrogate();

  Model strided = stylize_nerf(*g_shared.nerf_pretrained, scene, styles,
                               nerf_stylize_cfg(kNerf.seed + 3, 1e6, 4), ex);
  Model contiguous = stylize_nerf(*g_shared.nerf_pretrained, scene, styles,
                                  nerf_stylize_cfg(kNerf.seed + 3, 1e6, 1), ex);

  double loss_s4 = 0.0, loss_s1 = 0.0;
  for (int v = 0; v < 2; ++v)
    for (int s = 0; s < 2; ++s) {
      loss_s4 += full_render_style_loss(strided, scene, styles, ex, v, s);
      loss_s1 += full_render_style_loss(contiguous, scene, styles, ex, v, s);
    }
  require(loss_s4 < loss_s1, fmt("style loss s=4 %.4g !< s=1 %.4g", loss_s4, loss_s1));
  return fmt("style loss %.4g (s=4) < %.4g (s=1) at equal steps", loss_s4, loss_s1);
}

std::string criterion_10() {
  require(g_shared.stylized_gc.has_value(), "criterion 7 must run first");
  Model& m = *g_shared.stylized_gc;
  const PosedImageSet& scene = nerf_scene();

  auto sweep = interpolate_styles(m, scene.cameras[0], 0, 1, 11, scene.t_near, scene.t_far);
  require(sweep.size() == 11, "expected 11 frames");
  StyleSet styles = testing::make_style_set(2, 64);
  Frame end0 = render_view(m, scene.cameras[0], &styles.styles[0].code, scene.t_near, scene.t_far);
  Frame end1 = render_view(m, scene.cameras[0], &styles.styles[1].code, scene.t_near, scene.t_far);
  require(sweep.front().color.data == end0.color.data, "first frame != one-hot render");
  require(sweep.back().color.data == end1.color.data, "last frame != one-hot render");

  std::vector<double> jumps;
  for (size_t i = 0; i + 1 < sweep.size(); ++i) {
    double diff = 0.0;
    for (size_t p = 0; p < sweep[i].color.data.size(); ++p)
      diff += std::abs(sweep[i + 1].color.data[p] - sweep[i].color.data[p]);
    jumps.push_back(diff / static_cast<double>(sweep[i].color.data.size()));
  }
  std::vector<double> sorted = jumps;
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted[sorted.size() / 2];
  double worst = 0.0;
  for (double j : jumps) worst = std::max(worst, j);
  require(median == 0.0 ? worst == 0.0 : worst <= kInterpolationJumpFactor * median,
          fmt("max transition %.4g > %.0fx median %.4g", worst, kInterpolationJumpFactor, median));
  return fmt("endpoints bit-match; max/median transition %.2f", median > 0 ? worst / median : 0.0);
}

std::string criterion_11() {
  // Analytic tracer cases.
  const SdfFn sphere = [](const Vec3& x) {
    return std::hypot(x[0], std::hypot(x[1], x[2])) - 1.0;
  };
  Ray ray;
  ray.origin = {0.0, 0.0, -3.0};
  ray.dir = {0.0, 0.0, 1.0};
  ray.t_near = 0.1;
  ray.t_far = 8.0;
  TraceResult hit = sphere_trace(sphere, ray);
  require(hit.converged && std::abs(hit.t - 2.0) < 1e-3, "analytic sphere trace");
  Ray miss = ray;
  miss.dir = {0.0, 1.0, 0.0};
  require(!sphere_trace(sphere, miss).converged, "miss case converged");
  const Vec3 x_hat = differentiable_intersection(sphere, ray, 1.9, {0.0, 0.0, -1.0}, ray.dir);
  require(std::abs(x_hat[2] + 1.0) < 1e-9, "Eq.-3 analytic correction");

  // Pretrain the toy SDF from masked views.
  PosedImageSet scene = testing::sphere_scene(kSdf.views, kSdf.resolution, /*with_masks=*/true);
  TrainConfig t;
  t.pretrain_steps = kSdf.pretrain_steps;
  t.rays_per_batch = kSdf.rays;
  t.seed = kSdf.seed;
  Model m = pretrain_sdf(scene, sdf_field(2), t);

  // Mean |f| on traced surface points across views.
  double mean_f = 0.0;
  int64_t hits = 0;
  for (size_t v = 0; v < scene.cameras.size(); ++v) {
    std::vector<std::pair<int, int>> pixels;
    for (int r = 0; r < kSdf.resolution; r += 4)
      for (int c = 0; c < kSdf.resolution; c += 4) pixels.emplace_back(r, c);
    RayBatch rays = camera_rays(scene.cameras[v], pixels, scene.t_near, scene.t_far);
    BatchTrace trace = sphere_trace_batch(m.field, rays.rays);
    for (size_t i = 0; i < rays.rays.size(); ++i) {
      if (trace.converged[i] == 0) continue;
      mean_f += std::abs(m.field.sdf_distance(rays.rays[i].point_at(trace.t[i])));
      ++hits;
    }
  }
  require(hits > 100, fmt("only %lld traced surface points", static_cast<long long>(hits)));
  mean_f /= static_cast<double>(hits);
  require(mean_f < 1e-3, fmt("mean |f| on surface %.2g >= 1e-3", mean_f));

  // Geometry multiplier 0 freezes the SDF weights bit-exactly.
  StyleSet styles = testing::make_style_set(2, 48);
  FeatureExtractor ex = FeatureExtractor::surrogate();
  std::vector<float> before;
  for (const Param& p : m.field.params().params())
    if (p.name.rfind("cim.", 0) == 0) before.insert(before.end(), p.data.begin(), p.data.end());
  TrainConfig st;
  st.stylize_steps = 40;
  st.patch_size = 8;
  st.patch_stride = 4;
  st.seed = kSdf.seed + 1;
  st.sdf_geometry_lr_multiplier = 0.0;
  Model stylized = stylize_sdf(make_checkpoint(m), scene, styles, st, ex);
  std::vector<float> after;
  for (const Param& p : stylized.field.params().params())
    if (p.name.rfind("cim.", 0) == 0) after.insert(after.end(), p.data.begin(), p.data.end());
  require(before == after, "SDF weights moved under zero multiplier");
  return fmt("trace exact, mean |f|=%.2g over %lld hits, zero-rate freeze bit-exact", mean_f,
             static_cast<long long>(hits));
}

std::string criterion_12() {
  // Bit-identical rerun of a full pipeline under the same config/seed, plus a
  // byte-stable save/load round trip.
  Image image = testing::fixture_image(32, 32);
  StyleSet styles = testing::make_style_set(2, 32);
  FeatureExtractor ex = FeatureExtractor::surrogate();
  FieldConfig f = siren_field(2);
  f.cim_width = 48;
  TrainConfig t;
  t.pretrain_steps = 120;
  t.stylize_steps = 30;
  t.rays_per_batch = 256;
  t.patch_size = 8;
  t.patch_stride = 2;
  t.seed = 4242;

  const fs::path dir = fs::temp_directory_path() / "ins_acceptance_repro";
  fs::remove_all(dir);
  Model a = fit_siren(image, styles, f, t, ex, (dir / "a").string());
  Model b = fit_siren(image, styles, f, t, ex, (dir / "b").string());
  auto read_bytes = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  const std::string bytes_a = read_bytes(dir / "a" / "checkpoint_final.ins");
  const std::string bytes_b = read_bytes(dir / "b" / "checkpoint_final.ins");
  require(!bytes_a.empty() && bytes_a == bytes_b, "rerun checkpoints differ");

  // save -> load -> save byte stability and bit-identical forward.
  Model reloaded = model_from_checkpoint(Checkpoint::load((dir / "a" / "checkpoint_final.ins").string()));
  make_checkpoint(reloaded).save((dir / "a" / "resaved.ins").string());
  require(read_bytes(dir / "a" / "resaved.ins") == bytes_a, "save/load round trip not byte-stable");
  Tensor grid = pixel_grid(32, 32);
  StyleCode code = StyleCode::one_hot(2, 0);
  Tensor ra = a.field.eval_colors(grid, &code);
  Tensor rb = reloaded.field.eval_colors(grid, &code);
  for (int64_t i = 0; i < ra.numel(); ++i)
    require(ra[i] == rb[i], "forward after reload differs");
  fs::remove_all(dir);
  return "rerun + round trip bit-exact";
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  run_criterion(1, "rendering oracle", selected, criterion_1);
  run_criterion(2, "gradient suite", selected, criterion_2);
  run_criterion(3, "loss identities", selected, criterion_3);
  run_criterion(4, "siren fitting", selected, criterion_4);
  run_criterion(5, "siren stylization", selected, criterion_5);
  run_criterion(6, "toy radiance-field pretrain", selected, criterion_6);
  run_criterion(7, "geometry-consistency ablation", selected, criterion_7);
  run_criterion(8, "density-branch ablation", selected, criterion_8);
  run_criterion(9, "sampling-stride ablation", selected, criterion_9);
  run_criterion(10, "style interpolation", selected, criterion_10);
  run_criterion(11, "sdf suite", selected, criterion_11);
  run_criterion(12, "reproducibility", selected, criterion_12);

  int failed = 0;
  for (const Outcome& o : g_outcomes)
    if (!o.pass) ++failed;
  std::printf("%d/%zu criteria passed\n", static_cast<int>(g_outcomes.size()) - failed,
              g_outcomes.size());
  return failed == 0 ? 0 : 1;
}
