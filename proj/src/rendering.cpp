// Copyright Contributors to the INS Project
// SPDX-License-Identifier: Apache-2.0

#include "ins/rendering.h"

#include <cmath>

namespace ins {

namespace {
constexpr double kDepthDenomFloor = 1e-10;
}

void Ray::validate() const {
  const double n2 = dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2];
  if (std::abs(std::sqrt(n2) - 1.0) > 1e-6) throw ArgumentError("ray direction is not unit norm");
  if (!(t_near > 0.0) || !(t_far > t_near)) throw ArgumentError("ray bounds require 0 < near < far");
}

Vec3 Ray::point_at(double t) const {
  return {origin[0] + t * dir[0], origin[1] + t * dir[1], origin[2] + t * dir[2]};
}

SampleSet stratified_samples(const Ray& ray, int count, bool jitter, Rng& rng) {
  if (count < 1) throw ArgumentError("stratified_samples: count must be >= 1");
  ray.validate();
  const double h = (ray.t_far - ray.t_near) / static_cast<double>(count);
  SampleSet s;
  s.depths.resize(static_cast<size_t>(count));
  s.deltas.resize(static_cast<size_t>(count));
  for (int k = 0; k < count; ++k) {
    const double lo = ray.t_near + h * static_cast<double>(k);
    s.depths[static_cast<size_t>(k)] = jitter ? lo + h * rng.uniform() : lo + 0.5 * h;
  }
  for (int k = 0; k + 1 < count; ++k)
    s.deltas[static_cast<size_t>(k)] = s.depths[static_cast<size_t>(k + 1)] - s.depths[static_cast<size_t>(k)];
  s.deltas[static_cast<size_t>(count - 1)] = h;  // capped, keeps gradients bounded
  return s;
}

CompositeGraph composite_graph(const ad::Value& colors, const ad::Value& sigmas,
                               const Tensor& deltas, const Tensor& depths,
                               const Vec3& background) {
  const int rays = sigmas.val().rows();
  const int k = sigmas.val().cols();
  if (!deltas.defined() || deltas.shape() != sigmas.val().shape())
    throw ArgumentError("composite: deltas shape must match densities");
  if (depths.shape() != sigmas.val().shape())
    throw ArgumentError("composite: depths shape must match densities");
  if (colors.val().rank() != 2 || colors.val().rows() != rays * k || colors.val().cols() != 3)
    throw ArgumentError("composite: colors must be [R*K,3]");
  for (int64_t i = 0; i < sigmas.val().numel(); ++i) {
    if (sigmas.val()[i] < 0.0) throw ArgumentError("composite: negative density");
    if (!(deltas[i] > 0.0)) throw ArgumentError("composite: non-positive delta");
  }

  ad::Value tau = ad::mul_const(sigmas, deltas);               // sigma_k dt_k
  ad::Value alpha = ad::rsub_scalar(1.0, ad::exp_op(ad::scale(tau, -1.0)));
  ad::Value trans = ad::exp_op(ad::scale(ad::cumsum_exclusive_rows(tau), -1.0));  // T_k
  ad::Value weights = ad::mul(trans, alpha);                   // w_k = T_k (1 - e^{-tau_k})
  ad::Value t_final = ad::exp_op(ad::scale(ad::sum_rows(tau), -1.0));             // T_{K+1}

  Tensor bg({1, 3});
  bg[0] = background[0];
  bg[1] = background[1];
  bg[2] = background[2];
  CompositeGraph g;
  g.weights = weights;
  g.t_final = t_final;
  g.color = ad::add(ad::row_weighted_sum(weights, colors), ad::matmul(t_final, ad::constant(bg)));

  // Expected depth, denominator floored to stay defined on empty rays.
  ad::Value depth_num = ad::row_weighted_sum(weights, ad::constant(depths.reshaped({rays * k, 1})));
  ad::Value depth_den = ad::clamp_min(ad::sum_rows(weights), kDepthDenomFloor);
  g.depth = ad::div(depth_num, depth_den);
  return g;
}

RenderResult composite(const Tensor& colors, const Tensor& densities, const Tensor& deltas,
                       const Vec3& background) {
  const int k = static_cast<int>(densities.numel());
  if (colors.numel() != 3 * k) throw ArgumentError("composite: lengths disagree");
  if (deltas.numel() != k) throw ArgumentError("composite: lengths disagree");
  Tensor depth_grid({1, k});  // depths only shape the expected-depth readout
  double t = 0.0;
  for (int i = 0; i < k; ++i) {
    depth_grid[i] = t + 0.5 * deltas[i];
    t += deltas[i];
  }
  CompositeGraph g = composite_graph(ad::constant(colors.reshaped({k, 3})),
                                     ad::constant(densities.reshaped({1, k})),
                                     deltas.reshaped({1, k}), depth_grid, background);
  RenderResult r;
  r.color = g.color.val().reshaped({3});
  r.depth = g.depth.val().reshaped({1});
  r.weights = g.weights.val().reshaped({k});
  r.transmittance = g.t_final.val().reshaped({1});
  return r;
}

RenderGraph render_rays_graph(const INSField& field, Bindings& live, Bindings* frozen,
                              const std::vector<Ray>& rays, const StyleCode* code,
                              int samples_per_ray, bool jitter, Rng& rng,
                              const Vec3& background) {
  if (field.config().kind != FieldKind::kNerf)
    throw ArgumentError("render_rays requires a radiance field");
  const int r = static_cast<int>(rays.size());
  const int k = samples_per_ray;
  Tensor positions({r * k, 3});
  Tensor dirs({r * k, 3});
  Tensor deltas({r, k});
  Tensor depths({r, k});
  for (int i = 0; i < r; ++i) {
    SampleSet s = stratified_samples(rays[static_cast<size_t>(i)], k, jitter, rng);
    for (int j = 0; j < k; ++j) {
      const Vec3 p = rays[static_cast<size_t>(i)].point_at(s.depths[static_cast<size_t>(j)]);
      const int64_t row = static_cast<int64_t>(i) * k + j;
      for (int c = 0; c < 3; ++c) {
        positions[row * 3 + c] = p[static_cast<size_t>(c)];
        dirs[row * 3 + c] = rays[static_cast<size_t>(i)].dir[static_cast<size_t>(c)];
      }
      deltas.at(i, j) = s.deltas[static_cast<size_t>(j)];
      depths.at(i, j) = s.depths[static_cast<size_t>(j)];
    }
  }
  auto out = field.forward(live, frozen, ad::constant(positions), ad::constant(dirs), code);
  RenderGraph g;
  g.sample_density = ad::reshape(out.density, {r, k});
  g.sample_positions = positions;
  g.sample_deltas = deltas;
  g.sample_depths = depths;
  g.comp = composite_graph(out.color, g.sample_density, deltas, depths, background);
  return g;
}

RenderResult render_rays(const INSField& field, const std::vector<Ray>& rays,
                         const StyleCode* code, int samples_per_ray, const Vec3& background) {
  Bindings live(field.params(), /*requires_grad=*/false);
  std::optional<Bindings> frozen;
  if (field.frozen_cim() != nullptr) frozen.emplace(*field.frozen_cim(), /*requires_grad=*/false);
  Rng rng(0);  // unused: midpoint samples
  RenderGraph g = render_rays_graph(field, live, frozen ? &*frozen : nullptr, rays, code,
                                    samples_per_ray, /*jitter=*/false, rng, background);
  const int r = static_cast<int>(rays.size());
  RenderResult res;
  res.color = g.comp.color.val();
  res.depth = g.comp.depth.val().reshaped({r});
  res.weights = g.comp.weights.val();
  res.transmittance = g.comp.t_final.val().reshaped({r});
  return res;
}

TraceResult sphere_trace(const SdfFn& sdf, const Ray& ray, int max_steps, double eps,
                         double damping) {
  if (!(eps > 0.0)) throw ArgumentError("sphere_trace: eps must be positive");
  ray.validate();
  TraceResult res;
  double t = ray.t_near;
  for (int step = 0; step < max_steps && t <= ray.t_far; ++step) {
    const double f = sdf(ray.point_at(t));
    if (std::abs(f) < eps) {
      res.t = t;
      res.converged = true;
      return res;
    }
    t += damping * f;
  }
  res.t = t;
  return res;
}

Vec3 differentiable_intersection(const SdfFn& sdf, const Ray& ray, double t0,
                                 const Vec3& grad_f0, const Vec3& v0) {
  const double denom =
      grad_f0[0] * v0[0] + grad_f0[1] * v0[1] + grad_f0[2] * v0[2];
  if (std::abs(denom) < 1e-6) throw ArgumentError("grazing ray: |grad_f0 . v0| < 1e-6");
  const double f = sdf(ray.point_at(t0));
  Vec3 x = ray.point_at(t0);
  for (int c = 0; c < 3; ++c) x[static_cast<size_t>(c)] -= ray.dir[static_cast<size_t>(c)] / denom * f;
  return x;
}

ad::Value intersection_graph(const ad::Value& f_at_hit, const Vec3& origin, const Vec3& dir,
                             double t0, double grad_dot_v) {
  if (std::abs(grad_dot_v) < 1e-6) throw ArgumentError("grazing ray: |grad_f0 . v0| < 1e-6");
  Tensor base({1, 3});
  Tensor vscale({1, 3});
  for (int c = 0; c < 3; ++c) {
    base[c] = origin[static_cast<size_t>(c)] + t0 * dir[static_cast<size_t>(c)];
    vscale[c] = dir[static_cast<size_t>(c)] / grad_dot_v;
  }
  // x_hat = (o + t0 v) - f * v/(grad.v); only f carries gradient.
  return ad::sub(ad::constant(base), ad::matmul(f_at_hit, ad::constant(vscale)));
}

}  // namespace ins
