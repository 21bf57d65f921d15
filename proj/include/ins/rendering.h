// Copyright Contributors to the INS Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <vector>

#include "ins/fields.h"
#include "ins/rng.h"

namespace ins {

struct Ray {
  Vec3 origin{0.0, 0.0, 0.0};
  Vec3 dir{0.0, 0.0, -1.0};  // unit norm within 1e-6
  double t_near = 2.0;
  double t_far = 6.0;

  void validate() const;
  Vec3 point_at(double t) const;
};

// Rays for a patch of pixels plus the pixel lattice they came from.
struct RayBatch {
  std::vector<Ray> rays;
  std::vector<std::pair<int, int>> pixels;  // (row, col) per ray
};

struct SampleSet {
  std::vector<double> depths;  // strictly increasing in [t_near, t_far]
  std::vector<double> deltas;  // positive; last one capped at the bin width
};

// Stratified depths: bin k spans [t_n+(k-1)h, t_n+kh]; midpoints without
// jitter, uniform-in-bin with it.
SampleSet stratified_samples(const Ray& ray, int count, bool jitter, Rng& rng);

struct RenderResult {
  Tensor color;          // [R,3]
  Tensor depth;          // [R]
  Tensor weights;        // [R,K]
  Tensor transmittance;  // [R] final transmittance T_{K+1}
};

// Autodiff form of Eq.-1-style compositing with a background term:
//   C = sum_k T_k (1 - exp(-sigma_k dt_k)) c_k + T_{K+1} * bg
//   T_k = exp(-sum_{l<k} sigma_l dt_l)
// colors: [R*K,3], sigmas: [R,K]; deltas/depths are constants of the graph.
struct CompositeGraph {
  ad::Value color;    // [R,3]
  ad::Value depth;    // [R,1]
  ad::Value weights;  // [R,K]
  ad::Value t_final;  // [R,1]
};
CompositeGraph composite_graph(const ad::Value& colors, const ad::Value& sigmas,
                               const Tensor& deltas, const Tensor& depths, const Vec3& background);

// Single-ray spec surface over the same graph code.
RenderResult composite(const Tensor& colors, const Tensor& densities, const Tensor& deltas,
                       const Vec3& background);

// Full differentiable render of a ray batch through an INS field.
struct RenderGraph {
  CompositeGraph comp;
  ad::Value sample_density;  // [R,K] the density that was composited (sigma_2 when stylizing)
  Tensor sample_positions;   // [R*K,3]
  Tensor sample_deltas;      // [R,K]
  Tensor sample_depths;      // [R,K]
};
RenderGraph render_rays_graph(const INSField& field, Bindings& live, Bindings* frozen,
                              const std::vector<Ray>& rays, const StyleCode* code,
                              int samples_per_ray, bool jitter, Rng& rng,
                              const Vec3& background);

// No-grad convenience wrapper (deterministic midpoint samples).
RenderResult render_rays(const INSField& field, const std::vector<Ray>& rays,
                         const StyleCode* code, int samples_per_ray, const Vec3& background);

// Sphere tracing with damped steps; non-convergence is a normal miss.
struct TraceResult {
  double t = 0.0;
  bool converged = false;
};
using SdfFn = std::function<double(const Vec3&)>;
TraceResult sphere_trace(const SdfFn& sdf, const Ray& ray, int max_steps = 64, double eps = 1e-4,
                         double damping = 0.9);

// First-order differentiable surface point:
//   x_hat = o + t0 v - (v / (grad_f0 . v0)) f(o + t0 v)
// grad_f0, v0, f0 are frozen constants of the linearization.
Vec3 differentiable_intersection(const SdfFn& sdf, const Ray& ray, double t0,
                                 const Vec3& grad_f0, const Vec3& v0);

// Graph form used in training: f_at_hit is the autodiff SDF value at the
// frozen hit point; gradients flow only through it.
ad::Value intersection_graph(const ad::Value& f_at_hit, const Vec3& origin, const Vec3& dir,
                             double t0, double grad_dot_v);

}  // namespace ins
