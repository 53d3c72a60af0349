// Copyright Contributors to the sgrf Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "sgrf/errors.hpp"
#include "sgrf/field_models.hpp"
#include "sgrf/image.hpp"
#include "sgrf/parallel.hpp"
#include "sgrf/sampling.hpp"
#include "sgrf/scene_graph.hpp"

namespace sgrf {

/// One shaded quadrature point ready for compositing.
struct ShadedSample {
  double t = 0;
  double sigma = 0;
  Vec3 color;
};

/// Per-sample compositing record for the backward pass.
struct CompositeTrace {
  std::vector<double> delta;   // interval to the next sample (last: t_far - t_N)
  std::vector<double> weight;  // T_i * alpha_i
  double residual = 1.0;       // T_{N+1}
};

/// Front-to-back alpha compositing of ordered samples:
///   C = sum_i T_i * alpha_i * c_i + T_{N+1} * bg,
///   T_i = exp(-sum_{k<i} sigma_k delta_k), alpha_i = 1 - exp(-sigma_i delta_i),
/// with delta_i = t_{i+1} - t_i and delta_N = t_far - t_N. The residual
/// transmittance carries an explicit background color so fully transparent
/// rays stay well-defined. Samples must be sorted ascending in t.
inline Vec3 composite(std::span<const ShadedSample> samples, double t_far, const Vec3& bg_color,
                      CompositeTrace* trace = nullptr) {
  const std::size_t n = samples.size();
  for (std::size_t i = 1; i < n; ++i)
    if (samples[i].t < samples[i - 1].t)
      throw ValidationError("composite: samples not sorted ascending in t");
  if (trace) {
    trace->delta.resize(n);
    trace->weight.resize(n);
  }
  Vec3 c{0, 0, 0};
  double accum = 0.0;  // sum of sigma_k * delta_k so far
  for (std::size_t i = 0; i < n; ++i) {
    const double next_t = i + 1 < n ? samples[i + 1].t : t_far;
    const double delta = std::max(0.0, next_t - samples[i].t);
    const double transmittance = std::exp(-accum);
    const double alpha = 1.0 - std::exp(-samples[i].sigma * delta);
    const double w = transmittance * alpha;
    c += samples[i].color * w;
    accum += samples[i].sigma * delta;
    if (trace) {
      trace->delta[i] = delta;
      trace->weight[i] = w;
    }
  }
  const double residual = std::exp(-accum);
  c += bg_color * residual;
  if (trace) trace->residual = residual;
  return c;
}

/// Gradient seeds produced by composite_backward for one sample.
struct SampleGrad {
  double dsigma = 0;
  Vec3 dcolor;
};

/// Reverse pass of composite: given dL/dC, fills per-sample dL/dsigma and
/// dL/dcolor. Sample interval lengths are treated as constants.
///   dL/dc_i    = w_i * dC
///   dL/dsigma_i = delta_i * dC . (T_{i+1} c_i - S_i),  S_i = sum_{j>i} w_j c_j + T_{N+1} bg
inline void composite_backward(std::span<const ShadedSample> samples, const CompositeTrace& trace,
                               const Vec3& bg_color, const Vec3& dC,
                               std::vector<SampleGrad>& out) {
  const std::size_t n = samples.size();
  out.resize(n);
  Vec3 suffix = bg_color * trace.residual;  // S_i accumulates back to front
  double trans_next = trace.residual;       // T_{i+1}
  for (std::size_t k = n; k-- > 0;) {
    const double w = trace.weight[k];
    out[k].dcolor = dC * w;
    out[k].dsigma = trace.delta[k] * dot(dC, samples[k].color * trans_next - suffix);
    suffix += samples[k].color * w;
    trans_next += w;  // T_i = T_{i+1} + w_i (telescoping)
  }
}

/// Field evaluation interface used by the renderer: anything providing
///   FieldOutput background(Vec3 x, Vec3 d) const
///   FieldOutput object(const ObjectNode&, Vec3 x_o, Vec3 d_o, Vec3 p_o) const
template <class P>
concept FieldProvider = requires(const P& p, const ObjectNode& node, Vec3 v) {
  { p.background(v, v) } -> std::same_as<FieldOutput>;
  { p.object(node, v, v, v) } -> std::same_as<FieldOutput>;
};

/// Learned-model provider: shades background samples with the background
/// network and object samples with their class network and latent descriptor.
struct LearnedProvider {
  const BackgroundModel* background_model = nullptr;
  const std::map<std::string, ObjectClassModel>* class_models = nullptr;
  const LatentTable* latents = nullptr;
  mutable FieldEvalTrace scratch;

  FieldOutput background(const Vec3& x, const Vec3& d) const {
    return background_forward(*background_model, x, d, scratch);
  }
  FieldOutput object(const ObjectNode& node, const Vec3& x_o, const Vec3& d_o,
                     const Vec3& p_o) const {
    const auto it = class_models->find(node.class_id);
    if (it == class_models->end())
      throw LookupError("render: no model for class '" + node.class_id + "'");
    return object_forward(it->second, latents->at(node.latent_ref), x_o, d_o, p_o, scratch);
  }
};

struct RenderOptions {
  NodeFilter filter;
  Vec3 bg_color{0, 0, 0};
  int n_object_samples = 7;
};

/// Renders one pixel ray: assemble samples, shade each through the provider,
/// composite front to back.
template <FieldProvider Provider>
Vec3 render_pixel(const Ray& ray, const SceneGraph& graph, const PlaneStack& planes,
                  const Provider& provider, const RenderOptions& opts) {
  const SampleSet set = assemble_samples(ray, graph, planes, opts.n_object_samples, opts.filter);
  std::vector<ShadedSample> shaded(set.points.size());
  for (std::size_t i = 0; i < set.points.size(); ++i) {
    const SamplePoint& p = set.points[i];
    const FieldOutput f =
        p.object_index < 0
            ? provider.background(p.x_world, ray.dir)
            : provider.object(graph.objects[p.object_index], p.x_obj, p.d_obj,
                              graph.objects[p.object_index].position());
    shaded[i] = {p.t, f.sigma, f.color};
  }
  return composite(shaded, set.t_far, opts.bg_color);
}

template <FieldProvider Provider>
Vec3 render_pixel(const Ray& ray, const SceneGraph& graph, const Provider& provider,
                  const RenderOptions& opts) {
  return render_pixel(ray, graph, PlaneStack::make(graph.background), provider, opts);
}

/// Renders a full frame. Pixels are independent; work is split over a fixed
/// chunk grid so output is bit-identical for any worker count.
template <FieldProvider Provider>
ImageBuffer render_image(const SceneGraph& graph, const Provider& provider,
                         const RenderOptions& opts, int n_threads = 0) {
  graph.validate();
  const PlaneStack planes = PlaneStack::make(graph.background);
  ImageBuffer img(graph.intrinsics.width, graph.intrinsics.height);
  if (n_threads <= 0) n_threads = hardware_threads();
  const std::size_t n_pixels = static_cast<std::size_t>(img.width) * img.height;
  parallel_chunks(n_pixels, 64, n_threads, [&](int, std::size_t begin, std::size_t end) {
    Provider local = provider;  // per-chunk scratch
    for (std::size_t k = begin; k < end; ++k) {
      const int px = static_cast<int>(k % img.width);
      const int py = static_cast<int>(k / img.width);
      const Ray ray = generate_ray(graph.intrinsics, graph.camera_pose, px, py);
      img.set_pixel(px, py, render_pixel(ray, graph, planes, local, opts));
    }
  });
  return img;
}

}  // namespace sgrf
