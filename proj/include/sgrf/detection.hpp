// Copyright Contributors to the sgrf Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "sgrf/errors.hpp"
#include "sgrf/image.hpp"
#include "sgrf/models.hpp"
#include "sgrf/parallel.hpp"
#include "sgrf/rng.hpp"
#include "sgrf/scene_io.hpp"
#include "sgrf/training.hpp"
#include "sgrf/volume_render.hpp"

namespace sgrf {

/// Mean absolute RGB difference over an inclusive pixel rectangle. The mean
/// (rather than the sum) keeps acceptance thresholds resolution-independent.
inline double region_l1(const ImageBuffer& a, const ImageBuffer& b, const PixelRect& region) {
  if (!a.same_size(b)) throw ValidationError("region_l1: image size mismatch");
  if (region.empty() || region.x0 < 0 || region.y0 < 0 || region.x1 >= a.width ||
      region.y1 >= a.height)
    throw ValidationError("region_l1: region out of bounds");
  double sum = 0.0;
  for (int y = region.y0; y <= region.y1; ++y)
    for (int x = region.x0; x <= region.x1; ++x) {
      const Vec3 d = a.pixel(x, y) - b.pixel(x, y);
      sum += std::abs(d.x) + std::abs(d.y) + std::abs(d.z);
    }
  return sum / (3.0 * region.pixel_count());
}

/// Bird's-eye-view anchor lattice with yaw hypotheses and a fixed height rule.
struct AnchorGrid {
  double x_min = 0, x_max = 0;
  double z_min = 0, z_max = 0;
  double spacing = 0.5;
  std::vector<double> yaws;  // radians
  double y_center = 0;

  void validate() const {
    if (!(spacing > 0)) throw ValidationError("anchor grid: spacing must be positive");
    if (!(x_max > x_min) || !(z_max > z_min))
      throw ValidationError("anchor grid: degenerate bounds");
    if (yaws.empty()) throw ValidationError("anchor grid: need at least one yaw");
  }
};

/// Per-class statistics from the training tracks, used to seed candidates.
struct ClassStats {
  BoxDims mean_dims;  // node dims (scale multipliers applied)
  double mean_y = 0;
};

inline std::map<std::string, ClassStats> class_stats(const SceneDataset& ds) {
  std::map<std::string, ClassStats> out;
  std::map<std::string, int> counts;
  for (const auto& f : ds.frames)
    for (const auto& t : f.tracks) {
      const Vec3 s = ds.scale_for(t.track_id);
      auto& st = out[t.class_id];
      st.mean_dims.length += t.dims.length * s.x;
      st.mean_dims.height += t.dims.height * s.y;
      st.mean_dims.width += t.dims.width * s.z;
      st.mean_y += t.pose.translation.y;
      ++counts[t.class_id];
    }
  for (auto& [id, st] : out) {
    const double n = counts[id];
    st.mean_dims.length /= n;
    st.mean_dims.height /= n;
    st.mean_dims.width /= n;
    st.mean_y /= n;
  }
  return out;
}

/// Grid covering the observed track positions (the drivable space) with margin.
inline AnchorGrid default_anchor_grid(const SceneDataset& ds, double margin = 0.6,
                                      double spacing = 0.5, int n_yaw = 8) {
  AnchorGrid g;
  g.spacing = spacing;
  double x0 = 1e300, x1 = -1e300, z0 = 1e300, z1 = -1e300, ysum = 0;
  int n = 0;
  for (const auto& f : ds.frames)
    for (const auto& t : f.tracks) {
      x0 = std::min(x0, t.pose.translation.x);
      x1 = std::max(x1, t.pose.translation.x);
      z0 = std::min(z0, t.pose.translation.z);
      z1 = std::max(z1, t.pose.translation.z);
      ysum += t.pose.translation.y;
      ++n;
    }
  if (n == 0) throw ValidationError("anchor grid: dataset has no tracks");
  g.x_min = x0 - margin;
  g.x_max = x1 + margin;
  g.z_min = z0 - margin;
  g.z_max = z1 + margin;
  g.y_center = ysum / n;
  for (int k = 0; k < n_yaw; ++k) g.yaws.push_back(2.0 * kPi * k / n_yaw);
  return g;
}

struct DetectConfig {
  int refine_steps = 150;
  int max_refine = 12;  // candidates surviving the forward prefilter
  double lr_pos = 0.03;
  double lr_yaw = 0.03;
  double lr_dims = 0.01;
  double lr_latent = 0.015;
  double accept_threshold = -1.0;  // < 0: calibrate from background residuals
  double threshold_quantile = 0.99;
  int calib_regions = 256;
  double overlap_threshold = 0.3;  // bird's-eye IoU above which boxes suppress
  double dims_bound = 0.3;         // dims stay within +/- this fraction of the class mean
  double dims_prior_weight = 0.02;  // quadratic pull toward the class mean, breaks the
                                    // monocular depth/scale ambiguity
  double latent_prior_weight = 0.02;
  double min_opacity = 0.25;  // mean compositing weight over the box to accept
  double improvement_ratio = 0.6;  // residual must undercut this fraction of the
                                   // background-only residual over the region
  double region_inflate = 1.3;
  int prefilter_stride = 2;
  std::uint64_t seed = 7;
  int threads = 0;
};

struct Detection {
  RigidTransform pose;
  BoxDims dims;
  std::vector<double> latent;
  std::string class_id;
  double residual = std::numeric_limits<double>::infinity();
  double initial_residual = std::numeric_limits<double>::infinity();
  double background_residual = std::numeric_limits<double>::infinity();
  double opacity = 0;
  bool accepted = false;
};

namespace detail {

inline constexpr int kCandidateTrackId = 1 << 20;  // outside any real track range

/// Axis-aligned BEV bounds of a yawed box footprint.
struct BevBox {
  double x0, x1, z0, z1;

  static BevBox of(const RigidTransform& pose, const BoxDims& dims) {
    const double c = std::abs(pose.rotation(0, 0)), s = std::abs(pose.rotation(0, 2));
    const double ex = c * dims.length / 2 + s * dims.width / 2;
    const double ez = s * dims.length / 2 + c * dims.width / 2;
    return {pose.translation.x - ex, pose.translation.x + ex, pose.translation.z - ez,
            pose.translation.z + ez};
  }

  double iou(const BevBox& o) const {
    const double ix = std::max(0.0, std::min(x1, o.x1) - std::max(x0, o.x0));
    const double iz = std::max(0.0, std::min(z1, o.z1) - std::max(z0, o.z0));
    const double inter = ix * iz;
    const double uni = (x1 - x0) * (z1 - z0) + (o.x1 - o.x0) * (o.z1 - o.z0) - inter;
    return uni > 0 ? inter / uni : 0.0;
  }
};

}  // namespace detail

/// 3D object detection by inverse rendering: anchor poses are refined by
/// gradient descent on the image-space l1 loss between the rendered candidate
/// and the observed image; the background and class networks stay frozen.
inline std::vector<Detection> detect(const ImageBuffer& observed, const SceneModels& models,
                                     const SceneGraph& bg_graph, const AnchorGrid& grid,
                                     const std::map<std::string, ClassStats>& stats,
                                     const DetectConfig& cfg) {
  grid.validate();
  if (models.classes.empty())
    throw ValidationError("detect: checkpoint has no trained class models");
  if (observed.width != bg_graph.intrinsics.width || observed.height != bg_graph.intrinsics.height)
    throw ValidationError("detect: observed image size does not match the camera");
  const int n_threads = cfg.threads > 0 ? cfg.threads : hardware_threads();

  SceneGraph base = bg_graph;
  base.objects.clear();
  base.background.near = models.near;
  base.background.far = models.far;
  base.background.n_planes = models.n_planes;
  base.background.reference_pose = models.reference_pose;
  const PlaneStack planes = PlaneStack::make(base.background);

  LearnedProvider provider{&models.background, &models.classes, &models.latents, {}};
  RenderOptions bg_opts;
  bg_opts.filter.kind = NodeFilter::BackgroundOnly;
  bg_opts.n_object_samples = models.n_obj_samples;
  const ImageBuffer bg_render = render_image(base, provider, bg_opts, n_threads);

  // Threshold calibration: residual distribution of the background-only render
  // against the observed image over random box-sized regions.
  double threshold = cfg.accept_threshold;
  if (threshold < 0) {
    Rng rng(cfg.seed);
    std::vector<double> residuals;
    residuals.reserve(cfg.calib_regions);
    const auto& st = stats.begin()->second;
    while (static_cast<int>(residuals.size()) < cfg.calib_regions) {
      ObjectNode probe;
      probe.track_id = detail::kCandidateTrackId;
      probe.class_id = stats.begin()->first;
      probe.dims = st.mean_dims;
      probe.latent_ref = detail::kCandidateTrackId;
      probe.pose = RigidTransform::from_yaw(
          rng.uniform(0, 2 * kPi),
          {rng.uniform(grid.x_min, grid.x_max), grid.y_center, rng.uniform(grid.z_min, grid.z_max)});
      const PixelRect r =
          project_box_rect(base.intrinsics, base.camera_pose, probe).clipped(observed.width, observed.height);
      if (r.empty() || r.pixel_count() < 9) continue;
      residuals.push_back(region_l1(observed, bg_render, r));
    }
    std::sort(residuals.begin(), residuals.end());
    const std::size_t idx = std::min(residuals.size() - 1,
                                     static_cast<std::size_t>(cfg.threshold_quantile * residuals.size()));
    threshold = residuals[idx];
  }

  // Candidate = anchor x yaw x class.
  struct Candidate {
    std::string class_id;
    double x, z, yaw;
    PixelRect region;
    double initial = std::numeric_limits<double>::infinity();
    Detection result;
  };
  std::vector<Candidate> candidates;
  for (const auto& [class_id, st] : stats) {
    for (double z = grid.z_min; z <= grid.z_max + 1e-9; z += grid.spacing)
      for (double x = grid.x_min; x <= grid.x_max + 1e-9; x += grid.spacing)
        for (double yaw : grid.yaws) {
          Candidate c;
          c.class_id = class_id;
          c.x = x;
          c.z = z;
          c.yaw = yaw;
          ObjectNode node;
          node.track_id = detail::kCandidateTrackId;
          node.class_id = class_id;
          node.dims = {st.mean_dims.length * cfg.region_inflate,
                       st.mean_dims.height * cfg.region_inflate,
                       st.mean_dims.width * cfg.region_inflate};
          node.latent_ref = detail::kCandidateTrackId;
          node.pose = RigidTransform::from_yaw(yaw, {x, grid.y_center, z});
          PixelRect r = project_box_rect(base.intrinsics, base.camera_pose, node);
          // Room for the refinement to move the box within its grid cell.
          if (!r.empty()) {
            const double depth = std::max(0.5, -(base.camera_pose.rotation.transposed() *
                                                 (node.pose.translation - base.camera_pose.translation))
                                                    .z);
            const int margin =
                static_cast<int>(std::ceil(base.intrinsics.fx * 0.7 * grid.spacing / depth));
            r = PixelRect{r.x0 - margin, r.y0 - margin, r.x1 + margin, r.y1 + margin}.clipped(
                observed.width, observed.height);
          }
          if (r.empty() || r.pixel_count() < 9) continue;
          c.region = r;
          candidates.push_back(std::move(c));
        }
  }

  // Forward prefilter: initial residual of the unrefined candidate, rendered
  // on a strided pixel grid.
  parallel_chunks(candidates.size(), 16, n_threads, [&](int, std::size_t begin, std::size_t end) {
    SceneModels local = models;
    local.latents.insert(detail::kCandidateTrackId, local.latents.mean());
    TracedRenderer renderer(local);
    for (std::size_t i = begin; i < end; ++i) {
      Candidate& c = candidates[i];
      const auto& st = stats.at(c.class_id);
      SceneGraph g = base;
      ObjectNode node;
      node.track_id = detail::kCandidateTrackId;
      node.class_id = c.class_id;
      node.dims = st.mean_dims;
      node.latent_ref = detail::kCandidateTrackId;
      node.pose = RigidTransform::from_yaw(c.yaw, {c.x, grid.y_center, c.z});
      g.objects.push_back(node);
      double sum = 0;
      int count = 0;
      for (int py = c.region.y0; py <= c.region.y1; py += cfg.prefilter_stride)
        for (int px = c.region.x0; px <= c.region.x1; px += cfg.prefilter_stride) {
          const Ray ray = generate_ray(g.intrinsics, g.camera_pose, px, py);
          const Vec3 pred = renderer.forward(g, planes, ray);
          const Vec3 d = pred - observed.pixel(px, py);
          sum += std::abs(d.x) + std::abs(d.y) + std::abs(d.z);
          ++count;
        }
      c.initial = sum / (3.0 * count);
    }
  });

  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Candidate& a, const Candidate& b) { return a.initial < b.initial; });

  // Spread the refinement budget over distinct locations (keeping a few yaw
  // hypotheses each) so one strong object cannot monopolize the anchors.
  {
    constexpr int kYawsPerLocation = 3;
    std::vector<Candidate> spread;
    std::vector<detail::BevBox> taken;          // footprint per taken location
    std::vector<std::pair<double, double>> at;  // anchor coords per taken location
    std::vector<int> used;
    for (auto& c : candidates) {
      if (spread.size() >= static_cast<std::size_t>(cfg.max_refine)) break;
      int loc = -1;
      for (std::size_t i = 0; i < at.size(); ++i)
        if (at[i].first == c.x && at[i].second == c.z) loc = static_cast<int>(i);
      if (loc >= 0) {
        if (used[loc] < kYawsPerLocation) {
          ++used[loc];
          spread.push_back(std::move(c));
        }
        continue;
      }
      const auto& st = stats.at(c.class_id);
      const auto box = detail::BevBox::of(
          RigidTransform::from_yaw(c.yaw, {c.x, grid.y_center, c.z}), st.mean_dims);
      bool clash = false;
      for (const auto& t : taken)
        if (box.iou(t) > cfg.overlap_threshold) {
          clash = true;
          break;
        }
      if (clash) continue;
      taken.push_back(box);
      at.emplace_back(c.x, c.z);
      used.push_back(1);
      spread.push_back(std::move(c));
    }
    candidates = std::move(spread);
  }
  const std::size_t n_refine = std::min<std::size_t>(cfg.max_refine, candidates.size());

  // Gradient refinement of the surviving candidates.
  parallel_chunks(n_refine, 16, n_threads, [&](int, std::size_t begin, std::size_t end) {
    SceneModels local = models;
    const std::vector<double> latent_mean = local.latents.mean();
    local.latents.insert(detail::kCandidateTrackId, latent_mean);
    TracedRenderer renderer(local);
    std::vector<double> scratch;
    for (std::size_t ci = begin; ci < end; ++ci) {
      Candidate& c = candidates[ci];
      const auto& st = stats.at(c.class_id);
      scratch.assign(local.class_model(c.class_id).mlp.param_count(), 0.0);
      const int dim = local.latents.dim;

      // Parameter vector: x, z, yaw, L, H, W, latent[dim].
      std::vector<double> theta(6 + dim);
      theta[0] = c.x;
      theta[1] = c.z;
      theta[2] = c.yaw;
      theta[3] = st.mean_dims.length;
      theta[4] = st.mean_dims.height;
      theta[5] = st.mean_dims.width;
      std::copy(latent_mean.begin(), latent_mean.end(), theta.begin() + 6);
      std::vector<double> lr(6 + dim);
      lr[0] = lr[1] = cfg.lr_pos;
      lr[2] = cfg.lr_yaw;
      lr[3] = lr[4] = lr[5] = cfg.lr_dims;
      for (int k = 0; k < dim; ++k) lr[6 + k] = cfg.lr_latent;
      std::vector<double> adam_m(6 + dim, 0.0), adam_v(6 + dim, 0.0), grad(6 + dim);

      std::vector<double> best_theta = theta;
      double best_residual = std::numeric_limits<double>::infinity();
      double best_opacity = 0;
      double step0_residual = std::numeric_limits<double>::infinity();

      const int n_px = c.region.pixel_count();
      for (int step = 0; step <= cfg.refine_steps; ++step) {
        // Materialize the candidate.
        ObjectNode node;
        node.track_id = detail::kCandidateTrackId;
        node.class_id = c.class_id;
        node.pose = RigidTransform::from_yaw(theta[2], {theta[0], grid.y_center, theta[1]});
        node.dims = {theta[3], theta[4], theta[5]};
        node.latent_ref = detail::kCandidateTrackId;
        auto& latent_slot = local.latents.entries.at(detail::kCandidateTrackId);
        std::copy(theta.begin() + 6, theta.end(), latent_slot.begin());
        SceneGraph g = base;
        g.objects.push_back(node);

        CandidateGrads cg;
        cg.track_id = detail::kCandidateTrackId;
        cg.dlatent.assign(dim, 0.0);
        // Opacity is judged over the candidate's own projected box, not the
        // whole search region, so a real hit is not diluted by margin pixels.
        const PixelRect tight =
            project_box_rect(g.intrinsics, g.camera_pose, node).clipped(observed.width,
                                                                        observed.height);
        double l1 = 0, opacity = 0;
        int tight_count = 0;
        for (int py = c.region.y0; py <= c.region.y1; ++py)
          for (int px = c.region.x0; px <= c.region.x1; ++px) {
            const Ray ray = generate_ray(g.intrinsics, g.camera_pose, px, py);
            const Vec3 pred = renderer.forward(g, planes, ray);
            const Vec3 diff = pred - observed.pixel(px, py);
            l1 += std::abs(diff.x) + std::abs(diff.y) + std::abs(diff.z);
            if (!tight.empty() && tight.contains(px, py)) {
              opacity += renderer.track_weight(detail::kCandidateTrackId);
              ++tight_count;
            }
            const double scale = 1.0 / (3.0 * n_px);
            const Vec3 dC{(diff.x > 0 ? 1.0 : diff.x < 0 ? -1.0 : 0.0) * scale,
                          (diff.y > 0 ? 1.0 : diff.y < 0 ? -1.0 : 0.0) * scale,
                          (diff.z > 0 ? 1.0 : diff.z < 0 ? -1.0 : 0.0) * scale};
            renderer.backward(g, ray, dC, nullptr, &cg, &scratch);
          }
        l1 /= 3.0 * n_px;
        opacity = tight_count > 0 ? opacity / tight_count : 0.0;

        if (step == 0) step0_residual = l1;
        if (l1 < best_residual) {
          best_residual = l1;
          best_theta = theta;
          best_opacity = opacity;
        }
        if (step == cfg.refine_steps) break;

        grad[0] = cg.dtranslation.x;
        grad[1] = cg.dtranslation.z;
        grad[2] = cg.dyaw;
        grad[3] = cg.ddims.x + 2.0 * cfg.dims_prior_weight * (theta[3] - st.mean_dims.length);
        grad[4] = cg.ddims.y + 2.0 * cfg.dims_prior_weight * (theta[4] - st.mean_dims.height);
        grad[5] = cg.ddims.z + 2.0 * cfg.dims_prior_weight * (theta[5] - st.mean_dims.width);
        for (int k = 0; k < dim; ++k)
          grad[6 + k] = cg.dlatent[k] +
                        2.0 * cfg.latent_prior_weight * (theta[6 + k] - latent_mean[k]);

        const std::int64_t t = step + 1;
        const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(t));
        for (std::size_t k = 0; k < theta.size(); ++k) {
          adam_m[k] = kAdamBeta1 * adam_m[k] + (1.0 - kAdamBeta1) * grad[k];
          adam_v[k] = kAdamBeta2 * adam_v[k] + (1.0 - kAdamBeta2) * grad[k] * grad[k];
          theta[k] -= lr[k] * (adam_m[k] / c1) / (std::sqrt(adam_v[k] / c2) + kAdamEps);
        }
        // The pose stays inside the anchor grid (the drivable space) and dims
        // within the class-mean bounds.
        theta[0] = std::clamp(theta[0], grid.x_min - 0.5 * grid.spacing,
                              grid.x_max + 0.5 * grid.spacing);
        theta[1] = std::clamp(theta[1], grid.z_min - 0.5 * grid.spacing,
                              grid.z_max + 0.5 * grid.spacing);
        theta[3] = std::clamp(theta[3], st.mean_dims.length * (1 - cfg.dims_bound),
                              st.mean_dims.length * (1 + cfg.dims_bound));
        theta[4] = std::clamp(theta[4], st.mean_dims.height * (1 - cfg.dims_bound),
                              st.mean_dims.height * (1 + cfg.dims_bound));
        theta[5] = std::clamp(theta[5], st.mean_dims.width * (1 - cfg.dims_bound),
                              st.mean_dims.width * (1 + cfg.dims_bound));
      }

      Detection det;
      det.pose = RigidTransform::from_yaw(best_theta[2],
                                          {best_theta[0], grid.y_center, best_theta[1]});
      det.dims = {best_theta[3], best_theta[4], best_theta[5]};
      det.latent.assign(best_theta.begin() + 6, best_theta.end());
      det.class_id = c.class_id;
      det.residual = best_residual;
      det.initial_residual = step0_residual;
      det.background_residual = region_l1(observed, bg_render, c.region);
      det.opacity = best_opacity;
      // A detection must beat the threshold, be substantively opaque, and
      // explain its region better than the background alone can.
      det.accepted = best_residual < threshold && best_opacity >= cfg.min_opacity &&
                     best_residual < cfg.improvement_ratio * det.background_residual;
      c.result = std::move(det);
    }
  });

  std::vector<Detection> detections;
  detections.reserve(n_refine);
  for (std::size_t i = 0; i < n_refine; ++i) detections.push_back(std::move(candidates[i].result));
  std::stable_sort(detections.begin(), detections.end(),
                   [](const Detection& a, const Detection& b) { return a.residual < b.residual; });

  // Overlap suppression among accepted survivors, keeping the lowest residual.
  std::vector<detail::BevBox> kept;
  for (auto& d : detections) {
    if (!d.accepted) continue;
    const auto box = detail::BevBox::of(d.pose, d.dims);
    bool suppressed = false;
    for (const auto& k : kept)
      if (box.iou(k) > cfg.overlap_threshold) {
        suppressed = true;
        break;
      }
    if (suppressed)
      d.accepted = false;
    else
      kept.push_back(box);
  }
  return detections;
}

/// Detection text lines: `x z yaw L H W residual accepted`.
inline std::string format_detection(const Detection& d) {
  char buf[256];
  const double yaw = std::atan2(d.pose.rotation(0, 2), d.pose.rotation(0, 0));
  std::snprintf(buf, sizeof buf, "%.6f %.6f %.6f %.6f %.6f %.6f %.6f %d", d.pose.translation.x,
                d.pose.translation.z, yaw, d.dims.length, d.dims.height, d.dims.width, d.residual,
                d.accepted ? 1 : 0);
  return buf;
}

}  // namespace sgrf
