// Copyright Contributors to the sgrf Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "sgrf/field_models.hpp"
#include "sgrf/image.hpp"
#include "sgrf/rng.hpp"
#include "sgrf/sampling.hpp"
#include "sgrf/scene_graph.hpp"
#include "sgrf/scene_io.hpp"

namespace sgrf {

/// Desk-scale synthetic scene parameters. The generated scene has a static
/// camera at the origin looking along -z, a textured opaque backdrop slab, and
/// boxes moving on straight crossing paths (the drivable space).
struct SynthSpec {
  std::uint64_t seed = 1;
  int n_frames = 20;
  int resolution = 64;
  int n_objects = 2;
};

/// One sinusoidal texture component: per-channel amplitude and phase over a
/// shared spatial frequency.
struct TextureComponent {
  double fx = 0, fy = 0;  // rad per meter
  Vec3 amp, phase;
};

/// Constant-density slab spanning z in [z_back, z_front], colored by an
/// analytic texture of world (x, y). Radiance along any ray segment inside the
/// slab integrates in closed form (exponential-times-sinusoid terms).
struct AnalyticBackdrop {
  double z_front = -7.0, z_back = -7.6;
  double sigma = 22.0;
  Vec3 base{0.5, 0.52, 0.55};
  std::vector<TextureComponent> components;

  Vec3 color_at(double x, double y) const {
    Vec3 c = base;
    for (const auto& k : components) {
      const double arg = k.fx * x + k.fy * y;
      c.x += k.amp.x * std::sin(arg + k.phase.x);
      c.y += k.amp.y * std::sin(arg + k.phase.y);
      c.z += k.amp.z * std::sin(arg + k.phase.z);
    }
    return c;
  }
};

/// Constant-density box with color linear in its local coordinates, moving on
/// a straight line at fixed yaw.
struct AnalyticBox {
  int track_id = 0;
  std::string class_id = "car";
  BoxDims dims;
  double sigma = 40.0;
  Vec3 color0, grad;  // channel ch reads color0[ch] + grad[ch] * x_o[ch]
  Vec3 pos_start, pos_end;
  double yaw = 0;  // radians

  RigidTransform pose(int frame, int n_frames) const {
    const double f = n_frames > 1 ? frame / static_cast<double>(n_frames - 1) : 0.0;
    return RigidTransform::from_yaw(yaw, pos_start + (pos_end - pos_start) * f);
  }

  Vec3 color_at_local(const Vec3& x_o) const { return color0 + hadamard(grad, x_o); }
};

namespace detail {
/// Transmittance-weighted emission of a constant-sigma segment with color
/// linear in the segment parameter: integral over s in [0,u] of
/// sigma * exp(-sigma s) * (a + b s).
inline double integrate_linear(double sigma, double u, double a, double b) {
  const double e = std::exp(-sigma * u);
  return a * (1.0 - e) + b * ((1.0 - e) / sigma - u * e);
}

/// Same for a sinusoidal color term: integral of sigma exp(-sigma s) sin(c0 + q s).
inline double integrate_sin(double sigma, double u, double c0, double q) {
  const double denom = sigma * sigma + q * q;
  const auto antiderivative = [&](double s) {
    return std::exp(-sigma * s) * (-sigma * std::sin(c0 + q * s) - q * std::cos(c0 + q * s)) /
           denom;
  };
  return sigma * (antiderivative(u) - antiderivative(0.0));
}
}  // namespace detail

/// Scene with analytic (sigma, c) fields whose rendering integral has a closed
/// form per ray segment. Serves as the ground-truth generator and as the
/// independent oracle for the quadrature pipeline.
struct AnalyticScene {
  Intrinsics intrinsics;
  double near = 1.5, far = 8.0;
  int n_planes = 6;
  RigidTransform cam_pose;  // static across frames
  AnalyticBackdrop backdrop;
  std::vector<AnalyticBox> boxes;
  int n_frames = 1;
  Vec3 bg_color{0, 0, 0};
  Vec3 track_scale{1.1, 1.1, 1.1};  // node inflation written to the scene file

  /// Field lookup at a world point (fields are disjoint by construction).
  FieldOutput eval(const Vec3& x, int frame) const {
    for (const auto& b : boxes) {
      const Vec3 x_o = world_to_object(b.pose(frame, n_frames), b.dims, x);
      if (max_abs_component(x_o) <= 1.0) return {b.color_at_local(x_o), b.sigma};
    }
    if (x.z >= backdrop.z_back && x.z <= backdrop.z_front)
      return {backdrop.color_at(x.x, x.y), backdrop.sigma};
    return {{0, 0, 0}, 0.0};
  }

  /// Static part of the field only (no boxes).
  FieldOutput eval_background(const Vec3& x) const {
    if (x.z >= backdrop.z_back && x.z <= backdrop.z_front)
      return {backdrop.color_at(x.x, x.y), backdrop.sigma};
    return {{0, 0, 0}, 0.0};
  }

  /// Exact transmitted color along a ray: per-segment closed-form integration,
  /// no quadrature.
  Vec3 render_ray_exact(const Ray& ray, int frame, bool background_only = false) const {
    struct Segment {
      double t0, t1;
      int box = -1;  // -1: backdrop
    };
    std::vector<Segment> segs;

    if (ray.dir.z != 0.0) {
      double t0 = (backdrop.z_front - ray.origin.z) / ray.dir.z;
      double t1 = (backdrop.z_back - ray.origin.z) / ray.dir.z;
      if (t0 > t1) std::swap(t0, t1);
      t0 = std::max(t0, ray.t_near);
      t1 = std::min(t1, ray.t_far);
      if (t1 > t0) segs.push_back({t0, t1, -1});
    } else if (ray.origin.z >= backdrop.z_back && ray.origin.z <= backdrop.z_front) {
      segs.push_back({ray.t_near, std::min(ray.t_far, ray.t_near + 1e6), -1});
    }

    if (!background_only) {
      for (std::size_t bi = 0; bi < boxes.size(); ++bi) {
        const auto& b = boxes[bi];
        const RigidTransform pose = b.pose(frame, n_frames);
        // Local slab test, kept independent of the sampling module.
        const Vec3 half{b.dims.length / 2, b.dims.height / 2, b.dims.width / 2};
        const Mat3 rt = pose.rotation.transposed();
        const Vec3 o = rt * (ray.origin - pose.translation);
        const Vec3 d = rt * ray.dir;
        double t0 = ray.t_near, t1 = ray.t_far;
        bool miss = false;
        for (int a = 0; a < 3 && !miss; ++a) {
          if (d[a] != 0.0) {
            double lo = (-half[a] - o[a]) / d[a];
            double hi = (half[a] - o[a]) / d[a];
            if (lo > hi) std::swap(lo, hi);
            t0 = std::max(t0, lo);
            t1 = std::min(t1, hi);
          } else if (o[a] < -half[a] || o[a] > half[a]) {
            miss = true;
          }
        }
        if (!miss && t1 > t0) segs.push_back({t0, t1, static_cast<int>(bi)});
      }
    }

    std::sort(segs.begin(), segs.end(), [](const Segment& a, const Segment& b) { return a.t0 < b.t0; });
    for (std::size_t i = 1; i < segs.size(); ++i)
      assert(segs[i].t0 >= segs[i - 1].t1 - 1e-9 && "analytic fields must be disjoint");

    Vec3 color{0, 0, 0};
    double transmittance = 1.0;
    for (const auto& s : segs) {
      const double u = s.t1 - s.t0;
      if (u <= 0) continue;
      if (s.box < 0) {
        const double q = backdrop.sigma;
        const Vec3 p0{ray.origin.x + ray.dir.x * s.t0, ray.origin.y + ray.dir.y * s.t0, 0};
        Vec3 seg{0, 0, 0};
        const double att = 1.0 - std::exp(-q * u);
        seg += backdrop.base * att;
        for (const auto& k : backdrop.components) {
          const double c0_base = k.fx * p0.x + k.fy * p0.y;
          const double rate = k.fx * ray.dir.x + k.fy * ray.dir.y;
          seg.x += k.amp.x * detail::integrate_sin(q, u, c0_base + k.phase.x, rate);
          seg.y += k.amp.y * detail::integrate_sin(q, u, c0_base + k.phase.y, rate);
          seg.z += k.amp.z * detail::integrate_sin(q, u, c0_base + k.phase.z, rate);
        }
        color += seg * transmittance;
        transmittance *= std::exp(-q * u);
      } else {
        const auto& b = boxes[s.box];
        const RigidTransform pose = b.pose(frame, n_frames);
        const Vec3 scale = unit_scale(b.dims);
        const Mat3 rt = pose.rotation.transposed();
        const Vec3 o_loc = hadamard(scale, rt * (ray.origin - pose.translation));
        const Vec3 d_loc = hadamard(scale, rt * ray.dir);
        const Vec3 x_start = o_loc + d_loc * s.t0;  // unit-box coords at segment start
        Vec3 seg;
        for (int ch = 0; ch < 3; ++ch) {
          const double a = b.color0[ch] + b.grad[ch] * x_start[ch];
          const double slope = b.grad[ch] * d_loc[ch];
          seg[ch] = detail::integrate_linear(b.sigma, u, a, slope);
        }
        color += seg * transmittance;
        transmittance *= std::exp(-b.sigma * u);
      }
    }
    return color + bg_color * transmittance;
  }

  ImageBuffer render_frame(int frame, bool background_only = false) const {
    ImageBuffer img(intrinsics.width, intrinsics.height);
    for (int py = 0; py < intrinsics.height; ++py)
      for (int px = 0; px < intrinsics.width; ++px) {
        const Ray ray = generate_ray(intrinsics, cam_pose, px, py);
        img.set_pixel(px, py, render_ray_exact(ray, frame, background_only));
      }
    return img;
  }
};

/// Field provider backed by the analytic scene, for substituting the learned
/// models inside the quadrature pipeline.
struct AnalyticProvider {
  const AnalyticScene* scene = nullptr;
  int frame = 0;

  FieldOutput background(const Vec3& x, const Vec3&) const { return scene->eval_background(x); }
  FieldOutput object(const ObjectNode& node, const Vec3& x_o, const Vec3&, const Vec3&) const {
    return scene->eval(object_to_world(node.pose, node.dims, x_o), frame);
  }
};

inline AnalyticScene make_analytic_scene(const SynthSpec& spec) {
  if (spec.resolution < 16) throw ValidationError("synthetic: resolution must be >= 16");
  if (spec.n_frames < 1 || spec.n_objects < 0) throw ValidationError("synthetic: bad spec");
  Rng rng(spec.seed);
  AnalyticScene s;
  const int res = spec.resolution;
  s.intrinsics = {70.0 * res / 64.0, 70.0 * res / 64.0, res / 2.0, res / 2.0, res, res};
  s.cam_pose = RigidTransform::identity();
  s.n_frames = spec.n_frames;

  s.backdrop.base = Vec3{0.50, 0.52, 0.55} +
                    Vec3{rng.uniform(-0.04, 0.04), rng.uniform(-0.04, 0.04), rng.uniform(-0.04, 0.04)};
  auto jitter = [&rng](double v) { return v * rng.uniform(0.85, 1.15); };
  s.backdrop.components.push_back(
      {jitter(0.8), jitter(0.5),
       {0.20, 0.18, 0.16},
       {rng.uniform(0, 2 * kPi), rng.uniform(0, 2 * kPi), rng.uniform(0, 2 * kPi)}});
  s.backdrop.components.push_back(
      {jitter(2.0), jitter(1.3),
       {0.10, 0.12, 0.11},
       {rng.uniform(0, 2 * kPi), rng.uniform(0, 2 * kPi), rng.uniform(0, 2 * kPi)}});

  const Vec3 palette[4] = {{0.75, 0.22, 0.18}, {0.20, 0.35, 0.80}, {0.25, 0.70, 0.30},
                           {0.80, 0.65, 0.20}};
  for (int j = 0; j < spec.n_objects; ++j) {
    AnalyticBox b;
    b.track_id = j + 1;
    b.dims = {1.3 * rng.uniform(0.92, 1.08), 0.85 * rng.uniform(0.94, 1.06),
              0.95 * rng.uniform(0.94, 1.06)};
    b.color0 = palette[j % 4] + Vec3{rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05),
                                     rng.uniform(-0.05, 0.05)};
    b.grad = {rng.uniform(0, 1) < 0.5 ? 0.08 : -0.08, rng.uniform(0, 1) < 0.5 ? 0.06 : -0.06,
              rng.uniform(0, 1) < 0.5 ? 0.08 : -0.08};
    const double lane_z = -3.8 - 2.0 * (j % 2) - 0.45 * (j / 2) + rng.uniform(-0.08, 0.08);
    const double span = 1.6 + 0.15 * (j % 2);
    const double y = -0.5;
    if (j % 2 == 0) {
      b.pos_start = {-span, y, lane_z};
      b.pos_end = {span, y, lane_z - 0.35};
    } else {
      b.pos_start = {span, y, lane_z};
      b.pos_end = {-span, y, lane_z + 0.35};
    }
    const Vec3 dir = normalized(b.pos_end - b.pos_start);
    b.yaw = std::atan2(-dir.z, dir.x);
    s.boxes.push_back(std::move(b));
  }
  return s;
}

/// Renders the analytic scene to disk: frames/*.ppm plus the scene-description
/// file. The written dataset reproduces the analytic geometry exactly.
inline void generate_synthetic(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  const AnalyticScene scene = make_analytic_scene(spec);
  std::filesystem::create_directories(out_dir / "frames");

  SceneDataset ds;
  ds.intrinsics = scene.intrinsics;
  ds.near = scene.near;
  ds.far = scene.far;
  ds.n_planes = scene.n_planes;
  ds.base_dir = out_dir;
  for (const auto& b : scene.boxes) ds.track_scale[b.track_id] = scene.track_scale;
  for (int k = 0; k < scene.n_frames; ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "frames/f%03d.ppm", k);
    const ImageBuffer img = scene.render_frame(k);
    write_ppm(img, out_dir / name);
    FrameData f;
    f.frame_id = k;
    f.image_path = name;
    f.cam_pose = scene.cam_pose;
    f.euler_deg = Vec3{0, 0, 0};
    for (const auto& b : scene.boxes) {
      TrackObs t;
      t.track_id = b.track_id;
      t.class_id = b.class_id;
      t.yaw_deg = rad_to_deg(b.yaw);
      t.pose = RigidTransform::from_yaw(deg_to_rad(*t.yaw_deg), b.pose(k, scene.n_frames).translation);
      t.dims = b.dims;
      f.tracks.push_back(std::move(t));
    }
    ds.frames.push_back(std::move(f));
  }
  save_dataset(ds, out_dir / "scene.nsg");
}

}  // namespace sgrf
