// Copyright Contributors to the sgrf Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <optional>
#include <set>
#include <vector>

#include "sgrf/errors.hpp"
#include "sgrf/scene_graph.hpp"
#include "sgrf/vec.hpp"

namespace sgrf {

struct Ray {
  Vec3 origin;
  Vec3 dir;  // unit
  double t_near = 0.0;
  double t_far = std::numeric_limits<double>::infinity();
};

/// Grazing box hits narrower than this (in world t) are treated as misses.
inline constexpr double kGrazingEps = 1e-6;
/// Sample t values closer than this are ordered by the deterministic tie-break.
inline constexpr double kTieEps = 1e-9;

/// Ray through pixel (px, py). Camera looks along -z with y up in its own
/// frame; jitter (in [0,1)^2) replaces the default half-pixel center offset.
inline Ray generate_ray(const Intrinsics& intr, const RigidTransform& cam_pose, int px, int py,
                        const double* jitter = nullptr) {
  if (px < 0 || px >= intr.width || py < 0 || py >= intr.height)
    throw ValidationError("generate_ray: pixel out of bounds");
  const double ox = jitter ? jitter[0] : 0.5;
  const double oy = jitter ? jitter[1] : 0.5;
  const Vec3 cam_dir{(px + ox - intr.cx) / intr.fx, -(py + oy - intr.cy) / intr.fy, -1.0};
  Ray r;
  r.origin = cam_pose.translation;
  r.dir = normalized(cam_pose.rotation * cam_dir);
  return r;
}

/// Parallel sampling planes for the static node: all share the forward normal
/// of the reference camera, at depths equispaced in [near, far].
struct PlaneStack {
  Vec3 normal;                  // unit, pointing away from the reference camera
  Vec3 anchor;                  // reference camera position
  std::vector<double> depths;   // strictly increasing

  static PlaneStack make(const RigidTransform& reference_pose, double near, double far,
                         int n_planes) {
    if (n_planes < 2) throw ValidationError("plane stack: need at least 2 planes");
    if (!(near > 0 && near < far)) throw ValidationError("plane stack: require 0 < near < far");
    PlaneStack ps;
    ps.normal = reference_pose.rotation * Vec3{0, 0, -1};
    ps.anchor = reference_pose.translation;
    ps.depths.resize(n_planes);
    for (int k = 0; k < n_planes; ++k)
      ps.depths[k] = near + (far - near) * k / static_cast<double>(n_planes - 1);
    return ps;
  }

  static PlaneStack make(const BackgroundNode& bg) {
    return make(bg.reference_pose, bg.near, bg.far, bg.n_planes);
  }

  double spacing() const { return depths[1] - depths[0]; }
};

/// Ascending t of the ray-plane intersections within [ray.t_near, ray.t_far].
/// Planes the ray runs parallel to (|d.n| <= 1e-9) and out-of-range hits are
/// skipped, so the result may have fewer than n_planes entries.
inline std::vector<double> plane_intersections(const Ray& ray, const PlaneStack& planes) {
  std::vector<double> ts;
  const double dn = dot(ray.dir, planes.normal);
  if (std::abs(dn) <= 1e-9) return ts;
  const double on = dot(ray.origin - planes.anchor, planes.normal);
  ts.reserve(planes.depths.size());
  for (const double depth : planes.depths) {
    const double t = (depth - on) / dn;
    if (t >= ray.t_near && t <= ray.t_far) ts.push_back(t);
  }
  std::sort(ts.begin(), ts.end());
  return ts;
}

/// Slab test of an object-frame ray against the cube [-1,1]^3. The direction
/// is the world direction carried through the object transform without
/// renormalization, so t stays in world-ray units. Returns entrance/exit
/// clipped to [t_near, t_far], or nothing for misses, fully out-of-range
/// intervals, and grazing hits narrower than kGrazingEps.
inline std::optional<std::pair<double, double>> ray_aabb_unit(
    const Vec3& origin, const Vec3& dir, double t_near = 0.0,
    double t_far = std::numeric_limits<double>::infinity()) {
  double t_in = t_near;
  double t_out = t_far;
  for (int a = 0; a < 3; ++a) {
    const double o = origin[a], d = dir[a];
    if (d != 0.0) {
      const double inv = 1.0 / d;
      double t0 = (-1.0 - o) * inv;
      double t1 = (1.0 - o) * inv;
      if (t0 > t1) std::swap(t0, t1);
      t_in = std::max(t_in, t0);
      t_out = std::min(t_out, t1);
    } else if (o < -1.0 || o > 1.0) {
      return std::nullopt;
    }
  }
  if (!(t_out - t_in >= kGrazingEps)) return std::nullopt;
  return std::make_pair(t_in, t_out);
}

/// n_d equidistant quadrature points covering [t_in, t_out], endpoints
/// included: t_n = (n-1)/(N-1) * (t_out - t_in) + t_in.
inline void object_quadrature(double t_in, double t_out, int n_d, std::vector<double>& out) {
  if (n_d < 2) throw ValidationError("object_quadrature: need at least 2 points");
  assert(t_in < t_out);
  out.resize(n_d);
  for (int n = 1; n <= n_d; ++n)
    out[n - 1] = (n - 1) / static_cast<double>(n_d - 1) * (t_out - t_in) + t_in;
}

/// One quadrature point along a ray, tagged with its source node.
struct SamplePoint {
  double t = 0;
  int object_index = -1;  // index into graph.objects, -1 for a background plane
  int sub_index = 0;      // plane index or quadrature index
  int track_id = -1;
  Vec3 x_world;
  Vec3 x_obj, d_obj;  // set when object_index >= 0
};

struct SampleSet {
  std::vector<SamplePoint> points;  // ascending t
  double t_far = 0;                 // effective integration end for this ray
};

/// Which graph nodes participate in sampling/shading.
struct NodeFilter {
  enum Kind { All, BackgroundOnly, ObjectsOnly, Explicit };
  Kind kind = All;
  std::set<int> tracks;  // for Explicit

  bool background() const { return kind == All || kind == BackgroundOnly; }
  bool object(int track_id) const {
    switch (kind) {
      case All:
      case ObjectsOnly:
        return true;
      case BackgroundOnly:
        return false;
      case Explicit:
        return tracks.count(track_id) > 0;
    }
    return false;
  }
};

namespace detail {
// Deterministic tie-break: among samples within kTieEps in t, background
// first, then objects by ascending track id (then quadrature index). Input is
// sorted by t; epsilon groups are tiny, so adjacent bubble passes settle fast.
inline void apply_tie_break(std::vector<SamplePoint>& pts) {
  auto rank_less = [](const SamplePoint& a, const SamplePoint& b) {
    const int ka = a.object_index < 0 ? -1 : a.track_id;
    const int kb = b.object_index < 0 ? -1 : b.track_id;
    if (ka != kb) return ka < kb;
    return a.sub_index < b.sub_index;
  };
  bool moved = true;
  while (moved) {
    moved = false;
    for (std::size_t i = 1; i < pts.size(); ++i) {
      if (pts[i].t - pts[i - 1].t < kTieEps && rank_less(pts[i], pts[i - 1])) {
        std::swap(pts[i], pts[i - 1]);
        moved = true;
      }
    }
  }
}
}  // namespace detail

/// Builds the ordered per-ray sample set: background plane hits plus N_d
/// quadrature points inside each dynamic node the ray enters, merged and
/// sorted ascending in t. Sampling is confined to the slab between the near
/// plane and one plane spacing beyond the far plane, measured along the ray.
/// `planes` must come from PlaneStack::make(graph.background).
inline SampleSet assemble_samples(const Ray& ray, const SceneGraph& graph,
                                  const PlaneStack& planes, int n_d,
                                  const NodeFilter& filter = {}) {
  SampleSet set;

  // Effective t range of this ray within the sampled slab.
  const double dn = dot(ray.dir, planes.normal);
  double t_lo = ray.t_near;
  double t_hi = ray.t_far;
  if (dn > 1e-9) {
    const double on = dot(ray.origin - planes.anchor, planes.normal);
    t_lo = std::max(t_lo, (planes.depths.front() - on) / dn);
    t_hi = std::min(t_hi, (planes.depths.back() + planes.spacing() - on) / dn);
  } else if (std::isinf(t_hi)) {
    t_hi = planes.depths.back() + planes.spacing();
  }
  if (t_hi <= t_lo) {
    set.t_far = t_lo;
    return set;
  }
  set.t_far = t_hi;

  Ray clipped = ray;
  clipped.t_near = t_lo;
  clipped.t_far = t_hi;

  if (filter.background()) {
    const auto ts = plane_intersections(clipped, planes);
    set.points.reserve(ts.size());
    for (std::size_t k = 0; k < ts.size(); ++k) {
      SamplePoint p;
      p.t = ts[k];
      p.sub_index = static_cast<int>(k);
      p.x_world = ray.origin + ray.dir * p.t;
      set.points.push_back(p);
    }
  }

  std::vector<double> quad;
  for (std::size_t oi = 0; oi < graph.objects.size(); ++oi) {
    const ObjectNode& node = graph.objects[oi];
    if (!filter.object(node.track_id)) continue;
    const Vec3 s = unit_scale(node.dims);
    const Mat3 rt = node.pose.rotation.transposed();
    const Vec3 o_obj = hadamard(s, rt * (ray.origin - node.pose.translation));
    const Vec3 d_scaled = hadamard(s, rt * ray.dir);
    const auto hit = ray_aabb_unit(o_obj, d_scaled, t_lo, t_hi);
    if (!hit) continue;
    object_quadrature(hit->first, hit->second, n_d, quad);
    const Vec3 d_obj = normalized(d_scaled);
    for (int n = 0; n < n_d; ++n) {
      SamplePoint p;
      p.t = quad[n];
      p.object_index = static_cast<int>(oi);
      p.sub_index = n;
      p.track_id = node.track_id;
      p.x_world = ray.origin + ray.dir * p.t;
      p.x_obj = o_obj + d_scaled * p.t;
      p.d_obj = d_obj;
      set.points.push_back(p);
    }
  }

  std::sort(set.points.begin(), set.points.end(), [](const SamplePoint& a, const SamplePoint& b) {
    if (a.t != b.t) return a.t < b.t;
    const int ka = a.object_index < 0 ? -1 : a.track_id;
    const int kb = b.object_index < 0 ? -1 : b.track_id;
    if (ka != kb) return ka < kb;
    return a.sub_index < b.sub_index;
  });
  detail::apply_tie_break(set.points);
  return set;
}

inline SampleSet assemble_samples(const Ray& ray, const SceneGraph& graph, int n_d,
                                  const NodeFilter& filter = {}) {
  return assemble_samples(ray, graph, PlaneStack::make(graph.background), n_d, filter);
}

}  // namespace sgrf
