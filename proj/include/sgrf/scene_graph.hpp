// Copyright Contributors to the sgrf Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "sgrf/errors.hpp"
#include "sgrf/vec.hpp"

namespace sgrf {

/// Pinhole camera intrinsics. Pixel (i, j) indexes column i, row j; the pixel
/// center sits at (i + 0.5, j + 0.5) in continuous image coordinates.
struct Intrinsics {
  double fx = 0, fy = 0;
  double cx = 0, cy = 0;
  int width = 0, height = 0;

  void validate() const {
    if (!(fx > 0) || !(fy > 0)) throw ValidationError("intrinsics: focal lengths must be positive");
    if (!(cx > 0 && cx < width) || !(cy > 0 && cy < height))
      throw ValidationError("intrinsics: principal point outside image");
  }
};

/// Rigid pose: x_world = R * x_local + t.
struct RigidTransform {
  Mat3 rotation;
  Vec3 translation;

  static RigidTransform identity() { return {}; }

  static RigidTransform from_yaw(double rad, const Vec3& t) { return {rotation_y(rad), t}; }

  /// Yaw about +y, then pitch about +x, then roll about +z (applied in local
  /// frame order roll, pitch, yaw).
  static RigidTransform from_euler(double yaw, double pitch, double roll, const Vec3& t) {
    return {rotation_y(yaw) * rotation_x(pitch) * rotation_z(roll), t};
  }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  Vec3 apply_dir(const Vec3& d) const { return rotation * d; }

  RigidTransform inverse() const {
    const Mat3 rt = rotation.transposed();
    return {rt, -(rt * translation)};
  }

  /// Composition: (a * b).apply(x) == a.apply(b.apply(x)).
  RigidTransform operator*(const RigidTransform& o) const {
    return {rotation * o.rotation, rotation * o.translation + translation};
  }

  /// Orthonormality and unit determinant within tol.
  bool is_rigid(double tol = 1e-9) const {
    const Mat3 rtr = rotation.transposed() * rotation;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) {
        const double expect = r == c ? 1.0 : 0.0;
        if (std::abs(rtr(r, c) - expect) > tol) return false;
      }
    return std::abs(rotation.det() - 1.0) <= tol && is_finite(rotation) && is_finite(translation);
  }

  void validate() const {
    if (!is_rigid()) throw ValidationError("pose: rotation is not a proper orthonormal matrix");
  }

  bool operator==(const RigidTransform&) const = default;
};

/// Box extents in meters: length along local x, height along y, width along z.
struct BoxDims {
  double length = 0, height = 0, width = 0;

  void validate() const {
    if (!(length > 0) || !(height > 0) || !(width > 0))
      throw ValidationError("box dims must be strictly positive");
  }

  bool valid() const { return length > 0 && height > 0 && width > 0; }

  bool operator==(const BoxDims&) const = default;
};

/// Diagonal of the box-to-unit-cube scaling: corners of the box map to ±1.
inline Vec3 unit_scale(const BoxDims& dims) {
  return {2.0 / dims.length, 2.0 / dims.height, 2.0 / dims.width};
}

/// World point -> object frame, scaled so points inside the box land in [-1,1]^3.
inline Vec3 world_to_object(const RigidTransform& pose, const BoxDims& dims, const Vec3& x) {
  const Vec3 local = pose.rotation.transposed() * (x - pose.translation);
  return hadamard(unit_scale(dims), local);
}

/// Exact inverse of world_to_object.
inline Vec3 object_to_world(const RigidTransform& pose, const BoxDims& dims, const Vec3& x_o) {
  const Vec3 s = unit_scale(dims);
  const Vec3 local{x_o.x / s.x, x_o.y / s.y, x_o.z / s.z};
  return pose.rotation * local + pose.translation;
}

/// World direction -> object frame: rotate by the inverse rotation, scale
/// component-wise with the box scaling, renormalize to unit length.
inline Vec3 direction_to_object(const RigidTransform& pose, const BoxDims& dims, const Vec3& d) {
  const Vec3 rotated = pose.rotation.transposed() * d;
  return normalized(hadamard(unit_scale(dims), rotated));
}

/// One tracked rigid object in a frame.
struct ObjectNode {
  int track_id = -1;
  std::string class_id;
  RigidTransform pose;  // object -> world
  BoxDims dims;
  int latent_ref = -1;  // key into the latent table; defaults to track_id

  Vec3 position() const { return pose.translation; }

  void validate() const {
    pose.validate();
    dims.validate();
    if (latent_ref < 0) throw ValidationError("object node: unresolved latent reference");
  }
};

/// The static node. Samples are restricted to n_planes planes parallel to the
/// image plane of reference_pose, equispaced between the near and far clips.
struct BackgroundNode {
  double near = 0, far = 0;
  int n_planes = 0;
  RigidTransform reference_pose;

  void validate() const {
    if (!(near > 0 && near < far)) throw ValidationError("background: require 0 < near < far");
    if (n_planes < 2) throw ValidationError("background: require at least 2 planes");
    reference_pose.validate();
  }
};

/// Per-frame scene description: one camera, one background node, and the
/// dynamic object nodes visible in the frame. Values are immutable after
/// construction; edits produce copies.
struct SceneGraph {
  Intrinsics intrinsics;
  RigidTransform camera_pose;  // camera -> world
  BackgroundNode background;
  std::vector<ObjectNode> objects;
  int frame_id = 0;

  void validate() const {
    intrinsics.validate();
    camera_pose.validate();
    background.validate();
    std::set<int> ids;
    for (const auto& o : objects) {
      o.validate();
      if (!ids.insert(o.track_id).second)
        throw ValidationError("scene graph: duplicate track id " + std::to_string(o.track_id));
    }
  }

  const ObjectNode* find_object(int track_id) const {
    for (const auto& o : objects)
      if (o.track_id == track_id) return &o;
    return nullptr;
  }
};

// Graph edits. Each produces a new validated graph; the input is untouched.
struct RemoveNode {
  int track_id;
};
struct SetPose {
  int track_id;
  RigidTransform pose;
};
struct AddNode {
  ObjectNode node;
};
struct SetCameraPose {
  RigidTransform pose;
};
using GraphEdit = std::variant<RemoveNode, SetPose, AddNode, SetCameraPose>;

inline SceneGraph edit_graph(const SceneGraph& graph, const GraphEdit& edit) {
  SceneGraph out = graph;
  if (const auto* rm = std::get_if<RemoveNode>(&edit)) {
    const auto it = std::find_if(out.objects.begin(), out.objects.end(),
                                 [&](const ObjectNode& o) { return o.track_id == rm->track_id; });
    if (it == out.objects.end())
      throw LookupError("edit: unknown track id " + std::to_string(rm->track_id));
    out.objects.erase(it);
  } else if (const auto* sp = std::get_if<SetPose>(&edit)) {
    const auto it = std::find_if(out.objects.begin(), out.objects.end(),
                                 [&](const ObjectNode& o) { return o.track_id == sp->track_id; });
    if (it == out.objects.end())
      throw LookupError("edit: unknown track id " + std::to_string(sp->track_id));
    it->pose = sp->pose;
  } else if (const auto* ad = std::get_if<AddNode>(&edit)) {
    if (graph.find_object(ad->node.track_id))
      throw ValidationError("edit: duplicate track id " + std::to_string(ad->node.track_id));
    out.objects.push_back(ad->node);
  } else if (const auto* sc = std::get_if<SetCameraPose>(&edit)) {
    out.camera_pose = sc->pose;
  }
  out.validate();
  return out;
}

}  // namespace sgrf
