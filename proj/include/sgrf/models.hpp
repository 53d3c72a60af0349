// Copyright Contributors to the sgrf Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sgrf/field_models.hpp"
#include "sgrf/scene_graph.hpp"

namespace sgrf {

/// Network and encoding hyper-parameters shared by the background and class
/// models. Desk-scale defaults; the full-scale preset is depth1 8 / width 256
/// with skip {4}, stage-2 width 128.
struct ModelArchitecture {
  int depth1 = 4;
  int width1 = 64;
  std::vector<int> skips = {2};
  int feature_dim = 64;
  int depth2 = 1;
  int width2 = 32;
  int pos_freqs = 10;
  int dir_freqs = 4;
  int pose_freqs = 4;
  bool include_input = true;
  int latent_dim = 256;

  bool operator==(const ModelArchitecture&) const = default;
};

/// Everything a trained scene needs to render: the background network, one
/// network per object class, the latent table, and the sampling geometry the
/// networks were trained with.
struct SceneModels {
  ModelArchitecture arch;
  BackgroundModel background;
  std::map<std::string, ObjectClassModel> classes;
  LatentTable latents;
  double near = 0, far = 0;
  int n_planes = 6;
  int n_obj_samples = 7;
  RigidTransform reference_pose;  // plane-stack anchor (initial camera pose)
  std::uint64_t config_hash = 0;

  const ObjectClassModel& class_model(const std::string& id) const {
    const auto it = classes.find(id);
    if (it == classes.end()) throw LookupError("no model for class '" + id + "'");
    return it->second;
  }

  bool params_finite() const {
    if (!background.mlp.params_finite()) return false;
    for (const auto& [id, m] : classes)
      if (!m.mlp.params_finite()) return false;
    for (const auto& [id, l] : latents.entries)
      for (double v : l)
        if (!std::isfinite(v)) return false;
    return true;
  }
};

/// Deterministic initialization: background first, then classes in name order,
/// then latents in ascending id order, all from one seeded stream. Latents are
/// drawn from N(0, 0.01^2) to sit inside the zero-mean prior.
inline SceneModels build_models(const ModelArchitecture& arch,
                                const std::vector<std::string>& class_ids,
                                const std::vector<int>& latent_ids, double near, double far,
                                int n_planes, int n_obj_samples,
                                const RigidTransform& reference_pose, std::uint64_t seed) {
  SceneModels m;
  m.arch = arch;
  m.near = near;
  m.far = far;
  m.n_planes = n_planes;
  m.n_obj_samples = n_obj_samples;
  m.reference_pose = reference_pose;

  const FourierEncoding pos{arch.pos_freqs, arch.include_input};
  const FourierEncoding dir{arch.dir_freqs, arch.include_input};
  const FourierEncoding pose{arch.pose_freqs, arch.include_input};
  const double pos_scale = 1.0 / far;  // keeps encoded world coordinates near [-1, 1]

  Rng rng(seed);
  m.background = make_background_model(pos, dir, pos_scale, arch.depth1, arch.width1, arch.skips,
                                       arch.feature_dim, arch.depth2, arch.width2);
  m.background.mlp.init_weights(rng);

  std::vector<std::string> sorted_classes = class_ids;
  std::sort(sorted_classes.begin(), sorted_classes.end());
  for (const auto& id : sorted_classes) {
    ObjectClassModel cm =
        make_object_model(pos, dir, pose, pos_scale, arch.latent_dim, arch.depth1, arch.width1,
                          arch.skips, arch.feature_dim, arch.depth2, arch.width2);
    cm.mlp.init_weights(rng);
    m.classes.emplace(id, std::move(cm));
  }

  m.latents.dim = arch.latent_dim;
  std::vector<int> sorted_ids = latent_ids;
  std::sort(sorted_ids.begin(), sorted_ids.end());
  for (int id : sorted_ids) {
    std::vector<double> l(arch.latent_dim);
    for (double& v : l) v = 0.01 * rng.normal();
    m.latents.insert(id, std::move(l));
  }
  return m;
}

}  // namespace sgrf
