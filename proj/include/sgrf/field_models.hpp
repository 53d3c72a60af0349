// Copyright Contributors to the sgrf Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "sgrf/errors.hpp"
#include "sgrf/fourier.hpp"
#include "sgrf/mlp.hpp"
#include "sgrf/scene_graph.hpp"
#include "sgrf/vec.hpp"

namespace sgrf {

/// Radiance field sample: density in 1/meter, color in [0,1]^3.
struct FieldOutput {
  Vec3 color;
  double sigma = 0;
};

/// Per-object descriptor vectors shared across frames and jointly optimized.
struct LatentTable {
  int dim = 0;
  std::map<int, std::vector<double>> entries;  // track id -> l_o; ordered for determinism

  const std::vector<double>& at(int id) const {
    const auto it = entries.find(id);
    if (it == entries.end()) throw LookupError("latent table: no entry for id " + std::to_string(id));
    return it->second;
  }

  void insert(int id, std::vector<double> v) {
    if (static_cast<int>(v.size()) != dim)
      throw ValidationError("latent table: dimension mismatch for id " + std::to_string(id));
    entries[id] = std::move(v);
  }

  /// Mean descriptor over all entries; zero vector when empty.
  std::vector<double> mean() const {
    std::vector<double> m(dim, 0.0);
    if (entries.empty()) return m;
    for (const auto& [id, v] : entries)
      for (int i = 0; i < dim; ++i) m[i] += v[i];
    for (double& x : m) x /= static_cast<double>(entries.size());
    return m;
  }
};

/// Static-node radiance field: sigma from the encoded world position, color
/// from the encoded view direction and the stage-1 feature.
struct BackgroundModel {
  FourierEncoding pos_enc{10, true};
  FourierEncoding dir_enc{4, true};
  double pos_scale = 1.0;  // world positions are scaled by this before encoding
  Mlp mlp;
};

/// Dynamic-class radiance field: one network per object class, specialized to
/// an instance by its latent descriptor. Stage 1 sees (encoded local position,
/// latent); stage 2 sees (encoded local direction, feature, encoded world
/// position of the object) so the pose can only influence emitted color.
struct ObjectClassModel {
  FourierEncoding pos_enc{10, true};
  FourierEncoding dir_enc{4, true};
  FourierEncoding pose_enc{4, true};
  double pose_scale = 1.0;  // scaling applied to p_o before encoding
  int latent_dim = 0;
  Mlp mlp;
};

inline BackgroundModel make_background_model(const FourierEncoding& pos, const FourierEncoding& dir,
                                             double pos_scale, int depth1, int width1,
                                             std::vector<int> skips, int feature_dim, int depth2,
                                             int width2) {
  BackgroundModel m;
  m.pos_enc = pos;
  m.dir_enc = dir;
  m.pos_scale = pos_scale;
  MlpConfig cfg;
  cfg.input1_dim = pos.output_dim(3);
  cfg.depth1 = depth1;
  cfg.width1 = width1;
  cfg.skips = std::move(skips);
  cfg.feature_dim = feature_dim;
  cfg.input2_dim = dir.output_dim(3);
  cfg.depth2 = depth2;
  cfg.width2 = width2;
  m.mlp = Mlp::build(cfg);
  return m;
}

inline ObjectClassModel make_object_model(const FourierEncoding& pos, const FourierEncoding& dir,
                                          const FourierEncoding& pose, double pose_scale,
                                          int latent_dim, int depth1, int width1,
                                          std::vector<int> skips, int feature_dim, int depth2,
                                          int width2) {
  ObjectClassModel m;
  m.pos_enc = pos;
  m.dir_enc = dir;
  m.pose_enc = pose;
  m.pose_scale = pose_scale;
  m.latent_dim = latent_dim;
  MlpConfig cfg;
  cfg.input1_dim = pos.output_dim(3) + latent_dim;
  cfg.depth1 = depth1;
  cfg.width1 = width1;
  cfg.skips = std::move(skips);
  cfg.feature_dim = feature_dim;
  cfg.input2_dim = dir.output_dim(3) + pose.output_dim(3);
  cfg.depth2 = depth2;
  cfg.width2 = width2;
  m.mlp = Mlp::build(cfg);
  return m;
}

/// Per-sample evaluation workspace: encoded inputs, raw inputs for the
/// encoding backward, and the network trace.
struct FieldEvalTrace {
  std::vector<double> enc1, enc2;
  double pos_in[3] = {0, 0, 0};   // scaled position fed to pos_enc
  double dir_in[3] = {0, 0, 0};
  double pose_in[3] = {0, 0, 0};  // scaled p_o fed to pose_enc
  MlpTrace mlp;
  // backward scratch for encoded-input gradients
  std::vector<double> denc1, denc2;
};

inline FieldOutput background_forward(const BackgroundModel& m, const Vec3& x, const Vec3& d,
                                      FieldEvalTrace& tr) {
  if (!is_finite(x) || !is_finite(d)) throw EvalError("background_forward: non-finite input");
  const int pdim = m.pos_enc.output_dim(3);
  const int ddim = m.dir_enc.output_dim(3);
  tr.enc1.resize(pdim);
  tr.enc2.resize(ddim);
  tr.pos_in[0] = x.x * m.pos_scale;
  tr.pos_in[1] = x.y * m.pos_scale;
  tr.pos_in[2] = x.z * m.pos_scale;
  tr.dir_in[0] = d.x;
  tr.dir_in[1] = d.y;
  tr.dir_in[2] = d.z;
  m.pos_enc.encode(tr.pos_in, 3, tr.enc1.data());
  m.dir_enc.encode(tr.dir_in, 3, tr.enc2.data());
  mlp_forward(m.mlp, tr.enc1.data(), tr.enc2.data(), tr.mlp);
  return {{tr.mlp.rgb[0], tr.mlp.rgb[1], tr.mlp.rgb[2]}, tr.mlp.sigma};
}

/// Backward for a recorded background evaluation. Parameter gradients go to
/// grad (layout of m.mlp.params); dx/dd receive world-input gradients when
/// non-null. The density path contributes exactly zero to dd.
inline void background_backward(const BackgroundModel& m, FieldEvalTrace& tr, double dsigma,
                                const Vec3& dcolor, double* grad, Vec3* dx, Vec3* dd) {
  const double drgb[3] = {dcolor.x, dcolor.y, dcolor.z};
  if (!dx && !dd) {
    mlp_backward(m.mlp, tr.mlp, dsigma, drgb, grad, nullptr, nullptr);
    return;
  }
  tr.denc1.assign(tr.enc1.size(), 0.0);
  tr.denc2.assign(tr.enc2.size(), 0.0);
  mlp_backward(m.mlp, tr.mlp, dsigma, drgb, grad, dx ? tr.denc1.data() : nullptr,
               dd ? tr.denc2.data() : nullptr);
  if (dx) {
    double dv[3] = {0, 0, 0};
    m.pos_enc.backward(tr.pos_in, 3, tr.denc1.data(), dv);
    dx->x += dv[0] * m.pos_scale;
    dx->y += dv[1] * m.pos_scale;
    dx->z += dv[2] * m.pos_scale;
  }
  if (dd) {
    double dv[3] = {0, 0, 0};
    m.dir_enc.backward(tr.dir_in, 3, tr.denc2.data(), dv);
    dd->x += dv[0];
    dd->y += dv[1];
    dd->z += dv[2];
  }
}

inline FieldOutput object_forward(const ObjectClassModel& m, const std::vector<double>& latent,
                                  const Vec3& x_o, const Vec3& d_o, const Vec3& p_o,
                                  FieldEvalTrace& tr) {
  if (static_cast<int>(latent.size()) != m.latent_dim)
    throw ValidationError("object_forward: latent dimension mismatch");
  if (!is_finite(x_o) || !is_finite(d_o) || !is_finite(p_o))
    throw EvalError("object_forward: non-finite input");
  assert(max_abs_component(x_o) <= 1.0 + 1e-6);
  const int pdim = m.pos_enc.output_dim(3);
  const int ddim = m.dir_enc.output_dim(3);
  const int odim = m.pose_enc.output_dim(3);
  tr.enc1.resize(pdim + m.latent_dim);
  tr.enc2.resize(ddim + odim);
  tr.pos_in[0] = x_o.x;
  tr.pos_in[1] = x_o.y;
  tr.pos_in[2] = x_o.z;
  tr.dir_in[0] = d_o.x;
  tr.dir_in[1] = d_o.y;
  tr.dir_in[2] = d_o.z;
  tr.pose_in[0] = p_o.x * m.pose_scale;
  tr.pose_in[1] = p_o.y * m.pose_scale;
  tr.pose_in[2] = p_o.z * m.pose_scale;
  m.pos_enc.encode(tr.pos_in, 3, tr.enc1.data());
  std::copy(latent.begin(), latent.end(), tr.enc1.begin() + pdim);
  m.dir_enc.encode(tr.dir_in, 3, tr.enc2.data());
  m.pose_enc.encode(tr.pose_in, 3, tr.enc2.data() + ddim);
  mlp_forward(m.mlp, tr.enc1.data(), tr.enc2.data(), tr.mlp);
  return {{tr.mlp.rgb[0], tr.mlp.rgb[1], tr.mlp.rgb[2]}, tr.mlp.sigma};
}

/// Input gradients of one object-field evaluation in object/world coordinates.
struct ObjectInputGrads {
  Vec3 dx_o, dd_o, dp_o;
};

/// Backward for a recorded object evaluation. dlatent (length latent_dim) and
/// the optional input gradients accumulate; parameter gradients go to grad.
/// The density path contributes exactly zero to dd_o and dp_o.
inline void object_backward(const ObjectClassModel& m, FieldEvalTrace& tr, double dsigma,
                            const Vec3& dcolor, double* grad, double* dlatent,
                            ObjectInputGrads* ig) {
  const double drgb[3] = {dcolor.x, dcolor.y, dcolor.z};
  const int pdim = m.pos_enc.output_dim(3);
  const int ddim = m.dir_enc.output_dim(3);
  const bool need1 = dlatent != nullptr || ig != nullptr;
  if (need1) tr.denc1.assign(tr.enc1.size(), 0.0);
  if (ig) tr.denc2.assign(tr.enc2.size(), 0.0);
  mlp_backward(m.mlp, tr.mlp, dsigma, drgb, grad, need1 ? tr.denc1.data() : nullptr,
               ig ? tr.denc2.data() : nullptr);
  if (dlatent)
    for (int i = 0; i < m.latent_dim; ++i) dlatent[i] += tr.denc1[pdim + i];
  if (ig) {
    double dv[3] = {0, 0, 0};
    m.pos_enc.backward(tr.pos_in, 3, tr.denc1.data(), dv);
    ig->dx_o += Vec3{dv[0], dv[1], dv[2]};
    double dw[3] = {0, 0, 0};
    m.dir_enc.backward(tr.dir_in, 3, tr.denc2.data(), dw);
    ig->dd_o += Vec3{dw[0], dw[1], dw[2]};
    double dp[3] = {0, 0, 0};
    m.pose_enc.backward(tr.pose_in, 3, tr.denc2.data() + ddim, dp);
    ig->dp_o += Vec3{dp[0], dp[1], dp[2]} * m.pose_scale;
  }
}

}  // namespace sgrf
