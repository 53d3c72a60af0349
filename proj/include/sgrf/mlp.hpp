// Copyright Contributors to the sgrf Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <vector>

#include "sgrf/errors.hpp"
#include "sgrf/rng.hpp"

namespace sgrf {

// Dense kernels. Four independent accumulators per output row give the
// compiler an explicitly reassociated (and therefore deterministic) reduction
// it can vectorize without -ffast-math.

/// y = W x + b, W row-major [out x in].
inline void linear_forward(const double* W, const double* b, const double* x, int in, int out,
                           double* y) {
  constexpr int kLanes = 8;
  for (int r = 0; r < out; ++r) {
    const double* w = W + static_cast<std::size_t>(r) * in;
    double acc[kLanes] = {0, 0, 0, 0, 0, 0, 0, 0};
    int c = 0;
    for (; c + kLanes <= in; c += kLanes)
      for (int k = 0; k < kLanes; ++k) acc[k] += w[c + k] * x[c + k];
    double tail = 0;
    for (; c < in; ++c) tail += w[c] * x[c];
    const double head = ((acc[0] + acc[1]) + (acc[2] + acc[3])) +
                        ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    y[r] = (head + tail) + b[r];
  }
}

/// Backward of y = W x + b given dy: accumulates dW += dy x^T, db += dy and,
/// when dx is non-null, dx += W^T dy.
inline void linear_backward(const double* W, const double* x, const double* dy, int in, int out,
                            double* dW, double* db, double* dx) {
  for (int r = 0; r < out; ++r) {
    const double g = dy[r];
    db[r] += g;
    double* dw = dW + static_cast<std::size_t>(r) * in;
    for (int c = 0; c < in; ++c) dw[c] += g * x[c];
  }
  if (dx) {
    for (int r = 0; r < out; ++r) {
      const double g = dy[r];
      const double* w = W + static_cast<std::size_t>(r) * in;
      for (int c = 0; c < in; ++c) dx[c] += g * w[c];
    }
  }
}

inline double softplus(double z) {
  // log(1 + e^z), stable for large |z|.
  return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

inline double logistic(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct LinearLayer {
  int in = 0, out = 0;
  std::size_t w = 0, b = 0;  // offsets into the flat parameter vector
};

/// Two-stage radiance network. Stage 1 maps the encoded position (plus an
/// optional latent block) through a relu trunk with skip re-concatenations to
/// a density (softplus) and a linear feature vector. Stage 2 maps the encoded
/// view inputs concatenated with the feature through a relu trunk to RGB
/// (logistic). The density never sees stage-2 inputs.
struct MlpConfig {
  int input1_dim = 0;  // encoded position [+ latent]
  int depth1 = 4;
  int width1 = 64;
  std::vector<int> skips = {2};  // trunk layers whose input re-concatenates input1
  int feature_dim = 64;
  int input2_dim = 0;  // encoded direction [+ encoded pose]
  int depth2 = 1;
  int width2 = 32;

  bool operator==(const MlpConfig&) const = default;
};

struct Mlp {
  MlpConfig cfg;
  std::vector<LinearLayer> trunk1;
  LinearLayer sigma_head;    // width1 -> 1
  LinearLayer feature_head;  // width1 -> feature_dim
  std::vector<LinearLayer> trunk2;
  LinearLayer rgb_head;  // width2 -> 3
  std::vector<double> params;

  bool is_skip(int layer) const {
    return layer > 0 && std::find(cfg.skips.begin(), cfg.skips.end(), layer) != cfg.skips.end();
  }

  static Mlp build(const MlpConfig& cfg) {
    assert(cfg.input1_dim > 0 && cfg.depth1 >= 1 && cfg.width1 >= 1);
    assert(cfg.depth2 >= 1 && cfg.width2 >= 1 && cfg.feature_dim >= 1);
    Mlp m;
    m.cfg = cfg;
    std::size_t off = 0;
    auto add = [&off](int in, int out) {
      LinearLayer l{in, out, off, off + static_cast<std::size_t>(in) * out};
      off = l.b + out;
      return l;
    };
    for (int i = 0; i < cfg.depth1; ++i) {
      const int in = i == 0 ? cfg.input1_dim
                            : (m.is_skip(i) ? cfg.width1 + cfg.input1_dim : cfg.width1);
      m.trunk1.push_back(add(in, cfg.width1));
    }
    m.sigma_head = add(cfg.width1, 1);
    m.feature_head = add(cfg.width1, cfg.feature_dim);
    for (int i = 0; i < cfg.depth2; ++i) {
      const int in = i == 0 ? cfg.input2_dim + cfg.feature_dim : cfg.width2;
      m.trunk2.push_back(add(in, cfg.width2));
    }
    m.rgb_head = add(cfg.width2, 3);
    m.params.assign(off, 0.0);
    return m;
  }

  std::size_t param_count() const { return params.size(); }

  /// Glorot-uniform weights, zero biases.
  void init_weights(Rng& rng) {
    auto init = [&](const LinearLayer& l) {
      const double bound = std::sqrt(6.0 / (l.in + l.out));
      for (std::size_t i = 0; i < static_cast<std::size_t>(l.in) * l.out; ++i)
        params[l.w + i] = rng.uniform(-bound, bound);
      for (int i = 0; i < l.out; ++i) params[l.b + i] = 0.0;
    };
    for (const auto& l : trunk1) init(l);
    init(sigma_head);
    init(feature_head);
    for (const auto& l : trunk2) init(l);
    init(rgb_head);
  }

  bool params_finite() const {
    return std::all_of(params.begin(), params.end(), [](double v) { return std::isfinite(v); });
  }
};

/// Recorded forward evaluation of one sample plus backward scratch. Buffers
/// are sized on first use and reused; one workspace serves one network shape.
struct MlpTrace {
  // forward record
  std::vector<double> input1;
  std::vector<std::vector<double>> x1;  // input to each trunk1 layer
  std::vector<std::vector<double>> z1;  // pre-activations
  std::vector<double> h1_out;           // relu of final trunk1 pre-activation
  double sigma_raw = 0;
  std::vector<double> feature;
  std::vector<std::vector<double>> xin2;
  std::vector<std::vector<double>> z2;
  std::vector<double> h2_out;
  double rgb_raw[3] = {0, 0, 0};
  double sigma = 0;
  double rgb[3] = {0, 0, 0};
  // backward scratch
  std::vector<double> dh1, dz1, dh2, dz2, dxl, dx2, dfeat;

  void prepare(const Mlp& m) {
    if (input1.size() == static_cast<std::size_t>(m.cfg.input1_dim) &&
        x1.size() == m.trunk1.size() && xin2.size() == m.trunk2.size())
      return;
    input1.resize(m.cfg.input1_dim);
    x1.resize(m.trunk1.size());
    z1.resize(m.trunk1.size());
    std::size_t max_in = 0;
    for (std::size_t i = 0; i < m.trunk1.size(); ++i) {
      x1[i].resize(m.trunk1[i].in);
      z1[i].resize(m.trunk1[i].out);
      max_in = std::max(max_in, static_cast<std::size_t>(m.trunk1[i].in));
    }
    h1_out.resize(m.cfg.width1);
    feature.resize(m.cfg.feature_dim);
    xin2.resize(m.trunk2.size());
    z2.resize(m.trunk2.size());
    for (std::size_t i = 0; i < m.trunk2.size(); ++i) {
      xin2[i].resize(m.trunk2[i].in);
      z2[i].resize(m.trunk2[i].out);
      max_in = std::max(max_in, static_cast<std::size_t>(m.trunk2[i].in));
    }
    h2_out.resize(m.cfg.width2);
    dh1.resize(m.cfg.width1);
    dz1.resize(m.cfg.width1);
    dh2.resize(m.cfg.width2);
    dz2.resize(m.cfg.width2);
    dxl.resize(max_in);
    dx2.resize(m.cfg.input2_dim + m.cfg.feature_dim);
    dfeat.resize(m.cfg.feature_dim);
  }
};

namespace detail {
inline void relu_into(const std::vector<double>& z, double* h) {
  for (std::size_t i = 0; i < z.size(); ++i) h[i] = z[i] > 0 ? z[i] : 0.0;
}
}  // namespace detail

/// Forward pass. input1 must hold cfg.input1_dim values, input2 cfg.input2_dim.
/// Outputs land in tr.sigma / tr.rgb; the recorded state feeds mlp_backward.
inline void mlp_forward(const Mlp& m, const double* input1, const double* input2, MlpTrace& tr) {
  tr.prepare(m);
  const double* p = m.params.data();
  std::copy(input1, input1 + m.cfg.input1_dim, tr.input1.begin());

  const std::vector<double>* prev_z = nullptr;
  for (std::size_t i = 0; i < m.trunk1.size(); ++i) {
    const auto& l = m.trunk1[i];
    double* x = tr.x1[i].data();
    if (i == 0) {
      std::copy(tr.input1.begin(), tr.input1.end(), x);
    } else {
      detail::relu_into(*prev_z, x);
      if (m.is_skip(static_cast<int>(i)))
        std::copy(tr.input1.begin(), tr.input1.end(), x + m.cfg.width1);
    }
    linear_forward(p + l.w, p + l.b, x, l.in, l.out, tr.z1[i].data());
    prev_z = &tr.z1[i];
  }
  detail::relu_into(*prev_z, tr.h1_out.data());

  linear_forward(p + m.sigma_head.w, p + m.sigma_head.b, tr.h1_out.data(), m.sigma_head.in, 1,
                 &tr.sigma_raw);
  tr.sigma = softplus(tr.sigma_raw);
  linear_forward(p + m.feature_head.w, p + m.feature_head.b, tr.h1_out.data(), m.feature_head.in,
                 m.feature_head.out, tr.feature.data());

  prev_z = nullptr;
  for (std::size_t i = 0; i < m.trunk2.size(); ++i) {
    const auto& l = m.trunk2[i];
    double* x = tr.xin2[i].data();
    if (i == 0) {
      std::copy(input2, input2 + m.cfg.input2_dim, x);
      std::copy(tr.feature.begin(), tr.feature.end(), x + m.cfg.input2_dim);
    } else {
      detail::relu_into(*prev_z, x);
    }
    linear_forward(p + l.w, p + l.b, x, l.in, l.out, tr.z2[i].data());
    prev_z = &tr.z2[i];
  }
  detail::relu_into(*prev_z, tr.h2_out.data());
  linear_forward(p + m.rgb_head.w, p + m.rgb_head.b, tr.h2_out.data(), m.rgb_head.in, 3,
                 tr.rgb_raw);
  for (int c = 0; c < 3; ++c) tr.rgb[c] = logistic(tr.rgb_raw[c]);

  if (!std::isfinite(tr.sigma) || !std::isfinite(tr.rgb[0]) || !std::isfinite(tr.rgb[1]) ||
      !std::isfinite(tr.rgb[2]))
    throw EvalError("mlp: non-finite output (bad parameters or inputs)");
}

/// Reverse pass from seeds (dsigma, drgb). Parameter gradients accumulate into
/// grad (same layout as params). When dinput1/dinput2 are non-null, input
/// gradients accumulate there. dinput2 receives exactly zero contribution from
/// the density path: sigma is read off before stage 2.
inline void mlp_backward(const Mlp& m, MlpTrace& tr, double dsigma, const double* drgb,
                         double* grad, double* dinput1, double* dinput2) {
  const double* p = m.params.data();

  double drgb_raw[3];
  for (int c = 0; c < 3; ++c) {
    const double s = logistic(tr.rgb_raw[c]);
    drgb_raw[c] = drgb[c] * s * (1.0 - s);
  }
  std::fill(tr.dh2.begin(), tr.dh2.end(), 0.0);
  linear_backward(p + m.rgb_head.w, tr.h2_out.data(), drgb_raw, m.rgb_head.in, 3,
                  grad + m.rgb_head.w, grad + m.rgb_head.b, tr.dh2.data());

  for (int i = static_cast<int>(m.trunk2.size()) - 1; i >= 0; --i) {
    const auto& l = m.trunk2[i];
    const auto& z = tr.z2[i];
    for (int r = 0; r < l.out; ++r) tr.dz2[r] = z[r] > 0 ? tr.dh2[r] : 0.0;
    double* dxl = i == 0 ? tr.dx2.data() : tr.dxl.data();
    std::fill(dxl, dxl + l.in, 0.0);
    linear_backward(p + l.w, tr.xin2[i].data(), tr.dz2.data(), l.in, l.out, grad + l.w,
                    grad + l.b, dxl);
    if (i > 0) std::copy(dxl, dxl + m.cfg.width2, tr.dh2.begin());
  }
  if (dinput2)
    for (int c = 0; c < m.cfg.input2_dim; ++c) dinput2[c] += tr.dx2[c];

  // Heads into the stage-1 trunk output.
  std::fill(tr.dh1.begin(), tr.dh1.end(), 0.0);
  const double dsig_raw = dsigma * logistic(tr.sigma_raw);
  linear_backward(p + m.sigma_head.w, tr.h1_out.data(), &dsig_raw, m.sigma_head.in, 1,
                  grad + m.sigma_head.w, grad + m.sigma_head.b, tr.dh1.data());
  for (int c = 0; c < m.cfg.feature_dim; ++c) tr.dfeat[c] = tr.dx2[m.cfg.input2_dim + c];
  linear_backward(p + m.feature_head.w, tr.h1_out.data(), tr.dfeat.data(), m.feature_head.in,
                  m.feature_head.out, grad + m.feature_head.w, grad + m.feature_head.b,
                  tr.dh1.data());

  for (int i = static_cast<int>(m.trunk1.size()) - 1; i >= 0; --i) {
    const auto& l = m.trunk1[i];
    const auto& z = tr.z1[i];
    for (int r = 0; r < l.out; ++r) tr.dz1[r] = z[r] > 0 ? tr.dh1[r] : 0.0;
    double* dxl = tr.dxl.data();
    std::fill(dxl, dxl + l.in, 0.0);
    linear_backward(p + l.w, tr.x1[i].data(), tr.dz1.data(), l.in, l.out, grad + l.w, grad + l.b,
                    dxl);
    if (i == 0) {
      if (dinput1)
        for (int c = 0; c < m.cfg.input1_dim; ++c) dinput1[c] += dxl[c];
    } else if (m.is_skip(i)) {
      std::copy(dxl, dxl + m.cfg.width1, tr.dh1.begin());
      if (dinput1)
        for (int c = 0; c < m.cfg.input1_dim; ++c) dinput1[c] += dxl[m.cfg.width1 + c];
    } else {
      std::copy(dxl, dxl + m.cfg.width1, tr.dh1.begin());
    }
  }
}

}  // namespace sgrf
