// Copyright Contributors to the sgrf Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>

#include "sgrf/vec.hpp"

namespace sgrf {

/// Fourier feature mapping of low-dimensional inputs. Output layout for an
/// input v of dimension k:
///   [v (if include_input)] ++ [sin(2^j pi v), cos(2^j pi v)] for j = 0..n_freq-1,
/// each block applied component-wise, giving k * (2*n_freq + include_input)
/// features.
struct FourierEncoding {
  int n_freq = 0;
  bool include_input = true;

  int output_dim(int input_dim) const {
    return input_dim * (2 * n_freq + (include_input ? 1 : 0));
  }

  void encode(const double* v, int k, double* out) const {
    int o = 0;
    if (include_input)
      for (int c = 0; c < k; ++c) out[o++] = v[c];
    double freq = kPi;
    for (int j = 0; j < n_freq; ++j, freq *= 2.0) {
      for (int c = 0; c < k; ++c) out[o++] = std::sin(freq * v[c]);
      for (int c = 0; c < k; ++c) out[o++] = std::cos(freq * v[c]);
    }
  }

  /// Accumulates d(scalar)/dv into dv given d(scalar)/d(encoded) in dout.
  void backward(const double* v, int k, const double* dout, double* dv) const {
    int o = 0;
    if (include_input)
      for (int c = 0; c < k; ++c) dv[c] += dout[o++];
    double freq = kPi;
    for (int j = 0; j < n_freq; ++j, freq *= 2.0) {
      for (int c = 0; c < k; ++c) dv[c] += dout[o++] * freq * std::cos(freq * v[c]);
      for (int c = 0; c < k; ++c) dv[c] -= dout[o++] * freq * std::sin(freq * v[c]);
    }
  }
};

}  // namespace sgrf
