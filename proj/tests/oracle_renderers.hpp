// Copyright Contributors to the sgrf Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "sgrf/vec.hpp"

namespace sgrf::testutil {

/// Standalone transcription of the plain background quadrature (no scene
/// graph): C = sum_i T_i alpha_i c_i with T_i = exp(-sum_{k<i} sigma_k d_k),
/// alpha_i = 1 - exp(-sigma_i d_i), d_i = t_{i+1} - t_i and d_N = t_far - t_N,
/// plus the residual-transmittance background term. Kept independent of the
/// library implementation.
inline Vec3 composite_reference(const std::vector<double>& t, const std::vector<double>& sigma,
                                const std::vector<Vec3>& color, double t_far, const Vec3& bg) {
  Vec3 c{0, 0, 0};
  double optical_depth = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double next = i + 1 < t.size() ? t[i + 1] : t_far;
    const double delta = std::max(0.0, next - t[i]);
    const double transmittance = std::exp(-optical_depth);
    const double alpha = 1.0 - std::exp(-sigma[i] * delta);
    c += color[i] * (transmittance * alpha);
    optical_depth += sigma[i] * delta;
  }
  c += bg * std::exp(-optical_depth);
  return c;
}

/// Marching oracle for the unit-cube intersection: walks n_steps equally
/// spaced probes of the inside/outside predicate over [t_lo, t_hi], then
/// bisects each detected transition to tol. Returns the first/last covered
/// interval or nothing when no probe lands inside.
inline std::optional<std::pair<double, double>> march_unit_box(const Vec3& o, const Vec3& d,
                                                               double t_lo, double t_hi,
                                                               int n_steps = 100000,
                                                               double tol = 1e-9) {
  const auto inside = [&](double t) {
    for (int a = 0; a < 3; ++a) {
      const double x = o[a] + t * d[a];
      if (x < -1.0 || x > 1.0) return false;
    }
    return true;
  };
  const double step = (t_hi - t_lo) / n_steps;
  int first = -1, last = -1;
  for (int i = 0; i <= n_steps; ++i) {
    if (inside(t_lo + i * step)) {
      if (first < 0) first = i;
      last = i;
    }
  }
  if (first < 0) return std::nullopt;

  auto bisect = [&](double t_out, double t_in) {
    // invariant: inside(t_in), !inside(t_out)
    while (std::abs(t_in - t_out) > tol) {
      const double mid = 0.5 * (t_in + t_out);
      (inside(mid) ? t_in : t_out) = mid;
    }
    return t_in;
  };
  double entry = t_lo + first * step;
  if (first > 0) entry = bisect(t_lo + (first - 1) * step, entry);
  double exit = t_lo + last * step;
  if (last < n_steps) exit = bisect(t_lo + (last + 1) * step, exit);
  return std::make_pair(entry, exit);
}

}  // namespace sgrf::testutil
