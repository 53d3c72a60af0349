// Copyright Contributors to the sgrf Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "sgrf/errors.hpp"
#include "sgrf/image.hpp"

namespace sgrf {

inline double mse(const ImageBuffer& a, const ImageBuffer& b) {
  if (!a.same_size(b)) throw ValidationError("mse: image size mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    sum += d * d;
  }
  return sum / static_cast<double>(a.data.size());
}

/// Peak signal-to-noise ratio over [0,1] pixels, in dB. Identical images
/// report +infinity.
inline double psnr(const ImageBuffer& a, const ImageBuffer& b) {
  const double m = mse(a, b);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / m);
}

inline double psnr_region(const ImageBuffer& a, const ImageBuffer& b, const PixelRect& r) {
  if (!a.same_size(b)) throw ValidationError("psnr_region: image size mismatch");
  if (r.empty()) throw ValidationError("psnr_region: empty region");
  double sum = 0.0;
  for (int y = r.y0; y <= r.y1; ++y)
    for (int x = r.x0; x <= r.x1; ++x) {
      const Vec3 d = a.pixel(x, y) - b.pixel(x, y);
      sum += dot(d, d);
    }
  const double m = sum / (3.0 * r.pixel_count());
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / m);
}

namespace detail {
inline std::vector<double> gaussian_kernel_11() {
  std::vector<double> k(11);
  double sum = 0.0;
  for (int i = 0; i < 11; ++i) {
    const double d = i - 5.0;
    k[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable 11x11 Gaussian filter of one channel, valid region only.
// Input is width x height, output (width-10) x (height-10).
inline void gaussian_filter_valid(const std::vector<double>& in, int w, int h,
                                  const std::vector<double>& k, std::vector<double>& tmp,
                                  std::vector<double>& out) {
  const int wv = w - 10, hv = h - 10;
  tmp.assign(static_cast<std::size_t>(wv) * h, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < wv; ++x) {
      double s = 0.0;
      for (int i = 0; i < 11; ++i) s += k[i] * in[static_cast<std::size_t>(y) * w + x + i];
      tmp[static_cast<std::size_t>(y) * wv + x] = s;
    }
  out.assign(static_cast<std::size_t>(wv) * hv, 0.0);
  for (int y = 0; y < hv; ++y)
    for (int x = 0; x < wv; ++x) {
      double s = 0.0;
      for (int i = 0; i < 11; ++i) s += k[i] * tmp[static_cast<std::size_t>(y + i) * wv + x];
      out[static_cast<std::size_t>(y) * wv + x] = s;
    }
}
}  // namespace detail

/// Structural similarity with the standard 11x11 Gaussian window (sigma 1.5)
/// and stabilizers C1 = 0.01^2, C2 = 0.03^2 on a unit dynamic range, averaged
/// over all valid window positions and the three channels.
inline double ssim(const ImageBuffer& a, const ImageBuffer& b) {
  if (!a.same_size(b)) throw ValidationError("ssim: image size mismatch");
  if (a.width < 11 || a.height < 11) throw ValidationError("ssim: image smaller than the window");
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const auto kernel = detail::gaussian_kernel_11();
  const int w = a.width, h = a.height;
  const std::size_t n = static_cast<std::size_t>(w) * h;
  std::vector<double> xa(n), xb(n), xaa(n), xbb(n), xab(n);
  std::vector<double> tmp, mu_a, mu_b, m_aa, m_bb, m_ab;
  double total = 0.0;
  for (int ch = 0; ch < 3; ++ch) {
    for (std::size_t i = 0; i < n; ++i) {
      const double va = a.data[3 * i + ch], vb = b.data[3 * i + ch];
      xa[i] = va;
      xb[i] = vb;
      xaa[i] = va * va;
      xbb[i] = vb * vb;
      xab[i] = va * vb;
    }
    detail::gaussian_filter_valid(xa, w, h, kernel, tmp, mu_a);
    detail::gaussian_filter_valid(xb, w, h, kernel, tmp, mu_b);
    detail::gaussian_filter_valid(xaa, w, h, kernel, tmp, m_aa);
    detail::gaussian_filter_valid(xbb, w, h, kernel, tmp, m_bb);
    detail::gaussian_filter_valid(xab, w, h, kernel, tmp, m_ab);
    double s = 0.0;
    // Rounds the product before use, blocking one-sided fma contraction that
    // would make the metric asymmetric in its arguments at the last bit.
    const auto product = [](double x, double y) {
      volatile double p = x * y;
      return p;
    };
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
      const double ma = mu_a[i], mb = mu_b[i];
      const double pa = product(ma, ma), pb = product(mb, mb), pab = product(ma, mb);
      const double va = m_aa[i] - pa;
      const double vb = m_bb[i] - pb;
      const double cov = m_ab[i] - pab;
      s += ((2 * pab + c1) * (2 * cov + c2)) / ((pa + pb + c1) * (va + vb + c2));
    }
    total += s / static_cast<double>(mu_a.size());
  }
  return total / 3.0;
}

}  // namespace sgrf
