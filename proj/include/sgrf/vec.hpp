// Copyright Contributors to the sgrf Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdlib>

namespace sgrf {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  double& operator[](int i) { return (&x)[i]; }
  double operator[](int i) const { return (&x)[i]; }

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator-() const { return {-x, -y, -z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  Vec3& operator-=(const Vec3& o) {
    x -= o.x;
    y -= o.y;
    z -= o.z;
    return *this;
  }
  Vec3& operator*=(double s) {
    x *= s;
    y *= s;
    z *= s;
    return *this;
  }
  bool operator==(const Vec3& o) const { return x == o.x && y == o.y && z == o.z; }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

/// Component-wise product.
inline Vec3 hadamard(const Vec3& a, const Vec3& b) { return {a.x * b.x, a.y * b.y, a.z * b.z}; }

inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }

inline Vec3 normalized(const Vec3& v) { return v / norm(v); }

inline bool is_finite(const Vec3& v) {
  return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z);
}

inline double max_abs_component(const Vec3& v) {
  return std::max(std::abs(v.x), std::max(std::abs(v.y), std::abs(v.z)));
}

/// Row-major 3x3 matrix.
struct Mat3 {
  double m[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};

  double& operator()(int r, int c) { return m[3 * r + c]; }
  double operator()(int r, int c) const { return m[3 * r + c]; }

  static Mat3 identity() { return Mat3{}; }

  Mat3 transposed() const {
    Mat3 t;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) t(r, c) = (*this)(c, r);
    return t;
  }

  double det() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
  }

  Vec3 row(int r) const { return {m[3 * r], m[3 * r + 1], m[3 * r + 2]}; }
  Vec3 col(int c) const { return {m[c], m[3 + c], m[6 + c]}; }

  Vec3 operator*(const Vec3& v) const {
    return {dot(row(0), v), dot(row(1), v), dot(row(2), v)};
  }

  Mat3 operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        r(i, j) = (*this)(i, 0) * o(0, j) + (*this)(i, 1) * o(1, j) + (*this)(i, 2) * o(2, j);
    return r;
  }

  bool operator==(const Mat3& o) const {
    for (int i = 0; i < 9; ++i)
      if (m[i] != o.m[i]) return false;
    return true;
  }
};

/// Rotation about +y (yaw), right-handed: maps +x toward -z for positive angles.
inline Mat3 rotation_y(double rad) {
  const double c = std::cos(rad), s = std::sin(rad);
  Mat3 r;
  r(0, 0) = c;
  r(0, 1) = 0;
  r(0, 2) = s;
  r(1, 0) = 0;
  r(1, 1) = 1;
  r(1, 2) = 0;
  r(2, 0) = -s;
  r(2, 1) = 0;
  r(2, 2) = c;
  return r;
}

/// Rotation about +x (pitch).
inline Mat3 rotation_x(double rad) {
  const double c = std::cos(rad), s = std::sin(rad);
  Mat3 r;
  r(0, 0) = 1;
  r(0, 1) = 0;
  r(0, 2) = 0;
  r(1, 0) = 0;
  r(1, 1) = c;
  r(1, 2) = -s;
  r(2, 0) = 0;
  r(2, 1) = s;
  r(2, 2) = c;
  return r;
}

/// Rotation about +z (roll).
inline Mat3 rotation_z(double rad) {
  const double c = std::cos(rad), s = std::sin(rad);
  Mat3 r;
  r(0, 0) = c;
  r(0, 1) = -s;
  r(0, 2) = 0;
  r(1, 0) = s;
  r(1, 1) = c;
  r(1, 2) = 0;
  r(2, 0) = 0;
  r(2, 1) = 0;
  r(2, 2) = 1;
  return r;
}

inline bool is_finite(const Mat3& a) {
  for (double v : a.m)
    if (!std::isfinite(v)) return false;
  return true;
}

inline constexpr double kPi = 3.14159265358979323846;

inline double deg_to_rad(double d) { return d * kPi / 180.0; }
inline double rad_to_deg(double r) { return r * 180.0 / kPi; }

}  // namespace sgrf
