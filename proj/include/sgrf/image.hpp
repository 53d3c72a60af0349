// Copyright Contributors to the sgrf Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sgrf/errors.hpp"
#include "sgrf/vec.hpp"

namespace sgrf {

/// Row-major RGB image with values in [0,1].
struct ImageBuffer {
  int width = 0, height = 0;
  std::vector<double> data;  // 3 * width * height

  ImageBuffer() = default;
  ImageBuffer(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(3) * w * h, 0.0) {}

  std::size_t index(int x, int y) const { return 3 * (static_cast<std::size_t>(y) * width + x); }

  Vec3 pixel(int x, int y) const {
    const std::size_t i = index(x, y);
    return {data[i], data[i + 1], data[i + 2]};
  }

  void set_pixel(int x, int y, const Vec3& c) {
    const std::size_t i = index(x, y);
    data[i] = c.x;
    data[i + 1] = c.y;
    data[i + 2] = c.z;
  }

  bool same_size(const ImageBuffer& o) const { return width == o.width && height == o.height; }
};

/// Inclusive pixel rectangle.
struct PixelRect {
  int x0 = 0, y0 = 0, x1 = -1, y1 = -1;

  bool empty() const { return x1 < x0 || y1 < y0; }
  int pixel_count() const { return empty() ? 0 : (x1 - x0 + 1) * (y1 - y0 + 1); }
  PixelRect clipped(int w, int h) const {
    return {std::max(x0, 0), std::max(y0, 0), std::min(x1, w - 1), std::min(y1, h - 1)};
  }
  bool contains(int x, int y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
};

/// Quantizes [0,1] to 8 bits, rounding half-up.
inline std::uint8_t quantize8(double v) {
  if (!(v > 0)) return 0;
  if (v >= 1) return 255;
  return static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5));
}

/// Writes a binary portable pixmap (P6, maxval 255).
inline void write_ppm(const ImageBuffer& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for write: " + path.string());
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<std::uint8_t> bytes(img.data.size());
  for (std::size_t i = 0; i < img.data.size(); ++i) bytes[i] = quantize8(img.data[i]);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path.string());
}

inline ImageBuffer read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open: " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P6") throw ParseError(path.string() + ": not a P6 pixmap");
  auto next_token = [&in, &path]() {
    // skip whitespace and '#' comments
    std::string tok;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        while (in.get(c) && c != '\n') {
        }
      } else if (!std::isspace(static_cast<unsigned char>(c))) {
        tok.push_back(c);
        while (in.get(c) && !std::isspace(static_cast<unsigned char>(c))) tok.push_back(c);
        return tok;
      }
    }
    throw ParseError(path.string() + ": truncated header");
  };
  const int w = std::stoi(next_token());
  const int h = std::stoi(next_token());
  const int maxval = std::stoi(next_token());
  if (w <= 0 || h <= 0) throw ParseError(path.string() + ": bad dimensions");
  if (maxval != 255) throw ParseError(path.string() + ": only maxval 255 supported");
  ImageBuffer img(w, h);
  std::vector<std::uint8_t> bytes(img.data.size());
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw ParseError(path.string() + ": truncated pixel data");
  for (std::size_t i = 0; i < bytes.size(); ++i) img.data[i] = bytes[i] / 255.0;
  return img;
}

}  // namespace sgrf
