#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "amr/common.hpp"

namespace amr {

// Single-channel raster with intensities in [0,1]. Spacing is metadata only
// (mm per pixel). Origin is top-left, rows stored top to bottom.
struct Image2D {
  int width = 0;
  int height = 0;
  float spacing = 0.16f;
  std::vector<float> pixels;

  Image2D() = default;
  Image2D(int w, int h, float sp = 0.16f)
      : width(w), height(h), spacing(sp), pixels((size_t)w * h, 0.f) {}

  float& at(int x, int y) { return pixels[(size_t)y * width + x]; }
  float at(int x, int y) const { return pixels[(size_t)y * width + x]; }

  void clamp_intensities();
};

// Bilinear sample at real coordinates, clamped to the image border.
double bilinear_at(const Image2D& img, double x, double y);

// Bilinear sample; zero outside the image (used by affine warps).
double bilinear_at_zero(const Image2D& img, double x, double y);

// Resize with half-pixel center alignment.
Image2D resize_bilinear(const Image2D& img, int out_w, int out_h);

struct Affine2D {
  // row-major 2x3: [a b tx; c d ty]
  double a = 1, b = 0, tx = 0;
  double c = 0, d = 1, ty = 0;

  void apply(double x, double y, double& ox, double& oy) const {
    ox = a * x + b * y + tx;
    oy = c * x + d * y + ty;
  }
  Affine2D inverse() const;
  static Affine2D compose(const Affine2D& outer, const Affine2D& inner);
};

// out(p) = img(inverse(p)), bilinear, zero-filled outside the source.
Image2D warp_affine(const Image2D& img, const Affine2D& fwd);

// Binary image file: magic "AMR1", u32-LE width, u32-LE height, f32-LE
// spacing, then width*height f32-LE pixels, row-major, top-left origin.
void save_image(const Image2D& img, const std::string& path);
Image2D load_image(const std::string& path);

}  // namespace amr
