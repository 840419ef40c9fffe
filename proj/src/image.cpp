#include "amr/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace amr {

void Image2D::clamp_intensities() {
  for (auto& p : pixels) p = std::min(1.0f, std::max(0.0f, p));
}

double bilinear_at(const Image2D& img, double x, double y) {
  x = std::min((double)img.width - 1, std::max(0.0, x));
  y = std::min((double)img.height - 1, std::max(0.0, y));
  const int x0 = (int)x, y0 = (int)y;
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double fx = x - x0, fy = y - y0;
  return (1 - fx) * (1 - fy) * img.at(x0, y0) + fx * (1 - fy) * img.at(x1, y0) +
         (1 - fx) * fy * img.at(x0, y1) + fx * fy * img.at(x1, y1);
}

double bilinear_at_zero(const Image2D& img, double x, double y) {
  if (x <= -1 || y <= -1 || x >= img.width || y >= img.height) return 0.0;
  const int x0 = (int)std::floor(x), y0 = (int)std::floor(y);
  const double fx = x - x0, fy = y - y0;
  auto px = [&](int xi, int yi) -> double {
    if (xi < 0 || yi < 0 || xi >= img.width || yi >= img.height) return 0.0;
    return img.at(xi, yi);
  };
  return (1 - fx) * (1 - fy) * px(x0, y0) + fx * (1 - fy) * px(x0 + 1, y0) +
         (1 - fx) * fy * px(x0, y0 + 1) + fx * fy * px(x0 + 1, y0 + 1);
}

Image2D resize_bilinear(const Image2D& img, int out_w, int out_h) {
  Image2D out(out_w, out_h, img.spacing);
  const double sx = (double)img.width / out_w;
  const double sy = (double)img.height / out_h;
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x)
      out.at(x, y) =
          (float)bilinear_at(img, (x + 0.5) * sx - 0.5, (y + 0.5) * sy - 0.5);
  return out;
}

Affine2D Affine2D::inverse() const {
  const double det = a * d - b * c;
  Affine2D inv;
  inv.a = d / det;
  inv.b = -b / det;
  inv.c = -c / det;
  inv.d = a / det;
  inv.tx = -(inv.a * tx + inv.b * ty);
  inv.ty = -(inv.c * tx + inv.d * ty);
  return inv;
}

Affine2D Affine2D::compose(const Affine2D& o, const Affine2D& i) {
  Affine2D r;
  r.a = o.a * i.a + o.b * i.c;
  r.b = o.a * i.b + o.b * i.d;
  r.c = o.c * i.a + o.d * i.c;
  r.d = o.c * i.b + o.d * i.d;
  r.tx = o.a * i.tx + o.b * i.ty + o.tx;
  r.ty = o.c * i.tx + o.d * i.ty + o.ty;
  return r;
}

Image2D warp_affine(const Image2D& img, const Affine2D& fwd) {
  const Affine2D inv = fwd.inverse();
  Image2D out(img.width, img.height, img.spacing);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double sx, sy;
      inv.apply(x, y, sx, sy);
      out.at(x, y) = (float)bilinear_at_zero(img, sx, sy);
    }
  return out;
}

namespace {

void put_u32(std::ofstream& f, uint32_t v) {
  unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)(v >> 8 & 0xff),
                        (unsigned char)(v >> 16 & 0xff), (unsigned char)(v >> 24)};
  f.write((const char*)b, 4);
}

uint32_t get_u32(std::ifstream& f) {
  unsigned char b[4];
  f.read((char*)b, 4);
  return (uint32_t)b[0] | (uint32_t)b[1] << 8 | (uint32_t)b[2] << 16 |
         (uint32_t)b[3] << 24;
}

}  // namespace

void save_image(const Image2D& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open image file for writing: " + path);
  f.write("AMR1", 4);
  put_u32(f, (uint32_t)img.width);
  put_u32(f, (uint32_t)img.height);
  uint32_t sp;
  static_assert(sizeof(float) == 4);
  std::memcpy(&sp, &img.spacing, 4);
  put_u32(f, sp);
  // pixel payload is f32-LE; this build targets little-endian hosts
  f.write((const char*)img.pixels.data(), (std::streamsize)img.pixels.size() * 4);
  if (!f) throw IoError("short write on image file: " + path);
}

Image2D load_image(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open image file: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "AMR1", 4) != 0)
    throw IoError("bad magic in image file: " + path);
  Image2D img;
  img.width = (int)get_u32(f);
  img.height = (int)get_u32(f);
  uint32_t sp = get_u32(f);
  std::memcpy(&img.spacing, &sp, 4);
  if (!f || img.width <= 0 || img.height <= 0 || img.width > 1 << 16 ||
      img.height > 1 << 16)
    throw IoError(strfmt("bad image header in %s (offset 4)", path.c_str()));
  img.pixels.resize((size_t)img.width * img.height);
  f.read((char*)img.pixels.data(), (std::streamsize)img.pixels.size() * 4);
  if (!f)
    throw IoError(strfmt("truncated image file %s: expected %zu pixels",
                         path.c_str(), img.pixels.size()));
  return img;
}

}  // namespace amr
