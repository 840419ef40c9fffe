#pragma once

#include <string>
#include <vector>

#include "amr/config.hpp"
#include "amr/image.hpp"
#include "amr/landmarks.hpp"
#include "amr/tensor.hpp"

namespace amr {

struct GeometryError : ConfigError {
  explicit GeometryError(const std::string& m) : ConfigError(m) {}
};

// Real-valued crop box in source pixel coordinates.
struct RoiSpec {
  std::string name;
  double x = 0, y = 0, w = 0, h = 0;
};

struct RoiGeometry {
  int crop_size = 24;      // S: side of every resized modality
  double margin = 0.25;    // clavicle box expansion, fraction of box diagonal
  double rib_box = 0.18;   // rib square side, fraction of image height
  double spine_box = 0.15; // cervical/lumbar square side, fraction of height
  double std_eps = 1e-6;   // z-score epsilon

  static RoiGeometry from(const RunConfig& cfg) {
    RoiGeometry g;
    g.crop_size = cfg.integer("roi.crop_size");
    g.margin = cfg.real("roi.margin");
    g.rib_box = cfg.real("roi.rib_box");
    g.spine_box = cfg.real("roi.spine_box");
    g.std_eps = cfg.real("roi.std_eps");
    if (g.crop_size < 4) throw ConfigError("roi.crop_size must be >= 4");
    if (g.std_eps <= 0) throw ConfigError("roi.std_eps must be positive");
    return g;
  }
};

constexpr int kRoiModalities = 15;  // whole image + 14 anatomical crops

// Fixed modality order: whole, clav_L_0, clav_L_1, clav_R_0, clav_R_1,
// rib_L_0..3, rib_R_0..3, cervical, lumbar.
std::vector<RoiSpec> roi_boxes(const Image2D& img, const LandmarkSet& lm,
                               const RoiGeometry& geo);

// N x N non-overlapping tiles in row-major order; remainder pixels go to the
// last row/column.
std::vector<RoiSpec> patch_boxes(const Image2D& img, int n);

// One standardized S x S crop per box, stacked as (M, S, S). Each crop is
// bilinearly resized then z-scored (mean 0, SD 1, +eps); constant crops
// standardize to all zeros.
template <class T>
TensorData<T> sample_modalities(const Image2D& img,
                                const std::vector<RoiSpec>& boxes, int S,
                                double eps) {
  TensorData<T> out({(int)boxes.size(), S, S});
  std::vector<double> buf((size_t)S * S);
  for (size_t m = 0; m < boxes.size(); ++m) {
    const RoiSpec& b = boxes[m];
    const double sx = b.w / S, sy = b.h / S;
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x)
        buf[(size_t)y * S + x] =
            bilinear_at(img, b.x + (x + 0.5) * sx - 0.5, b.y + (y + 0.5) * sy - 0.5);
    double mean = 0;
    for (double v : buf) mean += v;
    mean /= (double)buf.size();
    double var = 0;
    for (double v : buf) var += (v - mean) * (v - mean);
    var /= (double)buf.size();
    const double inv = 1.0 / (std::sqrt(var) + eps);
    T* dst = out.v.data() + m * (size_t)S * S;
    for (size_t i = 0; i < buf.size(); ++i) dst[i] = (T)((buf[i] - mean) * inv);
  }
  return out;
}

template <class T>
struct ModalityBatch {
  std::vector<std::string> names;
  TensorData<T> data;  // (M, S, S)
  int count() const { return data.dim(0); }
  int side() const { return data.dim(1); }
};

// Landmark-anchored extraction: 15 modalities in the fixed order.
template <class T>
ModalityBatch<T> crop_rois(const Image2D& img, const LandmarkSet& lm,
                           const RoiGeometry& geo) {
  auto boxes = roi_boxes(img, lm, geo);
  ModalityBatch<T> out;
  for (auto& b : boxes) out.names.push_back(b.name);
  out.data = sample_modalities<T>(img, boxes, geo.crop_size, geo.std_eps);
  return out;
}

// Grid extraction: n^2 modalities, row-major.
template <class T>
ModalityBatch<T> split_patches(const Image2D& img, int n, int S,
                               double eps = 1e-6) {
  auto boxes = patch_boxes(img, n);
  ModalityBatch<T> out;
  for (auto& b : boxes) out.names.push_back(b.name);
  out.data = sample_modalities<T>(img, boxes, S, eps);
  return out;
}

}  // namespace amr
