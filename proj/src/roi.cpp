#include "amr/roi.hpp"

#include <algorithm>
#include <cmath>

namespace amr {

namespace {

RoiSpec clamp_box(std::string name, double x0, double y0, double x1, double y1,
                  const Image2D& img) {
  x0 = std::max(0.0, x0);
  y0 = std::max(0.0, y0);
  x1 = std::min((double)img.width, x1);
  y1 = std::min((double)img.height, y1);
  if (x1 - x0 < 2.0 || y1 - y0 < 2.0)
    throw GeometryError(strfmt("degenerate crop box for ROI '%s' (%.1fx%.1f px)",
                               name.c_str(), x1 - x0, y1 - y0));
  return RoiSpec{std::move(name), x0, y0, x1 - x0, y1 - y0};
}

RoiSpec centered_square(std::string name, const Vec2& c, double side,
                        const Image2D& img) {
  return clamp_box(std::move(name), c.x - side / 2, c.y - side / 2,
                   c.x + side / 2, c.y + side / 2, img);
}

}  // namespace

std::vector<RoiSpec> roi_boxes(const Image2D& img, const LandmarkSet& lm,
                               const RoiGeometry& geo) {
  lm.validate(img.width, img.height);
  std::vector<RoiSpec> boxes;
  boxes.push_back({"whole", 0, 0, (double)img.width, (double)img.height});

  // clavicles: landmark bounding box grown by margin * diagonal, then split
  // into two equal horizontal halves
  auto clavicle = [&](const char* side, int base) {
    double x0 = lm[base].x, x1 = lm[base].x, y0 = lm[base].y, y1 = lm[base].y;
    for (int i = 1; i < 3; ++i) {
      x0 = std::min(x0, lm[base + i].x);
      x1 = std::max(x1, lm[base + i].x);
      y0 = std::min(y0, lm[base + i].y);
      y1 = std::max(y1, lm[base + i].y);
    }
    const double m = geo.margin * std::hypot(x1 - x0, y1 - y0);
    RoiSpec full = clamp_box(strfmt("clavicle_%s", side), x0 - m, y0 - m,
                             x1 + m, y1 + m, img);
    boxes.push_back({strfmt("clavicle_%s_0", side), full.x, full.y, full.w / 2,
                     full.h});
    boxes.push_back({strfmt("clavicle_%s_1", side), full.x + full.w / 2, full.y,
                     full.w / 2, full.h});
  };
  clavicle("left", LandmarkSet::kClavicleLeft);
  clavicle("right", LandmarkSet::kClavicleRight);

  const double rib_side = geo.rib_box * img.height;
  for (int i = 0; i < 4; ++i)
    boxes.push_back(centered_square(strfmt("ribcage_left_%d", i),
                                    lm[LandmarkSet::kRibcageLeft + i], rib_side,
                                    img));
  for (int i = 0; i < 4; ++i)
    boxes.push_back(centered_square(strfmt("ribcage_right_%d", i),
                                    lm[LandmarkSet::kRibcageRight + i], rib_side,
                                    img));

  const double spine_side = geo.spine_box * img.height;
  boxes.push_back(centered_square("cervical", lm[LandmarkSet::kC7], spine_side, img));
  boxes.push_back(centered_square("lumbar", lm[LandmarkSet::kT12], spine_side, img));
  return boxes;
}

std::vector<RoiSpec> patch_boxes(const Image2D& img, int n) {
  if (n < 1) throw UsageError("split_patches: n must be >= 1");
  if (img.width / n < 2 || img.height / n < 2)
    throw GeometryError(strfmt("split_patches: %dx%d tiles of %dx%d image "
                               "smaller than 2x2", n, n, img.width, img.height));
  const int bw = img.width / n, bh = img.height / n;
  std::vector<RoiSpec> boxes;
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      const int x = c * bw, y = r * bh;
      const int w = (c == n - 1) ? img.width - x : bw;
      const int h = (r == n - 1) ? img.height - y : bh;
      boxes.push_back({strfmt("patch_%d_%d", r, c), (double)x, (double)y,
                       (double)w, (double)h});
    }
  return boxes;
}

}  // namespace amr
