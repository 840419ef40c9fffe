#include "amr/landmarks.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace amr {

const std::array<std::string, LandmarkSet::kCount>& LandmarkSet::names() {
  static const std::array<std::string, kCount> n = {
      "clavicle_left_0",  "clavicle_left_1",  "clavicle_left_2",
      "clavicle_right_0", "clavicle_right_1", "clavicle_right_2",
      "ribcage_left_0",   "ribcage_left_1",   "ribcage_left_2",
      "ribcage_left_3",   "ribcage_right_0",  "ribcage_right_1",
      "ribcage_right_2",  "ribcage_right_3",  "c7",
      "t12"};
  return n;
}

void LandmarkSet::validate(int width, int height) const {
  for (int i = 0; i < kCount; ++i) {
    const Vec2& p = pts[(size_t)i];
    if (!(p.x >= 0 && p.x < width && p.y >= 0 && p.y < height))
      throw IoError(strfmt("landmark %s at (%.2f,%.2f) outside %dx%d image",
                           names()[(size_t)i].c_str(), p.x, p.y, width, height));
  }
  auto mean_x = [&](int start, int n) {
    double s = 0;
    for (int i = 0; i < n; ++i) s += pts[(size_t)(start + i)].x;
    return s / n;
  };
  if (mean_x(kClavicleLeft, 3) >= mean_x(kClavicleRight, 3))
    throw IoError("clavicle landmark groups are not left/right ordered");
  if (mean_x(kRibcageLeft, 4) >= mean_x(kRibcageRight, 4))
    throw IoError("ribcage landmark groups are not left/right ordered");
}

void LandmarkSet::clamp_to(int width, int height) {
  for (auto& p : pts) {
    p.x = std::min((double)width - 1, std::max(0.0, p.x));
    p.y = std::min((double)height - 1, std::max(0.0, p.y));
  }
}

LandmarkSet LandmarkSet::flipped_horizontal(int width) const {
  LandmarkSet out;
  auto mirror = [&](const Vec2& p) { return Vec2{width - 1 - p.x, p.y}; };
  for (int i = 0; i < 3; ++i) {
    out.pts[(size_t)(kClavicleLeft + i)] = mirror(pts[(size_t)(kClavicleRight + i)]);
    out.pts[(size_t)(kClavicleRight + i)] = mirror(pts[(size_t)(kClavicleLeft + i)]);
  }
  for (int i = 0; i < 4; ++i) {
    out.pts[(size_t)(kRibcageLeft + i)] = mirror(pts[(size_t)(kRibcageRight + i)]);
    out.pts[(size_t)(kRibcageRight + i)] = mirror(pts[(size_t)(kRibcageLeft + i)]);
  }
  out.pts[kC7] = mirror(pts[kC7]);
  out.pts[kT12] = mirror(pts[kT12]);
  return out;
}

void save_landmarks(const LandmarkSet& lm, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open landmark file for writing: " + path);
  for (int i = 0; i < LandmarkSet::kCount; ++i)
    f << LandmarkSet::names()[(size_t)i] << '\t'
      << strfmt("%.6f\t%.6f\n", lm[i].x, lm[i].y);
  if (!f) throw IoError("short write on landmark file: " + path);
}

LandmarkSet load_landmarks(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open landmark file: " + path);
  LandmarkSet lm;
  std::string line;
  for (int i = 0; i < LandmarkSet::kCount; ++i) {
    if (!std::getline(f, line))
      throw IoError(strfmt("%s: truncated at line %d", path.c_str(), i + 1));
    std::istringstream ss(line);
    std::string name;
    double x, y;
    if (!(std::getline(ss, name, '\t') && ss >> x && ss >> y))
      throw IoError(strfmt("%s: malformed landmark at line %d", path.c_str(), i + 1));
    if (name != LandmarkSet::names()[(size_t)i])
      throw IoError(strfmt("%s: expected landmark '%s' at line %d, got '%s'",
                           path.c_str(), LandmarkSet::names()[(size_t)i].c_str(),
                           i + 1, name.c_str()));
    lm[i] = {x, y};
  }
  return lm;
}

}  // namespace amr
