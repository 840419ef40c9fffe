#pragma once

#include <array>
#include <string>

#include "amr/image.hpp"

namespace amr {

struct Vec2 {
  double x = 0, y = 0;
};

// The 16 named chest keypoints, fixed order. Indices group as:
//   0-2   clavicle_left_0..2      3-5   clavicle_right_0..2
//   6-9   ribcage_left_0..3      10-13  ribcage_right_0..3
//   14    c7                      15    t12
struct LandmarkSet {
  static constexpr int kCount = 16;
  static constexpr int kClavicleLeft = 0;
  static constexpr int kClavicleRight = 3;
  static constexpr int kRibcageLeft = 6;
  static constexpr int kRibcageRight = 10;
  static constexpr int kC7 = 14;
  static constexpr int kT12 = 15;

  std::array<Vec2, kCount> pts;

  Vec2& operator[](int i) { return pts[(size_t)i]; }
  const Vec2& operator[](int i) const { return pts[(size_t)i]; }

  static const std::array<std::string, kCount>& names();

  // All points inside [0,w)x[0,h); left-side groups left of right-side ones.
  void validate(int width, int height) const;

  void clamp_to(int width, int height);

  // Mirror around the vertical axis and swap left/right groups.
  LandmarkSet flipped_horizontal(int width) const;
};

// Text file: 16 lines of "name<TAB>x<TAB>y" in the fixed name order.
void save_landmarks(const LandmarkSet& lm, const std::string& path);
LandmarkSet load_landmarks(const std::string& path);

}  // namespace amr
