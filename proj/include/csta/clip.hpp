#pragma once

#include <cstdint>
#include <vector>

namespace csta {

// A grayscale video clip, pixels in [0,1], frame-major row-major layout.
struct VideoClip {
  std::int64_t frames = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<double> pixels;  // frames*height*width

  double& at(std::int64_t f, std::int64_t y, std::int64_t x) {
    return pixels[(f * height + y) * width + x];
  }
  double at(std::int64_t f, std::int64_t y, std::int64_t x) const {
    return pixels[(f * height + y) * width + x];
  }
};

}  // namespace csta
