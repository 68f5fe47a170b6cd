#include "vedit/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vedit {

ad::Matrix patchify(const Image& img, int patch) {
  if (patch <= 0 || img.height % patch != 0 || img.width % patch != 0) {
    throw std::invalid_argument("patchify: image not divisible by patch size");
  }
  const int gh = img.height / patch, gw = img.width / patch;
  ad::Matrix out(gh * gw, img.channels * patch * patch);
  for (int py = 0; py < gh; ++py) {
    for (int px = 0; px < gw; ++px) {
      const int row = py * gw + px;
      int col = 0;
      for (int c = 0; c < img.channels; ++c) {
        for (int dy = 0; dy < patch; ++dy) {
          for (int dx = 0; dx < patch; ++dx) out(row, col++) = img.at(c, py * patch + dy, px * patch + dx);
        }
      }
    }
  }
  return out;
}

Image unpatchify(const ad::Matrix& patches, int channels, int height, int width, int patch) {
  const int gh = height / patch, gw = width / patch;
  if (patches.rows() != gh * gw || patches.cols() != channels * patch * patch) {
    throw std::invalid_argument("unpatchify: shape mismatch");
  }
  Image img(channels, height, width);
  for (int py = 0; py < gh; ++py) {
    for (int px = 0; px < gw; ++px) {
      const int row = py * gw + px;
      int col = 0;
      for (int c = 0; c < channels; ++c) {
        for (int dy = 0; dy < patch; ++dy) {
          for (int dx = 0; dx < patch; ++dx) img.at(c, py * patch + dy, px * patch + dx) = patches(row, col++);
        }
      }
    }
  }
  return img;
}

double max_abs_diff(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

}  // namespace vedit
