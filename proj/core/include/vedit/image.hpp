#pragma once

#include "vedit/autodiff.hpp"

#include <vector>

namespace vedit {

/// Channel-major (CHW) image with values nominally in [0, 1].
struct Image {
  int channels = 3;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Image() = default;
  Image(int c, int h, int w, double fill = 0.0) : channels(c), height(h), width(w), data(std::size_t(c) * h * w, fill) {}

  double& at(int c, int y, int x) { return data[(std::size_t(c) * height + y) * width + x]; }
  double at(int c, int y, int x) const { return data[(std::size_t(c) * height + y) * width + x]; }
  bool same_shape(const Image& o) const { return channels == o.channels && height == o.height && width == o.width; }
  bool operator==(const Image& o) const { return same_shape(o) && data == o.data; }
};

struct LabeledImage {
  Image image;
  int label = 0;
};

using LabeledImages = std::vector<LabeledImage>;

/// Rows are non-overlapping patches in raster order; columns run over
/// (channel, dy, dx) within the patch.
ad::Matrix patchify(const Image& img, int patch);
/// Inverse layout of patchify, used to route patch-space gradients back to pixels.
Image unpatchify(const ad::Matrix& patches, int channels, int height, int width, int patch);

double max_abs_diff(const Image& a, const Image& b);

}  // namespace vedit
