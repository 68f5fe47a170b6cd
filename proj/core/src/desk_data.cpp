#include "vedit/desk_data.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace vedit::desk {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  h = std::fmod(std::fmod(h, 360.0) + 360.0, 360.0) / 60.0;
  const int i = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

bool inside(int label, double dx, double dy, double r) {
  const double ax = std::abs(dx), ay = std::abs(dy);
  switch (label) {
    case 0: return std::hypot(dx, dy) <= r;  // disk
    case 1: {                                   // ring
      const double d = std::hypot(dx, dy), t = std::max(2.0, 0.3 * r);
      return d <= r && d >= r - t;
    }
    case 2: return std::max(ax, ay) <= 0.85 * r;  // square
    case 3: {                                        // frame
      const double m = std::max(ax, ay), t = std::max(2.0, 0.3 * r);
      return m <= 0.85 * r && m >= 0.85 * r - t;
    }
    case 4:  // triangle pointing up
    case 5: {
      const double y = label == 4 ? dy : -dy;
      if (y < -r || y > 0.75 * r) return false;
      return ax <= (y + r) / 1.75;
    }
    case 6:  // horizontal stripes
    case 7: {
      if (ax > r || ay > r) return false;
      const double along = label == 6 ? dy : dx;
      const double period = 2.0 * r / 3.0;
      return std::fmod(along + r, period) < period / 2.0;
    }
    case 8:  // plus
    case 9: {
      double u = dx, v = dy;
      if (label == 9) {
        u = (dx + dy) / std::sqrt(2.0);
        v = (dx - dy) / std::sqrt(2.0);
      }
      const double w = std::max(1.5, 0.2 * r);
      const double au = std::abs(u), av = std::abs(v);
      return (au <= w && av <= r) || (av <= w && au <= r);
    }
    default: throw std::invalid_argument("desk label out of range");
  }
}

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

}  // namespace

const std::array<std::string, kNumClasses>& class_names() {
  static const std::array<std::string, kNumClasses> names = {
      "disk", "ring", "square", "frame", "tri_up", "tri_down", "stripes_h", "stripes_v", "plus", "cross"};
  return names;
}

int superclass_of(int label) {
  if (label < 0 || label >= kNumClasses) throw std::invalid_argument("desk label out of range");
  return label / 2;
}

int partner_of(int label) { return (label + kNumClasses / 2) % kNumClasses; }

double class_hue(int label) { return 36.0 * label; }

const char* to_string(Variant v) {
  switch (v) {
    case Variant::kCanonical: return "canonical";
    case Variant::kRandomColor: return "random_color";
    case Variant::kPartnerColor: return "partner_color";
    case Variant::kSmall: return "small";
    case Variant::kFaint: return "faint";
  }
  return "?";
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Image render(const RenderSpec& spec, int size) {
  if (size < 8) throw std::invalid_argument("desk images need at least 8 pixels per side");
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  const double scale = size / 32.0;

  const auto bg = hsv_to_rgb(uni(0, 360), uni(0, 0.3), uni(0.25, 0.7));
  const double gx = uni(-0.1, 0.1), gy = uni(-0.1, 0.1);

  double hue = class_hue(spec.label) + uni(-12, 12);
  if (spec.variant == Variant::kRandomColor) hue = uni(0, 360);
  if (spec.variant == Variant::kPartnerColor) hue = class_hue(partner_of(spec.label)) + uni(-12, 12);
  auto fg = hsv_to_rgb(hue, uni(0.65, 1.0), uni(0.75, 1.0));
  if (spec.variant == Variant::kFaint) {
    for (int c = 0; c < 3; ++c) fg[c] = 0.55 * bg[c] + 0.45 * fg[c];
  }

  const double r = (spec.variant == Variant::kSmall ? uni(4.0, 6.0) : uni(7.0, 11.0)) * scale;
  const double cx = size / 2.0 + uni(-4.0, 4.0) * scale, cy = size / 2.0 + uni(-4.0, 4.0) * scale;
  const double theta = uni(-0.2, 0.2), ct = std::cos(theta), st = std::sin(theta);
  std::normal_distribution<double> noise(0.0, 0.03);

  Image img(3, size, size);
  constexpr int kSuper = 3;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      int hits = 0;
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const double px = x + (sx + 0.5) / kSuper - cx, py = y + (sy + 0.5) / kSuper - cy;
          hits += inside(spec.label, ct * px + st * py, -st * px + ct * py, r);
        }
      }
      const double a = double(hits) / (kSuper * kSuper);
      const double shade = gx * (x - size / 2.0) / size + gy * (y - size / 2.0) / size;
      for (int c = 0; c < 3; ++c) {
        img.at(c, y, x) = clamp01((1 - a) * (bg[c] + shade) + a * fg[c] + noise(rng));
      }
    }
  }
  return img;
}

RenderSpec spec_at(const SplitSpec& split, int index) {
  if (index < 0) throw std::invalid_argument("negative sample index");
  std::mt19937_64 rng(mix_seed(split.seed, static_cast<std::uint64_t>(index)));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RenderSpec spec;
  spec.label = index % kNumClasses;
  double t = u(rng);
  if ((t -= split.p_random_color) < 0) spec.variant = Variant::kRandomColor;
  else if ((t -= split.p_partner_color) < 0) spec.variant = Variant::kPartnerColor;
  else if ((t -= split.p_small) < 0) spec.variant = Variant::kSmall;
  else if ((t -= split.p_faint) < 0) spec.variant = Variant::kFaint;
  spec.seed = rng();
  return spec;
}

LabeledImage sample_at(const SplitSpec& split, int index, int size) {
  const RenderSpec spec = spec_at(split, index);
  return {render(spec, size), spec.label};
}

LabeledImages make_split(const SplitSpec& split, int size) {
  LabeledImages out;
  out.reserve(split.count);
  for (int i = 0; i < split.count; ++i) out.push_back(sample_at(split, i, size));
  return out;
}

SplitSpec base_train_split(std::uint64_t root, int count) {
  return {mix_seed(root, 101), count, 0.08, 0.0, 0.0, 0.0};
}

SplitSpec strong_train_split(std::uint64_t root, int count) {
  return {mix_seed(root, 102), count, 0.55, 0.15, 0.1, 0.1};
}

SplitSpec heldout_split(std::uint64_t root, int count) {
  return {mix_seed(root, 103), count, 0.08, 0.0, 0.0, 0.0};
}

SplitSpec mining_pool_split(std::uint64_t root, int count) {
  return {mix_seed(root, 104), count, 0.15, 0.35, 0.1, 0.1};
}

SplitSpec shift_source_split(std::uint64_t root, int count) {
  return {mix_seed(root, 105), count, 0.0, 0.0, 0.0, 0.0};
}

SplitSpec locality_candidate_split(std::uint64_t root, int count) {
  return {mix_seed(root, 106), count, 0.3, 0.2, 0.1, 0.1};
}

const char* to_string(Corruption c) {
  switch (c) {
    case Corruption::kIdentity: return "identity";
    case Corruption::kArtStyle: return "art_style";
    case Corruption::kStageLight: return "stage_light";
    case Corruption::kPosterize: return "posterize";
  }
  return "?";
}

Corruption corruption_from_string(const std::string& s) {
  for (Corruption c : {Corruption::kIdentity, Corruption::kArtStyle, Corruption::kStageLight, Corruption::kPosterize}) {
    if (s == to_string(c)) return c;
  }
  throw std::invalid_argument("unknown corruption '" + s + "'");
}

Image corrupt(const Image& img, Corruption kind, std::uint64_t seed) {
  if (img.channels != 3) throw std::invalid_argument("corruptions expect RGB images");
  Image out = img;
  auto quantize = [](double v, int levels) { return std::round(clamp01(v) * (levels - 1)) / (levels - 1); };
  switch (kind) {
    case Corruption::kIdentity: break;
    case Corruption::kArtStyle:
      // Channel rotation shifts every hue by a third of the wheel, then a flat-paint look.
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
          for (int c = 0; c < 3; ++c) out.at(c, y, x) = quantize(img.at((c + 1) % 3, y, x), 4);
      break;
    case Corruption::kStageLight: {
      std::mt19937_64 rng(seed);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      const double lx = img.width * (0.2 + 0.6 * u(rng)), ly = img.height * (0.2 + 0.6 * u(rng));
      const auto tint = hsv_to_rgb(360.0 * u(rng), 0.9, 1.0);
      const double radius = img.width * 0.35;
      for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
          const double d = std::hypot(x - lx, y - ly) / radius;
          const double spot = std::exp(-d * d);
          for (int c = 0; c < 3; ++c) {
            out.at(c, y, x) = clamp01(0.35 * img.at(c, y, x) + 0.65 * spot * tint[c] * (0.4 + img.at(c, y, x)));
          }
        }
      }
      break;
    }
    case Corruption::kPosterize:
      for (double& v : out.data) v = quantize(1.0 - v, 3);
      break;
  }
  return out;
}

}  // namespace vedit::desk
