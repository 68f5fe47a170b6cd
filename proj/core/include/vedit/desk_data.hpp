// Procedural desk-scale image corpus: ten shape classes grouped into five
// superclasses, each class rendered with a dominant hue so that a weakly
// trained classifier picks up color as a spurious cue. Every sample is
// regenerable from (split seed, index).
#pragma once

#include "vedit/image.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace vedit::desk {

inline constexpr int kNumClasses = 10;

const std::array<std::string, kNumClasses>& class_names();
/// Superclass of each label (pairs of siblings).
int superclass_of(int label);
/// The class whose hue is opposite on the color wheel.
int partner_of(int label);
double class_hue(int label);

enum class Variant { kCanonical, kRandomColor, kPartnerColor, kSmall, kFaint };
const char* to_string(Variant v);

struct RenderSpec {
  int label = 0;
  Variant variant = Variant::kCanonical;
  std::uint64_t seed = 0;
};

Image render(const RenderSpec& spec, int size = 32);

/// Mixture of variants in a split; probabilities need not sum to one, the
/// remainder is canonical.
struct SplitSpec {
  std::uint64_t seed = 0;
  int count = 0;
  double p_random_color = 0.0;
  double p_partner_color = 0.0;
  double p_small = 0.0;
  double p_faint = 0.0;
};

RenderSpec spec_at(const SplitSpec& split, int index);
LabeledImage sample_at(const SplitSpec& split, int index, int size = 32);
LabeledImages make_split(const SplitSpec& split, int size = 32);

/// Standard splits used by the pipeline, derived from one root seed.
SplitSpec base_train_split(std::uint64_t root, int count);
SplitSpec strong_train_split(std::uint64_t root, int count);
SplitSpec heldout_split(std::uint64_t root, int count);
SplitSpec mining_pool_split(std::uint64_t root, int count);
SplitSpec shift_source_split(std::uint64_t root, int count);
SplitSpec locality_candidate_split(std::uint64_t root, int count);

enum class Corruption { kIdentity, kArtStyle, kStageLight, kPosterize };
const char* to_string(Corruption c);
Corruption corruption_from_string(const std::string& s);

/// Deterministic in (image, kind, seed).
Image corrupt(const Image& img, Corruption kind, std::uint64_t seed);

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace vedit::desk
