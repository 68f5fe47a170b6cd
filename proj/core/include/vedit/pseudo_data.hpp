// Training episodes for the mask hypernetwork: CutMix pairs (a patch from an
// unrelated image pasted onto a clean one) and PGD adversarial pairs.
#pragma once

#include "vedit/image.hpp"
#include "vedit/vit.hpp"

#include <optional>
#include <random>
#include <string>

namespace vedit {

enum class EpisodeKind { kCutMix, kPgd };
const char* to_string(EpisodeKind k);

struct PatchBox {
  int x = 0, y = 0, side = 0;  // side 0 means no patch
};

struct PgdBudget {
  int steps = 10;
  double step_size = 2.0 / 255.0;
  double epsilon = 8.0 / 255.0;
};

struct PseudoEpisode {
  Image clean;      // x'
  Image perturbed;  // x
  ProbabilityVector soft_label;  // p(y | x'; phi0)
  int clean_label = 0;           // argmax of soft_label
  EpisodeKind kind = EpisodeKind::kCutMix;
  PatchBox box;
  int clean_index = -1;
  int source_index = -1;
  PgdBudget budget;
};

struct CutMixConfig {
  int min_side = 7;
  int max_side = 18;
  /// The 48..128 px range used at 224 px, rescaled to `image_size`.
  static CutMixConfig for_image_size(int image_size);
};

/// Patch source drawn uniformly from the pool excluding the clean image.
PseudoEpisode make_cutmix_episode(const LabeledImages& pool, const BaseModel& base, std::mt19937_64& rng,
                                  const CutMixConfig& cfg);

/// Paste semantics: copies source pixels inside `box` onto `clean`.
Image paste_patch(const Image& clean, const Image& source, const PatchBox& box);

struct PgdStats {
  int attempts = 0;
  int kept = 0;
  int skipped = 0;
};

/// Cross-entropy ascent from x' with sign steps and projection onto the
/// epsilon ball and [0, 1].
Image pgd_attack(const BaseModel& base, const Image& clean, int target, const PgdBudget& budget);

/// Tries up to `max_attempts` clean images; an attack that leaves the
/// prediction unchanged is skipped and counted. Returns nothing if all fail.
std::optional<PseudoEpisode> make_pgd_episode(const LabeledImages& pool, const BaseModel& base, std::mt19937_64& rng,
                                              const PgdBudget& budget, int max_attempts = 5,
                                              PgdStats* stats = nullptr);

/// Self-describing JSON dump of one episode (images, soft label, metadata).
void dump_episode(const std::string& path, const PseudoEpisode& ep);

}  // namespace vedit
