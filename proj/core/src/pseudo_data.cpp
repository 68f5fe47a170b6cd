#include "vedit/pseudo_data.hpp"

#include "vedit/io_util.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vedit {

const char* to_string(EpisodeKind k) { return k == EpisodeKind::kCutMix ? "cutmix" : "pgd"; }

CutMixConfig CutMixConfig::for_image_size(int image_size) {
  CutMixConfig c;
  c.min_side = static_cast<int>(std::lround(48.0 * image_size / 224.0));
  c.max_side = static_cast<int>(std::lround(128.0 * image_size / 224.0));
  return c;
}

Image paste_patch(const Image& clean, const Image& source, const PatchBox& box) {
  if (!clean.same_shape(source)) throw std::invalid_argument("paste_patch: image shapes differ");
  if (box.side < 0 || box.x < 0 || box.y < 0 || box.x + box.side > clean.width || box.y + box.side > clean.height) {
    throw std::invalid_argument("paste_patch: box outside the image");
  }
  Image out = clean;
  for (int c = 0; c < clean.channels; ++c)
    for (int y = box.y; y < box.y + box.side; ++y)
      for (int x = box.x; x < box.x + box.side; ++x) out.at(c, y, x) = source.at(c, y, x);
  return out;
}

PseudoEpisode make_cutmix_episode(const LabeledImages& pool, const BaseModel& base, std::mt19937_64& rng,
                                  const CutMixConfig& cfg) {
  if (pool.size() < 2) throw std::invalid_argument("make_cutmix_episode: pool needs at least two images");
  const int size = base.config().image_size;
  if (cfg.min_side < 0 || cfg.max_side < cfg.min_side || cfg.max_side > size) {
    throw std::invalid_argument("make_cutmix_episode: invalid patch-side range");
  }
  PseudoEpisode ep;
  ep.kind = EpisodeKind::kCutMix;
  ep.clean_index = static_cast<int>(std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng));
  std::size_t src = std::uniform_int_distribution<std::size_t>(0, pool.size() - 2)(rng);
  if (src >= std::size_t(ep.clean_index)) ++src;
  ep.source_index = static_cast<int>(src);
  ep.box.side = std::uniform_int_distribution<int>(cfg.min_side, cfg.max_side)(rng);
  ep.box.x = std::uniform_int_distribution<int>(0, size - ep.box.side)(rng);
  ep.box.y = std::uniform_int_distribution<int>(0, size - ep.box.side)(rng);
  ep.clean = pool[std::size_t(ep.clean_index)].image;
  ep.perturbed = paste_patch(ep.clean, pool[src].image, ep.box);
  ep.soft_label = forward_probs(base, ep.clean);
  ep.clean_label = argmax(ep.soft_label);
  return ep;
}

Image pgd_attack(const BaseModel& base, const Image& clean, int target, const PgdBudget& budget) {
  const auto& cfg = base.config();
  check_image(cfg, clean);
  if (budget.steps < 0 || budget.epsilon < 0 || budget.step_size < 0) throw std::invalid_argument("pgd: invalid budget");
  Image x = clean;
  const auto& p = base.params().vars();
  for (int s = 0; s < budget.steps && budget.epsilon > 0; ++s) {
    ad::Var patches = ad::Var::leaf(patchify(x, cfg.patch_size));
    ad::Var logits = vit_logits_from(cfg, base.layout(), p, vit_embed(cfg, base.layout(), p, patches), 1);
    ad::Var loss = nn::mean_cross_entropy(logits, {target});
    const Image g = unpatchify(ad::grad(loss, {patches})[0].value(), cfg.channels, cfg.image_size, cfg.image_size,
                               cfg.patch_size);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
      const double sgn = g.data[i] > 0 ? 1.0 : (g.data[i] < 0 ? -1.0 : 0.0);
      double v = x.data[i] + budget.step_size * sgn;
      v = std::clamp(v, clean.data[i] - budget.epsilon, clean.data[i] + budget.epsilon);
      x.data[i] = std::clamp(v, 0.0, 1.0);
    }
  }
  return x;
}

std::optional<PseudoEpisode> make_pgd_episode(const LabeledImages& pool, const BaseModel& base, std::mt19937_64& rng,
                                              const PgdBudget& budget, int max_attempts, PgdStats* stats) {
  if (pool.empty()) throw std::invalid_argument("make_pgd_episode: empty pool");
  for (int a = 0; a < max_attempts; ++a) {
    PseudoEpisode ep;
    ep.kind = EpisodeKind::kPgd;
    ep.budget = budget;
    ep.clean_index = static_cast<int>(std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng));
    ep.clean = pool[std::size_t(ep.clean_index)].image;
    ep.soft_label = forward_probs(base, ep.clean);
    ep.clean_label = argmax(ep.soft_label);
    ep.perturbed = pgd_attack(base, ep.clean, ep.clean_label, budget);
    if (stats) ++stats->attempts;
    if (predict(base, ep.perturbed) != ep.clean_label) {
      if (stats) ++stats->kept;
      return ep;
    }
    if (stats) ++stats->skipped;
  }
  return std::nullopt;
}

void dump_episode(const std::string& path, const PseudoEpisode& ep) {
  nlohmann::json j;
  j["format"] = "vedit-episode";
  j["version"] = 1;
  j["kind"] = to_string(ep.kind);
  j["shape"] = {ep.clean.channels, ep.clean.height, ep.clean.width};
  j["clean"] = ep.clean.data;
  j["perturbed"] = ep.perturbed.data;
  j["soft_label"] = ep.soft_label;
  j["clean_label"] = ep.clean_label;
  j["clean_index"] = ep.clean_index;
  if (ep.kind == EpisodeKind::kCutMix) {
    j["box"] = {{"x", ep.box.x}, {"y", ep.box.y}, {"side", ep.box.side}};
    j["source_index"] = ep.source_index;
  } else {
    j["budget"] = {{"steps", ep.budget.steps}, {"step_size", ep.budget.step_size}, {"epsilon", ep.budget.epsilon}};
  }
  io::write_atomic(path, [&](std::ostream& out) { out << j.dump() << '\n'; });
}

}  // namespace vedit
