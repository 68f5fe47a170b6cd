#pragma once

#include "vedit/desk_data.hpp"
#include "vedit/vit.hpp"

#include <random>

namespace vedit::testing {

inline ViTConfig tiny_vit(int blocks = 2, std::uint64_t seed = 11) {
  ViTConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.embed_dim = 8;
  c.mlp_dim = 16;
  c.num_blocks = blocks;
  c.num_heads = 2;
  c.num_classes = 10;
  c.seed = seed;
  return c;
}

inline Image random_image(int size, std::mt19937_64& rng) {
  Image im(3, size, size);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& v : im.data) v = u(rng);
  return im;
}

/// A model with larger-than-default weights so that predictions vary.
inline BaseModel spread_model(const ViTConfig& cfg, double scale = 0.5) {
  BaseModel m(cfg);
  ParamStore p = m.params();
  std::mt19937_64 rng(cfg.seed + 99);
  std::normal_distribution<double> n(0.0, scale);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto& name = p.info(i).name;
    if (name.find("norm") != std::string::npos) continue;
    ad::Matrix v = p.value(i);
    for (ad::Index k = 0; k < v.size(); ++k) v.data()[k] = n(rng);
    p.set(i, v);
  }
  return BaseModel(cfg, p);
}

inline LabeledImages random_labeled(int count, int size, std::mt19937_64& rng, int classes = 10) {
  LabeledImages out;
  for (int i = 0; i < count; ++i) out.push_back({random_image(size, rng), i % classes});
  return out;
}

}  // namespace vedit::testing
