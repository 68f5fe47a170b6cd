// Mask-generating hypernetwork: a small transformer over the base model's
// last-stage token features with one learnable token per scoped FC layer.
// Each token's output row is projected to that layer's mask slots by a
// shared affine head.
#pragma once

#include "vedit/masking.hpp"
#include "vedit/nn.hpp"
#include "vedit/params.hpp"
#include "vedit/vit.hpp"

#include <cstdint>
#include <map>
#include <string>

namespace vedit {

struct HypernetConfig {
  int num_blocks = 5;
  int embed_dim = 64;    // base model width N
  int mlp_dim = 128;     // base model FFN width N_m (slots per token)
  int num_tokens = 6;    // one per scoped FC layer
  int num_heads = 4;
  int hidden_dim = 128;  // FFN width inside the hypernetwork blocks
  int feature_rows = 65; // base sequence length
  double head_init_std = 0.02;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t output_size() const { return std::size_t(num_tokens) * std::size_t(mlp_dim); }
  static HypernetConfig for_model(const ViTConfig& base, const EditScope& scope, std::uint64_t seed = 0);
  bool operator==(const HypernetConfig&) const = default;
};

struct HypernetLayout {
  std::size_t tokens = 0;
  std::vector<nn::BlockParams> blocks;
  std::size_t norm_w = 0, norm_b = 0, head_w = 0, head_b = 0;
};

class HypernetState {
 public:
  HypernetState() = default;
  HypernetState(HypernetConfig cfg, ParamStore params);

  const HypernetConfig& config() const { return cfg_; }
  const HypernetLayout& layout() const { return layout_; }
  const ParamStore& params() const { return params_; }
  ParamStore& mutable_params() { return params_; }

 private:
  HypernetConfig cfg_;
  HypernetLayout layout_;
  ParamStore params_;
};

HypernetState init_hypernet(const HypernetConfig& cfg);

/// Continuous mask logits (1 x num_tokens*mlp_dim, layer-major) as a graph
/// node over the parameter vars `p`. `features` is (feature_rows x embed_dim).
ad::Var hypernet_graph(const HypernetState& state, const nn::ParamVars& p, const ad::Matrix& features);
/// Same, for a minibatch of feature matrices stacked along the rows; one
/// output row per sample.
ad::Var hypernet_graph_batch(const HypernetState& state, const nn::ParamVars& p,
                             const std::vector<const ad::Matrix*>& features);

ContinuousMask hypernet_forward(const HypernetState& state, const ad::Matrix& features);
/// Runs the frozen base to obtain the features first.
ContinuousMask hypernet_forward(const HypernetState& state, const BaseModel& base, const Image& image);

void save_hypernet(const std::string& path, const HypernetState& state,
                   const std::map<std::string, std::string>& extra = {});
HypernetState load_hypernet(const std::string& path, std::map<std::string, std::string>* header = nullptr);

}  // namespace vedit
