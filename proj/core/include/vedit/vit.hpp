// The editable vision-transformer classifier.
#pragma once

#include "vedit/autodiff.hpp"
#include "vedit/image.hpp"
#include "vedit/masking.hpp"
#include "vedit/nn.hpp"
#include "vedit/params.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace vedit {

using ProbabilityVector = std::vector<double>;
using FeatureVector = std::vector<double>;

struct ViTConfig {
  int image_size = 32;
  int patch_size = 4;
  int channels = 3;
  int embed_dim = 64;
  int mlp_dim = 128;
  int num_blocks = 6;
  int num_heads = 4;
  int num_classes = 10;
  std::uint64_t seed = 0;

  void validate() const;
  int grid() const { return image_size / patch_size; }
  int num_patches() const { return grid() * grid(); }
  int seq_len() const { return num_patches() + 1; }
  int patch_dim() const { return channels * patch_size * patch_size; }
  bool operator==(const ViTConfig&) const = default;
};

struct ViTLayout {
  std::size_t patch_w = 0, patch_b = 0, cls = 0, pos = 0;
  std::vector<nn::BlockParams> blocks;  // blocks[b - 1] for 1-based block b
  std::size_t norm_w = 0, norm_b = 0, head_w = 0, head_b = 0;
};

/// Builds the parameter store (N(0, 0.02) weights, zero biases, unit norms).
ParamStore init_vit_params(const ViTConfig& cfg, ViTLayout* layout = nullptr);
/// Layout of a store produced by init_vit_params; validates names and shapes.
ViTLayout vit_layout(const ViTConfig& cfg, const ParamStore& params);

class BaseModel {
 public:
  explicit BaseModel(ViTConfig cfg);
  BaseModel(ViTConfig cfg, ParamStore params);

  const ViTConfig& config() const { return cfg_; }
  const ViTLayout& layout() const { return layout_; }
  const ParamStore& params() const { return params_; }
  /// Same architecture, different parameter values (e.g. an edited snapshot).
  BaseModel with_params(ParamStore params) const;

  double heldout_accuracy = 0.0;

 private:
  ViTConfig cfg_;
  ViTLayout layout_;
  ParamStore params_;
};

// ---------------------------------------------------------------------------
// Graph-level forward pieces. `p` holds one Var per parameter entry.

void check_image(const ViTConfig& cfg, const Image& img);
/// Token sequence entering block 1: [cls; patches W^T + b] + pos. Several
/// images may be stacked (`seqs` of them, num_patches rows each).
ad::Var vit_embed(const ViTConfig& cfg, const ViTLayout& lay, const nn::ParamVars& p, const ad::Var& patches,
                  int seqs = 1);
/// Runs blocks first..last (1-based, inclusive). `cls_only_last` trims the
/// final block to the [cls] row of each sequence.
ad::Var vit_blocks(const ViTConfig& cfg, const ViTLayout& lay, const nn::ParamVars& p, ad::Var h, int first,
                   int last, bool cls_only_last = false, int seqs = 1);
/// Final norm on the [cls] rows followed by the classification head.
ad::Var vit_head(const ViTLayout& lay, const nn::ParamVars& p, const ad::Var& h, int seqs = 1);
/// Logits (seqs x classes) from the hidden state entering `first_block`.
ad::Var vit_logits_from(const ViTConfig& cfg, const ViTLayout& lay, const nn::ParamVars& p, const ad::Var& hidden,
                        int first_block, int seqs = 1);
/// Logits for a batch of images, one row each.
ad::Var vit_logits_batch(const ViTConfig& cfg, const ViTLayout& lay, const nn::ParamVars& p,
                         const std::vector<const Image*>& images);

// ---------------------------------------------------------------------------
// Inference on a fixed snapshot (no graph recorded).

ProbabilityVector forward_probs(const BaseModel& model, const Image& image);
int predict(const BaseModel& model, const Image& image);
/// Last-stage [cls] feature after the final norm; length embed_dim.
FeatureVector extract_cls_feature(const BaseModel& model, const Image& image);

/// Everything the editing machinery needs from one base forward pass.
struct ForwardTrace {
  ad::Matrix hidden;    // state entering `capture_block`
  ad::Matrix features;  // (seq_len x embed_dim) last stage after the final norm
  ProbabilityVector probs;
};
ForwardTrace trace_forward(const BaseModel& model, const Image& image, int capture_block);

ProbabilityVector softmax(const ad::Matrix& logits_row);
int argmax(const std::vector<double>& v);

// ---------------------------------------------------------------------------
// Editing scope and masked parameter updates.

enum class FcSlot { kFc1, kFc2 };

struct FcLayerRef {
  int block = 1;  // 1-based
  FcSlot slot = FcSlot::kFc1;
  bool operator==(const FcLayerRef&) const = default;
};

/// The FC layers whose weights may change. Each layer contributes mlp_dim
/// mask slots: slot i gates row i of an FC1 weight or column i of an FC2
/// weight.
class EditScope {
 public:
  EditScope() = default;
  explicit EditScope(std::vector<FcLayerRef> layers);
  /// FC1 and FC2 of `count` consecutive blocks starting at `first_block`.
  static EditScope ffn_range(int first_block, int count = 3);
  /// The last (up to) three FFNs of the model.
  static EditScope default_for(const ViTConfig& cfg);
  static EditScope parse(const std::string& text);

  const std::vector<FcLayerRef>& layers() const { return layers_; }
  int first_block() const;
  std::size_t num_slots(const ViTConfig& cfg) const { return layers_.size() * std::size_t(cfg.mlp_dim); }
  std::size_t scoped_param_count(const ViTConfig& cfg) const {
    return layers_.size() * std::size_t(cfg.mlp_dim) * std::size_t(cfg.embed_dim);
  }
  void validate(const ViTConfig& cfg) const;
  std::string describe() const;
  bool operator==(const EditScope&) const = default;

 private:
  std::vector<FcLayerRef> layers_;
};

/// Parameter index of each scoped weight, in scope order.
std::vector<std::size_t> scope_weight_indices(const ViTLayout& lay, const EditScope& scope);

/// One dense update per scoped weight tensor, in scope order.
struct ParamDelta {
  std::vector<ad::Matrix> tensors;
  static ParamDelta zeros(const BaseModel& model, const EditScope& scope);
};

/// phi + mask (.) delta with the mask broadcast along the structured axis.
/// Entries outside selected slots are copied bit-exactly.
ParamStore apply_masked_delta(const ParamStore& params, const ViTLayout& lay, const ViTConfig& cfg,
                              const EditScope& scope, const BinaryMask& mask, const ParamDelta& delta);

}  // namespace vedit
