// A view of the frozen base model in which a chosen set of weight tensors is
// replaced. Everything before the first affected block is cached once per
// input, so repeated forwards (inner loops, edits, evaluation) only run the
// tail of the network.
#pragma once

#include "vedit/autodiff.hpp"
#include "vedit/masking.hpp"
#include "vedit/vit.hpp"

#include <optional>
#include <vector>

namespace vedit {

class ScopedModel {
 public:
  /// Structured FC scope: slot masks apply along the intermediate axis.
  ScopedModel(const BaseModel& base, EditScope scope);
  /// Arbitrary weight tensors, tuned densely (no slot structure).
  ScopedModel(const BaseModel& base, std::vector<std::size_t> tensors);

  const BaseModel& base() const { return *base_; }
  bool structured() const { return scope_.has_value(); }
  const EditScope& scope() const;
  int first_block() const { return first_block_; }
  const std::vector<std::size_t>& tensors() const { return tensors_; }
  std::size_t num_tensors() const { return tensors_.size(); }
  /// Mask slots (structured) or 0.
  std::size_t num_slots() const;
  const ad::Matrix& base_value(std::size_t t) const { return base_->params().value(tensors_[t]); }
  const ad::Var& base_var(std::size_t t) const { return base_->params().var(tensors_[t]); }
  std::vector<ad::Var> base_vars() const;

  /// Hidden state entering first_block() under the frozen base.
  ad::Matrix scope_input(const Image& image) const;
  std::vector<ad::Matrix> scope_inputs(const std::vector<const Image*>& images) const;

  /// Logits (1 x classes) with the scoped tensors replaced by `weights`.
  ad::Var logits(const std::vector<ad::Var>& weights, const ad::Var& hidden) const;
  /// One logits row per hidden state.
  ad::Var logits_batch(const std::vector<ad::Var>& weights, const std::vector<const ad::Matrix*>& hidden) const;
  /// Probabilities for many cached inputs in no-grad batches.
  std::vector<ProbabilityVector> probs(const std::vector<ad::Var>& weights,
                                       const std::vector<const ad::Matrix*>& hidden) const;

  /// W0 + broadcast(mask) (.) delta, per tensor. `mask` is a 1 x num_slots
  /// row; an undefined mask means every slot (dense update).
  std::vector<ad::Var> masked_weights(const ad::Var& mask, const std::vector<ad::Var>& delta) const;

  /// Full parameter snapshot after a masked update (bit-exact outside the mask).
  ParamStore materialize(const std::optional<BinaryMask>& mask, const std::vector<ad::Matrix>& delta) const;

  ad::Var mask_row(const BinaryMask& mask) const;

 private:
  const BaseModel* base_;
  std::optional<EditScope> scope_;
  std::vector<std::size_t> tensors_;
  int first_block_ = 1;
};

}  // namespace vedit
