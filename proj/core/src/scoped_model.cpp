#include "vedit/scoped_model.hpp"

#include <algorithm>
#include <stdexcept>

namespace vedit {

namespace {

constexpr std::size_t kBatch = 64;

}  // namespace

ScopedModel::ScopedModel(const BaseModel& base, EditScope scope) : base_(&base), scope_(std::move(scope)) {
  scope_->validate(base.config());
  tensors_ = scope_weight_indices(base.layout(), *scope_);
  first_block_ = scope_->first_block();
}

ScopedModel::ScopedModel(const BaseModel& base, std::vector<std::size_t> tensors)
    : base_(&base), tensors_(std::move(tensors)) {
  if (tensors_.empty()) throw std::invalid_argument("ScopedModel: no tensors");
  first_block_ = base.config().num_blocks + 1;
  for (std::size_t t : tensors_) {
    const int b = base.params().info(t).block;
    if (b < 1) throw std::invalid_argument("ScopedModel: tensor '" + base.params().info(t).name + "' is outside the blocks");
    first_block_ = std::min(first_block_, b);
  }
}

const EditScope& ScopedModel::scope() const {
  if (!scope_) throw std::logic_error("ScopedModel: not a structured scope");
  return *scope_;
}

std::size_t ScopedModel::num_slots() const { return scope_ ? scope_->num_slots(base_->config()) : 0; }

std::vector<ad::Var> ScopedModel::base_vars() const {
  std::vector<ad::Var> v;
  for (std::size_t t : tensors_) v.push_back(base_->params().var(t));
  return v;
}

ad::Matrix ScopedModel::scope_input(const Image& image) const {
  return trace_forward(*base_, image, first_block_).hidden;
}

std::vector<ad::Matrix> ScopedModel::scope_inputs(const std::vector<const Image*>& images) const {
  std::vector<ad::Matrix> out;
  out.reserve(images.size());
  const auto& cfg = base_->config();
  const auto& p = base_->params().vars();
  ad::NoGradGuard guard;
  for (std::size_t start = 0; start < images.size(); start += kBatch) {
    std::vector<const Image*> batch(images.begin() + long(start),
                                    images.begin() + long(std::min(images.size(), start + kBatch)));
    const int seqs = static_cast<int>(batch.size());
    const int m = cfg.num_patches(), len = cfg.seq_len();
    ad::Matrix patches(ad::Index(m) * seqs, cfg.patch_dim());
    for (int i = 0; i < seqs; ++i) {
      check_image(cfg, *batch[std::size_t(i)]);
      patches.middleRows(ad::Index(i) * m, m) = patchify(*batch[std::size_t(i)], cfg.patch_size);
    }
    ad::Var h = vit_embed(cfg, base_->layout(), p, ad::Var::constant(std::move(patches)), seqs);
    if (first_block_ > 1) h = vit_blocks(cfg, base_->layout(), p, h, 1, first_block_ - 1, false, seqs);
    for (int i = 0; i < seqs; ++i) out.push_back(h.value().middleRows(ad::Index(i) * len, len));
  }
  return out;
}

namespace {

nn::ParamVars substitute(const BaseModel& base, const std::vector<std::size_t>& idx, const std::vector<ad::Var>& w) {
  if (w.size() != idx.size()) throw std::invalid_argument("ScopedModel: expected " + std::to_string(idx.size()) + " tensors");
  nn::ParamVars p = base.params().vars();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const ad::Matrix& ref = p[idx[i]].value();
    if (w[i].rows() != ref.rows() || w[i].cols() != ref.cols()) throw std::invalid_argument("ScopedModel: tensor shape");
    p[idx[i]] = w[i];
  }
  return p;
}

}  // namespace

ad::Var ScopedModel::logits(const std::vector<ad::Var>& weights, const ad::Var& hidden) const {
  const nn::ParamVars p = substitute(*base_, tensors_, weights);
  return vit_logits_from(base_->config(), base_->layout(), p, hidden, first_block_);
}

ad::Var ScopedModel::logits_batch(const std::vector<ad::Var>& weights,
                                  const std::vector<const ad::Matrix*>& hidden) const {
  if (hidden.empty()) throw std::invalid_argument("ScopedModel: empty batch");
  const nn::ParamVars p = substitute(*base_, tensors_, weights);
  const ad::Index len = hidden.front()->rows();
  ad::Matrix h(len * ad::Index(hidden.size()), hidden.front()->cols());
  for (std::size_t i = 0; i < hidden.size(); ++i) h.middleRows(ad::Index(i) * len, len) = *hidden[i];
  return vit_logits_from(base_->config(), base_->layout(), p, ad::Var::constant(std::move(h)), first_block_,
                         static_cast<int>(hidden.size()));
}

std::vector<ProbabilityVector> ScopedModel::probs(const std::vector<ad::Var>& weights,
                                                  const std::vector<const ad::Matrix*>& hidden) const {
  std::vector<ProbabilityVector> out;
  out.reserve(hidden.size());
  ad::NoGradGuard guard;
  for (std::size_t start = 0; start < hidden.size(); start += kBatch) {
    std::vector<const ad::Matrix*> batch(hidden.begin() + long(start),
                                         hidden.begin() + long(std::min(hidden.size(), start + kBatch)));
    const ad::Matrix l = logits_batch(weights, batch).value();
    for (ad::Index r = 0; r < l.rows(); ++r) out.push_back(softmax(l.row(r)));
  }
  return out;
}

std::vector<ad::Var> ScopedModel::masked_weights(const ad::Var& mask, const std::vector<ad::Var>& delta) const {
  if (delta.size() != tensors_.size()) throw std::invalid_argument("ScopedModel: delta does not cover the scope");
  std::vector<ad::Var> out;
  out.reserve(delta.size());
  if (!mask.defined()) {
    for (std::size_t t = 0; t < delta.size(); ++t) out.push_back(ad::add(base_var(t), delta[t]));
    return out;
  }
  if (!scope_) throw std::invalid_argument("ScopedModel: slot masks need a structured scope");
  const ad::Index width = base_->config().mlp_dim;
  if (mask.rows() != 1 || mask.cols() != ad::Index(num_slots())) {
    throw std::invalid_argument("ScopedModel: mask has " + std::to_string(mask.size()) + " slots, scope needs " +
                                std::to_string(num_slots()));
  }
  for (std::size_t t = 0; t < delta.size(); ++t) {
    ad::Var m = ad::slice_cols(mask, ad::Index(t) * width, width);
    const bool fc1 = scope_->layers()[t].slot == FcSlot::kFc1;
    ad::Var gated = fc1 ? ad::mul_col(delta[t], ad::transpose(m)) : ad::mul_row(delta[t], m);
    out.push_back(ad::add(base_var(t), gated));
  }
  return out;
}

ParamStore ScopedModel::materialize(const std::optional<BinaryMask>& mask, const std::vector<ad::Matrix>& delta) const {
  if (mask) {
    ParamDelta d{delta};
    return apply_masked_delta(base_->params(), base_->layout(), base_->config(), scope(), *mask, d);
  }
  if (delta.size() != tensors_.size()) throw std::invalid_argument("ScopedModel: delta does not cover the scope");
  ParamStore out = base_->params();
  for (std::size_t t = 0; t < tensors_.size(); ++t) out.set(tensors_[t], base_value(t) + delta[t]);
  return out;
}

ad::Var ScopedModel::mask_row(const BinaryMask& mask) const {
  ad::Matrix m(1, ad::Index(mask.size()));
  for (std::size_t i = 0; i < mask.size(); ++i) m(0, ad::Index(i)) = mask.bits[i] ? 1.0 : 0.0;
  return ad::Var::constant(std::move(m));
}

}  // namespace vedit
