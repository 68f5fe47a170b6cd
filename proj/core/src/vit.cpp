#include "vedit/vit.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

namespace vedit {

void ViTConfig::validate() const {
  if (image_size < 1 || patch_size < 1 || channels < 1 || embed_dim < 1 || mlp_dim < 1 || num_blocks < 1 ||
      num_heads < 1 || num_classes < 1) {
    throw std::invalid_argument("ViTConfig: all dimensions must be >= 1");
  }
  if (image_size % patch_size != 0) throw std::invalid_argument("ViTConfig: image_size not divisible by patch_size");
  if (embed_dim % num_heads != 0) throw std::invalid_argument("ViTConfig: embed_dim not divisible by num_heads");
}

ParamStore init_vit_params(const ViTConfig& cfg, ViTLayout* layout) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  ParamStore s;
  ViTLayout lay;
  const int n = cfg.embed_dim;
  lay.patch_w = s.add({"patch_embed.weight", 0, Sublayer::kOther, TensorRole::kWeight},
                      nn::normal_matrix(n, cfg.patch_dim(), 0.02, rng));
  lay.patch_b = s.add({"patch_embed.bias", 0, Sublayer::kOther, TensorRole::kBias}, ad::Matrix::Zero(1, n));
  lay.cls = s.add({"cls_token", 0, Sublayer::kOther, TensorRole::kWeight}, nn::normal_matrix(1, n, 0.02, rng));
  lay.pos = s.add({"pos_embed", 0, Sublayer::kOther, TensorRole::kWeight},
                  nn::normal_matrix(cfg.seq_len(), n, 0.02, rng));
  for (int b = 1; b <= cfg.num_blocks; ++b) {
    lay.blocks.push_back(
        nn::add_block_params(s, "blocks." + std::to_string(b) + ".", b, n, cfg.mlp_dim, rng));
  }
  lay.norm_w = s.add({"norm.weight", 0, Sublayer::kOther, TensorRole::kWeight}, ad::Matrix::Ones(1, n));
  lay.norm_b = s.add({"norm.bias", 0, Sublayer::kOther, TensorRole::kBias}, ad::Matrix::Zero(1, n));
  lay.head_w = s.add({"head.weight", 0, Sublayer::kOther, TensorRole::kWeight},
                     nn::normal_matrix(cfg.num_classes, n, 0.02, rng));
  lay.head_b = s.add({"head.bias", 0, Sublayer::kOther, TensorRole::kBias}, ad::Matrix::Zero(1, cfg.num_classes));
  if (layout) *layout = lay;
  return s;
}

ViTLayout vit_layout(const ViTConfig& cfg, const ParamStore& params) {
  // Reference store gives the expected names and shapes.
  ViTLayout lay;
  const ParamStore ref = init_vit_params(cfg, &lay);
  if (ref.size() != params.size()) {
    throw std::invalid_argument("parameter count " + std::to_string(params.size()) + " does not match config (" +
                                std::to_string(ref.size()) + ")");
  }
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const auto j = params.find(ref.info(i).name);
    if (!j || *j != i) throw std::invalid_argument("parameter layout mismatch at " + ref.info(i).name);
    if (ref.value(i).rows() != params.value(i).rows() || ref.value(i).cols() != params.value(i).cols()) {
      throw std::invalid_argument("shape mismatch for " + ref.info(i).name);
    }
  }
  return lay;
}

BaseModel::BaseModel(ViTConfig cfg) : cfg_(cfg) { params_ = init_vit_params(cfg_, &layout_); }

BaseModel::BaseModel(ViTConfig cfg, ParamStore params) : cfg_(cfg), params_(std::move(params)) {
  cfg_.validate();
  layout_ = vit_layout(cfg_, params_);
}

BaseModel BaseModel::with_params(ParamStore params) const {
  BaseModel m = *this;
  if (params.size() != params_.size()) throw std::invalid_argument("with_params: parameter count mismatch");
  m.params_ = std::move(params);
  return m;
}

// ---------------------------------------------------------------------------

void check_image(const ViTConfig& cfg, const Image& img) {
  if (img.channels != cfg.channels || img.height != cfg.image_size || img.width != cfg.image_size ||
      img.data.size() != std::size_t(img.channels) * img.height * img.width) {
    throw std::invalid_argument("image " + std::to_string(img.channels) + "x" + std::to_string(img.height) + "x" +
                                std::to_string(img.width) + " does not match model input " +
                                std::to_string(cfg.channels) + "x" + std::to_string(cfg.image_size) + "x" +
                                std::to_string(cfg.image_size));
  }
}

ad::Var vit_embed(const ViTConfig& cfg, const ViTLayout& lay, const nn::ParamVars& p, const ad::Var& patches,
                  int seqs) {
  ad::Var tokens = nn::linear(patches, p[lay.patch_w], p[lay.patch_b]);
  if (seqs == 1) return ad::add(ad::concat_rows({p[lay.cls], tokens}), p[lay.pos]);
  const ad::Index m = cfg.num_patches(), len = m + 1, total = len * seqs;
  if (patches.rows() != m * seqs) throw std::invalid_argument("vit_embed: patch rows do not match batch size");
  std::vector<ad::Index> token_rows, cls_rows, pos_rows;
  for (ad::Index s = 0; s < seqs; ++s) {
    cls_rows.push_back(s * len);
    for (ad::Index i = 0; i < m; ++i) token_rows.push_back(s * len + 1 + i);
    for (ad::Index i = 0; i < len; ++i) pos_rows.push_back(i);
  }
  ad::Var h = ad::scatter_rows(tokens, std::move(token_rows), total);
  h = ad::add(h, ad::scatter_rows(ad::broadcast_rows(p[lay.cls], seqs), std::move(cls_rows), total));
  return ad::add(h, ad::gather_rows(p[lay.pos], std::move(pos_rows)));
}

ad::Var vit_blocks(const ViTConfig& cfg, const ViTLayout& lay, const nn::ParamVars& p, ad::Var h, int first, int last,
                   bool cls_only_last, int seqs) {
  for (int b = first; b <= last; ++b) {
    h = nn::transformer_block(p, lay.blocks[std::size_t(b - 1)], h, cfg.num_heads, cls_only_last && b == last, seqs);
  }
  return h;
}

ad::Var vit_head(const ViTLayout& lay, const nn::ParamVars& p, const ad::Var& h, int seqs) {
  ad::Var cls = h.rows() > seqs ? nn::first_rows(h, seqs) : h;
  return nn::linear(nn::layer_norm(cls, p[lay.norm_w], p[lay.norm_b]), p[lay.head_w], p[lay.head_b]);
}

ad::Var vit_logits_from(const ViTConfig& cfg, const ViTLayout& lay, const nn::ParamVars& p, const ad::Var& hidden,
                        int first_block, int seqs) {
  ad::Var h = hidden;
  if (first_block <= cfg.num_blocks) h = vit_blocks(cfg, lay, p, hidden, first_block, cfg.num_blocks, true, seqs);
  return vit_head(lay, p, h, seqs);
}

ad::Var vit_logits_batch(const ViTConfig& cfg, const ViTLayout& lay, const nn::ParamVars& p,
                         const std::vector<const Image*>& images) {
  if (images.empty()) throw std::invalid_argument("vit_logits_batch: empty batch");
  const int m = cfg.num_patches();
  ad::Matrix patches(ad::Index(m) * ad::Index(images.size()), cfg.patch_dim());
  for (std::size_t i = 0; i < images.size(); ++i) {
    check_image(cfg, *images[i]);
    patches.middleRows(ad::Index(i) * m, m) = patchify(*images[i], cfg.patch_size);
  }
  const int seqs = static_cast<int>(images.size());
  return vit_logits_from(cfg, lay, p, vit_embed(cfg, lay, p, ad::Var::constant(std::move(patches)), seqs), 1, seqs);
}

ProbabilityVector softmax(const ad::Matrix& logits) {
  ProbabilityVector p(std::size_t(logits.size()));
  const double mx = logits.maxCoeff();
  double z = 0.0;
  for (ad::Index i = 0; i < logits.size(); ++i) {
    p[std::size_t(i)] = std::exp(logits.data()[i] - mx);
    z += p[std::size_t(i)];
  }
  for (double& v : p) v /= z;
  return p;
}

int argmax(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

ForwardTrace trace_forward(const BaseModel& model, const Image& image, int capture_block) {
  const auto& cfg = model.config();
  check_image(cfg, image);
  if (capture_block < 1 || capture_block > cfg.num_blocks + 1) throw std::invalid_argument("bad capture block");
  ad::NoGradGuard guard;
  const auto& lay = model.layout();
  const auto& p = model.params().vars();
  ForwardTrace t;
  ad::Var h = vit_embed(cfg, lay, p, ad::Var::constant(patchify(image, cfg.patch_size)));
  for (int b = 1; b <= cfg.num_blocks; ++b) {
    if (b == capture_block) t.hidden = h.value();
    h = nn::transformer_block(p, lay.blocks[std::size_t(b - 1)], h, cfg.num_heads);
  }
  if (capture_block == cfg.num_blocks + 1) t.hidden = h.value();
  ad::Var feats = nn::layer_norm(h, p[lay.norm_w], p[lay.norm_b]);
  t.features = feats.value();
  ad::Var logits = nn::linear(ad::slice_rows(feats, 0, 1), p[lay.head_w], p[lay.head_b]);
  t.probs = softmax(logits.value());
  return t;
}

ProbabilityVector forward_probs(const BaseModel& model, const Image& image) {
  const auto& cfg = model.config();
  check_image(cfg, image);
  ad::NoGradGuard guard;
  const auto& p = model.params().vars();
  ad::Var h = vit_embed(cfg, model.layout(), p, ad::Var::constant(patchify(image, cfg.patch_size)));
  return softmax(vit_logits_from(cfg, model.layout(), p, h, 1).value());
}

int predict(const BaseModel& model, const Image& image) { return argmax(forward_probs(model, image)); }

FeatureVector extract_cls_feature(const BaseModel& model, const Image& image) {
  const ForwardTrace t = trace_forward(model, image, 1);
  return FeatureVector(t.features.row(0).data(), t.features.row(0).data() + t.features.cols());
}

// ---------------------------------------------------------------------------

EditScope::EditScope(std::vector<FcLayerRef> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw std::invalid_argument("EditScope: no layers");
}

EditScope EditScope::ffn_range(int first_block, int count) {
  std::vector<FcLayerRef> l;
  for (int b = first_block; b < first_block + count; ++b) {
    l.push_back({b, FcSlot::kFc1});
    l.push_back({b, FcSlot::kFc2});
  }
  return EditScope(std::move(l));
}

EditScope EditScope::default_for(const ViTConfig& cfg) {
  const int count = std::min(3, cfg.num_blocks);
  return ffn_range(cfg.num_blocks - count + 1, count);
}

EditScope EditScope::parse(const std::string& text) {
  // "ffn:A-B" is shorthand for both FC layers of blocks A..B.
  if (text.rfind("ffn:", 0) == 0) {
    const auto dash = text.find('-', 4);
    if (dash == std::string::npos) throw std::invalid_argument("EditScope::parse: expected ffn:A-B in '" + text + "'");
    const int a = std::stoi(text.substr(4, dash - 4));
    const int b = std::stoi(text.substr(dash + 1));
    if (b < a) throw std::invalid_argument("EditScope::parse: empty block range in '" + text + "'");
    return ffn_range(a, b - a + 1);
  }
  std::vector<FcLayerRef> l;
  std::istringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw std::invalid_argument("EditScope::parse: expected block:fcN in '" + item + "'");
    FcLayerRef r;
    r.block = std::stoi(item.substr(0, colon));
    const std::string slot = item.substr(colon + 1);
    if (slot == "fc1") {
      r.slot = FcSlot::kFc1;
    } else if (slot == "fc2") {
      r.slot = FcSlot::kFc2;
    } else {
      throw std::invalid_argument("EditScope::parse: unknown slot '" + slot + "'");
    }
    l.push_back(r);
  }
  return EditScope(std::move(l));
}

int EditScope::first_block() const {
  int b = layers_.at(0).block;
  for (const auto& r : layers_) b = std::min(b, r.block);
  return b;
}

void EditScope::validate(const ViTConfig& cfg) const {
  if (layers_.empty()) throw std::invalid_argument("EditScope: no layers");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].block < 1 || layers_[i].block > cfg.num_blocks) {
      throw std::invalid_argument("EditScope: block " + std::to_string(layers_[i].block) + " outside [1, " +
                                  std::to_string(cfg.num_blocks) + "]");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (layers_[i] == layers_[j]) throw std::invalid_argument("EditScope: duplicate layer");
    }
  }
}

std::string EditScope::describe() const {
  std::string s;
  for (const auto& r : layers_) {
    if (!s.empty()) s += ",";
    s += std::to_string(r.block) + (r.slot == FcSlot::kFc1 ? ":fc1" : ":fc2");
  }
  return s;
}

std::vector<std::size_t> scope_weight_indices(const ViTLayout& lay, const EditScope& scope) {
  std::vector<std::size_t> idx;
  for (const auto& r : scope.layers()) {
    const auto& b = lay.blocks.at(std::size_t(r.block - 1));
    idx.push_back(r.slot == FcSlot::kFc1 ? b.fc1_w : b.fc2_w);
  }
  return idx;
}

ParamDelta ParamDelta::zeros(const BaseModel& model, const EditScope& scope) {
  ParamDelta d;
  for (std::size_t i : scope_weight_indices(model.layout(), scope)) {
    const auto& w = model.params().value(i);
    d.tensors.push_back(ad::Matrix::Zero(w.rows(), w.cols()));
  }
  return d;
}

ParamStore apply_masked_delta(const ParamStore& params, const ViTLayout& lay, const ViTConfig& cfg,
                              const EditScope& scope, const BinaryMask& mask, const ParamDelta& delta) {
  scope.validate(cfg);
  if (mask.size() != scope.num_slots(cfg)) {
    throw std::invalid_argument("apply_masked_delta: mask has " + std::to_string(mask.size()) + " slots, scope needs " +
                                std::to_string(scope.num_slots(cfg)));
  }
  const auto idx = scope_weight_indices(lay, scope);
  if (delta.tensors.size() != idx.size()) throw std::invalid_argument("apply_masked_delta: delta does not cover scope");
  ParamStore out = params;
  const std::size_t width = std::size_t(cfg.mlp_dim);
  for (std::size_t l = 0; l < idx.size(); ++l) {
    const ad::Matrix& w = params.value(idx[l]);
    const ad::Matrix& d = delta.tensors[l];
    if (d.rows() != w.rows() || d.cols() != w.cols()) throw std::invalid_argument("apply_masked_delta: delta shape");
    const bool fc1 = scope.layers()[l].slot == FcSlot::kFc1;
    bool touched = false;
    ad::Matrix updated = w;
    for (std::size_t s = 0; s < width; ++s) {
      if (!mask.bits[l * width + s]) continue;
      touched = true;
      const auto i = static_cast<ad::Index>(s);
      if (fc1) {
        updated.row(i) += d.row(i);
      } else {
        updated.col(i) += d.col(i);
      }
    }
    if (touched) out.set(idx[l], std::move(updated));
  }
  return out;
}

}  // namespace vedit
