#include "vedit/edit.hpp"

#include "vedit/errors.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace vedit {

void EditConfig::validate() const {
  if (!(lr > 0) || !(temperature > 0)) throw std::invalid_argument("EditConfig: lr and temperature must be > 0");
  if (max_steps < 0) throw std::invalid_argument("EditConfig: max_steps must be >= 0");
  if (!(rms_alpha > 0 && rms_alpha < 1)) throw std::invalid_argument("EditConfig: rms_alpha must be in (0, 1)");
}

void EditRequest::validate(int num_classes) const {
  if (label < 0 || label >= num_classes) throw std::invalid_argument("EditRequest: label out of range");
  if (target_sparsity && !(*target_sparsity >= 0.0 && *target_sparsity <= 1.0)) {
    throw std::invalid_argument("EditRequest: target sparsity must be in [0, 1]");
  }
}

double cross_entropy(const ProbabilityVector& probs, int label) {
  if (label < 0 || std::size_t(label) >= probs.size()) throw std::invalid_argument("cross_entropy: label out of range");
  return -std::log(std::max(probs[std::size_t(label)], 1e-12));
}

BinaryMask edit_mask(const ContinuousMask& m, double k, double rho, std::optional<double> target_sparsity) {
  const RelaxedMask r = relax(m, k);
  if (target_sparsity) {
    // Sigmoid is monotone, so thresholding the continuous map selects the
    // same slots while avoiding saturation ties.
    const double t = sparsity_to_threshold(m, *target_sparsity);
    BinaryMask b = binarize(m, t);
    b.rho = std::isfinite(t) ? 1.0 / (1.0 + std::exp(-k * t)) : std::numeric_limits<double>::infinity();
    return b;
  }
  return binarize(r, rho);
}

EditOutcome tune_masked(const ScopedModel& model, const std::optional<BinaryMask>& mask,
                        const std::vector<const PreparedEpisode*>& samples, const EditConfig& cfg) {
  cfg.validate();
  if (samples.empty()) throw std::invalid_argument("tune_masked: no samples");
  const ad::Var mrow = mask ? model.mask_row(*mask) : ad::Var();
  std::vector<ad::Var> delta;
  for (std::size_t t = 0; t < model.num_tensors(); ++t) {
    const auto& w = model.base_value(t);
    delta.push_back(ad::Var::zeros(w.rows(), w.cols()));
  }
  std::vector<int> labels;
  std::vector<const ad::Matrix*> hidden;
  for (const auto* s : samples) {
    labels.push_back(s->label);
    hidden.push_back(&s->hidden.value());
  }
  RmsProp opt({cfg.lr, cfg.rms_alpha, 1e-8});
  EditOutcome out;
  for (;;) {
    std::vector<ad::Var> weights;
    {
      ad::NoGradGuard guard;
      weights = model.masked_weights(mrow, delta);
    }
    for (auto& w : weights) w = ad::Var::leaf(w.value());
    ad::Var logits = samples.size() == 1 ? model.logits(weights, samples.front()->hidden)
                                         : model.logits_batch(weights, hidden);
    ad::Var loss = nn::mean_cross_entropy(logits, labels);
    const double lv = loss.item();
    out.losses.push_back(lv);
    if (!std::isfinite(lv)) throw NumericalError("edit: non-finite loss at step " + std::to_string(out.steps));
    if (lv < cfg.stop_loss || out.steps >= cfg.max_steps) {
      out.final_loss = lv;
      for (auto& w : weights) w = w.detach();
      out.weights = std::move(weights);
      break;
    }
    std::vector<ad::Var> g = ad::grad(loss, weights);
    ad::NoGradGuard guard;
    for (std::size_t t = 0; t < g.size(); ++t) {
      delta[t] = ad::Var::constant(delta[t].value() - opt.direction(t, g[t].value()));
    }
    ++out.steps;
  }
  std::vector<ad::Matrix> d;
  for (const auto& v : delta) d.push_back(v.value());
  out.params = model.materialize(mask, d);
  out.mask = mask;
  if (mask) {
    out.updated_scalars = mask->ones() * std::size_t(model.base().config().embed_dim);
  } else {
    for (std::size_t t = 0; t < model.num_tensors(); ++t) out.updated_scalars += std::size_t(model.base_value(t).size());
  }
  const auto probs = model.probs(out.weights, hidden);
  out.success = true;
  for (std::size_t i = 0; i < probs.size(); ++i) out.success = out.success && argmax(probs[i]) == labels[i];
  return out;
}

void check_compatible(const HypernetState& state, const ScopedModel& model) {
  const auto& c = state.config();
  const auto& b = model.base().config();
  if (std::size_t(c.num_tokens) != model.scope().layers().size() || c.mlp_dim != b.mlp_dim ||
      c.embed_dim != b.embed_dim || c.feature_rows != b.seq_len()) {
    throw std::invalid_argument("hypernetwork does not match the model/scope (tokens " + std::to_string(c.num_tokens) +
                                ", slots per token " + std::to_string(c.mlp_dim) + ")");
  }
}

EditOutcome edit_once(const BaseModel& base, const HypernetState& state, const EditScope& scope,
                      const EditRequest& req, const EditConfig& cfg) {
  return edit_multi(base, state, scope, std::span<const EditRequest>(&req, 1), cfg);
}

EditOutcome edit_multi(const BaseModel& base, const HypernetState& state, const EditScope& scope,
                       std::span<const EditRequest> reqs, const EditConfig& cfg) {
  if (reqs.empty()) throw std::invalid_argument("edit_multi: no requests");
  const ScopedModel model(base, scope);
  check_compatible(state, model);
  std::vector<PreparedEpisode> prepared;
  std::vector<ContinuousMask> maps;
  for (const auto& r : reqs) {
    r.validate(base.config().num_classes);
    prepared.push_back(prepare_sample(model, r.image, r.label));
    maps.push_back(hypernet_forward(state, prepared.back().features));
  }
  const ContinuousMask avg = maps.size() == 1 ? maps.front() : average_masks(maps);
  const BinaryMask mask = edit_mask(avg, cfg.temperature, reqs.front().rho, reqs.front().target_sparsity);
  std::vector<const PreparedEpisode*> ptrs;
  for (const auto& p : prepared) ptrs.push_back(&p);
  return tune_masked(model, mask, ptrs, cfg);
}

void append_edit_log(const std::string& path, const EditLogEntry& e) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot open edit log " + path);
  nlohmann::json j = {{"request_id", e.request_id}, {"group_id", e.group_id}, {"rho", e.rho},
                      {"sparsity", e.sparsity},     {"steps", e.steps},       {"success", e.success},
                      {"final_loss", e.final_loss}};
  out << j.dump() << '\n';
}

}  // namespace vedit
