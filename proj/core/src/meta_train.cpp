#include "vedit/meta_train.hpp"

#include "vedit/errors.hpp"
#include "vedit/io_util.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace vedit {

namespace {

constexpr double kLogFloor = 1e-12;

using Clock = std::chrono::steady_clock;

double clip_factor(const std::vector<ad::Var>& grads, double max_norm) {
  double s = 0.0;
  for (const auto& g : grads) s += g.value().squaredNorm();
  const double n = std::sqrt(s);
  if (!std::isfinite(n)) return std::numeric_limits<double>::quiet_NaN();
  return n > max_norm ? max_norm / n : 1.0;
}

bool all_finite(const std::vector<ad::Matrix>& gs) {
  for (const auto& g : gs)
    if (!g.allFinite()) return false;
  return true;
}

double below_half_fraction(const ad::Matrix& relaxed) {
  return double((relaxed.array() < 0.5).count()) / double(relaxed.size());
}

// log sigmoid(z) and log(1 - sigmoid(z)) for every entry of z, as two
// matrices shaped like z.
std::pair<ad::Var, ad::Var> log_sigmoid_pair(const ad::Var& z) {
  ad::Var col = ad::reshape(z, z.size(), 1);
  ad::Var ls = ad::log_softmax_rows(ad::concat_cols({col, ad::Var::zeros(z.size(), 1)}));
  return {ad::reshape(ad::slice_cols(ls, 0, 1), z.rows(), z.cols()),
          ad::reshape(ad::slice_cols(ls, 1, 1), z.rows(), z.cols())};
}

// Applies an RMSProp step to the hypernetwork from gradients over a trainable copy.
bool hyper_update(HypernetState& state, RmsProp& opt, ParamStore& p, std::vector<ad::Var>& gvars, double clip) {
  std::vector<ad::Matrix> grads;
  grads.reserve(gvars.size());
  for (auto& g : gvars) grads.push_back(g.value());
  if (!all_finite(grads)) return false;
  clip_global_norm(grads, clip);
  std::vector<ad::Matrix*> ptrs;
  for (std::size_t i = 0; i < p.size(); ++i) ptrs.push_back(&p.mutable_var(i).mutable_value());
  opt.step(ptrs, grads);
  state.mutable_params() = p.frozen_copy();
  return true;
}

}  // namespace

void InnerLoopConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("inner loop: steps must be >= 1");
  if (!(lr > 0)) throw std::invalid_argument("inner loop: lr must be > 0");
  if (!(clip_norm > 0)) throw std::invalid_argument("inner loop: clip_norm must be > 0");
}

void OuterLoopConfig::validate() const {
  if (!(lr > 0) || !(aux_lr > 0) || !(temperature > 0) || !(clip_norm > 0)) {
    throw std::invalid_argument("outer loop: rates, temperature and clip_norm must be > 0");
  }
  if (!(lambda >= 0)) throw std::invalid_argument("outer loop: lambda must be >= 0");
  if (aux_steps < 0 || batch_size < 1 || max_iters < 0 || aux_init < 0) {
    throw std::invalid_argument("outer loop: invalid counts");
  }
}

const char* to_string(MetaPath p) { return p == MetaPath::kStandard ? "standard" : "decoupled"; }

MetaPath meta_path_from_string(const std::string& s) {
  if (s == "standard") return MetaPath::kStandard;
  if (s == "decoupled") return MetaPath::kDecoupled;
  throw std::invalid_argument("unknown meta-training path '" + s + "'");
}

PreparedEpisode prepare_episode(const ScopedModel& model, const PseudoEpisode& ep) {
  const ForwardTrace t = trace_forward(model.base(), ep.perturbed, model.first_block());
  PreparedEpisode p;
  p.hidden = ad::Var::constant(t.hidden);
  p.features = t.features;
  p.soft_label = ep.soft_label;
  p.label = ep.clean_label;
  p.loss = ep.kind == EpisodeKind::kCutMix ? LossKind::kKl : LossKind::kCrossEntropy;
  return p;
}

PreparedEpisode prepare_sample(const ScopedModel& model, const Image& image, int label) {
  const ForwardTrace t = trace_forward(model.base(), image, model.first_block());
  PreparedEpisode p;
  p.hidden = ad::Var::constant(t.hidden);
  p.features = t.features;
  p.label = label;
  p.loss = LossKind::kCrossEntropy;
  return p;
}

double reliability_kl(const ProbabilityVector& p, const ProbabilityVector& q) {
  if (p.size() != q.size()) throw std::invalid_argument("reliability_kl: length mismatch");
  double kl = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    if (p[c] <= 0.0) continue;
    kl += p[c] * (std::log(std::max(p[c], kLogFloor)) - std::log(std::max(q[c], kLogFloor)));
  }
  return kl;
}

ad::Var reliability_kl_graph(const ProbabilityVector& soft, const ad::Var& logits) {
  if (ad::Index(soft.size()) != logits.cols() || logits.rows() != 1) {
    throw std::invalid_argument("reliability_kl: soft label does not match logits");
  }
  ad::Matrix s(1, logits.cols());
  double entropy_term = 0.0;
  for (std::size_t c = 0; c < soft.size(); ++c) {
    s(0, ad::Index(c)) = soft[c];
    if (soft[c] > 0) entropy_term += soft[c] * std::log(std::max(soft[c], kLogFloor));
  }
  return ad::add_scalar(ad::neg(ad::sum(ad::mul(ad::Var::constant(std::move(s)), ad::log_softmax_rows(logits)))),
                        entropy_term);
}

ad::Var episode_loss(const PreparedEpisode& ep, const ad::Var& logits) {
  return ep.loss == LossKind::kKl ? reliability_kl_graph(ep.soft_label, logits)
                                  : nn::mean_cross_entropy(logits, {ep.label});
}

InnerLoopResult inner_loop(const ScopedModel& model, const ad::Var& mask, const PreparedEpisode& ep,
                           const InnerLoopConfig& cfg, bool differentiable) {
  cfg.validate();
  if (mask.defined() && mask.cols() != ad::Index(model.num_slots())) {
    throw std::invalid_argument("inner_loop: mask has " + std::to_string(mask.cols()) + " slots, scope needs " +
                                std::to_string(model.num_slots()));
  }
  InnerLoopResult r;
  for (std::size_t t = 0; t < model.num_tensors(); ++t) {
    const auto& w = model.base_value(t);
    r.delta.push_back(differentiable ? ad::Var::leaf(ad::Matrix::Zero(w.rows(), w.cols()))
                                     : ad::Var::zeros(w.rows(), w.cols()));
  }
  for (int step = 0; step <= cfg.steps; ++step) {
    std::vector<ad::Var> weights = model.masked_weights(mask, r.delta);
    if (!differentiable) {
      for (auto& w : weights) w = ad::Var::leaf(w.value());
    }
    ad::Var loss = episode_loss(ep, model.logits(weights, ep.hidden));
    const double lv = loss.item();
    r.losses.push_back(lv);
    if (!std::isfinite(lv)) throw NumericalError("inner_loop: non-finite loss at step " + std::to_string(step));
    if (step == cfg.steps) {
      r.weights = std::move(weights);
      r.final_loss = loss;
      break;
    }
    std::vector<ad::Var> g = ad::grad(loss, weights, differentiable);
    const double c = clip_factor(g, cfg.clip_norm);
    if (!std::isfinite(c)) throw NumericalError("inner_loop: non-finite gradient at step " + std::to_string(step));
    for (std::size_t t = 0; t < g.size(); ++t) {
      ad::GradModeGuard mode(differentiable);
      r.delta[t] = ad::sub(r.delta[t], ad::scale(g[t], cfg.lr * c));
    }
  }
  return r;
}

ParamStore inner_loop_params(const ScopedModel& model, const InnerLoopResult& r) {
  ParamStore out = model.base().params();
  for (std::size_t t = 0; t < model.num_tensors(); ++t) out.set(model.tensors()[t], r.weights[t].value());
  return out;
}

ad::Var standard_objective(const HypernetState& state, const nn::ParamVars& p, const ScopedModel& model,
                           const std::vector<PreparedEpisode>& batch, const InnerLoopConfig& inner,
                           const OuterLoopConfig& outer, OuterStepStats* stats) {
  if (batch.empty()) throw std::invalid_argument("standard_objective: empty batch");
  std::vector<const ad::Matrix*> feats;
  for (const auto& ep : batch) feats.push_back(&ep.features);
  ad::Var relaxed = ad::sigmoid(ad::scale(hypernet_graph_batch(state, p, feats), outer.temperature));
  ad::Var total;
  double kl = 0.0;
  for (std::size_t e = 0; e < batch.size(); ++e) {
    InnerLoopResult r = inner_loop(model, ad::slice_rows(relaxed, ad::Index(e), 1), batch[e], inner, true);
    total = total.defined() ? ad::add(total, r.final_loss) : r.final_loss;
    kl += r.losses.back();
  }
  const double n = double(batch.size());
  ad::Var l1 = ad::scale(ad::sum(relaxed), 1.0 / n);
  if (stats) {
    stats->kl_loss = kl / n;
    stats->l1 = l1.item();
    stats->sparsity = below_half_fraction(relaxed.value());
  }
  return ad::add(ad::scale(total, 1.0 / n), ad::scale(l1, outer.lambda));
}

OuterStepStats outer_step_standard(HypernetState& state, RmsProp& opt, const ScopedModel& model,
                                   const std::vector<PreparedEpisode>& batch, const InnerLoopConfig& inner,
                                   const OuterLoopConfig& outer) {
  outer.validate();
  if (batch.empty()) throw std::invalid_argument("outer_step_standard: empty batch");
  ParamStore p = state.params().trainable_copy();
  OuterStepStats st;
  ad::Var objective = standard_objective(state, p.vars(), model, batch, inner, outer, &st);
  std::vector<ad::Var> g = ad::grad(objective, p.vars());
  st.skipped = !hyper_update(state, opt, p, g, outer.clip_norm);
  return st;
}

ad::Var bernoulli_kl_graph(const ad::Matrix& target_logits, const ad::Var& logits, double k) {
  if (target_logits.rows() != logits.rows() || target_logits.cols() != logits.cols()) {
    throw std::invalid_argument("bernoulli_kl: shape mismatch");
  }
  ad::Matrix t, log_t, log_1mt;
  {
    ad::NoGradGuard guard;
    auto [lt, l1t] = log_sigmoid_pair(ad::Var::constant(k * target_logits));
    log_t = lt.value();
    log_1mt = l1t.value();
    t = log_t.array().exp().matrix();
  }
  auto [lq, l1q] = log_sigmoid_pair(ad::scale(logits, k));
  const ad::Matrix one_minus_t = (1.0 - t.array()).matrix();
  // t (log t - log q) + (1 - t)(log(1 - t) - log(1 - q)), averaged.
  ad::Var per = ad::add(ad::mul(ad::Var::constant(t), ad::sub(ad::Var::constant(log_t), lq)),
                        ad::mul(ad::Var::constant(one_minus_t), ad::sub(ad::Var::constant(log_1mt), l1q)));
  return ad::scale(ad::sum(per), 1.0 / double(logits.size()));
}

OuterStepStats outer_step_decoupled(HypernetState& state, RmsProp& opt, const ScopedModel& model,
                                    const std::vector<PreparedEpisode>& batch, const InnerLoopConfig& inner,
                                    const OuterLoopConfig& outer, std::mt19937_64& rng,
                                    std::vector<ContinuousMask>* aux_masks) {
  outer.validate();
  if (batch.empty()) throw std::invalid_argument("outer_step_decoupled: empty batch");
  const std::size_t slots = model.num_slots();
  const double k = outer.temperature;
  OuterStepStats st;
  std::vector<const ad::Matrix*> feats;
  for (const auto& ep : batch) feats.push_back(&ep.features);

  ad::Matrix hyper_logits;
  {
    ad::NoGradGuard guard;
    hyper_logits = hypernet_graph_batch(state, state.params().vars(), feats).value();
  }
  const ad::Matrix relaxed = (1.0 / (1.0 + (-k * hyper_logits.array()).exp())).matrix();
  st.sparsity = below_half_fraction(relaxed);
  st.l1 = relaxed.sum() / double(batch.size());

  ad::Matrix targets(ad::Index(batch.size()), ad::Index(slots));
  std::uniform_real_distribution<double> init(-outer.aux_init, outer.aux_init);
  for (std::size_t e = 0; e < batch.size(); ++e) {
    // Episode loss under the hypernetwork's own mask, for the log.
    st.kl_loss += inner_loop(model, ad::Var::constant(relaxed.row(ad::Index(e))), batch[e], inner, false).losses.back();

    ad::Matrix aux(1, ad::Index(slots));
    if (outer.aux_init_from_hypernet) {
      aux = hyper_logits.row(ad::Index(e));
    } else {
      for (ad::Index i = 0; i < aux.size(); ++i) aux(0, i) = init(rng);
    }
    Adam adam({outer.aux_lr});
    for (int s = 0; s < outer.aux_steps; ++s) {
      ad::Var m = ad::Var::leaf(aux);
      ad::Var mr = ad::sigmoid(ad::scale(m, k));
      InnerLoopResult r = inner_loop(model, mr, batch[e], inner, true);
      ad::Var obj = ad::add(r.final_loss, ad::scale(ad::sum(mr), outer.lambda));
      ad::Matrix g = ad::grad(obj, {m})[0].value();
      if (!g.allFinite()) {
        st.skipped = true;
        break;
      }
      const double gn = g.norm();
      if (gn > outer.clip_norm) g *= outer.clip_norm / gn;
      aux -= adam.direction(0, g);
    }
    targets.row(ad::Index(e)) = aux;
    if (aux_masks) {
      aux_masks->push_back({std::vector<double>(aux.data(), aux.data() + aux.size()), MaskSource::kAuxiliary});
    }
  }
  st.kl_loss /= double(batch.size());
  if (st.skipped) return st;

  ParamStore p = state.params().trainable_copy();
  ad::Var distill = bernoulli_kl_graph(targets, hypernet_graph_batch(state, p.vars(), feats), k);
  st.aux_loss = distill.item();
  std::vector<ad::Var> g = ad::grad(distill, p.vars());
  st.skipped = !hyper_update(state, opt, p, g, outer.clip_norm);
  return st;
}

void MetaTrainLog::append(const MetaTrainRecord& r) {
  if (!records_.empty()) {
    if (r.iteration <= records_.back().iteration) throw std::invalid_argument("MetaTrainLog: iterations must increase");
    if (r.wall_ms < records_.back().wall_ms) throw std::invalid_argument("MetaTrainLog: timestamps must not decrease");
  }
  records_.push_back(r);
}

std::string MetaTrainLog::to_jsonl() const {
  std::ostringstream out;
  for (const auto& r : records_) {
    nlohmann::json j = {{"iteration", r.iteration}, {"kl_loss", r.kl_loss}, {"sparsity", r.sparsity},
                        {"aux_loss", r.aux_loss}, {"l1", r.l1},         {"wall_ms", r.wall_ms},
                        {"skipped", r.skipped}};
    out << j.dump() << '\n';
  }
  return out.str();
}

void MetaTrainLog::write_jsonl(const std::string& path) const {
  const std::string body = to_jsonl();
  io::write_atomic(path, [&](std::ostream& out) { out << body; });
}

HypernetState train_hypernetwork(const BaseModel& base, const LabeledImages& pool, const EditScope& scope,
                                 const HypernetConfig& hcfg, const MetaTrainConfig& cfg, MetaTrainLog* log,
                                 const std::function<void(const MetaTrainRecord&)>& on_iter) {
  cfg.inner.validate();
  cfg.outer.validate();
  if (std::size_t(hcfg.num_tokens) != scope.layers().size()) {
    throw std::invalid_argument("train_hypernetwork: hypernetwork tokens do not match the scope");
  }
  HypernetState state = init_hypernet(hcfg);
  if (cfg.outer.max_iters == 0) return state;
  const ScopedModel model(base, scope);
  RmsProp opt({cfg.outer.lr, cfg.outer.rms_alpha, 1e-8});
  std::mt19937_64 episode_rng(cfg.seed ^ 0x65706973ULL);
  std::mt19937_64 aux_rng(cfg.seed ^ 0x61757869ULL);
  const auto start = Clock::now();
  PgdStats pgd_stats;

  for (int it = 1; it <= cfg.outer.max_iters; ++it) {
    std::vector<PreparedEpisode> batch;
    while (int(batch.size()) < cfg.outer.batch_size) {
      if (cfg.episodes == EpisodeKind::kCutMix) {
        batch.push_back(prepare_episode(model, make_cutmix_episode(pool, base, episode_rng, cfg.cutmix)));
      } else if (auto ep = make_pgd_episode(pool, base, episode_rng, cfg.pgd, 5, &pgd_stats)) {
        batch.push_back(prepare_episode(model, *ep));
      } else if (pgd_stats.attempts > 50 && pgd_stats.kept == 0) {
        throw NumericalError("train_hypernetwork: PGD never changed a prediction");
      }
    }
    const OuterStepStats st = cfg.path == MetaPath::kStandard
                                  ? outer_step_standard(state, opt, model, batch, cfg.inner, cfg.outer)
                                  : outer_step_decoupled(state, opt, model, batch, cfg.inner, cfg.outer, aux_rng);
    MetaTrainRecord rec;
    rec.iteration = it;
    rec.kl_loss = st.kl_loss;
    rec.sparsity = st.sparsity;
    rec.aux_loss = st.aux_loss;
    rec.l1 = st.l1;
    rec.skipped = st.skipped;
    rec.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    if (log) log->append(rec);
    if (on_iter) on_iter(rec);
    if (!cfg.checkpoint_path.empty() && cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0) {
      save_hypernet(cfg.checkpoint_path, state, {{"iteration", std::to_string(it)}});
    }
  }
  return state;
}

std::pair<double, double> quarter_means(const MetaTrainLog& log) {
  const auto& r = log.records();
  const std::size_t q = r.size() / 4;
  if (q == 0) throw std::invalid_argument("quarter_means: need at least four records");
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < q; ++i) {
    first += r[i].kl_loss;
    last += r[r.size() - q + i].kl_loss;
  }
  return {first / double(q), last / double(q)};
}

}  // namespace vedit
