// Meta-training of the mask hypernetwork: a masked inner fine-tuning loop on
// pseudo-episodes and an outer update of the hypernetwork, either by
// differentiating through the unrolled inner loop or through an auxiliary
// mask that is distilled into the hypernetwork.
#pragma once

#include "vedit/hypernet.hpp"
#include "vedit/optim.hpp"
#include "vedit/pseudo_data.hpp"
#include "vedit/scoped_model.hpp"

#include <chrono>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace vedit {

enum class LossKind { kKl, kCrossEntropy };

struct InnerLoopConfig {
  int steps = 5;
  double lr = 0.001;
  double clip_norm = 10.0;
  void validate() const;
};

enum class MetaPath { kStandard, kDecoupled };
const char* to_string(MetaPath p);
MetaPath meta_path_from_string(const std::string& s);

struct OuterLoopConfig {
  double lr = 1e-4;          // hypernetwork RMSProp rate
  double rms_alpha = 0.99;
  double aux_lr = 0.1;       // Adam rate for the auxiliary mask
  int aux_steps = 10;
  double aux_init = 0.1;     // auxiliary mask starts uniform in [-aux_init, aux_init]
  bool aux_init_from_hypernet = false;
  double lambda = 1e-4;      // weight of the l1 term on the relaxed mask
  double temperature = 10.0;
  double clip_norm = 10.0;
  int batch_size = 8;
  int max_iters = 7000;
  void validate() const;
};

/// Episode with the frozen-base quantities the loops need, computed once.
struct PreparedEpisode {
  ad::Var hidden;       // state entering the scope's first block
  ad::Matrix features;  // last-stage tokens, hypernetwork input
  ProbabilityVector soft_label;
  int label = 0;
  LossKind loss = LossKind::kKl;
};

PreparedEpisode prepare_episode(const ScopedModel& model, const PseudoEpisode& ep);
PreparedEpisode prepare_sample(const ScopedModel& model, const Image& image, int label);

/// sum_c p log(p / q), logs floored at 1e-12.
double reliability_kl(const ProbabilityVector& soft_label, const ProbabilityVector& probs);
ad::Var reliability_kl_graph(const ProbabilityVector& soft_label, const ad::Var& logits);
ad::Var episode_loss(const PreparedEpisode& ep, const ad::Var& logits);

struct InnerLoopResult {
  std::vector<ad::Var> weights;  // phi^(T) for the scoped tensors
  std::vector<ad::Var> delta;    // accumulated raw gradients
  std::vector<double> losses;    // T + 1 entries, at phi^(0) .. phi^(T)
  ad::Var final_loss;
};

/// Delta^(t) = Delta^(t-1) - lr * grad l(phi^(t-1)), phi^(t) = phi0 + mask (.) Delta^(t).
/// `mask` is a 1 x slots row (relaxed or binary values) or undefined for a
/// dense update. With `differentiable` the result stays connected to `mask`.
InnerLoopResult inner_loop(const ScopedModel& model, const ad::Var& mask, const PreparedEpisode& ep,
                           const InnerLoopConfig& cfg, bool differentiable);

/// Parameter snapshot holding the inner-loop result.
ParamStore inner_loop_params(const ScopedModel& model, const InnerLoopResult& r);

struct OuterStepStats {
  double kl_loss = 0.0;   // mean episode loss at phi^(T) with the hypernetwork mask
  double sparsity = 0.0;  // mean fraction of relaxed entries below 0.5
  double l1 = 0.0;        // mean per-episode sum of the relaxed mask
  double aux_loss = 0.0;  // distillation loss (decoupled path)
  bool skipped = false;   // non-finite gradient
};

/// Mean episode loss at phi^(T) plus lambda times the mean l1 of the relaxed
/// mask, as a graph over the hypernetwork parameters `p`.
ad::Var standard_objective(const HypernetState& state, const nn::ParamVars& p, const ScopedModel& model,
                           const std::vector<PreparedEpisode>& batch, const InnerLoopConfig& inner,
                           const OuterLoopConfig& outer, OuterStepStats* stats = nullptr);

OuterStepStats outer_step_standard(HypernetState& state, RmsProp& opt, const ScopedModel& model,
                                   const std::vector<PreparedEpisode>& batch, const InnerLoopConfig& inner,
                                   const OuterLoopConfig& outer);

/// Fits one auxiliary mask per episode, then distills them into the
/// hypernetwork with the mean element-wise Bernoulli KL. The auxiliary
/// targets are returned through `aux_masks` when given.
OuterStepStats outer_step_decoupled(HypernetState& state, RmsProp& opt, const ScopedModel& model,
                                    const std::vector<PreparedEpisode>& batch, const InnerLoopConfig& inner,
                                    const OuterLoopConfig& outer, std::mt19937_64& rng,
                                    std::vector<ContinuousMask>* aux_masks = nullptr);

/// Mean over entries of KL(Bern(sigmoid(k t)) || Bern(sigmoid(k z))).
ad::Var bernoulli_kl_graph(const ad::Matrix& target_logits, const ad::Var& logits, double k);

struct MetaTrainRecord {
  int iteration = 0;
  double kl_loss = 0.0;
  double sparsity = 0.0;
  double aux_loss = 0.0;
  double l1 = 0.0;
  double wall_ms = 0.0;  // since the start of training
  bool skipped = false;
};

class MetaTrainLog {
 public:
  void append(const MetaTrainRecord& r);
  const std::vector<MetaTrainRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  std::string to_jsonl() const;
  void write_jsonl(const std::string& path) const;

 private:
  std::vector<MetaTrainRecord> records_;
};

struct MetaTrainConfig {
  InnerLoopConfig inner;
  OuterLoopConfig outer;
  MetaPath path = MetaPath::kStandard;
  EpisodeKind episodes = EpisodeKind::kCutMix;
  CutMixConfig cutmix;
  PgdBudget pgd;
  std::uint64_t seed = 0;
  std::string checkpoint_path;  // empty: no periodic checkpoints
  int checkpoint_every = 0;
};

/// Deterministic for a fixed seed. `on_iter` sees every record as it is logged.
HypernetState train_hypernetwork(const BaseModel& base, const LabeledImages& pool, const EditScope& scope,
                                 const HypernetConfig& hcfg, const MetaTrainConfig& cfg, MetaTrainLog* log = nullptr,
                                 const std::function<void(const MetaTrainRecord&)>& on_iter = {});

/// Mean of the first and last quarter of the logged KL losses.
std::pair<double, double> quarter_means(const MetaTrainLog& log);

}  // namespace vedit
