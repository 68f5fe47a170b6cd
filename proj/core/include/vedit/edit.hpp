// Test-time editing: a hypernetwork mask thresholded to a binary slot
// selection, then masked fine-tuning on the failure sample(s) until the
// cross-entropy drops below a stop value or the step budget runs out.
#pragma once

#include "vedit/hypernet.hpp"
#include "vedit/meta_train.hpp"
#include "vedit/scoped_model.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace vedit {

struct EditConfig {
  double lr = 5e-4;  // RMSProp rate
  double rms_alpha = 0.99;
  int max_steps = 100;
  double stop_loss = 0.01;
  double temperature = kDefaultTemperature;
  void validate() const;
};

struct EditRequest {
  Image image;
  int label = 0;
  /// Threshold on the relaxed mask; ignored when target_sparsity is set.
  double rho = 0.5;
  std::optional<double> target_sparsity;
  std::string id;
  std::string group;
  void validate(int num_classes) const;
};

struct EditOutcome {
  ParamStore params;              // edited snapshot
  std::vector<ad::Var> weights;   // edited scoped tensors
  std::optional<BinaryMask> mask; // absent for dense tuning
  int steps = 0;
  double final_loss = 0.0;
  bool success = false;
  std::vector<double> losses;     // loss before each step, then the final loss
  std::size_t updated_scalars = 0;
};

/// -log p(y), floored at 1e-12 inside the log.
double cross_entropy(const ProbabilityVector& probs, int label);

/// Binary mask from a continuous map: relax with `k`, then threshold at
/// `rho` or at the threshold hitting `target_sparsity`.
BinaryMask edit_mask(const ContinuousMask& m, double k, double rho, std::optional<double> target_sparsity);

/// Masked accumulation with RMSProp on the mean cross-entropy of `samples`.
/// An absent mask tunes every scoped scalar.
EditOutcome tune_masked(const ScopedModel& model, const std::optional<BinaryMask>& mask,
                        const std::vector<const PreparedEpisode*>& samples, const EditConfig& cfg);

void check_compatible(const HypernetState& state, const ScopedModel& model);

EditOutcome edit_once(const BaseModel& base, const HypernetState& state, const EditScope& scope,
                      const EditRequest& req, const EditConfig& cfg);
/// One mask from the averaged continuous maps of all requests; the loss is
/// the mean cross-entropy over them. Thresholding follows the first request.
EditOutcome edit_multi(const BaseModel& base, const HypernetState& state, const EditScope& scope,
                       std::span<const EditRequest> reqs, const EditConfig& cfg);

struct EditLogEntry {
  std::string request_id;
  std::string group_id;
  double rho = 0.0;
  double sparsity = 0.0;
  int steps = 0;
  bool success = false;
  double final_loss = 0.0;
};

/// Appends one JSON object per line.
void append_edit_log(const std::string& path, const EditLogEntry& e);

}  // namespace vedit
