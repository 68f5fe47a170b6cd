// Desk-scale editing benchmark: failure mining between two classifiers,
// corruption-shift groups, a near-boundary locality pool, and the
// reliability / generalization / locality metrics over them.
#pragma once

#include "vedit/desk_data.hpp"
#include "vedit/edit.hpp"
#include "vedit/hypernet.hpp"
#include "vedit/scoped_model.hpp"

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace vedit::bench {

class ClassDistance {
 public:
  explicit ClassDistance(ad::Matrix d);
  static ClassDistance zero_one(int num_classes);
  /// Two-level hierarchy: 0 within a class, 2 between siblings, 4 otherwise.
  static ClassDistance tree(std::span<const int> parent_of_label);
  static ClassDistance desk_tree();
  double operator()(int a, int b) const;
  int num_classes() const { return int(d_.rows()); }

 private:
  ad::Matrix d_;
};

struct MinedSample {
  std::size_t pool_index = 0;
  double score = 0.0;
  int base_pred = 0;
  int strong_pred = 0;
};

/// Greedy selection of the n most discrepant pool items; ties go to the
/// lower pool index.
std::vector<MinedSample> mad_mine(std::span<const int> base_pred, std::span<const int> strong_pred,
                                  const ClassDistance& dist, std::size_t n);
std::vector<MinedSample> mad_mine(const std::vector<Image>& pool, const BaseModel& base, const BaseModel& strong,
                                  const ClassDistance& dist, std::size_t n);

enum class Provenance { kMadMined, kSyntheticShift };
const char* to_string(Provenance p);

struct BenchmarkGroup {
  std::string id;
  std::string name;
  Provenance provenance = Provenance::kMadMined;
  LabeledImages members;
  std::vector<std::size_t> source_index;  // pool / source position of each member
};

struct GroupingConfig {
  std::size_t min_size = 20;
  /// When the generator's labels are available, drop samples on which the
  /// strong model is wrong (stands in for manual verification).
  bool verify_with_truth = true;
  std::size_t max_size = 0;  // 0 = no cap; larger buckets keep the top-ranked members
};

/// Buckets mined samples by (strong, base) prediction pair. Samples whose
/// predictions agree are not failures and are skipped.
std::vector<BenchmarkGroup> build_groups(const std::vector<MinedSample>& mined, const std::vector<Image>& pool,
                                         const GroupingConfig& cfg, std::span<const int> truth = {});

struct ShiftSpec {
  desk::Corruption kind = desk::Corruption::kIdentity;
  std::uint64_t seed = 0;
};

/// Corrupts every correctly classified source and keeps the corrupted
/// images the base gets wrong, with the source label.
std::vector<BenchmarkGroup> build_shift_groups(const LabeledImages& source, const BaseModel& base,
                                               std::span<const ShiftSpec> shifts, std::size_t max_size = 0);

struct LocalityPool {
  LabeledImages members;
  std::vector<int> base_pred;
  std::vector<std::size_t> source_index;
  double max_gap = 0.05;
};

/// Near-boundary candidates: each source image is blended toward the next
/// differently labelled one, and the blend weight (at most 0.5) is bisected
/// to the last point where the base still predicts the source label.
LabeledImages boundary_candidates(const LabeledImages& source, const BaseModel& base, int bisection_steps = 12);

bool top2_gap_below(const ProbabilityVector& p, double gap);
LocalityPool build_locality_pool(const LabeledImages& candidates, const BaseModel& base, double max_gap = 0.05);

enum class MaskPolicy { kHypernet, kRandom, kDense };
const char* to_string(MaskPolicy p);

/// One point of a sweep: a threshold on the relaxed mask, or a sparsity target.
struct SweepPoint {
  bool by_sparsity = false;
  double value = 0.0;
};

struct EvalConfig {
  EditConfig edit;
  std::vector<SweepPoint> sweep{SweepPoint{false, 0.0}};
  MaskPolicy policy = MaskPolicy::kHypernet;
  std::uint64_t seed = 0;
  bool compute_gr = true;
  bool compute_lr = true;
  /// Members edited per group (0 = all). GR still uses every member as target.
  std::size_t max_edits_per_group = 0;
  /// Optional JSONL edit log.
  std::string log_path;
};

struct EditRecord {
  std::size_t group = 0;
  std::size_t member = 0;
  bool success = false;
  int steps = 0;
  double final_loss = 0.0;
  double sparsity = 0.0;
  std::vector<int> group_preds;  // post-edit prediction per group member
  std::vector<int> pool_preds;   // post-edit prediction per pool sample
};

struct PointMetrics {
  SweepPoint control;
  double sr = 0.0;
  std::vector<std::optional<double>> group_gr;
  std::optional<double> mean_gr;
  std::optional<double> lr;
  double mean_sparsity = 0.0;
  double mean_steps = 0.0;
  std::size_t edits = 0;
};

struct MetricsReport {
  std::vector<std::string> group_ids;
  std::vector<PointMetrics> points;
};

/// Reduces per-edit records to the three rates.
PointMetrics compute_metrics(const std::vector<BenchmarkGroup>& groups, const LocalityPool& pool,
                             const std::vector<EditRecord>& records, bool with_gr, bool with_lr);

/// Order-independent hash of every parameter value.
std::uint64_t params_hash(const ParamStore& params);

/// Cached scope inputs for the benchmark images under one scoped model.
class EvalCache {
 public:
  EvalCache(const ScopedModel& model, const std::vector<BenchmarkGroup>& groups, const LocalityPool& pool);
  const PreparedEpisode& sample(std::size_t g, std::size_t i) const { return samples_[g][i]; }
  const std::vector<const ad::Matrix*>& group_hidden(std::size_t g) const { return group_hidden_[g]; }
  const std::vector<const ad::Matrix*>& pool_hidden() const { return pool_hidden_; }

 private:
  std::vector<std::vector<PreparedEpisode>> samples_;
  std::vector<std::vector<const ad::Matrix*>> group_hidden_;
  std::vector<ad::Matrix> pool_states_;
  std::vector<const ad::Matrix*> pool_hidden_;
};

/// Supplies the mask for one edit (absent = dense).
using MaskProvider =
    std::function<std::optional<BinaryMask>(std::size_t group, std::size_t member, const PreparedEpisode&)>;

/// Edits every selected member independently from the pristine base.
std::vector<EditRecord> run_edits(const ScopedModel& model, const EvalCache& cache,
                                  const std::vector<BenchmarkGroup>& groups, const LocalityPool& pool,
                                  const MaskProvider& masks, const EvalConfig& cfg, const SweepPoint& point);

/// Full sweep. `hstate` is required for the hypernetwork policy.
MetricsReport evaluate(const BaseModel& base, const HypernetState* hstate, const EditScope& scope,
                       const std::vector<BenchmarkGroup>& groups, const LocalityPool& pool, const EvalConfig& cfg);

/// Mean GR per group when the mask comes from the averaged maps of the first
/// k members of each subset and the loss covers those k. Targets are the
/// members outside the whole subset, so different k share the same targets.
std::vector<std::optional<double>> multi_sample_gr(const BaseModel& base, const HypernetState& hstate,
                                                   const EditScope& scope, const std::vector<BenchmarkGroup>& groups,
                                                   std::size_t k, std::size_t subset_size, std::size_t trials,
                                                   const EditConfig& cfg, std::uint64_t seed);

struct ScopeCandidate {
  std::string name;
  bool msa = false;
  int first_block = 1;
  std::vector<std::size_t> tensors;
};

/// Consecutive triples of FFNs and, optionally, of MSAs.
std::vector<ScopeCandidate> triple_candidates(const BaseModel& base, bool include_msa);

struct ScopeResult {
  ScopeCandidate candidate;
  double gr = 0.0;
  double lr = 0.0;
  double sr = 0.0;
  int front = 0;  // 0 = non-dominated
};

/// a dominates b: no worse in both coordinates and better in one.
bool dominates(double gr_a, double lr_a, double gr_b, double lr_b);

/// Plain fine-tuning edits per candidate, ranked by Pareto front then GR+LR.
std::vector<ScopeResult> scope_search(const BaseModel& base, const std::vector<BenchmarkGroup>& groups,
                                      const LocalityPool& pool, const std::vector<ScopeCandidate>& candidates,
                                      const EvalConfig& cfg);

struct SpecificityReport {
  std::vector<std::string> group_ids;
  std::vector<std::vector<double>> iou;  // mean IoU between groups (diagonal: within)
  std::vector<std::optional<double>> within;
  std::optional<double> mean_within;
  std::optional<double> mean_between;
  double sparsity = 0.95;
};

SpecificityReport mask_specificity_report(const BaseModel& base, const HypernetState& hstate, const EditScope& scope,
                                          const std::vector<BenchmarkGroup>& groups, double sparsity = 0.95);

/// Least-squares monotone fit (pool adjacent violators).
std::vector<double> isotonic_fit(std::span<const double> y, bool increasing, std::span<const double> w = {});
double squared_error(std::span<const double> a, std::span<const double> b);
/// The isotonic fit in the given direction fits at least as well as the
/// fit in the opposite direction.
bool trend_holds(std::span<const double> y, bool increasing);

/// Self-describing manifest: group descriptors, sample references, labels.
void write_manifest(const std::string& path, const std::vector<BenchmarkGroup>& groups, const LocalityPool& pool,
                    const std::map<std::string, std::string>& header);

}  // namespace vedit::bench
