#include "vedit/bench.hpp"

#include "vedit/io_util.hpp"
#include "vedit/pretrain.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>

namespace vedit::bench {

ClassDistance::ClassDistance(ad::Matrix d) : d_(std::move(d)) {
  if (d_.rows() != d_.cols() || d_.rows() == 0) throw std::invalid_argument("ClassDistance: need a square matrix");
  for (ad::Index i = 0; i < d_.rows(); ++i) {
    if (d_(i, i) != 0.0) throw std::invalid_argument("ClassDistance: diagonal must be zero");
    for (ad::Index j = 0; j < d_.cols(); ++j) {
      if (d_(i, j) < 0.0 || d_(i, j) != d_(j, i)) {
        throw std::invalid_argument("ClassDistance: must be symmetric and nonnegative");
      }
    }
  }
}

ClassDistance ClassDistance::zero_one(int n) {
  ad::Matrix d = ad::Matrix::Ones(n, n);
  d.diagonal().setZero();
  return ClassDistance(d);
}

ClassDistance ClassDistance::tree(std::span<const int> parent) {
  const int n = int(parent.size());
  ad::Matrix d(n, n);
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) d(a, b) = a == b ? 0.0 : parent[std::size_t(a)] == parent[std::size_t(b)] ? 2.0 : 4.0;
  }
  return ClassDistance(d);
}

ClassDistance ClassDistance::desk_tree() {
  std::vector<int> parent;
  for (int c = 0; c < desk::kNumClasses; ++c) parent.push_back(desk::superclass_of(c));
  return tree(parent);
}

double ClassDistance::operator()(int a, int b) const {
  if (a < 0 || b < 0 || a >= d_.rows() || b >= d_.rows()) throw std::out_of_range("ClassDistance: label out of range");
  return d_(a, b);
}

std::vector<MinedSample> mad_mine(std::span<const int> base_pred, std::span<const int> strong_pred,
                                  const ClassDistance& dist, std::size_t n) {
  if (base_pred.empty()) throw std::invalid_argument("mad_mine: empty pool");
  if (base_pred.size() != strong_pred.size()) throw std::invalid_argument("mad_mine: prediction count mismatch");
  if (n > base_pred.size()) throw std::invalid_argument("mad_mine: n exceeds the pool size");
  std::vector<double> score(base_pred.size());
  for (std::size_t i = 0; i < score.size(); ++i) score[i] = dist(base_pred[i], strong_pred[i]);
  std::vector<bool> taken(score.size(), false);
  std::vector<MinedSample> out;
  out.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t best = score.size();
    for (std::size_t i = 0; i < score.size(); ++i) {
      if (!taken[i] && (best == score.size() || score[i] > score[best])) best = i;
    }
    taken[best] = true;
    out.push_back({best, score[best], base_pred[best], strong_pred[best]});
  }
  return out;
}

namespace {

std::vector<int> predictions(const BaseModel& model, const std::vector<Image>& images) {
  LabeledImages data;
  data.reserve(images.size());
  for (const auto& im : images) data.push_back({im, 0});
  return predict_all(model, data);
}

}  // namespace

std::vector<MinedSample> mad_mine(const std::vector<Image>& pool, const BaseModel& base, const BaseModel& strong,
                                  const ClassDistance& dist, std::size_t n) {
  if (pool.empty()) throw std::invalid_argument("mad_mine: empty pool");
  const auto b = predictions(base, pool);
  const auto s = predictions(strong, pool);
  return mad_mine(b, s, dist, n);
}

const char* to_string(Provenance p) { return p == Provenance::kMadMined ? "mad-mined" : "synthetic-shift"; }

std::vector<BenchmarkGroup> build_groups(const std::vector<MinedSample>& mined, const std::vector<Image>& pool,
                                         const GroupingConfig& cfg, std::span<const int> truth) {
  std::map<std::pair<int, int>, BenchmarkGroup> buckets;
  for (const auto& m : mined) {
    if (m.strong_pred == m.base_pred) continue;
    if (cfg.verify_with_truth && !truth.empty() && truth[m.pool_index] != m.strong_pred) continue;
    auto& g = buckets[{m.strong_pred, m.base_pred}];
    if (cfg.max_size && g.members.size() >= cfg.max_size) continue;
    g.members.push_back({pool.at(m.pool_index), m.strong_pred});
    g.source_index.push_back(m.pool_index);
  }
  std::vector<BenchmarkGroup> out;
  const auto& names = desk::class_names();
  for (auto& [key, g] : buckets) {
    if (g.members.size() < cfg.min_size) continue;
    const auto label = [&](int c) {
      return c >= 0 && c < desk::kNumClasses ? names[std::size_t(c)] : "class" + std::to_string(c);
    };
    g.name = label(key.first) + " vs " + label(key.second);
    g.provenance = Provenance::kMadMined;
    out.push_back(std::move(g));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const BenchmarkGroup& a, const BenchmarkGroup& b) { return a.members.size() > b.members.size(); });
  for (std::size_t i = 0; i < out.size(); ++i) out[i].id = "mad-" + std::to_string(i);
  return out;
}

std::vector<BenchmarkGroup> build_shift_groups(const LabeledImages& source, const BaseModel& base,
                                               std::span<const ShiftSpec> shifts, std::size_t max_size) {
  const auto clean_pred = predict_all(base, source);
  std::vector<BenchmarkGroup> out;
  for (const auto& sh : shifts) {
    LabeledImages corrupted;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < source.size(); ++i) {
      if (clean_pred[i] != source[i].label) continue;
      corrupted.push_back({desk::corrupt(source[i].image, sh.kind, desk::mix_seed(sh.seed, i)), source[i].label});
      idx.push_back(i);
    }
    const auto pred = predict_all(base, corrupted);
    BenchmarkGroup g;
    g.provenance = Provenance::kSyntheticShift;
    g.name = desk::to_string(sh.kind);
    g.id = std::string("shift-") + desk::to_string(sh.kind);
    for (std::size_t i = 0; i < corrupted.size(); ++i) {
      if (pred[i] == corrupted[i].label) continue;
      if (max_size && g.members.size() >= max_size) break;
      g.members.push_back(std::move(corrupted[i]));
      g.source_index.push_back(idx[i]);
    }
    out.push_back(std::move(g));
  }
  return out;
}

namespace {

Image blend(const Image& a, const Image& b, double t) {
  Image out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = (1.0 - t) * a.data[i] + t * b.data[i];
  return out;
}

}  // namespace

LabeledImages boundary_candidates(const LabeledImages& source, const BaseModel& base, int bisection_steps) {
  const std::size_t n = source.size();
  std::vector<std::size_t> partner(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 1; j < n; ++j) {
      const std::size_t k = (i + j) % n;
      if (source[k].label != source[i].label) {
        partner[i] = k;
        break;
      }
    }
  }
  std::vector<double> lo(n, 0.0), hi(n, 0.5);
  const auto blends = [&](const std::vector<double>& t) {
    LabeledImages out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      out.push_back({partner[i] < n ? blend(source[i].image, source[partner[i]].image, t[i]) : source[i].image,
                     source[i].label});
    }
    return out;
  };
  // Sources whose prediction survives the half blend keep t = 0.5.
  const auto at_half = predict_all(base, blends(hi));
  std::vector<bool> active(n);
  for (std::size_t i = 0; i < n; ++i) {
    active[i] = partner[i] < n && at_half[i] != source[i].label;
    if (!active[i]) lo[i] = 0.5;
  }
  for (int s = 0; s < bisection_steps; ++s) {
    std::vector<double> mid(n);
    for (std::size_t i = 0; i < n; ++i) mid[i] = 0.5 * (lo[i] + hi[i]);
    const auto pred = predict_all(base, blends(mid));
    for (std::size_t i = 0; i < n; ++i) {
      if (!active[i]) continue;
      (pred[i] == source[i].label ? lo[i] : hi[i]) = mid[i];
    }
  }
  return blends(lo);
}

bool top2_gap_below(const ProbabilityVector& p, double gap) {
  if (p.size() < 2) return false;
  std::vector<double> s(p);
  std::partial_sort(s.begin(), s.begin() + 2, s.end(), std::greater<>());
  return s[0] - s[1] < gap;
}

LocalityPool build_locality_pool(const LabeledImages& candidates, const BaseModel& base, double max_gap) {
  LocalityPool pool;
  pool.max_gap = max_gap;
  const auto probs = probs_all(base, candidates);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const int pred = argmax(probs[i]);
    if (pred != candidates[i].label || !top2_gap_below(probs[i], max_gap)) continue;
    pool.members.push_back(candidates[i]);
    pool.base_pred.push_back(pred);
    pool.source_index.push_back(i);
  }
  return pool;
}

const char* to_string(MaskPolicy p) {
  switch (p) {
    case MaskPolicy::kHypernet: return "hypernet";
    case MaskPolicy::kRandom: return "random";
    case MaskPolicy::kDense: return "dense";
  }
  return "?";
}

PointMetrics compute_metrics(const std::vector<BenchmarkGroup>& groups, const LocalityPool& pool,
                             const std::vector<EditRecord>& records, bool with_gr, bool with_lr) {
  PointMetrics m;
  m.edits = records.size();
  if (records.empty()) return m;
  std::size_t succ = 0, lr_hits = 0, lr_total = 0;
  std::vector<std::size_t> gr_hits(groups.size(), 0), gr_total(groups.size(), 0);
  double sp = 0.0, steps = 0.0;
  for (const auto& r : records) {
    succ += r.success ? 1 : 0;
    sp += r.sparsity;
    steps += r.steps;
    const auto& members = groups.at(r.group).members;
    if (with_gr && members.size() > 1) {
      for (std::size_t j = 0; j < members.size(); ++j) {
        if (j == r.member) continue;
        gr_hits[r.group] += r.group_preds.at(j) == members[j].label ? 1 : 0;
        ++gr_total[r.group];
      }
    }
    if (with_lr) {
      for (std::size_t j = 0; j < pool.members.size(); ++j) {
        lr_hits += r.pool_preds.at(j) == pool.base_pred[j] ? 1 : 0;
        ++lr_total;
      }
    }
  }
  m.sr = double(succ) / double(records.size());
  m.mean_sparsity = sp / double(records.size());
  m.mean_steps = steps / double(records.size());
  if (with_gr) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t g = 0; g < groups.size(); ++g) {
      if (gr_total[g] == 0) {
        m.group_gr.push_back(std::nullopt);
        continue;
      }
      m.group_gr.push_back(double(gr_hits[g]) / double(gr_total[g]));
      sum += *m.group_gr.back();
      ++n;
    }
    if (n) m.mean_gr = sum / double(n);
  }
  if (with_lr && lr_total) m.lr = double(lr_hits) / double(lr_total);
  return m;
}

std::uint64_t params_hash(const ParamStore& params) {
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t t = 0; t < params.size(); ++t) {
    const auto& m = params.value(t);
    for (ad::Index i = 0; i < m.size(); ++i) {
      std::uint64_t bits;
      std::memcpy(&bits, &m.data()[i], sizeof(bits));
      h = (h ^ bits) * 1099511628211ull;
    }
  }
  return h;
}

EvalCache::EvalCache(const ScopedModel& model, const std::vector<BenchmarkGroup>& groups, const LocalityPool& pool) {
  for (const auto& g : groups) {
    samples_.emplace_back();
    for (const auto& m : g.members) samples_.back().push_back(prepare_sample(model, m.image, m.label));
  }
  for (const auto& s : samples_) {
    group_hidden_.emplace_back();
    for (const auto& p : s) group_hidden_.back().push_back(&p.hidden.value());
  }
  std::vector<const Image*> imgs;
  for (const auto& m : pool.members) imgs.push_back(&m.image);
  pool_states_ = model.scope_inputs(imgs);
  for (const auto& s : pool_states_) pool_hidden_.push_back(&s);
}

std::vector<EditRecord> run_edits(const ScopedModel& model, const EvalCache& cache,
                                  const std::vector<BenchmarkGroup>& groups, const LocalityPool& pool,
                                  const MaskProvider& masks, const EvalConfig& cfg, const SweepPoint& point) {
  const std::uint64_t pristine = params_hash(model.base().params());
  std::vector<EditRecord> out;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const std::size_t n = groups[g].members.size();
    const std::size_t edits = cfg.max_edits_per_group ? std::min(n, cfg.max_edits_per_group) : n;
    for (std::size_t i = 0; i < edits; ++i) {
      if (params_hash(model.base().params()) != pristine) throw std::logic_error("base parameters changed during evaluation");
      const auto& sample = cache.sample(g, i);
      const std::optional<BinaryMask> mask = masks(g, i, sample);
      const EditOutcome o = tune_masked(model, mask, {&sample}, cfg.edit);
      EditRecord r;
      r.group = g;
      r.member = i;
      r.success = o.success;
      r.steps = o.steps;
      r.final_loss = o.final_loss;
      r.sparsity = mask ? mask->sparsity() : 0.0;
      if (cfg.compute_gr && n > 1) {
        for (const auto& p : model.probs(o.weights, cache.group_hidden(g))) r.group_preds.push_back(argmax(p));
      }
      if (cfg.compute_lr && !pool.members.empty()) {
        for (const auto& p : model.probs(o.weights, cache.pool_hidden())) r.pool_preds.push_back(argmax(p));
      }
      if (!cfg.log_path.empty()) {
        append_edit_log(cfg.log_path, {groups[g].id + "/" + std::to_string(i), groups[g].id,
                                       point.by_sparsity ? 0.0 : point.value, r.sparsity, r.steps, r.success,
                                       r.final_loss});
      }
      out.push_back(std::move(r));
    }
  }
  return out;
}

MetricsReport evaluate(const BaseModel& base, const HypernetState* hstate, const EditScope& scope,
                       const std::vector<BenchmarkGroup>& groups, const LocalityPool& pool, const EvalConfig& cfg) {
  if (groups.empty()) throw std::invalid_argument("evaluate: no groups");
  if (cfg.compute_lr && pool.members.empty()) throw std::invalid_argument("evaluate: empty locality pool");
  if (cfg.policy == MaskPolicy::kHypernet && !hstate) throw std::invalid_argument("evaluate: hypernetwork required");
  const ScopedModel model(base, scope);
  if (hstate) check_compatible(*hstate, model);
  const EvalCache cache(model, groups, pool);
  std::vector<std::vector<ContinuousMask>> maps;
  if (cfg.policy == MaskPolicy::kHypernet) {
    for (std::size_t g = 0; g < groups.size(); ++g) {
      maps.emplace_back();
      for (std::size_t i = 0; i < groups[g].members.size(); ++i) {
        maps.back().push_back(hypernet_forward(*hstate, cache.sample(g, i).features));
      }
    }
  }
  MetricsReport report;
  for (const auto& g : groups) report.group_ids.push_back(g.id);
  for (std::size_t p = 0; p < cfg.sweep.size(); ++p) {
    const SweepPoint point = cfg.sweep[p];
    std::mt19937_64 rng(desk::mix_seed(cfg.seed, p));
    MaskProvider provider = [&](std::size_t g, std::size_t i, const PreparedEpisode&) -> std::optional<BinaryMask> {
      switch (cfg.policy) {
        case MaskPolicy::kDense: return std::nullopt;
        case MaskPolicy::kRandom: {
          if (!point.by_sparsity) throw std::invalid_argument("random masks need a sparsity target");
          return random_mask(model.num_slots(), point.value, rng);
        }
        case MaskPolicy::kHypernet:
          return edit_mask(maps[g][i], cfg.edit.temperature, point.value,
                           point.by_sparsity ? std::optional<double>(point.value) : std::nullopt);
      }
      return std::nullopt;
    };
    const auto records = run_edits(model, cache, groups, pool, provider, cfg, point);
    PointMetrics m = compute_metrics(groups, pool, records, cfg.compute_gr, cfg.compute_lr);
    m.control = point;
    report.points.push_back(std::move(m));
  }
  return report;
}

std::vector<std::optional<double>> multi_sample_gr(const BaseModel& base, const HypernetState& hstate,
                                                   const EditScope& scope, const std::vector<BenchmarkGroup>& groups,
                                                   std::size_t k, std::size_t subset_size, std::size_t trials,
                                                   const EditConfig& cfg, std::uint64_t seed) {
  if (k == 0 || k > subset_size) throw std::invalid_argument("multi_sample_gr: need 1 <= k <= subset size");
  const ScopedModel model(base, scope);
  check_compatible(hstate, model);
  const LocalityPool none;
  const EvalCache cache(model, groups, none);
  std::vector<std::optional<double>> out;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const std::size_t n = groups[g].members.size();
    if (n <= subset_size) {
      out.push_back(std::nullopt);
      continue;
    }
    std::mt19937_64 rng(desk::mix_seed(seed, g));
    std::size_t hits = 0, total = 0;
    for (std::size_t t = 0; t < trials; ++t) {
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      std::vector<ContinuousMask> maps;
      std::vector<const PreparedEpisode*> samples;
      for (std::size_t j = 0; j < k; ++j) {
        samples.push_back(&cache.sample(g, order[j]));
        maps.push_back(hypernet_forward(hstate, samples.back()->features));
      }
      const BinaryMask mask = edit_mask(average_masks(maps), cfg.temperature, 0.5, std::nullopt);
      const EditOutcome o = tune_masked(model, mask, samples, cfg);
      std::vector<const ad::Matrix*> targets;
      std::vector<int> labels;
      for (std::size_t j = subset_size; j < n; ++j) {
        targets.push_back(cache.group_hidden(g)[order[j]]);
        labels.push_back(groups[g].members[order[j]].label);
      }
      const auto probs = model.probs(o.weights, targets);
      for (std::size_t j = 0; j < probs.size(); ++j) hits += argmax(probs[j]) == labels[j] ? 1 : 0;
      total += probs.size();
    }
    out.push_back(double(hits) / double(total));
  }
  return out;
}

std::vector<ScopeCandidate> triple_candidates(const BaseModel& base, bool include_msa) {
  const auto& lay = base.layout();
  const int nb = base.config().num_blocks;
  std::vector<ScopeCandidate> out;
  for (int msa = 0; msa <= (include_msa ? 1 : 0); ++msa) {
    for (int b = 1; b + 2 <= nb; ++b) {
      ScopeCandidate c;
      c.msa = msa == 1;
      c.first_block = b;
      c.name = std::string(c.msa ? "msa:" : "ffn:") + std::to_string(b) + "-" + std::to_string(b + 2);
      for (int k = b; k <= b + 2; ++k) {
        const auto& bp = lay.blocks[std::size_t(k - 1)];
        if (c.msa) {
          c.tensors.push_back(bp.qkv_w);
          c.tensors.push_back(bp.proj_w);
        } else {
          c.tensors.push_back(bp.fc1_w);
          c.tensors.push_back(bp.fc2_w);
        }
      }
      out.push_back(std::move(c));
    }
  }
  return out;
}

bool dominates(double gr_a, double lr_a, double gr_b, double lr_b) {
  return gr_a >= gr_b && lr_a >= lr_b && (gr_a > gr_b || lr_a > lr_b);
}

std::vector<ScopeResult> scope_search(const BaseModel& base, const std::vector<BenchmarkGroup>& groups,
                                      const LocalityPool& pool, const std::vector<ScopeCandidate>& candidates,
                                      const EvalConfig& cfg) {
  std::vector<ScopeResult> out;
  const MaskProvider dense = [](std::size_t, std::size_t, const PreparedEpisode&) -> std::optional<BinaryMask> {
    return std::nullopt;
  };
  for (const auto& c : candidates) {
    const ScopedModel model(base, c.tensors);
    const EvalCache cache(model, groups, pool);
    const auto records = run_edits(model, cache, groups, pool, dense, cfg, SweepPoint{false, 0.0});
    const PointMetrics m = compute_metrics(groups, pool, records, true, true);
    out.push_back({c, m.mean_gr.value_or(0.0), m.lr.value_or(1.0), m.sr, 0});
  }
  // Non-dominated sorting: peel successive fronts.
  std::vector<bool> assigned(out.size(), false);
  for (int front = 0, left = int(out.size()); left > 0; ++front) {
    std::vector<std::size_t> current;
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (assigned[i]) continue;
      bool dominated = false;
      for (std::size_t j = 0; j < out.size() && !dominated; ++j) {
        dominated = !assigned[j] && j != i && dominates(out[j].gr, out[j].lr, out[i].gr, out[i].lr);
      }
      if (!dominated) current.push_back(i);
    }
    for (auto i : current) {
      out[i].front = front;
      assigned[i] = true;
      --left;
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const ScopeResult& a, const ScopeResult& b) {
    if (a.front != b.front) return a.front < b.front;
    return a.gr + a.lr > b.gr + b.lr;
  });
  return out;
}

SpecificityReport mask_specificity_report(const BaseModel& base, const HypernetState& hstate, const EditScope& scope,
                                          const std::vector<BenchmarkGroup>& groups, double sparsity) {
  if (groups.size() < 2) throw std::invalid_argument("mask_specificity_report: need at least two groups");
  const ScopedModel model(base, scope);
  check_compatible(hstate, model);
  std::vector<std::vector<BinaryMask>> masks;
  for (const auto& g : groups) {
    masks.emplace_back();
    for (const auto& m : g.members) {
      const ContinuousMask c = hypernet_forward(hstate, base, m.image);
      masks.back().push_back(binarize(c, sparsity_to_threshold(c, sparsity)));
    }
  }
  SpecificityReport r;
  r.sparsity = sparsity;
  const std::size_t ng = groups.size();
  r.iou.assign(ng, std::vector<double>(ng, std::nan("")));
  double within_sum = 0.0, between_sum = 0.0;
  std::size_t within_n = 0, between_n = 0;
  for (std::size_t a = 0; a < ng; ++a) {
    r.group_ids.push_back(groups[a].id);
    for (std::size_t b = a; b < ng; ++b) {
      double s = 0.0;
      std::size_t n = 0;
      for (std::size_t i = 0; i < masks[a].size(); ++i) {
        for (std::size_t j = a == b ? i + 1 : 0; j < masks[b].size(); ++j) {
          s += mask_iou(masks[a][i], masks[b][j]);
          ++n;
        }
      }
      if (n == 0) continue;
      r.iou[a][b] = r.iou[b][a] = s / double(n);
      if (a == b) {
        within_sum += s / double(n);
        ++within_n;
      } else {
        between_sum += s;
        between_n += n;
      }
    }
    r.within.push_back(std::isnan(r.iou[a][a]) ? std::nullopt : std::optional<double>(r.iou[a][a]));
  }
  if (within_n) r.mean_within = within_sum / double(within_n);
  if (between_n) r.mean_between = between_sum / double(between_n);
  return r;
}

std::vector<double> isotonic_fit(std::span<const double> y, bool increasing, std::span<const double> w) {
  if (!w.empty() && w.size() != y.size()) throw std::invalid_argument("isotonic_fit: weight count mismatch");
  struct Block {
    double sum, weight;
    std::size_t count;
  };
  std::vector<Block> blocks;
  const double sign = increasing ? 1.0 : -1.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double wi = w.empty() ? 1.0 : w[i];
    blocks.push_back({sign * y[i] * wi, wi, 1});
    while (blocks.size() > 1) {
      const auto& b = blocks[blocks.size() - 1];
      const auto& a = blocks[blocks.size() - 2];
      if (a.sum / a.weight <= b.sum / b.weight) break;
      Block merged{a.sum + b.sum, a.weight + b.weight, a.count + b.count};
      blocks.pop_back();
      blocks.back() = merged;
    }
  }
  std::vector<double> out;
  for (const auto& b : blocks) out.insert(out.end(), b.count, sign * b.sum / b.weight);
  return out;
}

double squared_error(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

bool trend_holds(std::span<const double> y, bool increasing) {
  const auto with = isotonic_fit(y, increasing);
  const auto against = isotonic_fit(y, !increasing);
  return squared_error(y, with) <= squared_error(y, against);
}

void write_manifest(const std::string& path, const std::vector<BenchmarkGroup>& groups, const LocalityPool& pool,
                    const std::map<std::string, std::string>& header) {
  io::write_atomic(path, [&](std::ostream& out) {
    out << "# vedit benchmark manifest v1\n";
    for (const auto& [k, v] : header) out << "# " << k << "=" << v << "\n";
    for (const auto& g : groups) {
      out << "group " << g.id << " provenance=" << to_string(g.provenance) << " size=" << g.members.size()
          << " name=\"" << g.name << "\"\n";
      for (std::size_t i = 0; i < g.members.size(); ++i) {
        out << "  sample source=" << g.source_index[i] << " label=" << g.members[i].label << "\n";
      }
    }
    out << "locality size=" << pool.members.size() << " max_gap=" << io::format_double(pool.max_gap) << "\n";
    for (std::size_t i = 0; i < pool.members.size(); ++i) out << "  sample source=" << pool.source_index[i] << " label=" << pool.members[i].label << "\n";
  });
}

}  // namespace vedit::bench
