// Acceptance suite: one PASS/FAIL line per criterion. Desk-scale artifacts
// (models, benchmark, hypernetworks) are produced by the pipeline on first
// use and cached in the artifact directory.
#include "../unit/test_util.hpp"

#include "vedit/bench.hpp"
#include "vedit/checkpoint.hpp"
#include "vedit/config.hpp"
#include "vedit/edit.hpp"
#include "vedit/meta_train.hpp"
#include "vedit/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace vedit;
using namespace vedit::bench;
namespace fs = std::filesystem;
using vedit::testing::random_image;
using vedit::testing::spread_model;
using vedit::testing::tiny_vit;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream o;
  o << std::setprecision(prec) << v;
  return o.str();
}

void note(const std::string& s) { std::cerr << "  . " << s << std::endl; }

// ---------------------------------------------------------------------------
// Desk artifacts

struct Desk {
  RunConfig cfg;
  RunConfig decoupled_cfg;

  explicit Desk(const std::string& dir) {
    cfg = load_config(VEDIT_SOURCE_DIR "/configs/desk.conf");
    cfg.out = dir;
    decoupled_cfg = cfg;
    decoupled_cfg.meta.path = MetaPath::kDecoupled;
    decoupled_cfg.hypernet = "hypernet_decoupled.ckpt";
    decoupled_cfg.meta_log = "meta_log_decoupled.jsonl";
  }

  static void stage(Stage s, const RunConfig& c, const std::vector<std::string>& outputs) {
    bool have = true;
    for (const auto& o : outputs) have = have && fs::exists(c.path(o));
    if (have) return;
    note(std::string("running stage ") + to_string(s) + " into " + c.out);
    std::ostringstream log;
    const int rc = run_stage(s, c, log);
    if (rc != kExitOk) throw std::runtime_error(std::string("stage ") + to_string(s) + " failed:\n" + log.str());
  }

  void ensure_models() const { stage(Stage::kPretrain, cfg, {cfg.base_model, cfg.strong_model}); }
  void ensure_bench() const {
    ensure_models();
    stage(Stage::kMine, cfg, {cfg.mined});
    stage(Stage::kBuildBench, cfg, {cfg.benchmark});
  }
  void ensure_hypernet() const {
    ensure_models();
    stage(Stage::kTrainHypernet, cfg, {cfg.hypernet, cfg.meta_log});
  }
  void ensure_decoupled() const {
    ensure_models();
    stage(Stage::kTrainHypernet, decoupled_cfg, {decoupled_cfg.hypernet, decoupled_cfg.meta_log});
  }

  BaseModel base() const {
    ensure_models();
    return load_model(cfg.path(cfg.base_model));
  }
  BaseModel strong() const {
    ensure_models();
    return load_model(cfg.path(cfg.strong_model));
  }
  Benchmark benchmark() const {
    ensure_bench();
    return load_benchmark(cfg.path(cfg.benchmark));
  }
  HypernetState hypernet() const {
    ensure_hypernet();
    return load_hypernet(cfg.path(cfg.hypernet));
  }
  EditScope scope() const { return EditScope::parse(cfg.scope); }
};

std::vector<BenchmarkGroup> mined_only(const Benchmark& b) {
  std::vector<BenchmarkGroup> out;
  for (const auto& g : b.groups) {
    if (g.provenance == Provenance::kMadMined) out.push_back(g);
  }
  return out;
}

MetaTrainLog read_meta_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  MetaTrainLog log;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    MetaTrainRecord r;
    r.iteration = j.at("iteration").get<int>();
    r.kl_loss = j.at("kl_loss").get<double>();
    r.skipped = j.value("skipped", false);
    log.append(r);
  }
  return log;
}

// ---------------------------------------------------------------------------
// 1. Metric oracles

Verdict metric_oracles() {
  std::mt19937_64 rng(101);
  int instances = 0, mismatches = 0;
  std::string first_bad;
  for (int inst = 0; inst < 24; ++inst) {
    const ViTConfig vc = tiny_vit(3, 200 + std::uint64_t(inst));
    const BaseModel base = spread_model(vc, 0.3 + 0.1 * double(inst % 4));
    const EditScope scope = EditScope::ffn_range(1);
    const HypernetState h = init_hypernet(HypernetConfig::for_model(vc, scope, std::uint64_t(inst)));

    // At most five edits in total, at most ten pool samples.
    std::uniform_int_distribution<int> n_groups(1, 2), label(0, vc.num_classes - 1), pool_n(1, 10);
    const int ng = n_groups(rng);
    std::vector<BenchmarkGroup> groups;
    int budget = 5;
    for (int g = 0; g < ng; ++g) {
      const int size = std::uniform_int_distribution<int>(1, budget - (ng - 1 - g))(rng);
      budget -= size;
      BenchmarkGroup grp;
      grp.id = "g" + std::to_string(g);
      const int y = label(rng);
      for (int i = 0; i < size; ++i) {
        grp.members.push_back({random_image(8, rng), rng() % 3 ? y : label(rng)});
        grp.source_index.push_back(std::size_t(i));
      }
      groups.push_back(std::move(grp));
    }
    LocalityPool pool;
    for (int i = 0, n = pool_n(rng); i < n; ++i) {
      Image im = random_image(8, rng);
      pool.base_pred.push_back(predict(base, im));
      pool.members.push_back({im, pool.base_pred.back()});
      pool.source_index.push_back(std::size_t(i));
    }

    EvalConfig ec;
    ec.edit.lr = std::uniform_real_distribution<double>(1e-3, 5e-2)(rng);
    ec.edit.max_steps = std::uniform_int_distribution<int>(1, 15)(rng);
    ec.sweep = {SweepPoint{false, 0.0}, SweepPoint{true, 0.5}, SweepPoint{true, 0.9}};
    ec.seed = std::uint64_t(inst);
    const MetricsReport rep = evaluate(base, &h, scope, groups, pool, ec);

    for (std::size_t p = 0; p < ec.sweep.size(); ++p) {
      const SweepPoint& pt = ec.sweep[p];
      std::size_t edits = 0, succ = 0, lr_hits = 0, lr_total = 0;
      std::vector<std::size_t> gh(groups.size(), 0), gt(groups.size(), 0);
      for (std::size_t g = 0; g < groups.size(); ++g) {
        const auto& S = groups[g].members;
        for (std::size_t i = 0; i < S.size(); ++i) {
          EditRequest req;
          req.image = S[i].image;
          req.label = S[i].label;
          req.rho = pt.by_sparsity ? 0.5 : pt.value;
          if (pt.by_sparsity) req.target_sparsity = pt.value;
          const EditOutcome o = edit_once(base, h, scope, req, ec.edit);
          const BaseModel edited = base.with_params(o.params);
          ++edits;
          succ += predict(edited, S[i].image) == S[i].label ? 1 : 0;
          for (std::size_t j = 0; j < S.size(); ++j) {
            if (j == i) continue;
            gh[g] += predict(edited, S[j].image) == S[j].label ? 1 : 0;
            ++gt[g];
          }
          for (std::size_t j = 0; j < pool.members.size(); ++j) {
            lr_hits += predict(edited, pool.members[j].image) == pool.base_pred[j] ? 1 : 0;
            ++lr_total;
          }
        }
      }
      const PointMetrics& m = rep.points[p];
      bool ok = m.edits == edits && m.sr == double(succ) / double(edits);
      double gsum = 0.0;
      std::size_t gcount = 0;
      for (std::size_t g = 0; g < groups.size(); ++g) {
        if (gt[g] == 0) {
          ok = ok && !m.group_gr[g].has_value();
          continue;
        }
        const double v = double(gh[g]) / double(gt[g]);
        ok = ok && m.group_gr[g].has_value() && *m.group_gr[g] == v;
        gsum += v;
        ++gcount;
      }
      if (gcount) {
        ok = ok && m.mean_gr.has_value() && *m.mean_gr == gsum / double(gcount);
      } else {
        ok = ok && !m.mean_gr.has_value();
      }
      ok = ok && m.lr.has_value() && *m.lr == double(lr_hits) / double(lr_total);
      if (!ok) {
        ++mismatches;
        if (first_bad.empty()) first_bad = "instance " + std::to_string(inst) + " point " + std::to_string(p);
      }
    }
    ++instances;
  }
  return {instances >= 20 && mismatches == 0,
          std::to_string(instances) + " instances x 3 sweep points, " + std::to_string(mismatches) + " mismatches" +
              (first_bad.empty() ? "" : " (first: " + first_bad + ")")};
}

// ---------------------------------------------------------------------------
// 2. Gradient fidelity

Verdict gradient_fidelity() {
  const ViTConfig vc = tiny_vit(3, 21);  // N = 8, N_m = 16
  const BaseModel base = spread_model(vc, 0.4);
  const EditScope scope = EditScope::ffn_range(1);
  const ScopedModel model(base, scope);
  HypernetConfig hc = HypernetConfig::for_model(vc, scope, 8);
  hc.num_blocks = 1;
  hc.head_init_std = 0.2;
  const HypernetState state = init_hypernet(hc);
  std::mt19937_64 rng(9);
  std::vector<PreparedEpisode> batch;
  for (int i = 0; i < 2; ++i) {
    PseudoEpisode ep;
    ep.clean = random_image(8, rng);
    ep.perturbed = random_image(8, rng);
    ep.soft_label = forward_probs(base, ep.clean);
    ep.clean_label = argmax(ep.soft_label);
    batch.push_back(prepare_episode(model, ep));
  }
  InnerLoopConfig inner;
  inner.steps = 1;
  inner.lr = 0.5;
  inner.clip_norm = 1e9;
  OuterLoopConfig outer;

  ParamStore p = state.params().trainable_copy();
  const auto g = ad::grad(standard_objective(state, p.vars(), model, batch, inner, outer), p.vars());
  const auto f = [&](const ParamStore& q) { return standard_objective(state, q.vars(), model, batch, inner, outer).item(); };

  std::uniform_int_distribution<std::size_t> pick_t(0, p.size() - 1);
  int checked = 0, bad = 0;
  double worst = 0.0;
  while (checked < 60) {
    const std::size_t t = pick_t(rng);
    const ad::Matrix v0 = state.params().value(t);
    const ad::Index i = std::uniform_int_distribution<ad::Index>(0, v0.size() - 1)(rng);
    const double h = 1e-5;
    ParamStore plus = state.params(), minus = state.params();
    ad::Matrix vp = v0, vm = v0;
    vp.data()[i] += h;
    vm.data()[i] -= h;
    plus.set(t, vp);
    minus.set(t, vm);
    const double fd = (f(plus) - f(minus)) / (2 * h);
    const double an = g[t].value().data()[i];
    if (std::abs(fd) < 1e-7 && std::abs(an) < 1e-7) continue;
    const double rel = std::abs(an - fd) / std::max(std::abs(fd), std::abs(an));
    worst = std::max(worst, rel);
    bad += rel > 1e-3 ? 1 : 0;
    ++checked;
  }

  // relax(): analytic derivative against central differences.
  std::normal_distribution<double> nd(0.0, 0.3);
  ContinuousMask m;
  for (int i = 0; i < 200; ++i) m.values.push_back(nd(rng));
  const auto rg = relax_gradient(m, 10.0);
  double worst_relax = 0.0;
  int relax_bad = 0;
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    const double h = 1e-6;
    ContinuousMask a = m, b = m;
    a.values[i] += h;
    b.values[i] -= h;
    const double fd = (relax(a, 10.0).values[i] - relax(b, 10.0).values[i]) / (2 * h);
    const double rel = std::abs(rg[i] - fd) / std::max(std::abs(fd), 1e-300);
    worst_relax = std::max(worst_relax, rel);
    relax_bad += rel > 1e-5 ? 1 : 0;
  }
  return {bad == 0 && relax_bad == 0,
          std::to_string(checked) + " outer coordinates, worst rel err " + fmt(worst, 3) +
              "; relax worst rel err " + fmt(worst_relax, 3)};
}

// ---------------------------------------------------------------------------
// 3. Masked-update exactness

Verdict masked_update_exactness() {
  ViTConfig vc;  // desk architecture
  vc.seed = 5;
  const BaseModel base(vc);
  const EditScope scope = EditScope::default_for(vc);
  const auto& lay = base.layout();
  const auto idx = scope_weight_indices(lay, scope);
  const std::set<std::size_t> scoped(idx.begin(), idx.end());
  const std::size_t slots = scope.num_slots(vc);
  const std::size_t scoped_count = scope.scoped_param_count(vc);
  std::mt19937_64 rng(33);
  std::normal_distribution<double> nd(0.0, 1.0);
  const double grid[] = {0.0, 0.25, 0.5, 0.75, 0.9, 0.95, 1.0};
  int failures = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const double s = grid[trial % 7];
    const BinaryMask mask = random_mask(slots, s, rng);
    ParamDelta d = ParamDelta::zeros(base, scope);
    for (auto& t : d.tensors) {
      for (ad::Index i = 0; i < t.size(); ++i) t.data()[i] = 0.5 + std::abs(nd(rng));
    }
    const ParamStore out = apply_masked_delta(base.params(), lay, vc, scope, mask, d);
    std::size_t changed = 0;
    bool outside_ok = true;
    for (std::size_t t = 0; t < out.size(); ++t) {
      const ad::Matrix& a = out.value(t);
      const ad::Matrix& b = base.params().value(t);
      if (!scoped.count(t)) {
        outside_ok = outside_ok && std::memcmp(a.data(), b.data(), sizeof(double) * std::size_t(a.size())) == 0;
        continue;
      }
      // Inside the scope, unselected slots must also be untouched bit for bit.
      const std::size_t layer = std::size_t(std::find(idx.begin(), idx.end(), t) - idx.begin());
      const bool rows = base.params().info(t).sublayer == Sublayer::kFc1;
      for (ad::Index r = 0; r < a.rows(); ++r) {
        for (ad::Index c = 0; c < a.cols(); ++c) {
          const std::size_t slot = layer * std::size_t(vc.mlp_dim) + std::size_t(rows ? r : c);
          const bool differs = std::memcmp(&a(r, c), &b(r, c), sizeof(double)) != 0;
          if (mask.bits[slot]) {
            changed += differs ? 1 : 0;
          } else {
            outside_ok = outside_ok && !differs;
          }
        }
      }
    }
    // (1 - sparsity) x scoped count, in integers: ones / slots x scoped count.
    const bool count_ok = scoped_count % slots == 0 && changed == mask.ones() * (scoped_count / slots) &&
                          std::abs(mask.sparsity() - s) < 0.5 / double(slots) + 1e-12;
    failures += (outside_ok && count_ok) ? 0 : 1;
  }
  return {failures == 0, "100 random (mask, delta) pairs on the desk model, " + std::to_string(failures) + " failures"};
}

// ---------------------------------------------------------------------------
// 4. Single-edit reliability

Verdict single_edit_reliability(const Desk& desk) {
  const BaseModel base = desk.base();
  const Benchmark b = desk.benchmark();
  const HypernetState h = desk.hypernet();
  std::size_t mined = 0, shifted = 0, failures = 0;
  for (const auto& g : b.groups) {
    (g.provenance == Provenance::kMadMined ? mined : shifted) += 1;
    failures += g.members.size();
  }
  EvalConfig ec;
  ec.edit = desk.cfg.edit;
  ec.edit.max_steps = 100;
  ec.sweep = {SweepPoint{false, 0.0}};
  ec.compute_gr = false;
  ec.compute_lr = false;
  const auto t1 = std::chrono::steady_clock::now();
  const MetricsReport rep = evaluate(base, &h, desk.scope(), b.groups, b.locality, ec);
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t1).count() / 60.0;
  const PointMetrics& m = rep.points[0];
  const bool shape_ok = mined >= 4 && shifted >= 1 && failures >= 150;
  return {shape_ok && m.sr >= 0.95 && minutes < 30.0,
          "benchmark " + std::to_string(mined) + " mined + " + std::to_string(shifted) + " shift groups, " +
              std::to_string(failures) + " failures; SR at rho=0 " + fmt(m.sr) + " over " + std::to_string(m.edits) +
              " edits, mean steps " + fmt(m.mean_steps) + ", " + fmt(minutes, 3) + " min"};
}

// ---------------------------------------------------------------------------
// 5. Trade-off trend

Verdict tradeoff_trend(const Desk& desk) {
  const BaseModel base = desk.base();
  const Benchmark b = desk.benchmark();
  const HypernetState h = desk.hypernet();
  const auto t1 = std::chrono::steady_clock::now();
  const std::vector<double> grid{0.25, 0.5, 0.75, 0.9, 0.95};
  EvalConfig ec;
  ec.edit = desk.cfg.edit;
  ec.sweep.clear();
  for (double s : grid) ec.sweep.push_back({true, s});

  ec.policy = MaskPolicy::kHypernet;
  ec.seed = desk.cfg.stream_seed("evaluate");
  const MetricsReport hyper = evaluate(base, &h, desk.scope(), b.groups, b.locality, ec);
  std::vector<double> gr, lr;
  std::ostringstream curve;
  for (const auto& p : hyper.points) {
    gr.push_back(p.mean_gr.value_or(0.0));
    lr.push_back(p.lr.value_or(1.0));
    curve << " s=" << p.control.value << ":(" << fmt(gr.back(), 3) << "," << fmt(lr.back(), 3) << ")";
  }
  const bool lr_up = trend_holds(lr, true);
  const bool gr_down = trend_holds(gr, false);
  note("hypernet curve (GR, LR):" + curve.str());

  int seeds_ok = 0;
  std::ostringstream wins;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    ec.policy = MaskPolicy::kRandom;
    ec.seed = desk::mix_seed(desk.cfg.stream_seed("random-masks"), seed);
    const MetricsReport rnd = evaluate(base, nullptr, desk.scope(), b.groups, b.locality, ec);
    int dom = 0;
    std::ostringstream rc;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const double rg = rnd.points[i].mean_gr.value_or(0.0), rl = rnd.points[i].lr.value_or(1.0);
      dom += dominates(gr[i], lr[i], rg, rl) ? 1 : 0;
      rc << " (" << fmt(rg, 3) << "," << fmt(rl, 3) << ")";
    }
    note("random seed " + std::to_string(seed) + ":" + rc.str());
    seeds_ok += dom >= 3 ? 1 : 0;
    wins << (seed > 1 ? "/" : "") << dom;
  }
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t1).count() / 60.0;
  return {lr_up && gr_down && seeds_ok >= 2 && minutes < 120.0,
          std::string("LR non-decreasing ") + (lr_up ? "yes" : "no") + ", GR non-increasing " +
              (gr_down ? "yes" : "no") + "; dominated points per seed " + wins.str() + " (need >= 3 in >= 2 seeds), " +
              fmt(minutes, 3) + " min"};
}

// ---------------------------------------------------------------------------
// 6. Mask specificity

Verdict mask_specificity(const Desk& desk) {
  const auto t1 = std::chrono::steady_clock::now();
  const BaseModel base = desk.base();
  const auto groups = mined_only(desk.benchmark());
  const HypernetState h = desk.hypernet();
  if (groups.size() < 2) return {false, "fewer than two mined groups"};
  const SpecificityReport r = mask_specificity_report(base, h, desk.scope(), groups, 0.95);
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t1).count() / 60.0;
  const double w = r.mean_within.value_or(0.0), bt = r.mean_between.value_or(1.0);
  return {r.mean_within && r.mean_between && w - bt >= 0.05 && minutes < 10.0,
          "within " + fmt(w) + ", between " + fmt(bt) + ", gap " + fmt(w - bt) + " (need >= 0.05), " +
              std::to_string(groups.size()) + " mined groups"};
}

// ---------------------------------------------------------------------------
// 7. Multi-sample editing

Verdict multi_sample(const Desk& desk) {
  const BaseModel base = desk.base();
  const Benchmark b = desk.benchmark();
  const HypernetState h = desk.hypernet();
  const std::uint64_t seed = desk.cfg.stream_seed("multi-sample");
  const auto mean = [](const std::vector<std::optional<double>>& v) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& x : v) {
      if (x) {
        s += *x;
        ++n;
      }
    }
    return n ? s / double(n) : 0.0;
  };
  const auto one = multi_sample_gr(base, h, desk.scope(), b.groups, 1, 3, 4, desk.cfg.edit, seed);
  const auto three = multi_sample_gr(base, h, desk.scope(), b.groups, 3, 3, 4, desk.cfg.edit, seed);
  const double g1 = mean(one), g3 = mean(three);
  return {g3 >= g1, "mean GR with 1 sample " + fmt(g1) + ", with 3 averaged samples " + fmt(g3)};
}

// ---------------------------------------------------------------------------
// 8. Meta-training descent

std::int64_t outer_step_peak(const Desk& desk, MetaPath path) {
  const BaseModel base = desk.base();
  const EditScope scope = desk.scope();
  const ScopedModel model(base, scope);
  const auto pool = desk::make_split(desk::base_train_split(1, 64), desk.cfg.vit.image_size);
  std::mt19937_64 rng(17);
  std::vector<PreparedEpisode> batch;
  for (int i = 0; i < desk.cfg.meta.outer.batch_size; ++i) {
    batch.push_back(prepare_episode(model, make_cutmix_episode(pool, base, rng, desk.cfg.meta.cutmix)));
  }
  HypernetConfig hc = HypernetConfig::for_model(base.config(), scope, 1);
  hc.num_blocks = desk.cfg.hyper_blocks;
  hc.num_heads = desk.cfg.hyper_heads;
  hc.hidden_dim = desk.cfg.hyper_hidden;
  HypernetState state = init_hypernet(hc);
  InnerLoopConfig inner = desk.cfg.meta.inner;
  inner.steps = 5;
  RmsProp opt({desk.cfg.meta.outer.lr, desk.cfg.meta.outer.rms_alpha, 1e-8});
  std::mt19937_64 aux_rng(3);
  ad::reset_peak_memory();
  const std::int64_t before = ad::memory_stats().live_bytes;
  if (path == MetaPath::kStandard) {
    outer_step_standard(state, opt, model, batch, inner, desk.cfg.meta.outer);
  } else {
    outer_step_decoupled(state, opt, model, batch, inner, desk.cfg.meta.outer, aux_rng);
  }
  return ad::memory_stats().peak_bytes - before;
}

Verdict meta_descent(const Desk& desk) {
  desk.ensure_hypernet();
  desk.ensure_decoupled();
  const MetaTrainLog std_log = read_meta_log(desk.cfg.path(desk.cfg.meta_log));
  const MetaTrainLog dec_log = read_meta_log(desk.decoupled_cfg.path(desk.decoupled_cfg.meta_log));
  const auto [s_first, s_last] = quarter_means(std_log);
  const auto [d_first, d_last] = quarter_means(dec_log);
  const std::int64_t std_peak = outer_step_peak(desk, MetaPath::kStandard);
  const std::int64_t dec_peak = outer_step_peak(desk, MetaPath::kDecoupled);
  const bool std_ok = s_last < 0.5 * s_first;
  const bool dec_ok = d_last < 0.5 * d_first;
  return {std_ok && dec_ok && dec_peak < std_peak,
          "standard KL " + fmt(s_first) + " -> " + fmt(s_last) + " (ratio " + fmt(s_last / s_first, 3) +
              "), decoupled KL " + fmt(d_first) + " -> " + fmt(d_last) + " (ratio " + fmt(d_last / d_first, 3) +
              "); peak graph memory at T=5: standard " + fmt(double(std_peak) / 1e6, 4) + " MB, decoupled " +
              fmt(double(dec_peak) / 1e6, 4) + " MB"};
}

// ---------------------------------------------------------------------------
// 9. MAD miner correctness

Verdict mad_correctness() {
  std::mt19937_64 rng(909);
  int trials = 0, bad = 0;
  const ClassDistance dists[] = {ClassDistance::zero_one(10), ClassDistance::desk_tree()};
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + rng() % 50;
    std::vector<int> b(n), s(n);
    for (std::size_t i = 0; i < n; ++i) {
      b[i] = int(rng() % 10);
      s[i] = rng() % 3 ? b[i] : int(rng() % 10);
    }
    for (const auto& d : dists) {
      const std::size_t k = 1 + rng() % n;
      // Exhaustive oracle: every permutation class is fixed by sorting on
      // (score desc, index asc); compare the full prefix.
      std::vector<std::size_t> order(n);
      for (std::size_t i = 0; i < n; ++i) order[i] = i;
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t x, std::size_t y) { return d(b[x], s[x]) > d(b[y], s[y]); });
      const auto got = mad_mine(b, s, d, k);
      bool ok = got.size() == k;
      for (std::size_t i = 0; ok && i < k; ++i) ok = got[i].pool_index == order[i];
      bad += ok ? 0 : 1;
      ++trials;
    }
  }
  return {bad == 0, std::to_string(trials) + " pools of size <= 50 under 0/1 and tree distances, " +
                        std::to_string(bad) + " mismatches"};
}

// ---------------------------------------------------------------------------
// 10. Scope search

Verdict scope_search_trend(const Desk& desk) {
  const BaseModel base = desk.base();
  const Benchmark b = desk.benchmark();
  EvalConfig ec;
  ec.edit = desk.cfg.edit;
  ec.max_edits_per_group = desk.cfg.max_edits_per_group;
  const auto results = scope_search(base, b.groups, b.locality, triple_candidates(base, true), ec);
  std::ostringstream all;
  bool found = false;
  for (const auto& f : results) {
    all << " " << f.candidate.name << "(" << fmt(f.gr, 3) << "," << fmt(f.lr, 3) << ")";
    if (f.candidate.msa) continue;
    bool dominates_all = true;
    for (const auto& m : results) {
      if (m.candidate.msa) dominates_all = dominates_all && dominates(f.gr, f.lr, m.gr, m.lr);
    }
    found = found || dominates_all;
  }
  return {found, std::string(found ? "an FFN triple dominates every MSA triple;" : "no FFN triple dominates all MSA triples;") +
                     all.str()};
}

}  // namespace

int main(int argc, char** argv) {
  std::string dir = VEDIT_ACCEPT_DIR;
  if (const char* e = std::getenv("VEDIT_ACCEPT_DIR")) dir = e;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  const Desk desk(dir);

  struct Criterion {
    int id;
    const char* name;
    std::function<Verdict()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "metric oracles", [] { return metric_oracles(); }},
      {2, "gradient fidelity", [] { return gradient_fidelity(); }},
      {3, "masked-update exactness", [] { return masked_update_exactness(); }},
      {4, "single-edit reliability", [&] { return single_edit_reliability(desk); }},
      {5, "generalization-locality trend", [&] { return tradeoff_trend(desk); }},
      {6, "mask specificity", [&] { return mask_specificity(desk); }},
      {7, "multi-sample editing", [&] { return multi_sample(desk); }},
      {8, "meta-training descent", [&] { return meta_descent(desk); }},
      {9, "MAD miner correctness", [] { return mad_correctness(); }},
      {10, "scope search", [&] { return scope_search_trend(desk); }},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << (v.pass ? "PASS" : "FAIL") << "  [" << c.id << "] " << c.name << ": " << v.detail << " ("
              << fmt(s, 3) << " s)" << std::endl;
    failed += v.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
