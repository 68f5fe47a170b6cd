#include "vedit/desk_data.hpp"
#include "vedit/edit.hpp"
#include "vedit/meta_train.hpp"
#include "vedit/pseudo_data.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace vedit;

namespace {

struct Setup {
  ViTConfig vc;
  BaseModel base{vc};
  EditScope scope = EditScope::ffn_range(4);
  ScopedModel model{base, scope};
  HypernetState hyper = init_hypernet(HypernetConfig::for_model(vc, scope, 3));
  LabeledImages data = desk::make_split(desk::heldout_split(1, 16));

  std::vector<PreparedEpisode> episodes(std::size_t n) const {
    std::mt19937_64 rng(5);
    std::vector<PreparedEpisode> out;
    for (std::size_t i = 0; i < n; ++i) {
      out.push_back(prepare_episode(model, make_cutmix_episode(data, base, rng, {})));
    }
    return out;
  }
};

const Setup& setup() {
  static const Setup s;
  return s;
}

void BM_Forward(benchmark::State& state) {
  const auto& s = setup();
  for (auto _ : state) benchmark::DoNotOptimize(forward_probs(s.base, s.data[0].image));
}
BENCHMARK(BM_Forward)->Unit(benchmark::kMillisecond);

void BM_HypernetForward(benchmark::State& state) {
  const auto& s = setup();
  const auto eps = s.episodes(1);
  for (auto _ : state) benchmark::DoNotOptimize(hypernet_forward(s.hyper, eps[0].features));
}
BENCHMARK(BM_HypernetForward)->Unit(benchmark::kMillisecond);

void BM_InnerLoop(benchmark::State& state) {
  const auto& s = setup();
  const auto eps = s.episodes(1);
  InnerLoopConfig cfg;
  cfg.steps = int(state.range(0));
  const ad::Var mask = ad::Var::constant(ad::Matrix::Constant(1, ad::Index(s.model.num_slots()), 0.5));
  for (auto _ : state) benchmark::DoNotOptimize(inner_loop(s.model, mask, eps[0], cfg, false).losses.back());
}
BENCHMARK(BM_InnerLoop)->Arg(1)->Arg(5)->Unit(benchmark::kMillisecond);

void BM_OuterStep(benchmark::State& state) {
  const auto& s = setup();
  const auto eps = s.episodes(std::size_t(state.range(1)));
  InnerLoopConfig inner;
  OuterLoopConfig outer;
  HypernetState h = s.hyper;
  RmsProp opt({outer.lr, outer.rms_alpha, 1e-8});
  std::mt19937_64 rng(1);
  const bool decoupled = state.range(0) == 1;
  for (auto _ : state) {
    ad::reset_peak_memory();
    const auto st = decoupled ? outer_step_decoupled(h, opt, s.model, eps, inner, outer, rng)
                              : outer_step_standard(h, opt, s.model, eps, inner, outer);
    benchmark::DoNotOptimize(st.kl_loss);
  }
  state.counters["peak_MB"] = double(ad::memory_stats().peak_bytes) / 1e6;
  state.SetLabel(decoupled ? "decoupled" : "standard");
}
BENCHMARK(BM_OuterStep)->Args({0, 1})->Args({1, 1})->Args({0, 8})->Args({1, 8})->Unit(benchmark::kMillisecond);

void BM_EditOnce(benchmark::State& state) {
  const auto& s = setup();
  EditRequest req;
  req.image = s.data[0].image;
  req.label = (s.data[0].label + 1) % s.vc.num_classes;
  req.rho = 0.5;
  EditConfig cfg;
  cfg.max_steps = int(state.range(0));
  cfg.stop_loss = 0.0;
  for (auto _ : state) benchmark::DoNotOptimize(edit_once(s.base, s.hyper, s.scope, req, cfg).steps);
}
BENCHMARK(BM_EditOnce)->Arg(10)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
