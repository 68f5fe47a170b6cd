#include "test_util.hpp"

#include "vedit/meta_train.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace vedit;
using vedit::testing::random_image;
using vedit::testing::random_labeled;
using vedit::testing::spread_model;
using vedit::testing::tiny_vit;

namespace {

struct Fixture {
  ViTConfig vc = tiny_vit(3, 31);
  BaseModel base = spread_model(vc, 0.4);
  EditScope scope = EditScope::ffn_range(1, 3);
  ScopedModel model{base, scope};

  PreparedEpisode episode(std::mt19937_64& rng) const {
    PseudoEpisode ep;
    ep.clean = random_image(8, rng);
    ep.perturbed = random_image(8, rng);
    ep.soft_label = forward_probs(base, ep.clean);
    ep.clean_label = argmax(ep.soft_label);
    return prepare_episode(model, ep);
  }
};

}  // namespace

TEST(MetaTrain, ReliabilityKlValues) {
  EXPECT_DOUBLE_EQ(reliability_kl({0.3, 0.7}, {0.3, 0.7}), 0.0);
  EXPECT_NEAR(reliability_kl({0.5, 0.5}, {0.9, 0.1}), 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1), 1e-15);
  std::mt19937_64 rng(1);
  std::gamma_distribution<double> g(0.5, 1.0);
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> p(5), q(5);
    double sp = 0, sq = 0;
    for (int i = 0; i < 5; ++i) {
      sp += p[std::size_t(i)] = g(rng) + 1e-300;
      sq += q[std::size_t(i)] = g(rng) + 1e-300;
    }
    for (int i = 0; i < 5; ++i) {
      p[std::size_t(i)] /= sp;
      q[std::size_t(i)] /= sq;
    }
    EXPECT_GE(reliability_kl(p, q), -1e-15);
  }
}

TEST(MetaTrain, KlGraphMatchesScalar) {
  const ProbabilityVector p{0.2, 0.5, 0.3};
  const ad::Matrix logits = (ad::Matrix(1, 3) << 0.1, -0.4, 1.2).finished();
  EXPECT_NEAR(reliability_kl_graph(p, ad::Var::constant(logits)).item(), reliability_kl(p, softmax(logits)), 1e-14);
}

TEST(MetaTrain, ZeroMaskLeavesWeightsUnchanged) {
  Fixture f;
  std::mt19937_64 rng(2);
  const PreparedEpisode ep = f.episode(rng);
  const ad::Var zero = ad::Var::constant(ad::Matrix::Zero(1, ad::Index(f.model.num_slots())));
  const InnerLoopResult r = inner_loop(f.model, zero, ep, InnerLoopConfig{}, false);
  for (std::size_t t = 0; t < r.weights.size(); ++t) EXPECT_EQ(r.weights[t].value(), f.model.base_value(t));
  EXPECT_EQ(r.losses.size(), 6u);
}

TEST(MetaTrain, OneStepAllOnesIsPlainGradientStep) {
  Fixture f;
  std::mt19937_64 rng(3);
  const PreparedEpisode ep = f.episode(rng);
  InnerLoopConfig cfg;
  cfg.steps = 1;
  cfg.lr = 0.05;
  cfg.clip_norm = 1e9;
  const ad::Var ones = ad::Var::constant(ad::Matrix::Ones(1, ad::Index(f.model.num_slots())));
  const InnerLoopResult r = inner_loop(f.model, ones, ep, cfg, false);
  std::vector<ad::Var> w;
  for (std::size_t t = 0; t < f.model.num_tensors(); ++t) w.push_back(ad::Var::leaf(f.model.base_value(t)));
  const auto g = ad::grad(episode_loss(ep, f.model.logits(w, ep.hidden)), w);
  for (std::size_t t = 0; t < w.size(); ++t) {
    const ad::Matrix want = f.model.base_value(t) - cfg.lr * g[t].value();
    EXPECT_LT((r.weights[t].value() - want).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(MetaTrain, BernoulliKlIsZeroAtTarget) {
  const ad::Matrix t = (ad::Matrix(1, 4) << 0.3, -0.2, 2.0, -5.0).finished();
  EXPECT_NEAR(bernoulli_kl_graph(t, ad::Var::constant(t), 10.0).item(), 0.0, 1e-14);
  EXPECT_GT(bernoulli_kl_graph(t, ad::Var::constant(-t), 10.0).item(), 0.0);
}

TEST(MetaTrain, ZeroIterationsReturnsInitialState) {
  Fixture f;
  std::mt19937_64 rng(4);
  const auto pool = random_labeled(8, 8, rng);
  const HypernetConfig hc = HypernetConfig::for_model(f.vc, f.scope, 3);
  MetaTrainConfig cfg;
  cfg.outer.max_iters = 0;
  cfg.cutmix = CutMixConfig{1, 4};
  MetaTrainLog log;
  const HypernetState s = train_hypernetwork(f.base, pool, f.scope, hc, cfg, &log);
  EXPECT_TRUE(s.params().bit_equal(init_hypernet(hc).params()));
  EXPECT_EQ(log.size(), 0u);
}

TEST(MetaTrain, LogLengthEqualsIterationsAndRunIsDeterministic) {
  Fixture f;
  std::mt19937_64 rng(5);
  const auto pool = random_labeled(8, 8, rng);
  const HypernetConfig hc = HypernetConfig::for_model(f.vc, f.scope, 3);
  for (MetaPath path : {MetaPath::kStandard, MetaPath::kDecoupled}) {
    MetaTrainConfig cfg;
    cfg.path = path;
    cfg.outer.max_iters = 3;
    cfg.outer.batch_size = 2;
    cfg.outer.aux_steps = 2;
    cfg.cutmix = CutMixConfig{1, 4};
    cfg.seed = 9;
    MetaTrainLog l1, l2;
    const HypernetState a = train_hypernetwork(f.base, pool, f.scope, hc, cfg, &l1);
    const HypernetState b = train_hypernetwork(f.base, pool, f.scope, hc, cfg, &l2);
    EXPECT_EQ(l1.size(), 3u);
    EXPECT_TRUE(a.params().bit_equal(b.params()));
    for (std::size_t i = 0; i < l1.size(); ++i) EXPECT_EQ(l1.records()[i].kl_loss, l2.records()[i].kl_loss);
  }
}

TEST(MetaTrain, LargeLambdaShrinksTheMask) {
  Fixture f;
  std::mt19937_64 rng(6);
  std::vector<PreparedEpisode> batch{f.episode(rng), f.episode(rng)};
  HypernetConfig hc = HypernetConfig::for_model(f.vc, f.scope, 4);
  hc.num_blocks = 1;
  HypernetState s = init_hypernet(hc);
  const auto mean_relaxed = [&] {
    double m = 0;
    for (const auto& ep : batch) {
      for (double v : relax(hypernet_forward(s, ep.features)).values) m += v;
    }
    return m / double(batch.size() * f.model.num_slots());
  };
  const double before = mean_relaxed();
  OuterLoopConfig outer;
  outer.lambda = 0.1;  // 1e3 x default
  outer.lr = 1e-3;
  InnerLoopConfig inner;
  inner.steps = 1;
  RmsProp opt({outer.lr, outer.rms_alpha, 1e-8});
  for (int i = 0; i < 100; ++i) outer_step_standard(s, opt, f.model, batch, inner, outer);
  EXPECT_LT(mean_relaxed(), before);
}

TEST(MetaTrain, DecoupledStepMovesHypernetTowardAuxiliaryTarget) {
  Fixture f;
  std::mt19937_64 rng(7);
  const std::vector<PreparedEpisode> batch{f.episode(rng), f.episode(rng)};
  HypernetConfig hc = HypernetConfig::for_model(f.vc, f.scope, 5);
  hc.num_blocks = 1;
  HypernetState s = init_hypernet(hc);
  OuterLoopConfig outer;
  outer.lr = 1e-3;
  InnerLoopConfig inner;
  inner.steps = 2;
  RmsProp opt({outer.lr, outer.rms_alpha, 1e-8});
  std::mt19937_64 aux_rng(1);
  std::vector<ContinuousMask> aux;
  const OuterStepStats st = outer_step_decoupled(s, opt, f.model, batch, inner, outer, aux_rng, &aux);
  ASSERT_FALSE(st.skipped);
  ASSERT_EQ(aux.size(), batch.size());
  ad::Matrix targets(2, ad::Index(f.model.num_slots()));
  for (ad::Index e = 0; e < 2; ++e) {
    for (ad::Index i = 0; i < targets.cols(); ++i) targets(e, i) = aux[std::size_t(e)].values[std::size_t(i)];
  }
  const double after =
      bernoulli_kl_graph(targets, hypernet_graph_batch(s, s.params().vars(), {&batch[0].features, &batch[1].features}),
                         outer.temperature)
          .item();
  EXPECT_LT(after, st.aux_loss);
}

TEST(MetaTrain, LogRejectsNonIncreasingIterations) {
  MetaTrainLog log;
  log.append({1, 0.5, 0, 0, 0, 1.0, false});
  EXPECT_THROW(log.append({1, 0.5, 0, 0, 0, 2.0, false}), std::invalid_argument);
  EXPECT_THROW(log.append({2, 0.5, 0, 0, 0, 0.5, false}), std::invalid_argument);
}
