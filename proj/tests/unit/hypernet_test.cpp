#include "test_util.hpp"

#include "vedit/hypernet.hpp"
#include "vedit/meta_train.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <set>

using namespace vedit;
using vedit::testing::random_image;
using vedit::testing::spread_model;
using vedit::testing::tiny_vit;

namespace {

ad::Matrix random_features(const HypernetConfig& c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0, 1);
  ad::Matrix f(c.feature_rows, c.embed_dim);
  for (ad::Index i = 0; i < f.size(); ++i) f.data()[i] = n(rng);
  return f;
}

}  // namespace

TEST(Hypernet, OutputShapeMatchesScope) {
  ViTConfig vc;  // desk default
  const HypernetConfig c = HypernetConfig::for_model(vc, EditScope::default_for(vc), 1);
  EXPECT_EQ(c.output_size(), std::size_t(vc.mlp_dim) * 6);
  const HypernetState s = init_hypernet(c);
  std::mt19937_64 rng(1);
  const auto m = hypernet_forward(s, random_features(c, rng));
  EXPECT_EQ(m.size(), std::size_t(vc.mlp_dim) * 6);
  EXPECT_EQ(m.source, MaskSource::kHypernetwork);
}

TEST(Hypernet, DeterministicInitAndForward) {
  const HypernetConfig c = HypernetConfig::for_model(tiny_vit(3), EditScope::ffn_range(1, 3), 4);
  const HypernetState a = init_hypernet(c), b = init_hypernet(c);
  EXPECT_TRUE(a.params().bit_equal(b.params()));
  std::mt19937_64 rng(2);
  const ad::Matrix f = random_features(c, rng);
  EXPECT_EQ(hypernet_forward(a, f).values, hypernet_forward(a, f).values);
  const auto& tokens = a.params().value(a.layout().tokens);
  ASSERT_EQ(tokens.rows(), 6);
  for (int i = 0; i < 6; ++i) {
    for (int j = i + 1; j < 6; ++j) EXPECT_GT((tokens.row(i) - tokens.row(j)).norm(), 0.0);
  }
}

TEST(Hypernet, InitialRelaxedMeanNearHalf) {
  ViTConfig vc;
  const HypernetConfig c = HypernetConfig::for_model(vc, EditScope::default_for(vc), 7);
  const HypernetState s = init_hypernet(c);
  std::mt19937_64 rng(3);
  double sum = 0;
  std::size_t n = 0;
  for (int t = 0; t < 8; ++t) {
    for (double v : relax(hypernet_forward(s, random_features(c, rng)), 10.0).values) {
      sum += v;
      ++n;
    }
  }
  const double mean = sum / double(n);
  EXPECT_GE(mean, 0.3);
  EXPECT_LE(mean, 0.7);
}

TEST(Hypernet, BatchedGraphMatchesSingle) {
  const HypernetConfig c = HypernetConfig::for_model(tiny_vit(3), EditScope::ffn_range(1, 3), 5);
  const HypernetState s = init_hypernet(c);
  std::mt19937_64 rng(4);
  const ad::Matrix f1 = random_features(c, rng), f2 = random_features(c, rng);
  const ad::Matrix both = hypernet_graph_batch(s, s.params().vars(), {&f1, &f2}).value();
  const auto m1 = hypernet_forward(s, f1), m2 = hypernet_forward(s, f2);
  for (std::size_t i = 0; i < m1.size(); ++i) {
    EXPECT_NEAR(both(0, ad::Index(i)), m1.values[i], 1e-12);
    EXPECT_NEAR(both(1, ad::Index(i)), m2.values[i], 1e-12);
  }
}

TEST(Hypernet, InvalidInputsRejected) {
  const HypernetConfig c = HypernetConfig::for_model(tiny_vit(3), EditScope::ffn_range(1, 3), 5);
  const HypernetState s = init_hypernet(c);
  EXPECT_THROW(hypernet_forward(s, ad::Matrix::Zero(3, 3)), std::invalid_argument);
  ad::Matrix bad = ad::Matrix::Zero(c.feature_rows, c.embed_dim);
  bad(0, 0) = std::nan("");
  EXPECT_THROW(hypernet_forward(s, bad), std::invalid_argument);
}

TEST(Hypernet, CheckpointRoundTrip) {
  const HypernetConfig c = HypernetConfig::for_model(tiny_vit(3), EditScope::ffn_range(1, 3), 6);
  const HypernetState s = init_hypernet(c);
  const std::string path = (std::filesystem::temp_directory_path() / "vedit_hyper_rt.ckpt").string();
  save_hypernet(path, s);
  const HypernetState back = load_hypernet(path);
  EXPECT_TRUE(back.params().bit_equal(s.params()));
  EXPECT_EQ(back.config(), s.config());
  std::filesystem::remove(path);
}

TEST(Hypernet, OuterGradientMatchesFiniteDifferences) {
  const ViTConfig vc = tiny_vit(3, 21);
  const BaseModel base = spread_model(vc, 0.4);
  const EditScope scope = EditScope::ffn_range(1, 3);
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
  outer.lambda = 1e-3;

  ParamStore p = state.params().trainable_copy();
  const auto g = ad::grad(standard_objective(state, p.vars(), model, batch, inner, outer), p.vars());
  // Gradient recording stays on: the inner loop differentiates.
  const auto f = [&](const ParamStore& q) {
    return standard_objective(state, q.vars(), model, batch, inner, outer).item();
  };
  std::uniform_int_distribution<std::size_t> pick_t(0, p.size() - 1);
  int checked = 0;
  while (checked < 20) {
    const std::size_t t = pick_t(rng);
    const ad::Matrix v0 = state.params().value(t);
    std::uniform_int_distribution<ad::Index> pick_i(0, v0.size() - 1);
    const ad::Index i = pick_i(rng);
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
    EXPECT_NEAR(an, fd, 1e-3 * std::max(std::abs(fd), std::abs(an))) << state.params().info(t).name << "[" << i << "]";
    ++checked;
  }
}
