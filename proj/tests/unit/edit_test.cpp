#include "test_util.hpp"

#include "vedit/edit.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace vedit;
using vedit::testing::random_image;
using vedit::testing::spread_model;
using vedit::testing::tiny_vit;

namespace {

struct EditFixture {
  ViTConfig vc = tiny_vit(3, 41);
  BaseModel base = spread_model(vc, 0.4);
  EditScope scope = EditScope::ffn_range(2, 2);
  HypernetState hyper = [&] {
    HypernetConfig hc = HypernetConfig::for_model(vc, scope, 2);
    hc.num_blocks = 1;
    hc.head_init_std = 0.5;
    return init_hypernet(hc);
  }();
  EditConfig cfg = [] {
    EditConfig c;
    c.lr = 1e-2;
    c.max_steps = 30;
    return c;
  }();

  EditRequest request(std::mt19937_64& rng, double rho) const {
    EditRequest r;
    r.image = random_image(8, rng);
    r.label = (predict(base, r.image) + 3) % vc.num_classes;
    r.rho = rho;
    return r;
  }
};

std::size_t changed_scalars(const ParamStore& a, const ParamStore& b) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += std::size_t((a.value(i).array() != b.value(i).array()).count());
  return n;
}

}  // namespace

TEST(Edit, CrossEntropyValues) {
  EXPECT_DOUBLE_EQ(cross_entropy({0.0, 1.0}, 1), 0.0);
  EXPECT_NEAR(cross_entropy({0.5, 0.5}, 0), std::log(2.0), 1e-15);
  EXPECT_NEAR(cross_entropy({1.0, 0.0}, 1), -std::log(1e-12), 1e-9);
  double prev = 1e300;
  for (double p : {0.01, 0.1, 0.4, 0.8, 0.99}) {
    const double l = cross_entropy({1 - p, p}, 1);
    EXPECT_LT(l, prev);
    prev = l;
  }
  EXPECT_THROW(cross_entropy({0.5, 0.5}, 2), std::invalid_argument);
}

TEST(Edit, ConfidentCorrectSampleStopsAtStepZero) {
  EditFixture s;
  ParamStore p = s.base.params();
  p.set(s.base.layout().head_w, p.value(s.base.layout().head_w) * 200.0);
  const BaseModel sharp = s.base.with_params(p);
  std::mt19937_64 rng(1);
  EditRequest r;
  for (int tries = 0; tries < 50; ++tries) {
    r.image = random_image(8, rng);
    r.label = predict(sharp, r.image);
    if (cross_entropy(forward_probs(sharp, r.image), r.label) < 0.01) break;
  }
  ASSERT_LT(cross_entropy(forward_probs(sharp, r.image), r.label), 0.01);
  const EditOutcome o = edit_once(sharp, s.hyper, s.scope, r, s.cfg);
  EXPECT_EQ(o.steps, 0);
  EXPECT_TRUE(o.success);
  EXPECT_TRUE(o.params.bit_equal(sharp.params()));
}

TEST(Edit, RhoZeroEqualsFineTuningTheWholeScope) {
  EditFixture s;
  std::mt19937_64 rng(2);
  const EditRequest r = s.request(rng, 0.0);
  const EditOutcome masked = edit_once(s.base, s.hyper, s.scope, r, s.cfg);
  EXPECT_EQ(masked.mask->ones(), masked.mask->size());
  const ScopedModel model(s.base, s.scope);
  const PreparedEpisode ep = prepare_sample(model, r.image, r.label);
  const EditOutcome ft = tune_masked(model, std::nullopt, {&ep}, s.cfg);
  EXPECT_TRUE(masked.params.bit_equal(ft.params));
  EXPECT_EQ(masked.steps, ft.steps);
  EXPECT_EQ(masked.losses, ft.losses);
}

TEST(Edit, UpdatesOnlySelectedSlotsWithExactCount) {
  EditFixture s;
  std::mt19937_64 rng(3);
  const std::size_t scoped = s.scope.scoped_param_count(s.vc);
  for (double sp : {0.25, 0.5, 0.9}) {
    EditRequest r = s.request(rng, 0.0);
    r.target_sparsity = sp;
    const EditOutcome o = edit_once(s.base, s.hyper, s.scope, r, s.cfg);
    ASSERT_GT(o.steps, 0);
    EXPECT_EQ(o.updated_scalars, std::size_t(std::lround((1.0 - o.mask->sparsity()) * double(scoped))));
    EXPECT_EQ(changed_scalars(o.params, s.base.params()), o.updated_scalars);
  }
}

TEST(Edit, HigherRhoNeverUpdatesMore) {
  EditFixture s;
  std::mt19937_64 rng(4);
  const EditRequest base_req = s.request(rng, 0.0);
  std::size_t prev = SIZE_MAX;
  for (double rho : {0.0, 0.2, 0.4, 0.5, 0.6, 0.8, 0.99}) {
    EditRequest r = base_req;
    r.rho = rho;
    EditConfig c = s.cfg;
    c.max_steps = 1;
    const EditOutcome o = edit_once(s.base, s.hyper, s.scope, r, c);
    EXPECT_LE(o.updated_scalars, prev);
    prev = o.updated_scalars;
  }
}

TEST(Edit, DeterministicAndConsistentWithFreshForward) {
  EditFixture s;
  std::mt19937_64 rng(5);
  const EditRequest r = s.request(rng, 0.5);
  const EditOutcome a = edit_once(s.base, s.hyper, s.scope, r, s.cfg);
  const EditOutcome b = edit_once(s.base, s.hyper, s.scope, r, s.cfg);
  EXPECT_TRUE(a.params.bit_equal(b.params));
  EXPECT_EQ(a.losses, b.losses);
  EXPECT_EQ(a.success, predict(s.base.with_params(a.params), r.image) == r.label);
  EXPECT_EQ(a.losses.size(), std::size_t(a.steps) + 1);
  EXPECT_DOUBLE_EQ(a.final_loss, a.losses.back());
  EXPECT_NEAR(a.final_loss, cross_entropy(forward_probs(s.base.with_params(a.params), r.image), r.label), 1e-9);
}

TEST(Edit, StopsAtBudgetOrThreshold) {
  EditFixture s;
  std::mt19937_64 rng(6);
  for (int i = 0; i < 4; ++i) {
    const EditRequest r = s.request(rng, 0.0);
    const EditOutcome o = edit_once(s.base, s.hyper, s.scope, r, s.cfg);
    EXPECT_TRUE(o.steps == s.cfg.max_steps || o.final_loss < s.cfg.stop_loss);
    for (std::size_t t = 0; t + 1 < o.losses.size(); ++t) EXPECT_GE(o.losses[t], s.cfg.stop_loss);
  }
}

TEST(Edit, MultiWithOneRequestMatchesSingle) {
  EditFixture s;
  std::mt19937_64 rng(7);
  const EditRequest r = s.request(rng, 0.5);
  const EditOutcome a = edit_once(s.base, s.hyper, s.scope, r, s.cfg);
  const EditOutcome b = edit_multi(s.base, s.hyper, s.scope, std::vector<EditRequest>{r}, s.cfg);
  EXPECT_EQ(a.mask->bits, b.mask->bits);
  EXPECT_TRUE(a.params.bit_equal(b.params));
  EXPECT_THROW(edit_multi(s.base, s.hyper, s.scope, std::vector<EditRequest>{}, s.cfg), std::invalid_argument);
}

TEST(Edit, AveragedMaskSparsityBetweenIndividualOnes) {
  EditFixture s;
  std::mt19937_64 rng(8);
  EditConfig c = s.cfg;
  c.max_steps = 0;
  for (int t = 0; t < 10; ++t) {
    std::vector<EditRequest> reqs{s.request(rng, 0.5), s.request(rng, 0.5), s.request(rng, 0.5)};
    double lo = 1, hi = 0;
    for (const auto& r : reqs) {
      const double sp = edit_once(s.base, s.hyper, s.scope, r, c).mask->sparsity();
      lo = std::min(lo, sp);
      hi = std::max(hi, sp);
    }
    const double avg = edit_multi(s.base, s.hyper, s.scope, reqs, c).mask->sparsity();
    EXPECT_GE(avg, lo);
    EXPECT_LE(avg, hi);
  }
}

TEST(Edit, RejectsMismatchedHypernetAndBadRequests) {
  EditFixture s;
  std::mt19937_64 rng(9);
  EditRequest r = s.request(rng, 0.5);
  EXPECT_THROW(edit_once(s.base, s.hyper, EditScope::ffn_range(1, 3), r, s.cfg), std::invalid_argument);
  r.label = 10;
  EXPECT_THROW(edit_once(s.base, s.hyper, s.scope, r, s.cfg), std::invalid_argument);
  r.label = 1;
  r.target_sparsity = 1.5;
  EXPECT_THROW(edit_once(s.base, s.hyper, s.scope, r, s.cfg), std::invalid_argument);
}

TEST(Edit, BaseIsUntouched) {
  EditFixture s;
  const ParamStore before = s.base.params();
  std::mt19937_64 rng(10);
  edit_once(s.base, s.hyper, s.scope, s.request(rng, 0.0), s.cfg);
  EXPECT_TRUE(s.base.params().bit_equal(before));
}

TEST(Edit, ResultsLogHasOneJsonObjectPerLine) {
  const std::string path = (std::filesystem::temp_directory_path() / "vedit_edit_log.jsonl").string();
  std::filesystem::remove(path);
  append_edit_log(path, {"g/0", "g", 0.5, 0.9, 12, true, 0.004});
  append_edit_log(path, {"g/1", "g", 0.5, 0.8, 100, false, 0.7});
  std::ifstream in(path);
  std::string l1, l2, l3;
  std::getline(in, l1);
  std::getline(in, l2);
  EXPECT_FALSE(std::getline(in, l3));
  EXPECT_NE(l1.find("\"request_id\":\"g/0\""), std::string::npos);
  EXPECT_NE(l2.find("\"success\":false"), std::string::npos);
  std::filesystem::remove(path);
}
