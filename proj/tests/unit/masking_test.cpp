#include "vedit/masking.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

using namespace vedit;

namespace {

ContinuousMask cm(std::vector<double> v) { return ContinuousMask{std::move(v), MaskSource::kExternal}; }

BinaryMask bits(const std::string& s) {
  BinaryMask b;
  for (char c : s) b.bits.push_back(c == '1');
  return b;
}

}  // namespace

TEST(Masking, RelaxValues) {
  EXPECT_DOUBLE_EQ(relax(cm({0.0}), 3.0).values[0], 0.5);
  EXPECT_NEAR(relax(cm({0.3}), 10.0).values[0], 1.0 / (1.0 + std::exp(-3.0)), 1e-15);
  double prev = 0.0;
  for (double k : {1.0, 2.0, 5.0, 10.0, 50.0}) {
    const double v = relax(cm({2.0}), k).values[0];
    EXPECT_GT(v, prev);
    prev = v;
  }
  EXPECT_THROW(relax(cm({0.1, std::nan("")})), std::invalid_argument);
  EXPECT_THROW(relax(cm({0.1}), 0.0), std::invalid_argument);
  const auto r = relax(cm({-1e6, 1e6, 0.1}));
  for (double v : r.values) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Masking, RelaxGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 0.3);
  std::vector<double> v(40);
  for (auto& x : v) x = n(rng);
  const auto g = relax_gradient(cm(v), 10.0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double h = 1e-6;
    auto p = v, m = v;
    p[i] += h;
    m[i] -= h;
    const double fd = (relax(cm(p)).values[i] - relax(cm(m)).values[i]) / (2 * h);
    EXPECT_NEAR(g[i], fd, 1e-5 * std::abs(fd) + 1e-12);
  }
}

TEST(Masking, BinarizeThresholds) {
  const ContinuousMask m = cm({0.0, 0.2, 1.5, 0.7});
  EXPECT_EQ(binarize(m, 0.0).ones(), 4u);
  EXPECT_EQ(binarize(m, 1.6).ones(), 0u);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int n : {7, 8, 31, 64}) {
    std::vector<double> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = u(rng);
    auto s = v;
    std::sort(s.begin(), s.end());
    const double median = n % 2 ? s[std::size_t(n / 2)] : 0.5 * (s[std::size_t(n / 2 - 1)] + s[std::size_t(n / 2)]);
    const double sp = binarize(cm(v), median).sparsity();
    EXPECT_TRUE(sp == double(n / 2) / n || sp == double((n + 1) / 2) / n) << sp;
  }
}

TEST(Masking, AverageMasks) {
  const ContinuousMask a = cm({1.0, -2.0, 0.5});
  EXPECT_EQ(average_masks(std::vector<ContinuousMask>{a}).values, a.values);
  const ContinuousMask neg = cm({-1.0, 2.0, -0.5});
  for (double v : average_masks(std::vector<ContinuousMask>{a, neg}).values) EXPECT_DOUBLE_EQ(v, 0.0);
  const ContinuousMask b = cm({0.3, 0.3, 0.3}), c = cm({-0.6, 0.9, 1.2});
  const auto avg = average_masks(std::vector<ContinuousMask>{a, b, c});
  EXPECT_DOUBLE_EQ(avg.values[0], (1.0 + 0.3 - 0.6) / 3);
  EXPECT_DOUBLE_EQ(avg.values[1], (-2.0 + 0.3 + 0.9) / 3);
  EXPECT_DOUBLE_EQ(avg.values[2], (0.5 + 0.3 + 1.2) / 3);
  EXPECT_THROW(average_masks(std::vector<ContinuousMask>{}), std::invalid_argument);
  EXPECT_THROW(average_masks(std::vector<ContinuousMask>{a, cm({1.0})}), std::invalid_argument);
}

TEST(Masking, Iou) {
  EXPECT_DOUBLE_EQ(mask_iou(bits("0110"), bits("0110")), 1.0);
  EXPECT_DOUBLE_EQ(mask_iou(bits("1100"), bits("0011")), 0.0);
  EXPECT_DOUBLE_EQ(mask_iou(bits("1100"), bits("1010")), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(mask_iou(bits("0000"), bits("0000")), 1.0);
  EXPECT_THROW(mask_iou(bits("01"), bits("011")), std::invalid_argument);
}

TEST(Masking, SparsityToThreshold) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> v(120);
  for (auto& x : v) x = u(rng);
  const ContinuousMask m = cm(v);
  EXPECT_EQ(binarize(m, sparsity_to_threshold(m, 0.95)).ones(), 6u);
  const double t0 = sparsity_to_threshold(m, 0.0);
  EXPECT_LE(t0, *std::min_element(v.begin(), v.end()));
  EXPECT_EQ(binarize(m, t0).ones(), 120u);
  EXPECT_EQ(binarize(m, sparsity_to_threshold(m, 1.0)).ones(), 0u);
  for (double s : {0.25, 0.5, 0.75, 0.9}) {
    EXPECT_NEAR(binarize(m, sparsity_to_threshold(m, s)).sparsity(), s, 0.5 / 120 + 1e-12);
  }
}

TEST(Masking, RandomMaskHasExactCount) {
  std::mt19937_64 rng(4);
  for (double s : {0.0, 0.25, 0.5, 0.95, 1.0}) {
    const auto b = random_mask(768, s, rng);
    EXPECT_EQ(b.ones(), std::size_t(std::lround((1 - s) * 768)));
  }
}

TEST(Masking, FileRoundTrip) {
  std::mt19937_64 rng(5);
  MaskFile f{"ffn:4-6", random_mask(37, 0.5, rng)};
  std::stringstream ss;
  write_mask(ss, f);
  const MaskFile back = read_mask(ss);
  EXPECT_EQ(back.scope, f.scope);
  EXPECT_EQ(std::get<BinaryMask>(back.mask).bits, std::get<BinaryMask>(f.mask).bits);
  MaskFile c{"x", cm({0.25, -1.5})};
  std::stringstream s2;
  write_mask(s2, c);
  EXPECT_EQ(std::get<ContinuousMask>(read_mask(s2).mask).values, std::get<ContinuousMask>(c.mask).values);
}
