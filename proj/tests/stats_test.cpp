#include <gtest/gtest.h>

#include "dwrec/stats.hpp"

using namespace dwrec;

TEST(PairedTest, HandComputedDiffs) {
  const std::vector<double> a{0, 0, 0}, b{1, 2, 3};
  const auto s = paired_test(a, b);
  ASSERT_TRUE(s.t.has_value());
  EXPECT_NEAR(*s.t, 3.4641, 1e-4);
  EXPECT_NEAR(*s.cohens_d, 2.0, 1e-12);
  EXPECT_NEAR(s.ci_low, -0.484, 1e-3);
  EXPECT_NEAR(s.ci_high, 4.484, 1e-3);
  EXPECT_NEAR(*s.p, 0.0742, 1e-4);
}

TEST(PairedTest, ZeroVarianceIsFlaggedNotFatal) {
  const std::vector<double> a{1, 2, 3}, same{1, 2, 3}, shifted{2, 3, 4};
  const auto s = paired_test(a, same);
  EXPECT_FALSE(s.t.has_value());
  EXPECT_FALSE(s.cohens_d.has_value());
  EXPECT_FALSE(s.infinite_effect);
  const auto d = paired_test(a, shifted);
  EXPECT_FALSE(d.p.has_value());
  EXPECT_TRUE(d.infinite_effect);
}

TEST(PairedTest, MisalignedOrTooShort) {
  EXPECT_THROW(paired_test(std::vector<double>{1, 2}, std::vector<double>{1}), MetricError);
  EXPECT_THROW(paired_test(std::vector<double>{1}, std::vector<double>{2}), MetricError);
}

TEST(Bonferroni, MultipliesAndCaps) {
  EXPECT_DOUBLE_EQ(bonferroni(0.01, 4), 0.04);
  EXPECT_DOUBLE_EQ(bonferroni(0.4, 4), 1.0);
}

TEST(SignificanceSuite, AdjustsOverAllPairs) {
  const std::vector<std::pair<std::string, std::vector<double>>> samples{
      {"g", {0.10, 0.11, 0.12, 0.10, 0.09}},
      {"f", {0.12, 0.12, 0.15, 0.11, 0.10}},
      {"d", {0.15, 0.16, 0.16, 0.14, 0.15}}};
  const auto out = significance_suite(samples);
  ASSERT_EQ(out.size(), 3u);
  for (const auto& s : out) {
    ASSERT_TRUE(s.p && s.p_adjusted);
    EXPECT_GE(*s.p_adjusted, *s.p);
    EXPECT_LE(*s.p_adjusted, 1.0);
    EXPECT_DOUBLE_EQ(*s.p_adjusted, std::min(1.0, 3.0 * *s.p));
  }
  EXPECT_EQ(out[0].a, "g");
  EXPECT_EQ(out[0].b, "f");
}

TEST(ConfidenceInterval, HalfWidth) {
  EXPECT_FALSE(ci95_half_width(std::vector<double>{1.0}).has_value());
  EXPECT_NEAR(*ci95_half_width(std::vector<double>{1, 2, 3}), 4.302653 / std::sqrt(3.0), 1e-5);
}

TEST(Lift, Percent) {
  EXPECT_NEAR(lift_percent(0.082, 0.125), 52.44, 0.01);
  EXPECT_NEAR(lift_percent(0.051, 0.089), 74.51, 0.01);
  EXPECT_THROW(lift_percent(0.0, 1.0), MetricError);
}
