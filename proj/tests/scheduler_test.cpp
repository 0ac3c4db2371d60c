#include <cmath>

#include <gtest/gtest.h>

#include "dwrec/scheduler.hpp"

using namespace dwrec;

namespace {

WeightTable table(std::vector<double> w, double w_min = 0.2, double w_max = 5.0) {
  WeightTable t;
  for (std::size_t k = 0; k < w.size(); ++k) t.domains.push_back(std::string(1, static_cast<char>('A' + k)));
  t.weights = std::move(w);
  t.config.w_min = w_min;
  t.config.w_max = w_max;
  return t;
}

}  // namespace

TEST(ShouldUpdate, EveryNthEpoch) {
  EXPECT_TRUE(should_update(2, 2));
  EXPECT_FALSE(should_update(3, 2));
  for (int e = 1; e < 10; ++e) EXPECT_TRUE(should_update(e, 1));
  EXPECT_THROW(should_update(0, 2), ContractError);
}

TEST(EmaUpdate, SingleStep) {
  EXPECT_NEAR(ema_update(table({1.0}), table({2.0}), 0.9).weights[0], 1.1, 1e-15);
}

TEST(EmaUpdate, FixedPoint) {
  const auto t = table({0.3, 4.2});
  EXPECT_EQ(ema_update(t, t, 0.9).weights, t.weights);
}

TEST(EmaUpdate, GeometricContraction) {
  auto w = table({1.0});
  for (int t = 1; t <= 3; ++t) w = ema_update(w, table({2.0}), 0.9);
  EXPECT_NEAR(std::abs(w.weights[0] - 2.0), 0.729, 1e-12);
}

TEST(EmaUpdate, StepBoundedByRange) {
  for (double mu : {0.5, 0.9, 0.999}) {
    const auto next = ema_update(table({0.2}), table({5.0}), mu);
    EXPECT_LE(next.weights[0] - 0.2, (1.0 - mu) * 4.8 + 1e-12);
  }
}

TEST(EmaUpdate, ReclipsIntoBounds) {
  auto computed = table({9.0});
  const auto next = ema_update(table({5.0}), computed, 0.5);
  EXPECT_DOUBLE_EQ(next.weights[0], 5.0);
}

TEST(EmaUpdate, DomainMismatchIsScheduleError) {
  auto other = table({1.0});
  other.domains = {"Z"};
  EXPECT_THROW(ema_update(table({1.0}), other, 0.9), ScheduleError);
  EXPECT_THROW(ema_update(table({1.0}), table({1.0, 2.0}), 0.9), ScheduleError);
}

TEST(WeightSchedule, RecordsStrictlyIncreasingEpochs) {
  WeightSchedule s({0.9, 2}, table({1.0, 3.0}));
  for (int e = 1; e <= 10; ++e)
    if (s.should_update(e)) s.update(e, table({2.0, 2.0}));
  ASSERT_EQ(s.history().size(), 5u);
  for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(s.history()[k].epoch, static_cast<int>(2 * (k + 1)));
  EXPECT_THROW(s.update(10, table({2.0, 2.0})), ScheduleError);
}

TEST(ScheduleConfig, RejectsOutOfRange) {
  EXPECT_THROW((ScheduleConfig{1.0, 2}.validate()), ConfigError);
  EXPECT_THROW((ScheduleConfig{0.0, 2}.validate()), ConfigError);
  EXPECT_THROW((ScheduleConfig{0.5, 0}.validate()), ConfigError);
}
