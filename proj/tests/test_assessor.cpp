#include <gtest/gtest.h>

#include "spikehpo/assessor.hpp"

using namespace spikehpo;

namespace {

void add_completed(MedianStopAssessor& a, const std::string& id, double value, std::size_t steps) {
  for (std::size_t s = 1; s <= steps; ++s) a.record(id, s, value);
  a.complete(id);
}

}  // namespace

TEST(Assessor, StopsAtStartStepWhenBelowMedian) {
  MedianStopAssessor a;
  add_completed(a, "t1", 0.5, 10);
  add_completed(a, "t2", 0.6, 10);
  add_completed(a, "t3", 0.7, 10);
  for (std::size_t s = 1; s <= 10; ++s) {
    a.record("cur", s, 0.55);
    const auto v = a.assess("cur", s);
    if (s < 10)
      EXPECT_EQ(v, Verdict::Continue) << "step " << s;
    else
      EXPECT_EQ(v, Verdict::Stop);
  }
}

TEST(Assessor, NeverStopsBeforeStartStep) {
  MedianStopAssessor a;
  for (int i = 0; i < 5; ++i) add_completed(a, "c" + std::to_string(i), 1.0, 20);
  for (std::size_t s = 1; s < 10; ++s) {
    a.record("cur", s, 0.0);
    EXPECT_EQ(a.assess("cur", s), Verdict::Continue);
  }
}

TEST(Assessor, QuorumRequired) {
  MedianStopAssessor a;
  add_completed(a, "t1", 0.9, 12);
  add_completed(a, "t2", 0.9, 12);
  // Long enough but not complete: does not count.
  for (std::size_t s = 1; s <= 12; ++s) a.record("running", s, 0.9);
  // Complete but too short: does not count.
  add_completed(a, "short", 0.9, 5);
  for (std::size_t s = 1; s <= 12; ++s) a.record("cur", s, 0.1);
  EXPECT_EQ(a.assess("cur", 12), Verdict::Continue);
  add_completed(a, "t3", 0.9, 12);
  EXPECT_EQ(a.assess("cur", 12), Verdict::Stop);
}

TEST(Assessor, EqualToMedianContinues) {
  MedianStopAssessor a;
  add_completed(a, "t1", 0.5, 10);
  add_completed(a, "t2", 0.6, 10);
  add_completed(a, "t3", 0.7, 10);
  for (std::size_t s = 1; s <= 10; ++s) a.record("cur", s, s == 4 ? 0.6 : 0.1);
  EXPECT_EQ(a.assess("cur", 10), Verdict::Continue);
}

TEST(Assessor, LowerMedianForEvenCounts) {
  MedianStopAssessor a;
  add_completed(a, "t1", 0.2, 10);
  add_completed(a, "t2", 0.4, 10);
  add_completed(a, "t3", 0.6, 10);
  add_completed(a, "t4", 0.8, 10);
  for (std::size_t s = 1; s <= 10; ++s) a.record("cur", s, 0.45);
  EXPECT_EQ(a.assess("cur", 10), Verdict::Continue);
  for (std::size_t s = 1; s <= 10; ++s) a.record("low", s, 0.35);
  EXPECT_EQ(a.assess("low", 10), Verdict::Stop);
}

TEST(Assessor, MinimizeMode) {
  AssessorSettings s;
  s.optimize_mode = OptimizeMode::minimize;
  MedianStopAssessor a(s);
  add_completed(a, "t1", 1.0, 10);
  add_completed(a, "t2", 2.0, 10);
  add_completed(a, "t3", 3.0, 10);
  for (std::size_t s2 = 1; s2 <= 10; ++s2) a.record("bad", s2, 2.5);
  for (std::size_t s2 = 1; s2 <= 10; ++s2) a.record("good", s2, 1.5);
  EXPECT_EQ(a.assess("bad", 10), Verdict::Stop);
  EXPECT_EQ(a.assess("good", 10), Verdict::Continue);
}

TEST(Assessor, OutOfOrderStepsDropped) {
  MedianStopAssessor a;
  EXPECT_TRUE(a.record("t", 1, 0.1));
  EXPECT_FALSE(a.record("t", 3, 0.3));
  EXPECT_FALSE(a.record("t", 1, 0.1));
  EXPECT_TRUE(a.record("t", 2, 0.2));
  EXPECT_EQ(a.stream_length("t"), 2u);
  EXPECT_EQ(a.diagnostics().size(), 2u);
}

TEST(Assessor, UnknownTrialThrows) {
  MedianStopAssessor a;
  EXPECT_THROW(a.assess("ghost", 10), Error);
  a.record("t", 1, 0.5);
  EXPECT_THROW(a.assess("t", 2), Error);
}

TEST(Assessor, AssessIsPure) {
  MedianStopAssessor a;
  add_completed(a, "t1", 0.5, 10);
  add_completed(a, "t2", 0.6, 10);
  add_completed(a, "t3", 0.7, 10);
  for (std::size_t s = 1; s <= 10; ++s) a.record("cur", s, 0.55);
  const auto first = a.assess("cur", 10);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(a.assess("cur", 10), first);
  EXPECT_EQ(a.stream_length("cur"), 10u);
}

TEST(AssessorProperties, TrialAboveAllCompletedNeverStops) {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    MedianStopAssessor a;
    const std::size_t steps = 10 + rng.below(10);
    const std::size_t n = 3 + rng.below(5);
    double hi = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      const auto id = "c" + std::to_string(c);
      for (std::size_t s = 1; s <= steps; ++s) {
        const double v = rng.uniform01();
        hi = std::max(hi, v);
        a.record(id, s, v);
      }
      a.complete(id);
    }
    for (std::size_t s = 1; s <= steps; ++s) {
      a.record("cur", s, s == 1 ? hi : rng.uniform01());
      ASSERT_EQ(a.assess("cur", s), Verdict::Continue);
    }
  }
}
