#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "spikehpo/tuner.hpp"
#include "toy_objective.hpp"

using namespace spikehpo;

namespace {

SearchSpace toy_space() {
  return parse_search_space(std::string(
      R"({"a":{"_type":"quniform","_value":[-10,10,0.1]},"b":{"_type":"quniform","_value":[-10,10,0.1]}})"));
}

double toy_value(const ParamAssignment& p) { return toy::objective(as_double(p.at("a")), as_double(p.at("b"))); }

double run_toy(const TunerSettings& s, std::uint64_t seed, std::size_t trials) {
  const auto space = toy_space();
  AnnealTuner tuner(s, seed);
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < trials; ++i) {
    tuner.maybe_reseed(i);
    const auto p = tuner.propose(space);
    const double f = toy_value(p);
    tuner.observe(p, f);
    best = std::max(best, f);
  }
  return best;
}

}  // namespace

TEST(Tuner, RejectsBadSettings) {
  TunerSettings s;
  s.decay = 1.0;
  EXPECT_THROW(AnnealTuner(s, 1), ConfigError);
  s.decay = 0.9;
  s.t0 = 0.0;
  EXPECT_THROW(AnnealTuner(s, 1), ConfigError);
}

TEST(Tuner, WarmupMatchesPriorSampler) {
  const auto space = reference_search_space();
  AnnealTuner tuner(TunerSettings{}, 17);
  Rng prior = Rng::derive(17, 0);
  for (int i = 0; i < 20; ++i) {
    const auto p = tuner.propose(space);
    EXPECT_EQ(p, sample_assignment(space, prior));
    tuner.observe(p, static_cast<double>(i));
  }
  // Proposal 21 is a perturbation, no longer a prior draw.
  EXPECT_NE(tuner.propose(space), sample_assignment(space, prior));
}

TEST(Tuner, EmptyHistoryFallsBackToPrior) {
  TunerSettings s;
  s.warmup = 0;
  const auto space = toy_space();
  AnnealTuner tuner(s, 4);
  Rng prior = Rng::derive(4, 0);
  EXPECT_EQ(tuner.propose(space), sample_assignment(space, prior));
}

TEST(Tuner, BestIndexTieBreakAndModes) {
  TunerSettings s;
  AnnealTuner max_t(s, 0);
  s.optimize_mode = OptimizeMode::minimize;
  AnnealTuner min_t(s, 0);
  EXPECT_FALSE(max_t.best_index().has_value());
  for (double m : {0.5, 0.9, 0.1, 0.9, 0.1}) {
    max_t.observe({{"a", m}}, m);
    min_t.observe({{"a", m}}, m);
  }
  EXPECT_EQ(max_t.best_index(), 1u);
  EXPECT_EQ(min_t.best_index(), 2u);
}

TEST(Tuner, NonFiniteMetricsAreRejected) {
  AnnealTuner tuner(TunerSettings{}, 0);
  EXPECT_FALSE(tuner.observe({{"a", 1.0}}, std::nan("")));
  EXPECT_FALSE(tuner.observe({{"a", 1.0}}, std::numeric_limits<double>::infinity()));
  EXPECT_TRUE(tuner.history().empty());
  EXPECT_EQ(tuner.diagnostics().size(), 2u);
  EXPECT_TRUE(tuner.observe({{"a", 1.0}}, 0.25));
  EXPECT_EQ(tuner.history().size(), 1u);
}

TEST(Tuner, ColdTemperatureProposesTheBest) {
  TunerSettings s;
  s.t0 = 1e-12;
  s.warmup = 0;
  const auto space = reference_search_space();
  AnnealTuner tuner(s, 8);
  Rng rng(9);
  ParamAssignment best;
  for (int i = 0; i < 5; ++i) {
    const auto p = sample_assignment(space, rng);
    tuner.observe(p, i == 2 ? 10.0 : 1.0);
    if (i == 2) best = p;
  }
  for (int i = 0; i < 20; ++i) EXPECT_EQ(tuner.propose(space), best);
}

TEST(Tuner, TemperatureSchedule) {
  TunerSettings s;
  s.t0 = 0.8;
  s.decay = 0.5;
  AnnealTuner tuner(s, 0);
  const auto space = toy_space();
  EXPECT_DOUBLE_EQ(tuner.temperature(), 0.8);
  tuner.propose(space);
  tuner.propose(space);
  EXPECT_DOUBLE_EQ(tuner.temperature(), 0.2);
}

TEST(Tuner, ReseedBoundaries) {
  const ReseedPolicy policy{250};
  EXPECT_FALSE(policy.fires(0));
  EXPECT_FALSE(policy.fires(249));
  EXPECT_TRUE(policy.fires(250));
  EXPECT_FALSE(policy.fires(251));
  EXPECT_TRUE(policy.fires(500));
  EXPECT_FALSE(ReseedPolicy{0}.fires(250));
}

TEST(Tuner, ReseedRestartsStreamAndTemperature) {
  const auto space = toy_space();
  TunerSettings s;
  s.reseed_every = 3;
  AnnealTuner tuner(s, 21);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_FALSE(tuner.maybe_reseed(i));
    tuner.propose(space);
  }
  EXPECT_LT(tuner.temperature(), 1.0);
  EXPECT_TRUE(tuner.maybe_reseed(3));
  EXPECT_DOUBLE_EQ(tuner.temperature(), 1.0);
  // Still in warmup, so the next draw comes from the fresh (seed, 3) stream.
  Rng fresh = Rng::derive(21, 3);
  EXPECT_EQ(tuner.propose(space), sample_assignment(space, fresh));
}

TEST(Tuner, SameSeedSameProposals) {
  const auto space = reference_search_space();
  AnnealTuner a(TunerSettings{}, 5), b(TunerSettings{}, 5);
  for (int i = 0; i < 60; ++i) {
    const auto pa = a.propose(space);
    const auto pb = b.propose(space);
    ASSERT_EQ(pa, pb);
    a.observe(pa, static_cast<double>(i % 7));
    b.observe(pb, static_cast<double>(i % 7));
  }
}

TEST(Tuner, RandomModeIgnoresHistory) {
  TunerSettings s;
  s.name = "Random";
  s.warmup = 0;
  const auto space = toy_space();
  AnnealTuner tuner(s, 2);
  Rng prior = Rng::derive(2, 0);
  for (int i = 0; i < 30; ++i) {
    const auto p = tuner.propose(space);
    EXPECT_EQ(p, sample_assignment(space, prior));
    tuner.observe(p, toy_value(p));
  }
}

TEST(Tuner, ProposalsStayInDomain) {
  const auto space = reference_search_space();
  TunerSettings s;
  s.warmup = 5;
  AnnealTuner tuner(s, 33);
  for (int i = 0; i < 200; ++i) {
    const auto p = tuner.propose(space);
    for (const auto& [name, spec] : space.params()) ASSERT_TRUE(in_domain(spec, p.at(name))) << name;
    tuner.observe(p, as_double(p.at("threshold")));
  }
}

TEST(Tuner, ConcentratesAroundTheBest) {
  // Mean distance of proposals from the incumbent shrinks as T falls.
  const auto space = toy_space();
  TunerSettings s;
  s.warmup = 0;
  s.decay = 0.9;
  AnnealTuner tuner(s, 3);
  tuner.observe({{"a", 0.0}, {"b", 0.0}}, 1.0);
  auto spread = [&](int n) {
    double d = 0.0;
    for (int i = 0; i < n; ++i) {
      const auto p = tuner.propose(space);
      d += std::abs(as_double(p.at("a"))) + std::abs(as_double(p.at("b")));
    }
    return d / n;
  };
  const double early = spread(10);
  const double mid = spread(10);
  const double late = spread(10);
  EXPECT_GT(early, mid);
  EXPECT_GT(mid, late);
}

TEST(Tuner, PositiveAffineMetricTransformInvariance) {
  const auto space = toy_space();
  AnnealTuner a(TunerSettings{}, 12), b(TunerSettings{}, 12);
  for (int i = 0; i < 80; ++i) {
    const auto pa = a.propose(space);
    const auto pb = b.propose(space);
    ASSERT_EQ(pa, pb);
    const double f = toy_value(pa);
    a.observe(pa, f);
    b.observe(pb, 3.0 * f + 7.0);
  }
}

TEST(Tuner, AnnealFindsToyOptimumBetterThanRandom) {
  TunerSettings anneal, random;
  random.name = "Random";
  int wins = 0;
  for (std::uint64_t pair = 0; pair < 10; ++pair)
    if (run_toy(anneal, 100 + pair, 100) > run_toy(random, 100 + pair, 100)) ++wins;
  EXPECT_GE(wins, 7);
}
