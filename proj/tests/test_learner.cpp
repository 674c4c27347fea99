#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "doraemon/curriculum.hpp"
#include "doraemon/learner.hpp"
#include "oracles.hpp"

using namespace doraemon;

namespace {

const SuccessIndicator kBalanced = EnvironmentPredicate{kBalancedPredicate};

PlaneCemTrainer make_trainer(std::uint64_t seed, std::size_t window = 5) {
  PolicyShape shape;
  shape.window = window;
  return PlaneCemTrainer(InclinedPlaneConfig{}, shape, CemConfig{}, kBalanced, seed);
}

double held_out_success(const Trainer& t, double omega, int n, std::uint64_t seed) {
  Rng rng(seed);
  int hits = 0;
  const Vector xi{omega};
  for (int i = 0; i < n; ++i) hits += t.evaluate(xi, rng).predicates.at(kBalancedPredicate);
  return static_cast<double>(hits) / n;
}

double mean_eval_return(const Trainer& t, const std::vector<double>& omegas) {
  double total = 0.0;
  for (std::size_t i = 0; i < omegas.size(); ++i) {
    Rng rng(1000 + i);
    const Vector xi{omegas[i]};
    total += t.evaluate(xi, rng).return_value;
  }
  return total / omegas.size();
}

}  // namespace

TEST(Policy, ZeroWeightsGiveZeroAction) {
  PolicyShape shape;
  shape.hidden = {4};
  shape.action_scale = 3.0;
  const HistoryPolicy p(shape);
  History h(5, 2);
  std::mt19937_64 gen(1);
  std::normal_distribution<double> n;
  for (int t = 0; t < 10; ++t) {
    const double s[2] = {n(gen), n(gen)};
    EXPECT_EQ(p.act(h, s), 0.0);
    h.push(s, n(gen));
  }
}

TEST(Policy, OutputWithinBounds) {
  PolicyShape shape;
  shape.hidden = {3};
  shape.action_scale = 2.5;
  std::mt19937_64 gen(2);
  std::normal_distribution<double> n(0.0, 50.0);
  Vector w(shape.parameter_count());
  for (auto& x : w) x = n(gen);
  const HistoryPolicy p(shape, w);
  History h(5, 2);
  for (int t = 0; t < 50; ++t) {
    const double s[2] = {n(gen), n(gen)};
    const double a = p.act(h, s);
    EXPECT_LE(std::abs(a), 2.5);
    h.push(s, a);
  }
}

TEST(Policy, MemorylessWindow) {
  PolicyShape shape;
  shape.window = 0;
  ASSERT_EQ(shape.parameter_count(), 3u);
  const HistoryPolicy p(shape, {0.1, 0.5, -0.25});
  History h(0, 2);
  const double s[2] = {0.4, 2.0};
  h.push(s, 1.0);
  EXPECT_NEAR(p.act(h, s), std::tanh(0.1 + 0.5 * 0.4 - 0.25 * 2.0), 1e-15);
}

TEST(Policy, PaddingIsZero) {
  PolicyShape shape;
  std::mt19937_64 gen(3);
  std::normal_distribution<double> n;
  Vector w(shape.parameter_count());
  for (auto& x : w) x = n(gen);
  const HistoryPolicy p(shape, w);
  // Two histories with the same two real transitions; one was built by
  // pushing into a longer window and then truncating features by hand.
  History a(5, 2), b(5, 2);
  const double s0[2] = {0.1, -0.2}, s1[2] = {0.05, 0.3};
  for (History* h : {&a, &b}) {
    h->push(s0, 0.4);
    h->push(s1, -0.1);
  }
  const double now[2] = {0.0, 0.1};
  EXPECT_EQ(p.act(a, now), p.act(b, now));
  Vector feats;
  a.append_features(feats);
  ASSERT_EQ(feats.size(), 15u);
  for (std::size_t i = 6; i < 15; ++i) EXPECT_EQ(feats[i], 0.0);
  // Explicit zero padding agrees with a linear policy evaluated by hand.
  double z = w[0];
  const double in[17] = {now[0], now[1], s1[0], s1[1], -0.1, s0[0], s0[1], 0.4};
  for (std::size_t i = 0; i < 17; ++i) z += w[i + 1] * in[i];
  EXPECT_NEAR(p.act(a, now), std::tanh(z), 1e-14);
}

TEST(Policy, JsonRoundTrip) {
  PolicyShape shape;
  shape.hidden = {2};
  shape.action_scale = 1.5;
  Vector w(shape.parameter_count());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.01 * static_cast<double>(i);
  const HistoryPolicy p(shape, w);
  const auto back = policy_from_json(nlohmann::json(p));
  EXPECT_EQ(back.weights(), p.weights());
  EXPECT_EQ(back.shape().hidden, shape.hidden);
  EXPECT_EQ(back.shape().action_scale, 1.5);
  EXPECT_THROW(HistoryPolicy(shape, Vector(3)), std::invalid_argument);
}

TEST(Trainer, OneEpisodeGivesOneRecord) {
  auto t = make_trainer(1);
  Rng rng(1);
  const auto spec = DistributionSpec::beta(InclinedPlaneConfig{}.support(), 2.0, 2.0);
  const auto recs = t.collect_and_train(spec, 1, rng);
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(t.episodes_trained(), 1);
  EXPECT_GE(recs[0].steps, 1);
}

TEST(Trainer, LearnsFlatPlaneWithoutRandomization) {
  const auto nodr = no_dr_spec(InclinedPlaneConfig{}.support(), Vector{0.0});
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto t = make_trainer(seed);
    for (int epoch = 0; epoch < 200; ++epoch) t.train_on(nodr.sample(50));
    total += held_out_success(t, 0.0, 50, 500 + seed);
  }
  EXPECT_GE(total / 10, 0.95);
}

TEST(Trainer, NothingLearnedBeyondBoundary) {
  const auto spec = DistributionSpec::beta(BoundedSupport({0.82}, {M_PI / 2}), 1.0, 1.0);
  auto t = make_trainer(4);
  Rng rng(4);
  for (int epoch = 0; epoch < 40; ++epoch)
    for (const auto& r : t.collect_and_train(spec, 50, rng)) EXPECT_FALSE(r.success);
}

TEST(Trainer, RecordsFollowTheSpec) {
  const auto sup = InclinedPlaneConfig{}.support();
  const auto spec = DistributionSpec::beta(sup, 2.0, 3.0);
  auto t = make_trainer(5);
  Rng rng(5);
  std::vector<double> xs;
  for (int epoch = 0; epoch < 40; ++epoch)
    for (const auto& r : t.collect_and_train(spec, 50, rng)) xs.push_back((r.xi[0] - sup.lo(0)) / sup.width(0));
  const double d = oracle::ks_statistic(xs, [](double u) { return oracle::beta_cdf(2.0, 3.0, u); });
  EXPECT_LT(d, oracle::ks_critical_001(xs.size()));
}

TEST(Trainer, ImprovesOnStationaryTask) {
  // Fixed evaluation set on a stationary feasible distribution; the mean
  // policy after training must not be worse than the initial one.
  const auto spec = DistributionSpec::beta(BoundedSupport({-0.5}, {0.5}), 1.0, 1.0);
  std::vector<double> eval_omegas;
  for (int i = 0; i < 21; ++i) eval_omegas.push_back(-0.5 + i * 0.05);
  int improved = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto t = make_trainer(seed);
    Rng rng(seed + 50);
    const double before = mean_eval_return(t, eval_omegas);
    for (int epoch = 0; epoch < 30; ++epoch) t.collect_and_train(spec, 50, rng);
    improved += mean_eval_return(t, eval_omegas) >= before;
  }
  EXPECT_GE(improved, 9);
}

TEST(Trainer, SchedulerIsolatedFromLearner) {
  const auto sup = InclinedPlaneConfig{}.support();
  const auto init = DistributionSpec::beta(sup, 100.0, 100.0);
  auto t = make_trainer(6);
  DoraemonScheduler live(init, StepConfig{}, 50, 15, true);
  Rng rng_live(6);
  std::vector<std::vector<EpisodeRecord>> stream;
  std::vector<std::string> trajectory;
  for (int it = 0; it < 15; ++it) {
    const auto xis = live.propose(50, rng_live);
    stream.push_back(t.train_on(xis));
    live.update(stream.back());
    trajectory.push_back(live.distribution().dump());
  }
  ReplayTrainer replay(stream);
  DoraemonScheduler again(init, StepConfig{}, 50, 15, true);
  Rng rng_again(6);
  for (int it = 0; it < 15; ++it) {
    const auto xis = again.propose(50, rng_again);
    again.update(replay.train_on(xis));
    EXPECT_EQ(again.distribution().dump(), trajectory[it]);
  }
}

TEST(Trainer, SkillTrainerAdvancesSchedule) {
  SkillTrainer t(SkillRegionConfig{{0.5}, {0.4}, 0.0, 10}, EnvironmentPredicate{kSkillPredicate});
  const std::vector<Vector> xis(20, Vector{0.5});
  const auto recs = t.train_on(xis);
  EXPECT_FALSE(recs[0].success);
  EXPECT_TRUE(recs[1].success);
  EXPECT_EQ(t.episodes_trained(), 20);
  EXPECT_EQ(t.snapshot()["episode_index"], 20);
}
