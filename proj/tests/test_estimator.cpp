#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "doraemon/estimator.hpp"
#include "oracles.hpp"

using namespace doraemon;

namespace {

std::vector<EpisodeRecord> from_flags(const std::vector<Vector>& xis, const std::vector<bool>& flags) {
  std::vector<EpisodeRecord> out;
  for (std::size_t i = 0; i < xis.size(); ++i) out.push_back({xis[i], flags[i] ? 1.0 : 0.0, flags[i], 1});
  return out;
}

// Success region on [0,1]: cells 2, 3, 4 and 7 of a 10-cell grid.
bool in_region(double x) {
  const int cell = std::min(9, static_cast<int>(x * 10));
  return cell == 2 || cell == 3 || cell == 4 || cell == 7;
}

double region_mass(const oracle::BetaDensity& p) {
  double m = 0.0;
  for (int c : {2, 3, 4, 7}) m += oracle::integrate([&](double x) { return p.pdf(x); }, c / 10.0, (c + 1) / 10.0);
  return m;
}

std::vector<EpisodeRecord> region_records(const DistributionSpec& spec, int k, Rng& rng) {
  std::vector<EpisodeRecord> out;
  for (auto& xi : sample(spec, k, rng)) {
    const bool ok = in_region(xi[0]);
    out.push_back({xi, ok ? 1.0 : 0.0, ok, 1});
  }
  return out;
}

}  // namespace

TEST(Estimator, UnitWeightsGivePlainMean) {
  const auto spec = DistributionSpec::beta(BoundedSupport::unit(1), 2.0, 3.0);
  const auto recs = from_flags({{0.1}, {0.2}, {0.3}, {0.4}}, {true, false, true, true});
  EXPECT_DOUBLE_EQ(is_success_rate(recs, spec, spec), 0.75);
}

TEST(Estimator, HandWeights) {
  // On [0,1]: Be(2,1) has density 2x against uniform. x = 1 gives weight 2,
  // x = 0.25 gives weight 0.5.
  const auto old_spec = DistributionSpec::beta(BoundedSupport::unit(1), 1.0, 1.0);
  const auto new_spec = DistributionSpec::beta(BoundedSupport::unit(1), 2.0, 1.0);
  const auto recs = from_flags({{1.0}, {0.25}}, {true, false});
  EXPECT_NEAR(is_success_rate(recs, old_spec, new_spec), 1.0, 1e-12);
  // The failing record's weight does not matter; flip it to see the 0.5.
  const auto both = from_flags({{1.0}, {0.25}}, {true, true});
  EXPECT_NEAR(is_success_rate(both, old_spec, new_spec), 1.25, 1e-12);
}

TEST(Estimator, MonteCarloCounts) {
  const std::vector<Vector> xs(5, Vector{0.5});
  EXPECT_DOUBLE_EQ(mc_success_rate(from_flags(xs, {true, false, false, true, true})), 0.6);
  EXPECT_DOUBLE_EQ(mc_success_rate(from_flags(xs, std::vector<bool>(5, true))), 1.0);
  EXPECT_DOUBLE_EQ(mc_success_rate(from_flags(xs, std::vector<bool>(5, false))), 0.0);
}

TEST(Estimator, Errors) {
  const auto a = DistributionSpec::beta(BoundedSupport::unit(1), 2.0, 2.0);
  const auto g = DistributionSpec::truncated_gaussian(BoundedSupport::unit(1), {0.5}, {0.2});
  const auto wide = DistributionSpec::beta(BoundedSupport({0.0}, {2.0}), 2.0, 2.0);
  const std::vector<EpisodeRecord> none;
  EXPECT_THROW(is_success_rate(none, a, a), EstimatorError);
  EXPECT_THROW(mc_success_rate(none), EstimatorError);
  const auto recs = from_flags({{0.5}}, {true});
  EXPECT_THROW(is_success_rate(recs, a, g), std::invalid_argument);
  EXPECT_THROW(is_success_rate(recs, a, wide), std::invalid_argument);
}

TEST(Estimator, SigmaReturnThresholdInclusive) {
  TrajectorySummary s;
  s.return_value = 1700;
  EXPECT_TRUE(evaluate_sigma(ReturnLowerBound{1600}, s));
  s.return_value = 1600;
  EXPECT_TRUE(evaluate_sigma(ReturnLowerBound{1600}, s));
  s.return_value = 1599.99;
  EXPECT_FALSE(evaluate_sigma(ReturnLowerBound{1600}, s));
}

TEST(Estimator, SigmaPredicate) {
  TrajectorySummary s;
  s.predicates["balanced"] = true;
  EXPECT_TRUE(evaluate_sigma(EnvironmentPredicate{"balanced"}, s));
  EXPECT_THROW(evaluate_sigma(EnvironmentPredicate{"missing"}, s), EstimatorError);
}

TEST(Estimator, SelfWeightedIdentity) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto spec = DistributionSpec::beta(BoundedSupport({-1.0, 2.0}, {3.0, 5.0}), {0.7 + trial, 3.0}, {2.0, 0.9 + trial});
    std::vector<EpisodeRecord> recs;
    std::bernoulli_distribution coin(0.4);
    for (auto& xi : sample(spec, 37, rng)) recs.push_back({xi, 0.0, coin(rng), 1});
    EXPECT_EQ(is_success_rate(recs, spec, spec), mc_success_rate(recs));
  }
}

TEST(Estimator, StratifiedGridOracle) {
  const auto sup = BoundedSupport::unit(1);
  const auto old_spec = DistributionSpec::beta(sup, 2.0, 2.0);
  const auto new_spec = DistributionSpec::beta(sup, 3.0, 5.0);
  const double exact = region_mass(oracle::BetaDensity(3.0, 5.0));
  Rng rng(11);
  const auto recs = region_records(old_spec, 10000, rng);
  const double est = is_success_rate(recs, old_spec, new_spec);
  // Per-sample spread of w * 1{success}.
  double s = 0.0, s2 = 0.0;
  for (const auto& r : recs) {
    const double v = r.success ? std::exp(log_pdf(new_spec, r.xi) - log_pdf(old_spec, r.xi)) : 0.0;
    s += v;
    s2 += v * v;
  }
  const double n = static_cast<double>(recs.size());
  const double se = std::sqrt((s2 / n - std::pow(s / n, 2)) / n);
  EXPECT_NEAR(est, exact, 3 * se);
}

TEST(Estimator, UnbiasedAtSmallScale) {
  const auto sup = BoundedSupport::unit(1);
  const auto old_spec = DistributionSpec::beta(sup, 1.5, 1.5);
  const auto new_spec = DistributionSpec::beta(sup, 2.0, 4.0);
  const double exact = region_mass(oracle::BetaDensity(2.0, 4.0));
  Rng rng(12);
  std::vector<double> estimates;
  for (int set = 0; set < 1000; ++set) estimates.push_back(is_success_rate(region_records(old_spec, 200, rng), old_spec, new_spec));
  const double mean = std::accumulate(estimates.begin(), estimates.end(), 0.0) / estimates.size();
  double var = 0.0;
  for (double e : estimates) var += (e - mean) * (e - mean);
  var /= estimates.size() - 1;
  EXPECT_NEAR(mean, exact, 3 * std::sqrt(var / estimates.size()));
}

TEST(Estimator, MonotoneInSuccesses) {
  const auto sup = BoundedSupport::unit(1);
  const auto old_spec = DistributionSpec::beta(sup, 2.0, 2.0);
  const auto new_spec = DistributionSpec::beta(sup, 4.0, 2.0);
  Rng rng(13);
  auto recs = region_records(old_spec, 60, rng);
  double prev = is_success_rate(recs, old_spec, new_spec);
  for (auto& r : recs) {
    if (r.success) continue;
    r.success = true;
    const double now = is_success_rate(recs, old_spec, new_spec);
    EXPECT_GE(now, prev);
    prev = now;
  }
}

TEST(Estimator, ClippingNeverIncreases) {
  Rng rng(14);
  const auto sup = BoundedSupport::unit(1);
  for (int trial = 0; trial < 30; ++trial) {
    const auto old_spec = DistributionSpec::beta(sup, 1.0 + trial * 0.3, 2.0);
    const auto new_spec = DistributionSpec::beta(sup, 2.0, 1.0 + trial * 0.2);
    const auto recs = region_records(old_spec, 100, rng);
    const double full = is_success_rate(recs, old_spec, new_spec);
    for (double c : {0.1, 0.5, 1.0, 2.0, 10.0}) EXPECT_LE(is_success_rate(recs, old_spec, new_spec, c), full + 1e-15);
  }
}

TEST(Estimator, RecordJsonRoundTrip) {
  const EpisodeRecord r{{0.25, -1.5}, 12.5, true, 40};
  const auto back = nlohmann::json(r).get<EpisodeRecord>();
  EXPECT_EQ(back.xi, r.xi);
  EXPECT_EQ(back.return_value, r.return_value);
  EXPECT_EQ(back.success, r.success);
  EXPECT_EQ(back.steps, r.steps);
}
