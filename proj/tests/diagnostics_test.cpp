#include "gipo/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "doctest.h"

#include "gipo/surrogate.hpp"

using namespace gipo;

namespace {

ContributionRecord rec(double m, double adv, std::uint64_t dv) {
  return make_contribution(m, adv, dv);
}

}  // namespace

TEST_SUITE("diagnostics") {

TEST_CASE("nearest-rank quantile picks the ceil(q*n)-th order statistic") {
  CHECK(nearest_rank_quantile({1, 2, 3, 4}, 0.5) == 2.0);
  CHECK(nearest_rank_quantile({4, 3, 2, 1}, 0.5) == 2.0);  // order-free
  CHECK(nearest_rank_quantile({1, 2, 3, 4}, 1.0) == 4.0);
  CHECK(nearest_rank_quantile({1, 2, 3, 4}, 0.75) == 3.0);
  CHECK(nearest_rank_quantile({1, 2, 3, 4}, 0.76) == 4.0);
  CHECK(nearest_rank_quantile({7}, 0.95) == 7.0);
  std::vector<double> hundred(100);
  for (int i = 0; i < 100; ++i) hundred[i] = i + 1;
  CHECK(nearest_rank_quantile(hundred, 0.95) == 95.0);
  CHECK_THROWS_AS(nearest_rank_quantile({}, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(nearest_rank_quantile({1.0}, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(nearest_rank_quantile({1.0}, 1.5), std::invalid_argument);
}

TEST_CASE("contribution proxy is the absolute product") {
  const auto r = rec(-2.0, 3.0, 5);
  CHECK(r.u == 6.0);
  CHECK(r.multiplier == -2.0);
  CHECK(r.advantage == 3.0);
  CHECK(r.delta_v == 5);
  CHECK(rec(0.0, 100.0, 0).u == 0.0);
}

TEST_CASE("all-dead batch") {
  std::vector<ContributionRecord> batch = {rec(0, 1, 0), rec(0, -2, 1), rec(0, 3, 2)};
  const auto rep = utilization(batch, 1e-3, 1e-2, 1);
  CHECK(rep.dead_frac == 1.0);
  CHECK(rep.suppressed_frac == 0.0);
  CHECK(rep.near_zero_frac == 1.0);  // u = 0 <= tau_u everywhere
  CHECK(rep.share_old == 0.0);       // zero total mass convention
}

TEST_CASE("uniform and one-hot old-mass concentration") {
  // four old items with equal contribution: ESS equals the count
  std::vector<ContributionRecord> uniform;
  for (int i = 0; i < 4; ++i) uniform.push_back(rec(1.0, 2.0, 100));
  const auto u = utilization(uniform, 1e-6, 1e-2, 10);
  REQUIRE(u.ess_old.has_value());
  CHECK(*u.ess_old == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(*u.ess_old_normalized == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(u.share_old == 1.0);

  // all old mass on one item: ESS collapses to 1
  std::vector<ContributionRecord> onehot = {rec(1.0, 5.0, 100), rec(1e-300, 1e-300, 100),
                                            rec(1e-300, 1e-300, 100), rec(1e-300, 1e-300, 100)};
  const auto o = utilization(onehot, 1e-6, 1e-2, 10);
  REQUIRE(o.ess_old.has_value());
  CHECK(*o.ess_old == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(*o.ess_old_normalized == doctest::Approx(0.25).epsilon(1e-9));
}

TEST_CASE("ess is absent without old samples, uniform when old mass is zero") {
  std::vector<ContributionRecord> young = {rec(1, 1, 0), rec(1, 1, 3)};
  const auto y = utilization(young, 1e-6, 1e-2, 10);
  CHECK(!y.ess_old.has_value());
  CHECK(!y.ess_old_normalized.has_value());
  CHECK(y.share_old == 0.0);

  // old items exist but carry zero contribution: treated as uniform weights
  std::vector<ContributionRecord> zeroed = {rec(0, 1, 100), rec(0, 1, 100), rec(1, 1, 0)};
  const auto z = utilization(zeroed, 1e-6, 1e-2, 10);
  REQUIRE(z.ess_old.has_value());
  CHECK(*z.ess_old == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(*z.ess_old_normalized == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("fraction bookkeeping and bounds") {
  std::vector<ContributionRecord> batch = {
      rec(0.0, 1.0, 0),     // dead
      rec(5e-3, 1.0, 0),    // suppressed (|m| <= 1e-2), u = 5e-3
      rec(1.0, 1e-9, 0),    // near-zero by advantage
      rec(1.5, 2.0, 100),   // healthy old sample
  };
  const auto rep = utilization(batch, 1e-6, 1e-2, 10);
  CHECK(rep.dead_frac == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(rep.suppressed_frac == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(rep.near_zero_frac >= rep.dead_frac);
  CHECK(rep.dead_frac + rep.suppressed_frac <= 1.0);
  CHECK(rep.share_old == doctest::Approx(3.0 / (3.0 + 5e-3 + 1e-9)).epsilon(1e-12));
  CHECK_THROWS_AS(utilization({}, 1e-6, 1e-2, 10), std::invalid_argument);
}

TEST_CASE("utilization ignores batch order") {
  std::mt19937_64 rng(7);
  std::vector<ContributionRecord> batch;
  for (int i = 0; i < 64; ++i) {
    batch.push_back(rec(std::sin(i * 0.7), std::cos(i * 1.3), i % 2 ? 0 : 200));
  }
  const auto a = utilization(batch, 1e-4, 1e-2, 100);
  std::shuffle(batch.begin(), batch.end(), rng);
  const auto b = utilization(batch, 1e-4, 1e-2, 100);
  CHECK(a.near_zero_frac == b.near_zero_frac);
  CHECK(a.dead_frac == b.dead_frac);
  CHECK(a.suppressed_frac == b.suppressed_frac);
  CHECK(a.share_old == doctest::Approx(b.share_old).epsilon(1e-14));
  CHECK(*a.ess_old == doctest::Approx(*b.ess_old).epsilon(1e-12));
}

TEST_CASE("default near-zero threshold scales with the positive median") {
  std::vector<ContributionRecord> batch = {rec(1, 2, 0), rec(1, 4, 0), rec(1, 6, 0),
                                           rec(0, 9, 0)};
  // positive proxies {2, 4, 6}; nearest-rank median is 4
  CHECK(default_tau_u(batch) == doctest::Approx(4e-3).epsilon(1e-15));
  std::vector<ContributionRecord> dead = {rec(0, 1, 0), rec(0, 1, 0)};
  CHECK(default_tau_u(dead) == 0.0);
  CHECK(kDefaultTauM == 1e-2);
}

TEST_CASE("tail drift is the 95th-rank absolute log ratio") {
  CHECK(tail_drift(std::vector<double>(10, 1.0)) == 0.0);
  CHECK(tail_drift(std::vector<double>(10, std::exp(2.0))) == doctest::Approx(2.0).epsilon(1e-14));
  // nine near-unit ratios and one far outlier: rank 10 of 10 is the outlier
  std::vector<double> mixed(9, 1.0);
  mixed.push_back(std::exp(3.0));
  CHECK(tail_drift(mixed) == doctest::Approx(3.0).epsilon(1e-14));
  // twenty entries, one outlier: rank 19 of 20 stays in the bulk
  std::vector<double> bulk(19, std::exp(0.1));
  bulk.push_back(std::exp(5.0));
  CHECK(tail_drift(bulk) == doctest::Approx(0.1).epsilon(1e-13));
  // inverse ratios drift just as far
  CHECK(tail_drift(std::vector<double>(4, std::exp(-2.0))) ==
        doctest::Approx(2.0).epsilon(1e-14));
  CHECK_THROWS_AS(tail_drift(std::vector<double>{1.0, 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(tail_drift(std::vector<double>{}), std::invalid_argument);
}

TEST_CASE("window mean over the trailing fraction of env steps") {
  std::vector<std::pair<double, double>> constant = {{0, 5}, {50, 5}, {100, 5}};
  CHECK(window_mean(constant, 0.2) == 5.0);

  std::vector<std::pair<double, double>> ramp;
  for (int i = 0; i <= 100; ++i) ramp.push_back({static_cast<double>(i), static_cast<double>(i)});
  CHECK(window_mean(ramp, 0.2) == doctest::Approx(90.0).epsilon(1e-14));

  std::vector<std::pair<double, double>> single = {{42, 3.5}};
  CHECK(window_mean(single, 0.2) == 3.5);
  CHECK_THROWS_AS(window_mean({}, 0.2), std::invalid_argument);
}

TEST_CASE("aggregation across tasks uses the population deviation") {
  const double one[1] = {7.0};
  auto a = cross_task_aggregate(one);
  CHECK(a.mean == 7.0);
  CHECK(a.stddev == 0.0);
  const double two[2] = {0.0, 2.0};
  a = cross_task_aggregate(two);
  CHECK(a.mean == 1.0);
  CHECK(a.stddev == 1.0);
  const double three[3] = {1.0, 2.0, 4.0};
  a = cross_task_aggregate(three);
  CHECK(a.mean == doctest::Approx(7.0 / 3).epsilon(1e-15));
  CHECK(a.stddev == doctest::Approx(std::sqrt(14.0 / 9.0)).epsilon(1e-13));
}

TEST_CASE("hard clipping zeroes more contributions than damping") {
  // heavy-tailed ratios, mixed advantage signs: the hard clip's constant
  // branch produces dead samples, the damped multiplier only shrinks them
  for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> logratio(0.0, 1.5), advdist(0.0, 1.0);
    std::vector<ContributionRecord> ppo, gipo;
    for (int i = 0; i < 512; ++i) {
      const double rho = std::exp(logratio(rng));
      const double adv = advdist(rng);
      const int sign = adv > 0 ? 1 : adv < 0 ? -1 : 0;
      ppo.push_back(rec(effective_multiplier(PpoClip{0.2}, rho, sign), adv, 20000));
      gipo.push_back(rec(effective_multiplier(Gipo{1.0}, rho, sign), adv, 20000));
    }
    const double tau_u = default_tau_u(gipo);
    const auto p = utilization(ppo, tau_u, kDefaultTauM, 10000);
    const auto g = utilization(gipo, tau_u, kDefaultTauM, 10000);
    CHECK(p.near_zero_frac > g.near_zero_frac);
    CHECK(p.dead_frac > g.dead_frac);
  }
}

TEST_CASE("metric rows round-trip through the csv schema") {
  std::ostringstream os;
  MetricsWriter writer(os);
  MetricRow row;
  row.step = 3;
  row.env_steps = 768;
  row.method = "gipo";
  row.sigma = 1.0;
  row.old_frac = 0.25;
  row.old_gap_p95 = 12;
  row.d95 = 0.7;
  row.dead_frac = 0.0;
  row.suppressed_frac = 0.125;
  row.near_zero_frac = 0.5;
  row.share_old = 0.3;
  row.ess_old_norm = std::numeric_limits<double>::quiet_NaN();
  row.kl_to_behavior = 1e-4;
  row.avg_return = -17.25;
  writer.append(row);
  row.step = 4;
  row.method = "ppo_clip";
  row.sigma = 0.0;
  row.ess_old_norm = 0.5;
  writer.append(row);

  std::istringstream is(os.str());
  const auto rows = read_metrics_csv(is);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].step == 3);
  CHECK(rows[0].env_steps == 768);
  CHECK(rows[0].method == "gipo");
  CHECK(rows[0].sigma == 1.0);
  CHECK(std::isnan(rows[0].ess_old_norm));
  CHECK(rows[0].avg_return == -17.25);
  CHECK(rows[1].method == "ppo_clip");
  CHECK(rows[1].ess_old_norm == 0.5);
}

TEST_CASE("csv reader names the offending line") {
  std::istringstream bad_header("nope\n");
  CHECK_THROWS_AS(read_metrics_csv(bad_header), std::runtime_error);

  std::ostringstream os;
  MetricsWriter writer(os);
  std::istringstream short_row(os.str() + "1,2,gipo,0.5\n");
  CHECK_THROWS_WITH_AS(read_metrics_csv(short_row), doctest::Contains("line 2"),
                       std::runtime_error);
}

}  // TEST_SUITE
